#include "iconsal/study/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <Eigen/Dense>
#include <boost/tokenizer.hpp>

#include "iconsal/core/hash.hpp"
#include "json.hpp"

namespace iconsal {

namespace {

int method_slot(MethodId m) { return static_cast<int>(m); }

std::vector<std::string> split_csv_line(const std::string& line) {
    using Tok = boost::tokenizer<boost::escaped_list_separator<char>>;
    std::vector<std::string> cells;
    for (const auto& c : Tok(line, boost::escaped_list_separator<char>('\\', ',', '"'))) cells.push_back(c);
    return cells;
}

std::string csv_cell(const std::string& s) {
    if (s.find_first_of(",\"\n\\") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        out += c;
    }
    return out + "\"";
}

// Rows of a CSV with a header, as column-name -> cell maps, plus line numbers.
struct CsvTable {
    std::vector<std::map<std::string, std::string>> rows;
    std::vector<int> lines;
};

CsvTable read_csv(std::string_view text, const std::vector<std::string>& required, const std::string& source) {
    std::istringstream in{std::string(text)};
    std::string line;
    std::vector<std::string> header;
    CsvTable t;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        if (line[0] == '#') continue;  // provenance comments such as "# config_hash=..."
        std::vector<std::string> cells;
        try {
            cells = split_csv_line(line);
        } catch (const boost::escaped_list_error& e) {
            throw StudyError(source + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (header.empty()) {
            header = cells;
            for (const auto& r : required)
                if (std::find(header.begin(), header.end(), r) == header.end())
                    throw StudyError(source + ": missing column '" + r + "'");
            continue;
        }
        if (cells.size() != header.size())
            throw StudyError(source + ":" + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                             " cells, found " + std::to_string(cells.size()));
        std::map<std::string, std::string> row;
        for (std::size_t i = 0; i < cells.size(); ++i) row[header[i]] = cells[i];
        t.rows.push_back(std::move(row));
        t.lines.push_back(lineno);
    }
    return t;
}

int parse_int(const std::string& s, const std::string& where) {
    std::size_t used = 0;
    int v = 0;
    try {
        v = std::stoi(s, &used);
    } catch (const std::exception&) {
        throw StudyError(where + ": '" + s + "' is not an integer");
    }
    if (used != s.size()) throw StudyError(where + ": '" + s + "' is not an integer");
    return v;
}

}  // namespace

bool RankingRecord::complete() const { return missing() == 0; }

int RankingRecord::missing() const {
    return static_cast<int>(std::count(ranks.begin(), ranks.end(), std::nullopt));
}

void validate_record(const RankingRecord& r) {
    std::array<bool, kRankedMethods + 1> used{};
    for (const auto& v : r.ranks) {
        if (!v) continue;
        if (*v < 1 || *v > kRankedMethods)
            throw StudyError("record " + r.participant_id + "/" + r.pair_id + ": rank " + std::to_string(*v) +
                             " outside 1..7");
        if (used[static_cast<std::size_t>(*v)])
            throw StudyError("record " + r.participant_id + "/" + r.pair_id + ": rank " + std::to_string(*v) +
                             " used twice");
        used[static_cast<std::size_t>(*v)] = true;
    }
}

std::string_view to_string(Expertise e) {
    switch (e) {
        case Expertise::basic: return "basic";
        case Expertise::intermediate: return "intermediate";
        case Expertise::advanced: return "advanced";
    }
    return "?";
}

Expertise parse_expertise(std::string_view s) {
    if (s == "basic") return Expertise::basic;
    if (s == "intermediate") return Expertise::intermediate;
    if (s == "advanced" || s == "expert" || s == "advanced/expert") return Expertise::advanced;
    throw StudyError("unknown expertise level '" + std::string(s) + "'");
}

// ---- CSV ----------------------------------------------------------------------

std::vector<RankingRecord> parse_rankings_csv(std::string_view text, const std::string& source) {
    const auto table = read_csv(text, {"participant_id", "pair_id", "method_id", "rank"}, source);
    std::map<std::pair<std::string, std::string>, RankingRecord> by_key;
    std::map<std::pair<std::string, std::string>, std::array<bool, kRankedMethods>> seen;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& row = table.rows[i];
        const std::string where = source + ":" + std::to_string(table.lines[i]);
        const auto key = std::pair{row.at("participant_id"), row.at("pair_id")};
        if (key.first.empty() || key.second.empty()) throw StudyError(where + ": empty participant or pair id");
        MethodId m{};
        try {
            m = parse_method_id(row.at("method_id"));
        } catch (const std::exception&) {
            throw StudyError(where + ": unknown method '" + row.at("method_id") + "'");
        }
        auto& rec = by_key[key];
        rec.participant_id = key.first;
        rec.pair_id = key.second;
        auto& s = seen[key][static_cast<std::size_t>(method_slot(m))];
        if (s) throw StudyError(where + ": method '" + row.at("method_id") + "' listed twice for this pair");
        s = true;
        const std::string& cell = row.at("rank");
        if (!cell.empty()) rec.ranks[static_cast<std::size_t>(method_slot(m))] = parse_int(cell, where);
    }
    std::vector<RankingRecord> out;
    for (auto& [k, r] : by_key) {
        try {
            validate_record(r);
        } catch (const StudyError& e) {
            throw StudyError(source + ": " + e.what());
        }
        out.push_back(std::move(r));
    }
    return out;
}

std::string rankings_csv(const std::vector<RankingRecord>& records) {
    std::ostringstream out;
    out << "participant_id,pair_id,method_id,rank\n";
    for (const auto& r : records)
        for (MethodId m : kAllMethods) {
            const auto& v = r.ranks[static_cast<std::size_t>(method_slot(m))];
            out << csv_cell(r.participant_id) << ',' << csv_cell(r.pair_id) << ',' << method_id_string(m) << ','
                << (v ? std::to_string(*v) : std::string()) << '\n';
        }
    return out.str();
}

std::vector<ParticipantProfile> parse_profiles_csv(std::string_view text, const std::string& source) {
    const auto table = read_csv(
        text, {"participant_id", "age_band", "gender", "education", "expertise", "completed_tasks"}, source);
    std::vector<ParticipantProfile> out;
    std::set<std::string> ids;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& row = table.rows[i];
        const std::string where = source + ":" + std::to_string(table.lines[i]);
        ParticipantProfile p;
        p.participant_id = row.at("participant_id");
        if (!ids.insert(p.participant_id).second) throw StudyError(where + ": duplicate participant");
        p.age_band = row.at("age_band");
        p.gender = row.at("gender");
        p.education = row.at("education");
        try {
            p.expertise = parse_expertise(row.at("expertise"));
        } catch (const StudyError& e) {
            throw StudyError(where + ": " + e.what());
        }
        p.completed_tasks = parse_int(row.at("completed_tasks"), where);
        if (p.completed_tasks < 0 || p.completed_tasks > kStudyPairs)
            throw StudyError(where + ": completed_tasks must be within 0..14");
        out.push_back(std::move(p));
    }
    return out;
}

std::string profiles_csv(const std::vector<ParticipantProfile>& profiles) {
    std::ostringstream out;
    out << "participant_id,age_band,gender,education,expertise,completed_tasks\n";
    for (const auto& p : profiles)
        out << csv_cell(p.participant_id) << ',' << csv_cell(p.age_band) << ',' << csv_cell(p.gender) << ','
            << csv_cell(p.education) << ',' << to_string(p.expertise) << ',' << p.completed_tasks << '\n';
    return out.str();
}

std::string read_text_file(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw StudyError("cannot open " + file.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& file, std::string_view text) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw StudyError("cannot write " + file.string());
    out << text;
}

// ---- filtering ----------------------------------------------------------------

std::vector<RankingRecord> inclusion_filter(const std::vector<RankingRecord>& records,
                                            const std::vector<ParticipantProfile>& profiles, int min_tasks) {
    std::map<std::string, int> completed;
    for (const auto& r : records) ++completed[r.participant_id];
    for (const auto& p : profiles) completed[p.participant_id] = p.completed_tasks;
    std::vector<RankingRecord> out;
    for (const auto& r : records)
        if (completed[r.participant_id] >= min_tasks) out.push_back(r);
    return out;
}

// ---- MICE ---------------------------------------------------------------------

MiceResult mice_impute(const std::vector<RankingRecord>& records, const MiceConfig& cfg) {
    if (cfg.iterations < 1) throw StudyError("MICE needs at least one iteration");
    if (cfg.donors < 1) throw StudyError("MICE needs at least one donor");
    for (const auto& r : records) validate_record(r);

    MiceResult result;
    std::vector<bool> keep(records.size(), true);
    std::map<std::string, std::vector<std::size_t>> by_pair;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].missing() == kRankedMethods) {
            keep[i] = false;
            result.warnings.push_back("dropped record " + records[i].participant_id + "/" + records[i].pair_id +
                                      ": no ranks to impute from");
            continue;
        }
        by_pair[records[i].pair_id].push_back(i);
    }

    std::vector<RankingRecord> out = records;
    constexpr int k = kRankedMethods;
    for (const auto& [pair, rows] : by_pair) {
        const auto n = static_cast<Eigen::Index>(rows.size());
        Eigen::MatrixXd x(n, k);
        std::vector<std::array<bool, k>> miss(rows.size());
        bool any_missing = false;
        for (Eigen::Index i = 0; i < n; ++i)
            for (int j = 0; j < k; ++j) {
                const auto& v = records[rows[static_cast<std::size_t>(i)]].ranks[static_cast<std::size_t>(j)];
                miss[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = !v;
                x(i, j) = v ? *v : 0.0;
                any_missing = any_missing || !v;
            }
        if (!any_missing) continue;

        // Seeded per pair so results do not depend on which pairs are present.
        std::mt19937_64 rng(fnv1a64(pair, cfg.seed ^ 0x6d696365ULL));

        // Start from random draws of each column's observed ranks.
        std::vector<std::vector<Eigen::Index>> observed(k);
        for (int j = 0; j < k; ++j)
            for (Eigen::Index i = 0; i < n; ++i)
                if (!miss[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) observed[static_cast<std::size_t>(j)].push_back(i);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto& rec = records[rows[static_cast<std::size_t>(i)]];
            double leftover_mean = 0.0;
            int leftovers = 0;
            std::array<bool, k + 1> used{};
            for (const auto& v : rec.ranks)
                if (v) used[static_cast<std::size_t>(*v)] = true;
            for (int r = 1; r <= k; ++r)
                if (!used[static_cast<std::size_t>(r)]) {
                    leftover_mean += r;
                    ++leftovers;
                }
            leftover_mean /= leftovers;
            for (int j = 0; j < k; ++j) {
                if (!miss[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) continue;
                const auto& obs = observed[static_cast<std::size_t>(j)];
                x(i, j) = obs.empty() ? leftover_mean : x(obs[uniform_below(rng, obs.size())], j);
            }
        }

        for (int it = 0; it < cfg.iterations; ++it)
            for (int j = 0; j < k; ++j) {
                const auto& obs = observed[static_cast<std::size_t>(j)];
                if (obs.size() == static_cast<std::size_t>(n) || obs.size() < 2) continue;
                // Design: intercept plus the six other columns.
                Eigen::MatrixXd design(n, k);
                design.col(0).setOnes();
                for (int c = 0, col = 1; c < k; ++c)
                    if (c != j) design.col(col++) = x.col(c);
                const auto no = static_cast<Eigen::Index>(obs.size());
                Eigen::MatrixXd d_obs(no, k);
                Eigen::VectorXd y_obs(no);
                for (Eigen::Index r = 0; r < no; ++r) {
                    d_obs.row(r) = design.row(obs[static_cast<std::size_t>(r)]);
                    y_obs(r) = x(obs[static_cast<std::size_t>(r)], j);
                }
                const Eigen::MatrixXd gram =
                    d_obs.transpose() * d_obs + cfg.ridge * Eigen::MatrixXd::Identity(k, k);
                const Eigen::VectorXd beta = gram.ldlt().solve(d_obs.transpose() * y_obs);
                const Eigen::VectorXd fitted = design * beta;

                std::vector<Eigen::Index> order(obs.size());
                for (Eigen::Index i = 0; i < n; ++i) {
                    if (!miss[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) continue;
                    std::iota(order.begin(), order.end(), Eigen::Index{0});
                    const auto donors = std::min<std::size_t>(static_cast<std::size_t>(cfg.donors), order.size());
                    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(donors), order.end(),
                                      [&](Eigen::Index a, Eigen::Index b) {
                                          const double da = std::abs(fitted(obs[static_cast<std::size_t>(a)]) - fitted(i));
                                          const double db = std::abs(fitted(obs[static_cast<std::size_t>(b)]) - fitted(i));
                                          return da < db || (da == db && a < b);
                                      });
                    const Eigen::Index donor = obs[static_cast<std::size_t>(order[uniform_below(rng, donors)])];
                    x(i, j) = x(donor, j);
                }
            }

        // Leftover ranks go to missing slots by ascending imputed value.
        for (Eigen::Index i = 0; i < n; ++i) {
            auto& rec = out[rows[static_cast<std::size_t>(i)]];
            std::array<bool, k + 1> used{};
            std::vector<int> slots;
            for (int j = 0; j < k; ++j) {
                if (rec.ranks[static_cast<std::size_t>(j)])
                    used[static_cast<std::size_t>(*rec.ranks[static_cast<std::size_t>(j)])] = true;
                else
                    slots.push_back(j);
            }
            std::stable_sort(slots.begin(), slots.end(), [&](int a, int b) { return x(i, a) < x(i, b); });
            std::size_t next = 0;
            for (int r = 1; r <= k; ++r)
                if (!used[static_cast<std::size_t>(r)]) rec.ranks[static_cast<std::size_t>(slots[next++])] = r;
            result.imputed_cells += static_cast<int>(slots.size());
        }
    }
    for (std::size_t i = 0; i < out.size(); ++i)
        if (keep[i]) result.records.push_back(std::move(out[i]));
    return result;
}

// ---- agreement ----------------------------------------------------------------

double kendalls_w(const std::vector<std::vector<double>>& rankings) {
    const auto m = static_cast<double>(rankings.size());
    if (rankings.size() < 2) throw StudyError("Kendall's W needs at least two raters");
    const std::size_t n = rankings[0].size();
    if (n < 2) throw StudyError("Kendall's W needs at least two items");
    std::vector<double> sums(n, 0.0);
    double ties = 0.0;
    for (const auto& r : rankings) {
        if (r.size() != n) throw StudyError("raters ranked different numbers of items");
        std::map<double, int> groups;
        for (std::size_t i = 0; i < n; ++i) {
            sums[i] += r[i];
            ++groups[r[i]];
        }
        for (const auto& [v, t] : groups) ties += static_cast<double>(t) * t * t - t;
    }
    const double nn = static_cast<double>(n);
    const double mean = m * (nn + 1.0) / 2.0;
    double s = 0.0;
    for (double v : sums) s += (v - mean) * (v - mean);
    const double denom = m * m * (nn * nn * nn - nn) - m * ties;
    if (denom <= 0.0) throw StudyError("Kendall's W is undefined when every rater ties all items");
    return 12.0 * s / denom;
}

std::vector<AgreementResult> per_pair_agreement(const std::vector<RankingRecord>& records) {
    std::map<std::string, std::vector<std::vector<double>>> by_pair;
    for (const auto& r : records) {
        if (!r.complete()) continue;
        std::vector<double> v;
        for (const auto& x : r.ranks) v.push_back(*x);
        by_pair[r.pair_id].push_back(std::move(v));
    }
    std::vector<AgreementResult> out;
    for (const auto& [pair, ranks] : by_pair) {
        if (ranks.size() < 2) continue;
        out.push_back({pair, kendalls_w(ranks), static_cast<int>(ranks.size()), kRankedMethods});
    }
    return out;
}

// ---- summaries ----------------------------------------------------------------

namespace {

std::vector<MethodSummary> empty_summary() {
    std::vector<MethodSummary> s;
    for (MethodId m : kAllMethods) s.push_back({m, 0, 0.0, {}});
    return s;
}

void accumulate(std::vector<MethodSummary>& s, const RankingRecord& r) {
    for (std::size_t j = 0; j < kRankedMethods; ++j) {
        const int rank = *r.ranks[j];
        ++s[j].n;
        s[j].mean_rank += rank;
        ++s[j].histogram[static_cast<std::size_t>(rank - 1)];
    }
}

void finish(std::vector<MethodSummary>& s) {
    for (auto& m : s)
        if (m.n > 0) m.mean_rank /= m.n;
}

}  // namespace

RankSummary rank_summary(const std::vector<RankingRecord>& records, const std::vector<ParticipantProfile>& profiles) {
    if (records.empty()) throw StudyError("rank summary needs at least one record");
    std::map<std::string, Expertise> expertise;
    for (const auto& p : profiles) expertise[p.participant_id] = p.expertise;
    RankSummary out;
    out.overall = empty_summary();
    for (const auto& r : records) {
        if (!r.complete())
            throw StudyError("rank summary needs complete records; " + r.participant_id + "/" + r.pair_id +
                             " has missing ranks");
        validate_record(r);
        accumulate(out.overall, r);
        auto [it, fresh] = out.by_pair.try_emplace(r.pair_id, empty_summary());
        accumulate(it->second, r);
        if (auto e = expertise.find(r.participant_id); e != expertise.end()) {
            auto [st, f2] = out.by_expertise.try_emplace(e->second, empty_summary());
            accumulate(st->second, r);
        }
    }
    finish(out.overall);
    for (auto& [k, v] : out.by_pair) finish(v);
    for (auto& [k, v] : out.by_expertise) finish(v);
    return out;
}

std::vector<BarSegment> divergent_bars(const RankSummary& summary) {
    std::vector<BarSegment> out;
    for (const auto& [pair, methods] : summary.by_pair)
        for (const auto& m : methods) {
            std::array<double, kRankedMethods> share{};
            for (std::size_t r = 0; r < kRankedMethods; ++r)
                share[r] = m.n > 0 ? static_cast<double>(m.histogram[r]) / m.n : 0.0;
            const double half = share[3] / 2.0;
            std::array<std::pair<double, double>, kRankedMethods> span{};
            span[3] = {-half, half};
            double right = half, left = -half;
            for (int r = 2; r >= 0; --r) {  // ranks 3, 2, 1 outward to the right
                span[static_cast<std::size_t>(r)] = {right, right + share[static_cast<std::size_t>(r)]};
                right += share[static_cast<std::size_t>(r)];
            }
            for (int r = 4; r < kRankedMethods; ++r) {  // ranks 5, 6, 7 outward to the left
                span[static_cast<std::size_t>(r)] = {left - share[static_cast<std::size_t>(r)], left};
                left -= share[static_cast<std::size_t>(r)];
            }
            for (std::size_t r = 0; r < kRankedMethods; ++r)
                out.push_back({pair, m.method, static_cast<int>(r) + 1, m.histogram[r], share[r], span[r].first,
                               span[r].second});
        }
    return out;
}

// ---- pipeline and report ------------------------------------------------------

AnalysisReport analyze(const std::vector<RankingRecord>& records, const std::vector<ParticipantProfile>& profiles,
                       const AnalysisConfig& cfg) {
    AnalysisReport rep;
    rep.config = cfg;
    std::set<std::string> in, kept;
    for (const auto& r : records) in.insert(r.participant_id);
    const auto filtered = inclusion_filter(records, profiles, cfg.min_tasks);
    for (const auto& r : filtered) kept.insert(r.participant_id);
    rep.participants_in = static_cast<int>(in.size());
    rep.participants_kept = static_cast<int>(kept.size());
    rep.records_in = static_cast<int>(records.size());
    rep.records_kept = static_cast<int>(filtered.size());
    if (filtered.empty()) throw StudyError("no participant passed the inclusion filter");

    auto mice = mice_impute(filtered, cfg.mice);
    rep.imputed_cells = mice.imputed_cells;
    rep.warnings = mice.warnings;
    rep.agreement = per_pair_agreement(cfg.w_before_imputation ? filtered : mice.records);
    rep.summary = rank_summary(mice.records, profiles);
    rep.imputed = std::move(mice.records);
    return rep;
}

namespace {

nlohmann::json summary_json(const std::vector<MethodSummary>& s) {
    auto arr = nlohmann::json::array();
    for (const auto& m : s)
        arr.push_back({{"method", method_id_string(m.method)},
                       {"n", m.n},
                       {"mean_rank", m.mean_rank},
                       {"histogram", m.histogram}});
    return arr;
}

std::string fmt(double v) {
    std::ostringstream ss;
    ss.precision(6);
    ss << std::fixed << v;
    return ss.str();
}

}  // namespace

std::string report_json(const AnalysisReport& r) {
    nlohmann::json j;
    if (!r.config_hash.empty()) j["config_hash"] = r.config_hash;
    j["config"] = {{"min_tasks", r.config.min_tasks},
                   {"mice_iterations", r.config.mice.iterations},
                   {"mice_seed", r.config.mice.seed},
                   {"mice_donors", r.config.mice.donors},
                   {"w_before_imputation", r.config.w_before_imputation}};
    j["participants"] = {{"input", r.participants_in}, {"included", r.participants_kept}};
    j["records"] = {{"input", r.records_in}, {"included", r.records_kept}, {"imputed_cells", r.imputed_cells}};
    j["warnings"] = r.warnings;
    j["agreement"] = nlohmann::json::array();
    for (const auto& a : r.agreement) j["agreement"].push_back({{"pair_id", a.pair_id}, {"w", a.w}, {"m", a.m}, {"n", a.n}});
    j["overall"] = summary_json(r.summary.overall);
    j["by_expertise"] = nlohmann::json::object();
    for (const auto& [e, s] : r.summary.by_expertise) j["by_expertise"][std::string(to_string(e))] = summary_json(s);
    j["by_pair"] = nlohmann::json::object();
    for (const auto& [p, s] : r.summary.by_pair) j["by_pair"][p] = summary_json(s);
    return j.dump(2);
}

std::string agreement_csv(const AnalysisReport& r) {
    std::ostringstream out;
    out << "pair_id,w,m,n\n";
    for (const auto& a : r.agreement) out << csv_cell(a.pair_id) << ',' << fmt(a.w) << ',' << a.m << ',' << a.n << '\n';
    return out.str();
}

std::string summary_csv(const AnalysisReport& r) {
    std::ostringstream out;
    out << "scope,key,method_id,n,mean_rank";
    for (int k = 1; k <= kRankedMethods; ++k) out << ",rank_" << k;
    out << '\n';
    auto rows = [&](const std::string& scope, const std::string& key, const std::vector<MethodSummary>& s) {
        for (const auto& m : s) {
            out << scope << ',' << csv_cell(key) << ',' << method_id_string(m.method) << ',' << m.n << ','
                << fmt(m.mean_rank);
            for (int c : m.histogram) out << ',' << c;
            out << '\n';
        }
    };
    rows("overall", "all", r.summary.overall);
    for (const auto& [e, s] : r.summary.by_expertise) rows("expertise", std::string(to_string(e)), s);
    for (const auto& [p, s] : r.summary.by_pair) rows("pair", p, s);
    return out.str();
}

std::string bars_csv(const AnalysisReport& r) {
    std::ostringstream out;
    out << "pair_id,method_id,rank,count,share,start,end\n";
    for (const auto& b : divergent_bars(r.summary))
        out << csv_cell(b.pair_id) << ',' << method_id_string(b.method) << ',' << b.rank << ',' << b.count << ','
            << fmt(b.share) << ',' << fmt(b.start) << ',' << fmt(b.end) << '\n';
    return out.str();
}

void write_report(const AnalysisReport& report, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const std::string head = report.config_hash.empty() ? "" : "# config_hash=" + report.config_hash + "\n";
    write_text_file(dir / "report.json", report_json(report) + "\n");
    write_text_file(dir / "agreement.csv", head + agreement_csv(report));
    write_text_file(dir / "rank_summary.csv", head + summary_csv(report));
    write_text_file(dir / "divergent_bars.csv", head + bars_csv(report));
    write_text_file(dir / "imputed_rankings.csv", head + rankings_csv(report.imputed));
}

}  // namespace iconsal
