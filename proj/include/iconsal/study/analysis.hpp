#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "iconsal/saliency/saliency_map.hpp"

namespace iconsal {

class StudyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr int kRankedMethods = 7;
inline constexpr int kStudyPairs = 14;

/// One participant's ranking of the seven maps for one image-class pair.
/// Slot i holds the rank of kAllMethods[i]; rank 1 is best.
struct RankingRecord {
    std::string participant_id;
    std::string pair_id;
    std::array<std::optional<int>, kRankedMethods> ranks{};

    bool complete() const;
    int missing() const;
    bool operator==(const RankingRecord&) const = default;
};

/// Present ranks are distinct values in 1..7.
void validate_record(const RankingRecord& r);

enum class Expertise { basic, intermediate, advanced };

std::string_view to_string(Expertise e);
Expertise parse_expertise(std::string_view s);

struct ParticipantProfile {
    std::string participant_id;
    std::string age_band;
    std::string gender;
    std::string education;
    Expertise expertise = Expertise::basic;
    int completed_tasks = 0;
    bool operator==(const ParticipantProfile&) const = default;
};

// CSV I/O. Rankings are long format, one row per (participant, pair, method),
// with an empty rank cell for a missing position. Lines starting with '#' are
// comments.
std::vector<RankingRecord> parse_rankings_csv(std::string_view text, const std::string& source = "<rankings>");
std::string rankings_csv(const std::vector<RankingRecord>& records);
std::vector<ParticipantProfile> parse_profiles_csv(std::string_view text, const std::string& source = "<profiles>");
std::string profiles_csv(const std::vector<ParticipantProfile>& profiles);

std::string read_text_file(const std::filesystem::path& file);
void write_text_file(const std::filesystem::path& file, std::string_view text);

/// Keeps records of participants who completed at least `min_tasks` pairs.
/// The profile's count is used; a participant without a profile is judged
/// by the number of pairs present in the records.
std::vector<RankingRecord> inclusion_filter(const std::vector<RankingRecord>& records,
                                            const std::vector<ParticipantProfile>& profiles, int min_tasks = 4);

struct MiceConfig {
    int iterations = 20;
    std::uint64_t seed = 0;
    int donors = 5;        // predictive mean matching candidates
    double ridge = 1e-6;   // keeps collinear rank columns solvable
};

struct MiceResult {
    std::vector<RankingRecord> records;  // complete, same order as input minus dropped
    std::vector<std::string> warnings;
    int imputed_cells = 0;
};

/// Chained-equation imputation per pair with predictive mean matching, then
/// re-ranking inside each record so observed ranks stay and the leftover
/// ranks go to the missing slots in order of imputed value.
MiceResult mice_impute(const std::vector<RankingRecord>& records, const MiceConfig& cfg = {});

struct AgreementResult {
    std::string pair_id;
    double w = 0.0;
    int m = 0;  // raters
    int n = 0;  // items
};

/// Kendall's W with tie correction. Each inner vector is one rater's ranks
/// (ties as average ranks).
double kendalls_w(const std::vector<std::vector<double>>& rankings);

/// Per-pair W over complete records, ordered by pair id. Pairs with fewer
/// than two complete records are skipped.
std::vector<AgreementResult> per_pair_agreement(const std::vector<RankingRecord>& records);

struct MethodSummary {
    MethodId method{};
    int n = 0;
    double mean_rank = 0.0;
    std::array<int, kRankedMethods> histogram{};  // count at rank 1..7
};

struct RankSummary {
    std::vector<MethodSummary> overall;
    std::map<std::string, std::vector<MethodSummary>> by_pair;
    std::map<Expertise, std::vector<MethodSummary>> by_expertise;
};

/// Needs complete records; expertise strata use the given profiles.
RankSummary rank_summary(const std::vector<RankingRecord>& records, const std::vector<ParticipantProfile>& profiles = {});

/// One segment of a divergent stacked bar: ranks 1-3 extend right of zero,
/// 5-7 left, rank 4 straddles the centre. start/end are shares in [-1, 1].
struct BarSegment {
    std::string pair_id;
    MethodId method{};
    int rank = 0;
    int count = 0;
    double share = 0.0;
    double start = 0.0;
    double end = 0.0;
};

std::vector<BarSegment> divergent_bars(const RankSummary& summary);

struct AnalysisConfig {
    int min_tasks = 4;
    MiceConfig mice;
    bool w_before_imputation = false;
};

struct AnalysisReport {
    AnalysisConfig config;
    std::string config_hash;  // of the run that produced it; empty when unknown
    int participants_in = 0;
    int participants_kept = 0;
    int records_in = 0;
    int records_kept = 0;
    int imputed_cells = 0;
    std::vector<std::string> warnings;
    std::vector<AgreementResult> agreement;
    RankSummary summary;
    std::vector<RankingRecord> imputed;
};

AnalysisReport analyze(const std::vector<RankingRecord>& records, const std::vector<ParticipantProfile>& profiles,
                       const AnalysisConfig& cfg);

std::string report_json(const AnalysisReport& report);
std::string agreement_csv(const AnalysisReport& report);
std::string summary_csv(const AnalysisReport& report);
std::string bars_csv(const AnalysisReport& report);

/// Writes report.json, agreement.csv, rank_summary.csv, divergent_bars.csv
/// and imputed_rankings.csv into `dir`.
void write_report(const AnalysisReport& report, const std::filesystem::path& dir);

}  // namespace iconsal
