#include "iconsal/study/service.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "iconsal/core/hash.hpp"
#include "iconsal/dataset/dataset.hpp"
#include "iconsal/io/image_file.hpp"
#include "iconsal/io/map_file.hpp"
#include "json.hpp"

namespace iconsal {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::size_t slot(int i) { return static_cast<std::size_t>(i); }

std::string utc_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
    char out[40];
    std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
    return out;
}

std::uint64_t fresh_u64(std::random_device& rd) {
    return (static_cast<std::uint64_t>(rd()) << 32) ^ static_cast<std::uint64_t>(rd());
}

fs::path resolve(const fs::path& root, const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() ? path : (root / path).lexically_normal();
}

std::string relative_to(const fs::path& p, const fs::path& root) {
    const fs::path rel = p.lexically_relative(root);
    return rel.empty() || *rel.begin() == ".." ? p.string() : rel.generic_string();
}

template <std::size_t N>
void shuffle(std::array<int, N>& a, std::mt19937_64& rng) {
    std::iota(a.begin(), a.end(), 0);
    for (std::size_t i = N - 1; i > 0; --i) std::swap(a[i], a[uniform_below(rng, i + 1)]);
}

}  // namespace

void StudyConfig::validate() const {
    if (pairs.size() != static_cast<std::size_t>(kStudyPairs))
        throw StudyError("study needs exactly " + std::to_string(kStudyPairs) + " image-class pairs, got " +
                         std::to_string(pairs.size()));
    std::set<std::string> ids;
    for (const auto& p : pairs) {
        if (p.pair_id.empty()) throw StudyError("pair with empty id");
        if (!ids.insert(p.pair_id).second) throw StudyError("duplicate pair id '" + p.pair_id + "'");
        if (p.width <= 0 || p.height <= 0) throw StudyError("pair '" + p.pair_id + "': image size must be positive");
        for (std::size_t i = 0; i < p.overlays.size(); ++i)
            if (p.overlays[i].empty())
                throw StudyError("pair '" + p.pair_id + "' has no overlay for " +
                                 std::string(method_id_string(kAllMethods[i])));
    }
}

std::string StudyConfig::hash() const {
    std::uint64_t h = fnv1a64(title);
    for (const auto& p : pairs) {
        h = fnv1a64(p.pair_id + '\x1f' + p.image_id + '\x1f' + p.class_label + '\x1f' + std::to_string(p.width) +
                        'x' + std::to_string(p.height),
                    h);
        for (const auto& o : p.overlays) h = fnv1a64(o.filename().string(), h);
    }
    return hex64(h);
}

StudyConfig parse_study_config(const std::string& text, const fs::path& root, const std::string& source) {
    StudyConfig cfg;
    try {
        const json j = json::parse(text);
        cfg.title = j.value("title", "");
        const auto& pairs = j.at("pairs");
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            const auto& pj = pairs[i];
            StudyPair p;
            p.pair_id = pj.at("pair_id").get<std::string>();
            p.image_id = pj.at("image_id").get<std::string>();
            p.class_label = normalize_class_name(pj.at("class").get<std::string>());
            p.image = resolve(root, pj.at("image").get<std::string>());
            p.width = pj.at("width").get<int>();
            p.height = pj.at("height").get<int>();
            for (const auto& [k, v] : pj.at("overlays").items()) {
                MethodId m{};
                try {
                    m = parse_method_id(k);
                } catch (const std::exception&) {
                    throw StudyError("pair " + std::to_string(i) + ": unknown method '" + k + "'");
                }
                p.overlays[static_cast<std::size_t>(m)] = resolve(root, v.get<std::string>());
            }
            cfg.pairs.push_back(std::move(p));
        }
        cfg.validate();
    } catch (const json::exception& e) {
        throw StudyError(source + ": " + e.what());
    } catch (const StudyError& e) {
        throw StudyError(source + ": " + e.what());
    }
    return cfg;
}

StudyConfig load_study_config(const fs::path& file) {
    return parse_study_config(read_text_file(file), file.parent_path(), file.string());
}

std::string study_config_json(const StudyConfig& cfg, const fs::path& root) {
    json pairs = json::array();
    for (const auto& p : cfg.pairs) {
        json overlays = json::object();
        for (std::size_t i = 0; i < p.overlays.size(); ++i)
            overlays[std::string(method_id_string(kAllMethods[i]))] = relative_to(p.overlays[i], root);
        pairs.push_back({{"pair_id", p.pair_id},
                         {"image_id", p.image_id},
                         {"class", p.class_label},
                         {"image", relative_to(p.image, root)},
                         {"width", p.width},
                         {"height", p.height},
                         {"overlays", overlays}});
    }
    return json{{"title", cfg.title}, {"pairs", pairs}}.dump(2) + "\n";
}

StudyConfig prepare_study(const fs::path& pairs_file, const fs::path& maps_dir, const fs::path& out_dir,
                          double alpha) {
    const fs::path root = pairs_file.parent_path();
    StudyConfig cfg;
    json j;
    try {
        j = json::parse(read_text_file(pairs_file));
    } catch (const json::exception& e) {
        throw StudyError(pairs_file.string() + ": " + e.what());
    }
    cfg.title = j.value("title", "");
    fs::create_directories(out_dir / "overlays");
    for (const auto& pj : j.at("pairs")) {
        StudyPair p;
        p.pair_id = pj.at("pair_id").get<std::string>();
        p.image_id = pj.at("image_id").get<std::string>();
        p.class_label = normalize_class_name(pj.at("class").get<std::string>());
        p.image = fs::absolute(resolve(root, pj.at("image").get<std::string>()));
        const Image img = load_image(p.image);
        p.width = img.width;
        p.height = img.height;
        for (MethodId m : kAllMethods) {
            const RealGrid map = read_npy(maps_dir / map_file_name(p.image_id, p.class_label, m));
            const fs::path out = out_dir / "overlays" / (sanitize_name(p.pair_id) + "__" +
                                                         std::string(method_id_string(m)) + ".png");
            save_image(out, render_overlay(img, map, alpha));
            p.overlays[static_cast<std::size_t>(m)] = fs::absolute(out);
        }
        cfg.pairs.push_back(std::move(p));
    }
    cfg.validate();
    write_text_file(out_dir / "study.json", study_config_json(cfg, fs::absolute(out_dir)));
    return cfg;
}

SessionOrders draw_orders(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    SessionOrders o;
    shuffle(o.pair_order, rng);
    for (auto& m : o.map_order) shuffle(m, rng);
    return o;
}

std::string_view to_string(Step s) {
    switch (s) {
        case Step::annotate: return "annotate";
        case Step::rank: return "rank";
        case Step::done: return "done";
    }
    return "?";
}

StudyExport export_study(StudyStore& store) {
    StudyExport ex;
    ex.rankings_csv = rankings_csv(store.rankings());
    auto sessions = store.sessions();
    std::vector<ParticipantProfile> profiles;
    for (const auto& s : sessions) profiles.push_back(s.profile);
    ex.profiles_csv = profiles_csv(profiles);
    std::ostringstream masks;
    for (const auto& a : store.annotations())
        masks << json{{"session_id", a.session_id},
                      {"pair_id", a.pair_id},
                      {"width", a.mask.width},
                      {"height", a.mask.height},
                      {"rle", a.mask.runs},
                      {"created_at", a.created_at}}
                     .dump()
              << '\n';
    ex.masks_jsonl = masks.str();
    return ex;
}

void write_export(const StudyExport& ex, const fs::path& dir) {
    fs::create_directories(dir);
    write_text_file(dir / "rankings.csv", ex.rankings_csv);
    write_text_file(dir / "profiles.csv", ex.profiles_csv);
    write_text_file(dir / "masks.jsonl", ex.masks_jsonl);
}

StudyService::StudyService(StudyConfig cfg, const fs::path& db_file) : cfg_(std::move(cfg)), store_(db_file) {
    cfg_.validate();
    store_.bind_config(cfg_.hash());
}

std::string StudyService::create_session(const ParticipantProfile& profile, bool consent) {
    std::random_device rd;
    return create_session(profile, consent, fresh_u64(rd));
}

std::string StudyService::create_session(const ParticipantProfile& profile, bool consent, std::uint64_t seed) {
    if (!consent) throw ServiceError(400, "informed consent is required");
    std::random_device rd;
    Session s;
    s.session_id = hex64(fresh_u64(rd)) + hex64(fresh_u64(rd));
    s.seed = seed;
    s.orders = draw_orders(seed);
    s.consent = true;
    s.profile = profile;
    s.profile.participant_id = s.session_id;
    s.profile.completed_tasks = 0;
    store_.insert_session(s, utc_now());
    return s.session_id;
}

Session StudyService::require_session(const std::string& session_id) {
    auto s = store_.find_session(session_id);
    if (!s) throw ServiceError(404, "unknown session");
    s->cursor = s->profile.completed_tasks;
    if (s->cursor >= kStudyPairs) {
        s->step = Step::done;
    } else {
        const auto& pair = cfg_.pairs[slot(s->orders.pair_order[slot(s->cursor)])];
        s->step = store_.has_annotation(session_id, pair.pair_id) ? Step::rank : Step::annotate;
    }
    return *s;
}

Session StudyService::session(const std::string& session_id) { return require_session(session_id); }

std::vector<OverlayRef> StudyService::overlays(const Session& s, int pair_index) const {
    std::vector<OverlayRef> out;
    const std::string& pid = cfg_.pairs[slot(pair_index)].pair_id;
    const auto& order = s.orders.map_order[slot(pair_index)];
    for (std::size_t i = 0; i < order.size(); ++i) {
        const MethodId m = kAllMethods[slot(order[i])];
        // The seed never leaves the server, so ids cannot be mapped back to methods.
        const std::string id = hex64(fnv1a64(s.session_id + '\x1f' + pid + '\x1f' + std::string(method_id_string(m)),
                                             s.seed ^ 0x6f7665726c6179ULL));
        out.push_back({id, static_cast<char>('A' + i), m});
    }
    return out;
}

int StudyService::pair_index(const std::string& pair_id) const {
    for (std::size_t i = 0; i < cfg_.pairs.size(); ++i)
        if (cfg_.pairs[i].pair_id == pair_id) return static_cast<int>(i);
    return -1;
}

NextTask StudyService::next(const std::string& session_id) {
    const Session s = require_session(session_id);
    NextTask t;
    t.step = s.step;
    t.position = s.cursor;
    if (s.step == Step::done) return t;
    t.pair_index = s.orders.pair_order[slot(s.cursor)];
    if (s.step == Step::rank) t.overlays = overlays(s, *t.pair_index);
    return t;
}

std::shared_ptr<std::mutex> StudyService::session_lock(const std::string& session_id) {
    std::lock_guard g(locks_mutex_);
    auto& m = locks_[session_id];
    if (!m) m = std::make_shared<std::mutex>();
    return m;
}

void StudyService::submit_annotation(const std::string& session_id, const std::string& pair_id, const RleMask& mask) {
    const auto lock = session_lock(session_id);
    std::lock_guard g(*lock);
    const Session s = require_session(session_id);
    const int idx = pair_index(pair_id);
    if (idx < 0) throw ServiceError(404, "unknown pair '" + pair_id + "'");
    if (store_.has_annotation(session_id, pair_id)) throw ServiceError(409, "pair already annotated");
    if (s.step != Step::annotate || s.orders.pair_order[slot(s.cursor)] != idx)
        throw ServiceError(409, "pair '" + pair_id + "' is not the current annotation task");
    const auto& pair = cfg_.pairs[slot(idx)];
    if (mask.width != pair.width || mask.height != pair.height)
        throw ServiceError(400, "mask is " + std::to_string(mask.width) + "x" + std::to_string(mask.height) +
                                    ", image is " + std::to_string(pair.width) + "x" + std::to_string(pair.height));
    try {
        rle_decode(mask);
    } catch (const StudyError& e) {
        throw ServiceError(400, e.what());
    }
    if (rle_on_pixels(mask) == 0) throw ServiceError(400, "mask is empty");
    // Store the canonical encoding so equal masks are equal rows.
    if (!store_.insert_annotation(session_id, pair_id, rle_encode(rle_decode(mask)), utc_now()))
        throw ServiceError(409, "pair already annotated");
}

void StudyService::submit_ranking(const std::string& session_id, const std::string& pair_id,
                                  const std::map<std::string, int>& ranks) {
    const auto lock = session_lock(session_id);
    std::lock_guard g(*lock);
    const Session s = require_session(session_id);
    const int idx = pair_index(pair_id);
    if (idx < 0) throw ServiceError(404, "unknown pair '" + pair_id + "'");
    if (store_.has_ranking(session_id, pair_id)) throw ServiceError(409, "pair already ranked");
    if (s.step != Step::rank || s.orders.pair_order[slot(s.cursor)] != idx)
        throw ServiceError(409, "pair '" + pair_id + "' is not the current ranking task");
    const auto refs = overlays(s, idx);
    std::array<std::optional<int>, kRankedMethods> by_method{};
    std::set<int> used;
    for (const auto& [oid, rank] : ranks) {
        const auto it = std::find_if(refs.begin(), refs.end(), [&](const OverlayRef& r) { return r.overlay_id == oid; });
        if (it == refs.end()) throw ServiceError(400, "unknown overlay id '" + oid + "'");
        if (rank < 1 || rank > kRankedMethods)
            throw ServiceError(400, "rank " + std::to_string(rank) + " outside 1.." + std::to_string(kRankedMethods));
        if (!used.insert(rank).second) throw ServiceError(400, "rank " + std::to_string(rank) + " used twice");
        by_method[static_cast<std::size_t>(it->method)] = rank;
    }
    if (!store_.insert_ranking(session_id, pair_id, by_method, utc_now()))
        throw ServiceError(409, "pair already ranked");
}

std::optional<fs::path> StudyService::overlay_file(const std::string& session_id, const std::string& overlay_id) {
    const Session s = require_session(session_id);
    for (int p = 0; p < kStudyPairs; ++p)
        for (const auto& r : overlays(s, p))
            if (r.overlay_id == overlay_id) return cfg_.pairs[slot(p)].overlays[static_cast<std::size_t>(r.method)];
    return std::nullopt;
}

}  // namespace iconsal
