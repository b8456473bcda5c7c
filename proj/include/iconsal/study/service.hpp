#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "iconsal/core/grid.hpp"
#include "iconsal/saliency/saliency_map.hpp"
#include "iconsal/study/analysis.hpp"
#include "iconsal/study/rle.hpp"

namespace httplib {
class Server;
}

namespace iconsal {

/// Carries the HTTP status the failure maps to: 400 bad payload, 404 unknown
/// session or resource, 409 out-of-order step or resubmission.
class ServiceError : public StudyError {
public:
    ServiceError(int status, const std::string& what) : StudyError(what), status_(status) {}
    int status() const { return status_; }

private:
    int status_;
};

struct StudyPair {
    std::string pair_id;
    std::string image_id;
    std::string class_label;
    std::filesystem::path image;  // absolute after loading
    int width = 0;
    int height = 0;
    std::array<std::filesystem::path, kRankedMethods> overlays;  // slot = method

    bool operator==(const StudyPair&) const = default;
};

/// study.json:
///   {"title": "...", "pairs": [{"pair_id", "image_id", "class", "image",
///    "width", "height", "overlays": {"<method_id>": "<png>", ...}}, ...]}
/// Relative paths resolve against the file's directory.
struct StudyConfig {
    std::string title;
    std::vector<StudyPair> pairs;

    /// Exactly 14 pairs with unique ids, each with one overlay per method.
    void validate() const;
    std::string hash() const;
};

StudyConfig parse_study_config(const std::string& text, const std::filesystem::path& root,
                               const std::string& source = "<study>");
StudyConfig load_study_config(const std::filesystem::path& file);
/// Paths are written relative to `root` where possible.
std::string study_config_json(const StudyConfig& cfg, const std::filesystem::path& root);

/// Input to overlay pre-rendering: the pairs without overlays, read from
///   {"title", "pairs": [{"pair_id", "image_id", "class", "image"}, ...]}
/// and the generated map directory. Writes overlays/<pair>__<method>.png and
/// study.json under `out_dir` and returns the loaded config.
StudyConfig prepare_study(const std::filesystem::path& pairs_file, const std::filesystem::path& maps_dir,
                          const std::filesystem::path& out_dir, double alpha = 0.5);

/// Presentation orders for one session, reproducible from its seed.
/// pair_order lists config pair indices in presentation order; map_order[p]
/// lists method slots in display order (labels A..G) for config pair p.
struct SessionOrders {
    std::array<int, kStudyPairs> pair_order{};
    std::array<std::array<int, kRankedMethods>, kStudyPairs> map_order{};
    bool operator==(const SessionOrders&) const = default;
};

SessionOrders draw_orders(std::uint64_t seed);

enum class Step { annotate, rank, done };
std::string_view to_string(Step s);

struct Session {
    std::string session_id;
    std::uint64_t seed = 0;
    SessionOrders orders;
    ParticipantProfile profile;  // completed_tasks = rankings submitted
    bool consent = false;
    int cursor = 0;              // pairs fully done, in presentation order
    Step step = Step::annotate;
};

struct OverlayRef {
    std::string overlay_id;  // opaque, stable per (session, pair, method)
    char label = 'A';
    MethodId method{};
};

struct NextTask {
    Step step = Step::done;
    int position = 0;  // == cursor
    std::optional<int> pair_index;
    std::vector<OverlayRef> overlays;  // rank step only, in display order
};

struct StudyExport {
    std::string rankings_csv;
    std::string profiles_csv;
    std::string masks_jsonl;
};

/// SQLite-backed persistence. One serialized connection; rows are only ever
/// inserted, and primary keys reject a second submission of the same step.
class StudyStore {
public:
    explicit StudyStore(const std::filesystem::path& db_file);
    ~StudyStore();
    StudyStore(const StudyStore&) = delete;
    StudyStore& operator=(const StudyStore&) = delete;

    /// Records the study's config hash on first use and refuses a database
    /// that belongs to a different study.
    void bind_config(const std::string& config_hash);

    void insert_session(const Session& s, const std::string& created_at);
    std::optional<Session> find_session(const std::string& session_id);
    bool has_annotation(const std::string& session_id, const std::string& pair_id);
    bool has_ranking(const std::string& session_id, const std::string& pair_id);
    int ranking_count(const std::string& session_id);
    /// False when the row already exists.
    bool insert_annotation(const std::string& session_id, const std::string& pair_id, const RleMask& mask,
                           const std::string& created_at);
    bool insert_ranking(const std::string& session_id, const std::string& pair_id,
                        const std::array<std::optional<int>, kRankedMethods>& ranks, const std::string& created_at);
    std::optional<RleMask> annotation(const std::string& session_id, const std::string& pair_id);

    /// Everything, ordered by session id then pair id.
    std::vector<Session> sessions();
    std::vector<RankingRecord> rankings();
    struct AnnotationRow {
        std::string session_id;
        std::string pair_id;
        RleMask mask;
        std::string created_at;
    };
    std::vector<AnnotationRow> annotations();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Export in the analysis input formats. Deterministic: sessions by id, pairs
/// by id, methods in canonical order.
StudyExport export_study(StudyStore& store);
void write_export(const StudyExport& ex, const std::filesystem::path& dir);

class StudyService {
public:
    StudyService(StudyConfig cfg, const std::filesystem::path& db_file);

    const StudyConfig& config() const { return cfg_; }
    StudyStore& store() { return store_; }

    std::string create_session(const ParticipantProfile& profile, bool consent);
    /// Same, with a caller-chosen seed (tests, replays).
    std::string create_session(const ParticipantProfile& profile, bool consent, std::uint64_t seed);

    Session session(const std::string& session_id);
    NextTask next(const std::string& session_id);
    void submit_annotation(const std::string& session_id, const std::string& pair_id, const RleMask& mask);
    /// Keys are overlay ids from next(); a subset (or none) may be ranked.
    void submit_ranking(const std::string& session_id, const std::string& pair_id,
                        const std::map<std::string, int>& ranks);

    std::vector<OverlayRef> overlays(const Session& s, int pair_index) const;
    std::optional<std::filesystem::path> overlay_file(const std::string& session_id, const std::string& overlay_id);
    int pair_index(const std::string& pair_id) const;  // -1 when unknown

private:
    std::shared_ptr<std::mutex> session_lock(const std::string& session_id);
    Session require_session(const std::string& session_id);

    StudyConfig cfg_;
    StudyStore store_;
    std::mutex locks_mutex_;
    std::map<std::string, std::shared_ptr<std::mutex>> locks_;
};

/// Registers the JSON API (and the image/overlay asset routes) on `server`.
void mount_study_routes(httplib::Server& server, StudyService& service);

}  // namespace iconsal
