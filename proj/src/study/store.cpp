#include <sqlite3.h>

#include "iconsal/core/hash.hpp"
#include "iconsal/study/service.hpp"
#include "json.hpp"

namespace iconsal {

namespace {

using nlohmann::json;

const char* kSchema = R"sql(
CREATE TABLE IF NOT EXISTS meta (
  key TEXT PRIMARY KEY,
  value TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS sessions (
  session_id TEXT PRIMARY KEY,
  seed TEXT NOT NULL,
  orders TEXT NOT NULL,
  consent INTEGER NOT NULL,
  age_band TEXT NOT NULL,
  gender TEXT NOT NULL,
  education TEXT NOT NULL,
  expertise TEXT NOT NULL,
  created_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS annotations (
  session_id TEXT NOT NULL REFERENCES sessions(session_id),
  pair_id TEXT NOT NULL,
  width INTEGER NOT NULL,
  height INTEGER NOT NULL,
  rle TEXT NOT NULL,
  created_at TEXT NOT NULL,
  PRIMARY KEY (session_id, pair_id)
);
CREATE TABLE IF NOT EXISTS rankings (
  session_id TEXT NOT NULL REFERENCES sessions(session_id),
  pair_id TEXT NOT NULL,
  ranks TEXT NOT NULL,
  created_at TEXT NOT NULL,
  PRIMARY KEY (session_id, pair_id)
);
)sql";

class Stmt {
public:
    Stmt(sqlite3* db, const char* sql) : db_(db) {
        if (sqlite3_prepare_v2(db, sql, -1, &stmt_, nullptr) != SQLITE_OK)
            throw StudyError(std::string("sqlite prepare: ") + sqlite3_errmsg(db));
    }
    ~Stmt() { sqlite3_finalize(stmt_); }
    Stmt(const Stmt&) = delete;
    Stmt& operator=(const Stmt&) = delete;

    Stmt& bind(int i, const std::string& v) {
        sqlite3_bind_text(stmt_, i, v.c_str(), static_cast<int>(v.size()), SQLITE_TRANSIENT);
        return *this;
    }
    Stmt& bind(int i, std::int64_t v) {
        sqlite3_bind_int64(stmt_, i, v);
        return *this;
    }
    // true while a row is available
    bool step() {
        const int rc = sqlite3_step(stmt_);
        if (rc == SQLITE_ROW) return true;
        if (rc == SQLITE_DONE) return false;
        throw StudyError(std::string("sqlite step: ") + sqlite3_errmsg(db_));
    }
    // false on a primary-key conflict
    bool insert() {
        const int rc = sqlite3_step(stmt_);
        if (rc == SQLITE_DONE) return true;
        if (rc == SQLITE_CONSTRAINT) return false;
        throw StudyError(std::string("sqlite insert: ") + sqlite3_errmsg(db_));
    }
    std::string text(int col) const {
        const auto* p = sqlite3_column_text(stmt_, col);
        return p ? std::string(reinterpret_cast<const char*>(p)) : std::string();
    }
    std::int64_t integer(int col) const { return sqlite3_column_int64(stmt_, col); }

private:
    sqlite3* db_;
    sqlite3_stmt* stmt_ = nullptr;
};

json orders_json(const SessionOrders& o) { return json{{"pairs", o.pair_order}, {"maps", o.map_order}}; }

SessionOrders orders_from_json(const std::string& text) {
    const json j = json::parse(text);
    SessionOrders o;
    o.pair_order = j.at("pairs").get<std::array<int, kStudyPairs>>();
    o.map_order = j.at("maps").get<std::array<std::array<int, kRankedMethods>, kStudyPairs>>();
    return o;
}

Session session_from_row(const Stmt& q) {
    Session s;
    s.session_id = q.text(0);
    s.seed = std::stoull(q.text(1), nullptr, 16);
    s.orders = orders_from_json(q.text(2));
    s.consent = q.integer(3) != 0;
    s.profile.participant_id = s.session_id;
    s.profile.age_band = q.text(4);
    s.profile.gender = q.text(5);
    s.profile.education = q.text(6);
    s.profile.expertise = parse_expertise(q.text(7));
    s.profile.completed_tasks = static_cast<int>(q.integer(8));
    return s;
}

const char* kSessionColumns =
    "SELECT s.session_id, s.seed, s.orders, s.consent, s.age_band, s.gender, s.education, s.expertise, "
    "(SELECT COUNT(*) FROM rankings r WHERE r.session_id = s.session_id) FROM sessions s ";

}  // namespace

struct StudyStore::Impl {
    sqlite3* db = nullptr;
};

StudyStore::StudyStore(const std::filesystem::path& db_file) : impl_(std::make_unique<Impl>()) {
    const int flags = SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX;
    if (sqlite3_open_v2(db_file.string().c_str(), &impl_->db, flags, nullptr) != SQLITE_OK) {
        const std::string msg = impl_->db ? sqlite3_errmsg(impl_->db) : "out of memory";
        sqlite3_close(impl_->db);
        throw StudyError("cannot open study database " + db_file.string() + ": " + msg);
    }
    sqlite3_busy_timeout(impl_->db, 5000);
    char* err = nullptr;
    if (sqlite3_exec(impl_->db, kSchema, nullptr, nullptr, &err) != SQLITE_OK) {
        const std::string msg = err ? err : "unknown error";
        sqlite3_free(err);
        sqlite3_close(impl_->db);
        throw StudyError("cannot initialise study database: " + msg);
    }
}

StudyStore::~StudyStore() { sqlite3_close(impl_->db); }

void StudyStore::bind_config(const std::string& config_hash) {
    Stmt q(impl_->db, "SELECT value FROM meta WHERE key = 'config_hash'");
    if (q.step()) {
        if (q.text(0) != config_hash)
            throw StudyError("study database was created for config " + q.text(0) + ", not " + config_hash);
        return;
    }
    Stmt ins(impl_->db, "INSERT INTO meta (key, value) VALUES ('config_hash', ?)");
    ins.bind(1, config_hash).insert();
}

void StudyStore::insert_session(const Session& s, const std::string& created_at) {
    Stmt q(impl_->db,
           "INSERT INTO sessions (session_id, seed, orders, consent, age_band, gender, education, expertise, "
           "created_at) VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)");
    q.bind(1, s.session_id)
        .bind(2, hex64(s.seed))
        .bind(3, orders_json(s.orders).dump())
        .bind(4, std::int64_t{s.consent ? 1 : 0})
        .bind(5, s.profile.age_band)
        .bind(6, s.profile.gender)
        .bind(7, s.profile.education)
        .bind(8, std::string(to_string(s.profile.expertise)))
        .bind(9, created_at);
    if (!q.insert()) throw StudyError("session id collision: " + s.session_id);
}

std::optional<Session> StudyStore::find_session(const std::string& session_id) {
    Stmt q(impl_->db, (std::string(kSessionColumns) + "WHERE s.session_id = ?").c_str());
    q.bind(1, session_id);
    if (!q.step()) return std::nullopt;
    return session_from_row(q);
}

bool StudyStore::has_annotation(const std::string& session_id, const std::string& pair_id) {
    Stmt q(impl_->db, "SELECT 1 FROM annotations WHERE session_id = ? AND pair_id = ?");
    q.bind(1, session_id).bind(2, pair_id);
    return q.step();
}

bool StudyStore::has_ranking(const std::string& session_id, const std::string& pair_id) {
    Stmt q(impl_->db, "SELECT 1 FROM rankings WHERE session_id = ? AND pair_id = ?");
    q.bind(1, session_id).bind(2, pair_id);
    return q.step();
}

int StudyStore::ranking_count(const std::string& session_id) {
    Stmt q(impl_->db, "SELECT COUNT(*) FROM rankings WHERE session_id = ?");
    q.bind(1, session_id);
    q.step();
    return static_cast<int>(q.integer(0));
}

bool StudyStore::insert_annotation(const std::string& session_id, const std::string& pair_id, const RleMask& mask,
                                   const std::string& created_at) {
    Stmt q(impl_->db,
           "INSERT INTO annotations (session_id, pair_id, width, height, rle, created_at) VALUES (?, ?, ?, ?, ?, ?)");
    q.bind(1, session_id)
        .bind(2, pair_id)
        .bind(3, std::int64_t{mask.width})
        .bind(4, std::int64_t{mask.height})
        .bind(5, json(mask.runs).dump())
        .bind(6, created_at);
    return q.insert();
}

bool StudyStore::insert_ranking(const std::string& session_id, const std::string& pair_id,
                                const std::array<std::optional<int>, kRankedMethods>& ranks,
                                const std::string& created_at) {
    json j = json::object();
    for (int i = 0; i < kRankedMethods; ++i)
        if (ranks[static_cast<std::size_t>(i)])
            j[std::string(method_id_string(kAllMethods[static_cast<std::size_t>(i)]))] = *ranks[static_cast<std::size_t>(i)];
    Stmt q(impl_->db, "INSERT INTO rankings (session_id, pair_id, ranks, created_at) VALUES (?, ?, ?, ?)");
    q.bind(1, session_id).bind(2, pair_id).bind(3, j.dump()).bind(4, created_at);
    return q.insert();
}

std::optional<RleMask> StudyStore::annotation(const std::string& session_id, const std::string& pair_id) {
    Stmt q(impl_->db, "SELECT width, height, rle FROM annotations WHERE session_id = ? AND pair_id = ?");
    q.bind(1, session_id).bind(2, pair_id);
    if (!q.step()) return std::nullopt;
    return RleMask{static_cast<int>(q.integer(0)), static_cast<int>(q.integer(1)),
                   json::parse(q.text(2)).get<std::vector<std::int64_t>>()};
}

std::vector<Session> StudyStore::sessions() {
    Stmt q(impl_->db, (std::string(kSessionColumns) + "ORDER BY s.session_id").c_str());
    std::vector<Session> out;
    while (q.step()) out.push_back(session_from_row(q));
    return out;
}

std::vector<RankingRecord> StudyStore::rankings() {
    Stmt q(impl_->db, "SELECT session_id, pair_id, ranks FROM rankings ORDER BY session_id, pair_id");
    std::vector<RankingRecord> out;
    while (q.step()) {
        RankingRecord r;
        r.participant_id = q.text(0);
        r.pair_id = q.text(1);
        const json ranks = json::parse(q.text(2));
        for (const auto& [method, rank] : ranks.items())
            r.ranks[static_cast<std::size_t>(parse_method_id(method))] = rank.get<int>();
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<StudyStore::AnnotationRow> StudyStore::annotations() {
    Stmt q(impl_->db,
           "SELECT session_id, pair_id, width, height, rle, created_at FROM annotations ORDER BY session_id, pair_id");
    std::vector<AnnotationRow> out;
    while (q.step())
        out.push_back({q.text(0), q.text(1),
                       RleMask{static_cast<int>(q.integer(2)), static_cast<int>(q.integer(3)),
                               json::parse(q.text(4)).get<std::vector<std::int64_t>>()},
                       q.text(5)});
    return out;
}

}  // namespace iconsal
