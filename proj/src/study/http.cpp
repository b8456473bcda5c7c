#include <fstream>
#include <sstream>

#include "httplib.h"
#include "iconsal/study/service.hpp"
#include "json.hpp"

namespace iconsal {

namespace {

using nlohmann::json;

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
    send_json(res, status, json{{"error", message}});
}

json parse_body(const httplib::Request& req) {
    try {
        return json::parse(req.body);
    } catch (const json::exception&) {
        throw ServiceError(400, "request body is not valid JSON");
    }
}

std::string content_type(const std::filesystem::path& p) {
    const std::string ext = p.extension().string();
    if (ext == ".png") return "image/png";
    if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
    return "application/octet-stream";
}

void send_file(httplib::Response& res, const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ServiceError(404, "asset not found");
    std::ostringstream ss;
    ss << in.rdbuf();
    res.status = 200;
    res.set_content(ss.str(), content_type(p));
}

// Runs a handler, turning service errors into JSON error responses.
template <typename F>
httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
        try {
            f(req, res);
        } catch (const ServiceError& e) {
            send_error(res, e.status(), e.what());
        } catch (const StudyError& e) {
            send_error(res, 400, e.what());
        } catch (const std::exception& e) {
            send_error(res, 500, e.what());
        }
    };
}

std::string get_string(const json& j, const char* key) {
    const auto it = j.find(key);
    if (it == j.end()) return {};
    if (!it->is_string()) throw ServiceError(400, std::string("profile field '") + key + "' must be a string");
    return it->get<std::string>();
}

}  // namespace

void mount_study_routes(httplib::Server& server, StudyService& service) {
    server.Post("/sessions", guarded([&service](const httplib::Request& req, httplib::Response& res) {
        const json body = parse_body(req);
        const auto consent = body.find("consent");
        if (consent == body.end() || !consent->is_boolean() || !consent->get<bool>())
            throw ServiceError(400, "informed consent is required");
        const json profile = body.value("profile", json::object());
        if (!profile.is_object()) throw ServiceError(400, "profile must be an object");
        ParticipantProfile p;
        p.age_band = get_string(profile, "age_band");
        p.gender = get_string(profile, "gender");
        p.education = get_string(profile, "education");
        const std::string expertise = get_string(profile, "expertise");
        try {
            p.expertise = parse_expertise(expertise.empty() ? "basic" : expertise);
        } catch (const StudyError& e) {
            throw ServiceError(400, e.what());
        }
        const std::string id = service.create_session(p, true);
        send_json(res, 201, json{{"session_id", id}, {"total", kStudyPairs}});
    }));

    server.Get(R"(/sessions/([^/]+)/next)", guarded([&service](const httplib::Request& req, httplib::Response& res) {
        const std::string sid = req.matches[1];
        const NextTask t = service.next(sid);
        json body{{"step", std::string(to_string(t.step))}, {"position", t.position}, {"total", kStudyPairs}};
        if (t.pair_index) {
            const auto& pair = service.config().pairs[static_cast<std::size_t>(*t.pair_index)];
            body["pair_id"] = pair.pair_id;
            body["class"] = pair.class_label;
            body["image"] = {{"url", "/pairs/" + pair.pair_id + "/image"},
                             {"width", pair.width},
                             {"height", pair.height}};
        }
        if (t.step == Step::rank) {
            json overlays = json::array();
            for (const auto& o : t.overlays)
                overlays.push_back({{"overlay_id", o.overlay_id},
                                    {"label", std::string(1, o.label)},
                                    {"url", "/sessions/" + sid + "/overlays/" + o.overlay_id}});
            body["overlays"] = overlays;
        }
        send_json(res, 200, body);
    }));

    server.Post(R"(/sessions/([^/]+)/pairs/([^/]+)/annotation)",
                guarded([&service](const httplib::Request& req, httplib::Response& res) {
                    const json body = parse_body(req);
                    RleMask mask;
                    try {
                        mask = RleMask{body.at("width").get<int>(), body.at("height").get<int>(),
                                       body.at("rle").get<std::vector<std::int64_t>>()};
                    } catch (const json::exception&) {
                        throw ServiceError(400, "mask needs integer width, height and an rle array");
                    }
                    service.submit_annotation(req.matches[1], req.matches[2], mask);
                    send_json(res, 201, json{{"next", std::string(to_string(service.next(req.matches[1]).step))}});
                }));

    server.Post(R"(/sessions/([^/]+)/pairs/([^/]+)/ranking)",
                guarded([&service](const httplib::Request& req, httplib::Response& res) {
                    const json body = parse_body(req);
                    const auto it = body.find("ranks");
                    if (it == body.end() || !it->is_object())
                        throw ServiceError(400, "ranks must be an object of overlay_id -> rank");
                    std::map<std::string, int> ranks;
                    for (const auto& [k, v] : it->items()) {
                        if (!v.is_number_integer()) throw ServiceError(400, "rank for '" + k + "' is not an integer");
                        ranks[k] = v.get<int>();
                    }
                    service.submit_ranking(req.matches[1], req.matches[2], ranks);
                    send_json(res, 201, json{{"next", std::string(to_string(service.next(req.matches[1]).step))}});
                }));

    server.Get(R"(/sessions/([^/]+)/overlays/([0-9a-f]+))",
               guarded([&service](const httplib::Request& req, httplib::Response& res) {
                   const auto file = service.overlay_file(req.matches[1], req.matches[2]);
                   if (!file) throw ServiceError(404, "unknown overlay");
                   send_file(res, *file);
               }));

    server.Get(R"(/pairs/([^/]+)/image)", guarded([&service](const httplib::Request& req, httplib::Response& res) {
        const int idx = service.pair_index(req.matches[1]);
        if (idx < 0) throw ServiceError(404, "unknown pair");
        send_file(res, service.config().pairs[static_cast<std::size_t>(idx)].image);
    }));

    server.Get("/export", guarded([&service](const httplib::Request&, httplib::Response& res) {
        const StudyExport ex = export_study(service.store());
        send_json(res, 200,
                  json{{"rankings_csv", ex.rankings_csv},
                       {"profiles_csv", ex.profiles_csv},
                       {"masks_jsonl", ex.masks_jsonl}});
    }));
    server.Get("/export/rankings.csv", guarded([&service](const httplib::Request&, httplib::Response& res) {
        res.set_content(export_study(service.store()).rankings_csv, "text/csv");
    }));
    server.Get("/export/profiles.csv", guarded([&service](const httplib::Request&, httplib::Response& res) {
        res.set_content(export_study(service.store()).profiles_csv, "text/csv");
    }));
    server.Get("/export/masks.jsonl", guarded([&service](const httplib::Request&, httplib::Response& res) {
        res.set_content(export_study(service.store()).masks_jsonl, "application/x-ndjson");
    }));
}

}  // namespace iconsal
