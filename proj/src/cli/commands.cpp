#include "iconsal/cli/commands.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <iomanip>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "iconsal/backbone/registry.hpp"
#include "iconsal/eval/localization.hpp"
#include "iconsal/io/image_file.hpp"
#include "iconsal/io/map_file.hpp"
#include "iconsal/saliency/methods.hpp"
#include "iconsal/study/analysis.hpp"
#include "iconsal/study/service.hpp"
#include "json.hpp"
// after Eigen: <resolv.h> defines a _res macro
#include "httplib.h"

namespace iconsal::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string fixed(double v, int digits) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

void require_path(const fs::path& p, const std::string& key) {
    if (p.empty()) throw ConfigError(key + " is not set");
    if (!fs::exists(p)) throw ConfigError(key + ": " + p.string() + " does not exist");
}

DatasetIndex load_configured_dataset(const RunConfig& cfg) {
    require_path(cfg.dataset_root, "dataset.root");
    try {
        return load_dataset(cfg.dataset_root, cfg.adapter, cfg.split);
    } catch (const DatasetError& e) {
        throw ConfigError(std::string("dataset: ") + e.what());
    }
}

bool transformer_method(MethodId m) { return m == MethodId::legrad || m == MethodId::clip_surgery; }

struct ManifestEntry {
    std::string image_id;
    std::string class_label;
    MethodId method{};
    std::string status;  // written | kept | failed
    std::string detail;
};

}  // namespace

fs::path image_path(const RunConfig& cfg, const ImageRecord& rec) {
    const fs::path p(rec.path.empty() ? rec.id : rec.path);
    if (p.is_absolute()) return p;
    const fs::path base = fs::is_directory(cfg.dataset_root) ? cfg.dataset_root : cfg.dataset_root.parent_path();
    return base / p;
}

GenerateResult cmd_generate(const RunConfig& cfg, std::ostream& log) {
    cfg.validate();
    const DatasetIndex index = load_configured_dataset(cfg);
    const fs::path maps = cfg.maps();
    fs::create_directories(maps);
    const std::string gen_hash = cfg.generation_hash();

    // Work items: positive images with their classes.
    std::map<std::string, std::vector<std::string>> classes_by_image;
    for (const auto& inst : index.instances) classes_by_image[inst.image_id].push_back(inst.class_label);
    std::vector<std::pair<const ImageRecord*, std::vector<std::string>>> tasks;
    for (const auto& [id, classes] : classes_by_image) tasks.emplace_back(index.find_image(id), classes);

    std::vector<ManifestEntry> entries;
    std::mutex mu;
    std::atomic<std::size_t> next{0};
    auto record = [&](ManifestEntry e) {
        std::lock_guard g(mu);
        if (e.status == "failed")
            log << "generate: " << e.image_id << " / " << e.class_label << " / " << method_id_string(e.method)
                << ": " << e.detail << "\n";
        entries.push_back(std::move(e));
    };

    auto worker = [&] {
        // Backbones count passes and are not shared between threads.
        auto residual = make_backbone(cfg.residual_backbone, cfg.seed);
        auto transformer = make_backbone(cfg.transformer_backbone, cfg.seed);
        const MethodRegistry all = default_registry(*residual, *transformer);
        for (std::size_t t = next++; t < tasks.size(); t = next++) {
            const ImageRecord& rec = *tasks[t].first;
            std::optional<Image> image;
            std::string load_error;
            for (const auto& cls : tasks[t].second) {
                MethodRegistry todo;
                for (MethodId m : cfg.methods) {
                    const fs::path file = maps / map_file_name(rec.id, cls, m);
                    bool keep = false;
                    if (fs::exists(file) && fs::exists(meta_path(file))) {
                        try {
                            keep = read_meta(meta_path(file)).at("config_hash") == gen_hash;
                        } catch (const std::exception&) {
                        }
                    }
                    if (keep) {
                        record({rec.id, cls, m, "kept", ""});
                        continue;
                    }
                    for (const auto& entry : all.entries)
                        if (entry.first == m) todo.add(entry.first, entry.second);
                }
                if (todo.size() == 0) continue;
                if (!image && load_error.empty()) {
                    try {
                        image = load_image(image_path(cfg, rec));
                        if (image->width != rec.width || image->height != rec.height)
                            throw ImageFileError("decoded size " + std::to_string(image->width) + "x" +
                                                 std::to_string(image->height) + " differs from annotated " +
                                                 std::to_string(rec.width) + "x" + std::to_string(rec.height));
                    } catch (const std::exception& e) {
                        image.reset();
                        load_error = e.what();
                    }
                }
                if (!image) {
                    for (const auto& entry : todo.entries) record({rec.id, cls, entry.first, "failed", load_error});
                    continue;
                }
                const GeneratedMaps out = generate_all(*image, rec.id, cfg.prompt_for(cls), todo, cfg.method);
                for (const auto& map : out.maps) {
                    try {
                        save_map(maps, map, cls,
                                 transformer_method(map.method) ? cfg.transformer_backbone : cfg.residual_backbone,
                                 gen_hash);
                        record({rec.id, cls, map.method, "written", ""});
                    } catch (const std::exception& e) {
                        record({rec.id, cls, map.method, "failed", e.what()});
                    }
                }
                for (const auto& f : out.failures) record({rec.id, cls, f.method, "failed", f.message});
            }
        }
    };
    const int n = std::max(1, std::min<int>(cfg.workers, static_cast<int>(tasks.size())));
    std::vector<std::thread> pool;
    for (int i = 1; i < n; ++i) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    std::sort(entries.begin(), entries.end(), [](const ManifestEntry& a, const ManifestEntry& b) {
        return std::tie(a.image_id, a.class_label, a.method) < std::tie(b.image_id, b.class_label, b.method);
    });
    GenerateResult result;
    std::map<MethodId, std::pair<int, int>> per_method;  // (ok, failed)
    json listed = json::array();
    for (const auto& e : entries) {
        json j{{"image_id", e.image_id},
               {"class", e.class_label},
               {"method", std::string(method_id_string(e.method))},
               {"file", map_file_name(e.image_id, e.class_label, e.method)},
               {"status", e.status}};
        if (!e.detail.empty()) j["error"] = e.detail;
        listed.push_back(j);
        auto& pm = per_method[e.method];
        if (e.status == "written") ++result.written, ++pm.first;
        if (e.status == "kept") ++result.kept, ++pm.first;
        if (e.status == "failed") ++result.failed, ++pm.second;
    }
    for (const auto& [m, c] : per_method)
        if (c.first == 0 && c.second > 0) {
            result.method_fully_failed = true;
            log << "generate: " << method_id_string(m) << " failed on every instance\n";
        }
    json manifest{{"config_hash", cfg.hash()},
                  {"generation_hash", gen_hash},
                  {"created_at", utc_now()},
                  {"dataset", index.name},
                  {"split", index.split},
                  {"prompt_template", cfg.prompt_template},
                  {"backbones", {{"residual", cfg.residual_backbone}, {"transformer", cfg.transformer_backbone}}},
                  {"maps_dir", maps.string()},
                  {"counts", {{"written", result.written}, {"kept", result.kept}, {"failed", result.failed}}},
                  {"entries", listed}};
    fs::create_directories(cfg.out);
    write_text_file(cfg.out / "manifest.json", manifest.dump(2) + "\n");
    log << "generate: " << result.written << " written, " << result.kept << " kept, " << result.failed
        << " failed -> " << maps.string() << "\n";
    return result;
}

void cmd_eval(const RunConfig& cfg, bool show_tau, std::ostream& out) {
    cfg.validate();
    const DatasetIndex index = load_configured_dataset(cfg);
    const fs::path maps = cfg.maps();
    const MapSource source = [&maps](const std::string& image_id, const std::string& cls,
                                     MethodId m) -> std::optional<RealGrid> {
        const fs::path file = maps / map_file_name(image_id, cls, m);
        if (!fs::exists(file)) return std::nullopt;
        return read_npy(file);
    };
    EvalReport report = evaluate(index, cfg.methods, source, cfg.eval);
    report.config_hash = cfg.hash();
    const std::string table = "prompt: " + cfg.prompt_template + "\n" + report_table(report, show_tau);
    const fs::path dir = cfg.out / "eval";
    fs::create_directories(dir);
    write_text_file(dir / "boxacc.csv", "# config_hash=" + report.config_hash + "\n" + report_csv(report));
    write_text_file(dir / "boxacc.txt", table);
    out << table;
    if (!report.missing.empty()) out << "missing maps counted as misses: " << report.missing.size() << "\n";
}

void cmd_dataset_stats(const RunConfig& cfg, std::ostream& out) {
    cfg.validate();
    const DatasetIndex index = load_configured_dataset(cfg);
    const std::vector<ClassShare> classes = index.box_count() ? class_stats(index) : std::vector<ClassShare>{};
    const SizeDistribution sizes = size_distribution(index, cfg.eval.cutoffs);

    json j{{"config_hash", cfg.hash()},
           {"dataset", index.name},
           {"split", index.split},
           {"images", index.images.size()},
           {"positive_images", index.positive_images()},
           {"negative_images", index.negative_images()},
           {"instances", index.instances.size()},
           {"boxes", index.box_count()},
           {"size_cutoffs", {{"small", cfg.eval.cutoffs.small}, {"medium", cfg.eval.cutoffs.medium}}}};
    json cj = json::array();
    for (const auto& c : classes)
        cj.push_back({{"class", c.class_label},
                      {"boxes", c.boxes},
                      {"box_share", c.box_share},
                      {"images", c.images},
                      {"image_share", c.image_share}});
    j["classes"] = cj;
    j["sizes"] = {{"S", {{"boxes", sizes.small}, {"share", sizes.share(SizeBucket::S)}}},
                  {"M", {{"boxes", sizes.medium}, {"share", sizes.share(SizeBucket::M)}}},
                  {"L", {{"boxes", sizes.large}, {"share", sizes.share(SizeBucket::L)}}}};
    fs::create_directories(cfg.out);
    write_text_file(cfg.out / "dataset_stats.json", j.dump(2) + "\n");

    out << "dataset: " << (index.name.empty() ? "-" : index.name) << " (" << index.split
        << ")  config: " << cfg.hash() << "\n";
    out << "images " << index.images.size() << "  positive " << index.positive_images() << "  negative "
        << index.negative_images() << "  instances " << index.instances.size() << "  boxes " << index.box_count()
        << "  classes " << index.class_list.size() << "\n";
    out << std::left << std::setw(24) << "class" << std::right << std::setw(8) << "boxes" << std::setw(10) << "share"
        << std::setw(8) << "images" << std::setw(10) << "share" << "\n";
    for (const auto& c : classes)
        out << std::left << std::setw(24) << c.class_label << std::right << std::setw(8) << c.boxes << std::setw(10)
            << fixed(c.box_share, 4) << std::setw(8) << c.images << std::setw(10) << fixed(c.image_share, 4) << "\n";
    out << "box sizes (S <= " << cfg.eval.cutoffs.small << " < M <= " << cfg.eval.cutoffs.medium << " < L):  S "
        << sizes.small << " (" << fixed(sizes.share(SizeBucket::S), 4) << ")  M " << sizes.medium << " ("
        << fixed(sizes.share(SizeBucket::M), 4) << ")  L " << sizes.large << " ("
        << fixed(sizes.share(SizeBucket::L), 4) << ")\n";
}

void cmd_study_analyze(const RunConfig& cfg, std::ostream& out) {
    cfg.validate();
    require_path(cfg.rankings, "study.rankings");
    const auto records = parse_rankings_csv(read_text_file(cfg.rankings), cfg.rankings.string());
    std::vector<ParticipantProfile> profiles;
    if (!cfg.profiles.empty()) {
        require_path(cfg.profiles, "study.profiles");
        profiles = parse_profiles_csv(read_text_file(cfg.profiles), cfg.profiles.string());
    }
    AnalysisConfig ac;
    ac.min_tasks = cfg.min_tasks;
    ac.mice.iterations = cfg.mice_iterations;
    ac.mice.donors = cfg.mice_donors;
    ac.mice.seed = cfg.seed;
    ac.w_before_imputation = cfg.w_before_imputation;
    AnalysisReport report = analyze(records, profiles, ac);
    report.config_hash = cfg.hash();
    write_report(report, cfg.out);
    for (const auto& w : report.warnings) out << "warning: " << w << "\n";
    out << "participants " << report.participants_kept << "/" << report.participants_in << " included, records "
        << report.records_kept << "/" << report.records_in << ", imputed cells " << report.imputed_cells << "\n";
    out << "pair                      W      m  n\n";
    for (const auto& a : report.agreement)
        out << std::left << std::setw(24) << a.pair_id << std::right << std::setw(7) << fixed(a.w, 4)
            << std::setw(5) << a.m << std::setw(3) << a.n << "\n";
    out << "mean rank (1 = best):";
    for (const auto& s : report.summary.overall) out << "  " << method_id_string(s.method) << " " << fixed(s.mean_rank, 3);
    out << "\nreport written to " << cfg.out.string() << "\n";
}

void cmd_study_export(const RunConfig& cfg, std::ostream& out) {
    require_path(cfg.study_db, "study.db");
    StudyStore store(cfg.study_db);
    const StudyExport ex = export_study(store);
    write_export(ex, cfg.out);
    out << "exported " << std::count(ex.profiles_csv.begin(), ex.profiles_csv.end(), '\n') - 1 << " sessions to "
        << cfg.out.string() << "\n";
}

void cmd_study_prepare(const fs::path& pairs, const RunConfig& cfg, std::ostream& out) {
    require_path(pairs, "--pairs");
    require_path(cfg.maps(), "run.maps");
    const StudyConfig study = prepare_study(pairs, cfg.maps(), cfg.out);
    out << "rendered " << study.pairs.size() * kRankedMethods << " overlays; study config "
        << (cfg.out / "study.json").string() << "\n";
}

int cmd_study_serve(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    require_path(cfg.study_config, "study.config");
    StudyService service(load_study_config(cfg.study_config), cfg.study_db);
    httplib::Server server;
    mount_study_routes(server, service);
    if (!cfg.study_static.empty()) {
        require_path(cfg.study_static, "study.static");
        server.set_mount_point("/", cfg.study_static.string());
    }
    if (!server.bind_to_port("0.0.0.0", cfg.study_port)) {
        err << "error: cannot listen on port " << cfg.study_port << "\n";
        return kConfigError;
    }
    out << "serving study '" << service.config().title << "' on port " << cfg.study_port << " (db "
        << cfg.study_db.string() << ")" << std::endl;
    return server.listen_after_bind() ? kOk : kPartialFailure;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Saliency benchmark toolkit: map generation, localization evaluation, dataset statistics and the "
                 "ranking study."};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    int workers = 0;
    bool show_tau = false;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    app.add_option("--config", config_path, "run configuration (INI); for 'study serve' also a study.json");
    app.add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);
    app.add_flag("--show-tau", show_tau, "print the argmax threshold next to each BoxAcc cell");
    app.add_option("--seed", seed, "seed for weight synthesis and imputation");
    app.add_option("--out", out_dir, "output directory");

    auto* generate = app.add_subcommand("generate", "generate saliency maps for every positive instance");
    auto* eval = app.add_subcommand("eval", "score persisted maps with BoxAcc");
    auto* stats = app.add_subcommand("dataset-stats", "dataset totals, class and size-bucket shares");
    auto* study = app.add_subcommand("study", "ranking study");
    study->require_subcommand(1);
    study->fallthrough();
    auto* serve = study->add_subcommand("serve", "run the study service");
    int port = -1;
    std::string db, static_dir;
    serve->add_option("--port", port, "TCP port");
    serve->add_option("--db", db, "SQLite database file");
    serve->add_option("--static", static_dir, "directory served at / (annotation UI bundle)");
    auto* analyze_cmd = study->add_subcommand("analyze", "inclusion filter, MICE, Kendall's W and rank summaries");
    std::string rankings, profiles;
    analyze_cmd->add_option("--rankings", rankings, "rankings CSV");
    analyze_cmd->add_option("--profiles", profiles, "profiles CSV");
    auto* export_cmd = study->add_subcommand("export", "export rankings, profiles and masks from the database");
    export_cmd->add_option("--db", db, "SQLite database file");
    auto* prepare = study->add_subcommand("prepare", "render overlays and write study.json");
    std::string pairs;
    prepare->add_option("--pairs", pairs, "pairs JSON")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        RunConfig cfg;
        const bool study_json = serve->parsed() && fs::path(config_path).extension() == ".json";
        if (!config_path.empty() && !study_json) cfg = load_run_config(config_path);
        if (study_json) cfg.study_config = config_path;
        if (workers > 0) {
            cfg.workers = workers;
            cfg.eval.workers = workers;
        }
        if (seed) cfg.seed = *seed;
        if (!out_dir.empty()) cfg.out = out_dir;
        if (port >= 0) cfg.study_port = port;
        if (!db.empty()) cfg.study_db = db;
        if (!static_dir.empty()) cfg.study_static = static_dir;
        if (!rankings.empty()) cfg.rankings = rankings;
        if (!profiles.empty()) cfg.profiles = profiles;

        if (generate->parsed()) {
            const GenerateResult r = cmd_generate(cfg, err);
            return r.method_fully_failed ? kPartialFailure : kOk;
        }
        if (eval->parsed()) cmd_eval(cfg, show_tau, out);
        if (stats->parsed()) cmd_dataset_stats(cfg, out);
        if (analyze_cmd->parsed()) cmd_study_analyze(cfg, out);
        if (export_cmd->parsed()) cmd_study_export(cfg, out);
        if (prepare->parsed()) cmd_study_prepare(pairs, cfg, out);
        if (serve->parsed()) return cmd_study_serve(cfg, out, err);
        return kOk;
    } catch (const ConfigError& e) {
        err << "configuration error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kPartialFailure;
    }
}

}  // namespace iconsal::cli
