#include "iconsal/cli/run_config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "iconsal/backbone/registry.hpp"
#include "iconsal/core/hash.hpp"
#include "iconsal/dataset/dataset.hpp"

namespace iconsal {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

namespace {

std::string num(double v) {
    std::ostringstream s;
    s << std::setprecision(17) << v;
    return s.str();
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> parts;
    boost::split(parts, text, boost::is_any_of(","));
    std::vector<std::string> out;
    for (auto& p : parts) {
        boost::trim(p);
        if (!p.empty()) out.push_back(p);
    }
    return out;
}

bool parse_bool(const std::string& key, std::string v) {
    boost::to_lower(v);
    boost::trim(v);
    if (v == "true" || v == "yes" || v == "1" || v == "on") return true;
    if (v == "false" || v == "no" || v == "0" || v == "off") return false;
    throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

// Typed lookups with the key path in every message.
struct Reader {
    const pt::ptree& tree;
    std::set<std::string> known;

    std::optional<std::string> str(const std::string& key) {
        known.insert(key);
        const auto v = tree.get_optional<std::string>(pt::ptree::path_type(key, '.'));
        if (!v) return std::nullopt;
        return boost::trim_copy(*v);
    }
    template <typename T>
    void number(const std::string& key, T& target) {
        const auto v = str(key);
        if (!v) return;
        try {
            std::size_t used = 0;
            if constexpr (std::is_same_v<T, double>) {
                target = std::stod(*v, &used);
            } else if constexpr (std::is_same_v<T, std::uint64_t>) {
                if (!v->empty() && (*v)[0] == '-') throw std::invalid_argument("negative");
                target = std::stoull(*v, &used);
            } else {
                target = static_cast<T>(std::stoll(*v, &used));
            }
            if (used != v->size()) throw std::invalid_argument("trailing text");
        } catch (const std::exception&) {
            throw ConfigError(key + ": expected a number, got '" + *v + "'");
        }
    }
    void flag(const std::string& key, bool& target) {
        if (const auto v = str(key)) target = parse_bool(key, *v);
    }
    void path(const std::string& key, fs::path& target, const fs::path& base) {
        if (const auto v = str(key)) target = v->empty() ? fs::path() : (base / *v).lexically_normal();
    }
};

}  // namespace

std::string RunConfig::prompt_for(const std::string& class_label) const {
    std::string p = prompt_template;
    const auto at = p.find("{class}");
    if (at != std::string::npos) p.replace(at, 7, class_label);
    return p;
}

void RunConfig::validate() const {
    if (std::find(kAdapters.begin(), kAdapters.end(), adapter) == kAdapters.end())
        throw ConfigError("dataset.adapter: unknown adapter '" + adapter + "'");
    try {
        if (backbone_family(residual_backbone) != BackboneFamily::residual)
            throw ConfigError("backbone.residual: '" + residual_backbone + "' is not a residual backbone");
        if (backbone_family(transformer_backbone) != BackboneFamily::transformer)
            throw ConfigError("backbone.transformer: '" + transformer_backbone + "' is not a transformer backbone");
    } catch (const BackboneError& e) {
        throw ConfigError(std::string("backbone: ") + e.what());
    }
    if (methods.empty()) throw ConfigError("methods.list: no methods selected");
    if (method.top_k < 1) throw ConfigError("methods.top_k must be >= 1");
    if (method.channel_batch < 1) throw ConfigError("methods.channel_batch must be >= 1");
    if (prompt_template.find("{class}") == std::string::npos)
        throw ConfigError("prompt.template must contain {class}");
    if (workers < 1) throw ConfigError("run.workers must be >= 1");
    if (min_tasks < 0 || min_tasks > 14) throw ConfigError("study.min_tasks must lie in 0..14");
    if (mice_iterations < 1) throw ConfigError("study.mice_iterations must be >= 1");
    if (mice_donors < 1) throw ConfigError("study.mice_donors must be >= 1");
    if (study_port < 0 || study_port > 65535) throw ConfigError("study.port out of range");
    try {
        eval.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("eval: ") + e.what());
    }
}

std::string RunConfig::canonical() const {
    std::ostringstream s;
    s << "backbone.residual=" << residual_backbone << "\n";
    s << "backbone.transformer=" << transformer_backbone << "\n";
    s << "methods.list=";
    for (std::size_t i = 0; i < methods.size(); ++i) s << (i ? "," : "") << method_id_string(methods[i]);
    s << "\nmethods.top_k=" << method.top_k << "\n";
    s << "methods.channel_batch=" << method.channel_batch << "\n";
    s << "methods.layer=" << method.layer_override.value_or("") << "\n";
    s << "methods.layercam_taps=" << boost::join(method.layercam_taps, ",") << "\n";
    s << "methods.scorecam_softmax=" << method.scorecam_softmax << "\n";
    s << "methods.legrad_first_layer=" << method.legrad_first_layer << "\n";
    s << "methods.surgery_depth=" << method.surgery_depth << "\n";
    s << "methods.resize_mode=" << to_string(method.resize_mode) << "\n";
    s << "prompt.template=" << prompt_template << "\n";
    s << "run.seed=" << seed << "\n";
    s << "dataset.adapter=" << adapter << "\n";
    s << "dataset.split=" << split << "\n";
    s << "eval.taus=";
    for (std::size_t i = 0; i < eval.tau_grid.size(); ++i) s << (i ? "," : "") << num(eval.tau_grid[i]);
    s << "\neval.deltas=";
    for (std::size_t i = 0; i < eval.delta_set.size(); ++i) s << (i ? "," : "") << num(eval.delta_set[i]);
    s << "\neval.gt_matching=" << to_string(eval.gt_matching) << "\n";
    s << "eval.small_cutoff=" << num(eval.cutoffs.small) << "\n";
    s << "eval.medium_cutoff=" << num(eval.cutoffs.medium) << "\n";
    s << "eval.missing_as_miss=" << eval.missing_as_miss << "\n";
    s << "study.min_tasks=" << min_tasks << "\n";
    s << "study.mice_iterations=" << mice_iterations << "\n";
    s << "study.mice_donors=" << mice_donors << "\n";
    s << "study.w_before_imputation=" << w_before_imputation << "\n";
    return s.str();
}

std::string RunConfig::hash() const { return hex64(fnv1a64(canonical())); }

std::string RunConfig::generation_hash() const {
    // The generation-relevant prefix of the canonical listing.
    const std::string c = canonical();
    return hex64(fnv1a64(c.substr(0, c.find("dataset.adapter="))));
}

RunConfig parse_run_config(const std::string& ini_text, const fs::path& base_dir, const std::string& source) {
    pt::ptree tree;
    try {
        std::istringstream in(ini_text);
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(source + ":" + std::to_string(e.line()) + ": " + e.message());
    }
    RunConfig c;
    Reader r{tree, {}};
    try {
        r.path("dataset.root", c.dataset_root, base_dir);
        if (auto v = r.str("dataset.adapter")) c.adapter = *v;
        if (auto v = r.str("dataset.split")) c.split = *v;

        if (auto v = r.str("backbone.residual")) c.residual_backbone = *v;
        if (auto v = r.str("backbone.transformer")) c.transformer_backbone = *v;

        if (auto v = r.str("methods.list")) {
            c.methods.clear();
            for (const auto& id : split_list(*v)) {
                MethodId m{};
                try {
                    m = parse_method_id(id);
                } catch (const std::exception&) {
                    throw ConfigError("methods.list: unknown method '" + id + "'");
                }
                if (std::find(c.methods.begin(), c.methods.end(), m) == c.methods.end()) c.methods.push_back(m);
            }
            std::sort(c.methods.begin(), c.methods.end());
        }
        r.number("methods.top_k", c.method.top_k);
        r.number("methods.channel_batch", c.method.channel_batch);
        if (auto v = r.str("methods.layer"); v && !v->empty()) c.method.layer_override = *v;
        if (auto v = r.str("methods.layercam_taps")) c.method.layercam_taps = split_list(*v);
        r.flag("methods.scorecam_softmax", c.method.scorecam_softmax);
        r.number("methods.legrad_first_layer", c.method.legrad_first_layer);
        r.number("methods.surgery_depth", c.method.surgery_depth);
        if (auto v = r.str("methods.resize_mode")) {
            try {
                c.method.resize_mode = parse_resize_mode(*v);
            } catch (const std::exception&) {
                throw ConfigError("methods.resize_mode: expected squash or center-crop, got '" + *v + "'");
            }
        }

        if (auto v = r.str("prompt.template")) c.prompt_template = *v;

        if (auto v = r.str("eval.deltas")) {
            c.eval.delta_set.clear();
            for (const auto& d : split_list(*v)) {
                double x = 0;
                try {
                    x = std::stod(d);
                } catch (const std::exception&) {
                    throw ConfigError("eval.deltas: '" + d + "' is not a number");
                }
                c.eval.delta_set.push_back(x);
            }
        }
        double tau_min = 0.20, tau_max = 0.90, tau_step = 0.01;
        const bool custom_grid = tree.get_optional<std::string>("eval.tau_min") ||
                                 tree.get_optional<std::string>("eval.tau_max") ||
                                 tree.get_optional<std::string>("eval.tau_step");
        r.number("eval.tau_min", tau_min);
        r.number("eval.tau_max", tau_max);
        r.number("eval.tau_step", tau_step);
        if (custom_grid) {
            // Integer steps in units of 1e-4 keep the grid free of drift.
            const long lo = std::lround(tau_min * 1e4), hi = std::lround(tau_max * 1e4), st = std::lround(tau_step * 1e4);
            if (st <= 0 || hi < lo) throw ConfigError("eval: need tau_step > 0 and tau_min <= tau_max");
            c.eval.tau_grid.clear();
            for (long k = lo; k <= hi; k += st) c.eval.tau_grid.push_back(static_cast<double>(k) / 1e4);
        }
        if (auto v = r.str("eval.gt_matching")) {
            try {
                c.eval.gt_matching = parse_gt_matching(*v);
            } catch (const std::exception&) {
                throw ConfigError("eval.gt_matching: expected any-box or single-box, got '" + *v + "'");
            }
        }
        r.number("eval.small_cutoff", c.eval.cutoffs.small);
        r.number("eval.medium_cutoff", c.eval.cutoffs.medium);
        r.flag("eval.missing_as_miss", c.eval.missing_as_miss);

        r.path("run.out", c.out, base_dir);
        fs::path maps;
        r.path("run.maps", maps, base_dir);
        if (!maps.empty()) c.maps_dir = maps;
        r.number("run.seed", c.seed);
        r.number("run.workers", c.workers);
        c.eval.workers = c.workers;

        r.path("study.config", c.study_config, base_dir);
        r.path("study.db", c.study_db, base_dir);
        r.number("study.port", c.study_port);
        r.path("study.static", c.study_static, base_dir);
        r.path("study.rankings", c.rankings, base_dir);
        r.path("study.profiles", c.profiles, base_dir);
        r.number("study.min_tasks", c.min_tasks);
        r.number("study.mice_iterations", c.mice_iterations);
        r.number("study.mice_donors", c.mice_donors);
        r.flag("study.w_before_imputation", c.w_before_imputation);
    } catch (const ConfigError& e) {
        throw ConfigError(source + ": " + e.what());
    }
    for (const auto& [section, keys] : tree) {
        if (keys.empty() && !keys.data().empty())
            throw ConfigError(source + ": key '" + section + "' outside any section");
        for (const auto& [key, value] : keys)
            if (!r.known.count(section + "." + key))
                throw ConfigError(source + ": unknown key '" + section + "." + key + "'");
    }
    return c;
}

RunConfig load_run_config(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open config " + file.string());
    std::ostringstream s;
    s << in.rdbuf();
    return parse_run_config(s.str(), file.parent_path(), file.string());
}

}  // namespace iconsal
