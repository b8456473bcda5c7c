#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "iconsal/eval/localization.hpp"
#include "iconsal/saliency/saliency_map.hpp"

namespace iconsal {

/// Bad or inconsistent configuration; the CLI exits with status 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Key-value run configuration (INI). Sections and keys:
///
///   [dataset]  root, adapter (canonical-json | iconart-voc | artdl), split
///   [backbone] residual (RN50x16), transformer (ViT-B/32)
///   [methods]  list (comma-separated ids, default all seven), top_k,
///              channel_batch, layer, layercam_taps, scorecam_softmax,
///              legrad_first_layer, surgery_depth, resize_mode
///   [prompt]   template (default "a painting of a {class}")
///   [eval]     deltas, tau_min, tau_max, tau_step, gt_matching,
///              small_cutoff, medium_cutoff, missing_as_miss
///   [run]      out, maps, seed, workers
///   [study]    config, db, port, static, rankings, profiles, min_tasks,
///              mice_iterations, mice_donors, w_before_imputation
///
/// Relative paths resolve against the config file's directory.
struct RunConfig {
    std::filesystem::path dataset_root;
    std::string adapter = "canonical-json";
    std::string split = "test";

    std::string residual_backbone = "RN50x16";
    std::string transformer_backbone = "ViT-B/32";

    std::vector<MethodId> methods{kAllMethods.begin(), kAllMethods.end()};
    MethodConfig method;

    std::string prompt_template = "a painting of a {class}";

    EvalConfig eval;

    std::filesystem::path out = "out";
    std::optional<std::filesystem::path> maps_dir;  // default out/maps
    std::uint64_t seed = 0;
    int workers = 1;

    std::filesystem::path study_config;
    std::filesystem::path study_db = "study.sqlite";
    int study_port = 8080;
    std::filesystem::path study_static;
    std::filesystem::path rankings;
    std::filesystem::path profiles;
    int min_tasks = 4;
    int mice_iterations = 20;
    int mice_donors = 5;
    bool w_before_imputation = false;

    std::filesystem::path maps() const { return maps_dir ? *maps_dir : out / "maps"; }
    std::string prompt_for(const std::string& class_label) const;

    void validate() const;

    /// FNV-1a 64 over the canonical key=value listing of every setting that
    /// can change a result (paths, ports and worker counts excluded).
    std::string hash() const;
    /// Same, restricted to what changes a saliency map.
    std::string generation_hash() const;
    /// The canonical listing itself, one key=value per line.
    std::string canonical() const;
};

RunConfig parse_run_config(const std::string& ini_text, const std::filesystem::path& base_dir,
                           const std::string& source = "<config>");
RunConfig load_run_config(const std::filesystem::path& file);

}  // namespace iconsal
