#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "iconsal/cli/run_config.hpp"
#include "iconsal/dataset/dataset.hpp"

namespace iconsal::cli {

enum ExitCode { kOk = 0, kPartialFailure = 1, kConfigError = 2 };

struct GenerateResult {
    int written = 0;
    int kept = 0;    // existing files whose sidecar carries the same generation hash
    int failed = 0;
    bool method_fully_failed = false;
};

/// One map per (positive instance, method) under cfg.maps(), plus
/// cfg.out/manifest.json. Existing maps with a matching generation hash are
/// kept, so a rerun only fills gaps.
GenerateResult cmd_generate(const RunConfig& cfg, std::ostream& log);

/// Writes cfg.out/eval/boxacc.{csv,txt} and prints the table.
void cmd_eval(const RunConfig& cfg, bool show_tau, std::ostream& out);

/// Prints totals, positive/negative counts, class and size-bucket shares and
/// writes cfg.out/dataset_stats.json.
void cmd_dataset_stats(const RunConfig& cfg, std::ostream& out);

void cmd_study_analyze(const RunConfig& cfg, std::ostream& out);
void cmd_study_export(const RunConfig& cfg, std::ostream& out);
void cmd_study_prepare(const std::filesystem::path& pairs, const RunConfig& cfg, std::ostream& out);
/// Blocks until the server stops.
int cmd_study_serve(const RunConfig& cfg, std::ostream& out, std::ostream& err);

/// Image file for a dataset record: record paths are relative to the dataset
/// root directory (or to the directory of a canonical JSON file).
std::filesystem::path image_path(const RunConfig& cfg, const ImageRecord& rec);

/// Full command-line entry point; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace iconsal::cli
