#pragma once

#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "iconsal/core/box.hpp"
#include "iconsal/core/grid.hpp"
#include "iconsal/dataset/dataset.hpp"
#include "iconsal/saliency/saliency_map.hpp"

namespace iconsal {

class EvalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class GtMatching { any_box, single_box };

std::string_view to_string(GtMatching m);
GtMatching parse_gt_matching(std::string_view s);

struct EvalConfig {
    std::vector<double> tau_grid = default_tau_grid();
    std::vector<double> delta_set{0.30, 0.50};
    GtMatching gt_matching = GtMatching::any_box;
    SizeCutoffs cutoffs;
    bool missing_as_miss = false;  // otherwise missing maps are an error
    int workers = 1;

    /// 0.20, 0.21, ..., 0.90.
    static std::vector<double> default_tau_grid();
    void validate() const;
};

MaskGrid binarize(const RealGrid& map, double tau);

/// Tightest box around the largest 8-connected component. Equal-area
/// components are resolved toward the one whose first pixel comes first in
/// row-major order.
std::optional<BoundingBox> largest_component_bbox(const MaskGrid& mask);

/// Predicted box at every grid threshold (ascending grid), computed in one
/// pass with incremental union-find.
std::vector<std::optional<BoundingBox>> boxes_over_grid(const RealGrid& map, const std::vector<double>& tau_grid);

/// Hit test of one instance: max IoU over its ground-truth boxes reaches delta.
bool is_hit(const std::optional<BoundingBox>& pred, const std::vector<BoundingBox>& gts, double delta);

/// Fraction of instances that hit; preds and gts are aligned by index.
double box_acc(const std::vector<std::optional<BoundingBox>>& preds, const std::vector<std::vector<BoundingBox>>& gts,
               double delta);

struct TauSweep {
    double best_acc = 0.0;
    double argmax_tau = 0.0;
    std::size_t argmax_index = 0;
};

/// Maximum over the grid; ties go to the smallest tau.
TauSweep sweep_tau(const std::vector<double>& tau_grid, const std::vector<double>& acc_by_tau);

/// Unit of evaluation: an image-class pair (any-box) or one ground-truth box
/// (single-box).
struct EvalInstance {
    std::string image_id;
    std::string class_label;
    std::vector<BoundingBox> gt;
    SizeBucket size = SizeBucket::L;
};

/// Positive instances under the matching mode; size bucket of an image-class
/// pair is the bucket of its largest box.
std::vector<EvalInstance> eval_instances(const DatasetIndex& index, const EvalConfig& cfg);

struct EvalRow {
    MethodId method{};
    double delta = 0.0;
    double tau = 0.0;  // per-method argmax
    std::size_t n = 0;
    double overall = 0.0;
    std::map<SizeBucket, double> by_size;   // only buckets with instances
    std::map<SizeBucket, std::size_t> n_by_size;
    std::map<std::string, double> by_class;
    std::map<std::string, std::size_t> n_by_class;
    std::vector<double> acc_by_tau;  // overall accuracy at every grid point
};

struct EvalReport {
    std::string dataset;
    std::string config_hash;
    EvalConfig config;
    std::vector<std::string> missing;  // "image|class|method"
    std::vector<EvalRow> rows;         // by delta, then method id

    const EvalRow* find(MethodId m, double delta) const;
};

/// Returns the map for an image-class pair, or nullopt when none exists.
using MapSource =
    std::function<std::optional<RealGrid>(const std::string& image_id, const std::string& class_label, MethodId)>;

EvalReport evaluate(const DatasetIndex& index, const std::vector<MethodId>& methods, const MapSource& maps,
                    const EvalConfig& cfg);

std::string report_csv(const EvalReport& report);

/// Table with one row per method and BoxAcc, S, M, L columns per delta.
std::string report_table(const EvalReport& report, bool show_tau);

}  // namespace iconsal
