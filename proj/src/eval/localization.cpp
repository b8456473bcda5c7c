#include "iconsal/eval/localization.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <thread>

namespace iconsal {

std::string_view to_string(GtMatching m) { return m == GtMatching::any_box ? "any-box" : "single-box"; }

GtMatching parse_gt_matching(std::string_view s) {
    if (s == "any-box") return GtMatching::any_box;
    if (s == "single-box") return GtMatching::single_box;
    throw EvalError("gt_matching must be any-box or single-box, got '" + std::string(s) + "'");
}

std::vector<double> EvalConfig::default_tau_grid() {
    std::vector<double> grid;
    for (int i = 20; i <= 90; ++i) grid.push_back(i / 100.0);
    return grid;
}

void EvalConfig::validate() const {
    if (tau_grid.empty()) throw EvalError("tau grid is empty");
    for (std::size_t i = 0; i < tau_grid.size(); ++i) {
        if (!(tau_grid[i] >= 0.2 - 1e-12 && tau_grid[i] <= 0.9 + 1e-12))
            throw EvalError("tau grid values must lie in [0.2, 0.9]");
        if (i > 0 && !(tau_grid[i] > tau_grid[i - 1])) throw EvalError("tau grid must be strictly increasing");
    }
    if (delta_set.empty()) throw EvalError("delta set is empty");
    for (double d : delta_set)
        if (!(d > 0.0 && d <= 1.0)) throw EvalError("delta values must lie in (0, 1]");
    if (!(cutoffs.small > 0.0 && cutoffs.small < cutoffs.medium && cutoffs.medium < 1.0))
        throw EvalError("size cutoffs must satisfy 0 < small < medium < 1");
    if (workers < 1) throw EvalError("workers must be at least 1");
}

MaskGrid binarize(const RealGrid& map, double tau) {
    MaskGrid mask(map.height(), map.width(), 0);
    for (std::size_t i = 0; i < map.size(); ++i) mask.storage()[i] = map.storage()[i] >= tau ? 1 : 0;
    return mask;
}

std::optional<BoundingBox> largest_component_bbox(const MaskGrid& mask) {
    const int h = mask.height(), w = mask.width();
    std::vector<char> seen(mask.size(), 0);
    std::vector<int> stack;
    long long best_area = 0;
    BoundingBox best;
    for (int y0 = 0; y0 < h; ++y0)
        for (int x0 = 0; x0 < w; ++x0) {
            const std::size_t start = static_cast<std::size_t>(y0) * w + x0;
            if (!mask.storage()[start] || seen[start]) continue;
            long long area = 0;
            BoundingBox b{x0, y0, x0 + 1, y0 + 1};
            seen[start] = 1;
            stack.assign(1, static_cast<int>(start));
            while (!stack.empty()) {
                const int p = stack.back();
                stack.pop_back();
                const int y = p / w, x = p % w;
                ++area;
                b.x_min = std::min(b.x_min, x);
                b.y_min = std::min(b.y_min, y);
                b.x_max = std::max(b.x_max, x + 1);
                b.y_max = std::max(b.y_max, y + 1);
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int ny = y + dy, nx = x + dx;
                        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                        const std::size_t q = static_cast<std::size_t>(ny) * w + nx;
                        if (mask.storage()[q] && !seen[q]) {
                            seen[q] = 1;
                            stack.push_back(static_cast<int>(q));
                        }
                    }
            }
            if (area > best_area) {
                best_area = area;
                best = b;
            }
        }
    if (best_area == 0) return std::nullopt;
    return best;
}

namespace {

// Union-find over pixels with per-root area, first pixel and extent.
struct Components {
    std::vector<int> parent;
    std::vector<int> area, first, x0, y0, x1, y1;
    int width;

    explicit Components(std::size_t n, int w)
        : parent(n, -1), area(n, 0), first(n, 0), x0(n), y0(n), x1(n), y1(n), width(w) {}

    bool active(int p) const { return parent[static_cast<std::size_t>(p)] >= 0; }

    int find(int p) {
        int r = p;
        while (parent[static_cast<std::size_t>(r)] != r) r = parent[static_cast<std::size_t>(r)];
        while (parent[static_cast<std::size_t>(p)] != r) {
            const int next = parent[static_cast<std::size_t>(p)];
            parent[static_cast<std::size_t>(p)] = r;
            p = next;
        }
        return r;
    }

    void add(int p) {
        const auto i = static_cast<std::size_t>(p);
        parent[i] = p;
        area[i] = 1;
        first[i] = p;
        x0[i] = x1[i] = p % width;
        y0[i] = y1[i] = p / width;
    }

    void unite(int a, int b) {
        a = find(a);
        b = find(b);
        if (a == b) return;
        if (area[static_cast<std::size_t>(a)] < area[static_cast<std::size_t>(b)]) std::swap(a, b);
        const auto ia = static_cast<std::size_t>(a), ib = static_cast<std::size_t>(b);
        parent[ib] = a;
        area[ia] += area[ib];
        first[ia] = std::min(first[ia], first[ib]);
        x0[ia] = std::min(x0[ia], x0[ib]);
        y0[ia] = std::min(y0[ia], y0[ib]);
        x1[ia] = std::max(x1[ia], x1[ib]);
        y1[ia] = std::max(y1[ia], y1[ib]);
    }

    bool better(int a, int b) const {
        const auto ia = static_cast<std::size_t>(a), ib = static_cast<std::size_t>(b);
        return area[ia] > area[ib] || (area[ia] == area[ib] && first[ia] < first[ib]);
    }

    BoundingBox box(int r) const {
        const auto i = static_cast<std::size_t>(r);
        return {x0[i], y0[i], x1[i] + 1, y1[i] + 1};
    }
};

}  // namespace

std::vector<std::optional<BoundingBox>> boxes_over_grid(const RealGrid& map, const std::vector<double>& tau_grid) {
    const int h = map.height(), w = map.width();
    const std::size_t n = map.size();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    const auto& v = map.storage();
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return v[static_cast<std::size_t>(a)] > v[static_cast<std::size_t>(b)];
    });

    Components cc(n, w);
    std::vector<std::optional<BoundingBox>> out(tau_grid.size());
    std::size_t next = 0;
    int best = -1;
    for (std::size_t t = tau_grid.size(); t-- > 0;) {
        const double tau = tau_grid[t];
        while (next < n && v[static_cast<std::size_t>(order[next])] >= tau) {
            const int p = order[next++];
            cc.add(p);
            const int y = p / w, x = p % w;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int ny = y + dy, nx = x + dx;
                    if ((dy == 0 && dx == 0) || ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                    const int q = ny * w + nx;
                    if (cc.active(q)) cc.unite(p, q);
                }
            // Only the component holding p changed, so it is the sole challenger.
            const int r = cc.find(p);
            if (best < 0) {
                best = r;
            } else {
                best = cc.find(best);
                if (r != best && cc.better(r, best)) best = r;
            }
        }
        if (best >= 0) out[t] = cc.box(cc.find(best));
    }
    return out;
}

bool is_hit(const std::optional<BoundingBox>& pred, const std::vector<BoundingBox>& gts, double delta) {
    if (!pred) return false;
    double best = 0.0;
    for (const auto& g : gts) best = std::max(best, iou(*pred, g));
    return best >= delta;
}

double box_acc(const std::vector<std::optional<BoundingBox>>& preds, const std::vector<std::vector<BoundingBox>>& gts,
               double delta) {
    if (preds.size() != gts.size()) throw EvalError("predictions and ground truth differ in length");
    if (gts.empty()) throw EvalError("BoxAcc is undefined for zero instances");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) hits += is_hit(preds[i], gts[i], delta) ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(gts.size());
}

TauSweep sweep_tau(const std::vector<double>& tau_grid, const std::vector<double>& acc_by_tau) {
    if (tau_grid.empty() || tau_grid.size() != acc_by_tau.size())
        throw EvalError("tau sweep needs one accuracy per grid point");
    TauSweep s{acc_by_tau[0], tau_grid[0], 0};
    for (std::size_t i = 1; i < tau_grid.size(); ++i)
        if (acc_by_tau[i] > s.best_acc) s = {acc_by_tau[i], tau_grid[i], i};
    return s;
}

std::vector<EvalInstance> eval_instances(const DatasetIndex& index, const EvalConfig& cfg) {
    std::vector<EvalInstance> out;
    for (const auto& inst : index.instances) {
        const ImageRecord* img = index.find_image(inst.image_id);
        if (!img) throw EvalError("instance references unknown image '" + inst.image_id + "'");
        if (cfg.gt_matching == GtMatching::any_box) {
            EvalInstance e{inst.image_id, inst.class_label, {}, SizeBucket::S};
            long long largest = -1;
            for (const auto& b : inst.boxes) {
                e.gt.push_back(b.box);
                if (b.box.area() > largest) {
                    largest = b.box.area();
                    e.size = size_bucket(b.box, img->width, img->height, cfg.cutoffs);
                }
            }
            out.push_back(std::move(e));
        } else {
            for (const auto& b : inst.boxes)
                out.push_back({inst.image_id, inst.class_label, {b.box},
                               size_bucket(b.box, img->width, img->height, cfg.cutoffs)});
        }
    }
    return out;
}

const EvalRow* EvalReport::find(MethodId m, double delta) const {
    for (const auto& r : rows)
        if (r.method == m && std::abs(r.delta - delta) < 1e-12) return &r;
    return nullptr;
}

namespace {

// Hit counts for one method, indexed [delta][tau].
struct Tally {
    std::vector<std::vector<std::size_t>> overall;
    std::map<SizeBucket, std::vector<std::vector<std::size_t>>> size;
    std::map<std::string, std::vector<std::vector<std::size_t>>> cls;
    std::vector<std::string> missing;

    Tally() = default;
    Tally(std::size_t deltas, std::size_t taus) : overall(deltas, std::vector<std::size_t>(taus, 0)) {}

    std::vector<std::vector<std::size_t>>& slot(std::vector<std::vector<std::size_t>>& t) {
        if (t.empty()) t = std::vector<std::vector<std::size_t>>(overall.size(), std::vector<std::size_t>(overall[0].size(), 0));
        return t;
    }

    void merge(Tally& o) {
        auto add = [](auto& into, const auto& from) {
            for (std::size_t d = 0; d < from.size(); ++d)
                for (std::size_t t = 0; t < from[d].size(); ++t) into[d][t] += from[d][t];
        };
        add(overall, o.overall);
        for (auto& [k, v] : o.size) add(slot(size[k]), v);
        for (auto& [k, v] : o.cls) add(slot(cls[k]), v);
        missing.insert(missing.end(), o.missing.begin(), o.missing.end());
    }
};

void tally_range(const std::vector<EvalInstance>& instances, std::size_t begin, std::size_t end, MethodId method,
                 const DatasetIndex& index, const MapSource& maps, const EvalConfig& cfg, Tally& tally) {
    const std::size_t taus = cfg.tau_grid.size();
    // Consecutive instances often share an image-class map (single-box mode).
    std::string cached_key;
    std::optional<std::vector<std::optional<BoundingBox>>> cached;
    for (std::size_t i = begin; i < end; ++i) {
        const auto& inst = instances[i];
        const std::string key = inst.image_id + "|" + inst.class_label;
        if (key != cached_key) {
            cached_key = key;
            cached.reset();
            auto map = maps(inst.image_id, inst.class_label, method);
            if (map) {
                const ImageRecord* img = index.find_image(inst.image_id);
                if (map->width() != img->width || map->height() != img->height)
                    throw EvalError("map for " + key + "|" + std::string(method_id_string(method)) + " is " +
                                    std::to_string(map->width()) + "x" + std::to_string(map->height()) +
                                    ", image is " + std::to_string(img->width) + "x" + std::to_string(img->height));
                cached = boxes_over_grid(*map, cfg.tau_grid);
            }
        }
        if (!cached) {
            if (tally.missing.empty() || tally.missing.back() != key + "|" + std::string(method_id_string(method)))
                tally.missing.push_back(key + "|" + std::string(method_id_string(method)));
            continue;
        }
        auto& by_size = tally.slot(tally.size[inst.size]);
        auto& by_cls = tally.slot(tally.cls[inst.class_label]);
        for (std::size_t d = 0; d < cfg.delta_set.size(); ++d)
            for (std::size_t t = 0; t < taus; ++t)
                if (is_hit((*cached)[t], inst.gt, cfg.delta_set[d])) {
                    ++tally.overall[d][t];
                    ++by_size[d][t];
                    ++by_cls[d][t];
                }
    }
}

}  // namespace

EvalReport evaluate(const DatasetIndex& index, const std::vector<MethodId>& methods, const MapSource& maps,
                    const EvalConfig& cfg) {
    cfg.validate();
    const auto instances = eval_instances(index, cfg);
    if (instances.empty()) throw EvalError("dataset has no positive instances");
    const std::size_t taus = cfg.tau_grid.size(), deltas = cfg.delta_set.size();

    std::map<SizeBucket, std::size_t> n_size;
    std::map<std::string, std::size_t> n_class;
    for (const auto& inst : instances) {
        ++n_size[inst.size];
        ++n_class[inst.class_label];
    }

    EvalReport report;
    report.dataset = index.name;
    report.config = cfg;
    std::vector<Tally> per_method;
    for (MethodId m : methods) {
        const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(cfg.workers), instances.size());
        std::vector<Tally> parts(workers, Tally(deltas, taus));
        std::vector<std::exception_ptr> errors(workers);
        const std::size_t chunk = (instances.size() + workers - 1) / workers;
        auto run = [&](std::size_t k) {
            try {
                tally_range(instances, k * chunk, std::min(instances.size(), (k + 1) * chunk), m, index, maps, cfg,
                            parts[k]);
            } catch (...) {
                errors[k] = std::current_exception();
            }
        };
        if (workers == 1) {
            run(0);
        } else {
            std::vector<std::thread> pool;
            for (std::size_t k = 0; k < workers; ++k) pool.emplace_back(run, k);
            for (auto& t : pool) t.join();
        }
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
        Tally total(deltas, taus);
        for (auto& p : parts) total.merge(p);
        report.missing.insert(report.missing.end(), total.missing.begin(), total.missing.end());
        per_method.push_back(std::move(total));
    }
    std::sort(report.missing.begin(), report.missing.end());
    report.missing.erase(std::unique(report.missing.begin(), report.missing.end()), report.missing.end());
    if (!report.missing.empty() && !cfg.missing_as_miss) {
        std::string msg = std::to_string(report.missing.size()) + " saliency map(s) missing:";
        for (std::size_t i = 0; i < std::min<std::size_t>(report.missing.size(), 20); ++i)
            msg += "\n  " + report.missing[i];
        if (report.missing.size() > 20) msg += "\n  ...";
        throw EvalError(msg);
    }

    const auto frac = [](std::size_t hits, std::size_t n) {
        return static_cast<double>(hits) / static_cast<double>(n);
    };
    for (std::size_t d = 0; d < deltas; ++d)
        for (std::size_t mi = 0; mi < methods.size(); ++mi) {
            auto& t = per_method[mi];
            EvalRow row;
            row.method = methods[mi];
            row.delta = cfg.delta_set[d];
            row.n = instances.size();
            for (std::size_t k = 0; k < taus; ++k) row.acc_by_tau.push_back(frac(t.overall[d][k], row.n));
            const auto sweep = sweep_tau(cfg.tau_grid, row.acc_by_tau);
            row.tau = sweep.argmax_tau;
            row.overall = sweep.best_acc;
            for (const auto& [bucket, n] : n_size) {
                row.n_by_size[bucket] = n;
                const auto it = t.size.find(bucket);
                row.by_size[bucket] = it == t.size.end() ? 0.0 : frac(it->second[d][sweep.argmax_index], n);
            }
            for (const auto& [cls, n] : n_class) {
                row.n_by_class[cls] = n;
                const auto it = t.cls.find(cls);
                row.by_class[cls] = it == t.cls.end() ? 0.0 : frac(it->second[d][sweep.argmax_index], n);
            }
            report.rows.push_back(std::move(row));
        }
    return report;
}

namespace {

std::string fixed(double v, int digits = 4) {
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(digits) << v;
    return ss.str();
}

}  // namespace

std::string report_csv(const EvalReport& r) {
    std::ostringstream out;
    out << "method,delta,scope,key,tau,n,boxacc\n";
    for (const auto& row : r.rows) {
        const std::string head = std::string(method_id_string(row.method)) + "," + fixed(row.delta, 2) + ",";
        out << head << "overall,all," << fixed(row.tau, 2) << "," << row.n << "," << fixed(row.overall, 6) << "\n";
        for (const auto& [b, acc] : row.by_size)
            out << head << "size," << to_string(b) << "," << fixed(row.tau, 2) << "," << row.n_by_size.at(b) << ","
                << fixed(acc, 6) << "\n";
        for (const auto& [cls, acc] : row.by_class) {
            std::string quoted = cls;
            if (quoted.find_first_of(",\"") != std::string::npos) {
                std::string q = "\"";
                for (char c : cls) q += c == '"' ? std::string("\"\"") : std::string(1, c);
                quoted = q + "\"";
            }
            out << head << "class," << quoted << "," << fixed(row.tau, 2) << "," << row.n_by_class.at(cls) << "," << fixed(acc, 6) << "\n";
        }
    }
    return out.str();
}

std::string report_table(const EvalReport& r, bool show_tau) {
    std::vector<double> deltas;
    std::vector<MethodId> methods;
    for (const auto& row : r.rows) {
        if (std::find(deltas.begin(), deltas.end(), row.delta) == deltas.end()) deltas.push_back(row.delta);
        if (std::find(methods.begin(), methods.end(), row.method) == methods.end()) methods.push_back(row.method);
    }
    std::ostringstream out;
    out << "dataset: " << (r.dataset.empty() ? "-" : r.dataset) << "  config: " << (r.config_hash.empty() ? "-" : r.config_hash)
        << "  gt_matching: " << to_string(r.config.gt_matching) << "  size cutoffs: S<=" << r.config.cutoffs.small
        << " M<=" << r.config.cutoffs.medium << "\n";
    if (!r.rows.empty()) {
        out << "N = " << r.rows.front().n;
        for (const auto& [b, n] : r.rows.front().n_by_size) out << "  N_" << to_string(b) << " = " << n;
        out << "\n";
    }
    const int cell = show_tau ? 15 : 9;
    out << std::left << std::setw(14) << "Method";
    for (double d : deltas) {
        const std::string title = "IoU >= " + fixed(d, 2);
        out << " | " << std::setw(cell * 4 + 3) << title;
    }
    out << "\n" << std::setw(14) << "";
    for (std::size_t i = 0; i < deltas.size(); ++i) {
        out << " | ";
        for (const char* h : {"BoxAcc", "BoxAcc_S", "BoxAcc_M", "BoxAcc_L"}) out << std::setw(cell) << h << " ";
    }
    out << "\n";
    for (MethodId m : methods) {
        out << std::setw(14) << method_display_name(m);
        for (double d : deltas) {
            const EvalRow* row = r.find(m, d);
            out << " | ";
            auto put = [&](std::optional<double> v) {
                std::string s = v ? fixed(*v) : std::string("n/a");
                if (show_tau && v) s += " @" + fixed(row->tau, 2);
                out << std::setw(cell) << s << " ";
            };
            put(row->overall);
            for (SizeBucket b : {SizeBucket::S, SizeBucket::M, SizeBucket::L}) {
                const auto it = row->by_size.find(b);
                put(it == row->by_size.end() ? std::nullopt : std::optional<double>(it->second));
            }
        }
        out << "\n";
    }
    return out.str();
}

}  // namespace iconsal
