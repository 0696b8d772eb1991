#pragma once

// Detection metrics: temporal IoU, interpolated average precision with
// greedy one-to-one matching, and mAP reports over a tIoU threshold grid.

#include "spot/decode.hpp"

#include <iostream>
#include <map>
#include <set>
#include <sstream>

namespace spot::eval {

using decode::ActionInstance;

/// Per-video detections / ground truth.
using InstanceMap = std::map<std::string, std::vector<ActionInstance>>;

struct EvalConfig {
    std::vector<double> tiou_grid = {0.3, 0.4, 0.5, 0.6, 0.7};

    void validate() const {
        double prev = 0.0;
        for (double t : tiou_grid) {
            if (!(t > prev && t < 1.0))
                throw ConfigError("tIoU grid must be strictly increasing in (0,1)");
            prev = t;
        }
    }
};

inline double tiou(const ActionInstance& a, const ActionInstance& b) {
    return decode::tiou(a.start, a.end, b.start, b.end);
}

namespace detail {

struct FlatPred {
    int video = 0;
    ActionInstance inst;
};

/// All-point-interpolated area under the precision/recall curve given the
/// ordered TP/FP flags.
inline double pr_area(const std::vector<char>& tp_flags, int n_gt) {
    if (n_gt == 0) return 0.0;
    std::vector<double> precision, recall;
    int tp = 0, fp = 0;
    for (char f : tp_flags) {
        if (f) ++tp; else ++fp;
        precision.push_back(static_cast<double>(tp) / (tp + fp));
        recall.push_back(static_cast<double>(tp) / n_gt);
    }
    double ap = 0.0, prev_recall = 0.0;
    for (size_t i = 0; i < precision.size(); ++i) {
        double pmax = 0.0;
        for (size_t j = i; j < precision.size(); ++j)
            pmax = std::max(pmax, precision[j]);
        ap += (recall[i] - prev_recall) * pmax;
        prev_recall = recall[i];
    }
    return ap;
}

}  // namespace detail

/// AP for one class at one tIoU threshold. Predictions are sorted by score
/// (score ties broken by earlier start); each ground-truth instance can match
/// at most one prediction, greedily by best tIoU >= threshold.
inline double average_precision(const std::vector<detail::FlatPred>& preds_in,
                                const std::vector<detail::FlatPred>& gts,
                                double tiou_thr) {
    if (gts.empty()) return 0.0;
    std::vector<detail::FlatPred> preds = preds_in;
    std::stable_sort(preds.begin(), preds.end(),
                     [](const detail::FlatPred& a, const detail::FlatPred& b) {
                         if (a.inst.score != b.inst.score)
                             return a.inst.score > b.inst.score;
                         return a.inst.start < b.inst.start;
                     });
    std::vector<char> used(gts.size(), 0);
    std::vector<char> tp_flags;
    for (const auto& p : preds) {
        double best_iou = 0.0;
        int best_g = -1;
        for (size_t g = 0; g < gts.size(); ++g) {
            if (used[g] || gts[g].video != p.video) continue;
            double ov = tiou(p.inst, gts[g].inst);
            if (ov > best_iou) { best_iou = ov; best_g = static_cast<int>(g); }
        }
        if (best_g >= 0 && best_iou >= tiou_thr) {
            used[best_g] = 1;
            tp_flags.push_back(1);
        } else {
            tp_flags.push_back(0);
        }
    }
    return detail::pr_area(tp_flags, static_cast<int>(gts.size()));
}

/// Convenience overload for single-video, single-class tests.
inline double average_precision(const std::vector<ActionInstance>& preds,
                                const std::vector<ActionInstance>& gts,
                                double tiou_thr) {
    std::vector<detail::FlatPred> p, g;
    for (const auto& x : preds) p.push_back({0, x});
    for (const auto& x : gts) g.push_back({0, x});
    return average_precision(p, g, tiou_thr);
}

struct MapReport {
    std::vector<double> thresholds;
    std::vector<double> map_per_threshold;
    double average_map = 0.0;
    std::vector<std::string> warnings;

    std::string table() const {
        std::ostringstream os;
        os << "tIoU    mAP\n";
        for (size_t i = 0; i < thresholds.size(); ++i) {
            os.precision(4);
            os << std::fixed << thresholds[i] << "  " << map_per_threshold[i]
               << "\n";
        }
        os << "Avg     " << std::fixed << average_map << "\n";
        return os.str();
    }
};

inline MapReport map_report(const InstanceMap& detections,
                            const InstanceMap& ground_truth,
                            const EvalConfig& cfg) {
    cfg.validate();
    // Flatten with integer video handles.
    std::map<std::string, int> vids;
    for (const auto& [v, _] : ground_truth) vids.emplace(v, static_cast<int>(vids.size()));
    for (const auto& [v, _] : detections) vids.emplace(v, static_cast<int>(vids.size()));
    std::map<int, std::vector<detail::FlatPred>> preds_by_class, gts_by_class;
    for (const auto& [v, list] : ground_truth)
        for (const auto& inst : list)
            gts_by_class[inst.label].push_back({vids.at(v), inst});
    for (const auto& [v, list] : detections)
        for (const auto& inst : list)
            preds_by_class[inst.label].push_back({vids.at(v), inst});

    std::set<int> classes;
    for (const auto& [k, _] : gts_by_class) classes.insert(k);
    MapReport report;
    for (const auto& [k, _] : preds_by_class)
        if (!classes.count(k)) {
            report.warnings.push_back("class " + std::to_string(k) +
                                      " predicted but absent in ground truth");
            classes.insert(k);  // contributes AP 0
        }

    report.thresholds = cfg.tiou_grid;
    static const std::vector<detail::FlatPred> kEmpty;
    for (double thr : cfg.tiou_grid) {
        double sum = 0.0;
        for (int k : classes) {
            auto pit = preds_by_class.find(k);
            auto git = gts_by_class.find(k);
            const auto& p = pit == preds_by_class.end() ? kEmpty : pit->second;
            const auto& g = git == gts_by_class.end() ? kEmpty : git->second;
            sum += average_precision(p, g, thr);
        }
        report.map_per_threshold.push_back(
            classes.empty() ? 0.0 : sum / static_cast<double>(classes.size()));
    }
    double acc = 0.0;
    for (double m : report.map_per_threshold) acc += m;
    report.average_map =
        report.map_per_threshold.empty()
            ? 0.0
            : acc / static_cast<double>(report.map_per_threshold.size());
    return report;
}

/// Ground truth in InstanceMap form from annotated records.
inline InstanceMap ground_truth_instances(const std::vector<data::VideoRecord>& recs) {
    InstanceMap gt;
    for (const auto& r : recs) {
        auto& list = gt[r.id];
        for (const auto& s : r.segments) list.push_back({s.start, s.end, s.label, 1.0});
    }
    return gt;
}

}  // namespace spot::eval
