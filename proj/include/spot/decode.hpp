#pragma once

// Inference: turn the class matrix P and mask matrix M into scored action
// instances via a mask-threshold sweep, then SoftNMS.

#include "spot/common.hpp"
#include "spot/data.hpp"

#include <algorithm>
#include <map>
#include <tuple>

namespace spot::decode {

struct ActionInstance {
    double start = 0.0;  // seconds
    double end = 0.0;
    int label = 1;       // class index in [1..K]
    double score = 0.0;
};

struct DecodeConfig {
    double theta_c = 0.3;
    std::vector<double> mask_thresholds = {0.1, 0.2, 0.3, 0.4, 0.5,
                                           0.6, 0.7, 0.8, 0.9};
    int top_snippets = 100;   // max anchors per video
    double softnms_threshold = 0.6;
    double softnms_sigma = 0.5;
    int max_outputs = 100;

    void validate() const {
        if (mask_thresholds.empty()) throw ConfigError("mask threshold sweep empty");
        for (double th : mask_thresholds)
            if (!(th > 0.0 && th < 1.0))
                throw ConfigError("mask thresholds must be in (0,1)");
    }
};

namespace detail {

struct Run { int a, b; };  // inclusive snippet range

inline std::vector<Run> binary_runs(const Vec& col, double theta) {
    std::vector<Run> runs;
    const int T = static_cast<int>(col.size());
    int start = -1;
    for (int i = 0; i <= T; ++i) {
        bool on = i < T && col(i) >= theta;
        if (on && start < 0) start = i;
        if (!on && start >= 0) {
            runs.push_back({start, i - 1});
            start = -1;
        }
    }
    return runs;
}

}  // namespace detail

/// Decode pre-NMS candidates from one video. Anchors are snippets whose best
/// action-class probability exceeds theta_c (top `top_snippets` of them); each
/// anchor's mask column is swept over the threshold set, keeping the run that
/// contains the anchor (or the longest run when none does). Identical
/// (label, span) candidates collapse to their best score.
inline std::vector<ActionInstance> decode_instances(const Mat& class_probs,
                                                    const Mat& mask_probs,
                                                    double duration,
                                                    const DecodeConfig& cfg) {
    cfg.validate();
    if (duration <= 0.0) throw ConfigError("duration must be positive");
    const int K = static_cast<int>(class_probs.rows()) - 1;
    const int T = static_cast<int>(class_probs.cols());

    std::vector<int> anchors;
    Vec best_prob(T);
    std::vector<int> best_class(T);
    for (int t = 0; t < T; ++t) {
        Eigen::Index arg;
        best_prob(t) = class_probs.col(t).head(K).maxCoeff(&arg);
        best_class[t] = static_cast<int>(arg) + 1;
        if (best_prob(t) > cfg.theta_c) anchors.push_back(t);
    }
    std::stable_sort(anchors.begin(), anchors.end(), [&](int a, int b) {
        return best_prob(a) > best_prob(b);
    });
    if (static_cast<int>(anchors.size()) > cfg.top_snippets)
        anchors.resize(cfg.top_snippets);

    std::map<std::tuple<int, int, int>, double> best;  // (label, a, b) -> score
    for (int t : anchors) {
        const Vec col = mask_probs.col(t);
        const double score = best_prob(t) * col.maxCoeff();
        for (double theta : cfg.mask_thresholds) {
            auto runs = detail::binary_runs(col, theta);
            if (runs.empty()) continue;
            const detail::Run* pick = nullptr;
            for (const auto& r : runs)
                if (t >= r.a && t <= r.b) { pick = &r; break; }
            if (!pick) {
                pick = &runs.front();
                for (const auto& r : runs)
                    if (r.b - r.a > pick->b - pick->a) pick = &r;
            }
            auto key = std::make_tuple(best_class[t], pick->a, pick->b);
            auto it = best.find(key);
            if (it == best.end() || it->second < score) best[key] = score;
        }
    }
    std::vector<ActionInstance> out;
    for (const auto& [key, score] : best) {
        auto [label, a, b] = key;
        auto [s, e] = data::snippet_run_to_seconds(a, b, T, duration);
        out.push_back({s, e, label, score});
    }
    std::stable_sort(out.begin(), out.end(), [](const ActionInstance& x,
                                                const ActionInstance& y) {
        if (x.score != y.score) return x.score > y.score;
        return x.start < y.start;
    });
    return out;
}

inline double tiou(double s1, double e1, double s2, double e2) {
    double inter = std::min(e1, e2) - std::max(s1, s2);
    if (inter <= 0.0) return 0.0;
    double uni = std::max(e1, e2) - std::min(s1, s2);
    return inter / uni;
}

/// Gaussian SoftNMS: highest-score candidate wins; remaining same-class
/// candidates decay by exp(-tIoU^2 / sigma) and are dropped from the pool
/// once they fall below the threshold.
inline std::vector<ActionInstance> soft_nms(std::vector<ActionInstance> pool,
                                            const DecodeConfig& cfg) {
    std::vector<ActionInstance> out;
    while (!pool.empty() && static_cast<int>(out.size()) < cfg.max_outputs) {
        size_t best = 0;
        for (size_t i = 1; i < pool.size(); ++i) {
            if (pool[i].score > pool[best].score ||
                (pool[i].score == pool[best].score &&
                 pool[i].start < pool[best].start))
                best = i;
        }
        ActionInstance top = pool[best];
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(best));
        out.push_back(top);
        std::vector<ActionInstance> kept;
        kept.reserve(pool.size());
        for (auto& c : pool) {
            bool decayed = false;
            if (c.label == top.label) {
                double ov = tiou(c.start, c.end, top.start, top.end);
                if (ov > 0.0) {
                    c.score *= std::exp(-ov * ov / cfg.softnms_sigma);
                    decayed = true;
                }
            }
            if (decayed && c.score < cfg.softnms_threshold) continue;
            kept.push_back(c);
        }
        pool = std::move(kept);
    }
    return out;
}

}  // namespace spot::decode
