#pragma once

// Boundary refinement: mask binarization, 1-D morphological erosion (exact
// and soft/differentiable), hard & easy snippet mining from the two streams,
// and the contrastive refinement loss pairing them.

#include "spot/autograd.hpp"

#include <algorithm>
#include <numeric>

namespace spot::refine {

using ag::Var;

enum class RefineMode { infonce, margin_triplet };

struct RefineConfig {
    double theta_m = 0.7;  // mask threshold
    double theta_c = 0.3;  // class threshold
    int erosion_kernel = 7;
    int top_k = 40;
    double temperature = 0.07;
    double margin = 0.5;            // margin_triplet mode only
    RefineMode mode = RefineMode::infonce;
    bool flip_regions = false;  // swap interior/band roles in hard mining
    double soft_beta = 0.05;    // soft-erosion sharpness

    void validate() const {
        if (!(theta_m > 0.0 && theta_m < 1.0 && theta_c > 0.0 && theta_c < 1.0))
            throw ConfigError("refine thresholds must be in (0,1)");
        if (erosion_kernel < 3 || erosion_kernel % 2 == 0)
            throw ConfigError("erosion kernel must be odd and >= 3");
        if (top_k < 1) throw ConfigError("top_k must be >= 1");
    }
};

/// Heaviside binarization with eta(0) := 1, i.e. entry = 1 iff value >= theta.
inline Mat binarize(const Mat& m, double theta) {
    return (m.array() >= theta).cast<double>();
}

struct ErosionResult {
    Vec interior;  // window minimum (zero padded at edges)
    Vec band;      // mask - interior
};

/// Exact erosion: interior[i] = min over the e-wide window centered at i,
/// windows extending past the edges see zero padding.
inline ErosionResult erode_1d(const Vec& mask_col, int e) {
    if (e % 2 == 0) throw ConfigError("erosion kernel must be odd");
    const int T = static_cast<int>(mask_col.size());
    const int h = e / 2;
    ErosionResult r;
    r.interior.resize(T);
    for (int i = 0; i < T; ++i) {
        double m = (i - h < 0 || i + h >= T) ? 0.0 : 1.0;  // padding
        for (int j = std::max(0, i - h); j <= std::min(T - 1, i + h); ++j)
            m = std::min(m, mask_col(j));
        r.interior(i) = m;
    }
    r.band = mask_col - r.interior;
    return r;
}

/// Soft min-pool erosion: -beta * log sum exp(-x/beta) over the window,
/// recovering the exact erosion as beta -> 0.
inline Vec erode_1d_soft(const Vec& mask_col, int e, double beta) {
    const int T = static_cast<int>(mask_col.size());
    const int h = e / 2;
    Vec out(T);
    for (int i = 0; i < T; ++i) {
        double acc = 0.0;
        for (int j = i - h; j <= i + h; ++j) {
            double x = (j < 0 || j >= T) ? 0.0 : mask_col(j);
            acc += std::exp(-x / beta);
        }
        out(i) = -beta * std::log(acc);
    }
    return out;
}

struct SnippetBank {
    Var x_fg, x_bg;  // hard snippets, columns of E_m
    Var y_fg, y_bg;  // easy snippets, columns of E_p
    std::vector<int> x_fg_idx, x_bg_idx, y_fg_idx, y_bg_idx;
};

namespace detail {
inline std::vector<int> top_k_by_score(const std::vector<int>& candidates,
                                       const Vec& scores, int k) {
    std::vector<int> idx = candidates;
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        if (scores(a) != scores(b)) return scores(a) > scores(b);
        return a < b;
    });
    if (static_cast<int>(idx.size()) > k) idx.resize(k);
    return idx;
}
}  // namespace detail

/// Hard snippet mining from the mask stream. Per anchor column the binarized
/// mask splits into eroded interior and boundary band; candidates are pooled
/// over all anchors ("clusters") jointly and ranked by the L2 norm of their
/// E_m column.
inline std::pair<std::vector<int>, std::vector<int>> mine_hard_indices(
    const Mat& mask_bin, const Mat& e_m, const RefineConfig& cfg) {
    const int T = static_cast<int>(mask_bin.rows());
    std::vector<char> in_interior(T, 0), in_band(T, 0);
    for (int t = 0; t < static_cast<int>(mask_bin.cols()); ++t) {
        ErosionResult er = erode_1d(mask_bin.col(t), cfg.erosion_kernel);
        for (int i = 0; i < T; ++i) {
            if (er.interior(i) > 0.5) in_interior[i] = 1;
            if (er.band(i) > 0.5) in_band[i] = 1;
        }
    }
    if (cfg.flip_regions) std::swap(in_interior, in_band);
    Vec scores(T);
    for (int i = 0; i < T; ++i) scores(i) = e_m.col(i).norm();
    std::vector<int> fg_cand, bg_cand;
    for (int i = 0; i < T; ++i) {
        if (in_interior[i]) fg_cand.push_back(i);
        if (in_band[i]) bg_cand.push_back(i);
    }
    return {detail::top_k_by_score(fg_cand, scores, cfg.top_k),
            detail::top_k_by_score(bg_cand, scores, cfg.top_k)};
}

/// Easy snippet mining from the classification stream: thresholded class
/// probabilities select foreground (any action row) and background (row K+1)
/// candidates, ranked by the corresponding probability.
inline std::pair<std::vector<int>, std::vector<int>> mine_easy_indices(
    const Mat& class_probs, const RefineConfig& cfg) {
    const int K = static_cast<int>(class_probs.rows()) - 1;
    const int T = static_cast<int>(class_probs.cols());
    std::vector<int> fg_cand, bg_cand;
    Vec fg_score(T), bg_score(T);
    for (int t = 0; t < T; ++t) {
        double max_action = class_probs.col(t).head(K).maxCoeff();
        fg_score(t) = max_action;
        bg_score(t) = class_probs(K, t);
        if (max_action >= cfg.theta_c) fg_cand.push_back(t);
        if (class_probs(K, t) >= cfg.theta_c) bg_cand.push_back(t);
    }
    return {detail::top_k_by_score(fg_cand, fg_score, cfg.top_k),
            detail::top_k_by_score(bg_cand, bg_score, cfg.top_k)};
}

inline SnippetBank mine(const Mat& mask_probs, const Mat& class_probs,
                        const Var& e_m, const Var& e_p,
                        const RefineConfig& cfg) {
    Mat mask_bin = binarize(mask_probs, cfg.theta_m);
    auto [xf, xb] = mine_hard_indices(mask_bin, e_m.value(), cfg);
    auto [yf, yb] = mine_easy_indices(class_probs, cfg);
    SnippetBank bank;
    bank.x_fg_idx = xf; bank.x_bg_idx = xb;
    bank.y_fg_idx = yf; bank.y_bg_idx = yb;
    if (!xf.empty()) bank.x_fg = ag::select_cols(e_m, xf);
    if (!xb.empty()) bank.x_bg = ag::select_cols(e_m, xb);
    if (!yf.empty()) bank.y_fg = ag::select_cols(e_p, yf);
    if (!yb.empty()) bank.y_bg = ag::select_cols(e_p, yb);
    return bank;
}

namespace detail {

/// Pairwise cosine similarities between columns: (cols(a), cols(b)).
inline Var cosine_matrix(const Var& a, const Var& b) {
    return ag::matmul(ag::transpose(ag::l2_normalize_cols(a)),
                      ag::l2_normalize_cols(b));
}

/// Mean over anchors of -log( sum_pos / (sum_pos + sum_neg) ) with
/// exponentiated cosine similarities at temperature tau.
inline Var infonce_term(const Var& anchors, const Var& positives,
                        const Var& negatives, double tau) {
    Var sp = ag::exp_(ag::scale(cosine_matrix(anchors, positives), 1.0 / tau));
    Var sn = ag::exp_(ag::scale(cosine_matrix(anchors, negatives), 1.0 / tau));
    Var ones_p = Var::constant(Mat::Ones(positives.cols(), 1));
    Var ones_n = Var::constant(Mat::Ones(negatives.cols(), 1));
    Var pos_sum = ag::matmul(sp, ones_p);   // (A, 1)
    Var neg_sum = ag::matmul(sn, ones_n);
    Var log_ratio = ag::sub(ag::log_(pos_sum), ag::log_(ag::add(pos_sum, neg_sum)));
    return ag::scale(ag::sum_all(log_ratio),
                     -1.0 / static_cast<double>(anchors.cols()));
}

inline Var margin_term(const Var& anchors, const Var& positives,
                       const Var& negatives, double margin) {
    Var cp = cosine_matrix(anchors, positives);
    Var cn = cosine_matrix(anchors, negatives);
    Var mean_p = ag::scale(ag::matmul(cp, Var::constant(Mat::Ones(positives.cols(), 1))),
                           1.0 / static_cast<double>(positives.cols()));
    Var mean_n = ag::scale(ag::matmul(cn, Var::constant(Mat::Ones(negatives.cols(), 1))),
                           1.0 / static_cast<double>(negatives.cols()));
    Var viol = ag::relu(ag::offset(ag::sub(mean_n, mean_p), margin));
    return ag::scale(ag::sum_all(viol), 1.0 / static_cast<double>(anchors.cols()));
}

}  // namespace detail

/// Contrastive refinement loss: foreground term with hard-foreground anchors
/// against easy foreground/background, plus the symmetric background term.
/// Degenerate banks (any empty set) yield zero.
inline Var refinement_loss(const SnippetBank& bank, const RefineConfig& cfg) {
    if (bank.x_fg_idx.empty() || bank.x_bg_idx.empty() ||
        bank.y_fg_idx.empty() || bank.y_bg_idx.empty())
        return Var::constant(Mat::Zero(1, 1));
    if (bank.x_fg.rows() != bank.y_fg.rows())
        throw ConfigError("refinement needs matching E_m / E_p dimensions");
    if (cfg.mode == RefineMode::infonce) {
        Var t1 = detail::infonce_term(bank.x_fg, bank.y_fg, bank.y_bg,
                                      cfg.temperature);
        Var t2 = detail::infonce_term(bank.y_bg, bank.x_bg, bank.y_fg,
                                      cfg.temperature);
        return ag::add(t1, t2);
    }
    Var t1 = detail::margin_term(bank.x_fg, bank.y_fg, bank.y_bg, cfg.margin);
    Var t2 = detail::margin_term(bank.y_bg, bank.x_bg, bank.y_fg, cfg.margin);
    return ag::add(t1, t2);
}

}  // namespace spot::refine
