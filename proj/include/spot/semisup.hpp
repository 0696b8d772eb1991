#pragma once

// Stage-II machinery: pseudo-label sharpening, the class-balanced
// classification loss, the weighted BCE + dice mask loss, feature
// reconstruction loss, and the combined training objective.

#include "spot/refine.hpp"

#include <optional>
#include <set>

namespace spot::semisup {

using ag::Var;

struct SharpenConfig {
    double tau = 1.1;      // largest class sharpening strength, >= 1
    double tau_m = 0.7;    // mask sharpening temperature
    double theta_c = 0.3;
    double theta_m = 0.7;

    void validate() const {
        if (tau < 1.0) throw ConfigError("sharpening tau must be >= 1");
        if (tau_m <= 0.0) throw ConfigError("tau_m must be > 0");
    }
};

/// Adaptive class sharpening strength: no sharpening for already-confident
/// predictions, full strength tau for maximally uncertain ones.
inline double class_temperature(double y_max, double tau) {
    return tau - (tau - 1.0) * y_max;
}

struct PseudoClassLabels {
    std::vector<int> label;         // per snippet, [1..K+1]
    std::vector<double> confidence;
    std::vector<char> confident;    // confidence >= theta_c
};

inline Vec softmax_vec(const Vec& logits) {
    Vec e = (logits.array() - logits.maxCoeff()).exp();
    return e / e.sum();
}

inline PseudoClassLabels sharpen_class(const Mat& logits,
                                       const SharpenConfig& cfg) {
    cfg.validate();
    const int K = static_cast<int>(logits.rows()) - 1;
    const int T = static_cast<int>(logits.cols());
    PseudoClassLabels out;
    out.label.resize(T);
    out.confidence.resize(T);
    out.confident.resize(T);
    for (int t = 0; t < T; ++t) {
        Vec probs = softmax_vec(logits.col(t));
        double y_max = probs.head(K).maxCoeff();
        double tau_c = class_temperature(y_max, cfg.tau);
        Vec sharp = softmax_vec(logits.col(t) / tau_c);
        Eigen::Index arg;
        double conf = sharp.maxCoeff(&arg);
        out.label[t] = static_cast<int>(arg) + 1;
        out.confidence[t] = conf;
        out.confident[t] = conf >= cfg.theta_c ? 1 : 0;
    }
    return out;
}

/// Temperature-sharpened sigmoid followed by Heaviside thresholding.
inline Mat sharpen_mask(const Mat& mask_logits, const SharpenConfig& cfg) {
    cfg.validate();
    Mat soft = (1.0 / (1.0 + (-mask_logits.array() / cfg.tau_m).exp())).matrix();
    return refine::binarize(soft, cfg.theta_m);
}

// ---- classification loss --------------------------------------------------

struct ClassLossConfig {
    std::set<int> tail_classes;  // subset of [1..K]
    double epsilon = 0.3;        // tail activation slack (theta_c)
};

/// Class-balanced per-snippet binary cross-entropy. Foreground snippets use
/// the plain multi-binary term; background snippets drop the negative term of
/// any tail class activated below epsilon. Snippets with active[t] == 0
/// (unconfident pseudo labels) contribute nothing; normalization stays 1/T.
inline Var classification_loss(const Var& class_probs,
                               const std::vector<int>& class_label,
                               const std::vector<char>& active,
                               const ClassLossConfig& cfg) {
    const int Kp1 = static_cast<int>(class_probs.rows());
    const int K = Kp1 - 1;
    const int T = static_cast<int>(class_probs.cols());
    Mat pos = Mat::Zero(Kp1, T);
    Mat neg_w = Mat::Zero(Kp1, T);
    const Mat& p = class_probs.value();
    for (int t = 0; t < T; ++t) {
        if (!active[t]) continue;
        const int y = class_label[t];  // 1-based
        pos(y - 1, t) = 1.0;
        const bool is_bg = y == K + 1;
        for (int k = 1; k <= Kp1; ++k) {
            if (k == y) continue;
            double w = 1.0;
            if (is_bg && k <= K && cfg.tail_classes.count(k) &&
                p(k - 1, t) < cfg.epsilon)
                w = 0.0;
            neg_w(k - 1, t) = w;
        }
    }
    Var pc = ag::clamp(class_probs, 1e-7, 1.0 - 1e-7);
    Var pos_term = ag::mul(Var::constant(pos), ag::log_(pc));
    Var neg_term = ag::mul(Var::constant(neg_w),
                           ag::log_(ag::offset(ag::neg(pc), 1.0)));
    return ag::scale(ag::sum_all(ag::add(pos_term, neg_term)),
                     -1.0 / static_cast<double>(T));
}

inline std::vector<char> all_active(int T) { return std::vector<char>(T, 1); }

/// Tail classes: bottom `fraction` of [1..K] by foreground snippet count.
inline std::set<int> tail_classes_by_count(const std::vector<long>& fg_counts,
                                           double fraction = 0.3) {
    const int K = static_cast<int>(fg_counts.size());
    std::vector<int> order(K);
    for (int k = 0; k < K; ++k) order[k] = k;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return fg_counts[a] < fg_counts[b];
    });
    int n_tail = static_cast<int>(std::floor(fraction * K));
    std::set<int> tail;
    for (int i = 0; i < n_tail; ++i) tail.insert(order[i] + 1);
    return tail;
}

// ---- mask loss ------------------------------------------------------------

struct MaskLossConfig {
    double lambda_d = 0.6;
    bool standard_dice = false;  // opt-in factor-2 dice numerator
    // Inverse-proportion weights; computed from the fg/bg partition when unset.
    std::optional<double> beta_fg, beta_bg;
};

/// Weighted BCE plus dice per anchor column, averaged over anchors. The dice
/// term follows the printed form (numerator m.g, no factor 2) unless
/// standard_dice is set. Columns where both m and g vanish contribute no dice.
/// `anchor_active`, when given, restricts the loss to those anchor columns
/// (used with pseudo targets, where unconfident anchors carry no signal).
inline Var mask_loss(const Var& mask_probs, const Mat& gt_mask,
                     const MaskLossConfig& cfg, int n_fg, int n_bg,
                     const std::vector<char>* anchor_active = nullptr) {
    const int T = static_cast<int>(gt_mask.cols());
    double beta_fg = cfg.beta_fg.value_or(
        n_fg > 0 ? static_cast<double>(gt_mask.rows()) / (2.0 * n_fg) : 0.0);
    double beta_bg = cfg.beta_bg.value_or(
        n_bg > 0 ? static_cast<double>(gt_mask.rows()) / (2.0 * n_bg) : 0.0);

    Mat g_mat = gt_mask;
    Mat omg_mat = (1.0 - gt_mask.array()).matrix();
    int n_active = T;
    if (anchor_active) {
        n_active = 0;
        for (int t = 0; t < T; ++t) {
            if ((*anchor_active)[t]) { ++n_active; continue; }
            g_mat.col(t).setZero();
            omg_mat.col(t).setZero();
        }
        if (n_active == 0) return Var::constant(Mat::Zero(1, 1));
    }
    Var g = Var::constant(g_mat);
    Var one_minus_g = Var::constant(omg_mat);
    Var mc = ag::clamp(mask_probs, 1e-7, 1.0 - 1e-7);
    Var bce_pos = ag::scale(ag::sum_all(ag::mul(g, ag::log_(mc))), -beta_fg);
    Var bce_neg = ag::scale(
        ag::sum_all(ag::mul(one_minus_g, ag::log_(ag::offset(ag::neg(mc), 1.0)))),
        -beta_bg);
    Var bce = ag::scale(ag::add(bce_pos, bce_neg),
                        1.0 / static_cast<double>(n_active));

    // Dice per anchor column.
    const double factor = cfg.standard_dice ? 2.0 : 1.0;
    Var num = ag::scale(ag::sum_cols(ag::mul(mask_probs, g)), factor);
    Var den_m = ag::sum_cols(ag::mul(mask_probs, mask_probs));
    Mat g_sq = g_mat.array().square().colwise().sum();
    Var den = ag::add(den_m, Var::constant(g_sq));
    // Exclude inactive and empty-empty columns; pad the excluded denominators
    // to avoid 0/0.
    Mat col_mask(1, T), den_pad = Mat::Zero(1, T);
    for (int t = 0; t < T; ++t) {
        bool counted = den.value()(0, t) > 1e-12 &&
                       (!anchor_active || (*anchor_active)[t]);
        col_mask(0, t) = counted ? 1.0 : 0.0;
        den_pad(0, t) = counted ? 0.0 : 1.0;
    }
    Var ratio = ag::div(num, ag::add(den, Var::constant(den_pad)));
    Var dice_cols = ag::mul(Var::constant(col_mask),
                            ag::offset(ag::neg(ratio), 1.0));
    Var dice = ag::scale(ag::sum_all(dice_cols),
                         cfg.lambda_d / static_cast<double>(n_active));
    return ag::add(bce, dice);
}

// ---- reconstruction loss --------------------------------------------------

/// Mean squared error between column-wise L2-normalized target and
/// reconstruction, averaged over snippets; invariant to per-column positive
/// rescaling of either side.
inline Var reconstruction_loss(const Var& recon, const Mat& target) {
    Var diff = ag::sub(ag::l2_normalize_cols(recon),
                       Var::constant([&] {
                           Mat t = target;
                           for (Eigen::Index c = 0; c < t.cols(); ++c) {
                               double n = t.col(c).norm();
                               if (n > 1e-12) t.col(c) /= n;
                           }
                           return t;
                       }()));
    return ag::scale(ag::sum_all(ag::mul(diff, diff)),
                     1.0 / static_cast<double>(target.cols()));
}

// ---- total objective ------------------------------------------------------

struct TotalLossConfig {
    bool use_refine = true;
    bool use_recon = true;
};

struct LossBreakdown {
    Var total;
    double l_c = 0.0, l_m = 0.0, l_ref = 0.0, l_rec = 0.0;
};

/// Equal-weight sum L = L_c + L_m + L_ref + L_rec (position loss excluded in
/// fine-tuning). The same formula applies to ground-truth and pseudo targets.
inline LossBreakdown total_loss(const Var& l_c, const Var& l_m, const Var& l_ref,
                                const Var& l_rec, const TotalLossConfig& cfg) {
    LossBreakdown out;
    out.l_c = l_c.value()(0, 0);
    out.l_m = l_m.value()(0, 0);
    out.total = ag::add(l_c, l_m);
    if (cfg.use_refine) {
        out.l_ref = l_ref.value()(0, 0);
        out.total = ag::add(out.total, l_ref);
    }
    if (cfg.use_recon) {
        out.l_rec = l_rec.value()(0, 0);
        out.total = ag::add(out.total, l_rec);
    }
    return out;
}

}  // namespace spot::semisup
