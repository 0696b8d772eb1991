#pragma once

// Stage-I self-supervised pretext task: random-foreground masking, temporal
// shuffling with position prediction, and feature reconstruction. Consumes
// features only; no annotation ever enters this stage.

#include "spot/model.hpp"
#include "spot/semisup.hpp"

namespace spot::pretrain {

using ag::Var;

struct PretextLossWeights {
    double lambda_1 = 0.8;  // reconstruction
    double lambda_2 = 0.4;  // temporal position
};

struct PretextSample {
    Mat masked_features;            // (2d, T), background columns zeroed, then shuffled
    int start = 0, end = 0;         // random foreground [start, end)
    std::vector<int> shuffle_perm;  // slot i holds original column perm[i]
    std::vector<int> position_targets;  // == shuffle_perm (class per slot)
    Mat recon_target;               // original F in shuffled order
    Vec fg_indicator;               // foreground indicator in shuffled order
};

/// Draw a random foreground segment covering a uniform fraction of
/// [min_frac, max_frac] of the sequence, zero the background columns, then
/// shuffle columns. Deterministic given the rng state.
inline PretextSample make_pretext_sample(const Mat& features, Rng& rng,
                                         double min_frac, double max_frac) {
    if (!(min_frac > 0.0 && min_frac <= max_frac && max_frac <= 1.0))
        throw ConfigError("pretext foreground fractions must satisfy 0 < min <= max <= 1");
    const int T = static_cast<int>(features.cols());
    PretextSample s;
    double frac = uniform(rng, min_frac, max_frac);
    int len = std::clamp(static_cast<int>(std::lround(frac * T)), 1, T);
    s.start = uniform_int(rng, 0, T - len);
    s.end = s.start + len;

    Mat masked = Mat::Zero(features.rows(), T);
    masked.middleCols(s.start, len) = features.middleCols(s.start, len);

    s.shuffle_perm = random_permutation(rng, T);
    s.position_targets = s.shuffle_perm;
    s.masked_features.resize(features.rows(), T);
    s.recon_target.resize(features.rows(), T);
    s.fg_indicator.resize(T);
    for (int i = 0; i < T; ++i) {
        const int src = s.shuffle_perm[i];
        s.masked_features.col(i) = masked.col(src);
        s.recon_target.col(i) = features.col(src);
        s.fg_indicator(i) = (src >= s.start && src < s.end) ? 1.0 : 0.0;
    }
    return s;
}

struct PretextForward {
    Var mask_pred;        // (T, 1): mean foreground prediction per snippet
    Var mask_probs;       // (T, T) full mask head output
    Var position_logits;  // (T_slots, T_classes)
    Var recon;            // (2d, T)
};

/// Run the model on a pretext sample. Zeroed input columns are checked to
/// produce non-zero embedding columns (the shuffle task would otherwise be
/// degenerate).
inline PretextForward pretext_forward(const PretextSample& sample,
                                      const SpotModel& model,
                                      const nn::Context& ctx) {
    PretextForward out;
    auto fwd = model.forward(sample.masked_features, ctx);
    out.mask_probs = fwd.mask_probs;
    const int T = static_cast<int>(sample.masked_features.cols());
    // Every anchor column predicts the same planted indicator; report the mean.
    out.mask_pred = ag::scale(
        ag::matmul(fwd.mask_probs, Var::constant(Mat::Ones(T, 1))),
        1.0 / static_cast<double>(T));
    out.position_logits = model.position_logits(fwd.embedding, ctx);
    out.recon = fwd.recon;
    for (int i = 0; i < T; ++i)
        if (fwd.embedding.value().col(i).norm() <= 1e-6)
            throw NumericError("embedding column collapsed to zero");
    return out;
}

struct PretrainLoss {
    Var total;
    double l_m = 0.0, l_rec = 0.0, l_tp = 0.0;
};

/// L_pre = L_m + lambda_1 * L_rec + lambda_2 * L_tp. The mask term applies
/// the stage-II mask loss with the planted indicator as target for every
/// anchor column.
inline PretrainLoss pretrain_loss(const PretextForward& preds,
                                  const PretextSample& sample,
                                  const PretextLossWeights& weights) {
    const int T = static_cast<int>(sample.fg_indicator.size());
    Mat target = sample.fg_indicator * Eigen::RowVectorXd::Ones(T);
    const int n_fg = static_cast<int>(sample.fg_indicator.sum());
    Var l_m = semisup::mask_loss(preds.mask_probs, target, semisup::MaskLossConfig{},
                                 n_fg, T - n_fg);
    Var l_rec = semisup::reconstruction_loss(preds.recon, sample.recon_target);

    // Cross-entropy over position classes, one row of logits per slot.
    Mat one_hot = Mat::Zero(T, T);
    for (int i = 0; i < T; ++i) one_hot(sample.position_targets[i], i) = 1.0;
    Var probs = ag::clamp(
        ag::softmax_cols(ag::transpose(preds.position_logits)), 1e-12, 1.0);
    Var l_tp = ag::scale(
        ag::sum_all(ag::mul(Var::constant(one_hot), ag::log_(probs))),
        -1.0 / static_cast<double>(T));

    PretrainLoss out;
    out.l_m = l_m.value()(0, 0);
    out.l_rec = l_rec.value()(0, 0);
    out.l_tp = l_tp.value()(0, 0);
    out.total = ag::add(l_m, ag::add(ag::scale(l_rec, weights.lambda_1),
                                     ag::scale(l_tp, weights.lambda_2)));
    return out;
}

}  // namespace spot::pretrain
