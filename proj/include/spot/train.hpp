#pragma once

// Two-stage training: self-supervised pre-training on features alone, then
// semi-supervised fine-tuning with alternating pseudo-label refresh. Also the
// inference/evaluation glue and the localization-error-propagation harness.

#include "spot/config.hpp"
#include "spot/train_util.hpp"

namespace spot::train {

using semisup::LossBreakdown;

struct EpochMetrics {
    int epoch = 0;
    double l_c = 0.0, l_m = 0.0, l_ref = 0.0, l_rec = 0.0;
    double val_map = 0.0;
};

// ---- inference / evaluation ----------------------------------------------

/// Decode detections for a batch of videos with the current model weights.
inline eval::InstanceMap infer(const SpotModel& model,
                               const std::vector<VideoSample>& videos,
                               const RunConfig& cfg) {
    nn::Context ctx;  // inference mode
    eval::InstanceMap out;
    for (const auto& v : videos) {
        auto fwd = model.forward(v.features, ctx);
        auto cands = decode::decode_instances(fwd.class_probs.value(),
                                              fwd.mask_probs.value(),
                                              v.rec.duration, cfg.decode);
        out[v.rec.id] = decode::soft_nms(std::move(cands), cfg.decode);
    }
    return out;
}

inline double evaluate_map(const SpotModel& model,
                           const std::vector<VideoSample>& videos,
                           const RunConfig& cfg) {
    std::vector<data::VideoRecord> recs;
    for (const auto& v : videos) recs.push_back(v.rec);
    auto report = eval::map_report(infer(model, videos, cfg),
                                   eval::ground_truth_instances(recs), cfg.eval);
    return report.average_map;
}

// ---- stage I: self-supervised pre-training --------------------------------

struct PretrainResult {
    std::vector<double> epoch_loss;  // average L_pre per epoch
};

/// Pre-train on feature sequences only; annotations never reach this stage.
/// The classification head receives no gradient (its loss is absent), so it
/// stays at initialization as required for stage II.
inline PretrainResult run_pretrain(SpotModel& model,
                                   const std::vector<Mat>& feature_seqs,
                                   const RunConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    nn::Adam opt;
    opt.lr = cfg.lr;
    opt.weight_decay = cfg.weight_decay;
    nn::Context ctx{true, &rng, cfg.dropout};
    PretrainResult result;
    std::vector<int> order(feature_seqs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
        opt.lr = cosine_lr(cfg.lr, epoch, cfg.pretrain_epochs);
        std::shuffle(order.begin(), order.end(), rng);
        double acc = 0.0;
        for (int idx : order) {
            auto sample = pretrain::make_pretext_sample(
                feature_seqs[idx], rng, cfg.pretext_min_frac, cfg.pretext_max_frac);
            auto preds = pretrain::pretext_forward(sample, model, ctx);
            auto loss = pretrain::pretrain_loss(preds, sample, cfg.pretext_weights);
            acc += loss.total.value()(0, 0);
            model.params.zero_grad();
            loss.total.backward();
            opt.step(model.params);
        }
        result.epoch_loss.push_back(acc / static_cast<double>(order.size()));
    }
    return result;
}

// ---- stage II: semi-supervised fine-tuning --------------------------------

struct FinetuneOptions {
    bool use_pseudo_labels = true;  // false = labeled-only (fully supervised)
};

namespace detail {

struct StepTargets {
    std::vector<int> class_label;
    std::vector<char> active;
    Mat gt_mask;
    int n_fg = 0, n_bg = 0;
    bool valid = true;
};

inline StepTargets targets_from_gt(const VideoSample& v) {
    StepTargets t;
    t.class_label = v.targets.class_label;
    t.active.assign(t.class_label.size(), 1);
    t.gt_mask = v.targets.gt_mask;
    t.n_fg = static_cast<int>(v.targets.fg_indices.size());
    t.n_bg = static_cast<int>(v.targets.bg_indices.size());
    return t;
}

inline StepTargets targets_from_pseudo(const SpotModel& model,
                                       const VideoSample& v,
                                       const RunConfig& cfg) {
    nn::Context ctx;  // pseudo labels predicted in inference mode
    auto fwd = model.forward(v.features, ctx);
    auto cls = semisup::sharpen_class(fwd.class_logits.value(), cfg.sharpen);
    Mat mask = semisup::sharpen_mask(fwd.mask_logits.value(), cfg.sharpen);
    StepTargets t;
    const int T = static_cast<int>(cls.label.size());
    t.class_label = cls.label;
    t.active.assign(cls.confident.begin(), cls.confident.end());
    t.gt_mask = std::move(mask);
    for (int i = 0; i < T; ++i) {
        if (!t.active[i]) continue;
        if (t.class_label[i] <= model.cfg.num_classes) ++t.n_fg;
        else ++t.n_bg;
    }
    t.valid = t.n_fg > 0 || t.n_bg > 0;
    return t;
}

}  // namespace detail

/// One optimization step on a single video with the given targets.
inline LossBreakdown finetune_step(SpotModel& model, nn::Adam& opt,
                                   const VideoSample& video,
                                   const detail::StepTargets& targets,
                                   const semisup::ClassLossConfig& class_cfg,
                                   const RunConfig& cfg, nn::Context& ctx) {
    auto fwd = model.forward(video.features, ctx);
    ag::Var l_c = semisup::classification_loss(fwd.class_probs,
                                               targets.class_label,
                                               targets.active, class_cfg);
    ag::Var l_m = semisup::mask_loss(fwd.mask_probs, targets.gt_mask,
                                     cfg.mask_loss, targets.n_fg, targets.n_bg,
                                     &targets.active);
    ag::Var l_ref = Var_zero();
    if (cfg.use_refine) {
        auto bank = refine::mine(fwd.mask_probs.value(), fwd.class_probs.value(),
                                 fwd.e_m, fwd.e_p, cfg.refine);
        l_ref = refine::refinement_loss(bank, cfg.refine);
    }
    ag::Var l_rec = cfg.use_recon
                        ? semisup::reconstruction_loss(fwd.recon, video.features)
                        : Var_zero();
    auto total = semisup::total_loss(
        l_c, l_m, l_ref, l_rec,
        semisup::TotalLossConfig{cfg.use_refine, cfg.use_recon});
    model.params.zero_grad();
    total.total.backward();
    opt.step(model.params);
    return total;
}

struct FinetuneResult {
    std::vector<EpochMetrics> metrics;
    double final_val_map = 0.0;
};

/// Warm-up on labeled data alone, then alternate between regenerating pseudo
/// labels for the unlabeled set and optimizing the joint objective on
/// labeled + pseudo-labeled videos (1:1 interleaved).
inline FinetuneResult run_finetune(SpotModel& model,
                                   const std::vector<VideoSample>& labeled,
                                   const std::vector<VideoSample>& unlabeled,
                                   const std::vector<VideoSample>& validation,
                                   const RunConfig& cfg, std::uint64_t seed,
                                   const FinetuneOptions& opts = {}) {
    if (labeled.empty()) throw ConfigError("finetune requires labeled videos");
    Rng rng(seed);
    nn::Adam opt;
    opt.lr = cfg.lr;
    opt.weight_decay = cfg.weight_decay;
    nn::Context ctx{true, &rng, cfg.dropout};

    // Tail classes from the labeled foreground distribution.
    std::vector<long> fg_counts(model.cfg.num_classes, 0);
    for (const auto& v : labeled)
        for (int t : v.targets.fg_indices)
            ++fg_counts[v.targets.class_label[t] - 1];
    semisup::ClassLossConfig class_cfg{
        semisup::tail_classes_by_count(fg_counts, cfg.tail_fraction),
        cfg.sharpen.theta_c};

    FinetuneResult result;
    for (int epoch = 0; epoch < cfg.finetune_epochs; ++epoch) {
        opt.lr = cosine_lr(cfg.lr, epoch, cfg.finetune_epochs);
        const bool pseudo_phase =
            opts.use_pseudo_labels && !unlabeled.empty() && epoch >= cfg.warmup_epochs;

        // (video index, is_labeled) schedule; labeled and pseudo interleave 1:1.
        std::vector<std::pair<int, bool>> schedule;
        std::vector<int> lab_order(labeled.size()), unl_order;
        for (size_t i = 0; i < labeled.size(); ++i) lab_order[i] = static_cast<int>(i);
        std::shuffle(lab_order.begin(), lab_order.end(), rng);
        std::vector<detail::StepTargets> pseudo_targets;
        if (pseudo_phase) {
            unl_order.resize(unlabeled.size());
            for (size_t i = 0; i < unlabeled.size(); ++i) unl_order[i] = static_cast<int>(i);
            std::shuffle(unl_order.begin(), unl_order.end(), rng);
            pseudo_targets.resize(unlabeled.size());
            for (size_t i = 0; i < unlabeled.size(); ++i)
                pseudo_targets[i] = detail::targets_from_pseudo(model, unlabeled[i], cfg);
        }
        size_t li = 0;
        for (size_t u = 0; u < unl_order.size() || li < lab_order.size();) {
            if (li < lab_order.size()) schedule.emplace_back(lab_order[li++], true);
            else li = 0;  // recycle labeled videos to keep the 1:1 mix
            if (u < unl_order.size()) schedule.emplace_back(unl_order[u++], false);
        }

        EpochMetrics em;
        em.epoch = epoch;
        int steps = 0;
        for (auto [idx, is_labeled] : schedule) {
            detail::StepTargets targets =
                is_labeled ? detail::targets_from_gt(labeled[idx])
                           : pseudo_targets[idx];
            if (!targets.valid) continue;
            const VideoSample& video = is_labeled ? labeled[idx] : unlabeled[idx];
            auto loss = finetune_step(model, opt, video, targets, class_cfg, cfg, ctx);
            em.l_c += loss.l_c;
            em.l_m += loss.l_m;
            em.l_ref += loss.l_ref;
            em.l_rec += loss.l_rec;
            ++steps;
        }
        if (steps > 0) {
            em.l_c /= steps; em.l_m /= steps; em.l_ref /= steps; em.l_rec /= steps;
        }
        em.val_map = validation.empty() ? 0.0 : evaluate_map(model, validation, cfg);
        result.metrics.push_back(em);
    }
    result.final_val_map =
        result.metrics.empty() ? 0.0 : result.metrics.back().val_map;
    return result;
}

// ---- localization error propagation ---------------------------------------

struct ErrorPropagationRow {
    double map_gt_masks = 0.0;
    double map_pred_masks = 0.0;
    double relative_drop() const {
        return map_gt_masks > 0.0
                   ? (map_gt_masks - map_pred_masks) / map_gt_masks
                   : 0.0;
    }
};

struct ErrorPropagationTable {
    ErrorPropagationRow parallel;
    ErrorPropagationRow sequential;
};

namespace detail {

/// Sequential-baseline skeleton: the classic two-stage pipeline that commits
/// to hard decisions between stages. Stage one binarizes the pooled mask
/// signal at a single operating point and emits the connected runs as
/// proposals; stage two classifies each proposal by majority vote over the
/// cropped snippets' hard labels (a background majority vetoes the proposal).
/// Localization errors therefore propagate: a shifted crop collects background
/// votes and the detection is lost, with no soft evidence to recover it.
inline std::vector<decode::ActionInstance> sequential_decode(
    const Mat& class_probs, const Mat& mask_probs, double duration,
    const decode::DecodeConfig& cfg) {
    const int K = static_cast<int>(class_probs.rows()) - 1;
    const int T = static_cast<int>(class_probs.cols());
    // Per-snippet foreground score: best mask evidence from any anchor.
    Vec fg(T);
    for (int i = 0; i < T; ++i) fg(i) = mask_probs.row(i).maxCoeff();
    std::vector<decode::ActionInstance> out;
    for (const auto& run : decode::detail::binary_runs(fg, 0.5)) {
        std::vector<int> votes(K + 1, 0);
        double loc_score = 0.0;
        for (int i = run.a; i <= run.b; ++i) {
            loc_score += fg(i);
            Eigen::Index arg;
            class_probs.col(i).maxCoeff(&arg);
            ++votes[static_cast<int>(arg)];
        }
        const int len = run.b - run.a + 1;
        loc_score /= len;
        int winner = static_cast<int>(
            std::max_element(votes.begin(), votes.end()) - votes.begin());
        if (winner == K) continue;  // background majority: proposal dropped
        double cls_score = 0.0;
        for (int i = run.a; i <= run.b; ++i) cls_score += class_probs(winner, i);
        cls_score /= len;
        auto [s, e] = data::snippet_run_to_seconds(run.a, run.b, T, duration);
        out.push_back({s, e, winner + 1, loc_score * cls_score});
    }
    return out;
}

}  // namespace detail

/// Contrast ground-truth-mask and predicted-mask decoding for the parallel
/// model and the sequential skeleton, reporting the mAP drop of each.
inline ErrorPropagationTable error_propagation_experiment(
    const SpotModel& model, const std::vector<VideoSample>& test_videos,
    const RunConfig& cfg) {
    nn::Context ctx;
    eval::InstanceMap par_gt, par_pred, seq_gt, seq_pred;
    std::vector<data::VideoRecord> recs;
    for (const auto& v : test_videos) {
        recs.push_back(v.rec);
        auto fwd = model.forward(v.features, ctx);
        const Mat& P = fwd.class_probs.value();
        const Mat& M_pred = fwd.mask_probs.value();
        const Mat& M_gt = v.targets.gt_mask;
        par_gt[v.rec.id] = decode::soft_nms(
            decode::decode_instances(P, M_gt, v.rec.duration, cfg.decode), cfg.decode);
        par_pred[v.rec.id] = decode::soft_nms(
            decode::decode_instances(P, M_pred, v.rec.duration, cfg.decode), cfg.decode);
        seq_gt[v.rec.id] = decode::soft_nms(
            detail::sequential_decode(P, M_gt, v.rec.duration, cfg.decode), cfg.decode);
        seq_pred[v.rec.id] = decode::soft_nms(
            detail::sequential_decode(P, M_pred, v.rec.duration, cfg.decode), cfg.decode);
    }
    auto gt = eval::ground_truth_instances(recs);
    ErrorPropagationTable out;
    out.parallel.map_gt_masks = eval::map_report(par_gt, gt, cfg.eval).average_map;
    out.parallel.map_pred_masks = eval::map_report(par_pred, gt, cfg.eval).average_map;
    out.sequential.map_gt_masks = eval::map_report(seq_gt, gt, cfg.eval).average_map;
    out.sequential.map_pred_masks = eval::map_report(seq_pred, gt, cfg.eval).average_map;
    return out;
}

}  // namespace spot::train
