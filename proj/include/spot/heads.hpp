#pragma once

// The two parallel output streams of the TAD head. Both consume the shared
// snippet embedding E and neither reads the other's output.

#include "spot/nn.hpp"

namespace spot {

struct HeadConfig {
    int embed_dim = 32;   // C
    int num_classes = 5;  // K (background is class K+1)
    int seq_len = 40;     // T, the mask head emits T channels per snippet
};

struct TadHeads {
    HeadConfig cfg;
    nn::Conv1d class_conv;              // single conv, kernel 3
    nn::Conv1d mask_conv1, mask_conv2, mask_conv3;  // kernels 3-3-1

    TadHeads() = default;
    TadHeads(nn::ParamStore& ps, const HeadConfig& c, Rng& rng)
        : cfg(c),
          class_conv(ps, "heads.class", c.embed_dim, c.num_classes + 1, 3, rng),
          mask_conv1(ps, "heads.mask1", c.embed_dim, c.embed_dim, 3, rng),
          mask_conv2(ps, "heads.mask2", c.embed_dim, c.embed_dim, 3, rng),
          mask_conv3(ps, "heads.mask3", c.embed_dim, c.seq_len, 1, rng) {}

    ag::Var class_logits(const ag::Var& embedding) const {
        return class_conv.forward(embedding);
    }

    /// (K+1, T), every column on the probability simplex.
    ag::Var classify(const ag::Var& embedding) const {
        return ag::softmax_cols(class_logits(embedding));
    }

    ag::Var mask_logits(const ag::Var& embedding) const {
        ag::Var h = ag::gelu(mask_conv1.forward(embedding));
        h = ag::gelu(mask_conv2.forward(h));
        return mask_conv3.forward(h);
    }

    /// (T, T), entry (i, t) = foreground probability of snippet i predicted
    /// from anchor snippet t.
    ag::Var predict_masks(const ag::Var& embedding) const {
        return ag::sigmoid(mask_logits(embedding));
    }
};

}  // namespace spot
