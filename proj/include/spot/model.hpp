#pragma once

// The full model: shared snippet encoder, parallel classification and mask
// heads, the reconstruction head, and the pretext-only position branch
// (a one-block transformer with learnable positional embedding).

#include "spot/encoder.hpp"
#include "spot/heads.hpp"

namespace spot {

struct ModelConfig {
    EncoderConfig encoder;
    int num_classes = 5;  // K
    int seq_len = 40;     // T
};

struct SpotModel {
    ModelConfig cfg;
    nn::ParamStore params;
    SnippetEncoder encoder;
    TadHeads heads;
    nn::Conv1d recon_head;  // embedding -> 2d feature dims

    ag::Var pos_embedding;  // (C, T), learnable, pretext stage only
    nn::TransformerBlock pos_block;
    nn::Conv1d pos_head;    // per-slot logits over the T position classes

    SpotModel(const ModelConfig& c, std::uint64_t seed) : cfg(c) {
        Rng rng(seed);
        encoder = SnippetEncoder(params, c.encoder, rng);
        heads = TadHeads(params,
                         HeadConfig{c.encoder.embed_dim, c.num_classes, c.seq_len},
                         rng);
        recon_head = nn::Conv1d(params, "recon", c.encoder.embed_dim,
                                c.encoder.input_dim, 1, rng);
        pos_embedding = params.add(
            "pretext.pos_embedding",
            0.02 * xavier_like(rng, c.encoder.embed_dim, c.seq_len));
        pos_block = nn::TransformerBlock(params, "pretext.block",
                                         c.encoder.embed_dim, c.encoder.heads,
                                         c.encoder.ff_hidden, rng);
        pos_head = nn::Conv1d(params, "pretext.head", c.encoder.embed_dim,
                              c.seq_len, 1, rng);
    }

    struct Forward {
        ag::Var embedding;            // E (C, T)
        ag::Var e_m, e_p;             // refinement projections
        ag::Var class_logits;         // (K+1, T)
        ag::Var class_probs;          // softmax columns
        ag::Var mask_logits;          // (T, T)
        ag::Var mask_probs;           // sigmoid
        ag::Var recon;                // (2d, T)
    };

    Forward forward(const Mat& features, const nn::Context& ctx) const {
        Forward out;
        out.embedding = encoder.embed(ag::Var::constant(features), ctx);
        std::tie(out.e_m, out.e_p) = encoder.project(out.embedding);
        out.class_logits = heads.class_logits(out.embedding);
        out.class_probs = ag::softmax_cols(out.class_logits);
        out.mask_logits = heads.mask_logits(out.embedding);
        out.mask_probs = ag::sigmoid(out.mask_logits);
        out.recon = recon_head.forward(out.embedding);
        return out;
    }

    /// Position branch for the shuffle pretext: slot-wise logits over the T
    /// position classes, returned row-per-slot (T_slots, T_classes).
    ag::Var position_logits(const ag::Var& embedding,
                            const nn::Context& ctx) const {
        ag::Var h = ag::add(embedding, pos_embedding);
        h = pos_block.forward(h, ctx);
        return ag::transpose(pos_head.forward(h));
    }

private:
    static Mat xavier_like(Rng& rng, int rows, int cols) {
        return nn::xavier(rng, rows, cols, rows, cols);
    }
};

}  // namespace spot
