#pragma once

// Scene compressor: a small stack of transformer blocks that condenses the
// perception outputs (encoder tokens + object queries) together with the
// instruction embedding into a fixed budget of tokens for the language model.
//
// Per block: self-attention over [queries ; instruction tokens], then
// cross-attention from the leading query rows into the projected visual
// tokens, then a feed-forward update. Before the first block the learned
// queries can be warm-started from the detector's most confident object
// queries ("query fusion").

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "sceneqa/core/tensor.hpp"
#include "sceneqa/encoder/spatial_encoder.hpp"
#include "sceneqa/nn/modules.hpp"

namespace sceneqa {

struct CompressorConfig {
    int n_q = 32;    // compressed token budget
    int blocks = 2;  // stacked block count
    int c_q = 64;    // learned query width
    int c_t = 64;    // text / self-attention width
    int c = 64;      // cross-attention (visual) width
    int c_lm = 64;   // output width, must match the language model
    int heads = 4;
    bool trainable = true;
    bool query_fusion = true;
    // Fidelity switch: plain single-head attention with no learned q/k/v/o
    // maps and no attention residual. Used by tests to pin hand-computable
    // values; the trained path always uses the standard blocks.
    bool literal_attention = false;

    void validate() const {
        if (n_q < 1) throw ConfigError("compressor: n_q must be >= 1");
        if (blocks < 1) throw ConfigError("compressor: blocks must be >= 1");
        if (c_q < 1 || c_t < 1 || c < 1 || c_lm < 1)
            throw ConfigError("compressor: widths must be positive");
        if (!literal_attention && (c_t % heads != 0 || c % heads != 0))
            throw ConfigError("compressor: c_t and c must be divisible by heads");
        if (blocks > 1 && c_t != c)
            throw ConfigError(
                "compressor: stacked blocks re-attach text each block, so c_t must equal c");
        if (literal_attention && c_t != c)
            throw ConfigError("compressor: literal attention requires c_t == c");
    }
};

template <class S>
struct CompressedQueries {
    Tensor<S> f_final;  // n_q x c, last block output
    Tensor<S> q_final;  // n_q x c_lm, projected for the language model
};

// Indices of the k largest values, in descending value order; equal values
// break toward the lower index.
template <class S>
std::vector<int> top_k_indices(const std::vector<S>& values, int k) {
    if (k < 0 || k > static_cast<int>(values.size()))
        throw ArgumentError("top_k_indices: k out of range");
    std::vector<int> order(values.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return values[static_cast<std::size_t>(a)] > values[static_cast<std::size_t>(b)];
    });
    order.resize(static_cast<std::size_t>(k));
    return order;
}

template <class S>
void add_compressor_params(ParamStore<S>& ps, const CompressorConfig& cfg, int c_enc, Rng& rng) {
    cfg.validate();
    auto& ql = ps.add("compressor.q_l", cfg.n_q, cfg.c_q);
    fill_normal(ql, rng, 0.02);
    add_linear(ps, "compressor.fusion.proj", c_enc, cfg.c_q, rng);
    add_linear(ps, "compressor.in_proj", cfg.c_q, cfg.c_t, rng);
    for (int i = 0; i < cfg.blocks; ++i) {
        std::string b = "compressor.block" + std::to_string(i);
        add_linear(ps, b + ".kv_enc", c_enc, cfg.c, rng);
        add_linear(ps, b + ".kv_q3d", c_enc, cfg.c, rng);
        if (!cfg.literal_attention) {
            add_layer_norm(ps, b + ".self_ln", cfg.c_t);
            add_attention(ps, b + ".self", cfg.c_t, cfg.c_t, cfg.c_t, rng);
            add_layer_norm(ps, b + ".cross_ln", cfg.c_t);
            add_attention(ps, b + ".cross", cfg.c_t, cfg.c, cfg.c, rng);
        }
        add_layer_norm(ps, b + ".ffn_ln", cfg.c);
        add_ffn(ps, b + ".ffn", cfg.c, rng);
    }
    add_linear(ps, "compressor.out_proj", cfg.c, cfg.c_lm, rng);
}

// Warm-start the learned queries from the n_q most confident object queries:
// Q_l' = Q_l + Linear(Q_3D[top_k(P_obj)]). Row j of the gathered block (the
// j-th most confident object) updates query row j. Confidence only picks the
// rows; gradients flow through the gathered features, not the ranking.
template <class S>
Tensor<S> query_fusion(Tape<S>& tape, ParamStore<S>& ps, const CompressorConfig& cfg,
                       const Tensor<S>& q_l, const SpatialFeatures<S>& spatial) {
    if (cfg.n_q > spatial.q3d.rows())
        throw ConfigError("query_fusion: n_q exceeds the detector's query count");
    auto idx = top_k_indices(spatial.p_obj.values(), cfg.n_q);
    auto picked = gather_rows(spatial.q3d, idx);
    return add(q_l, linear(tape, ps, "compressor.fusion.proj", picked));
}

// Plain softmax(X Yt / sqrt(d)) Y, single head, no learned maps.
template <class S>
Tensor<S> literal_attention_op(const Tensor<S>& queries, const Tensor<S>& keys_values,
                               AttentionCapture<S>* capture = nullptr) {
    auto scores = scale(matmul(queries, transpose(keys_values)),
                        1.0 / std::sqrt(static_cast<double>(queries.cols())));
    auto probs = softmax_rows(scores);
    if (capture) {
        capture->query_rows = queries.rows();
        capture->key_rows = keys_values.rows();
        capture->head_probs = {probs.values()};
    }
    return matmul(probs, keys_values);
}

// Self-attention over [queries ; text]. Text rows ride along as context and
// are dropped again after this stage by the caller.
template <class S>
Tensor<S> self_fuse(Tape<S>& tape, ParamStore<S>& ps, const CompressorConfig& cfg, int block,
                    const Tensor<S>& queries, const Tensor<S>* text) {
    Tensor<S> fc = text && text->rows() > 0
                       ? concat_rows(std::vector<Tensor<S>>{queries, *text})
                       : queries;
    if (cfg.literal_attention) return literal_attention_op(fc, fc);
    std::string b = "compressor.block" + std::to_string(block);
    auto normed = layer_norm(tape, ps, b + ".self_ln", fc);
    return add(fc, attention(tape, ps, b + ".self", normed, normed, cfg.heads));
}

// Leading n_q rows of the fused sequence attend over the projected visual
// tokens (encoder grid + object queries form one key set), then feed-forward.
template <class S>
Tensor<S> cross_attend(Tape<S>& tape, ParamStore<S>& ps, const CompressorConfig& cfg, int block,
                       const Tensor<S>& fused, const Tensor<S>& f_enc, const Tensor<S>& q3d,
                       AttentionCapture<S>* capture = nullptr) {
    std::string b = "compressor.block" + std::to_string(block);
    Tensor<S> q = fused.rows() == cfg.n_q ? fused : slice_rows(fused, 0, cfg.n_q);
    auto kv = concat_rows(std::vector<Tensor<S>>{linear(tape, ps, b + ".kv_enc", f_enc),
                                                 linear(tape, ps, b + ".kv_q3d", q3d)});
    Tensor<S> attended =
        cfg.literal_attention
            ? literal_attention_op(q, kv, capture)
            : add(q, attention<S>(tape, ps, b + ".cross",
                                  layer_norm(tape, ps, b + ".cross_ln", q), kv, cfg.heads,
                                  nullptr, capture));
    return add(attended, ffn(tape, ps, b + ".ffn", layer_norm(tape, ps, b + ".ffn_ln", attended)));
}

// Full stack: optional query fusion, in-projection, `blocks` rounds of
// self_fuse + cross_attend with the text re-attached each round, then the
// output projection into the language model's width. `capture`, when given,
// receives the final block's cross-attention probabilities.
template <class S>
CompressedQueries<S> compress(Tape<S>& tape, ParamStore<S>& ps, const CompressorConfig& cfg,
                              const Tensor<S>* text, const SpatialFeatures<S>& spatial,
                              AttentionCapture<S>* capture = nullptr) {
    cfg.validate();
    Tensor<S> q_l = tape.param(ps, "compressor.q_l");
    if (cfg.query_fusion) q_l = query_fusion(tape, ps, cfg, q_l, spatial);
    Tensor<S> cur = linear(tape, ps, "compressor.in_proj", q_l);
    for (int i = 0; i < cfg.blocks; ++i) {
        auto fused = self_fuse(tape, ps, cfg, i, cur, text);
        cur = cross_attend(tape, ps, cfg, i, fused, spatial.f_enc, spatial.q3d,
                           i + 1 == cfg.blocks ? capture : nullptr);
    }
    CompressedQueries<S> out;
    out.f_final = cur;
    out.q_final = linear(tape, ps, "compressor.out_proj", cur);
    return out;
}

}  // namespace sceneqa
