#pragma once

// Name-addressed neural building blocks. Parameters live in a ParamStore
// under dotted names ("encoder.block0.attn.wq"); the add_* functions declare
// and initialize them once, the apply functions pull them onto a tape per
// forward pass. Keeping modules as free functions over names makes the
// checkpoint format and freeze groups trivial: both are name prefixes.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "sceneqa/core/error.hpp"
#include "sceneqa/core/rng.hpp"
#include "sceneqa/core/tensor.hpp"

namespace sceneqa {

template <class S>
void fill_uniform(ParamEntry<S>& e, Rng& rng, double lo, double hi) {
    for (S& v : e.value) v = static_cast<S>(rng.uniform(lo, hi));
}

template <class S>
void fill_normal(ParamEntry<S>& e, Rng& rng, double stddev) {
    for (S& v : e.value) v = static_cast<S>(rng.normal(0.0, stddev));
}

// Xavier-uniform weight plus zero bias.
template <class S>
void add_linear(ParamStore<S>& ps, const std::string& name, int in, int out, Rng& rng,
                bool bias = true) {
    auto& w = ps.add(name + ".w", in, out);
    double a = std::sqrt(6.0 / (in + out));
    fill_uniform(w, rng, -a, a);
    if (bias) ps.add(name + ".b", 1, out);
}

template <class S>
Tensor<S> linear(Tape<S>& tape, ParamStore<S>& ps, const std::string& name, const Tensor<S>& x) {
    auto y = matmul(x, tape.param(ps, name + ".w"));
    if (ps.has(name + ".b")) y = add_rowvec(y, tape.param(ps, name + ".b"));
    return y;
}

template <class S>
void add_layer_norm(ParamStore<S>& ps, const std::string& name, int dim) {
    auto& g = ps.add(name + ".g", 1, dim);
    std::fill(g.value.begin(), g.value.end(), S(1));
    ps.add(name + ".b", 1, dim);
}

template <class S>
Tensor<S> layer_norm(Tape<S>& tape, ParamStore<S>& ps, const std::string& name,
                     const Tensor<S>& x) {
    return layer_norm_rows(x, tape.param(ps, name + ".g"), tape.param(ps, name + ".b"));
}

// Two-layer GELU feed-forward, hidden width = 4x by convention.
template <class S>
void add_ffn(ParamStore<S>& ps, const std::string& name, int dim, Rng& rng, int hidden = 0) {
    if (hidden <= 0) hidden = 4 * dim;
    add_linear(ps, name + ".fc1", dim, hidden, rng);
    add_linear(ps, name + ".fc2", hidden, dim, rng);
}

template <class S>
Tensor<S> ffn(Tape<S>& tape, ParamStore<S>& ps, const std::string& name, const Tensor<S>& x) {
    return linear(tape, ps, name + ".fc2", gelu(linear(tape, ps, name + ".fc1", x)));
}

// Per-head attention probabilities captured for visualization/export.
template <class S>
struct AttentionCapture {
    int query_rows = 0;
    int key_rows = 0;
    std::vector<std::vector<S>> head_probs;  // one row-major (q x k) matrix per head

    // Head-averaged probability of query row q attending to key row k.
    double prob(int q, int k) const {
        double acc = 0.0;
        for (const auto& h : head_probs)
            acc += static_cast<double>(h[static_cast<std::size_t>(q) * key_rows + k]);
        return acc / static_cast<double>(head_probs.size());
    }
};

template <class S>
void add_attention(ParamStore<S>& ps, const std::string& name, int q_in, int kv_in, int dim,
                   Rng& rng) {
    add_linear(ps, name + ".q", q_in, dim, rng);
    // No key bias: softmax is shift-invariant per row, so a key bias could
    // never influence the output and would just sit untrained in checkpoints.
    add_linear(ps, name + ".k", kv_in, dim, rng, /*bias=*/false);
    add_linear(ps, name + ".v", kv_in, dim, rng);
    add_linear(ps, name + ".o", dim, dim, rng);
}

// Multi-head scaled dot-product attention with learned q/k/v/o maps.
// `mask`, when present, is a (q_rows x kv_rows) additive bias in value space
// (0 = visible, large negative = hidden) applied before the softmax.
template <class S>
Tensor<S> attention(Tape<S>& tape, ParamStore<S>& ps, const std::string& name,
                    const Tensor<S>& queries, const Tensor<S>& keys_values, int heads,
                    const std::vector<S>* mask = nullptr,
                    AttentionCapture<S>* capture = nullptr) {
    Tensor<S> q = linear(tape, ps, name + ".q", queries);
    Tensor<S> k = linear(tape, ps, name + ".k", keys_values);
    Tensor<S> v = linear(tape, ps, name + ".v", keys_values);
    const int dim = q.cols();
    if (heads < 1 || dim % heads != 0)
        throw ConfigError("attention '" + name + "': width " + std::to_string(dim) +
                          " not divisible by " + std::to_string(heads) + " heads");
    const int dk = dim / heads;
    const int qr = q.rows(), kr = k.rows();
    if (mask && static_cast<int>(mask->size()) != qr * kr)
        throw ShapeError("attention '" + name + "': mask size does not match q x kv rows");
    Tensor<S> mask_t;
    if (mask) mask_t = tape.constant(qr, kr, *mask);

    if (capture) {
        capture->query_rows = qr;
        capture->key_rows = kr;
        capture->head_probs.clear();
    }
    std::vector<Tensor<S>> outs;
    outs.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        Tensor<S> qh = slice_cols(q, h * dk, dk);
        Tensor<S> kh = slice_cols(k, h * dk, dk);
        Tensor<S> vh = slice_cols(v, h * dk, dk);
        Tensor<S> scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(double(dk)));
        if (mask) scores = add(scores, mask_t);
        Tensor<S> probs = softmax_rows(scores);
        if (capture) capture->head_probs.push_back(probs.values());
        outs.push_back(matmul(probs, vh));
    }
    Tensor<S> merged = heads == 1 ? outs[0] : concat_cols(outs);
    return linear(tape, ps, name + ".o", merged);
}

// Standard pre-norm residual blocks: x + Attn(LN(x)), x + FFN(LN(x)).
template <class S>
void add_self_block(ParamStore<S>& ps, const std::string& prefix, int dim, Rng& rng) {
    add_layer_norm(ps, prefix + ".ln1", dim);
    add_attention(ps, prefix + ".attn", dim, dim, dim, rng);
    add_layer_norm(ps, prefix + ".ln2", dim);
    add_ffn(ps, prefix + ".ffn", dim, rng);
}

template <class S>
Tensor<S> self_block(Tape<S>& tape, ParamStore<S>& ps, const std::string& prefix,
                     const Tensor<S>& x, int heads, const std::vector<S>* mask = nullptr,
                     AttentionCapture<S>* capture = nullptr) {
    Tensor<S> normed = layer_norm(tape, ps, prefix + ".ln1", x);
    Tensor<S> y = add(x, attention(tape, ps, prefix + ".attn", normed, normed, heads, mask,
                                   capture));
    return add(y, ffn(tape, ps, prefix + ".ffn", layer_norm(tape, ps, prefix + ".ln2", y)));
}

// Sinusoidal encoding of 3D coordinates: channel c covers axis c%3 at
// frequency band (c/3)/2, alternating sin/cos. Coordinates are expected in
// [-1,1] (normalized clouds), so the base wave spans the scene.
template <class S>
std::vector<S> sinusoidal_position_encoding(const std::vector<std::array<double, 3>>& coords,
                                            int width) {
    const double pi = 3.14159265358979323846;
    std::vector<S> out(coords.size() * static_cast<std::size_t>(width));
    for (std::size_t i = 0; i < coords.size(); ++i) {
        for (int c = 0; c < width; ++c) {
            int axis = c % 3;
            int band = c / 3;
            double omega = pi * std::pow(2.0, band / 2);
            double v = coords[i][static_cast<std::size_t>(axis)] * omega;
            out[i * static_cast<std::size_t>(width) + static_cast<std::size_t>(c)] =
                static_cast<S>(band % 2 == 0 ? std::sin(v) : std::cos(v));
        }
    }
    return out;
}

}  // namespace sceneqa
