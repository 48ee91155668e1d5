#pragma once

// Perception stage: encode a normalized cloud into N_enc scene tokens, decode
// learnable object queries against them, and score per-query objectness plus
// axis-aligned boxes. A small set-prediction objective (Hungarian matching on
// center distance and objectness) makes the objectness scores meaningful.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "sceneqa/core/error.hpp"
#include "sceneqa/core/rng.hpp"
#include "sceneqa/core/tensor.hpp"
#include "sceneqa/geometry/pointcloud.hpp"
#include "sceneqa/nn/modules.hpp"

namespace sceneqa {

struct EncoderConfig {
    int n_enc = 1024;      // scene token count
    int n_queries = 256;   // object query count
    int width = 64;        // feature width C
    int enc_layers = 2;
    int dec_layers = 2;
    int heads = 4;
    double radius = 0.3;   // neighborhood radius in normalized coordinates
    int max_neighbors = 16;  // cap on grouped points per seed (keeps graphs small)
    bool use_colors = false;  // append RGB to the grouping features

    void validate() const {
        if (n_enc < 1 || n_queries < 1 || width < 1)
            throw ConfigError("encoder: token/query counts and width must be positive");
        if (heads < 1 || width % heads != 0)
            throw ConfigError("encoder: width " + std::to_string(width) +
                              " must be divisible by heads " + std::to_string(heads));
        if (enc_layers < 1 || dec_layers < 1)
            throw ConfigError("encoder: layer counts must be at least 1");
        if (!(radius > 0.0)) throw ConfigError("encoder: radius must be positive");
        if (max_neighbors < 1) throw ConfigError("encoder: max_neighbors must be at least 1");
    }
};

// Where each scene token came from, for projecting attention back onto points.
struct EncodeTrace {
    std::vector<int> seed_indices;
    std::vector<std::vector<int>> members;  // per seed: grouped point indices (self included)
};

template <class S>
struct SpatialFeatures {
    Tensor<S> f_enc;         // n_enc x C
    Tensor<S> q3d;           // n_queries x C
    Tensor<S> p_obj;         // n_queries x 1, in [0,1]
    Tensor<S> centers;       // n_queries x 3, in (-1,1)
    Tensor<S> half_extents;  // n_queries x 3, strictly positive
};

template <class S>
void add_spatial_encoder_params(ParamStore<S>& ps, const EncoderConfig& cfg, Rng& rng) {
    cfg.validate();
    const int local_in = cfg.use_colors ? 6 : 3;
    add_linear(ps, "encoder.local.fc1", local_in, cfg.width, rng);
    add_linear(ps, "encoder.local.fc2", cfg.width, cfg.width, rng);
    for (int i = 0; i < cfg.enc_layers; ++i)
        add_self_block(ps, "encoder.block" + std::to_string(i), cfg.width, rng);
    add_layer_norm(ps, "encoder.out_ln", cfg.width);

    auto& q = ps.add("decoder.queries", cfg.n_queries, cfg.width);
    fill_normal(q, rng, 0.02);
    for (int i = 0; i < cfg.dec_layers; ++i) {
        std::string p = "decoder.block" + std::to_string(i);
        add_layer_norm(ps, p + ".self_ln", cfg.width);
        add_attention(ps, p + ".self", cfg.width, cfg.width, cfg.width, rng);
        add_layer_norm(ps, p + ".cross_ln", cfg.width);
        add_attention(ps, p + ".cross", cfg.width, cfg.width, cfg.width, rng);
        add_layer_norm(ps, p + ".ffn_ln", cfg.width);
        add_ffn(ps, p + ".ffn", cfg.width, rng);
    }
    add_layer_norm(ps, "decoder.out_ln", cfg.width);
    add_linear(ps, "decoder.head_obj", cfg.width, 1, rng);
    add_linear(ps, "decoder.head_center", cfg.width, 3, rng);
    add_linear(ps, "decoder.head_size", cfg.width, 3, rng);
}

// Encode a normalized cloud to n_enc scene tokens. Seeds come from FPS;
// each seed groups points within the radius (itself always included, capped
// at max_neighbors by ascending distance) and feeds offset features through a
// shared two-layer perceptron with max pooling.
template <class S>
Tensor<S> encode(Tape<S>& tape, ParamStore<S>& ps, const EncoderConfig& cfg,
                 const PointCloud& cloud, EncodeTrace* trace = nullptr) {
    cfg.validate();
    const int n = static_cast<int>(cloud.size());
    if (n < cfg.n_enc)
        throw ArgumentError("encode: cloud has " + std::to_string(n) + " points but " +
                            std::to_string(cfg.n_enc) +
                            " scene tokens were requested; resample the cloud to at least that "
                            "many points");
    if (cfg.use_colors && !cloud.has_colors())
        throw ArgumentError("encode: color features requested but the cloud carries no colors");

    std::vector<int> seeds = farthest_point_sample(cloud, cfg.n_enc, 0);
    if (trace) {
        trace->seed_indices = seeds;
        trace->members.assign(seeds.size(), {});
    }

    const double r2 = cfg.radius * cfg.radius;
    const int fdim = cfg.use_colors ? 6 : 3;
    std::vector<Tensor<S>> pooled;
    pooled.reserve(seeds.size());
    std::vector<std::pair<double, int>> near;
    for (std::size_t si = 0; si < seeds.size(); ++si) {
        const auto& seed = cloud.points[static_cast<std::size_t>(seeds[si])];
        near.clear();
        for (int i = 0; i < n; ++i) {
            double d = squared_distance(cloud.points[static_cast<std::size_t>(i)], seed);
            if (d <= r2) near.emplace_back(d, i);
        }
        std::sort(near.begin(), near.end());  // ascending distance, index breaks ties
        if (static_cast<int>(near.size()) > cfg.max_neighbors)
            near.resize(static_cast<std::size_t>(cfg.max_neighbors));
        std::vector<S> feats;
        feats.reserve(near.size() * static_cast<std::size_t>(fdim));
        for (auto& [d, i] : near) {
            const auto& p = cloud.points[static_cast<std::size_t>(i)];
            for (int a = 0; a < 3; ++a)
                feats.push_back(static_cast<S>(p[static_cast<std::size_t>(a)] -
                                               seed[static_cast<std::size_t>(a)]));
            if (cfg.use_colors)
                for (int a = 0; a < 3; ++a)
                    feats.push_back(static_cast<S>(
                        cloud.colors[static_cast<std::size_t>(i)][static_cast<std::size_t>(a)]));
            if (trace) trace->members[si].push_back(i);
        }
        Tensor<S> group = tape.constant(static_cast<int>(near.size()), fdim, std::move(feats));
        Tensor<S> h = linear(tape, ps, "encoder.local.fc2",
                             gelu(linear(tape, ps, "encoder.local.fc1", group)));
        pooled.push_back(max_over_rows(h));
    }
    Tensor<S> tokens = concat_rows(pooled);

    std::vector<std::array<double, 3>> seed_coords;
    seed_coords.reserve(seeds.size());
    for (int s : seeds) seed_coords.push_back(cloud.points[static_cast<std::size_t>(s)]);
    Tensor<S> pe = tape.constant(cfg.n_enc, cfg.width,
                                 sinusoidal_position_encoding<S>(seed_coords, cfg.width));
    Tensor<S> x = add(tokens, pe);
    for (int i = 0; i < cfg.enc_layers; ++i)
        x = self_block(tape, ps, "encoder.block" + std::to_string(i), x, cfg.heads);
    return layer_norm(tape, ps, "encoder.out_ln", x);
}

// Decode learnable queries against the scene tokens and read out objectness
// plus box parameters. Centers are tanh-bounded to the normalized cube and
// half extents exponential, so they are positive by construction.
template <class S>
SpatialFeatures<S> decode(Tape<S>& tape, ParamStore<S>& ps, const EncoderConfig& cfg,
                          const Tensor<S>& f_enc) {
    Tensor<S> q = tape.param(ps, "decoder.queries");
    for (int i = 0; i < cfg.dec_layers; ++i) {
        std::string p = "decoder.block" + std::to_string(i);
        Tensor<S> normed = layer_norm(tape, ps, p + ".self_ln", q);
        q = add(q, attention(tape, ps, p + ".self", normed, normed, cfg.heads));
        q = add(q, attention(tape, ps, p + ".cross",
                             layer_norm(tape, ps, p + ".cross_ln", q), f_enc, cfg.heads));
        q = add(q, ffn(tape, ps, p + ".ffn", layer_norm(tape, ps, p + ".ffn_ln", q)));
    }
    SpatialFeatures<S> out;
    out.f_enc = f_enc;
    out.q3d = layer_norm(tape, ps, "decoder.out_ln", q);
    out.p_obj = sigmoid(linear(tape, ps, "decoder.head_obj", out.q3d));
    out.centers = tanh_op(linear(tape, ps, "decoder.head_center", out.q3d));
    out.half_extents = exp_op(linear(tape, ps, "decoder.head_size", out.q3d));
    return out;
}

template <class S>
SpatialFeatures<S> perceive(Tape<S>& tape, ParamStore<S>& ps, const EncoderConfig& cfg,
                            const PointCloud& cloud, EncodeTrace* trace = nullptr) {
    return decode(tape, ps, cfg, encode(tape, ps, cfg, cloud, trace));
}

// Exact min-cost assignment of g ground-truth objects to q queries.
// `cost` is row-major q x g. Returns, per ground truth, its query index.
// Shortest-augmenting-path formulation with potentials, O(g * q^2).
inline std::vector<int> hungarian_match(const std::vector<double>& cost, int q, int g) {
    if (q < g)
        throw ArgumentError("hungarian_match: " + std::to_string(g) + " targets exceed " +
                            std::to_string(q) + " queries");
    if (static_cast<int>(cost.size()) != q * g)
        throw ShapeError("hungarian_match: cost size does not match q x g");
    for (double c : cost)
        if (!std::isfinite(c)) throw ArgumentError("hungarian_match: costs must be finite");
    if (g == 0) return {};

    const double inf = std::numeric_limits<double>::infinity();
    // 1-based: rows = ground truths (n), columns = queries (m).
    const int n = g, m = q;
    std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0),
        v(static_cast<std::size_t>(m) + 1, 0.0);
    std::vector<int> p(static_cast<std::size_t>(m) + 1, 0),
        way(static_cast<std::size_t>(m) + 1, 0);
    auto a = [&](int i, int j) {  // cost of truth i (1-based) at query j (1-based)
        return cost[static_cast<std::size_t>(j - 1) * g + (i - 1)];
    };
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<std::size_t>(m) + 1, inf);
        std::vector<char> used(static_cast<std::size_t>(m) + 1, 0);
        do {
            used[static_cast<std::size_t>(j0)] = 1;
            int i0 = p[static_cast<std::size_t>(j0)], j1 = -1;
            double delta = inf;
            for (int j = 1; j <= m; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                double cur = a(i0, j) - u[static_cast<std::size_t>(i0)] -
                             v[static_cast<std::size_t>(j)];
                if (cur < minv[static_cast<std::size_t>(j)]) {
                    minv[static_cast<std::size_t>(j)] = cur;
                    way[static_cast<std::size_t>(j)] = j0;
                }
                if (minv[static_cast<std::size_t>(j)] < delta) {
                    delta = minv[static_cast<std::size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= m; ++j) {
                if (used[static_cast<std::size_t>(j)]) {
                    u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
                    v[static_cast<std::size_t>(j)] -= delta;
                } else {
                    minv[static_cast<std::size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<std::size_t>(j0)] != 0);
        do {
            int j1 = way[static_cast<std::size_t>(j0)];
            p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> assign(static_cast<std::size_t>(g), -1);
    for (int j = 1; j <= m; ++j)
        if (p[static_cast<std::size_t>(j)] != 0)
            assign[static_cast<std::size_t>(p[static_cast<std::size_t>(j)]) - 1] = j - 1;
    return assign;
}

// Matching cost between detached predictions and truth boxes:
// center L1 + lambda_obj * (1 - P_obj). Exposed for tests and export.
template <class S>
std::vector<double> detection_cost(const SpatialFeatures<S>& preds,
                                   const std::vector<AxisAlignedBox>& truth,
                                   double lambda_obj = 1.0) {
    const int q = preds.q3d.rows();
    const int g = static_cast<int>(truth.size());
    const auto& centers = preds.centers.values();
    const auto& pobj = preds.p_obj.values();
    std::vector<double> cost(static_cast<std::size_t>(q) * g);
    for (int i = 0; i < q; ++i) {
        for (int j = 0; j < g; ++j) {
            double l1 = 0.0;
            for (int a = 0; a < 3; ++a)
                l1 += std::fabs(static_cast<double>(centers[static_cast<std::size_t>(i) * 3 + a]) -
                                truth[static_cast<std::size_t>(j)]
                                    .center[static_cast<std::size_t>(a)]);
            cost[static_cast<std::size_t>(i) * g + j] =
                l1 + lambda_obj * (1.0 - static_cast<double>(pobj[static_cast<std::size_t>(i)]));
        }
    }
    return cost;
}

// Set-prediction loss: Hungarian matching on the detached cost, then matched
// box L1 (mean per truth) plus objectness BCE over every query. Truth boxes
// must already live in normalized coordinates.
template <class S>
Tensor<S> detection_loss(Tape<S>& tape, const SpatialFeatures<S>& preds,
                         const std::vector<AxisAlignedBox>& truth, double lambda_obj = 1.0,
                         std::vector<int>* match_out = nullptr) {
    const int q = preds.q3d.rows();
    const int g = static_cast<int>(truth.size());
    if (g > q)
        throw ArgumentError("detection_loss: " + std::to_string(g) + " boxes exceed " +
                            std::to_string(q) + " queries");
    std::vector<S> obj_targets(static_cast<std::size_t>(q), S(0));
    Tensor<S> loss;
    if (g > 0) {
        std::vector<int> assign = hungarian_match(detection_cost(preds, truth, lambda_obj), q, g);
        if (match_out) *match_out = assign;
        std::vector<S> truth_centers, truth_halves;
        for (const auto& b : truth) {
            b.validate();
            for (int a = 0; a < 3; ++a) {
                truth_centers.push_back(static_cast<S>(b.center[static_cast<std::size_t>(a)]));
                truth_halves.push_back(static_cast<S>(b.half_extent[static_cast<std::size_t>(a)]));
            }
        }
        for (int j : assign) obj_targets[static_cast<std::size_t>(j)] = S(1);
        Tensor<S> tc = tape.constant(g, 3, std::move(truth_centers));
        Tensor<S> th = tape.constant(g, 3, std::move(truth_halves));
        Tensor<S> pc = gather_rows(preds.centers, assign);
        Tensor<S> ph = gather_rows(preds.half_extents, assign);
        Tensor<S> box_term =
            scale(add(sum_all(abs_op(sub(pc, tc))), sum_all(abs_op(sub(ph, th)))), 1.0 / g);
        loss = add(box_term, binary_cross_entropy(preds.p_obj, obj_targets));
    } else {
        if (match_out) match_out->clear();
        loss = binary_cross_entropy(preds.p_obj, obj_targets);
    }
    return loss;
}

}  // namespace sceneqa
