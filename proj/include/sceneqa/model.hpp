#pragma once

// End-to-end scene question answering: raw point cloud + question in, answer
// text out. Wires the spatial encoder's features and object queries through
// the compressor into the language model's soft visual prefix.

#include <string>
#include <vector>

#include "sceneqa/compressor/compressor.hpp"
#include "sceneqa/encoder/spatial_encoder.hpp"
#include "sceneqa/geometry/pointcloud.hpp"
#include "sceneqa/lm/language_model.hpp"
#include "sceneqa/lm/vocab.hpp"

namespace sceneqa {

struct ModelConfig {
    EncoderConfig encoder;
    CompressorConfig compressor;
    LMConfig lm;
    int cloud_budget = 2048;  // point cap before encoding (farthest-point pick)

    void validate() const {
        encoder.validate();
        compressor.validate();
        lm.validate();
        if (compressor.c_lm != lm.c_lm)
            throw ConfigError("model: compressor output width " + std::to_string(compressor.c_lm) +
                              " must match the language model width " + std::to_string(lm.c_lm));
        if (compressor.query_fusion && compressor.n_q > encoder.n_queries)
            throw ConfigError("model: query fusion needs compressed token count <= detector "
                              "query count");
        if (cloud_budget < encoder.n_enc)
            throw ConfigError("model: cloud budget below the scene token count");
    }

    // CPU-trainable shape with the stock compressed-token budget.
    static ModelConfig desk(int vocab) {
        ModelConfig cfg;
        cfg.encoder.n_enc = 256;
        cfg.encoder.n_queries = 64;
        cfg.lm.vocab = vocab;
        cfg.cloud_budget = 2048;
        return cfg;
    }

    // Small enough for finite-difference checks and fast unit tests.
    static ModelConfig tiny(int vocab) {
        ModelConfig cfg;
        cfg.encoder = EncoderConfig{16, 8, 8, 1, 1, 2, 0.4, 8, false};
        cfg.compressor.n_q = 4;
        cfg.compressor.blocks = 1;
        cfg.compressor.c_q = cfg.compressor.c_t = cfg.compressor.c = cfg.compressor.c_lm = 8;
        cfg.compressor.heads = 2;
        cfg.lm.vocab = vocab;
        cfg.lm.c_lm = 8;
        cfg.lm.layers = 1;
        cfg.lm.heads = 2;
        cfg.lm.max_len = 8;
        cfg.lm.max_positions = 48;
        cfg.cloud_budget = 64;
        return cfg;
    }
};

template <class S>
void add_model_params(ParamStore<S>& ps, const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    add_spatial_encoder_params(ps, cfg.encoder, rng);
    add_compressor_params(ps, cfg.compressor, cfg.encoder.width, rng);
    // Instruction tokens reach the compressor as the language model's word
    // embeddings, bridged into the compressor's text width. The bridge lives
    // under the compressor prefix so the freeze flags treat it as part of it.
    add_linear(ps, "compressor.text_in", cfg.lm.c_lm, cfg.compressor.c_t, rng);
    add_lm_params(ps, cfg.lm, rng);
}

struct PreparedScene {
    PointCloud cloud;                  // normalized, capped, padded to the token count
    std::vector<AxisAlignedBox> boxes; // ground truth in the same normalized frame
};

inline PreparedScene prepare_scene(const PointCloud& raw,
                                   const std::vector<AxisAlignedBox>& boxes, int min_points,
                                   int budget) {
    raw.validate();
    if (budget < min_points)
        throw ArgumentError("prepare_scene: budget below the minimum point count");
    NormalizeResult n = normalize(raw);
    PreparedScene out;
    out.cloud = subsample(n.cloud, budget);
    std::size_t base = out.cloud.size();
    for (std::size_t i = 0; out.cloud.size() < std::size_t(min_points); ++i) {
        // Tiny clouds are padded by cycling; duplicates are harmless to both
        // grouping and attention.
        out.cloud.points.push_back(out.cloud.points[i % base]);
        if (out.cloud.has_colors()) out.cloud.colors.push_back(out.cloud.colors[i % base]);
    }
    for (const auto& b : boxes) out.boxes.push_back(apply_normalization(b, n));
    return out;
}

inline PointCloud prepare_cloud(const PointCloud& raw, int min_points, int budget) {
    return prepare_scene(raw, {}, min_points, budget).cloud;
}

template <class S>
struct SceneForward {
    SpatialFeatures<S> spatial;
    CompressedQueries<S> compressed;
};

// Backbone up to the language model's visual prefix. `trace` and `capture`
// expose scene-token membership and final-block cross-attention for the
// attention-export path.
template <class S>
SceneForward<S> scene_forward(Tape<S>& tape, ParamStore<S>& ps, const ModelConfig& cfg,
                              const PointCloud& prepared, const std::vector<int>& instruction,
                              EncodeTrace* trace = nullptr,
                              AttentionCapture<S>* capture = nullptr) {
    detail::check_ids(instruction, cfg.lm.vocab, "instruction");
    SceneForward<S> out;
    out.spatial = perceive(tape, ps, cfg.encoder, prepared, trace);
    if (instruction.empty()) {
        out.compressed = compress<S>(tape, ps, cfg.compressor, nullptr, out.spatial, capture);
        return out;
    }
    auto words = gather_rows(tape.param(ps, "lm.embed"), instruction);
    Tensor<S> text = linear(tape, ps, "compressor.text_in", words);
    out.compressed = compress(tape, ps, cfg.compressor, &text, out.spatial, capture);
    return out;
}

// Teacher-forced answer loss for one (scene, question, answer) triple. The
// response must terminate with EOS; the cloud must come from prepare_scene.
template <class S>
Tensor<S> qa_loss(Tape<S>& tape, ParamStore<S>& ps, const ModelConfig& cfg,
                  const PointCloud& prepared, const std::vector<int>& instruction,
                  const std::vector<int>& response) {
    auto fwd = scene_forward(tape, ps, cfg, prepared, instruction);
    return sequence_loss(tape, ps, cfg.lm, fwd.compressed.q_final, instruction, response);
}

struct QAExample {
    PointCloud cloud;  // prepared
    std::vector<int> instruction;
    std::vector<int> response;  // ends with EOS
};

template <class S>
Tensor<S> qa_batch_loss(Tape<S>& tape, ParamStore<S>& ps, const ModelConfig& cfg,
                        const std::vector<QAExample>& data, const std::vector<int>& batch) {
    if (batch.empty()) throw ArgumentError("qa_batch_loss: empty batch");
    std::vector<Tensor<S>> losses;
    losses.reserve(batch.size());
    for (int i : batch) {
        if (i < 0 || i >= static_cast<int>(data.size()))
            throw IndexError("qa_batch_loss: sample index out of range");
        const auto& ex = data[std::size_t(i)];
        losses.push_back(qa_loss(tape, ps, cfg, ex.cloud, ex.instruction, ex.response));
    }
    return mean_all(concat_rows(losses));
}

// Detection-only objective for the perception pre-training phase. Boxes must
// already live in the prepared (normalized) frame.
template <class S>
Tensor<S> detection_scene_loss(Tape<S>& tape, ParamStore<S>& ps, const ModelConfig& cfg,
                               const PreparedScene& scene) {
    auto spatial = perceive(tape, ps, cfg.encoder, scene.cloud);
    return detection_loss(tape, spatial, scene.boxes);
}

struct InferResult {
    std::string answer;
    std::vector<int> ids;
};

template <class S>
InferResult infer(ParamStore<S>& ps, const ModelConfig& cfg, const Vocabulary& vocab,
                  const PointCloud& raw, const std::string& question,
                  const DecodeOptions& opts = {}) {
    cfg.validate();
    PointCloud prepared = prepare_cloud(raw, cfg.encoder.n_enc, cfg.cloud_budget);
    std::vector<int> instruction = vocab.encode(question);
    std::vector<S> visual;
    {
        Tape<S> tape;
        auto fwd = scene_forward(tape, ps, cfg, prepared, instruction);
        visual = fwd.compressed.q_final.values();
    }
    InferResult out;
    out.ids = generate(ps, cfg.lm, cfg.compressor.n_q, visual, instruction, opts);
    out.answer = vocab.decode(out.ids);
    return out;
}

}  // namespace sceneqa
