#pragma once

// Tiny decoder-only prefix language model. The compressed scene tokens and
// the instruction form a fully-visible prefix; response positions are causal.
// Trained from scratch on the template corpus, so a couple of narrow blocks
// are plenty.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "sceneqa/core/tensor.hpp"
#include "sceneqa/lm/vocab.hpp"
#include "sceneqa/nn/modules.hpp"

namespace sceneqa {

struct LMConfig {
    int vocab = 0;
    int c_lm = 64;
    int layers = 2;
    int heads = 4;
    int max_len = 24;        // response token budget during generation
    int max_positions = 96;  // learned absolute position table size

    void validate() const {
        if (vocab < 4) throw ConfigError("lm: vocab must include the reserved tokens");
        if (c_lm < 1 || layers < 1 || max_len < 0 || max_positions < 1)
            throw ConfigError("lm: sizes must be positive");
        if (c_lm % heads != 0) throw ConfigError("lm: c_lm must be divisible by heads");
    }
};

template <class S>
void add_lm_params(ParamStore<S>& ps, const LMConfig& cfg, Rng& rng) {
    cfg.validate();
    fill_normal(ps.add("lm.embed", cfg.vocab, cfg.c_lm), rng, 0.02);
    fill_normal(ps.add("lm.pos", cfg.max_positions, cfg.c_lm), rng, 0.02);
    fill_normal(ps.add("lm.seg_visual", 1, cfg.c_lm), rng, 0.02);
    for (int i = 0; i < cfg.layers; ++i)
        add_self_block(ps, "lm.block" + std::to_string(i), cfg.c_lm, rng);
    add_layer_norm(ps, "lm.out_ln", cfg.c_lm);
    add_linear(ps, "lm.head", cfg.c_lm, cfg.vocab, rng);
}

// Attention rule: prefix rows (scene tokens + instruction) see the whole
// prefix and nothing else; response rows see the prefix plus earlier
// response rows and themselves. Blocked scores get -1e9, which underflows
// to an exact zero probability after softmax's max subtraction.
template <class S>
std::vector<S> prefix_lm_mask(int total, int prefix) {
    std::vector<S> mask(static_cast<std::size_t>(total) * total, S(0));
    for (int i = 0; i < total; ++i)
        for (int j = 0; j < total; ++j)
            if (!(j < prefix || j <= i))
                mask[static_cast<std::size_t>(i) * total + j] = S(-1e9);
    return mask;
}

namespace detail {

inline void check_ids(const std::vector<int>& ids, int vocab, const char* what) {
    for (int id : ids)
        if (id < 0 || id >= vocab)
            throw ArgumentError(std::string("lm: ") + what + " id " + std::to_string(id) +
                                " outside vocabulary of size " + std::to_string(vocab));
}

}  // namespace detail

// Teacher-forced forward pass. Returns one logit row per response position:
// row 0 is the prediction made at BOS, row t the prediction after seeing
// response_prefix[0..t-1]. Shape (len(response_prefix)+1, vocab).
template <class S>
Tensor<S> lm_forward(Tape<S>& tape, ParamStore<S>& ps, const LMConfig& cfg,
                     const Tensor<S>& visual, const std::vector<int>& instruction,
                     const std::vector<int>& response_prefix) {
    cfg.validate();
    if (visual.cols() != cfg.c_lm)
        throw ShapeError("lm: visual prefix width " + std::to_string(visual.cols()) +
                         " != c_lm " + std::to_string(cfg.c_lm));
    detail::check_ids(instruction, cfg.vocab, "instruction");
    detail::check_ids(response_prefix, cfg.vocab, "response");
    if (static_cast<int>(response_prefix.size()) >= cfg.max_len && cfg.max_len > 0)
        throw ArgumentError("lm: response prefix length " +
                            std::to_string(response_prefix.size()) +
                            " exceeds max response length " + std::to_string(cfg.max_len));

    const int n_vis = visual.rows();
    const int n_ins = static_cast<int>(instruction.size());
    const int n_resp = static_cast<int>(response_prefix.size()) + 1;  // BOS first
    const int prefix = n_vis + n_ins;
    const int total = prefix + n_resp;
    if (total > cfg.max_positions)
        throw ArgumentError("lm: sequence length " + std::to_string(total) +
                            " exceeds position table " + std::to_string(cfg.max_positions));

    Tensor<S> embed = tape.param(ps, "lm.embed");
    std::vector<Tensor<S>> parts;
    parts.push_back(add_rowvec(visual, tape.param(ps, "lm.seg_visual")));
    if (n_ins > 0) parts.push_back(gather_rows(embed, instruction));
    std::vector<int> resp_ids = {Vocabulary::BOS};
    resp_ids.insert(resp_ids.end(), response_prefix.begin(), response_prefix.end());
    parts.push_back(gather_rows(embed, resp_ids));

    Tensor<S> x = parts.size() == 1 ? parts[0] : concat_rows(parts);
    x = add(x, slice_rows(tape.param(ps, "lm.pos"), 0, total));
    auto mask = prefix_lm_mask<S>(total, prefix);
    for (int i = 0; i < cfg.layers; ++i)
        x = self_block(tape, ps, "lm.block" + std::to_string(i), x, cfg.heads, &mask);
    x = layer_norm(tape, ps, "lm.out_ln", x);
    return linear(tape, ps, "lm.head", slice_rows(x, prefix, n_resp));
}

// Mean cross-entropy over the response tokens. `response` must end with EOS
// (padding after it is ignored); instruction and scene positions never
// contribute.
template <class S>
Tensor<S> sequence_loss(Tape<S>& tape, ParamStore<S>& ps, const LMConfig& cfg,
                        const Tensor<S>& visual, const std::vector<int>& instruction,
                        const std::vector<int>& response) {
    if (response.empty()) throw ArgumentError("lm: empty response has no loss");
    std::vector<int> prefix(response.begin(), response.end() - 1);
    auto logits = lm_forward(tape, ps, cfg, visual, instruction, prefix);
    std::vector<bool> keep(response.size(), false);
    for (std::size_t i = 0; i < response.size(); ++i) {
        keep[i] = true;
        if (response[i] == Vocabulary::EOS) break;
    }
    return cross_entropy(logits, response, keep);
}

enum class DecodeMode { Greedy, Beam };

struct DecodeOptions {
    DecodeMode mode = DecodeMode::Greedy;
    int beam_width = 3;
};

namespace detail {

template <class S>
std::vector<double> last_row_log_probs(const Tensor<S>& logits) {
    int v = logits.cols();
    int r = logits.rows() - 1;
    std::vector<double> lp(static_cast<std::size_t>(v));
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < v; ++c) mx = std::max(mx, static_cast<double>(logits.at(r, c)));
    double sum = 0.0;
    for (int c = 0; c < v; ++c) sum += std::exp(static_cast<double>(logits.at(r, c)) - mx);
    double lse = mx + std::log(sum);
    for (int c = 0; c < v; ++c) lp[static_cast<std::size_t>(c)] = logits.at(r, c) - lse;
    return lp;
}

}  // namespace detail

// Autoregressive decoding from BOS until EOS or the length budget. Greedy
// takes the argmax (lowest id wins ties); beam keeps `beam_width` candidates
// ranked by length-normalized log-probability with ties broken toward
// lexicographically smaller id sequences. The returned ids carry no BOS/EOS.
template <class S>
std::vector<int> generate(ParamStore<S>& ps, const LMConfig& cfg, int visual_rows,
                          const std::vector<S>& visual_values,
                          const std::vector<int>& instruction,
                          const DecodeOptions& opts = {}) {
    cfg.validate();
    if (cfg.max_len == 0) return {};
    auto forward_values = [&](const std::vector<int>& prefix) {
        Tape<S> tape;
        auto visual = tape.constant(visual_rows, cfg.c_lm, visual_values);
        return detail::last_row_log_probs(lm_forward(tape, ps, cfg, visual, instruction, prefix));
    };

    if (opts.mode == DecodeMode::Greedy) {
        std::vector<int> out;
        for (int step = 0; step < cfg.max_len; ++step) {
            auto lp = forward_values(out);
            int best = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
            if (best == Vocabulary::EOS) break;
            out.push_back(best);
        }
        return out;
    }

    if (opts.beam_width < 1) throw ArgumentError("lm: beam width must be >= 1");
    struct Beam {
        std::vector<int> ids;
        double log_prob = 0.0;
        bool done = false;
        double score() const {
            return log_prob / static_cast<double>(std::max<std::size_t>(1, ids.size() + done));
        }
    };
    auto better = [](const Beam& a, const Beam& b) {
        if (a.score() != b.score()) return a.score() > b.score();
        return a.ids < b.ids;
    };
    std::vector<Beam> beams = {{{}, 0.0, false}};
    for (int step = 0; step < cfg.max_len; ++step) {
        std::vector<Beam> next;
        bool any_live = false;
        for (const auto& b : beams) {
            if (b.done) {
                next.push_back(b);
                continue;
            }
            any_live = true;
            auto lp = forward_values(b.ids);
            for (int tok = 0; tok < cfg.vocab; ++tok) {
                Beam nb = b;
                nb.log_prob += lp[static_cast<std::size_t>(tok)];
                if (tok == Vocabulary::EOS)
                    nb.done = true;
                else
                    nb.ids.push_back(tok);
                next.push_back(std::move(nb));
            }
        }
        if (!any_live) break;
        std::sort(next.begin(), next.end(), better);
        if (static_cast<int>(next.size()) > opts.beam_width)
            next.resize(static_cast<std::size_t>(opts.beam_width));
        beams = std::move(next);
    }
    return std::min_element(beams.begin(), beams.end(),
                            [&](const Beam& a, const Beam& b) { return better(a, b); })
        ->ids;
}

}  // namespace sceneqa
