#pragma once

#include <chrono>
#include <vector>

#include "sceneqa/model.hpp"

namespace sceneqa {

struct ThroughputResult {
    int tokens = 0;
    double seconds = 0.0;
    double tokens_per_s = 0.0;
};

// Wall-clock cost of autoregressive decoding, measured over forced-length
// sequences so the number of steps is identical across configurations (greedy
// decoding would stop at the first EOS, which depends on the weights).
template <class S>
ThroughputResult decode_throughput(ParamStore<S>& ps, const ModelConfig& cfg,
                                   const std::vector<S>& visual_values,
                                   const std::vector<int>& instruction, int repeats = 3) {
    if (repeats < 1) throw ArgumentError("decode_throughput: repeats must be >= 1");
    ThroughputResult out;
    auto start = std::chrono::steady_clock::now();
    for (int rep = 0; rep < repeats; ++rep) {
        std::vector<int> prefix;
        for (int t = 0; t < cfg.lm.max_len; ++t) {
            Tape<S> tape;
            auto visual = tape.constant(cfg.compressor.n_q, cfg.lm.c_lm, visual_values);
            lm_forward(tape, ps, cfg.lm, visual, instruction, prefix);
            prefix.push_back(Vocabulary::UNK);
            ++out.tokens;
        }
    }
    auto end = std::chrono::steady_clock::now();
    out.seconds = std::chrono::duration<double>(end - start).count();
    out.tokens_per_s = out.tokens / std::max(out.seconds, 1e-12);
    return out;
}

}  // namespace sceneqa
