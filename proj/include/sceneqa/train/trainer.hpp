#pragma once

// Two-phase training driver. The loop itself is model-agnostic: callers hand
// in a batch-loss closure and the trainer owns shuffling, scheduling, weight
// updates, logging, and per-epoch checkpoints.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "sceneqa/core/container.hpp"
#include "sceneqa/core/rng.hpp"
#include "sceneqa/train/checkpoint.hpp"
#include "sceneqa/train/optimizer.hpp"

namespace sceneqa {

struct TrainPlan {
    std::string phase = "finetune";  // "pretrain" or "finetune"
    int epochs = 100;
    int batch = 16;
    double lr_max = 1e-4;
    double lr_min = 1e-6;
    std::uint64_t seed = 0;
    bool compressor_trainable = true;
    bool query_fusion = true;
    bool lm_frozen = false;
    bool encoder_frozen = false;
    bool clip_gradients = true;  // global-norm 1.0 when on

    static TrainPlan pretrain() {
        TrainPlan p;
        p.phase = "pretrain";
        p.epochs = 20;
        p.lr_min = 1e-5;
        return p;
    }
    static TrainPlan finetune() { return {}; }

    void validate() const {
        if (phase != "pretrain" && phase != "finetune")
            throw ConfigError("train plan: unknown phase '" + phase + "'");
        if (epochs < 1) throw ConfigError("train plan: epochs must be >= 1");
        if (batch < 1) throw ConfigError("train plan: batch must be >= 1");
        if (lr_min > lr_max) throw ConfigError("train plan: lr_min exceeds lr_max");
    }
};

// Stable fingerprint of everything that shapes the optimization trajectory;
// stored in checkpoints so a resume under a different plan warns loudly.
inline std::string plan_hash(const TrainPlan& plan, const AdamWConfig& opt = {}) {
    std::string canon = plan.phase + "|" + std::to_string(plan.epochs) + "|" +
                        std::to_string(plan.batch) + "|" + std::to_string(plan.lr_max) + "|" +
                        std::to_string(plan.lr_min) + "|" + std::to_string(plan.seed) + "|" +
                        std::to_string(plan.compressor_trainable) +
                        std::to_string(plan.query_fusion) + std::to_string(plan.lm_frozen) +
                        std::to_string(plan.encoder_frozen) + std::to_string(plan.clip_gradients) +
                        "|" + std::to_string(opt.beta1) + "|" + std::to_string(opt.beta2) + "|" +
                        std::to_string(opt.eps) + "|" + std::to_string(opt.weight_decay);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(detail::fnv1a64(canon)));
    return buf;
}

struct TrainLogEntry {
    long long step = 0;
    std::string phase;
    double lr = 0.0;
    double loss = 0.0;
    double wall_ms = 0.0;
};

struct TrainResult {
    long long steps = 0;
    int epochs_run = 0;
    double last_loss = 0.0;
    std::string last_checkpoint;
    std::vector<TrainLogEntry> log;
    std::vector<std::string> warnings;
};

struct TrainOptions {
    std::string checkpoint_dir;  // empty = no checkpoints
    bool resume = false;
    std::ostream* log_stream = nullptr;  // line-delimited JSON records
};

template <class S>
using BatchLoss = std::function<Tensor<S>(Tape<S>&, const std::vector<int>&)>;

template <class S>
TrainResult train(ParamStore<S>& ps, const TrainPlan& plan, int dataset_size,
                  const BatchLoss<S>& loss_fn, const TrainOptions& opts = {}) {
    plan.validate();
    if (dataset_size < 1) throw ArgumentError("train: empty dataset");

    ps.set_trainable("lm.", !plan.lm_frozen);
    ps.set_trainable("encoder.", !plan.encoder_frozen);
    ps.set_trainable("decoder.", !plan.encoder_frozen);
    ps.set_trainable("compressor.", plan.compressor_trainable);

    AdamW<S> opt;
    const std::string hash = plan_hash(plan, opt.config());
    const long long steps_per_epoch = (dataset_size + plan.batch - 1) / plan.batch;
    const long long total_steps = steps_per_epoch * plan.epochs;

    TrainResult result;
    int start_epoch = 0;
    std::string latest =
        opts.checkpoint_dir.empty() ? "" : opts.checkpoint_dir + "/latest.sqtc";
    if (opts.resume) {
        if (latest.empty() || !std::filesystem::exists(latest))
            throw ArgumentError("train: resume requested but no checkpoint at '" + latest + "'");
        auto info = load_checkpoint(latest, ps, &opt, hash);
        start_epoch = info.epoch + 1;
        result.last_checkpoint = latest;
        result.warnings = info.warnings;
    }

    auto checkpoint = [&](int epoch) {
        if (opts.checkpoint_dir.empty()) return;
        CheckpointInfo info;
        info.step = opt.steps();
        info.epoch = epoch;
        info.phase = plan.phase;
        info.plan_hash = hash;
        std::string path =
            opts.checkpoint_dir + "/epoch" + std::to_string(epoch) + ".sqtc";
        save_checkpoint(path, ps, &opt, info);
        save_checkpoint(latest, ps, &opt, info);
        result.last_checkpoint = path;
    };

    std::vector<int> order(static_cast<std::size_t>(dataset_size));
    for (int epoch = start_epoch; epoch < plan.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        auto rng = Rng::substream(plan.seed, static_cast<std::uint64_t>(epoch));
        rng.shuffle(order);
        for (long long b = 0; b < steps_per_epoch; ++b) {
            auto t0 = std::chrono::steady_clock::now();
            std::size_t first = static_cast<std::size_t>(b) * plan.batch;
            std::vector<int> batch(
                order.begin() + static_cast<std::ptrdiff_t>(first),
                order.begin() + static_cast<std::ptrdiff_t>(
                                    std::min<std::size_t>(first + plan.batch, order.size())));
            Tape<S> tape;
            double lv = 0.0;
            try {
                Tensor<S> loss = loss_fn(tape, batch);
                lv = loss.item();
                if (!std::isfinite(lv)) throw NumericError("train: non-finite loss");
                tape.backward(loss);
            } catch (const NumericError& e) {
                throw NumericError(
                    std::string(e.what()) + " (aborted at step " +
                    std::to_string(opt.steps() + 1) + "; last good checkpoint: " +
                    (result.last_checkpoint.empty() ? "none" : result.last_checkpoint) + ")");
            }
            if (plan.clip_gradients) clip_global_norm(ps, 1.0);
            double lr = cosine_lr(opt.steps(), total_steps, plan.lr_max, plan.lr_min);
            opt.step(ps, lr);
            double wall_ms = std::chrono::duration<double, std::milli>(
                                 std::chrono::steady_clock::now() - t0)
                                 .count();
            result.log.push_back({opt.steps(), plan.phase, lr, lv, wall_ms});
            result.last_loss = lv;
            if (opts.log_stream)
                *opts.log_stream << "{\"step\":" << opt.steps() << ",\"phase\":\"" << plan.phase
                                 << "\",\"lr\":" << lr << ",\"loss\":" << lv
                                 << ",\"wall_ms\":" << wall_ms << "}\n";
        }
        checkpoint(epoch);
        result.epochs_run = epoch + 1;
    }
    result.steps = opt.steps();
    return result;
}

}  // namespace sceneqa
