#pragma once

// AdamW with decoupled weight decay, plus the cosine learning-rate schedule
// and global-norm gradient clipping used by the trainer.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "sceneqa/core/tensor.hpp"

namespace sceneqa {

// lr_min + (lr_max - lr_min) * (1 + cos(pi * step / total)) / 2, clamped to
// lr_min once step passes total.
inline double cosine_lr(long long step, long long total_steps, double lr_max, double lr_min) {
    if (total_steps < 1) throw ArgumentError("cosine_lr: total_steps must be >= 1");
    if (step < 0) throw ArgumentError("cosine_lr: negative step");
    if (lr_min > lr_max) throw ArgumentError("cosine_lr: lr_min exceeds lr_max");
    if (step >= total_steps) return lr_min;
    double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(M_PI * frac));
}

// Scales all trainable gradients so their joint L2 norm is at most max_norm.
// Returns the pre-clip norm.
template <class S>
double clip_global_norm(ParamStore<S>& ps, double max_norm) {
    double sq = 0.0;
    for (auto& [name, e] : ps) {
        if (!e.trainable) continue;
        for (S g : e.grad) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        double s = max_norm / norm;
        for (auto& [name, e] : ps) {
            if (!e.trainable) continue;
            for (S& g : e.grad) g = static_cast<S>(g * s);
        }
    }
    return norm;
}

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.1;
};

template <class S>
class AdamW {
  public:
    struct Moments {
        std::vector<double> m, v;
    };

    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

    const AdamWConfig& config() const { return cfg_; }
    long long steps() const { return step_; }

    // w -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * w), applied to
    // trainable parameters only. Moments accumulate in double regardless of S.
    void step(ParamStore<S>& ps, double lr) {
        ++step_;
        double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (auto& [name, e] : ps) {
            if (!e.trainable) continue;
            auto& mo = moments_[name];
            if (mo.m.size() != e.size()) {
                mo.m.assign(e.size(), 0.0);
                mo.v.assign(e.size(), 0.0);
            }
            for (std::size_t i = 0; i < e.size(); ++i) {
                double g = static_cast<double>(e.grad[i]);
                mo.m[i] = cfg_.beta1 * mo.m[i] + (1.0 - cfg_.beta1) * g;
                mo.v[i] = cfg_.beta2 * mo.v[i] + (1.0 - cfg_.beta2) * g * g;
                double m_hat = mo.m[i] / bc1;
                double v_hat = mo.v[i] / bc2;
                double w = static_cast<double>(e.value[i]);
                w -= lr * (m_hat / (std::sqrt(v_hat) + cfg_.eps) + cfg_.weight_decay * w);
                e.value[i] = static_cast<S>(w);
            }
        }
    }

    std::map<std::string, Moments>& moments() { return moments_; }
    const std::map<std::string, Moments>& moments() const { return moments_; }
    void restore(std::map<std::string, Moments> moments, long long step) {
        moments_ = std::move(moments);
        step_ = step;
    }

  private:
    AdamWConfig cfg_;
    std::map<std::string, Moments> moments_;
    long long step_ = 0;
};

}  // namespace sceneqa
