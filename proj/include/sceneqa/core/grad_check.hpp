#pragma once

// Finite-difference gradient verification. The loss builder is rerun with
// each parameter element nudged by +-h (central differences), and the result
// is compared against the analytic gradient from one backward pass.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "sceneqa/core/error.hpp"
#include "sceneqa/core/tensor.hpp"

namespace sceneqa {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    int elements = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> per_param;
    double max_rel_err = 0.0;

    bool within(double tol) const { return max_rel_err < tol; }
};

// `build_loss` must construct a fresh graph on the given tape and return a
// scalar loss; it must be deterministic so reruns see the same function.
template <class S>
GradCheckReport grad_check(ParamStore<S>& params,
                           const std::function<Tensor<S>(Tape<S>&)>& build_loss,
                           double h = 1e-5) {
    GradCheckReport report;

    auto eval = [&]() -> double {
        Tape<S> tape;
        Tensor<S> loss = build_loss(tape);
        if (loss.rows() != 1 || loss.cols() != 1)
            throw ArgumentError("grad_check: loss builder must return a 1x1 tensor");
        double v = static_cast<double>(loss.item());
        if (!std::isfinite(v)) throw NumericError("grad_check: loss is not finite");
        return v;
    };

    // Analytic pass.
    params.zero_grads();
    {
        Tape<S> tape;
        Tensor<S> loss = build_loss(tape);
        tape.backward(loss);
    }

    for (auto& [name, entry] : params) {
        GradCheckEntry line;
        line.name = name;
        line.elements = static_cast<int>(entry.size());
        for (std::size_t i = 0; i < entry.size(); ++i) {
            S saved = entry.value[i];
            entry.value[i] = saved + static_cast<S>(h);
            double up = eval();
            entry.value[i] = saved - static_cast<S>(h);
            double down = eval();
            entry.value[i] = saved;
            double numeric = (up - down) / (2.0 * h);
            double analytic = static_cast<double>(entry.grad[i]);
            double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
            double rel = std::fabs(analytic - numeric) / denom;
            line.max_rel_err = std::max(line.max_rel_err, rel);
        }
        report.max_rel_err = std::max(report.max_rel_err, line.max_rel_err);
        report.per_param.push_back(std::move(line));
    }
    return report;
}

}  // namespace sceneqa
