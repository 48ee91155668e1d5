#pragma once

// Checkpoints: model parameters plus optimizer moments and enough metadata
// (step, epoch, phase, plan hash) to resume a run mid-schedule. Built on the
// checksummed tensor container, so truncation and bit flips surface as
// integrity errors on load.

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "sceneqa/core/container.hpp"
#include "sceneqa/core/tensor.hpp"
#include "sceneqa/train/optimizer.hpp"

namespace sceneqa {

struct CheckpointInfo {
    long long step = 0;
    int epoch = 0;
    std::string phase;
    std::string plan_hash;
    std::vector<std::string> warnings;
};

template <class S>
void save_checkpoint(const std::string& path, const ParamStore<S>& ps, const AdamW<S>* opt,
                     const CheckpointInfo& info) {
    std::map<std::string, TensorBlob> blobs;
    const bool f64 = sizeof(S) == sizeof(double);
    for (const auto& [name, e] : ps) {
        TensorBlob b;
        b.rows = e.rows;
        b.cols = e.cols;
        b.f64 = f64;
        b.values.assign(e.value.begin(), e.value.end());
        blobs["param/" + name] = std::move(b);
    }
    if (opt) {
        for (const auto& [name, mo] : opt->moments()) {
            const auto& e = ps.at(name);
            TensorBlob m, v;
            m.rows = v.rows = e.rows;
            m.cols = v.cols = e.cols;
            m.values = mo.m;
            v.values = mo.v;
            blobs["adamw.m/" + name] = std::move(m);
            blobs["adamw.v/" + name] = std::move(v);
        }
    }
    nlohmann::json meta;
    meta["step"] = info.step;
    meta["epoch"] = info.epoch;
    meta["phase"] = info.phase;
    meta["plan_hash"] = info.plan_hash;
    save_container(path, blobs, meta.dump());
}

// Fills `ps` (which must already hold every parameter by name and shape) and,
// when given, the optimizer state. `expected_plan_hash`, if nonempty, is
// compared against the stored hash; a mismatch lands in info.warnings rather
// than failing, so deliberate plan changes stay possible.
template <class S>
CheckpointInfo load_checkpoint(const std::string& path, ParamStore<S>& ps, AdamW<S>* opt,
                               const std::string& expected_plan_hash = "") {
    std::string meta_str;
    auto blobs = load_container(path, &meta_str);

    std::vector<std::string> missing;
    for (const auto& [name, e] : ps)
        if (!blobs.count("param/" + name)) missing.push_back(name);
    if (!missing.empty()) {
        std::string list;
        for (const auto& n : missing) list += (list.empty() ? "" : ", ") + n;
        throw DataError("checkpoint " + path + " is missing tensors: " + list);
    }

    for (auto& [name, e] : ps) {
        const auto& b = blobs.at("param/" + name);
        if (b.rows != e.rows || b.cols != e.cols)
            throw ShapeError("checkpoint tensor '" + name + "' is " + std::to_string(b.rows) +
                             "x" + std::to_string(b.cols) + ", expected " +
                             std::to_string(e.rows) + "x" + std::to_string(e.cols));
        e.value.assign(b.values.begin(), b.values.end());
    }

    CheckpointInfo info;
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(meta_str);
    } catch (const nlohmann::json::exception& ex) {
        throw DataError("checkpoint " + path + ": bad metadata: " + ex.what());
    }
    info.step = meta.value("step", 0LL);
    info.epoch = meta.value("epoch", 0);
    info.phase = meta.value("phase", "");
    info.plan_hash = meta.value("plan_hash", "");
    if (!expected_plan_hash.empty() && info.plan_hash != expected_plan_hash)
        info.warnings.push_back("plan hash mismatch: checkpoint " + info.plan_hash +
                                " vs current " + expected_plan_hash +
                                "; resuming with the current plan");

    if (opt) {
        std::map<std::string, typename AdamW<S>::Moments> moments;
        for (const auto& [key, b] : blobs) {
            if (key.rfind("adamw.m/", 0) != 0) continue;
            std::string name = key.substr(8);
            auto& mo = moments[name];
            mo.m = b.values;
            auto vit = blobs.find("adamw.v/" + name);
            if (vit == blobs.end())
                throw DataError("checkpoint " + path + ": first moment without second for '" +
                                name + "'");
            mo.v = vit->second.values;
        }
        opt->restore(std::move(moments), info.step);
    }
    return info;
}

}  // namespace sceneqa
