#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "sceneqa/core/error.hpp"

namespace sceneqa {

// Raw scene signal: N points in meters, optional per-point RGB in [0,1].
struct PointCloud {
    std::vector<std::array<double, 3>> points;
    std::vector<std::array<double, 3>> colors;  // empty or same length as points

    std::size_t size() const { return points.size(); }
    bool has_colors() const { return !colors.empty(); }

    void validate() const {
        if (points.empty()) throw ArgumentError("point cloud: must hold at least one point");
        for (const auto& p : points)
            for (double c : p)
                if (!std::isfinite(c))
                    throw ArgumentError("point cloud: non-finite coordinate");
        if (!colors.empty()) {
            if (colors.size() != points.size())
                throw ArgumentError("point cloud: color count differs from point count");
            for (const auto& c : colors)
                for (double v : c)
                    if (!(v >= 0.0 && v <= 1.0))
                        throw ArgumentError("point cloud: colors must lie in [0,1]");
        }
    }
};

struct AxisAlignedBox {
    std::array<double, 3> center{0, 0, 0};
    std::array<double, 3> half_extent{0, 0, 0};  // strictly positive
    int category = -1;
    int color = -1;

    void validate() const {
        for (double h : half_extent)
            if (!(h > 0.0)) throw ArgumentError("box: half extents must be strictly positive");
    }

    bool contains(const std::array<double, 3>& p) const {
        for (int a = 0; a < 3; ++a)
            if (std::fabs(p[a] - center[a]) > half_extent[a]) return false;
        return true;
    }
};

struct NormalizeResult {
    PointCloud cloud;
    std::array<double, 3> centroid{0, 0, 0};
    double scale = 1.0;
    bool degenerate = false;  // all points identical; scale forced to 1
};

// Center on the centroid and divide by the max absolute coordinate so the
// output lies in [-1,1]^3. Returns the transform so boxes can follow.
inline NormalizeResult normalize(const PointCloud& pc) {
    pc.validate();
    NormalizeResult r;
    r.cloud = pc;
    const double n = static_cast<double>(pc.size());
    for (const auto& p : pc.points)
        for (int a = 0; a < 3; ++a) r.centroid[a] += p[a] / n;
    double max_abs = 0.0;
    for (auto& p : r.cloud.points) {
        for (int a = 0; a < 3; ++a) {
            p[a] -= r.centroid[a];
            max_abs = std::max(max_abs, std::fabs(p[a]));
        }
    }
    if (max_abs <= 0.0) {
        r.degenerate = true;
        r.scale = 1.0;
        return r;
    }
    r.scale = max_abs;
    for (auto& p : r.cloud.points)
        for (int a = 0; a < 3; ++a) p[a] /= r.scale;
    return r;
}

inline AxisAlignedBox apply_normalization(const AxisAlignedBox& box, const NormalizeResult& n) {
    AxisAlignedBox out = box;
    for (int a = 0; a < 3; ++a) {
        out.center[a] = (box.center[a] - n.centroid[a]) / n.scale;
        out.half_extent[a] = box.half_extent[a] / n.scale;
    }
    return out;
}

inline double squared_distance(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
}

// Greedy max-min farthest point sampling. First pick is `start`; every later
// pick maximizes the squared distance to the already-selected set, ties going
// to the lowest index. Deterministic given (point order, k, start).
inline std::vector<int> farthest_point_sample(const PointCloud& pc, int k, int start = 0) {
    const int n = static_cast<int>(pc.size());
    if (k < 1 || k > n)
        throw ArgumentError("farthest_point_sample: k = " + std::to_string(k) +
                            " outside [1, " + std::to_string(n) + "]");
    if (start < 0 || start >= n)
        throw ArgumentError("farthest_point_sample: start index out of range");
    std::vector<int> picked;
    picked.reserve(static_cast<std::size_t>(k));
    picked.push_back(start);
    std::vector<double> best(static_cast<std::size_t>(n),
                             std::numeric_limits<double>::infinity());
    std::vector<char> taken(static_cast<std::size_t>(n), 0);
    taken[static_cast<std::size_t>(start)] = 1;
    int last = start;
    while (static_cast<int>(picked.size()) < k) {
        int next = -1;
        double next_d = -1.0;
        for (int i = 0; i < n; ++i) {
            if (taken[static_cast<std::size_t>(i)]) continue;
            double d = squared_distance(pc.points[static_cast<std::size_t>(i)],
                                        pc.points[static_cast<std::size_t>(last)]);
            if (d < best[static_cast<std::size_t>(i)]) best[static_cast<std::size_t>(i)] = d;
            if (best[static_cast<std::size_t>(i)] > next_d) {
                next_d = best[static_cast<std::size_t>(i)];
                next = i;
            }
        }
        picked.push_back(next);
        taken[static_cast<std::size_t>(next)] = 1;
        last = next;
    }
    return picked;
}

// Subsample to at most `count` points via FPS, keeping colors aligned.
inline PointCloud subsample(const PointCloud& pc, int count, int start = 0) {
    if (static_cast<int>(pc.size()) <= count) return pc;
    auto idx = farthest_point_sample(pc, count, start);
    PointCloud out;
    out.points.reserve(idx.size());
    if (pc.has_colors()) out.colors.reserve(idx.size());
    for (int i : idx) {
        out.points.push_back(pc.points[static_cast<std::size_t>(i)]);
        if (pc.has_colors()) out.colors.push_back(pc.colors[static_cast<std::size_t>(i)]);
    }
    return out;
}

}  // namespace sceneqa
