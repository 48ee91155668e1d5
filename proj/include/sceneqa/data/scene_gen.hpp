#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "sceneqa/core/error.hpp"
#include "sceneqa/core/rng.hpp"
#include "sceneqa/geometry/pointcloud.hpp"

namespace sceneqa {

// One instruction/answer pair attached to a scene. Synthetic samples carry a
// single answer; ingested benchmarks may carry several references.
struct QAItem {
    std::string instruction;
    std::vector<std::string> answers;
    std::string tag = "qa";  // qa | dense_caption | scene_caption | dialogue
};

struct SceneSample {
    std::string scene_id;
    std::string cloud_path;  // relative to the dataset root once saved
    PointCloud cloud;        // populated right after generation, empty when loaded back
    std::vector<AxisAlignedBox> boxes;
    std::vector<QAItem> qa;
    bool reduced_count = false;  // placement retries ran out before reaching the target
};

struct SceneGenConfig {
    double room_half_x = 2.0;  // floor spans [-half, half] on each axis, z = 0
    double room_half_y = 2.0;
    int min_objects = 2;
    int max_objects = 5;
    double min_half_extent = 0.15;
    double max_half_extent = 0.45;
    double min_height = 0.2;  // half extent in z; boxes sit on the floor
    double max_height = 0.5;
    double placement_margin = 0.05;  // required gap between footprints
    int place_retries = 40;
    int points_per_face = 64;  // five faces per box (bottom rests on the floor)
    int floor_points = 768;
    double jitter = 0.005;

    std::vector<std::string> categories = {"chair", "table", "sofa", "bed", "lamp", "desk"};
    std::vector<std::string> color_names = {"red", "green", "blue", "yellow", "white", "black"};
    std::vector<std::array<double, 3>> color_rgb = {{0.85, 0.1, 0.1}, {0.1, 0.7, 0.15},
                                                    {0.15, 0.2, 0.85}, {0.9, 0.85, 0.1},
                                                    {0.95, 0.95, 0.95}, {0.05, 0.05, 0.05}};

    void validate() const {
        if (room_half_x <= 0 || room_half_y <= 0)
            throw ConfigError("scene gen: room extents must be positive");
        if (min_objects < 1 || max_objects < min_objects)
            throw ConfigError("scene gen: need 1 <= min_objects <= max_objects");
        if (!(min_half_extent > 0) || max_half_extent < min_half_extent)
            throw ConfigError("scene gen: bad half-extent range");
        if (!(min_height > 0) || max_height < min_height)
            throw ConfigError("scene gen: bad height range");
        if (categories.empty() || color_names.empty())
            throw ConfigError("scene gen: palettes must be nonempty");
        if (color_rgb.size() != color_names.size())
            throw ConfigError("scene gen: color palette names and rgb values differ in count");
        if (points_per_face < 1 || floor_points < 1)
            throw ConfigError("scene gen: point counts must be positive");
        if (place_retries < 1) throw ConfigError("scene gen: place_retries must be positive");
        if (2 * max_half_extent >= 2 * std::min(room_half_x, room_half_y))
            throw ConfigError("scene gen: objects cannot exceed the room");
    }
};

inline std::string number_word(int n) {
    static const char* words[] = {"zero", "one", "two",   "three", "four", "five",
                                  "six",  "seven", "eight", "nine",  "ten"};
    if (n >= 0 && n <= 10) return words[n];
    return std::to_string(n);
}

inline std::string plural(const std::string& category) { return category + "s"; }

// Canonical viewer: standing at -y, looking toward +y, z up. The viewer's
// left is -x, "front" is the near (small y) side of the room. Recorded in the
// manifest so downstream consumers share the convention.
inline constexpr const char* kViewerConvention = "viewer at -y looking toward +y, z up";

inline std::string corner_name(int corner) {
    switch (corner) {
        case 0: return "front left";
        case 1: return "front right";
        case 2: return "back left";
        case 3: return "back right";
    }
    throw ArgumentError("corner_name: corner must be in [0,4)");
}

inline std::array<double, 2> corner_position(int corner, const SceneGenConfig& cfg) {
    double x = (corner % 2 == 0) ? -cfg.room_half_x : cfg.room_half_x;
    double y = (corner < 2) ? -cfg.room_half_y : cfg.room_half_y;
    return {x, y};
}

inline int nearest_corner(const AxisAlignedBox& box, const SceneGenConfig& cfg) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int c = 0; c < 4; ++c) {
        auto p = corner_position(c, cfg);
        double dx = box.center[0] - p[0];
        double dy = box.center[1] - p[1];
        double d = dx * dx + dy * dy;
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

inline int nearest_box_to_corner(const std::vector<AxisAlignedBox>& boxes, int corner,
                                 const SceneGenConfig& cfg) {
    auto p = corner_position(corner, cfg);
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        double dx = boxes[i].center[0] - p[0];
        double dy = boxes[i].center[1] - p[1];
        double d = dx * dx + dy * dy;
        if (d < best_d) {  // strict: ties keep the lower index
            best_d = d;
            best = static_cast<int>(i);
        }
    }
    return best;
}

// Direction of a relative to b along the dominant separation axis. Returns
// empty when the separation is too small to phrase without ambiguity.
inline std::string relative_direction(const AxisAlignedBox& a, const AxisAlignedBox& b) {
    double dx = a.center[0] - b.center[0];
    double dy = a.center[1] - b.center[1];
    if (std::max(std::fabs(dx), std::fabs(dy)) < 1e-9) return "";
    if (std::fabs(dx) >= std::fabs(dy)) return dx < 0 ? "left" : "right";
    return dy < 0 ? "in front" : "behind";
}

namespace detail {

inline bool footprints_clear(const AxisAlignedBox& a, const AxisAlignedBox& b, double margin) {
    for (int axis = 0; axis < 2; ++axis) {
        double gap = std::fabs(a.center[axis] - b.center[axis]) -
                     (a.half_extent[axis] + b.half_extent[axis]);
        if (gap >= margin) return true;
    }
    return false;
}

inline void rasterize_box(const AxisAlignedBox& box, const std::array<double, 3>& rgb,
                          const SceneGenConfig& cfg, Rng& rng, PointCloud& out) {
    // Five visible faces: +x, -x, +y, -y, top. The bottom face rests on the
    // floor and would only duplicate floor points.
    struct Face {
        int fixed_axis;
        double sign;
    };
    const Face faces[5] = {{0, 1}, {0, -1}, {1, 1}, {1, -1}, {2, 1}};
    for (const Face& f : faces) {
        int u = (f.fixed_axis + 1) % 3;
        int v = (f.fixed_axis + 2) % 3;
        for (int i = 0; i < cfg.points_per_face; ++i) {
            std::array<double, 3> p = box.center;
            p[f.fixed_axis] += f.sign * box.half_extent[f.fixed_axis];
            p[u] += rng.uniform(-box.half_extent[u], box.half_extent[u]);
            p[v] += rng.uniform(-box.half_extent[v], box.half_extent[v]);
            for (int a = 0; a < 3; ++a) p[a] += rng.normal(0.0, cfg.jitter);
            out.points.push_back(p);
            out.colors.push_back(rgb);
        }
    }
}

inline std::string join_with_and(const std::vector<std::string>& parts) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i > 0) out += (i + 1 == parts.size()) ? " and " : ", ";
        out += parts[i];
    }
    return out;
}

}  // namespace detail

// All answers below are recomputed from the placed boxes, never from the
// sampling intent, so an independent pass over (instruction, boxes) can
// reproduce every one of them.
inline std::vector<QAItem> derive_qa(const std::vector<AxisAlignedBox>& boxes,
                                     const SceneGenConfig& cfg) {
    std::vector<QAItem> qa;
    const int n_cat = static_cast<int>(cfg.categories.size());
    std::vector<int> counts(static_cast<std::size_t>(n_cat), 0);
    for (const auto& b : boxes) counts[static_cast<std::size_t>(b.category)]++;

    int first_present = -1, first_absent = -1;
    for (int c = 0; c < n_cat; ++c) {
        if (counts[std::size_t(c)] > 0 && first_present < 0) first_present = c;
        if (counts[std::size_t(c)] == 0 && first_absent < 0) first_absent = c;
    }

    for (int c = 0; c < n_cat; ++c) {
        if (counts[std::size_t(c)] == 0 && c != first_absent) continue;
        qa.push_back({"how many " + plural(cfg.categories[std::size_t(c)]) + " are there?",
                      {number_word(counts[std::size_t(c)])},
                      "qa"});
    }

    qa.push_back({"is there a " + cfg.categories[std::size_t(first_present)] + " in the room?",
                  {"yes"},
                  "qa"});
    if (first_absent >= 0)
        qa.push_back({"is there a " + cfg.categories[std::size_t(first_absent)] + " in the room?",
                      {"no"},
                      "qa"});

    for (int c = 0; c < n_cat; ++c) {
        if (counts[std::size_t(c)] != 1) continue;  // only unambiguous referents
        for (const auto& b : boxes)
            if (b.category == c)
                qa.push_back({"what color is the " + cfg.categories[std::size_t(c)] + "?",
                              {cfg.color_names[std::size_t(b.color)]},
                              "qa"});
    }

    int corner = nearest_corner(boxes[0], cfg);
    int occupant = nearest_box_to_corner(boxes, corner, cfg);
    qa.push_back({"what is in the " + corner_name(corner) + " corner of the room?",
                  {"a " + cfg.categories[std::size_t(boxes[std::size_t(occupant)].category)]},
                  "qa"});

    // Relation pair between the first two categories with a single instance;
    // both directions come out so the phrasing stays antisymmetric.
    std::vector<int> unique_cats;
    for (int c = 0; c < n_cat; ++c)
        if (counts[std::size_t(c)] == 1) unique_cats.push_back(c);
    if (unique_cats.size() >= 2) {
        auto find_box = [&](int cat) {
            for (std::size_t i = 0; i < boxes.size(); ++i)
                if (boxes[i].category == cat) return i;
            throw DataError("derive_qa: unique category vanished");
        };
        std::size_t ia = find_box(unique_cats[0]), ib = find_box(unique_cats[1]);
        std::string dir = relative_direction(boxes[ia], boxes[ib]);
        if (!dir.empty()) {
            const std::string& a = cfg.categories[std::size_t(unique_cats[0])];
            const std::string& b = cfg.categories[std::size_t(unique_cats[1])];
            qa.push_back({"where is the " + a + " relative to the " + b + "?", {dir}, "qa"});
            qa.push_back({"where is the " + b + " relative to the " + a + "?",
                          {relative_direction(boxes[ib], boxes[ia])},
                          "qa"});
        }
    }

    if (!unique_cats.empty()) {
        std::size_t i = 0;
        for (; i < boxes.size(); ++i)
            if (boxes[i].category == unique_cats[0]) break;
        const auto& b = boxes[i];
        qa.push_back({"describe the " + cfg.categories[std::size_t(b.category)],
                      {"a " + cfg.color_names[std::size_t(b.color)] + " " +
                       cfg.categories[std::size_t(b.category)] + " in the " +
                       corner_name(nearest_corner(b, cfg)) + " corner of the room"},
                      "dense_caption"});
    }

    std::vector<std::string> parts;
    for (int c = 0; c < n_cat; ++c) {
        int k = counts[std::size_t(c)];
        if (k == 0) continue;
        parts.push_back(number_word(k) + " " +
                        (k == 1 ? cfg.categories[std::size_t(c)]
                                : plural(cfg.categories[std::size_t(c)])));
    }
    qa.push_back({"describe the scene",
                  {"a room with " + detail::join_with_and(parts)},
                  "scene_caption"});

    // Multi-turn material is flattened to independent pairs; each answer still
    // stands on its own against the boxes.
    const std::string& dc = cfg.categories[std::size_t(first_present)];
    qa.push_back({"do you see a " + dc + "?", {"yes"}, "dialogue"});
    qa.push_back({"how many " + plural(dc) + " do you see?",
                  {number_word(counts[std::size_t(first_present)])},
                  "dialogue"});
    return qa;
}

inline SceneSample generate_scene(std::uint64_t seed, const SceneGenConfig& cfg) {
    cfg.validate();
    Rng rng(seed);
    SceneSample s;

    int target = rng.uniform_int(cfg.min_objects, cfg.max_objects);
    for (int i = 0; i < target; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < cfg.place_retries && !placed; ++attempt) {
            AxisAlignedBox box;
            box.category = rng.uniform_int(0, static_cast<int>(cfg.categories.size()) - 1);
            box.color = rng.uniform_int(0, static_cast<int>(cfg.color_names.size()) - 1);
            box.half_extent = {rng.uniform(cfg.min_half_extent, cfg.max_half_extent),
                               rng.uniform(cfg.min_half_extent, cfg.max_half_extent),
                               rng.uniform(cfg.min_height, cfg.max_height)};
            box.center = {rng.uniform(-cfg.room_half_x + box.half_extent[0],
                                      cfg.room_half_x - box.half_extent[0]),
                          rng.uniform(-cfg.room_half_y + box.half_extent[1],
                                      cfg.room_half_y - box.half_extent[1]),
                          box.half_extent[2]};
            bool clear = true;
            for (const auto& other : s.boxes)
                if (!detail::footprints_clear(box, other, cfg.placement_margin)) {
                    clear = false;
                    break;
                }
            if (clear) {
                s.boxes.push_back(box);
                placed = true;
            }
        }
        if (!placed) {
            s.reduced_count = true;  // stop early rather than loop forever
            break;
        }
    }
    if (s.boxes.empty())
        throw DataError("generate_scene: could not place a single object; enlarge the room");

    for (const auto& box : s.boxes)
        detail::rasterize_box(box, cfg.color_rgb[std::size_t(box.color)], cfg, rng, s.cloud);
    for (int i = 0; i < cfg.floor_points; ++i) {
        std::array<double, 3> p = {rng.uniform(-cfg.room_half_x, cfg.room_half_x),
                                   rng.uniform(-cfg.room_half_y, cfg.room_half_y), 0.0};
        p[2] += rng.normal(0.0, cfg.jitter);
        s.cloud.points.push_back(p);
        s.cloud.colors.push_back({0.5, 0.5, 0.5});
    }

    s.qa = derive_qa(s.boxes, cfg);

    char buf[32];
    std::snprintf(buf, sizeof(buf), "scene_%016llx", static_cast<unsigned long long>(seed));
    s.scene_id = buf;
    return s;
}

}  // namespace sceneqa
