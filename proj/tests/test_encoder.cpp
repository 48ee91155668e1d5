#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "sceneqa/core/grad_check.hpp"
#include "sceneqa/core/rng.hpp"
#include "sceneqa/encoder/spatial_encoder.hpp"
#include "test_util.hpp"

using namespace sceneqa;
using Catch::Approx;

namespace {

PointCloud random_cloud(Rng& rng, int n) {
    PointCloud pc;
    for (int i = 0; i < n; ++i)
        pc.points.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    return pc;
}

EncoderConfig tiny_config() {
    EncoderConfig cfg;
    cfg.n_enc = 16;
    cfg.n_queries = 8;
    cfg.width = 8;
    cfg.enc_layers = 1;
    cfg.dec_layers = 1;
    cfg.heads = 2;
    cfg.radius = 0.4;
    cfg.max_neighbors = 6;
    return cfg;
}

// Exhaustive min-cost assignment: tries every injection of ground truths
// into queries. Only feasible for small g, which is exactly its job.
double brute_force_assignment_cost(const std::vector<double>& cost, int q, int g) {
    std::vector<int> queries(static_cast<std::size_t>(q));
    std::iota(queries.begin(), queries.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> pick(static_cast<std::size_t>(g));
    // Enumerate ordered g-tuples of distinct query indices.
    std::function<void(int, double)> rec = [&](int depth, double acc) {
        if (acc >= best) return;
        if (depth == g) {
            best = acc;
            return;
        }
        for (int j = 0; j < q; ++j) {
            bool taken = false;
            for (int d = 0; d < depth; ++d)
                if (pick[static_cast<std::size_t>(d)] == j) taken = true;
            if (taken) continue;
            pick[static_cast<std::size_t>(depth)] = j;
            rec(depth + 1, acc + cost[static_cast<std::size_t>(j) * g + depth]);
        }
    };
    rec(0, 0.0);
    return best;
}

double assignment_cost(const std::vector<double>& cost, int g,
                       const std::vector<int>& assign) {
    double total = 0.0;
    for (int t = 0; t < g; ++t)
        total += cost[static_cast<std::size_t>(assign[static_cast<std::size_t>(t)]) * g + t];
    return total;
}

}  // namespace

TEST_CASE("encode produces the configured token grid deterministically") {
    EncoderConfig cfg;
    cfg.n_enc = 1024;
    cfg.n_queries = 16;
    cfg.width = 32;
    cfg.enc_layers = 1;
    cfg.dec_layers = 1;
    cfg.heads = 4;
    Rng prng(17);
    ParamStore<double> ps;
    add_spatial_encoder_params(ps, cfg, prng);
    Rng crng(3);
    auto cloud = random_cloud(crng, 4096);

    Tape<double> t1;
    auto f1 = encode(t1, ps, cfg, cloud);
    REQUIRE(f1.rows() == 1024);
    REQUIRE(f1.cols() == 32);

    Tape<double> t2;
    auto f2 = encode(t2, ps, cfg, cloud);
    REQUIRE(f1.values() == f2.values());
}

TEST_CASE("encode rejects clouds smaller than the token count") {
    auto cfg = tiny_config();
    Rng prng(1);
    ParamStore<double> ps;
    add_spatial_encoder_params(ps, cfg, prng);
    Rng crng(2);
    auto cloud = random_cloud(crng, cfg.n_enc - 1);
    Tape<double> t;
    try {
        encode(t, ps, cfg, cloud);
        FAIL("expected ArgumentError");
    } catch (const ArgumentError& e) {
        REQUIRE(std::string(e.what()).find("resample") != std::string::npos);
    }
}

TEST_CASE("isolated seed points still produce finite features") {
    auto cfg = tiny_config();
    cfg.radius = 1e-9;  // nobody has neighbors; self-inclusion must carry the day
    Rng prng(5);
    ParamStore<double> ps;
    add_spatial_encoder_params(ps, cfg, prng);
    Rng crng(6);
    auto cloud = random_cloud(crng, 24);
    Tape<double> t;
    EncodeTrace trace;
    auto f = encode(t, ps, cfg, cloud, &trace);
    for (double v : f.values()) REQUIRE(std::isfinite(v));
    for (const auto& m : trace.members) REQUIRE(m.size() == 1);
}

TEST_CASE("decode emits calibrated-range outputs of the right shape") {
    auto cfg = tiny_config();
    Rng prng(9);
    ParamStore<double> ps;
    add_spatial_encoder_params(ps, cfg, prng);
    Rng crng(10);
    auto cloud = random_cloud(crng, 40);
    Tape<double> t;
    auto sp = perceive(t, ps, cfg, cloud);
    REQUIRE(sp.q3d.rows() == cfg.n_queries);
    REQUIRE(sp.q3d.cols() == cfg.width);
    REQUIRE(sp.p_obj.rows() == cfg.n_queries);
    REQUIRE(sp.p_obj.cols() == 1);
    for (double p : sp.p_obj.values()) {
        REQUIRE(p >= 0.0);
        REQUIRE(p <= 1.0);
    }
    for (double h : sp.half_extents.values()) REQUIRE(h > 0.0);
    for (double c : sp.centers.values()) REQUIRE(std::fabs(c) < 1.0);
}

TEST_CASE("zeroed objectness head gives 0.5 everywhere") {
    auto cfg = tiny_config();
    Rng prng(13);
    ParamStore<double> ps;
    add_spatial_encoder_params(ps, cfg, prng);
    auto& w = ps.at("decoder.head_obj.w");
    std::fill(w.value.begin(), w.value.end(), 0.0);
    std::fill(ps.at("decoder.head_obj.b").value.begin(),
              ps.at("decoder.head_obj.b").value.end(), 0.0);
    Rng crng(14);
    auto cloud = random_cloud(crng, 32);
    Tape<double> t;
    auto sp = perceive(t, ps, cfg, cloud);
    for (double p : sp.p_obj.values()) REQUIRE(p == Approx(0.5).margin(1e-12));
}

TEST_CASE("hungarian_match hand cases") {
    SECTION("diagonal zeros pick the identity") {
        std::vector<double> cost = {0, 5, 5, 5, 0, 5, 5, 5, 0};
        REQUIRE(hungarian_match(cost, 3, 3) == std::vector<int>{0, 1, 2});
        REQUIRE(assignment_cost(cost, 3, hungarian_match(cost, 3, 3)) == 0.0);
    }
    SECTION("2x2 hand case") {
        std::vector<double> cost = {1, 2, 2, 1};  // rows are queries
        auto m = hungarian_match(cost, 2, 2);
        REQUIRE(m == std::vector<int>{0, 1});
        REQUIRE(assignment_cost(cost, 2, m) == 2.0);
    }
    SECTION("more truths than queries is rejected") {
        REQUIRE_THROWS_AS(hungarian_match(std::vector<double>(6, 1.0), 2, 3), ArgumentError);
    }
    SECTION("4x3 integer grid matches exhaustive search") {
        std::vector<double> cost = {4, 1, 3, 2, 0, 5, 3, 2, 2, 7, 5, 3};
        auto m = hungarian_match(cost, 4, 3);
        REQUIRE(assignment_cost(cost, 3, m) == brute_force_assignment_cost(cost, 4, 3));
    }
}

TEST_CASE("hungarian_match equals exhaustive assignment on random instances") {
    Rng rng(2024);
    for (int trial = 0; trial < 1000; ++trial) {
        int g = rng.uniform_int(1, 5);
        int q = rng.uniform_int(g, g + 4);
        std::vector<double> cost(static_cast<std::size_t>(q) * g);
        bool integers = trial % 3 == 0;  // integer costs exercise tie handling
        for (double& c : cost)
            c = integers ? static_cast<double>(rng.uniform_int(0, 9)) : rng.uniform(0.0, 10.0);
        auto m = hungarian_match(cost, q, g);
        std::set<int> uniq(m.begin(), m.end());
        REQUIRE(uniq.size() == m.size());  // injective
        REQUIRE(assignment_cost(cost, g, m) ==
                Approx(brute_force_assignment_cost(cost, q, g)).margin(1e-9));
    }
}

TEST_CASE("detection_loss analytic cases") {
    auto make_preds = [](Tape<double>& t, const std::vector<double>& centers,
                         const std::vector<double>& halves, const std::vector<double>& pobj) {
        SpatialFeatures<double> sp;
        int q = static_cast<int>(pobj.size());
        sp.q3d = t.zeros(q, 4);
        sp.f_enc = t.zeros(1, 4);
        sp.centers = t.constant(q, 3, centers);
        sp.half_extents = t.constant(q, 3, halves);
        sp.p_obj = t.constant(q, 1, pobj);
        return sp;
    };

    SECTION("exact predictions with saturated objectness give zero loss") {
        Tape<double> t;
        AxisAlignedBox box;
        box.center = {0.2, -0.1, 0.05};
        box.half_extent = {0.1, 0.2, 0.15};
        auto sp = make_preds(t, {0.2, -0.1, 0.05, 0.9, 0.9, 0.9},
                             {0.1, 0.2, 0.15, 0.3, 0.3, 0.3}, {1.0, 0.0});
        auto loss = detection_loss(t, sp, {box});
        REQUIRE(loss.item() == Approx(0.0).margin(1e-12));
    }
    SECTION("empty scene with 0.5 objectness costs ln 2") {
        Tape<double> t;
        auto sp = make_preds(t, std::vector<double>(9, 0.0), std::vector<double>(9, 0.1),
                             {0.5, 0.5, 0.5});
        auto loss = detection_loss(t, sp, {});
        REQUIRE(loss.item() == Approx(std::log(2.0)).margin(1e-12));
    }
    SECTION("matching picks the cheaper of two queries") {
        Tape<double> t;
        AxisAlignedBox box;
        box.center = {0.5, 0.5, 0.0};
        box.half_extent = {0.1, 0.1, 0.1};
        // Query 1 sits on the box; query 0 is far away. Equal objectness.
        auto sp = make_preds(t, {-0.5, -0.5, 0.0, 0.5, 0.5, 0.0},
                             {0.1, 0.1, 0.1, 0.1, 0.1, 0.1}, {0.5, 0.5});
        std::vector<int> match;
        detection_loss(t, sp, {box}, 1.0, &match);
        REQUIRE(match == std::vector<int>{1});
    }
}

TEST_CASE("full perception pipeline passes finite differences") {
    auto cfg = tiny_config();
    Rng prng(31);
    ParamStore<double> ps;
    add_spatial_encoder_params(ps, cfg, prng);
    Rng crng(32);
    auto cloud = random_cloud(crng, 24);
    AxisAlignedBox box;
    box.center = {0.25, 0.0, -0.25};
    box.half_extent = {0.2, 0.3, 0.2};

    auto report = grad_check<double>(ps, [&](Tape<double>& t) {
        auto sp = perceive(t, ps, cfg, cloud);
        return detection_loss(t, sp, {box});
    });
    for (const auto& line : report.per_param) {
        INFO(line.name);
        REQUIRE(line.max_rel_err < 1e-4);
    }
}
