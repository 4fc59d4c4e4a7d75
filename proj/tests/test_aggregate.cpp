#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>
#include <vector>

#include "steerlab/aggregate.hpp"
#include "steerlab/env.hpp"
#include "steerlab/policy.hpp"

using namespace steerlab;

namespace {

// Independent DTW oracle: plain quadratic-memory DP written separately from
// the rolling-array implementation under test.
double dtw_oracle(const std::vector<Action>& a, const std::vector<Action>& b) {
    const std::size_t n = a.size(), m = b.size();
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> dp(n + 1, std::vector<double>(m + 1, inf));
    dp[0][0] = 0.0;
    for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = 1; j <= m; ++j) {
            const double dx = a[i - 1].delta_pos.x - b[j - 1].delta_pos.x;
            const double dy = a[i - 1].delta_pos.y - b[j - 1].delta_pos.y;
            const double dg = a[i - 1].grip_cmd - b[j - 1].grip_cmd;
            const double cost = std::sqrt(dx * dx + dy * dy + dg * dg);
            dp[i][j] = cost + std::min({dp[i - 1][j], dp[i - 1][j - 1], dp[i][j - 1]});
        }
    }
    return dp[n][m];
}

std::vector<Action> scalar_seq(std::initializer_list<double> xs) {
    std::vector<Action> out;
    for (double x : xs) {
        Action a;
        a.delta_pos = {x, 0.0};
        a.grip_cmd = 0.0;
        out.push_back(a);
    }
    return out;
}

std::vector<Action> random_seq(Rng& rng, int len) {
    std::vector<Action> out(static_cast<std::size_t>(len));
    for (auto& a : out) {
        a.delta_pos = {rng.normal() * 0.02, rng.normal() * 0.02};
        a.grip_cmd = rng.uniform();
    }
    return out;
}

}  // namespace

TEST_CASE("dtw of a sequence with itself is zero") {
    Rng rng(1);
    for (int len : {1, 5, 30}) {
        auto s = random_seq(rng, len);
        CHECK(dtw_distance(s, s) == 0.0);
    }
}

TEST_CASE("dtw hand-computed examples") {
    // [1,2,3] vs [1,2,2,3]: the duplicate 2 aligns for free.
    CHECK(dtw_distance(scalar_seq({1, 2, 3}), scalar_seq({1, 2, 2, 3})) == doctest::Approx(0.0));
    // [0,0] vs [1,1]: every alignment pays |0-1| twice.
    CHECK(dtw_distance(scalar_seq({0, 0}), scalar_seq({1, 1})) == doctest::Approx(2.0));
    CHECK(dtw_distance(scalar_seq({0}), scalar_seq({5})) == doctest::Approx(5.0));
}

TEST_CASE("dtw matches the brute-force oracle on random pairs") {
    Rng rng(77);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 1 + static_cast<int>(rng.uniform_index(40));
        const int m = 1 + static_cast<int>(rng.uniform_index(40));
        auto a = random_seq(rng, n);
        auto b = random_seq(rng, m);
        CHECK(dtw_distance(a, b) == doctest::Approx(dtw_oracle(a, b)).epsilon(1e-12));
        CHECK(dtw_distance(a, b) == doctest::Approx(dtw_distance(b, a)).epsilon(1e-12));
    }
}

TEST_CASE("banded dtw is an upper bound that tightens to exact") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        auto a = random_seq(rng, 24);
        auto b = random_seq(rng, 24);
        const double exact = dtw_distance(a, b);
        double prev = std::numeric_limits<double>::infinity();
        for (int band : {1, 3, 8, 24}) {
            const double d = dtw_distance(a, b, band);
            CHECK(d >= exact - 1e-12);
            CHECK(d <= prev + 1e-12);
            prev = d;
        }
        CHECK(dtw_distance(a, b, 24) == doctest::Approx(exact).epsilon(1e-12));
    }
}

TEST_CASE("dtw rejects empty sequences and bad bands") {
    auto s = scalar_seq({1, 2});
    CHECK_THROWS_AS(dtw_distance({}, s), std::invalid_argument);
    CHECK_THROWS_AS(dtw_distance(s, {}), std::invalid_argument);
    CHECK_THROWS_AS(dtw_distance(s, s, 0), std::invalid_argument);
}

TEST_CASE("cluster_plans separates samples from two scripted modes with purity 1.0") {
    // Pipeline setup: sample 100 plans from a two-mode policy at one fixed
    // observation, then cluster with k = 2.
    auto demos = generate_demos(TaskId::cup, 15, {ModeId::handle, ModeId::rim}, 7, kPlanHorizon);
    ModeMixture mix = fit_policy(demos, 2, 3);
    auto plans = sample_plans(mix, demos[0].observations.front(), 100, 11);
    auto res = cluster_plans(plans, 2, 20, 3);
    REQUIRE(res.centers.size() == 2);
    // Purity: within each cluster all members carry the same mode.
    for (int c = 0; c < 2; ++c) {
        std::set<ModeId> modes_in_cluster;
        for (std::size_t i = 0; i < plans.size(); ++i)
            if (res.assignments[i] == c) modes_in_cluster.insert(*plans[i].mode_hint);
        CHECK(modes_in_cluster.size() == 1);
    }
    CHECK(*res.centers[0].mode_hint != *res.centers[1].mode_hint);
}

TEST_CASE("inertia history is nonincreasing across many random datasets") {
    Rng rng(909);
    for (int ds = 0; ds < 20; ++ds) {
        std::vector<ActionPlan> plans;
        const int n = 8 + static_cast<int>(rng.uniform_index(10));
        for (int i = 0; i < n; ++i) {
            ActionPlan p;
            p.actions = random_seq(rng, 12);
            plans.push_back(std::move(p));
        }
        auto res = cluster_plans(plans, 3, 15, static_cast<std::uint64_t>(ds));
        REQUIRE(!res.inertia_history.empty());
        for (std::size_t i = 1; i < res.inertia_history.size(); ++i)
            CHECK(res.inertia_history[i] <= res.inertia_history[i - 1] + 1e-9);
        CHECK(res.inertia == doctest::Approx(res.inertia_history.back()));
    }
}

TEST_CASE("k equal to the number of plans gives zero inertia") {
    Rng rng(4);
    std::vector<ActionPlan> plans;
    for (int i = 0; i < 5; ++i) {
        ActionPlan p;
        p.actions = random_seq(rng, 10);
        plans.push_back(std::move(p));
    }
    auto res = cluster_plans(plans, 5, 10, 0);
    CHECK(res.inertia == doctest::Approx(0.0));
    std::set<int> used(res.assignments.begin(), res.assignments.end());
    CHECK(used.size() == 5);
}

TEST_CASE("cluster_plans validates arguments and is deterministic") {
    Rng rng(8);
    std::vector<ActionPlan> plans;
    for (int i = 0; i < 6; ++i) {
        ActionPlan p;
        p.actions = random_seq(rng, 10);
        plans.push_back(std::move(p));
    }
    CHECK_THROWS_AS(cluster_plans(plans, 7, 10, 0), std::invalid_argument);
    CHECK_THROWS_AS(cluster_plans(plans, 0, 10, 0), std::invalid_argument);
    auto a = cluster_plans(plans, 2, 10, 42);
    auto b = cluster_plans(plans, 2, 10, 42);
    CHECK(a.assignments == b.assignments);
    CHECK(a.inertia == b.inertia);
}

TEST_CASE("nms_filter drops near-duplicate centers, keeping the earliest") {
    Rng rng(2);
    ActionPlan a, b, c;
    a.actions = random_seq(rng, 10);
    b = a;  // exact duplicate
    c.actions = random_seq(rng, 10);
    auto kept = nms_filter({a, b, c}, 1e-6);
    REQUIRE(kept.size() == 2);
    CHECK(dtw_distance(kept[0].actions, a.actions) == 0.0);
    CHECK(dtw_distance(kept[1].actions, c.actions) == 0.0);
}
