#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "steerlab/env.hpp"
#include "steerlab/verifier.hpp"

using namespace steerlab;

TEST_CASE("no-contact step is the identity apart from the gripper") {
    WorldState s;
    s.ee_pos = {0.1, 0.9};  // far from the object
    s.obj_pos = {0.5, 0.3};
    Action a;
    a.delta_pos = {0.0, 0.0};
    a.grip_cmd = 0.3;
    WorldState next = env_step(s, a, 7);
    CHECK(next.ee_pos.x == s.ee_pos.x);
    CHECK(next.ee_pos.y == s.ee_pos.y);
    CHECK(next.obj_pos.x == s.obj_pos.x);
    CHECK(next.obj_pos.y == s.obj_pos.y);
    CHECK(next.held_region == Region::none);
    CHECK(next.crush == 0.0);
    CHECK(next.ee_grip == doctest::Approx(0.3));
}

TEST_CASE("scripted handle approach grasps the handle without crush") {
    EpisodeRecord ep = run_scripted_episode(ModeId::handle, 42, 64);
    // Replay to inspect the final world state.
    WorldState s = reset_state(42);
    Rng noise(derive_seed(42, 0x6e6f697365ULL));
    for (int t = 0; t < 64; ++t)
        s = env_step(s, ep.actions[static_cast<std::size_t>(t)],
                     derive_seed(42, 0x73746570ULL, static_cast<std::uint64_t>(t)));
    CHECK(s.held_region == Region::handle);
    CHECK(s.crush == 0.0);
}

TEST_CASE("scripted middle squeeze accumulates crush past the heavy band") {
    WorldState s = reset_state(9);
    Rng noise(derive_seed(9, 0x6e6f697365ULL));
    for (int t = 0; t < kEpisodeHorizon; ++t) {
        Action a = script_action(ModeId::middle, s, t, noise);
        s = env_step(s, a, derive_seed(9, 0x73746570ULL, static_cast<std::uint64_t>(t)));
    }
    EnvConfig cfg;
    CHECK(s.held_region == Region::middle);
    CHECK(s.crush > cfg.crush_heavy);
}

TEST_CASE("observe is a deterministic 10-dim projection") {
    WorldState s = reset_state(3);
    Observation a = observe(s);
    Observation b = observe(s);
    CHECK(a.v == b.v);
    CHECK(Observation::kDim == 10);

    s.dropped = true;
    CHECK(observe(s).v[9] == 1.0);
}

TEST_CASE("canonical reset observation golden value") {
    // Frozen from a single evaluation of observe(reset_state(0)).
    Observation o = observe(reset_state(0));
    CHECK(o.ee_x() == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(o.ee_y() == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(o.ee_grip() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(o.upright() == 1.0);
    CHECK(o.crush() == 0.0);
    CHECK(o.dropped() == 0.0);
    // Object position stays inside its reset box.
    CHECK(o.obj_x() >= 0.45);
    CHECK(o.obj_x() <= 0.55);
    CHECK(o.obj_y() >= 0.25);
    CHECK(o.obj_y() <= 0.35);
    // sin/cos encoding is unit norm.
    CHECK(o.v[5] * o.v[5] + o.v[6] * o.v[6] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("generate_demos honors counts, determinism and mode labels") {
    auto demos = generate_demos(TaskId::cup, 50, {ModeId::handle, ModeId::rim}, 17);
    CHECK(demos.size() == 100);
    int handle_count = 0;
    for (const auto& ep : demos) {
        auto f = extract_features(ep.observations);
        if (ep.mode == ModeId::handle) {
            ++handle_count;
            CHECK(f.first_contact_region == Region::handle);
            CHECK(f.grasp_succeeded);
        } else {
            CHECK(f.first_contact_region == Region::rim);
        }
    }
    CHECK(handle_count == 50);

    CHECK(generate_demos(TaskId::cup, 0, {ModeId::handle}, 17).empty());

    auto again = generate_demos(TaskId::cup, 50, {ModeId::handle, ModeId::rim}, 17);
    REQUIRE(again.size() == demos.size());
    for (std::size_t i = 0; i < demos.size(); ++i) {
        CHECK(demos[i].observations.back().v == again[i].observations.back().v);
    }

    CHECK_THROWS_AS(generate_demos(TaskId::cup, 1, {ModeId::edge}, 0), std::invalid_argument);
    CHECK_THROWS_AS(generate_demos(TaskId::cup, 1, {}, 0), std::invalid_argument);
}

TEST_CASE("step determinism is bit-exact") {
    WorldState s = reset_state(5);
    Action a;
    a.delta_pos = {0.02, -0.03};
    a.grip_cmd = 0.4;
    WorldState x = env_step(s, a, 123);
    WorldState y = env_step(s, a, 123);
    CHECK(x.ee_pos.x == y.ee_pos.x);
    CHECK(x.ee_pos.y == y.ee_pos.y);
    CHECK(x.obj_pos.x == y.obj_pos.x);
    CHECK(x.crush == y.crush);
    CHECK(x.held_region == y.held_region);
}

TEST_CASE("crush is monotone nondecreasing along any trajectory") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        WorldState s = reset_state(seed);
        Rng rng(seed);
        double prev = s.crush;
        for (int t = 0; t < 100; ++t) {
            Action a;
            a.delta_pos = {rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05)};
            a.grip_cmd = rng.uniform();
            s = env_step(s, a, derive_seed(seed, 1, static_cast<std::uint64_t>(t)));
            CHECK(s.crush >= prev);
            prev = s.crush;
        }
    }
}

TEST_CASE("distinct scripted modes produce distinct contact regions") {
    for (ModeId m : {ModeId::handle, ModeId::rim, ModeId::interior}) {
        auto ep = run_scripted_episode(m, 21);
        auto f = extract_features(ep.observations);
        CHECK(region_name(f.first_contact_region) == mode_name(m));
    }
}

TEST_CASE("topple script knocks the object over") {
    auto ep = run_scripted_episode(ModeId::topple, 33, 64);
    auto f = extract_features(ep.observations);
    CHECK(f.toppled);
    CHECK_FALSE(f.grasp_succeeded);
}
