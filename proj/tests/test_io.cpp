#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "steerlab/env.hpp"
#include "steerlab/io.hpp"
#include "steerlab/policy.hpp"
#include "steerlab/steering.hpp"
#include "steerlab/tasks.hpp"
#include "steerlab/worldmodel.hpp"

using namespace steerlab;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("steerlab_io_" + std::to_string(::getpid()) + "_" +
                std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("format_g9 gives nine significant digits and round-trips") {
    CHECK(format_g9(0.5) == "0.5");
    CHECK(format_g9(1.0 / 3.0) == "0.333333333");
    CHECK(format_g9(0.0) == "0");
    CHECK(format_g9(-1.25e-7) == "-1.25e-07");
    // num9 must be valid JSON equal to the formatted value.
    CHECK(num9(1.0 / 3.0).get<double>() == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
}

TEST_CASE("episode jsonl round-trip preserves structure to 9 digits") {
    TempDir dir;
    auto demos = generate_demos(TaskId::cup, 2, {ModeId::handle, ModeId::rim}, 3, 40);
    const std::string path = dir.file("eps.jsonl");
    save_episodes_jsonl(path, demos);
    auto loaded = load_episodes_jsonl(path);
    REQUIRE(loaded.size() == demos.size());
    for (std::size_t e = 0; e < demos.size(); ++e) {
        CHECK(loaded[e].mode == demos[e].mode);
        CHECK(loaded[e].source == demos[e].source);
        REQUIRE(loaded[e].observations.size() == demos[e].observations.size());
        REQUIRE(loaded[e].actions.size() == demos[e].actions.size());
        for (std::size_t t = 0; t < demos[e].observations.size(); ++t)
            for (std::size_t i = 0; i < Observation::kDim; ++i)
                CHECK(loaded[e].observations[t].v[i] ==
                      doctest::Approx(demos[e].observations[t].v[i]).epsilon(1e-8));
    }
    // Saving the loaded set again must be byte-identical (stable formatting).
    const std::string path2 = dir.file("eps2.jsonl");
    save_episodes_jsonl(path2, loaded);
    std::ifstream a(path), b(path2);
    std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
}

TEST_CASE("episode loader rejects inconsistent records") {
    TempDir dir;
    const std::string path = dir.file("bad.jsonl");
    {
        std::ofstream out(path);
        out << R"({"source":"demo","mode":"handle","observations":[[0,0,0,0,0,0,0,0,0,0]],)"
            << R"("actions":[[0,0,1],[0,0,1]]})" << "\n";
    }
    CHECK_THROWS_AS(load_episodes_jsonl(path), std::runtime_error);
    CHECK_THROWS_AS(load_episodes_jsonl(dir.file("missing.jsonl")), std::runtime_error);
}

TEST_CASE("policy checkpoint round-trips exactly") {
    TempDir dir;
    auto demos = generate_demos(TaskId::cup, 6, {ModeId::handle, ModeId::rim}, 7, kPlanHorizon);
    ModeMixture p = fit_policy(demos, 2, 3);
    const std::string path = dir.file("policy.json");
    save_policy(path, p);
    ModeMixture q = load_policy(path);
    REQUIRE(q.modes.size() == p.modes.size());
    CHECK(q.horizon == p.horizon);
    for (std::size_t i = 0; i < p.modes.size(); ++i) {
        CHECK(q.modes[i].mean == p.modes[i].mean);
        CHECK(q.modes[i].stddev == p.modes[i].stddev);
        CHECK(q.modes[i].weight == p.modes[i].weight);
        CHECK(q.modes[i].hint == p.modes[i].hint);
    }
    CHECK(q.cond_weight == p.cond_weight);
    CHECK(q.cond_bias == p.cond_bias);
    CHECK(q.obs_mean == p.obs_mean);
}

TEST_CASE("policy checkpoint validation catches corruption") {
    TempDir dir;
    auto demos = generate_demos(TaskId::cup, 6, {ModeId::handle, ModeId::rim}, 7, kPlanHorizon);
    ModeMixture p = fit_policy(demos, 2, 3);
    const std::string path = dir.file("policy.json");
    save_policy(path, p);
    std::ifstream in(path);
    json j;
    in >> j;
    in.close();

    SUBCASE("wrong format tag") {
        j["format"] = "something-else";
        std::ofstream(path) << j.dump();
        CHECK_THROWS_AS(load_policy(path), std::runtime_error);
    }
    SUBCASE("weights no longer sum to one") {
        j["modes"][0]["weight"] = 0.9;
        j["modes"][1]["weight"] = 0.9;
        std::ofstream(path) << j.dump();
        CHECK_THROWS_AS(load_policy(path), std::runtime_error);
    }
    SUBCASE("negative stddev") {
        j["modes"][0]["stddev"][0] = -1.0;
        std::ofstream(path) << j.dump();
        CHECK_THROWS_AS(load_policy(path), std::runtime_error);
    }
}

TEST_CASE("world model checkpoint round-trips bit-exactly at float32") {
    TempDir dir;
    WorldModelConfig cfg;
    cfg.d_h = 8;
    cfg.d_z = 2;
    cfg.enc_hidden = 8;
    cfg.prior_hidden = 8;
    cfg.dec_hidden = 8;
    WorldModelParams p = init_world_model(cfg, 5);
    const std::string manifest = dir.file("wm.json");
    const std::string blob = dir.file("wm.bin");
    save_world_model(manifest, blob, p, 5, "deadbeef");
    WorldModelParams q = load_world_model(manifest, blob);
    CHECK(q.cfg.d_h == cfg.d_h);
    CHECK(q.cfg.d_z == cfg.d_z);
    bool close = true;
    // Values pass through float32, so compare at that precision.
    p.for_each_tensor([&, i = 0](const char*, Mat& m) mutable {
        int j = 0;
        q.for_each_tensor([&](const char*, Mat& n) {
            if (j++ != i) return;
            if (((m - n).cwiseAbs().maxCoeff()) > 1e-6) close = false;
        });
        ++i;
    });
    CHECK(close);

    // Saving the loaded model must reproduce the identical blob.
    const std::string manifest2 = dir.file("wm2.json");
    const std::string blob2 = dir.file("wm2.bin");
    save_world_model(manifest2, blob2, q, 5, "deadbeef");
    std::ifstream b1(blob, std::ios::binary), b2(blob2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(b1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(b2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
}

TEST_CASE("world model checkpoint detects blob corruption") {
    TempDir dir;
    WorldModelConfig cfg;
    cfg.d_h = 8;
    cfg.d_z = 2;
    cfg.enc_hidden = 8;
    cfg.prior_hidden = 8;
    cfg.dec_hidden = 8;
    WorldModelParams p = init_world_model(cfg, 5);
    const std::string manifest = dir.file("wm.json");
    const std::string blob = dir.file("wm.bin");
    save_world_model(manifest, blob, p, 5, "");

    SUBCASE("flipped byte") {
        std::fstream f(blob, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(10);
        char c;
        f.seekg(10);
        f.get(c);
        f.seekp(10);
        f.put(static_cast<char>(c ^ 0x5a));
        f.close();
        CHECK_THROWS_AS(load_world_model(manifest, blob), std::runtime_error);
    }
    SUBCASE("truncated blob") {
        auto size = fs::file_size(blob);
        fs::resize_file(blob, size - 4);
        CHECK_THROWS_AS(load_world_model(manifest, blob), std::runtime_error);
    }
    SUBCASE("missing files") {
        CHECK_THROWS_AS(load_world_model(dir.file("nope.json"), blob), std::runtime_error);
        CHECK_THROWS_AS(load_world_model(manifest, dir.file("nope.bin")), std::runtime_error);
    }
}

TEST_CASE("trace_to_json captures the steering decision") {
    StepTrace t;
    t.observation = Observation{};
    ActionPlan plan;
    plan.actions.resize(3);
    t.candidates = {plan, plan};
    BehaviorFeatures f;
    f.grasp_succeeded = true;
    f.first_contact_region = Region::handle;
    t.narrations = {make_narration(f), make_narration(BehaviorFeatures{})};
    t.verdict.chosen_index = 0;
    t.verdict.per_candidate.resize(2);
    t.executed = true;
    t.success = true;
    t.executed_features = f;
    json j = trace_to_json(t);
    CHECK(j.at("verdict").at("chosen_index") == 0);
    CHECK(j.at("narrations").size() == 2);
    CHECK(j.at("success") == true);
    CHECK(j.at("abstained") == false);
}

TEST_CASE("fnv1a hashing is stable") {
    CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a("a") != fnv1a("b"));
    CHECK(fnv1a_hex("abc") == fnv1a_hex("abc"));
    CHECK(fnv1a_hex("abc").size() == 16);
}
