#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "steerlab/rng.hpp"

namespace steerlab {

enum class Region { none, handle, rim, interior, edge, middle };

inline const char* region_name(Region r) {
    switch (r) {
        case Region::none: return "none";
        case Region::handle: return "handle";
        case Region::rim: return "rim";
        case Region::interior: return "interior";
        case Region::edge: return "edge";
        case Region::middle: return "middle";
    }
    return "none";
}

inline Region region_from_name(const std::string& s) {
    if (s == "none") return Region::none;
    if (s == "handle") return Region::handle;
    if (s == "rim") return Region::rim;
    if (s == "interior") return Region::interior;
    if (s == "edge") return Region::edge;
    if (s == "middle") return Region::middle;
    throw std::invalid_argument("unknown region: " + s);
}

struct Vec2 {
    double x = 0.0, y = 0.0;
    Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    double norm() const { return std::hypot(x, y); }
    double inf_norm() const { return std::max(std::abs(x), std::abs(y)); }
};

struct WorldState {
    Vec2 ee_pos{0.5, 0.7};
    double ee_grip = 1.0;  // 0 closed, 1 open
    Vec2 obj_pos{0.5, 0.3};
    double obj_yaw = 0.0;
    bool obj_upright = true;
    double crush = 0.0;  // monotone within an episode
    Region held_region = Region::none;
    bool dropped = false;
};

struct Observation {
    // proprio(3): ee_x, ee_y, ee_grip
    // obj_feat(4): obj_x, obj_y, sin(yaw), cos(yaw)
    // flags(3): upright, crush, dropped
    static constexpr int kDim = 10;
    std::array<double, kDim> v{};

    double ee_x() const { return v[0]; }
    double ee_y() const { return v[1]; }
    double ee_grip() const { return v[2]; }
    double obj_x() const { return v[3]; }
    double obj_y() const { return v[4]; }
    double upright() const { return v[7]; }
    double crush() const { return v[8]; }
    double dropped() const { return v[9]; }
};

struct Action {
    Vec2 delta_pos{0.0, 0.0};
    double grip_cmd = 1.0;
};

struct EnvConfig {
    double max_step = 0.05;
    double grip_close_threshold = 0.5;
    double region_radius = 0.05;
    double topple_radius = 0.045;
    double topple_speed = 0.03;
    double crush_tight_grip = 0.35;
    double crush_rate = 0.02;
    double drop_height = 0.5;   // ee y above which an open-while-held drops
    double lift_high = 0.7;     // obj y separating low/high lifts
    double crush_light = 0.05;  // crush in (light, heavy) bands
    double crush_heavy = 0.3;
};

// Region anchors relative to the object origin. Offsets are spaced so
// every region is identifiable from the ee-object offset alone.
inline Vec2 region_offset(Region r) {
    switch (r) {
        case Region::handle: return {-0.08, 0.0};
        case Region::rim: return {0.0, 0.08};
        case Region::interior: return {0.08, 0.0};
        case Region::edge: return {0.0, -0.08};
        case Region::middle: return {0.0, 0.0};
        case Region::none: break;
    }
    return {0.0, 0.0};
}

inline bool region_crushes(Region r) { return r == Region::middle; }

constexpr std::array<Region, 5> kGraspRegions = {
    Region::handle, Region::rim, Region::interior, Region::edge, Region::middle};

inline Vec2 region_anchor(const WorldState& s, Region r) {
    return s.obj_pos + region_offset(r);
}

inline double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

inline Action clamp_action(Action a, const EnvConfig& cfg = {}) {
    a.delta_pos.x = std::clamp(a.delta_pos.x, -cfg.max_step, cfg.max_step);
    a.delta_pos.y = std::clamp(a.delta_pos.y, -cfg.max_step, cfg.max_step);
    a.grip_cmd = clamp01(a.grip_cmd);
    return a;
}

inline double region_drop_probability(Region r) {
    switch (r) {
        case Region::edge: return 0.4;
        default: return 0.0;
    }
}

inline WorldState env_step(const WorldState& state, const Action& raw_action,
                           std::uint64_t rng_seed, const EnvConfig& cfg = {}) {
    const Action action = clamp_action(raw_action, cfg);
    WorldState s = state;

    Vec2 new_pos = s.ee_pos + action.delta_pos;
    new_pos.x = clamp01(new_pos.x);
    new_pos.y = clamp01(new_pos.y);
    const Vec2 moved = new_pos - s.ee_pos;
    s.ee_pos = new_pos;
    s.ee_grip = action.grip_cmd;

    const bool closing = s.ee_grip < cfg.grip_close_threshold;

    if (s.held_region != Region::none) {
        if (!closing) {
            // Release; a high release may drop the object.
            if (s.ee_pos.y > cfg.drop_height) {
                Rng rng(derive_seed(rng_seed, 0x64726f70ULL));
                if (rng.bernoulli(region_drop_probability(s.held_region))) {
                    s.dropped = true;
                    s.obj_pos.y = 0.3;  // falls back to the table band
                }
            }
            if (!s.dropped) s.obj_pos = s.ee_pos - region_offset(s.held_region);
            s.held_region = Region::none;
        } else {
            s.obj_pos = s.ee_pos - region_offset(s.held_region);
            if (region_crushes(s.held_region) && s.ee_grip < cfg.crush_tight_grip) {
                s.crush = clamp01(s.crush + cfg.crush_rate);
            }
        }
    } else if (s.obj_upright && !s.dropped) {
        double best = cfg.region_radius;
        Region hit = Region::none;
        for (Region r : kGraspRegions) {
            const double d = (s.ee_pos - region_anchor(s, r)).norm();
            if (d < best) {
                best = d;
                hit = r;
            }
        }
        if (closing && hit != Region::none) {
            s.held_region = hit;
            s.obj_pos = s.ee_pos - region_offset(hit);
        } else if (!closing && moved.norm() > cfg.topple_speed &&
                   (s.ee_pos - s.obj_pos).norm() < cfg.topple_radius) {
            s.obj_upright = false;
        }
    }

    return s;
}

inline Observation observe(const WorldState& s) {
    Observation o;
    o.v = {s.ee_pos.x,          s.ee_pos.y,        s.ee_grip,
           s.obj_pos.x,         s.obj_pos.y,       std::sin(s.obj_yaw),
           std::cos(s.obj_yaw), s.obj_upright ? 1.0 : 0.0,
           s.crush,             s.dropped ? 1.0 : 0.0};
    return o;
}

// ---------------------------------------------------------------------------
// Tasks and scripted demonstration controllers.

enum class TaskId { cup, bag };

inline const char* task_name(TaskId t) { return t == TaskId::cup ? "cup" : "bag"; }

inline TaskId task_from_name(const std::string& s) {
    if (s == "cup") return TaskId::cup;
    if (s == "bag") return TaskId::bag;
    throw std::invalid_argument("unknown task: " + s);
}

// A demonstration mode is a grasp region plus an optional failure script.
enum class ModeId { handle, rim, interior, edge, middle, topple };

inline const char* mode_name(ModeId m) {
    switch (m) {
        case ModeId::handle: return "handle";
        case ModeId::rim: return "rim";
        case ModeId::interior: return "interior";
        case ModeId::edge: return "edge";
        case ModeId::middle: return "middle";
        case ModeId::topple: return "topple";
    }
    return "handle";
}

inline ModeId mode_from_name(const std::string& s) {
    if (s == "handle") return ModeId::handle;
    if (s == "rim") return ModeId::rim;
    if (s == "interior") return ModeId::interior;
    if (s == "edge") return ModeId::edge;
    if (s == "middle") return ModeId::middle;
    if (s == "topple") return ModeId::topple;
    throw std::invalid_argument("unknown mode: " + s);
}

inline std::vector<ModeId> default_modes(TaskId task) {
    if (task == TaskId::cup)
        return {ModeId::handle, ModeId::rim, ModeId::interior};
    return {ModeId::edge, ModeId::middle};
}

struct ScriptConfig {
    int approach_steps = 40;
    int close_steps = 8;
    double approach_gain = 0.12;
    double lift_target = 0.85;
    double closed_grip = 0.2;
    double noise = 0.002;
};

// One step of the scripted demonstration controller. Proportional approach
// to the region anchor, close, then lift straight up.
inline Action script_action(ModeId mode, const WorldState& s, int t, Rng& rng,
                            const ScriptConfig& sc = {}, const EnvConfig& cfg = {}) {
    Action a;
    if (mode == ModeId::topple) {
        // Drive through the object at speed with the gripper open.
        Vec2 to_obj = s.obj_pos - s.ee_pos;
        a.delta_pos = {std::clamp(to_obj.x, -cfg.max_step, cfg.max_step),
                       std::clamp(to_obj.y, -cfg.max_step, cfg.max_step)};
        a.grip_cmd = 1.0;
    } else {
        const Region region = region_from_name(mode_name(mode));
        if (t < sc.approach_steps) {
            const Vec2 target = region_anchor(s, region);
            a.delta_pos = (target - s.ee_pos) * sc.approach_gain;
            a.grip_cmd = 1.0;
        } else if (t < sc.approach_steps + sc.close_steps) {
            a.delta_pos = {0.0, 0.0};
            a.grip_cmd = sc.closed_grip;
        } else {
            const double dy = std::clamp(sc.lift_target - s.ee_pos.y, -cfg.max_step, cfg.max_step);
            a.delta_pos = {0.0, dy};
            a.grip_cmd = sc.closed_grip;
        }
    }
    a.delta_pos.x += sc.noise * rng.normal();
    a.delta_pos.y += sc.noise * rng.normal();
    return clamp_action(a, cfg);
}

inline WorldState reset_state(std::uint64_t rng_seed) {
    Rng rng(derive_seed(rng_seed, 0x7265736574ULL));
    WorldState s;
    s.ee_pos = {0.5, 0.7};
    s.ee_grip = 1.0;
    s.obj_pos = {rng.uniform(0.45, 0.55), rng.uniform(0.25, 0.35)};
    s.obj_yaw = rng.uniform(-0.5, 0.5);
    return s;
}

enum class EpisodeSource { demo, policy_rollout };

struct BehaviorFeatures;  // defined in verifier.hpp

struct EpisodeRecord {
    std::vector<Observation> observations;  // length H + 1
    std::vector<Action> actions;            // length H
    // behavior label is recomputed on demand via extract_features
    ModeId mode = ModeId::handle;
    EpisodeSource source = EpisodeSource::demo;
};

constexpr int kEpisodeHorizon = 140;
constexpr int kPlanHorizon = 64;

inline EpisodeRecord run_scripted_episode(ModeId mode, std::uint64_t seed,
                                          int horizon = kEpisodeHorizon,
                                          const ScriptConfig& sc = {},
                                          const EnvConfig& cfg = {}) {
    EpisodeRecord ep;
    ep.mode = mode;
    ep.source = EpisodeSource::demo;
    WorldState s = reset_state(seed);
    Rng noise(derive_seed(seed, 0x6e6f697365ULL));
    ep.observations.push_back(observe(s));
    for (int t = 0; t < horizon; ++t) {
        Action a = script_action(mode, s, t, noise, sc, cfg);
        ep.actions.push_back(a);
        s = env_step(s, a, derive_seed(seed, 0x73746570ULL, static_cast<std::uint64_t>(t)), cfg);
        ep.observations.push_back(observe(s));
    }
    return ep;
}

inline std::vector<EpisodeRecord> generate_demos(TaskId task, int n_per_mode,
                                                 const std::vector<ModeId>& modes,
                                                 std::uint64_t rng_seed,
                                                 int horizon = kEpisodeHorizon) {
    if (modes.empty()) throw std::invalid_argument("generate_demos: empty mode list");
    const auto allowed = default_modes(task);
    for (ModeId m : modes) {
        if (m != ModeId::topple &&
            std::find(allowed.begin(), allowed.end(), m) == allowed.end()) {
            throw std::invalid_argument(std::string("mode ") + mode_name(m) +
                                        " is not part of task " + task_name(task));
        }
    }
    std::vector<EpisodeRecord> out;
    out.reserve(static_cast<std::size_t>(n_per_mode) * modes.size());
    for (std::size_t mi = 0; mi < modes.size(); ++mi) {
        for (int i = 0; i < n_per_mode; ++i) {
            const std::uint64_t ep_seed =
                derive_seed(rng_seed, mi, static_cast<std::uint64_t>(i));
            out.push_back(run_scripted_episode(modes[mi], ep_seed, horizon));
        }
    }
    return out;
}

}  // namespace steerlab
