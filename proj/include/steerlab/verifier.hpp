#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "steerlab/env.hpp"
#include "steerlab/worldmodel.hpp"

namespace steerlab {

enum class CrushLevel { none, light, heavy };
enum class LiftHeight { low, high };

inline const char* crush_name(CrushLevel c) {
    switch (c) {
        case CrushLevel::none: return "none";
        case CrushLevel::light: return "light";
        case CrushLevel::heavy: return "heavy";
    }
    return "none";
}

struct BehaviorFeatures {
    Region first_contact_region = Region::none;
    bool grasp_succeeded = false;
    bool toppled = false;
    CrushLevel crush_level = CrushLevel::none;
    bool dropped = false;
    LiftHeight lift_height = LiftHeight::low;

    bool operator==(const BehaviorFeatures&) const = default;
};

// --- narration grammar -------------------------------------------------------
// Fixed bijective template: six comma-separated clauses, one per feature
// field, so ground-truth accuracy is computable mechanically.

namespace grammar {

inline std::string region_clause(Region r) {
    if (r == Region::none) return "the gripper makes no contact with the object";
    return std::string("the gripper makes first contact at the ") + region_name(r);
}

inline std::string grasp_clause(bool ok) {
    return ok ? "the grasp succeeds" : "the grasp fails";
}

inline std::string lift_clause(LiftHeight l) {
    return l == LiftHeight::high ? "the object is lifted high" : "the object stays low";
}

inline std::string topple_clause(bool t) {
    return t ? "the object topples over" : "the object stays upright";
}

inline std::string crush_clause(CrushLevel c) {
    switch (c) {
        case CrushLevel::none: return "with no crushing";
        case CrushLevel::light: return "with light crushing";
        case CrushLevel::heavy: return "with heavy crushing";
    }
    return "with no crushing";
}

inline std::string drop_clause(bool d) {
    return d ? "the object is dropped" : "nothing is dropped";
}

}  // namespace grammar

inline std::string render_narration(const BehaviorFeatures& f) {
    return grammar::region_clause(f.first_contact_region) + ", " +
           grammar::grasp_clause(f.grasp_succeeded) + ", " + grammar::lift_clause(f.lift_height) +
           ", " + grammar::topple_clause(f.toppled) + ", " + grammar::crush_clause(f.crush_level) +
           ", " + grammar::drop_clause(f.dropped);
}

struct NarrationParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline BehaviorFeatures parse_narration(const std::string& text) {
    std::vector<std::string> parts;
    std::size_t pos = 0;
    while (true) {
        const std::size_t next = text.find(", ", pos);
        if (next == std::string::npos) {
            parts.push_back(text.substr(pos));
            break;
        }
        parts.push_back(text.substr(pos, next - pos));
        pos = next + 2;
    }
    if (parts.size() != 6)
        throw NarrationParseError("narration does not have six clauses: " + text);

    BehaviorFeatures f;
    const std::string& rc = parts[0];
    if (rc == "the gripper makes no contact with the object") {
        f.first_contact_region = Region::none;
    } else {
        const std::string prefix = "the gripper makes first contact at the ";
        if (rc.rfind(prefix, 0) != 0) throw NarrationParseError("bad region clause: " + rc);
        try {
            f.first_contact_region = region_from_name(rc.substr(prefix.size()));
        } catch (const std::invalid_argument&) {
            throw NarrationParseError("bad region clause: " + rc);
        }
    }
    if (parts[1] == "the grasp succeeds") f.grasp_succeeded = true;
    else if (parts[1] == "the grasp fails") f.grasp_succeeded = false;
    else throw NarrationParseError("bad grasp clause: " + parts[1]);
    if (parts[2] == "the object is lifted high") f.lift_height = LiftHeight::high;
    else if (parts[2] == "the object stays low") f.lift_height = LiftHeight::low;
    else throw NarrationParseError("bad lift clause: " + parts[2]);
    if (parts[3] == "the object topples over") f.toppled = true;
    else if (parts[3] == "the object stays upright") f.toppled = false;
    else throw NarrationParseError("bad topple clause: " + parts[3]);
    if (parts[4] == "with no crushing") f.crush_level = CrushLevel::none;
    else if (parts[4] == "with light crushing") f.crush_level = CrushLevel::light;
    else if (parts[4] == "with heavy crushing") f.crush_level = CrushLevel::heavy;
    else throw NarrationParseError("bad crush clause: " + parts[4]);
    if (parts[5] == "the object is dropped") f.dropped = true;
    else if (parts[5] == "nothing is dropped") f.dropped = false;
    else throw NarrationParseError("bad drop clause: " + parts[5]);
    return f;
}

// Clause alternatives, sent to wire backends so external models know the
// exact output language.
inline std::vector<std::string> grammar_templates() {
    std::vector<std::string> t;
    t.push_back("the gripper makes no contact with the object | the gripper makes first contact "
                "at the {handle|rim|interior|edge|middle}");
    t.push_back("the grasp succeeds | the grasp fails");
    t.push_back("the object is lifted high | the object stays low");
    t.push_back("the object topples over | the object stays upright");
    t.push_back("with no crushing | with light crushing | with heavy crushing");
    t.push_back("the object is dropped | nothing is dropped");
    return t;
}

struct Narration {
    BehaviorFeatures features;
    std::string text;
};

inline Narration make_narration(const BehaviorFeatures& f) {
    return {f, render_narration(f)};
}

// --- feature extraction ------------------------------------------------------

struct FeatureConfig {
    double contact_radius = 0.05;
    double grip_close = 0.5;
    double lift_min = 0.5;   // object height for a successful grasp
    double lift_high = 0.7;
    double crush_light = 0.05;
    double crush_heavy = 0.3;
    double flag_threshold = 0.5;
    double yaw_validity = 0.5;  // |sin^2+cos^2 - 1| beyond this marks a frame invalid
};

// Thresholded event detection over a (possibly decoded and noisy)
// observation sequence. Frames with a degenerate yaw encoding are treated
// as ambiguous and skipped.
inline BehaviorFeatures extract_features(const std::vector<Observation>& seq,
                                         const FeatureConfig& fc = {}) {
    if (seq.empty()) throw std::invalid_argument("extract_features: empty sequence");
    BehaviorFeatures f;
    std::array<int, 6> votes{};
    double max_obj_y = -std::numeric_limits<double>::infinity();
    double max_crush = 0.0;
    bool any_valid = false;
    for (const auto& o : seq) {
        const double yaw_norm = o.v[5] * o.v[5] + o.v[6] * o.v[6];
        if (std::abs(yaw_norm - 1.0) > fc.yaw_validity) continue;
        any_valid = true;
        if (o.upright() < fc.flag_threshold) f.toppled = true;
        if (o.dropped() > fc.flag_threshold) f.dropped = true;
        max_crush = std::max(max_crush, o.crush());
        max_obj_y = std::max(max_obj_y, o.obj_y());
        if (o.ee_grip() < fc.grip_close) {
            double best = fc.contact_radius;
            Region hit = Region::none;
            for (Region r : kGraspRegions) {
                const Vec2 anchor{o.obj_x() + region_offset(r).x, o.obj_y() + region_offset(r).y};
                const double d = std::hypot(o.ee_x() - anchor.x, o.ee_y() - anchor.y);
                if (d < best) {
                    best = d;
                    hit = r;
                }
            }
            if (hit != Region::none) votes[static_cast<std::size_t>(hit)]++;
        }
    }
    if (!any_valid) return f;

    int best_votes = 0;
    for (int r = 1; r < 6; ++r) {
        if (votes[static_cast<std::size_t>(r)] > best_votes) {
            best_votes = votes[static_cast<std::size_t>(r)];
            f.first_contact_region = static_cast<Region>(r);
        }
    }
    if (max_crush >= fc.crush_heavy) f.crush_level = CrushLevel::heavy;
    else if (max_crush >= fc.crush_light) f.crush_level = CrushLevel::light;
    f.lift_height = max_obj_y >= fc.lift_high ? LiftHeight::high : LiftHeight::low;
    f.grasp_succeeded =
        f.first_contact_region != Region::none && max_obj_y >= fc.lift_min && !f.toppled;
    if (!f.grasp_succeeded) f.dropped = false;
    if (f.toppled) f.grasp_succeeded = false;
    return f;
}

// --- task specifications -----------------------------------------------------

struct FeaturePredicate {
    std::string field;  // first_contact_region | grasp_succeeded | toppled |
                        // crush_level | dropped | lift_height
    std::string value;

    bool matches(const BehaviorFeatures& f) const {
        if (field == "first_contact_region") return region_name(f.first_contact_region) == value;
        if (field == "grasp_succeeded") return (f.grasp_succeeded ? "true" : "false") == value;
        if (field == "toppled") return (f.toppled ? "true" : "false") == value;
        if (field == "crush_level") return crush_name(f.crush_level) == value;
        if (field == "dropped") return (f.dropped ? "true" : "false") == value;
        if (field == "lift_height")
            return (f.lift_height == LiftHeight::high ? "high" : "low") == value;
        throw std::invalid_argument("unknown feature field: " + field);
    }
};

struct WeightedPredicate {
    FeaturePredicate pred;
    double weight = 1.0;
};

struct TaskSpec {
    std::string id;
    std::string text;
    std::vector<WeightedPredicate> prefer;
    std::vector<FeaturePredicate> forbid;

    void validate() const {
        if (prefer.empty() && forbid.empty())
            throw std::invalid_argument("task " + id + " has no predicates");
        for (const auto& p : prefer)
            if (p.weight <= 0.0)
                throw std::invalid_argument("task " + id + " has a non-positive prefer weight");
    }
};

inline bool any_forbid_fires(const TaskSpec& task, const BehaviorFeatures& f) {
    for (const auto& pred : task.forbid)
        if (pred.matches(f)) return true;
    return false;
}

inline bool task_satisfied(const TaskSpec& task, const BehaviorFeatures& f) {
    return !any_forbid_fires(task, f);
}

struct CandidateJudgment {
    double score = 0.0;
    bool ok = false;
    std::string rationale;
};

struct Verdict {
    int chosen_index = 0;
    std::vector<CandidateJudgment> per_candidate;
};

// Large constant standing in for the -inf forbid penalty; keeps scores
// finite so scale invariance of the prefer weights still holds.
constexpr double kForbidPenalty = 1e6;

inline CandidateJudgment judge_candidate(const TaskSpec& task, const BehaviorFeatures& f) {
    CandidateJudgment j;
    int fired = 0;
    std::string why;
    for (const auto& pred : task.forbid) {
        if (pred.matches(f)) {
            ++fired;
            if (!why.empty()) why += "; ";
            why += "forbidden: " + pred.field + "=" + pred.value;
        }
    }
    for (const auto& wp : task.prefer) {
        if (wp.pred.matches(f)) {
            j.score += wp.weight;
            if (!why.empty()) why += "; ";
            why += "prefers " + wp.pred.field + "=" + wp.pred.value;
        }
    }
    j.score -= kForbidPenalty * fired;
    j.ok = fired == 0;
    j.rationale = why.empty() ? "no predicate matched" : why;
    return j;
}

inline Verdict oracle_select(const std::vector<Narration>& narrations, const TaskSpec& task) {
    if (narrations.empty()) throw std::invalid_argument("select: no candidates");
    task.validate();
    Verdict v;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < narrations.size(); ++i) {
        auto j = judge_candidate(task, narrations[i].features);
        if (j.score > best) {  // strict: ties keep the lowest index
            best = j.score;
            v.chosen_index = static_cast<int>(i);
        }
        v.per_candidate.push_back(std::move(j));
    }
    return v;
}

inline std::pair<bool, std::string> oracle_monitor(const Narration& narration,
                                                   const TaskSpec& task) {
    task.validate();
    auto j = judge_candidate(task, narration.features);
    const bool ok = j.ok && narration.features.grasp_succeeded;
    std::string why = j.rationale;
    if (!narration.features.grasp_succeeded) why += "; grasp did not succeed";
    return {ok, why};
}

// --- latent rollout classifier baseline --------------------------------------
// Pooled-latent logistic regression; deliberately blind to the task
// description so the generalization-collapse experiment has its subject.

struct ClassifierParams {
    Vec w;
    double b = 0.0;
    Vec feat_shift, feat_scale;
};

inline Vec rollout_features(const LatentRollout& roll) {
    if (roll.downsampled.empty())
        throw std::invalid_argument("rollout_features: empty downsampled sequence");
    const int d = static_cast<int>(roll.downsampled.front().h.size() +
                                   roll.downsampled.front().z.size());
    Vec pooled = Vec::Zero(d);
    for (const auto& s : roll.downsampled) {
        Vec cat(d);
        cat << s.h, s.z;
        pooled += cat;
    }
    pooled /= static_cast<double>(roll.downsampled.size());
    Vec last(d);
    last << roll.downsampled.back().h, roll.downsampled.back().z;
    Vec out(2 * d);
    out << pooled, last;
    return out;
}

inline ClassifierParams train_latent_classifier(
    const std::vector<std::pair<LatentRollout, bool>>& dataset, int iters = 400,
    double lr = 0.5, double l2 = 1e-4) {
    if (dataset.empty()) throw std::invalid_argument("train_latent_classifier: empty dataset");
    int pos = 0;
    for (const auto& [roll, label] : dataset) pos += label ? 1 : 0;
    if (pos == 0 || pos == static_cast<int>(dataset.size()))
        throw std::invalid_argument("train_latent_classifier: single-class dataset");

    const int n = static_cast<int>(dataset.size());
    std::vector<Vec> feats;
    feats.reserve(dataset.size());
    for (const auto& [roll, label] : dataset) feats.push_back(rollout_features(roll));
    const int d = static_cast<int>(feats[0].size());

    ClassifierParams p;
    p.feat_shift = Vec::Zero(d);
    for (const auto& f : feats) p.feat_shift += f;
    p.feat_shift /= n;
    Vec var = Vec::Zero(d);
    for (const auto& f : feats) var += (f - p.feat_shift).array().square().matrix();
    p.feat_scale = (var / n).array().max(1e-10).sqrt().max(1e-5).matrix();
    for (auto& f : feats) f = ((f - p.feat_shift).array() / p.feat_scale.array()).matrix();

    p.w = Vec::Zero(d);
    for (int it = 0; it < iters; ++it) {
        Vec gw = l2 * p.w;
        double gb = 0.0;
        for (int i = 0; i < n; ++i) {
            const double y = dataset[static_cast<std::size_t>(i)].second ? 1.0 : 0.0;
            const double pr = 1.0 / (1.0 + std::exp(-(p.w.dot(feats[static_cast<std::size_t>(i)]) + p.b)));
            gw += (pr - y) / n * feats[static_cast<std::size_t>(i)];
            gb += (pr - y) / n;
        }
        p.w -= lr * gw;
        p.b -= lr * gb;
    }
    return p;
}

inline double classify(const ClassifierParams& p, const LatentRollout& roll) {
    Vec f = ((rollout_features(roll) - p.feat_shift).array() / p.feat_scale.array()).matrix();
    return 1.0 / (1.0 + std::exp(-(p.w.dot(f) + p.b)));
}

// --- backends ----------------------------------------------------------------

struct VerifierError : std::runtime_error {
    std::string raw_response;
    explicit VerifierError(const std::string& msg, std::string raw = "")
        : std::runtime_error(msg), raw_response(std::move(raw)) {}
};

// Interchangeable narration/selection/monitoring backends: the in-process
// oracle and the wire client share this surface.
class VerifierBackend {
public:
    virtual ~VerifierBackend() = default;
    virtual Narration narrate_frames(const std::vector<Observation>& frames) = 0;
    virtual Verdict select(const std::vector<Narration>& narrations, const TaskSpec& task) = 0;
    virtual std::pair<bool, std::string> monitor(const Narration& narration,
                                                 const TaskSpec& task) = 0;
};

class OracleBackend final : public VerifierBackend {
public:
    explicit OracleBackend(FeatureConfig fc = {}) : fc_(fc) {}

    Narration narrate_frames(const std::vector<Observation>& frames) override {
        return make_narration(extract_features(frames, fc_));
    }
    Verdict select(const std::vector<Narration>& narrations, const TaskSpec& task) override {
        return oracle_select(narrations, task);
    }
    std::pair<bool, std::string> monitor(const Narration& narration,
                                         const TaskSpec& task) override {
        return oracle_monitor(narration, task);
    }

private:
    FeatureConfig fc_;
};

inline std::vector<Observation> decode_downsampled(const WorldModelParams& params,
                                                   const LatentRollout& rollout) {
    std::vector<Observation> frames;
    frames.reserve(rollout.downsampled.size());
    for (const auto& s : rollout.downsampled) frames.push_back(decode(params, s));
    return frames;
}

inline Narration narrate(const LatentRollout& rollout, const WorldModelParams& params,
                         VerifierBackend& backend) {
    return backend.narrate_frames(decode_downsampled(params, rollout));
}

}  // namespace steerlab
