#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "steerlab/aggregate.hpp"
#include "steerlab/env.hpp"
#include "steerlab/policy.hpp"
#include "steerlab/verifier.hpp"
#include "steerlab/worldmodel.hpp"

namespace steerlab {

struct SteeringConfig {
    int n_samples = 100;
    int k = 6;
    int plan_horizon = kPlanHorizon;
    ImagineMode imagine_mode = ImagineMode::mean;
    TaskSpec task;
    int cluster_max_iter = 20;
    std::optional<int> dtw_band;
    std::optional<double> nms_eps;  // optional post-filter on cluster centers
    double sample_noise_scale = 1.0;

    void validate() const {
        if (k < 1 || n_samples < k)
            throw std::invalid_argument("steering config requires n_samples >= k >= 1");
        task.validate();
    }
};

struct StepTrace {
    std::int64_t timestamp_ms = 0;
    Observation observation;
    std::vector<ActionPlan> candidates;
    std::vector<Narration> narrations;
    Verdict verdict;
    bool abstained = false;
    // filled by run_episode
    BehaviorFeatures executed_features;
    bool executed = false;
    bool success = false;
};

// One pass of the steering pipeline: sample N plans, aggregate to K
// candidates, imagine each, narrate, select.
inline std::pair<ActionPlan, StepTrace> steer_once(const Observation& obs,
                                                   const ModeMixture& policy,
                                                   const WorldModelParams& wm,
                                                   VerifierBackend& backend,
                                                   const SteeringConfig& cfg,
                                                   std::uint64_t rng_seed) {
    cfg.validate();
    StepTrace trace;
    trace.timestamp_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                             std::chrono::system_clock::now().time_since_epoch())
                             .count();
    trace.observation = obs;

    auto plans = sample_plans(policy, obs, cfg.n_samples, derive_seed(rng_seed, 1),
                              cfg.sample_noise_scale);
    auto clusters = cluster_plans(plans, cfg.k, cfg.cluster_max_iter, derive_seed(rng_seed, 2),
                                  cfg.dtw_band);
    trace.candidates = clusters.centers;
    if (cfg.nms_eps) trace.candidates = nms_filter(trace.candidates, *cfg.nms_eps, cfg.dtw_band);

    const LatentState init = encode_init(wm, obs, derive_seed(rng_seed, 3));
    for (std::size_t i = 0; i < trace.candidates.size(); ++i) {
        LatentRollout roll = imagine(wm, init, trace.candidates[i], cfg.imagine_mode,
                                     derive_seed(rng_seed, 4, i));
        roll.plan_index = static_cast<int>(i);
        try {
            trace.narrations.push_back(narrate(roll, wm, backend));
        } catch (const VerifierError&) {
            throw;  // propagate; trace-so-far lives with the caller
        }
    }
    trace.verdict = backend.select(trace.narrations, cfg.task);

    bool any_ok = false;
    for (const auto& j : trace.verdict.per_candidate) any_ok = any_ok || j.ok;
    trace.abstained = !any_ok;

    return {trace.candidates[static_cast<std::size_t>(trace.verdict.chosen_index)], trace};
}

enum class EpisodePolicy { steered, baseline, classifier };

// Executes one episode end to end. baseline executes a raw policy sample;
// classifier picks the aggregated candidate with the highest classifier
// probability; steered runs the full pipeline and abstains when every
// candidate is forbidden (abstention counts as failure).
inline StepTrace run_episode(std::uint64_t env_seed, const ModeMixture& policy,
                             const WorldModelParams& wm, VerifierBackend& backend,
                             const SteeringConfig& cfg, EpisodePolicy mode,
                             const ClassifierParams* clf = nullptr) {
    WorldState state = reset_state(env_seed);
    const Observation obs = observe(state);

    ActionPlan plan;
    StepTrace trace;
    if (mode == EpisodePolicy::baseline) {
        trace.observation = obs;
        plan = sample_plans(policy, obs, 1, derive_seed(env_seed, 11),
                            cfg.sample_noise_scale)[0];
        trace.candidates.push_back(plan);
    } else if (mode == EpisodePolicy::classifier) {
        if (!clf) throw std::invalid_argument("classifier episode needs classifier params");
        trace.observation = obs;
        auto plans = sample_plans(policy, obs, cfg.n_samples, derive_seed(env_seed, 1),
                                  cfg.sample_noise_scale);
        auto clusters =
            cluster_plans(plans, cfg.k, cfg.cluster_max_iter, derive_seed(env_seed, 2), cfg.dtw_band);
        trace.candidates = clusters.centers;
        const LatentState init = encode_init(wm, obs, derive_seed(env_seed, 3));
        double best = -1.0;
        int best_i = 0;
        for (std::size_t i = 0; i < trace.candidates.size(); ++i) {
            LatentRollout roll =
                imagine(wm, init, trace.candidates[i], cfg.imagine_mode, derive_seed(env_seed, 4, i));
            const double pr = classify(*clf, roll);
            if (pr > best) {
                best = pr;
                best_i = static_cast<int>(i);
            }
        }
        plan = trace.candidates[static_cast<std::size_t>(best_i)];
        trace.verdict.chosen_index = best_i;
    } else {
        auto [chosen, t] = steer_once(obs, policy, wm, backend, cfg, env_seed);
        trace = std::move(t);
        plan = std::move(chosen);
        if (trace.abstained) {
            trace.executed = false;
            trace.success = false;
            return trace;
        }
    }

    std::vector<Observation> seq;
    seq.push_back(observe(state));
    for (std::size_t t = 0; t < plan.actions.size(); ++t) {
        state = env_step(state, plan.actions[t], derive_seed(env_seed, 0x657865ULL, t));
        seq.push_back(observe(state));
    }
    trace.executed = true;
    trace.executed_features = extract_features(seq);
    trace.success = task_satisfied(cfg.task, trace.executed_features);
    return trace;
}

struct MonitorStats {
    double acc = 0.0;
    double tpr = 0.0;
    double tnr = 0.0;
    int n = 0;
};

// Confusion-matrix statistics for monitor verdicts against ground-truth
// success labels.
inline MonitorStats monitor_rollouts(const std::vector<std::pair<Narration, bool>>& labeled,
                                     const TaskSpec& task, VerifierBackend& backend) {
    if (labeled.empty()) throw std::invalid_argument("monitor_rollouts: empty set");
    int tp = 0, tn = 0, fp = 0, fn = 0;
    for (const auto& [narration, label] : labeled) {
        const bool ok = backend.monitor(narration, task).first;
        if (label && ok) ++tp;
        else if (label && !ok) ++fn;
        else if (!label && ok) ++fp;
        else ++tn;
    }
    MonitorStats s;
    s.n = static_cast<int>(labeled.size());
    s.acc = static_cast<double>(tp + tn) / s.n;
    s.tpr = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 1.0;
    s.tnr = tn + fp > 0 ? static_cast<double>(tn) / (tn + fp) : 1.0;
    return s;
}

// Normal-approximation (Wald) confidence interval for a success rate.
struct RateSummary {
    double rate = 0.0;
    double ci_half_width = 0.0;
    int n = 0;
};

inline RateSummary wald_summary(int successes, int n, double z = 1.96) {
    RateSummary s;
    s.n = n;
    if (n == 0) return s;
    s.rate = static_cast<double>(successes) / n;
    s.ci_half_width = z * std::sqrt(s.rate * (1.0 - s.rate) / n);
    return s;
}

}  // namespace steerlab
