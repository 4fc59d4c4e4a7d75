#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "steerlab/env.hpp"
#include "steerlab/rng.hpp"

namespace steerlab {

constexpr int kActionDim = 3;

struct ActionPlan {
    std::vector<Action> actions;  // length kPlanHorizon
    std::optional<ModeId> mode_hint;  // debug only; never consumed by steering
};

inline Eigen::VectorXd flatten_plan(const std::vector<Action>& actions, int horizon) {
    Eigen::VectorXd v(horizon * kActionDim);
    for (int t = 0; t < horizon; ++t) {
        v[3 * t + 0] = actions[static_cast<std::size_t>(t)].delta_pos.x;
        v[3 * t + 1] = actions[static_cast<std::size_t>(t)].delta_pos.y;
        v[3 * t + 2] = actions[static_cast<std::size_t>(t)].grip_cmd;
    }
    return v;
}

inline std::vector<Action> unflatten_plan(const Eigen::VectorXd& v) {
    std::vector<Action> actions(static_cast<std::size_t>(v.size() / kActionDim));
    for (std::size_t t = 0; t < actions.size(); ++t) {
        actions[t].delta_pos = {v[static_cast<Eigen::Index>(3 * t)],
                                v[static_cast<Eigen::Index>(3 * t + 1)]};
        actions[t].grip_cmd = v[static_cast<Eigen::Index>(3 * t + 2)];
    }
    return actions;
}

struct MixtureMode {
    Eigen::VectorXd mean;    // flattened T x 3 plan
    Eigen::VectorXd stddev;  // per-entry standard deviation
    double weight = 0.0;
    ModeId hint = ModeId::handle;
};

struct ModeMixture {
    int horizon = kPlanHorizon;
    std::vector<MixtureMode> modes;
    // Affine conditioning from the initial observation to a plan-space offset
    // shared across modes.
    Eigen::MatrixXd cond_weight;  // (T*3) x d_obs
    Eigen::VectorXd cond_bias;    // T*3
    Eigen::VectorXd obs_mean;     // d_obs, centering for the conditioning fit

    void set_weights(const std::vector<double>& w) {
        if (w.size() != modes.size())
            throw std::invalid_argument("weight override size mismatch");
        double sum = 0.0;
        for (double x : w) sum += x;
        if (sum <= 0.0) throw std::invalid_argument("weights must be positive");
        for (std::size_t i = 0; i < w.size(); ++i) modes[i].weight = w[i] / sum;
    }
};

namespace detail {

// One Lloyd's run with D^2-sampled ("k-means++") initialization. Returns the
// final within-cluster sum of squared distances through *inertia_out.
inline std::vector<int> kmeans_euclidean_once(const std::vector<Eigen::VectorXd>& points,
                                              int k, std::uint64_t seed,
                                              std::vector<Eigen::VectorXd>* centers_out,
                                              double* inertia_out, int max_iter = 50) {
    const int n = static_cast<int>(points.size());
    Rng rng(derive_seed(seed, 0x6b6d65616e73ULL));
    std::vector<Eigen::VectorXd> centers;
    centers.push_back(points[rng.uniform_index(static_cast<std::uint64_t>(n))]);
    std::vector<double> d2(static_cast<std::size_t>(n));
    while (static_cast<int>(centers.size()) < k) {
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            double d = std::numeric_limits<double>::infinity();
            for (const auto& c : centers)
                d = std::min(d, (points[static_cast<std::size_t>(i)] - c).squaredNorm());
            d2[static_cast<std::size_t>(i)] = d;
            total += d;
        }
        // Sample the next center proportional to squared distance; fall back
        // to a uniform pick when all points coincide with a center.
        int pick = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(n)));
        if (total > 0.0) {
            double target = rng.uniform() * total;
            for (int i = 0; i < n; ++i) {
                target -= d2[static_cast<std::size_t>(i)];
                if (target <= 0.0) {
                    pick = i;
                    break;
                }
            }
        }
        centers.push_back(points[static_cast<std::size_t>(pick)]);
    }
    std::vector<int> assign(static_cast<std::size_t>(n), 0);
    double inertia = 0.0;
    for (int iter = 0; iter < max_iter; ++iter) {
        bool changed = false;
        inertia = 0.0;
        for (int i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            int best_c = 0;
            for (int c = 0; c < k; ++c) {
                const double d =
                    (points[static_cast<std::size_t>(i)] - centers[static_cast<std::size_t>(c)])
                        .squaredNorm();
                if (d < best) {
                    best = d;
                    best_c = c;
                }
            }
            inertia += best;
            if (assign[static_cast<std::size_t>(i)] != best_c) {
                assign[static_cast<std::size_t>(i)] = best_c;
                changed = true;
            }
        }
        for (int c = 0; c < k; ++c) {
            Eigen::VectorXd sum = Eigen::VectorXd::Zero(points[0].size());
            int count = 0;
            for (int i = 0; i < n; ++i) {
                if (assign[static_cast<std::size_t>(i)] == c) {
                    sum += points[static_cast<std::size_t>(i)];
                    ++count;
                }
            }
            if (count > 0) centers[static_cast<std::size_t>(c)] = sum / count;
        }
        if (!changed && iter > 0) break;
    }
    if (centers_out) *centers_out = centers;
    if (inertia_out) *inertia_out = inertia;
    return assign;
}

// Plain Euclidean k-means over flattened plans; demos are time-aligned by
// construction so no warping is needed here. Runs several seeded restarts and
// keeps the lowest-inertia solution, which makes the result insensitive to
// one unlucky initialization.
inline std::vector<int> kmeans_euclidean(const std::vector<Eigen::VectorXd>& points,
                                         int k, std::uint64_t seed,
                                         std::vector<Eigen::VectorXd>* centers_out,
                                         int max_iter = 50, int restarts = 8) {
    std::vector<int> best_assign;
    std::vector<Eigen::VectorXd> best_centers;
    double best_inertia = std::numeric_limits<double>::infinity();
    for (int r = 0; r < restarts; ++r) {
        std::vector<Eigen::VectorXd> centers;
        double inertia = 0.0;
        std::vector<int> assign =
            kmeans_euclidean_once(points, k, derive_seed(seed, 0x7265ULL, static_cast<std::uint64_t>(r)),
                                  &centers, &inertia, max_iter);
        if (inertia < best_inertia) {
            best_inertia = inertia;
            best_assign = std::move(assign);
            best_centers = std::move(centers);
        }
    }
    if (centers_out) *centers_out = std::move(best_centers);
    return best_assign;
}

}  // namespace detail

inline ModeMixture fit_policy(const std::vector<EpisodeRecord>& demos, int n_modes,
                              std::uint64_t rng_seed, int horizon = kPlanHorizon) {
    if (static_cast<int>(demos.size()) < n_modes)
        throw std::invalid_argument("fit_policy: fewer demos than modes");
    for (const auto& d : demos) {
        if (static_cast<int>(d.actions.size()) < horizon)
            throw std::invalid_argument("fit_policy: demo shorter than plan horizon");
    }
    const int dim = horizon * kActionDim;
    std::vector<Eigen::VectorXd> plans;
    plans.reserve(demos.size());
    for (const auto& d : demos) plans.push_back(flatten_plan(d.actions, horizon));

    ModeMixture mix;
    mix.horizon = horizon;

    // Conditioning first: a single least-squares map from the centered
    // initial observation to the centered plan. Removing this shared
    // initial-state dependence before clustering leaves the mode offsets as
    // the dominant signal, so k-means separates modes cleanly instead of
    // confusing initial-state variation with mode identity.
    const int d_obs = Observation::kDim;
    Eigen::MatrixXd obs_mat(static_cast<int>(demos.size()), d_obs);
    for (std::size_t i = 0; i < demos.size(); ++i) {
        for (int j = 0; j < d_obs; ++j)
            obs_mat(static_cast<int>(i), j) = demos[i].observations.front().v[static_cast<std::size_t>(j)];
    }
    mix.obs_mean = obs_mat.colwise().mean();
    Eigen::MatrixXd X = obs_mat.rowwise() - mix.obs_mean.transpose();
    Eigen::VectorXd plan_mean = Eigen::VectorXd::Zero(dim);
    for (const auto& p : plans) plan_mean += p;
    plan_mean /= static_cast<double>(plans.size());
    Eigen::MatrixXd Y(static_cast<int>(demos.size()), dim);
    for (std::size_t i = 0; i < demos.size(); ++i)
        Y.row(static_cast<int>(i)) = (plans[i] - plan_mean).transpose();
    // Ridge-regularized normal equations keep the fit stable when some
    // observation channels are constant across demos.
    Eigen::MatrixXd G = X.transpose() * X + 1e-6 * Eigen::MatrixXd::Identity(d_obs, d_obs);
    Eigen::MatrixXd W = G.ldlt().solve(X.transpose() * Y);  // d_obs x dim
    mix.cond_weight = W.transpose();
    mix.cond_bias = Eigen::VectorXd::Zero(dim);

    // Cluster the conditioning residuals.
    std::vector<Eigen::VectorXd> residuals(demos.size());
    for (std::size_t i = 0; i < demos.size(); ++i)
        residuals[i] = plans[i] - plan_mean -
                       mix.cond_weight * X.row(static_cast<int>(i)).transpose();
    std::vector<Eigen::VectorXd> centers;
    std::vector<int> assign = detail::kmeans_euclidean(residuals, n_modes, rng_seed, &centers);

    for (int c = 0; c < n_modes; ++c) {
        MixtureMode m;
        m.mean = plan_mean + centers[static_cast<std::size_t>(c)];
        Eigen::VectorXd var = Eigen::VectorXd::Zero(dim);
        int count = 0;
        // Majority mode hint within the cluster, for diagnostics only.
        std::array<int, 6> mode_votes{};
        for (std::size_t i = 0; i < demos.size(); ++i) {
            if (assign[i] != c) continue;
            Eigen::VectorXd resid =
                plans[i] - m.mean -
                mix.cond_weight * (obs_mat.row(static_cast<int>(i)).transpose() - mix.obs_mean);
            var += resid.array().square().matrix();
            ++count;
            mode_votes[static_cast<std::size_t>(demos[i].mode)]++;
        }
        if (count == 0) throw std::runtime_error("fit_policy: empty cluster");
        var /= count;
        m.stddev = var.array().sqrt().matrix();
        m.weight = static_cast<double>(count) / static_cast<double>(demos.size());
        int best_mode = 0;
        for (int j = 1; j < 6; ++j)
            if (mode_votes[static_cast<std::size_t>(j)] > mode_votes[static_cast<std::size_t>(best_mode)])
                best_mode = j;
        m.hint = static_cast<ModeId>(best_mode);
        mix.modes.push_back(std::move(m));
    }
    return mix;
}

inline Eigen::VectorXd conditioned_mean(const ModeMixture& policy, int mode_index,
                                        const Observation& obs) {
    Eigen::VectorXd o(Observation::kDim);
    for (int j = 0; j < Observation::kDim; ++j) o[j] = obs.v[static_cast<std::size_t>(j)];
    return policy.modes[static_cast<std::size_t>(mode_index)].mean +
           policy.cond_weight * (o - policy.obs_mean) + policy.cond_bias;
}

inline std::vector<ActionPlan> sample_plans(const ModeMixture& policy, const Observation& obs,
                                            int n, std::uint64_t rng_seed,
                                            double noise_scale = 1.0) {
    if (n < 1) throw std::invalid_argument("sample_plans: n must be >= 1");
    Rng rng(derive_seed(rng_seed, 0x73616d706c65ULL));
    std::vector<ActionPlan> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        double acc = 0.0;
        int mode = static_cast<int>(policy.modes.size()) - 1;
        for (std::size_t c = 0; c < policy.modes.size(); ++c) {
            acc += policy.modes[c].weight;
            if (u < acc) {
                mode = static_cast<int>(c);
                break;
            }
        }
        Eigen::VectorXd v = conditioned_mean(policy, mode, obs);
        const Eigen::VectorXd& sd = policy.modes[static_cast<std::size_t>(mode)].stddev;
        for (Eigen::Index j = 0; j < v.size(); ++j) v[j] += noise_scale * sd[j] * rng.normal();
        ActionPlan plan;
        plan.actions = unflatten_plan(v);
        for (auto& a : plan.actions) a = clamp_action(a);
        plan.mode_hint = policy.modes[static_cast<std::size_t>(mode)].hint;
        out.push_back(std::move(plan));
    }
    return out;
}

}  // namespace steerlab
