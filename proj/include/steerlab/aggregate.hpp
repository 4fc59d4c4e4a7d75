#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "steerlab/policy.hpp"
#include "steerlab/rng.hpp"

namespace steerlab {

namespace detail {

inline double action_dist(const Action& a, const Action& b) {
    const double dx = a.delta_pos.x - b.delta_pos.x;
    const double dy = a.delta_pos.y - b.delta_pos.y;
    const double dg = a.grip_cmd - b.grip_cmd;
    return std::sqrt(dx * dx + dy * dy + dg * dg);
}

}  // namespace detail

// Classic DTW over action sequences, local cost = Euclidean over the
// 3-vector action. band = nullopt runs the exact DP; a Sakoe-Chiba band of
// the given half-width restricts the lattice (banded cost >= exact cost).
inline double dtw_distance(const std::vector<Action>& a, const std::vector<Action>& b,
                           std::optional<int> band = std::nullopt) {
    if (a.empty() || b.empty()) throw std::invalid_argument("dtw_distance: empty sequence");
    if (band && *band < 1) throw std::invalid_argument("dtw_distance: band must be >= 1");
    const int n = static_cast<int>(a.size());
    const int m = static_cast<int>(b.size());
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> prev(static_cast<std::size_t>(m) + 1, inf);
    std::vector<double> cur(static_cast<std::size_t>(m) + 1, inf);
    prev[0] = 0.0;
    for (int i = 1; i <= n; ++i) {
        std::fill(cur.begin(), cur.end(), inf);
        int lo = 1, hi = m;
        if (band) {
            // Diagonal-centered window for unequal lengths.
            const int diag = static_cast<int>(std::llround(static_cast<double>(i) * m / n));
            lo = std::max(1, diag - *band);
            hi = std::min(m, diag + *band);
        }
        for (int j = lo; j <= hi; ++j) {
            const double cost = detail::action_dist(a[static_cast<std::size_t>(i - 1)],
                                                    b[static_cast<std::size_t>(j - 1)]);
            const double best = std::min({prev[static_cast<std::size_t>(j)],
                                          prev[static_cast<std::size_t>(j - 1)],
                                          cur[static_cast<std::size_t>(j - 1)]});
            cur[static_cast<std::size_t>(j)] = cost + best;
        }
        std::swap(prev, cur);
    }
    return prev[static_cast<std::size_t>(m)];
}

namespace detail {

// DTW with path recovery: returns, per step of `center`, the list of steps
// of `member` aligned to it.
inline std::vector<std::vector<int>> dtw_alignment(const std::vector<Action>& center,
                                                   const std::vector<Action>& member) {
    const int n = static_cast<int>(center.size());
    const int m = static_cast<int>(member.size());
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> dp(static_cast<std::size_t>(n) + 1,
                                        std::vector<double>(static_cast<std::size_t>(m) + 1, inf));
    dp[0][0] = 0.0;
    for (int i = 1; i <= n; ++i) {
        for (int j = 1; j <= m; ++j) {
            const double cost = action_dist(center[static_cast<std::size_t>(i - 1)],
                                            member[static_cast<std::size_t>(j - 1)]);
            dp[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                cost + std::min({dp[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(j)],
                                 dp[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(j - 1)],
                                 dp[static_cast<std::size_t>(i)][static_cast<std::size_t>(j - 1)]});
        }
    }
    std::vector<std::vector<int>> aligned(static_cast<std::size_t>(n));
    int i = n, j = m;
    while (i > 0 && j > 0) {
        aligned[static_cast<std::size_t>(i - 1)].push_back(j - 1);
        const double d_diag = dp[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(j - 1)];
        const double d_up = dp[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(j)];
        const double d_left = dp[static_cast<std::size_t>(i)][static_cast<std::size_t>(j - 1)];
        if (d_diag <= d_up && d_diag <= d_left) {
            --i;
            --j;
        } else if (d_up <= d_left) {
            --i;
        } else {
            --j;
        }
    }
    return aligned;
}

}  // namespace detail

struct PlanClusterings {
    std::vector<int> assignments;
    std::vector<ActionPlan> centers;
    double inertia = 0.0;
    std::vector<double> inertia_history;  // one entry per assignment pass
};

// Time-series k-means under DTW. Centers are refreshed by averaging member
// actions resampled onto the center's time axis via their DTW alignment
// paths (a single DBA step); an update that does not lower the cluster's
// cost is discarded, which keeps inertia nonincreasing with the unsquared
// local metric.
inline PlanClusterings cluster_plans(const std::vector<ActionPlan>& plans, int k,
                                     int max_iter, std::uint64_t rng_seed,
                                     std::optional<int> band = std::nullopt) {
    const int n = static_cast<int>(plans.size());
    if (n < k) throw std::invalid_argument("cluster_plans: fewer plans than clusters");
    if (k < 1) throw std::invalid_argument("cluster_plans: k must be >= 1");

    // Farthest-first init: the first center is a random plan, each further
    // center is the plan maximizing the DTW distance to its nearest chosen
    // center. This spreads centers across separated modes instead of relying
    // on a lucky uniform draw.
    Rng rng(derive_seed(rng_seed, 0x64747761ULL));
    std::vector<ActionPlan> centers;
    std::vector<int> picked;
    picked.push_back(static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(n))));
    std::vector<double> min_dist(static_cast<std::size_t>(n),
                                 std::numeric_limits<double>::infinity());
    while (static_cast<int>(picked.size()) < k) {
        const int last = picked.back();
        for (int i = 0; i < n; ++i) {
            const double d = dtw_distance(plans[static_cast<std::size_t>(i)].actions,
                                          plans[static_cast<std::size_t>(last)].actions, band);
            min_dist[static_cast<std::size_t>(i)] =
                std::min(min_dist[static_cast<std::size_t>(i)], d);
        }
        int far_i = 0;
        double far_d = -1.0;
        for (int i = 0; i < n; ++i) {
            if (std::find(picked.begin(), picked.end(), i) != picked.end()) continue;
            if (min_dist[static_cast<std::size_t>(i)] > far_d) {
                far_d = min_dist[static_cast<std::size_t>(i)];
                far_i = i;
            }
        }
        picked.push_back(far_i);
    }
    for (int idx : picked) centers.push_back(plans[static_cast<std::size_t>(idx)]);

    PlanClusterings out;
    out.assignments.assign(static_cast<std::size_t>(n), 0);
    std::vector<std::vector<double>> dist(static_cast<std::size_t>(n),
                                          std::vector<double>(static_cast<std::size_t>(k), 0.0));

    auto assign_pass = [&]() {
        bool changed = false;
        double inertia = 0.0;
        for (int i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            int best_c = 0;
            for (int c = 0; c < k; ++c) {
                const double d = dtw_distance(plans[static_cast<std::size_t>(i)].actions,
                                              centers[static_cast<std::size_t>(c)].actions, band);
                dist[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] = d;
                if (d < best) {  // strict: ties go to the lowest index
                    best = d;
                    best_c = c;
                }
            }
            inertia += best;
            if (out.assignments[static_cast<std::size_t>(i)] != best_c) {
                out.assignments[static_cast<std::size_t>(i)] = best_c;
                changed = true;
            }
        }
        out.inertia = inertia;
        out.inertia_history.push_back(inertia);
        return changed;
    };

    assign_pass();
    for (int iter = 0; iter < max_iter; ++iter) {
        // Re-seed any empty cluster from the plan farthest from its center.
        for (int c = 0; c < k; ++c) {
            bool empty = true;
            for (int i = 0; i < n; ++i)
                if (out.assignments[static_cast<std::size_t>(i)] == c) empty = false;
            if (!empty) continue;
            double worst = -1.0;
            int worst_i = 0;
            for (int i = 0; i < n; ++i) {
                const int a = out.assignments[static_cast<std::size_t>(i)];
                const double d = dist[static_cast<std::size_t>(i)][static_cast<std::size_t>(a)];
                if (d > worst) {
                    worst = d;
                    worst_i = i;
                }
            }
            centers[static_cast<std::size_t>(c)] = plans[static_cast<std::size_t>(worst_i)];
            out.assignments[static_cast<std::size_t>(worst_i)] = c;
        }

        for (int c = 0; c < k; ++c) {
            std::vector<int> members;
            for (int i = 0; i < n; ++i)
                if (out.assignments[static_cast<std::size_t>(i)] == c) members.push_back(i);
            if (members.empty()) continue;
            const auto& center_actions = centers[static_cast<std::size_t>(c)].actions;
            const int T = static_cast<int>(center_actions.size());
            std::vector<Action> updated(static_cast<std::size_t>(T));
            std::vector<int> counts(static_cast<std::size_t>(T), 0);
            std::vector<std::array<double, 3>> sums(static_cast<std::size_t>(T), {0.0, 0.0, 0.0});
            for (int i : members) {
                const auto aligned =
                    detail::dtw_alignment(center_actions, plans[static_cast<std::size_t>(i)].actions);
                for (int t = 0; t < T; ++t) {
                    for (int j : aligned[static_cast<std::size_t>(t)]) {
                        const Action& a = plans[static_cast<std::size_t>(i)].actions[static_cast<std::size_t>(j)];
                        sums[static_cast<std::size_t>(t)][0] += a.delta_pos.x;
                        sums[static_cast<std::size_t>(t)][1] += a.delta_pos.y;
                        sums[static_cast<std::size_t>(t)][2] += a.grip_cmd;
                        counts[static_cast<std::size_t>(t)]++;
                    }
                }
            }
            for (int t = 0; t < T; ++t) {
                if (counts[static_cast<std::size_t>(t)] > 0) {
                    const double inv = 1.0 / counts[static_cast<std::size_t>(t)];
                    updated[static_cast<std::size_t>(t)].delta_pos = {
                        sums[static_cast<std::size_t>(t)][0] * inv,
                        sums[static_cast<std::size_t>(t)][1] * inv};
                    updated[static_cast<std::size_t>(t)].grip_cmd =
                        sums[static_cast<std::size_t>(t)][2] * inv;
                } else {
                    updated[static_cast<std::size_t>(t)] = center_actions[static_cast<std::size_t>(t)];
                }
            }
            double old_cost = 0.0, new_cost = 0.0;
            for (int i : members) {
                old_cost += dist[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
                new_cost += dtw_distance(plans[static_cast<std::size_t>(i)].actions, updated, band);
            }
            if (new_cost < old_cost) centers[static_cast<std::size_t>(c)].actions = std::move(updated);
        }

        if (!assign_pass()) break;
    }

    // Each center inherits the majority mode hint of its members (debug only).
    for (int c = 0; c < k; ++c) {
        std::array<int, 6> votes{};
        bool any = false;
        for (int i = 0; i < n; ++i) {
            if (out.assignments[static_cast<std::size_t>(i)] != c) continue;
            if (plans[static_cast<std::size_t>(i)].mode_hint) {
                votes[static_cast<std::size_t>(*plans[static_cast<std::size_t>(i)].mode_hint)]++;
                any = true;
            }
        }
        if (any) {
            int best = 0;
            for (int j = 1; j < 6; ++j)
                if (votes[static_cast<std::size_t>(j)] > votes[static_cast<std::size_t>(best)]) best = j;
            centers[static_cast<std::size_t>(c)].mode_hint = static_cast<ModeId>(best);
        }
    }
    out.centers = std::move(centers);
    return out;
}

// Optional post-filter: drop centers within dtw_eps of an already-kept
// center (lowest index wins).
inline std::vector<ActionPlan> nms_filter(const std::vector<ActionPlan>& centers,
                                          double dtw_eps,
                                          std::optional<int> band = std::nullopt) {
    std::vector<ActionPlan> kept;
    for (const auto& c : centers) {
        bool close = false;
        for (const auto& k : kept) {
            if (dtw_distance(c.actions, k.actions, band) < dtw_eps) {
                close = true;
                break;
            }
        }
        if (!close) kept.push_back(c);
    }
    return kept;
}

}  // namespace steerlab
