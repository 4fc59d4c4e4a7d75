#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "steerlab/env.hpp"
#include "steerlab/policy.hpp"
#include "steerlab/rng.hpp"

namespace steerlab {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

struct WorldModelConfig {
    int d_obs = Observation::kDim;
    int d_h = 32;
    int d_z = 8;
    int d_act = kActionDim;
    int enc_hidden = 64;
    int prior_hidden = 64;
    int dec_hidden = 64;
    double alpha_dyn = 0.5;
    double alpha_rep = 0.1;
    double alpha_pred = 1.0;
    double lr = 1e-3;
    double momentum = 0.9;
    double grad_clip = 100.0;
    int batch_size = 16;
    int batch_length = 64;
    int max_updates = 3000;
    int eval_every = 100;
    int patience = 8;  // eval rounds without held-out improvement before stop
    double logstd_min = -5.0;
    double logstd_max = 2.0;
};

struct LatentState {
    Vec h;
    Vec z;
    Vec z_mean;
    Vec z_logstd;
};

// All trainable tensors plus the observation/action normalization fitted on
// the training set. Stored flat so the optimizer and checkpointing can walk
// them uniformly.
struct WorldModelParams {
    WorldModelConfig cfg;

    // encoder: e = tanh(We1 [obs; h] + be1); posterior = (Wem e + bem, Wel e + bel)
    Mat We1; Vec be1; Mat Wem; Vec bem; Mat Wel; Vec bel;
    // GRU over x = [z; a]
    Mat Wr, Ur; Vec br;
    Mat Wu, Uu; Vec bu;
    Mat Wc, Uc; Vec bc;
    // prior head on h
    Mat Wp1; Vec bp1; Mat Wpm; Vec bpm; Mat Wpl; Vec bpl;
    // decoder on [h; z]
    Mat Wd1; Vec bd1; Mat Wd2; Vec bd2;

    Vec obs_shift, obs_scale;  // normalization: (obs - shift) / scale
    Vec act_shift, act_scale;

    template <typename F>
    void for_each_tensor(F&& f) {
        f("We1", We1); f("Wem", Wem); f("Wel", Wel);
        f("Wr", Wr); f("Ur", Ur); f("Wu", Wu); f("Uu", Uu); f("Wc", Wc); f("Uc", Uc);
        f("Wp1", Wp1); f("Wpm", Wpm); f("Wpl", Wpl);
        f("Wd1", Wd1); f("Wd2", Wd2);
    }
    template <typename F>
    void for_each_vector(F&& f) {
        f("be1", be1); f("bem", bem); f("bel", bel);
        f("br", br); f("bu", bu); f("bc", bc);
        f("bp1", bp1); f("bpm", bpm); f("bpl", bpl);
        f("bd1", bd1); f("bd2", bd2);
    }
};

namespace wm_detail {

inline Mat glorot(int rows, int cols, Rng& rng) {
    const double s = std::sqrt(6.0 / (rows + cols));
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(-s, s);
    return m;
}

inline Mat clamp_logstd(const Mat& raw, const WorldModelConfig& cfg) {
    return raw.array().min(cfg.logstd_max).max(cfg.logstd_min).matrix();
}

// Gradient mask for the clamp: 1 where the raw value is inside the band.
inline Mat clamp_mask(const Mat& raw, const WorldModelConfig& cfg) {
    return ((raw.array() > cfg.logstd_min) && (raw.array() < cfg.logstd_max))
        .cast<double>()
        .matrix();
}

}  // namespace wm_detail

inline WorldModelParams init_world_model(const WorldModelConfig& cfg, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x776d696e6974ULL));
    WorldModelParams p;
    p.cfg = cfg;
    const int dx = cfg.d_z + cfg.d_act;
    p.We1 = wm_detail::glorot(cfg.enc_hidden, cfg.d_obs + cfg.d_h, rng);
    p.be1 = Vec::Zero(cfg.enc_hidden);
    p.Wem = wm_detail::glorot(cfg.d_z, cfg.enc_hidden, rng);
    p.bem = Vec::Zero(cfg.d_z);
    p.Wel = wm_detail::glorot(cfg.d_z, cfg.enc_hidden, rng);
    p.bel = Vec::Constant(cfg.d_z, -1.0);
    p.Wr = wm_detail::glorot(cfg.d_h, dx, rng);
    p.Ur = wm_detail::glorot(cfg.d_h, cfg.d_h, rng);
    p.br = Vec::Zero(cfg.d_h);
    p.Wu = wm_detail::glorot(cfg.d_h, dx, rng);
    p.Uu = wm_detail::glorot(cfg.d_h, cfg.d_h, rng);
    p.bu = Vec::Zero(cfg.d_h);
    p.Wc = wm_detail::glorot(cfg.d_h, dx, rng);
    p.Uc = wm_detail::glorot(cfg.d_h, cfg.d_h, rng);
    p.bc = Vec::Zero(cfg.d_h);
    p.Wp1 = wm_detail::glorot(cfg.prior_hidden, cfg.d_h, rng);
    p.bp1 = Vec::Zero(cfg.prior_hidden);
    p.Wpm = wm_detail::glorot(cfg.d_z, cfg.prior_hidden, rng);
    p.bpm = Vec::Zero(cfg.d_z);
    p.Wpl = wm_detail::glorot(cfg.d_z, cfg.prior_hidden, rng);
    p.bpl = Vec::Constant(cfg.d_z, -1.0);
    p.Wd1 = wm_detail::glorot(cfg.dec_hidden, cfg.d_h + cfg.d_z, rng);
    p.bd1 = Vec::Zero(cfg.dec_hidden);
    p.Wd2 = wm_detail::glorot(cfg.d_obs, cfg.dec_hidden, rng);
    p.bd2 = Vec::Zero(cfg.d_obs);
    p.obs_shift = Vec::Zero(cfg.d_obs);
    p.obs_scale = Vec::Ones(cfg.d_obs);
    p.act_shift = Vec::Zero(cfg.d_act);
    p.act_scale = Vec::Ones(cfg.d_act);
    return p;
}

inline Vec normalize_obs(const WorldModelParams& p, const Observation& o) {
    Vec v(p.cfg.d_obs);
    for (int i = 0; i < p.cfg.d_obs; ++i)
        v[i] = (o.v[static_cast<std::size_t>(i)] - p.obs_shift[i]) / p.obs_scale[i];
    return v;
}

inline Observation denormalize_obs(const WorldModelParams& p, const Vec& v) {
    Observation o;
    for (int i = 0; i < p.cfg.d_obs; ++i)
        o.v[static_cast<std::size_t>(i)] = v[i] * p.obs_scale[i] + p.obs_shift[i];
    return o;
}

inline Vec normalize_action(const WorldModelParams& p, const Action& a) {
    Vec v(3);
    v << a.delta_pos.x, a.delta_pos.y, a.grip_cmd;
    return ((v - p.act_shift).array() / p.act_scale.array()).matrix();
}

// --- single-sample inference -----------------------------------------------

namespace wm_detail {

struct GaussianHead {
    Vec mean;
    Vec logstd;
};

inline GaussianHead encoder_posterior(const WorldModelParams& p, const Vec& obs_n, const Vec& h) {
    Vec in(p.cfg.d_obs + p.cfg.d_h);
    in << obs_n, h;
    Vec e = (p.We1 * in + p.be1).array().tanh().matrix();
    GaussianHead g;
    g.mean = p.Wem * e + p.bem;
    Vec raw = p.Wel * e + p.bel;
    g.logstd = raw.array().min(p.cfg.logstd_max).max(p.cfg.logstd_min).matrix();
    return g;
}

inline GaussianHead prior_head(const WorldModelParams& p, const Vec& h) {
    Vec e = (p.Wp1 * h + p.bp1).array().tanh().matrix();
    GaussianHead g;
    g.mean = p.Wpm * e + p.bpm;
    Vec raw = p.Wpl * e + p.bpl;
    g.logstd = raw.array().min(p.cfg.logstd_max).max(p.cfg.logstd_min).matrix();
    return g;
}

inline Vec gru_step(const WorldModelParams& p, const Vec& h, const Vec& z, const Vec& act_n) {
    Vec x(p.cfg.d_z + p.cfg.d_act);
    x << z, act_n;
    Vec r = (1.0 / (1.0 + (-(p.Wr * x + p.Ur * h + p.br)).array().exp())).matrix();
    Vec u = (1.0 / (1.0 + (-(p.Wu * x + p.Uu * h + p.bu)).array().exp())).matrix();
    Vec c = (p.Wc * x + p.Uc * (r.array() * h.array()).matrix() + p.bc).array().tanh().matrix();
    return (u.array() * h.array() + (1.0 - u.array()) * c.array()).matrix();
}

}  // namespace wm_detail

enum class ImagineMode { mean, sample };

inline LatentState encode_init(const WorldModelParams& p, const Observation& obs,
                               std::uint64_t rng_seed = 0) {
    LatentState s;
    s.h = Vec::Zero(p.cfg.d_h);
    auto post = wm_detail::encoder_posterior(p, normalize_obs(p, obs), s.h);
    s.z_mean = post.mean;
    s.z_logstd = post.logstd;
    Rng rng(derive_seed(rng_seed, 0x656e63ULL));
    s.z = s.z_mean;
    for (int i = 0; i < p.cfg.d_z; ++i) s.z[i] += std::exp(s.z_logstd[i]) * rng.normal();
    return s;
}

inline LatentState encode_step(const WorldModelParams& p, const Observation& obs,
                               const LatentState& prev, const Action& prev_action,
                               std::uint64_t rng_seed = 0) {
    if (prev.h.size() != p.cfg.d_h || prev.z.size() != p.cfg.d_z)
        throw std::invalid_argument("encode_step: latent dims do not match params");
    LatentState s;
    s.h = wm_detail::gru_step(p, prev.h, prev.z, normalize_action(p, prev_action));
    auto post = wm_detail::encoder_posterior(p, normalize_obs(p, obs), s.h);
    s.z_mean = post.mean;
    s.z_logstd = post.logstd;
    Rng rng(derive_seed(rng_seed, 0x656e63ULL));
    s.z = s.z_mean;
    for (int i = 0; i < p.cfg.d_z; ++i) s.z[i] += std::exp(s.z_logstd[i]) * rng.normal();
    return s;
}

inline Observation decode(const WorldModelParams& p, const LatentState& s) {
    Vec in(p.cfg.d_h + p.cfg.d_z);
    in << s.h, s.z;
    Vec e = (p.Wd1 * in + p.bd1).array().tanh().matrix();
    return denormalize_obs(p, p.Wd2 * e + p.bd2);
}

constexpr int kDownsampleStride = 4;

struct LatentRollout {
    std::vector<LatentState> states;       // length T, state after action t
    std::vector<LatentState> downsampled;  // states at indices 3, 7, ..., T-1
    int plan_index = -1;
};

// Open-loop imagination through the prior head only; mode == mean is the
// deployment default.
inline LatentRollout imagine(const WorldModelParams& p, const LatentState& init,
                             const ActionPlan& plan, ImagineMode mode,
                             std::uint64_t rng_seed = 0) {
    LatentRollout roll;
    Rng rng(derive_seed(rng_seed, 0x696d6167ULL));
    LatentState cur = init;
    for (std::size_t t = 0; t < plan.actions.size(); ++t) {
        LatentState next;
        next.h = wm_detail::gru_step(p, cur.h, cur.z, normalize_action(p, plan.actions[t]));
        auto prior = wm_detail::prior_head(p, next.h);
        next.z_mean = prior.mean;
        next.z_logstd = prior.logstd;
        next.z = next.z_mean;
        if (mode == ImagineMode::sample) {
            for (int i = 0; i < p.cfg.d_z; ++i)
                next.z[i] += std::exp(next.z_logstd[i]) * rng.normal();
        }
        roll.states.push_back(next);
        cur = std::move(next);
    }
    for (std::size_t i = kDownsampleStride - 1; i < roll.states.size(); i += kDownsampleStride)
        roll.downsampled.push_back(roll.states[i]);
    return roll;
}

// --- training ---------------------------------------------------------------

namespace wm_detail {

struct Grads {
    WorldModelParams g;  // same shapes, gradient values
    explicit Grads(const WorldModelParams& p) {
        g = p;
        g.for_each_tensor([](const char*, Mat& m) { m.setZero(); });
        g.for_each_vector([](const char*, Vec& v) { v.setZero(); });
    }
};

// Per-step forward cache for one BPTT segment, batch as columns.
struct StepCache {
    Mat h;        // d_h x B, state entering the step
    Mat enc_e;    // enc_hidden x B
    Mat post_mu, post_ls_raw, post_ls;
    Mat pri_e, pri_mu, pri_ls_raw, pri_ls;
    Mat eps, z;
    Mat x;        // (d_z + d_act) x B, GRU input
    Mat r, u, c;  // gates
    Mat dec_e, o_hat;
    Mat obs_n;    // normalized target observation
};

struct LossBreakdown {
    double total = 0.0;
    double pred = 0.0;
    double dyn = 0.0;
    double rep = 0.0;
};

inline Mat sigmoid(const Mat& a) { return (1.0 / (1.0 + (-a.array()).exp())).matrix(); }

// KL handling: `balanced` is the training objective with its two
// stop-gradient variants (alpha_dyn to the prior side, alpha_rep to the
// posterior side). `joint` counts the KL once with gradient to both sides
// under alpha_dyn; its gradient is the true derivative of its value, which
// is what a finite-difference oracle can verify.
enum class KlMode { balanced, joint };

// Forward + backward over one batch of aligned segments.
// obs_seq: T+1 matrices (d_obs x B, already normalized); act_seq: T matrices
// (d_act x B, normalized); eps_seq: T matrices of reparameterization noise.
inline LossBreakdown segment_loss_and_grads(const WorldModelParams& p,
                                            const std::vector<Mat>& obs_seq,
                                            const std::vector<Mat>& act_seq,
                                            const std::vector<Mat>& eps_seq,
                                            Grads* grads,
                                            KlMode kl_mode = KlMode::balanced) {
    const auto& cfg = p.cfg;
    const int T = static_cast<int>(act_seq.size());
    const int B = static_cast<int>(obs_seq[0].cols());
    const double inv_bt = 1.0 / (static_cast<double>(B) * T);

    std::vector<StepCache> cache(static_cast<std::size_t>(T));
    LossBreakdown loss;

    Mat h = Mat::Zero(cfg.d_h, B);
    for (int t = 0; t < T; ++t) {
        StepCache& s = cache[static_cast<std::size_t>(t)];
        s.h = h;
        s.obs_n = obs_seq[static_cast<std::size_t>(t)];

        // posterior from (obs_t, h_t)
        Mat enc_in(cfg.d_obs + cfg.d_h, B);
        enc_in << s.obs_n, h;
        s.enc_e = ((p.We1 * enc_in).colwise() + p.be1).array().tanh().matrix();
        s.post_mu = (p.Wem * s.enc_e).colwise() + p.bem;
        s.post_ls_raw = (p.Wel * s.enc_e).colwise() + p.bel;
        s.post_ls = clamp_logstd(s.post_ls_raw, cfg);

        // prior from h_t
        s.pri_e = ((p.Wp1 * h).colwise() + p.bp1).array().tanh().matrix();
        s.pri_mu = (p.Wpm * s.pri_e).colwise() + p.bpm;
        s.pri_ls_raw = (p.Wpl * s.pri_e).colwise() + p.bpl;
        s.pri_ls = clamp_logstd(s.pri_ls_raw, cfg);

        // reparameterized sample
        s.eps = eps_seq[static_cast<std::size_t>(t)];
        s.z = s.post_mu + (s.post_ls.array().exp() * s.eps.array()).matrix();

        // reconstruction
        Mat dec_in(cfg.d_h + cfg.d_z, B);
        dec_in << h, s.z;
        s.dec_e = ((p.Wd1 * dec_in).colwise() + p.bd1).array().tanh().matrix();
        s.o_hat = (p.Wd2 * s.dec_e).colwise() + p.bd2;
        loss.pred += (s.o_hat - s.obs_n).array().square().sum() * inv_bt;

        // KL(post || prior), accumulated once; the two stop-gradient variants
        // share the same value and differ only in which side receives grads.
        const auto post_var = (2.0 * s.post_ls.array()).exp();
        const auto pri_var = (2.0 * s.pri_ls.array()).exp();
        const auto kl = (s.pri_ls.array() - s.post_ls.array()) +
                        (post_var + (s.post_mu - s.pri_mu).array().square()) / (2.0 * pri_var) -
                        0.5;
        const double kl_sum = kl.sum() * inv_bt;
        loss.dyn += kl_sum;
        if (kl_mode == KlMode::balanced) loss.rep += kl_sum;

        // recurrence
        Mat x(cfg.d_z + cfg.d_act, B);
        x << s.z, act_seq[static_cast<std::size_t>(t)];
        s.x = x;
        s.r = sigmoid(((p.Wr * x + p.Ur * h).colwise() + p.br));
        s.u = sigmoid(((p.Wu * x + p.Uu * h).colwise() + p.bu));
        s.c = ((p.Wc * x + p.Uc * (s.r.array() * h.array()).matrix()).colwise() + p.bc)
                  .array()
                  .tanh()
                  .matrix();
        h = (s.u.array() * h.array() + (1.0 - s.u.array()) * s.c.array()).matrix();
    }
    loss.total = cfg.alpha_pred * loss.pred + cfg.alpha_dyn * loss.dyn + cfg.alpha_rep * loss.rep;
    if (!grads) return loss;

    const double alpha_post = kl_mode == KlMode::balanced ? cfg.alpha_rep : cfg.alpha_dyn;
    const double alpha_pri = cfg.alpha_dyn;

    WorldModelParams& g = grads->g;
    Mat dh_next = Mat::Zero(cfg.d_h, B);  // dL/dh_{t+1}
    for (int t = T - 1; t >= 0; --t) {
        const StepCache& s = cache[static_cast<std::size_t>(t)];
        Mat dh = Mat::Zero(cfg.d_h, B);
        Mat dz = Mat::Zero(cfg.d_z, B);

        // GRU at t consumed (h_t, z_t, a_t) and produced h_{t+1}
        if (dh_next.cwiseAbs().sum() != 0.0) {
            const Mat& gh = dh_next;
            Mat du = (gh.array() * (s.h.array() - s.c.array())).matrix();
            Mat dau = (du.array() * s.u.array() * (1.0 - s.u.array())).matrix();
            Mat dc = (gh.array() * (1.0 - s.u.array())).matrix();
            Mat dac = (dc.array() * (1.0 - s.c.array().square())).matrix();
            Mat uc_dac = p.Uc.transpose() * dac;
            Mat dr = (s.h.array() * uc_dac.array()).matrix();
            Mat dar = (dr.array() * s.r.array() * (1.0 - s.r.array())).matrix();

            g.Wr += dar * s.x.transpose();
            g.Ur += dar * s.h.transpose();
            g.br += dar.rowwise().sum();
            g.Wu += dau * s.x.transpose();
            g.Uu += dau * s.h.transpose();
            g.bu += dau.rowwise().sum();
            g.Wc += dac * s.x.transpose();
            g.Uc += dac * (s.r.array() * s.h.array()).matrix().transpose();
            g.bc += dac.rowwise().sum();

            dh += (gh.array() * s.u.array()).matrix() + p.Ur.transpose() * dar +
                  p.Uu.transpose() * dau + (s.r.array() * uc_dac.array()).matrix();
            Mat dx = p.Wr.transpose() * dar + p.Wu.transpose() * dau + p.Wc.transpose() * dac;
            dz += dx.topRows(cfg.d_z);
        }

        // decoder (alpha_pred * MSE)
        Mat do_hat = 2.0 * cfg.alpha_pred * inv_bt * (s.o_hat - s.obs_n);
        g.Wd2 += do_hat * s.dec_e.transpose();
        g.bd2 += do_hat.rowwise().sum();
        Mat dde = ((p.Wd2.transpose() * do_hat).array() * (1.0 - s.dec_e.array().square())).matrix();
        Mat dec_in(cfg.d_h + cfg.d_z, B);
        dec_in << s.h, s.z;
        g.Wd1 += dde * dec_in.transpose();
        g.bd1 += dde.rowwise().sum();
        Mat ddec_in = p.Wd1.transpose() * dde;
        dh += ddec_in.topRows(cfg.d_h);
        dz += ddec_in.bottomRows(cfg.d_z);

        // KL gradients. alpha_rep flows to the posterior side, alpha_dyn to
        // the prior side (the respective other side is stop-gradient).
        const auto post_var = (2.0 * s.post_ls.array()).exp();
        const auto pri_var = (2.0 * s.pri_ls.array()).exp();
        const auto mu_diff = (s.post_mu - s.pri_mu).array();

        Mat dpost_mu = (alpha_post * inv_bt * (mu_diff / pri_var)).matrix();
        Mat dpost_ls = (alpha_post * inv_bt * (post_var / pri_var - 1.0)).matrix();
        Mat dpri_mu = (alpha_pri * inv_bt * (-mu_diff / pri_var)).matrix();
        Mat dpri_ls =
            (alpha_pri * inv_bt * (1.0 - (post_var + mu_diff.square()) / pri_var)).matrix();

        // z = post_mu + exp(post_ls) .* eps
        dpost_mu += dz;
        dpost_ls += (dz.array() * s.eps.array() * s.post_ls.array().exp()).matrix();

        // encoder backward
        Mat dls_raw = (dpost_ls.array() * clamp_mask(s.post_ls_raw, cfg).array()).matrix();
        g.Wem += dpost_mu * s.enc_e.transpose();
        g.bem += dpost_mu.rowwise().sum();
        g.Wel += dls_raw * s.enc_e.transpose();
        g.bel += dls_raw.rowwise().sum();
        Mat de = ((p.Wem.transpose() * dpost_mu + p.Wel.transpose() * dls_raw).array() *
                  (1.0 - s.enc_e.array().square()))
                     .matrix();
        Mat enc_in(cfg.d_obs + cfg.d_h, B);
        enc_in << s.obs_n, s.h;
        g.We1 += de * enc_in.transpose();
        g.be1 += de.rowwise().sum();
        dh += (p.We1.transpose() * de).bottomRows(cfg.d_h);

        // prior backward
        Mat dpls_raw = (dpri_ls.array() * clamp_mask(s.pri_ls_raw, cfg).array()).matrix();
        g.Wpm += dpri_mu * s.pri_e.transpose();
        g.bpm += dpri_mu.rowwise().sum();
        g.Wpl += dpls_raw * s.pri_e.transpose();
        g.bpl += dpls_raw.rowwise().sum();
        Mat dpe = ((p.Wpm.transpose() * dpri_mu + p.Wpl.transpose() * dpls_raw).array() *
                   (1.0 - s.pri_e.array().square()))
                      .matrix();
        g.Wp1 += dpe * s.h.transpose();
        g.bp1 += dpe.rowwise().sum();
        dh += p.Wp1.transpose() * dpe;

        dh_next = std::move(dh);
    }
    return loss;
}

}  // namespace wm_detail

struct TrainReport {
    std::vector<double> train_loss;       // per update, total loss
    std::vector<double> heldout_pred;     // per eval round, held-out L_pred
    double init_heldout_pred = 0.0;
    double final_heldout_pred = 0.0;
    int updates_run = 0;
};

namespace wm_detail {

struct SegmentSource {
    const EpisodeRecord* episode;
    int offset;
};

inline void fill_segment(const WorldModelParams& p, const EpisodeRecord& ep, int offset,
                         int T, int col, std::vector<Mat>* obs_seq, std::vector<Mat>* act_seq) {
    for (int t = 0; t <= T; ++t)
        (*obs_seq)[static_cast<std::size_t>(t)].col(col) =
            normalize_obs(p, ep.observations[static_cast<std::size_t>(offset + t)]);
    for (int t = 0; t < T; ++t)
        (*act_seq)[static_cast<std::size_t>(t)].col(col) =
            normalize_action(p, ep.actions[static_cast<std::size_t>(offset + t)]);
}

// Teacher-forced one-step prediction MSE over a dataset (normalized space,
// deterministic posterior means).
inline double heldout_pred_loss(const WorldModelParams& p,
                                const std::vector<EpisodeRecord>& eval_set, int T) {
    double total = 0.0;
    long count = 0;
    for (const auto& ep : eval_set) {
        const int usable = std::min<int>(T, static_cast<int>(ep.actions.size()));
        Vec h = Vec::Zero(p.cfg.d_h);
        for (int t = 0; t < usable; ++t) {
            Vec obs_n = normalize_obs(p, ep.observations[static_cast<std::size_t>(t)]);
            auto post = encoder_posterior(p, obs_n, h);
            Vec z = post.mean;
            Vec dec_in(p.cfg.d_h + p.cfg.d_z);
            dec_in << h, z;
            Vec e = (p.Wd1 * dec_in + p.bd1).array().tanh().matrix();
            Vec o_hat = p.Wd2 * e + p.bd2;
            total += (o_hat - obs_n).squaredNorm();
            ++count;
            h = gru_step(p, h, z, normalize_action(p, ep.actions[static_cast<std::size_t>(t)]));
        }
    }
    return total / static_cast<double>(count);
}

}  // namespace wm_detail

inline WorldModelParams train_world_model(const std::vector<EpisodeRecord>& dataset,
                                          const WorldModelConfig& cfg, std::uint64_t seed,
                                          TrainReport* report = nullptr,
                                          const std::vector<EpisodeRecord>* heldout = nullptr) {
    if (dataset.empty()) throw std::invalid_argument("train_world_model: empty dataset");
    const int T = cfg.batch_length;
    for (const auto& ep : dataset)
        if (static_cast<int>(ep.actions.size()) < T)
            throw std::invalid_argument("train_world_model: episode shorter than batch length");

    WorldModelParams p = init_world_model(cfg, seed);

    // Fit normalization on the training set.
    Vec m = Vec::Zero(cfg.d_obs), m2 = Vec::Zero(cfg.d_obs);
    long n_obs = 0;
    Vec am = Vec::Zero(cfg.d_act), am2 = Vec::Zero(cfg.d_act);
    long n_act = 0;
    for (const auto& ep : dataset) {
        for (const auto& o : ep.observations) {
            for (int i = 0; i < cfg.d_obs; ++i) {
                m[i] += o.v[static_cast<std::size_t>(i)];
                m2[i] += o.v[static_cast<std::size_t>(i)] * o.v[static_cast<std::size_t>(i)];
            }
            ++n_obs;
        }
        for (const auto& a : ep.actions) {
            Vec v(3);
            v << a.delta_pos.x, a.delta_pos.y, a.grip_cmd;
            am += v;
            am2 += v.array().square().matrix();
            ++n_act;
        }
    }
    p.obs_shift = m / static_cast<double>(n_obs);
    p.obs_scale = ((m2 / static_cast<double>(n_obs)).array() - p.obs_shift.array().square())
                      .max(1e-8)
                      .sqrt()
                      .max(1e-3)
                      .matrix();
    p.act_shift = am / static_cast<double>(n_act);
    p.act_scale = ((am2 / static_cast<double>(n_act)).array() - p.act_shift.array().square())
                      .max(1e-8)
                      .sqrt()
                      .max(1e-3)
                      .matrix();

    // Momentum buffers mirror the parameter tensors.
    WorldModelParams vel = p;
    vel.for_each_tensor([](const char*, Mat& t) { t.setZero(); });
    vel.for_each_vector([](const char*, Vec& v) { v.setZero(); });

    Rng rng(derive_seed(seed, 0x747261696eULL));
    std::vector<Mat> obs_seq(static_cast<std::size_t>(T + 1), Mat(cfg.d_obs, cfg.batch_size));
    std::vector<Mat> act_seq(static_cast<std::size_t>(T), Mat(cfg.d_act, cfg.batch_size));
    std::vector<Mat> eps_seq(static_cast<std::size_t>(T), Mat(cfg.d_z, cfg.batch_size));

    if (report && heldout && !heldout->empty())
        report->init_heldout_pred = wm_detail::heldout_pred_loss(p, *heldout, T);

    double best_heldout = std::numeric_limits<double>::infinity();
    int bad_rounds = 0;
    WorldModelParams best = p;

    for (int update = 0; update < cfg.max_updates; ++update) {
        for (int b = 0; b < cfg.batch_size; ++b) {
            const auto& ep = dataset[rng.uniform_index(dataset.size())];
            const int max_off = static_cast<int>(ep.actions.size()) - T;
            const int off = max_off > 0 ? static_cast<int>(rng.uniform_index(
                                              static_cast<std::uint64_t>(max_off + 1)))
                                        : 0;
            wm_detail::fill_segment(p, ep, off, T, b, &obs_seq, &act_seq);
        }
        for (auto& e : eps_seq)
            for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = rng.normal();

        wm_detail::Grads grads(p);
        auto loss = wm_detail::segment_loss_and_grads(p, obs_seq, act_seq, eps_seq, &grads);
        if (!std::isfinite(loss.total))
            throw std::runtime_error("train_world_model: non-finite loss at update " +
                                     std::to_string(update));
        if (report) report->train_loss.push_back(loss.total);

        double sq = 0.0;
        grads.g.for_each_tensor([&](const char*, Mat& t) { sq += t.squaredNorm(); });
        grads.g.for_each_vector([&](const char*, Vec& v) { sq += v.squaredNorm(); });
        const double norm = std::sqrt(sq);
        const double scale = norm > cfg.grad_clip ? cfg.grad_clip / norm : 1.0;

        auto sgd_mat = [&](Mat& param, Mat& v, const Mat& grad) {
            v = cfg.momentum * v - cfg.lr * scale * grad;
            param += v;
        };
        sgd_mat(p.We1, vel.We1, grads.g.We1);
        sgd_mat(p.Wem, vel.Wem, grads.g.Wem);
        sgd_mat(p.Wel, vel.Wel, grads.g.Wel);
        sgd_mat(p.Wr, vel.Wr, grads.g.Wr);
        sgd_mat(p.Ur, vel.Ur, grads.g.Ur);
        sgd_mat(p.Wu, vel.Wu, grads.g.Wu);
        sgd_mat(p.Uu, vel.Uu, grads.g.Uu);
        sgd_mat(p.Wc, vel.Wc, grads.g.Wc);
        sgd_mat(p.Uc, vel.Uc, grads.g.Uc);
        sgd_mat(p.Wp1, vel.Wp1, grads.g.Wp1);
        sgd_mat(p.Wpm, vel.Wpm, grads.g.Wpm);
        sgd_mat(p.Wpl, vel.Wpl, grads.g.Wpl);
        sgd_mat(p.Wd1, vel.Wd1, grads.g.Wd1);
        sgd_mat(p.Wd2, vel.Wd2, grads.g.Wd2);
        auto sgd_vec = [&](Vec& param, Vec& v, const Vec& grad) {
            v = cfg.momentum * v - cfg.lr * scale * grad;
            param += v;
        };
        sgd_vec(p.be1, vel.be1, grads.g.be1);
        sgd_vec(p.bem, vel.bem, grads.g.bem);
        sgd_vec(p.bel, vel.bel, grads.g.bel);
        sgd_vec(p.br, vel.br, grads.g.br);
        sgd_vec(p.bu, vel.bu, grads.g.bu);
        sgd_vec(p.bc, vel.bc, grads.g.bc);
        sgd_vec(p.bp1, vel.bp1, grads.g.bp1);
        sgd_vec(p.bpm, vel.bpm, grads.g.bpm);
        sgd_vec(p.bpl, vel.bpl, grads.g.bpl);
        sgd_vec(p.bd1, vel.bd1, grads.g.bd1);
        sgd_vec(p.bd2, vel.bd2, grads.g.bd2);

        if (report) report->updates_run = update + 1;

        if (heldout && !heldout->empty() && (update + 1) % cfg.eval_every == 0) {
            const double hl = wm_detail::heldout_pred_loss(p, *heldout, T);
            if (report) report->heldout_pred.push_back(hl);
            if (hl < best_heldout - 1e-9) {
                best_heldout = hl;
                best = p;
                bad_rounds = 0;
            } else if (++bad_rounds >= cfg.patience) {
                p = best;
                break;
            }
        }
    }
    if (heldout && !heldout->empty() && best_heldout < std::numeric_limits<double>::infinity())
        p = best;
    if (report && heldout && !heldout->empty())
        report->final_heldout_pred = wm_detail::heldout_pred_loss(p, *heldout, T);
    return p;
}

}  // namespace steerlab
