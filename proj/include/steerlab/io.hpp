#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "steerlab/env.hpp"
#include "steerlab/policy.hpp"
#include "steerlab/steering.hpp"
#include "steerlab/verifier.hpp"
#include "steerlab/worldmodel.hpp"

namespace steerlab {

using json = nlohmann::json;

// Floats in persisted datasets carry 9 significant digits.
inline std::string format_g9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

inline json num9(double v) { return json::parse(format_g9(v)); }

inline std::uint64_t fnv1a(const std::string& data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string fnv1a_hex(const std::string& data) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(data)));
    return buf;
}

// --- episode datasets (JSON lines) -------------------------------------------

inline json episode_to_json(const EpisodeRecord& ep) {
    json j;
    j["source"] = ep.source == EpisodeSource::demo ? "demo" : "policy_rollout";
    j["mode"] = mode_name(ep.mode);
    json obs = json::array();
    for (const auto& o : ep.observations) {
        json row = json::array();
        for (double v : o.v) row.push_back(num9(v));
        obs.push_back(row);
    }
    j["observations"] = obs;
    json acts = json::array();
    for (const auto& a : ep.actions)
        acts.push_back({num9(a.delta_pos.x), num9(a.delta_pos.y), num9(a.grip_cmd)});
    j["actions"] = acts;
    j["behavior_label"] = render_narration(extract_features(ep.observations));
    return j;
}

inline EpisodeRecord episode_from_json(const json& j) {
    EpisodeRecord ep;
    ep.source = j.at("source").get<std::string>() == "demo" ? EpisodeSource::demo
                                                            : EpisodeSource::policy_rollout;
    ep.mode = mode_from_name(j.at("mode").get<std::string>());
    for (const auto& row : j.at("observations")) {
        Observation o;
        if (row.size() != Observation::kDim)
            throw std::runtime_error("episode observation has wrong dimension");
        for (std::size_t i = 0; i < Observation::kDim; ++i) o.v[i] = row[i].get<double>();
        ep.observations.push_back(o);
    }
    for (const auto& row : j.at("actions")) {
        Action a;
        a.delta_pos = {row.at(0).get<double>(), row.at(1).get<double>()};
        a.grip_cmd = row.at(2).get<double>();
        ep.actions.push_back(a);
    }
    if (ep.observations.size() != ep.actions.size() + 1)
        throw std::runtime_error("episode lengths inconsistent");
    return ep;
}

inline void save_episodes_jsonl(const std::string& path, const std::vector<EpisodeRecord>& eps) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    for (const auto& ep : eps) out << episode_to_json(ep).dump() << "\n";
}

inline std::vector<EpisodeRecord> load_episodes_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::vector<EpisodeRecord> eps;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        eps.push_back(episode_from_json(json::parse(line)));
    }
    return eps;
}

// --- policy checkpoint (single JSON document, matrices row-major) ------------

inline json matrix_to_json(const Mat& m) {
    json j;
    j["rows"] = m.rows();
    j["cols"] = m.cols();
    json data = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
    j["data"] = data;
    return j;
}

inline Mat matrix_from_json(const json& j) {
    const Eigen::Index rows = j.at("rows").get<Eigen::Index>();
    const Eigen::Index cols = j.at("cols").get<Eigen::Index>();
    const auto& data = j.at("data");
    if (static_cast<Eigen::Index>(data.size()) != rows * cols)
        throw std::runtime_error("matrix data size mismatch");
    Mat m(rows, cols);
    Eigen::Index i = 0;
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(i++)].get<double>();
    return m;
}

inline json vector_to_json(const Vec& v) {
    json data = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) data.push_back(v[i]);
    return data;
}

inline Vec vector_from_json(const json& j) {
    Vec v(static_cast<Eigen::Index>(j.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = j[static_cast<std::size_t>(i)].get<double>();
    return v;
}

inline json policy_to_json(const ModeMixture& p) {
    json j;
    j["format"] = "steerlab-policy-v1";
    j["horizon"] = p.horizon;
    json modes = json::array();
    for (const auto& m : p.modes) {
        json jm;
        jm["mean"] = vector_to_json(m.mean);
        jm["stddev"] = vector_to_json(m.stddev);
        jm["weight"] = m.weight;
        jm["hint"] = mode_name(m.hint);
        modes.push_back(jm);
    }
    j["modes"] = modes;
    j["cond_weight"] = matrix_to_json(p.cond_weight);
    j["cond_bias"] = vector_to_json(p.cond_bias);
    j["obs_mean"] = vector_to_json(p.obs_mean);
    return j;
}

inline ModeMixture policy_from_json(const json& j) {
    if (j.value("format", "") != "steerlab-policy-v1")
        throw std::runtime_error("unrecognized policy checkpoint format");
    ModeMixture p;
    p.horizon = j.at("horizon").get<int>();
    double wsum = 0.0;
    for (const auto& jm : j.at("modes")) {
        MixtureMode m;
        m.mean = vector_from_json(jm.at("mean"));
        m.stddev = vector_from_json(jm.at("stddev"));
        m.weight = jm.at("weight").get<double>();
        m.hint = mode_from_name(jm.at("hint").get<std::string>());
        if (m.mean.size() != p.horizon * kActionDim || m.stddev.size() != m.mean.size())
            throw std::runtime_error("policy checkpoint: mode shape mismatch");
        if ((m.stddev.array() < 0).any())
            throw std::runtime_error("policy checkpoint: negative stddev");
        wsum += m.weight;
        p.modes.push_back(std::move(m));
    }
    if (std::abs(wsum - 1.0) > 1e-9)
        throw std::runtime_error("policy checkpoint: weights do not sum to 1");
    p.cond_weight = matrix_from_json(j.at("cond_weight"));
    p.cond_bias = vector_from_json(j.at("cond_bias"));
    p.obs_mean = vector_from_json(j.at("obs_mean"));
    if (p.cond_weight.rows() != p.horizon * kActionDim ||
        p.cond_weight.cols() != Observation::kDim)
        throw std::runtime_error("policy checkpoint: conditioning shape mismatch");
    return p;
}

inline void save_policy(const std::string& path, const ModeMixture& p) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << policy_to_json(p).dump(2) << "\n";
}

inline ModeMixture load_policy(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    json j;
    in >> j;
    return policy_from_json(j);
}

// --- world model checkpoint: JSON manifest + little-endian float32 blob ------

namespace io_detail {

inline void append_tensor(std::string* blob, const Mat& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            const float f = static_cast<float>(m(r, c));
            const char* bytes = reinterpret_cast<const char*>(&f);
            blob->append(bytes, 4);
        }
    }
}

inline void append_tensor(std::string* blob, const Vec& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        const float f = static_cast<float>(v[i]);
        const char* bytes = reinterpret_cast<const char*>(&f);
        blob->append(bytes, 4);
    }
}

inline void read_tensor(const std::string& blob, std::size_t* off, Mat* m) {
    for (Eigen::Index r = 0; r < m->rows(); ++r) {
        for (Eigen::Index c = 0; c < m->cols(); ++c) {
            float f;
            std::memcpy(&f, blob.data() + *off, 4);
            *off += 4;
            (*m)(r, c) = f;
        }
    }
}

inline void read_tensor(const std::string& blob, std::size_t* off, Vec* v) {
    for (Eigen::Index i = 0; i < v->size(); ++i) {
        float f;
        std::memcpy(&f, blob.data() + *off, 4);
        *off += 4;
        (*v)[i] = f;
    }
}

}  // namespace io_detail

inline void save_world_model(const std::string& manifest_path, const std::string& blob_path,
                             WorldModelParams p, std::uint64_t seed,
                             const std::string& data_hash) {
    std::string blob;
    WorldModelParams& mp = p;
    json shapes = json::array();
    mp.for_each_tensor([&](const char* name, Mat& m) {
        shapes.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
        io_detail::append_tensor(&blob, m);
    });
    mp.for_each_vector([&](const char* name, Vec& v) {
        shapes.push_back({{"name", name}, {"rows", v.size()}, {"cols", 1}});
        io_detail::append_tensor(&blob, v);
    });
    io_detail::append_tensor(&blob, p.obs_shift);
    io_detail::append_tensor(&blob, p.obs_scale);
    io_detail::append_tensor(&blob, p.act_shift);
    io_detail::append_tensor(&blob, p.act_scale);

    json manifest;
    manifest["format"] = "steerlab-wm-v1";
    manifest["dims"] = {{"d_obs", p.cfg.d_obs},     {"d_h", p.cfg.d_h},
                        {"d_z", p.cfg.d_z},         {"d_act", p.cfg.d_act},
                        {"enc_hidden", p.cfg.enc_hidden},
                        {"prior_hidden", p.cfg.prior_hidden},
                        {"dec_hidden", p.cfg.dec_hidden}};
    manifest["loss_weights"] = {{"alpha_dyn", p.cfg.alpha_dyn},
                                {"alpha_rep", p.cfg.alpha_rep},
                                {"alpha_pred", p.cfg.alpha_pred}};
    manifest["seed"] = seed;
    manifest["data_hash"] = data_hash;
    manifest["tensors"] = shapes;
    manifest["blob_bytes"] = blob.size();
    manifest["blob_hash"] = fnv1a_hex(blob);

    std::ofstream mout(manifest_path);
    if (!mout) throw std::runtime_error("cannot open for writing: " + manifest_path);
    mout << manifest.dump(2) << "\n";
    std::ofstream bout(blob_path, std::ios::binary);
    if (!bout) throw std::runtime_error("cannot open for writing: " + blob_path);
    bout.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

inline WorldModelParams load_world_model(const std::string& manifest_path,
                                         const std::string& blob_path) {
    std::ifstream min(manifest_path);
    if (!min) throw std::runtime_error("cannot open: " + manifest_path);
    json manifest;
    min >> manifest;
    if (manifest.value("format", "") != "steerlab-wm-v1")
        throw std::runtime_error("unrecognized world model checkpoint format");

    WorldModelConfig cfg;
    const auto& dims = manifest.at("dims");
    cfg.d_obs = dims.at("d_obs").get<int>();
    cfg.d_h = dims.at("d_h").get<int>();
    cfg.d_z = dims.at("d_z").get<int>();
    cfg.d_act = dims.at("d_act").get<int>();
    cfg.enc_hidden = dims.at("enc_hidden").get<int>();
    cfg.prior_hidden = dims.at("prior_hidden").get<int>();
    cfg.dec_hidden = dims.at("dec_hidden").get<int>();
    const auto& lw = manifest.at("loss_weights");
    cfg.alpha_dyn = lw.at("alpha_dyn").get<double>();
    cfg.alpha_rep = lw.at("alpha_rep").get<double>();
    cfg.alpha_pred = lw.at("alpha_pred").get<double>();

    std::ifstream bin(blob_path, std::ios::binary);
    if (!bin) throw std::runtime_error("cannot open: " + blob_path);
    std::stringstream ss;
    ss << bin.rdbuf();
    const std::string blob = ss.str();
    if (blob.size() != manifest.at("blob_bytes").get<std::size_t>())
        throw std::runtime_error("world model blob size mismatch");
    if (fnv1a_hex(blob) != manifest.at("blob_hash").get<std::string>())
        throw std::runtime_error("world model blob hash mismatch");

    WorldModelParams p = init_world_model(cfg, 0);
    std::size_t expect = 0;
    std::size_t idx = 0;
    const auto& shapes = manifest.at("tensors");
    auto check_shape = [&](const char* name, Eigen::Index rows, Eigen::Index cols) {
        const auto& s = shapes.at(idx++);
        if (s.at("name").get<std::string>() != name ||
            s.at("rows").get<Eigen::Index>() != rows || s.at("cols").get<Eigen::Index>() != cols)
            throw std::runtime_error(std::string("world model tensor shape mismatch at ") + name);
        expect += static_cast<std::size_t>(rows * cols) * 4;
    };
    std::size_t off = 0;
    p.for_each_tensor([&](const char* name, Mat& m) {
        check_shape(name, m.rows(), m.cols());
        io_detail::read_tensor(blob, &off, &m);
    });
    p.for_each_vector([&](const char* name, Vec& v) {
        check_shape(name, v.size(), 1);
        io_detail::read_tensor(blob, &off, &v);
    });
    io_detail::read_tensor(blob, &off, &p.obs_shift);
    io_detail::read_tensor(blob, &off, &p.obs_scale);
    io_detail::read_tensor(blob, &off, &p.act_shift);
    io_detail::read_tensor(blob, &off, &p.act_scale);
    expect += static_cast<std::size_t>(2 * cfg.d_obs + 2 * cfg.d_act) * 4;
    if (off != blob.size() || expect != blob.size())
        throw std::runtime_error("world model blob does not match manifest shapes");
    return p;
}

// --- run traces ---------------------------------------------------------------

inline json trace_to_json(const StepTrace& t) {
    json j;
    j["timestamp_ms"] = t.timestamp_ms;
    json obs = json::array();
    for (double v : t.observation.v) obs.push_back(num9(v));
    j["observation"] = obs;
    json cands = json::array();
    for (const auto& plan : t.candidates) {
        json acts = json::array();
        for (const auto& a : plan.actions)
            acts.push_back({num9(a.delta_pos.x), num9(a.delta_pos.y), num9(a.grip_cmd)});
        cands.push_back(acts);
    }
    j["candidates"] = cands;
    json narr = json::array();
    for (const auto& n : t.narrations) narr.push_back(n.text);
    j["narrations"] = narr;
    json verdict;
    verdict["chosen_index"] = t.verdict.chosen_index;
    json per = json::array();
    for (const auto& c : t.verdict.per_candidate)
        per.push_back({{"score", c.score}, {"ok", c.ok}, {"rationale", c.rationale}});
    verdict["per_candidate"] = per;
    j["verdict"] = verdict;
    j["abstained"] = t.abstained;
    j["executed"] = t.executed;
    if (t.executed) j["executed_features"] = render_narration(t.executed_features);
    j["success"] = t.success;
    return j;
}

}  // namespace steerlab
