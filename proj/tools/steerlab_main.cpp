// steerlab command-line interface: dataset generation, training, steering,
// monitoring, and metric ablations. Exit codes: 0 success, 2 configuration
// error, 3 runtime/backend error.

#include "steerlab/aggregate.hpp"
#include "steerlab/env.hpp"
#include "steerlab/io.hpp"
#include "steerlab/metrics.hpp"
#include "steerlab/policy.hpp"
#include "steerlab/steering.hpp"
#include "steerlab/tasks.hpp"
#include "steerlab/verifier.hpp"
#include "steerlab/wire.hpp"
#include "steerlab/worldmodel.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace steerlab;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flat, versioned run configuration. Every command reads the same document;
// unknown keys are rejected so typos fail loudly.
struct RunConfig {
    std::string task = "cup-serve";
    std::uint64_t seed = 0;
    std::string out_dir = "runs/default";
    int n_demos = 100;
    int n_rollouts = 250;
    int n_train = 300;
    int policy_modes = 3;
    int n_samples = 100;
    int k = 6;
    int cluster_max_iter = 20;
    double sample_noise_scale = 1.0;
    bool skew_weights = true;
    std::string backend = "oracle";
    std::string endpoint = "http://127.0.0.1:8751";
    std::string auth_token;
    int wm_d_h = 32;
    int wm_d_z = 8;
    int wm_hidden = 64;
    int wm_max_updates = 3000;
    double wm_lr = 1e-3;
    int episodes = 20;

    std::string hash;  // FNV-1a of the effective document, embedded in summaries

    json to_json() const {
        return json{{"format", "steerlab-config-v1"},
                    {"task", task},
                    {"seed", seed},
                    {"out_dir", out_dir},
                    {"n_demos", n_demos},
                    {"n_rollouts", n_rollouts},
                    {"n_train", n_train},
                    {"policy_modes", policy_modes},
                    {"n_samples", n_samples},
                    {"k", k},
                    {"cluster_max_iter", cluster_max_iter},
                    {"sample_noise_scale", sample_noise_scale},
                    {"skew_weights", skew_weights},
                    {"backend", backend},
                    {"endpoint", endpoint},
                    {"auth_token", auth_token},
                    {"wm_d_h", wm_d_h},
                    {"wm_d_z", wm_d_z},
                    {"wm_hidden", wm_hidden},
                    {"wm_max_updates", wm_max_updates},
                    {"wm_lr", wm_lr},
                    {"episodes", episodes}};
    }
};

template <typename T>
void read_key(const json& j, const char* key, T* out) {
    if (!j.contains(key)) return;
    try {
        *out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
}

RunConfig load_config(const std::string& path) {
    RunConfig cfg;
    json j;
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file: " + path);
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw ConfigError(std::string("config is not valid JSON: ") + e.what());
        }
        if (j.value("format", "") != "steerlab-config-v1")
            throw ConfigError("config must declare format = steerlab-config-v1");
        const json defaults = cfg.to_json();
        for (const auto& [key, value] : j.items())
            if (!defaults.contains(key)) throw ConfigError("unknown config key: " + key);
        read_key(j, "task", &cfg.task);
        read_key(j, "seed", &cfg.seed);
        read_key(j, "out_dir", &cfg.out_dir);
        read_key(j, "n_demos", &cfg.n_demos);
        read_key(j, "n_rollouts", &cfg.n_rollouts);
        read_key(j, "n_train", &cfg.n_train);
        read_key(j, "policy_modes", &cfg.policy_modes);
        read_key(j, "n_samples", &cfg.n_samples);
        read_key(j, "k", &cfg.k);
        read_key(j, "cluster_max_iter", &cfg.cluster_max_iter);
        read_key(j, "sample_noise_scale", &cfg.sample_noise_scale);
        read_key(j, "skew_weights", &cfg.skew_weights);
        read_key(j, "backend", &cfg.backend);
        read_key(j, "endpoint", &cfg.endpoint);
        read_key(j, "auth_token", &cfg.auth_token);
        read_key(j, "wm_d_h", &cfg.wm_d_h);
        read_key(j, "wm_d_z", &cfg.wm_d_z);
        read_key(j, "wm_hidden", &cfg.wm_hidden);
        read_key(j, "wm_max_updates", &cfg.wm_max_updates);
        read_key(j, "wm_lr", &cfg.wm_lr);
        read_key(j, "episodes", &cfg.episodes);
    }
    return cfg;
}

void apply_env_overrides(RunConfig* cfg) {
    if (const char* v = std::getenv("VERIFIER_ENDPOINT")) cfg->endpoint = v;
    if (const char* v = std::getenv("VERIFIER_TOKEN")) cfg->auth_token = v;
    if (const char* v = std::getenv("RUN_SEED")) {
        try {
            cfg->seed = std::stoull(v);
        } catch (const std::exception&) {
            throw ConfigError(std::string("RUN_SEED is not an integer: ") + v);
        }
    }
}

void finalize(RunConfig* cfg) {
    if (cfg->n_demos < 1 || cfg->n_rollouts < 0)
        throw ConfigError("n_demos must be >= 1 and n_rollouts >= 0");
    if (cfg->n_train < 1 || cfg->n_train >= cfg->n_demos + cfg->n_rollouts)
        throw ConfigError("n_train must split the dataset into nonempty train/test parts");
    if (cfg->k < 1 || cfg->n_samples < cfg->k)
        throw ConfigError("requires n_samples >= k >= 1");
    if (cfg->episodes < 1) throw ConfigError("episodes must be >= 1");
    try {
        make_task(cfg->task);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    cfg->hash = fnv1a_hex(cfg->to_json().dump());
}

WorldModelConfig wm_config(const RunConfig& cfg) {
    WorldModelConfig wc;
    wc.d_h = cfg.wm_d_h;
    wc.d_z = cfg.wm_d_z;
    wc.enc_hidden = cfg.wm_hidden;
    wc.prior_hidden = cfg.wm_hidden;
    wc.dec_hidden = cfg.wm_hidden;
    wc.max_updates = cfg.wm_max_updates;
    wc.lr = cfg.wm_lr;
    return wc;
}

SteeringConfig steering_config(const RunConfig& cfg, const TaskSpec& task) {
    SteeringConfig sc;
    sc.n_samples = cfg.n_samples;
    sc.k = cfg.k;
    sc.cluster_max_iter = cfg.cluster_max_iter;
    sc.sample_noise_scale = cfg.sample_noise_scale;
    sc.task = task;
    return sc;
}

std::unique_ptr<VerifierBackend> make_backend(const RunConfig& cfg) {
    if (cfg.backend == "oracle") return std::make_unique<OracleBackend>();
    if (cfg.backend == "wire") {
        WireConfig wc;
        wc.base_url = cfg.endpoint;
        wc.auth_token = cfg.auth_token;
        return std::make_unique<WireBackend>(wc);
    }
    throw ConfigError("unknown backend: " + cfg.backend + " (expected oracle or wire)");
}

std::string file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return fnv1a_hex(data);
}

// Episode label used everywhere: the task is satisfied and the grasp
// actually succeeded.
bool episode_success(const TaskSpec& task, const std::vector<Observation>& obs) {
    auto f = extract_features(obs);
    return task_satisfied(task, f) && f.grasp_succeeded;
}

LatentRollout imagine_episode(const WorldModelParams& wm, const EpisodeRecord& ep,
                              std::uint64_t seed) {
    ActionPlan plan;
    const std::size_t T = std::min<std::size_t>(ep.actions.size(), kPlanHorizon);
    plan.actions.assign(ep.actions.begin(), ep.actions.begin() + static_cast<long>(T));
    LatentState init = encode_init(wm, ep.observations.front(), derive_seed(seed, 0x696d61ULL));
    return imagine(wm, init, plan, ImagineMode::mean, derive_seed(seed, 0x696d62ULL));
}

// ---------------------------------------------------------------------------
// gen-data

int cmd_gen_data(const RunConfig& cfg, bool force) {
    const fs::path dir(cfg.out_dir);
    if (fs::exists(dir) && !fs::is_empty(dir) && !force)
        throw ConfigError("output directory " + cfg.out_dir +
                          " is not empty (use --force to overwrite)");
    fs::create_directories(dir);

    const TaskSpec task = make_task(cfg.task);
    const TaskId family = task_family(task);
    const auto modes = default_modes(family);

    // 100 demos spread round-robin over the task's scripted modes.
    std::vector<EpisodeRecord> episodes;
    for (int i = 0; i < cfg.n_demos; ++i) {
        const ModeId mode = modes[static_cast<std::size_t>(i) % modes.size()];
        episodes.push_back(run_scripted_episode(
            mode, derive_seed(cfg.seed, 0x64656d6fULL, static_cast<std::uint64_t>(i))));
    }

    // 250 policy rollouts: fit a scratch policy on the demos and execute one
    // open-loop sample per fresh initial state.
    ModeMixture scratch = fit_policy(episodes, cfg.policy_modes, derive_seed(cfg.seed, 1));
    for (int i = 0; i < cfg.n_rollouts; ++i) {
        const std::uint64_t es = derive_seed(cfg.seed, 0x726f6c6cULL, static_cast<std::uint64_t>(i));
        WorldState s = reset_state(es);
        EpisodeRecord ep;
        ep.source = EpisodeSource::policy_rollout;
        ep.observations.push_back(observe(s));
        ActionPlan plan = sample_plans(scratch, observe(s), 1, derive_seed(es, 2),
                                       cfg.sample_noise_scale)[0];
        ep.mode = plan.mode_hint.value_or(ModeId::handle);
        for (std::size_t t = 0; t < plan.actions.size(); ++t) {
            ep.actions.push_back(plan.actions[t]);
            s = env_step(s, plan.actions[t], derive_seed(es, 0x657865ULL, t));
            ep.observations.push_back(observe(s));
        }
        episodes.push_back(std::move(ep));
    }

    // Deterministic shuffle, then split n_train / rest.
    Rng rng(derive_seed(cfg.seed, 0x73706c6974ULL));
    std::vector<std::size_t> order(episodes.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.uniform_index(i)]);

    std::vector<EpisodeRecord> train, test;
    for (std::size_t i = 0; i < order.size(); ++i)
        (static_cast<int>(i) < cfg.n_train ? train : test).push_back(episodes[order[i]]);

    const std::string train_path = (dir / "train.jsonl").string();
    const std::string test_path = (dir / "test.jsonl").string();
    save_episodes_jsonl(train_path, train);
    save_episodes_jsonl(test_path, test);

    json manifest;
    manifest["format"] = "steerlab-dataset-v1";
    manifest["task"] = cfg.task;
    manifest["seed"] = cfg.seed;
    manifest["config_hash"] = cfg.hash;
    manifest["counts"] = {{"demo", cfg.n_demos}, {"rollout", cfg.n_rollouts}};
    manifest["split"] = {{"train", train.size()}, {"test", test.size()}};
    manifest["files"] = {{"train", {{"path", "train.jsonl"}, {"hash", file_hash(train_path)}}},
                         {"test", {{"path", "test.jsonl"}, {"hash", file_hash(test_path)}}}};
    std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";

    std::cout << "wrote " << train.size() << " train + " << test.size() << " test episodes to "
              << cfg.out_dir << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train

int cmd_train(const RunConfig& cfg, bool wm_only, bool policy_only) {
    const fs::path dir(cfg.out_dir);
    auto train_eps = load_episodes_jsonl((dir / "train.jsonl").string());
    auto test_eps = load_episodes_jsonl((dir / "test.jsonl").string());
    const std::string data_hash = file_hash((dir / "train.jsonl").string());
    const TaskSpec task = make_task(cfg.task);

    if (!wm_only) {
        std::vector<EpisodeRecord> demos;
        for (const auto& ep : train_eps)
            if (ep.source == EpisodeSource::demo) demos.push_back(ep);
        ModeMixture policy = fit_policy(demos, cfg.policy_modes, derive_seed(cfg.seed, 10));
        save_policy((dir / "policy.json").string(), policy);
        std::cout << "policy: " << policy.modes.size() << " modes, weights";
        for (const auto& m : policy.modes) std::cout << " " << m.weight << "(" << mode_name(m.hint) << ")";
        std::cout << "\n";
    }

    if (!policy_only) {
        TrainReport report;
        WorldModelParams wm =
            train_world_model(train_eps, wm_config(cfg), derive_seed(cfg.seed, 11), &report,
                              &test_eps);
        save_world_model((dir / "wm.json").string(), (dir / "wm.bin").string(), wm, cfg.seed,
                         data_hash);
        std::cout << "world model: " << report.updates_run << " updates, held-out L_pred "
                  << report.init_heldout_pred << " -> " << report.final_heldout_pred << "\n";
        std::cout << "L_pred curve:";
        for (double v : report.heldout_pred) std::cout << " " << format_g9(v);
        std::cout << "\n";

        // Latent-rollout classifier baseline for the training task: label
        // each training episode by executed success, featurize its imagined
        // rollout.
        std::vector<std::pair<LatentRollout, bool>> clf_data;
        for (std::size_t i = 0; i < train_eps.size(); ++i) {
            if (train_eps[i].actions.size() < kPlanHorizon) continue;
            clf_data.emplace_back(imagine_episode(wm, train_eps[i], derive_seed(cfg.seed, 12, i)),
                                  episode_success(task, train_eps[i].observations));
        }
        ClassifierParams clf = train_latent_classifier(clf_data);
        json cj;
        cj["format"] = "steerlab-classifier-v1";
        cj["task"] = cfg.task;
        cj["w"] = vector_to_json(clf.w);
        cj["b"] = clf.b;
        cj["feat_shift"] = vector_to_json(clf.feat_shift);
        cj["feat_scale"] = vector_to_json(clf.feat_scale);
        std::ofstream(dir / "classifier.json") << cj.dump(2) << "\n";
        std::cout << "classifier: trained on " << clf_data.size() << " episodes\n";
    }
    return kExitOk;
}

ClassifierParams load_classifier(const fs::path& dir) {
    std::ifstream in(dir / "classifier.json");
    if (!in) throw std::runtime_error("cannot open classifier checkpoint in " + dir.string());
    json j;
    in >> j;
    if (j.value("format", "") != "steerlab-classifier-v1")
        throw std::runtime_error("unrecognized classifier checkpoint format");
    ClassifierParams p;
    p.w = vector_from_json(j.at("w"));
    p.b = j.at("b").get<double>();
    p.feat_shift = vector_from_json(j.at("feat_shift"));
    p.feat_scale = vector_from_json(j.at("feat_scale"));
    return p;
}

// ---------------------------------------------------------------------------
// steer

int cmd_steer(const RunConfig& cfg, const std::string& policy_kind) {
    const fs::path dir(cfg.out_dir);
    ModeMixture policy = load_policy((dir / "policy.json").string());
    WorldModelParams wm =
        load_world_model((dir / "wm.json").string(), (dir / "wm.bin").string());
    const TaskSpec task = make_task(cfg.task);

    if (cfg.skew_weights) {
        std::vector<ModeId> hints;
        for (const auto& m : policy.modes) hints.push_back(m.hint);
        policy.set_weights(skewed_weights_for(task_family(task), hints));
    }

    EpisodePolicy ep_policy = EpisodePolicy::steered;
    std::optional<ClassifierParams> clf;
    if (policy_kind == "baseline") {
        ep_policy = EpisodePolicy::baseline;
    } else if (policy_kind == "classifier") {
        ep_policy = EpisodePolicy::classifier;
        clf = load_classifier(dir);
    } else if (policy_kind != "steered") {
        throw ConfigError("unknown policy kind: " + policy_kind);
    }

    auto backend = make_backend(cfg);
    SteeringConfig sc = steering_config(cfg, task);

    std::vector<StepTrace> traces;
    int successes = 0, abstentions = 0;
    for (int e = 0; e < cfg.episodes; ++e) {
        StepTrace t = run_episode(derive_seed(cfg.seed, 0x657069ULL, static_cast<std::uint64_t>(e)),
                                  policy, wm, *backend, sc, ep_policy,
                                  clf ? &*clf : nullptr);
        successes += t.success ? 1 : 0;
        abstentions += t.abstained ? 1 : 0;
        traces.push_back(std::move(t));
    }

    // Write outputs only after the full run succeeded: no partial summaries.
    const std::string suffix = policy_kind == "steered" ? "" : "_" + policy_kind;
    std::ofstream tout(dir / ("traces" + suffix + ".jsonl"));
    for (const auto& t : traces) tout << trace_to_json(t).dump() << "\n";

    RateSummary rate = wald_summary(successes, cfg.episodes);
    json summary;
    summary["format"] = "steerlab-steer-summary-v1";
    summary["task"] = cfg.task;
    summary["backend"] = cfg.backend;
    summary["policy"] = policy_kind;
    summary["episodes"] = cfg.episodes;
    summary["successes"] = successes;
    summary["abstentions"] = abstentions;
    summary["success_rate"] = rate.rate;
    summary["wald_ci_half_width"] = rate.ci_half_width;
    summary["seed"] = cfg.seed;
    summary["config_hash"] = cfg.hash;
    std::ofstream(dir / ("summary" + suffix + ".json")) << summary.dump(2) << "\n";

    std::cout << policy_kind << " success rate on " << cfg.task << ": " << rate.rate << " +/- "
              << rate.ci_half_width << " (" << successes << "/" << cfg.episodes << ", "
              << abstentions << " abstained)\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// monitor

int cmd_monitor(const RunConfig& cfg, const std::string& rollouts_file) {
    const fs::path dir(cfg.out_dir);
    WorldModelParams wm =
        load_world_model((dir / "wm.json").string(), (dir / "wm.bin").string());
    const TaskSpec task = make_task(cfg.task);
    auto episodes = load_episodes_jsonl(rollouts_file);
    if (episodes.empty()) throw std::runtime_error("no episodes in " + rollouts_file);
    auto backend = make_backend(cfg);

    std::vector<std::pair<Narration, bool>> labeled;
    for (std::size_t i = 0; i < episodes.size(); ++i) {
        LatentRollout roll = imagine_episode(wm, episodes[i], derive_seed(cfg.seed, 20, i));
        labeled.emplace_back(narrate(roll, wm, *backend),
                             episode_success(task, episodes[i].observations));
    }
    MonitorStats stats = monitor_rollouts(labeled, task, *backend);

    json out;
    out["format"] = "steerlab-monitor-v1";
    out["task"] = cfg.task;
    out["backend"] = cfg.backend;
    out["n"] = stats.n;
    out["acc"] = stats.acc;
    out["tpr"] = stats.tpr;
    out["tnr"] = stats.tnr;
    out["config_hash"] = cfg.hash;
    std::ofstream(dir / "monitor.json") << out.dump(2) << "\n";

    std::cout << "n\tACC\tTPR\tTNR\n"
              << stats.n << "\t" << stats.acc << "\t" << stats.tpr << "\t" << stats.tnr << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// ablate-metrics

int cmd_ablate(const RunConfig& cfg, const std::string& csv_path) {
    const auto corpus = default_ablation_corpus();
    std::vector<std::string> texts;
    for (const auto& n : corpus) texts.push_back(n.text);
    TfIdf tfidf(texts);

    std::vector<ScoreDistributionReport> reports;
    reports.push_back(ablation_report(corpus, "category-match", category_match_metric));
    reports.push_back(ablation_report(corpus, "rouge-l", [](const std::string& a,
                                                            const std::string& b) {
        return rouge_l(a, b).f1;
    }));
    reports.push_back(ablation_report(corpus, "tfidf-cosine",
                                      [&](const std::string& a, const std::string& b) {
                                          return tfidf.cosine(a, b);
                                      }));

    json out;
    out["format"] = "steerlab-ablation-v1";
    out["corpus_size"] = corpus.size();
    out["config_hash"] = cfg.hash;
    json jr = json::array();
    for (const auto& r : reports) {
        jr.push_back({{"metric", r.metric},
                      {"intra_count", r.intra_scores.size()},
                      {"inter_count", r.inter_scores.size()},
                      {"separation_auc", r.separation_auc},
                      {"intra_scores", r.intra_scores},
                      {"inter_scores", r.inter_scores}});
    }
    out["reports"] = jr;
    fs::create_directories(cfg.out_dir);
    std::ofstream(fs::path(cfg.out_dir) / "ablation.json") << out.dump(2) << "\n";

    if (!csv_path.empty()) {
        std::ofstream csv(csv_path);
        if (!csv) throw std::runtime_error("cannot open for writing: " + csv_path);
        csv << "metric,kind,score\n";
        for (const auto& r : reports) {
            for (double s : r.intra_scores) csv << r.metric << ",intra," << format_g9(s) << "\n";
            for (double s : r.inter_scores) csv << r.metric << ",inter," << format_g9(s) << "\n";
        }
    }

    for (const auto& r : reports)
        std::cout << r.metric << ": intra " << r.intra_scores.size() << ", inter "
                  << r.inter_scores.size() << ", AUC " << r.separation_auc << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"steerlab: plan sampling, imagination, narration, and steering workbench"};
    app.require_subcommand(1);
    app.fallthrough();  // global options may appear after the subcommand

    std::string config_path;
    std::optional<std::uint64_t> seed_flag;
    std::optional<std::string> task_flag, out_flag, backend_flag, endpoint_flag, token_flag;
    app.add_option("--config", config_path, "JSON run configuration");
    app.add_option("--seed", seed_flag, "override the run seed");
    app.add_option("--task", task_flag, "task id (cup-serve, cup-serve-oil, bag-gentle)");
    app.add_option("--out", out_flag, "output directory");
    app.add_option("--backend", backend_flag, "verifier backend (oracle or wire)");
    app.add_option("--endpoint", endpoint_flag, "wire verifier base URL");
    app.add_option("--token", token_flag, "wire verifier bearer token");

    auto* gen = app.add_subcommand("gen-data", "generate demos + policy rollouts");
    bool force = false;
    gen->add_flag("--force", force, "overwrite a non-empty output directory");

    auto* train = app.add_subcommand("train", "fit the base policy and train the world model");
    bool wm_only = false, policy_only = false;
    train->add_flag("--wm-only", wm_only, "skip the policy fit");
    train->add_flag("--policy-only", policy_only, "skip world-model training");

    auto* steer = app.add_subcommand("steer", "run steered/baseline episodes and summarize");
    int episodes_flag = 0;
    bool baseline = false;
    std::string policy_kind = "steered";
    steer->add_option("--episodes", episodes_flag, "number of evaluation episodes");
    steer->add_flag("--baseline", baseline, "execute raw policy samples instead of steering");
    steer->add_option("--policy", policy_kind, "steered | baseline | classifier");

    auto* monitor = app.add_subcommand("monitor", "judge recorded rollouts, report ACC/TPR/TNR");
    std::string rollouts_file;
    monitor->add_option("--rollouts", rollouts_file, "episode JSONL to monitor")->required();

    auto* ablate = app.add_subcommand("ablate-metrics", "score-distribution ablation report");
    std::string csv_path;
    ablate->add_option("--csv", csv_path, "also write per-pair scores as CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    try {
        RunConfig cfg = load_config(config_path);
        apply_env_overrides(&cfg);
        if (seed_flag) cfg.seed = *seed_flag;
        if (task_flag) cfg.task = *task_flag;
        if (out_flag) cfg.out_dir = *out_flag;
        if (backend_flag) cfg.backend = *backend_flag;
        if (endpoint_flag) cfg.endpoint = *endpoint_flag;
        if (token_flag) cfg.auth_token = *token_flag;
        if (episodes_flag > 0) cfg.episodes = episodes_flag;
        if (baseline) policy_kind = "baseline";
        finalize(&cfg);
        if (cfg.backend != "oracle" && cfg.backend != "wire")
            throw ConfigError("unknown backend: " + cfg.backend);

        if (gen->parsed()) return cmd_gen_data(cfg, force);
        if (train->parsed()) return cmd_train(cfg, wm_only, policy_only);
        if (steer->parsed()) return cmd_steer(cfg, policy_kind);
        if (monitor->parsed()) return cmd_monitor(cfg, rollouts_file);
        if (ablate->parsed()) return cmd_ablate(cfg, csv_path);
        return kExitConfig;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const CLI::Error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const VerifierError& e) {
        std::cerr << "backend error: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}
