#pragma once

#include <atomic>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

// verifier.hpp (and Eigen underneath) must come before httplib: system
// headers pulled in by httplib define macros that break Eigen's product
// kernels if they are seen first.
#include "steerlab/verifier.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace steerlab {

struct WireConfig {
    std::string base_url = "http://127.0.0.1:8751";
    std::string path = "/verify";
    std::string auth_token;  // sent as Authorization: Bearer <token> when set
    int timeout_ms = 10000;
};

// JSON request/response client for an external language-model verifier.
// Responses must be text in the narration grammar (narrate) or a candidate
// index (select); anything else is an error, never silently coerced.
class WireBackend final : public VerifierBackend {
public:
    explicit WireBackend(WireConfig cfg) : cfg_(std::move(cfg)) {}

    Narration narrate_frames(const std::vector<Observation>& frames) override {
        nlohmann::json req;
        req["type"] = "narrate";
        req["rollout_id"] = "r" + std::to_string(next_id_++);
        nlohmann::json jf = nlohmann::json::array();
        for (const auto& o : frames) {
            nlohmann::json row = nlohmann::json::array();
            for (double v : o.v) row.push_back(v);
            jf.push_back(row);
        }
        req["frames"] = jf;
        req["grammar"] = grammar_templates();

        nlohmann::json rsp = post(req);
        if (rsp.value("type", "") != "narration" ||
            rsp.value("rollout_id", "") != req["rollout_id"].get<std::string>() ||
            !rsp.contains("text") || !rsp["text"].is_string())
            throw VerifierError("wire narrate: malformed response", rsp.dump());
        const std::string text = rsp["text"].get<std::string>();
        BehaviorFeatures f;
        try {
            f = parse_narration(text);
        } catch (const NarrationParseError& e) {
            throw VerifierError(std::string("wire narrate: unparseable text: ") + e.what(), text);
        }
        return {f, text};
    }

    Verdict select(const std::vector<Narration>& narrations, const TaskSpec& task) override {
        if (narrations.empty()) throw std::invalid_argument("select: no candidates");
        nlohmann::json req;
        req["type"] = "select";
        req["task"] = task.text;
        nlohmann::json jn = nlohmann::json::array();
        for (const auto& n : narrations) jn.push_back(n.text);
        req["narrations"] = jn;

        nlohmann::json rsp = post(req);
        if (rsp.value("type", "") != "verdict" || !rsp.contains("choice") ||
            !rsp["choice"].is_number_integer())
            throw VerifierError("wire select: malformed response", rsp.dump());
        const int choice = rsp["choice"].get<int>();
        if (choice < 0 || choice >= static_cast<int>(narrations.size()))
            throw VerifierError("wire select: choice out of range", rsp.dump());

        // The client ranks only; per-candidate ok still comes from the
        // machine-readable predicates over the parsed narrations.
        Verdict v;
        v.chosen_index = choice;
        for (std::size_t i = 0; i < narrations.size(); ++i) {
            CandidateJudgment j;
            j.ok = !any_forbid_fires(task, narrations[i].features);
            j.score = static_cast<int>(i) == choice ? 1.0 : 0.0;
            j.rationale = static_cast<int>(i) == choice ? rsp.value("rationale", "") : "";
            v.per_candidate.push_back(std::move(j));
        }
        return v;
    }

    std::pair<bool, std::string> monitor(const Narration& narration,
                                         const TaskSpec& task) override {
        nlohmann::json req;
        req["type"] = "monitor";
        req["task"] = task.text;
        req["narration"] = narration.text;
        nlohmann::json rsp = post(req);
        if (rsp.value("type", "") != "verdict" || !rsp.contains("ok") || !rsp["ok"].is_boolean())
            throw VerifierError("wire monitor: malformed response", rsp.dump());
        return {rsp["ok"].get<bool>(), rsp.value("rationale", "")};
    }

private:
    nlohmann::json post(const nlohmann::json& req) {
        httplib::Client client(cfg_.base_url);
        client.set_connection_timeout(0, cfg_.timeout_ms * 1000);
        client.set_read_timeout(0, cfg_.timeout_ms * 1000);
        httplib::Headers headers;
        if (!cfg_.auth_token.empty())
            headers.emplace("Authorization", "Bearer " + cfg_.auth_token);
        auto res = client.Post(cfg_.path, headers, req.dump(), "application/json");
        if (!res)
            throw VerifierError("wire: request failed: " + httplib::to_string(res.error()));
        if (res->status != 200)
            throw VerifierError("wire: HTTP " + std::to_string(res->status), res->body);
        try {
            return nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::parse_error& e) {
            throw VerifierError(std::string("wire: invalid JSON response: ") + e.what(),
                                res->body);
        }
    }

    WireConfig cfg_;
    std::atomic<std::uint64_t> next_id_{0};
};

}  // namespace steerlab
