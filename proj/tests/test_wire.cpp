#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <functional>
#include <string>
#include <thread>

#include "steerlab/tasks.hpp"
#include "steerlab/verifier.hpp"
#include "steerlab/wire.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

using namespace steerlab;
using nlohmann::json;

namespace {

// In-process verifier stub: each test installs a handler that maps the
// parsed request JSON to a response body.
class StubServer {
public:
    using Handler = std::function<std::string(const json&, const httplib::Request&)>;

    explicit StubServer(Handler handler) : handler_(std::move(handler)) {
        server_.Post("/verify", [this](const httplib::Request& req, httplib::Response& res) {
            last_request = req.body;
            res.set_content(handler_(json::parse(req.body), req), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    ~StubServer() {
        server_.stop();
        thread_.join();
    }

    WireConfig config() const {
        WireConfig cfg;
        cfg.base_url = "http://127.0.0.1:" + std::to_string(port_);
        return cfg;
    }

    std::string last_request;

private:
    httplib::Server server_;
    Handler handler_;
    int port_ = 0;
    std::thread thread_;
};

std::vector<Observation> dummy_frames() {
    std::vector<Observation> frames(16);
    for (auto& o : frames) o.v[6] = 1.0;
    return frames;
}

}  // namespace

TEST_CASE("wire narrate round-trips grammar text and echoes the request id") {
    const std::string text = render_narration(BehaviorFeatures{});
    StubServer server([&](const json& req, const httplib::Request&) {
        REQUIRE(req.at("type") == "narrate");
        REQUIRE(req.at("frames").size() == 16);
        REQUIRE(req.at("frames")[0].size() == 10);
        REQUIRE(req.at("grammar").size() == 6);
        json rsp = {{"type", "narration"}, {"rollout_id", req.at("rollout_id")}, {"text", text}};
        return rsp.dump();
    });
    WireBackend backend(server.config());
    Narration n = backend.narrate_frames(dummy_frames());
    CHECK(n.text == text);
    CHECK(n.features == BehaviorFeatures{});
}

TEST_CASE("wire narrate rejects a mismatched rollout id and unparseable text") {
    SUBCASE("wrong id") {
        StubServer server([](const json&, const httplib::Request&) {
            return json{{"type", "narration"}, {"rollout_id", "bogus"}, {"text", "x"}}.dump();
        });
        WireBackend backend(server.config());
        CHECK_THROWS_AS(backend.narrate_frames(dummy_frames()), VerifierError);
    }
    SUBCASE("free-form text outside the grammar") {
        StubServer server([](const json& req, const httplib::Request&) {
            return json{{"type", "narration"},
                        {"rollout_id", req.at("rollout_id")},
                        {"text", "the robot did something nice"}}
                .dump();
        });
        WireBackend backend(server.config());
        try {
            backend.narrate_frames(dummy_frames());
            FAIL("expected VerifierError");
        } catch (const VerifierError& e) {
            CHECK(e.raw_response == "the robot did something nice");
        }
    }
}

TEST_CASE("wire select returns the server's choice with predicate-derived ok flags") {
    auto task = make_task("cup-serve");
    BehaviorFeatures handle_ok;
    handle_ok.first_contact_region = Region::handle;
    handle_ok.grasp_succeeded = true;
    BehaviorFeatures rim_bad = handle_ok;
    rim_bad.first_contact_region = Region::rim;
    std::vector<Narration> cands = {make_narration(rim_bad), make_narration(handle_ok)};

    StubServer server([&](const json& req, const httplib::Request&) {
        REQUIRE(req.at("type") == "select");
        REQUIRE(req.at("task") == task.text);
        REQUIRE(req.at("narrations").size() == 2);
        return json{{"type", "verdict"}, {"choice", 1}, {"rationale", "handle is allowed"}}.dump();
    });
    WireBackend backend(server.config());
    Verdict v = backend.select(cands, task);
    CHECK(v.chosen_index == 1);
    REQUIRE(v.per_candidate.size() == 2);
    CHECK_FALSE(v.per_candidate[0].ok);  // rim is forbidden regardless of choice
    CHECK(v.per_candidate[1].ok);
    CHECK(v.per_candidate[1].rationale == "handle is allowed");
}

TEST_CASE("wire select rejects out-of-range and non-integer choices") {
    auto task = make_task("cup-serve");
    std::vector<Narration> cands = {make_narration(BehaviorFeatures{})};
    SUBCASE("out of range") {
        StubServer server([](const json&, const httplib::Request&) {
            return json{{"type", "verdict"}, {"choice", 5}}.dump();
        });
        WireBackend backend(server.config());
        CHECK_THROWS_AS(backend.select(cands, task), VerifierError);
    }
    SUBCASE("negative") {
        StubServer server([](const json&, const httplib::Request&) {
            return json{{"type", "verdict"}, {"choice", -1}}.dump();
        });
        WireBackend backend(server.config());
        CHECK_THROWS_AS(backend.select(cands, task), VerifierError);
    }
    SUBCASE("non-integer") {
        StubServer server([](const json&, const httplib::Request&) {
            return json{{"type", "verdict"}, {"choice", "first"}}.dump();
        });
        WireBackend backend(server.config());
        CHECK_THROWS_AS(backend.select(cands, task), VerifierError);
    }
}

TEST_CASE("wire monitor parses the boolean verdict") {
    auto task = make_task("cup-serve");
    StubServer server([&](const json& req, const httplib::Request&) {
        REQUIRE(req.at("type") == "monitor");
        REQUIRE(req.at("narration").is_string());
        return json{{"type", "verdict"}, {"ok", false}, {"rationale", "grasp fails"}}.dump();
    });
    WireBackend backend(server.config());
    auto [ok, why] = backend.monitor(make_narration(BehaviorFeatures{}), task);
    CHECK_FALSE(ok);
    CHECK(why == "grasp fails");
}

TEST_CASE("wire errors carry the raw response body") {
    SUBCASE("invalid JSON") {
        StubServer server([](const json&, const httplib::Request&) { return "not json {"; });
        WireBackend backend(server.config());
        try {
            backend.narrate_frames(dummy_frames());
            FAIL("expected VerifierError");
        } catch (const VerifierError& e) {
            CHECK(e.raw_response == "not json {");
        }
    }
    SUBCASE("wrong response type") {
        StubServer server([](const json&, const httplib::Request&) {
            return json{{"type", "banana"}}.dump();
        });
        WireBackend backend(server.config());
        CHECK_THROWS_AS(backend.narrate_frames(dummy_frames()), VerifierError);
    }
}

TEST_CASE("wire client sends a bearer token when configured") {
    std::string seen_auth;
    StubServer server([&](const json& req, const httplib::Request& raw) {
        seen_auth = raw.get_header_value("Authorization");
        return json{{"type", "narration"},
                    {"rollout_id", req.at("rollout_id")},
                    {"text", render_narration(BehaviorFeatures{})}}
            .dump();
    });
    WireConfig cfg = server.config();
    cfg.auth_token = "sekrit";
    WireBackend backend(cfg);
    backend.narrate_frames(dummy_frames());
    CHECK(seen_auth == "Bearer sekrit");
}

TEST_CASE("unreachable endpoint raises a clean error") {
    WireConfig cfg;
    cfg.base_url = "http://127.0.0.1:1";  // nothing listens here
    cfg.timeout_ms = 500;
    WireBackend backend(cfg);
    CHECK_THROWS_AS(backend.narrate_frames(dummy_frames()), VerifierError);
}
