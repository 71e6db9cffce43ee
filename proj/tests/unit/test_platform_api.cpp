#include "entropy/platform/api_server.hpp"

#include <doctest.h>
#include <httplib.h>

#include "unit/test_support.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>

using namespace entropy;
using namespace entropy::platform;
using namespace std::chrono_literals;

namespace {

const std::string kToken = "test-token";
const TimePoint T0 = *parse_iso8601("2026-01-05T00:00:00Z");

PlatformConfig simulated_config() {
    PlatformConfig cfg;
    cfg.token = kToken;
    cfg.clock = ClockMode::Simulated;
    cfg.simulated_start = T0;
    cfg.threads = 2;
    return cfg;
}

struct Server {
    Platform platform;
    ApiServer api;
    int port;
    httplib::Client client;

    explicit Server(const PlatformConfig& cfg = simulated_config())
        : platform(cfg), api(platform, cfg.token, nullptr, cfg.threads), port(api.start("127.0.0.1", 0)),
          client("127.0.0.1", port) {
        client.set_bearer_token_auth(kToken);
    }

    std::pair<int, json> get(const std::string& path) {
        auto r = client.Get(path);
        REQUIRE(r);
        return {r->status, r->body.empty() ? json() : json::parse(r->body)};
    }

    std::pair<int, json> post(const std::string& path, const json& body, const httplib::Headers& headers = {}) {
        auto r = client.Post(path, headers, body.dump(), "application/json");
        REQUIRE(r);
        return {r->status, json::parse(r->body)};
    }

    void entity(const std::string& id, const std::string& type, const std::string& location) {
        json attrs = json::object();
        if (!location.empty()) attrs["location"] = {{"value", location}};
        auto [status, body] = post("/v1/entities", {{"id", id}, {"type", type}, {"attributes", attrs}});
        REQUIRE(status == 201);
    }

    json energy(const std::string& sensor, double kwh, TimePoint at) {
        return {{"sensor_id", sensor}, {"attribute", "energy"}, {"value", kwh}, {"unit", "kWh"},
                {"observed_at", to_epoch_ms(at)}};
    }
};

std::string iso(TimePoint t) { return format_iso8601(t); }

} // namespace

TEST_CASE("status mapping groups error families") {
    CHECK(http_status(ErrorCode::BadRequest) == 400);
    CHECK(http_status(ErrorCode::MalformedTree) == 400);
    CHECK(http_status(ErrorCode::Unauthorized) == 401);
    CHECK(http_status(ErrorCode::UnknownCampaign) == 404);
    CHECK(http_status(ErrorCode::UnknownSensor) == 404);
    CHECK(http_status(ErrorCode::UnknownSpace) == 422);
    CHECK(http_status(ErrorCode::CampaignNotActive) == 409);
    CHECK(http_status(ErrorCode::WrongState) == 409);
    CHECK(http_status(ErrorCode::InvalidConfig) == 422);
    CHECK(http_status(ErrorCode::ConnectionFailure) == 502);
    CHECK(error_body(ErrorCode::UnknownSpace, "m") == json{{"error", {{"code", "unknown-space"}, {"message", "m"}}}});
}

TEST_CASE("server refuses an empty token") {
    PlatformConfig cfg = simulated_config();
    Platform p(cfg);
    CHECK(testing::code_of([&] { ApiServer api(p, ""); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("mutating requests need the bearer token; reads do not") {
    Server s;
    httplib::Client anon("127.0.0.1", s.port);
    auto r = anon.Post("/v1/campaigns", R"({"name":"x"})", "application/json");
    REQUIRE(r);
    CHECK(r->status == 401);
    CHECK(json::parse(r->body)["error"]["code"] == "unauthorized");
    httplib::Client wrong("127.0.0.1", s.port);
    wrong.set_bearer_token_auth("nope");
    r = wrong.Post("/v1/ingest", "[]", "application/json");
    REQUIRE(r);
    CHECK(r->status == 401);
    r = anon.Get("/v1/health");
    REQUIRE(r);
    CHECK(r->status == 200);
    CHECK(s.platform.campaigns().empty());

    auto [status, cfg] = s.get("/v1/config");
    CHECK(status == 200);
    CHECK(cfg["token"] == "***");
}

TEST_CASE("malformed bodies and unknown routes") {
    Server s;
    auto r = s.client.Post("/v1/campaigns", "{not json", "application/json");
    REQUIRE(r);
    CHECK(r->status == 400);
    CHECK(json::parse(r->body)["error"]["code"] == "bad-request");
    CHECK(s.get("/v1/nothing-here").first == 404);
    auto [status, body] = s.get("/v1/campaigns/campaign-99");
    CHECK(status == 404);
    CHECK(body["error"]["code"] == "unknown-campaign");
}

TEST_CASE("campaign lifecycle: draft, activation, unknown space") {
    Server s;
    s.entity("room-1", "Room", "");
    auto [st, c] = s.post("/v1/campaigns", {{"name", "winter"}, {"spaces", {"room-1", "room-404"}}});
    REQUIRE(st == 201);
    CHECK(c["status"] == "Draft");
    const std::string id = c["id"];

    auto [st2, err] = s.post("/v1/campaigns/" + id + "/activate", json::object());
    CHECK(st2 == 422);
    CHECK(err["error"]["code"] == "unknown-space");
    CHECK(s.get("/v1/campaigns/" + id).second["status"] == "Draft");

    auto [st3, err3] = s.post("/v1/campaigns/" + id + "/end", json::object());
    CHECK(st3 == 409);
    CHECK(err3["error"]["code"] == "campaign-not-active");

    s.entity("room-404", "Room", "");
    auto [st4, active] = s.post("/v1/campaigns/" + id + "/activate", json::object());
    CHECK(st4 == 200);
    CHECK(active["status"] == "Active");
    CHECK(s.post("/v1/campaigns/" + id + "/activate", json::object()).first == 409);

    auto [st5, bad] = s.post("/v1/campaigns", {{"name", "backwards"}, {"start", iso(T0 + 2h)}, {"end", iso(T0)}});
    CHECK(st5 == 422);
    CHECK(bad["error"]["code"] == "invalid-range");
}

TEST_CASE("ingest reports per item and replays idempotent batches") {
    Server s;
    s.entity("meter-1", "SensorNode", "room-1");

    auto [st0, empty] = s.post("/v1/ingest", json::array());
    CHECK(st0 == 200);
    CHECK(empty["accepted"] == 0);
    CHECK(empty["items"].empty());

    json batch = json::array({s.energy("meter-1", 5, T0 + 1min), s.energy("ghost-7", 5, T0 + 2min),
                              json{{"sensor_id", "meter-1"}}});
    const httplib::Headers key{{"Idempotency-Key", "batch-1"}};
    auto [st1, first] = s.post("/v1/ingest", batch, key);
    CHECK(st1 == 200);
    CHECK(first["accepted"] == 1);
    CHECK(first["errors"] == 2);
    CHECK(first["items"][0]["status"] == "accepted");
    CHECK(first["items"][1]["status"] == "error");
    CHECK(first["items"][1]["code"] == "unknown-sensor");
    CHECK(first["items"][2]["status"] == "error");
    CHECK(s.platform.store().size() == 1);

    auto [st2, again] = s.post("/v1/ingest", batch, key);
    CHECK(st2 == 200);
    CHECK(again == first);
    CHECK(s.platform.store().size() == 1);

    auto [st3, wrapped] = s.post("/v1/ingest", {{"measurements", {s.energy("meter-1", 6, T0 + 3min)}}});
    CHECK(st3 == 200);
    CHECK(wrapped["accepted"] == 1);
    CHECK(s.platform.store().size() == 2);

    auto [st4, raw] = s.get("/v1/series/raw?sensor=meter-1&attribute=energy&from=" + std::to_string(to_epoch_ms(T0)) +
                            "&to=" + std::to_string(to_epoch_ms(T0 + 1h)));
    CHECK(st4 == 200);
    CHECK(raw["count"] == 2);
    CHECK(s.get("/v1/clock").second["now"] == iso(T0 + 3min));
}

TEST_CASE("dashboard compares against the previous equal-length period") {
    Server s;
    s.entity("room-1", "Room", "");
    s.entity("room-2", "Room", "");
    s.entity("meter-1", "SensorNode", "room-1");
    s.entity("meter-2", "SensorNode", "room-2");

    // previous period [T0, T0+6h): 125 kWh in room-1; current [T0+6h, T0+12h): 100 kWh.
    auto [sti, rep] = s.post("/v1/ingest", json::array({s.energy("meter-1", 50, T0 + 2h), s.energy("meter-1", 75, T0 + 3h)}));
    REQUIRE(rep["accepted"] == 2);
    auto [stc, c] = s.post("/v1/campaigns", {{"name", "w"}, {"spaces", {"room-1"}}, {"start", iso(T0 + 6h)}});
    REQUIRE(stc == 201);
    const std::string id = c["id"];
    REQUIRE(s.post("/v1/campaigns/" + id + "/activate", json::object()).first == 200);
    s.post("/v1/ingest", json::array({s.energy("meter-1", 40, T0 + 7h), s.energy("meter-1", 60, T0 + 8h),
                                      s.energy("meter-2", 999, T0 + 8h)}));
    REQUIRE(s.post("/v1/clock", {{"to", iso(T0 + 12h)}}).first == 200);

    auto [st, d] = s.get("/v1/campaigns/" + id + "/dashboard");
    REQUIRE(st == 200);
    CHECK(d["consumption"]["current"].get<double>() == doctest::Approx(100));
    CHECK(d["consumption"]["previous"].get<double>() == doctest::Approx(125));
    CHECK(d["delta_percent"].get<double>() == doctest::Approx(-20.0).epsilon(1e-9));
    CHECK(d["period"]["from"] == iso(T0 + 6h));
    CHECK(d["previous_period"]["from"] == iso(T0));

    SUBCASE("no previous consumption leaves the delta absent") {
        auto [st2, c2] = s.post("/v1/campaigns", {{"name", "r2"}, {"spaces", {"room-2"}}, {"start", iso(T0 + 8h)}});
        REQUIRE(st2 == 201);
        const std::string id2 = c2["id"];
        s.post("/v1/campaigns/" + id2 + "/activate", json::object());
        auto [st3, d2] = s.get("/v1/campaigns/" + id2 + "/dashboard");
        CHECK(st3 == 200);
        CHECK(d2["consumption"]["current"].get<double>() == doctest::Approx(999));
        CHECK(d2["consumption"]["previous_samples"] == 0);
        CHECK_FALSE(d2.contains("delta_percent"));
    }

    SUBCASE("an ended campaign keeps its final summary") {
        auto [st4, ended] = s.post("/v1/campaigns/" + id + "/end", json::object());
        REQUIRE(st4 == 200);
        CHECK(ended["status"] == "Ended");
        s.post("/v1/ingest", json::array({s.energy("meter-1", 500, T0 + 13h)}));
        s.post("/v1/clock", {{"to", iso(T0 + 20h)}});
        auto [st5, d3] = s.get("/v1/campaigns/" + id + "/dashboard");
        CHECK(st5 == 200);
        CHECK(d3["status"] == "Ended");
        CHECK(d3["consumption"]["current"].get<double>() == doctest::Approx(100));
        CHECK(d3["delta_percent"].get<double>() == doctest::Approx(-20.0));
    }
}

TEST_CASE("streams, conditions and rules attach to an active campaign") {
    Server s;
    s.entity("room-1", "Room", "");
    s.entity("co2-1", "SensorNode", "room-1");
    auto [stc, c] = s.post("/v1/campaigns", {{"name", "air"}, {"spaces", {"room-1"}}});
    const std::string cid = c["id"];

    auto [st0, err] = s.post("/v1/streams", {{"selector", "co2-1"}, {"attribute", "co2"}, {"campaign", cid}});
    CHECK(st0 == 409);
    CHECK(err["error"]["code"] == "campaign-not-active");

    s.post("/v1/campaigns/" + cid + "/activate", json::object());
    auto [st1, stream] =
        s.post("/v1/streams", {{"selector", "co2-1"}, {"attribute", "co2"}, {"campaign", cid}, {"activate", true}});
    REQUIRE(st1 == 201);
    CHECK(stream["active"] == true);
    CHECK(stream["spec"]["frequency"] == duration_to_json(1h));
    const std::string sid = stream["id"];

    auto [st2, rule] = s.post("/v1/rules", {{"condition", {{"stream_id", sid}, {"comparator", ">"}, {"threshold", 1000}}},
                                            {"groups", {"Humanitarian"}},
                                            {"templates", {{"Humanitarian", "Open the door."}}},
                                            {"campaign", cid}});
    REQUIRE(st2 == 201);
    CHECK(s.get("/v1/campaigns/" + cid).second["rules"].size() == 1);
    CHECK(s.get("/v1/campaigns/" + cid).second["streams"] == json::array({sid}));
    CHECK(s.get("/v1/rules/" + rule["id"].get<std::string>()).first == 200);

    auto [st3, d] = s.get("/v1/campaigns/" + cid + "/dashboard");
    CHECK(st3 == 200);
    CHECK(d["active_streams"] == 1);

    auto [st4, filtered] = s.get("/v1/entities?type=SensorNode&q=location==room-1");
    CHECK(st4 == 200);
    REQUIRE(filtered.size() == 1);
    CHECK(filtered[0]["id"] == "co2-1");
}

TEST_CASE("configuration precedence: environment over file over defaults") {
    const auto dir = std::filesystem::temp_directory_path() / "entropy-config-test";
    std::filesystem::create_directories(dir);
    const auto file = dir / "entropy.conf";
    {
        std::ofstream out(file);
        out << "# comment line\nport = 9001\ntoken = from-file\ndefault_frequency = PT15M\nthreads = 3\n";
    }
    const auto defaults = load_config(std::nullopt, {});
    CHECK(defaults.port == 8080);
    CHECK(defaults.token.empty());
    CHECK(defaults.default_frequency == Duration{1h});

    const auto from_file = load_config(file, {});
    CHECK(from_file.port == 9001);
    CHECK(from_file.token == "from-file");
    CHECK(from_file.default_frequency == Duration{15min});
    CHECK(from_file.host == "127.0.0.1");

    const auto env = load_config(file, {{"ENTROPY_PORT", "9002"}, {"ENTROPY_DEFAULT_FREQUENCY", "60"}, {"OTHER", "x"}});
    CHECK(env.port == 9002);
    CHECK(env.default_frequency == Duration{1min});
    CHECK(env.threads == 3);
    CHECK(env.token == "from-file");

    CHECK(testing::code_of([&] { load_config(file, {{"ENTROPY_PORT", "70000"}}); }) == ErrorCode::InvalidConfig);
    CHECK(testing::code_of([&] { load_config(file, {{"ENTROPY_CLOCK", "sundial"}}); }) == ErrorCode::InvalidConfig);
    {
        std::ofstream out(file);
        out << "colour = blue\n";
    }
    CHECK(testing::code_of([&] { load_config(file, {}); }) == ErrorCode::InvalidConfig);
    CHECK(testing::code_of([&] { load_config(dir / "missing.conf", {}); }) == ErrorCode::InvalidConfig);
    std::filesystem::remove_all(dir);
}
