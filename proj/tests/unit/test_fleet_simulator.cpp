#include "entropy/platform/api_server.hpp"
#include "entropy/sim/replay.hpp"
#include "entropy/sim/scenario.hpp"
#include "entropy/stream/outlier.hpp"

#include <doctest.h>
#include <httplib.h>

#include "unit/test_support.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

using namespace entropy;
using namespace std::chrono_literals;
using entropy::testing::code_of;

namespace {

const char* kStart = "2026-01-05T00:00:00Z";

json office_spec() {
    json occupants = json::array();
    for (int i = 0; i < 4; ++i) {
        occupants.push_back({{"id", "u" + std::to_string(i)},
                             {"gamer_type", "Humanitarian"},
                             {"space", "office-12"},
                             {"presence", {{{"from", "PT8H"}, {"to", "PT12H"}}}}});
    }
    return {{"seed", 42},
            {"start", kStart},
            {"duration", "PT14H"},
            {"sample_interval", "PT1M"},
            {"spaces",
             {{{"id", "office-12"},
               {"area", 20},
               {"sensors", {"co2", "temperature", "energy", "door", "presence"}},
               {"co2", {{"sigma", 30}, {"tau_closed", "PT4H"}, {"tau_open", "PT1H"}}},
               {"door_open", {{{"from", "PT11H"}, {"to", "PT11H30M"}}}}}}},
            {"occupants", occupants},
            {"outliers", {{"rate", 0.02}}}};
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

std::filesystem::path scratch_dir(const std::string& name) {
    auto d = std::filesystem::temp_directory_path() / ("entropy-sim-" + name);
    std::filesystem::remove_all(d);
    return d;
}

/// dC/dt = rate(t) - (C - outdoor)/tau(t), integrated with RK4 at 1 s steps.
struct Co2Integrator {
    const sim::ScenarioSpec& spec;
    const sim::SpaceSpec& space;

    double derivative(TimePoint t, double c) const {
        const bool open = std::any_of(space.door_open.begin(), space.door_open.end(),
                                      [&](const sim::Interval& iv) { return iv.contains(t); });
        const double tau_h = std::chrono::duration<double, std::ratio<3600>>(open ? space.co2.tau_open : space.co2.tau_closed).count();
        const double rate = space.co2.per_person * sim::occupants_at(spec, space.id, t) / space.area;
        return (rate - (c - space.co2.outdoor) / tau_h) / 3600.0; // per second
    }

    /// Samples of (t, C) every second; derivative is sampled at the step start so regime switches are exact.
    std::vector<std::pair<TimePoint, double>> run(TimePoint until) const {
        std::vector<std::pair<TimePoint, double>> out;
        double c = space.co2.initial;
        for (TimePoint t = spec.start; t <= until; t += 1s) {
            out.emplace_back(t, c);
            const double h = 1.0;
            const double k1 = derivative(t, c);
            const double k2 = derivative(t, c + h / 2 * k1);
            const double k3 = derivative(t, c + h / 2 * k2);
            const double k4 = derivative(t, c + h * k3);
            c += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
        }
        return out;
    }
};

struct ApiFixture {
    platform::Platform platform;
    platform::ApiServer api;
    int port;

    explicit ApiFixture(TimePoint start)
        : platform(config(start)), api(platform, "sim-token", nullptr, 2), port(api.start("127.0.0.1", 0)) {}

    static platform::PlatformConfig config(TimePoint start) {
        platform::PlatformConfig c;
        c.token = "sim-token";
        c.clock = platform::ClockMode::Simulated;
        c.simulated_start = start;
        return c;
    }

    sim::ReplayOptions options() const {
        sim::ReplayOptions o;
        o.url = "http://127.0.0.1:" + std::to_string(port);
        o.token = "sim-token";
        o.batch_size = 137;
        return o;
    }
};

} // namespace

TEST_CASE("identical seeds give byte-identical bundles") {
    const auto spec = sim::scenario_from_json(office_spec());
    const auto a = scratch_dir("det-a"), b = scratch_dir("det-b");
    sim::write_bundle(sim::generate(spec), a);
    sim::write_bundle(sim::generate(spec), b);
    for (const char* f : {"scenario.json", "entities.json", "users.json", "trace.jsonl", "ground_truth.json"}) {
        CAPTURE(f);
        CHECK(slurp(a / f) == slurp(b / f));
        CHECK_FALSE(slurp(a / f).empty());
    }
    auto other = spec;
    other.seed = 43;
    CHECK(sim::generate(other).trace != sim::generate(spec).trace);

    const auto back = sim::read_bundle(a);
    CHECK(back.trace == sim::generate(spec).trace);
    CHECK(sim::to_json(back.truth) == sim::to_json(sim::generate(spec).truth));
    CHECK(sim::to_json(back.spec) == sim::to_json(spec));
    std::filesystem::remove_all(a);
    std::filesystem::remove_all(b);
}

TEST_CASE("zero injection rate gives an empty outlier set") {
    auto j = office_spec();
    j["outliers"]["rate"] = 0.0;
    const auto b = sim::generate(sim::scenario_from_json(j));
    CHECK(b.truth.outliers.empty());
    CHECK(b.truth.samples == 5 * 14 * 60);
}

TEST_CASE("injected outliers are labelled consistently with the trace") {
    auto j = office_spec();
    j["outliers"]["rate"] = 0.2;
    const auto spec = sim::scenario_from_json(j);
    const auto b = sim::generate(spec);
    REQUIRE(b.truth.outliers.size() > 100);
    std::map<std::string, std::size_t> per_sensor;
    for (const auto& m : b.trace) ++per_sensor[m.sensor_id];
    CHECK(per_sensor == b.truth.per_sensor);

    std::map<std::string, std::vector<std::size_t>> positions;
    for (std::size_t i = 0; i < b.trace.size(); ++i) positions[b.trace[i].sensor_id].push_back(i);
    for (const auto& o : b.truth.outliers) {
        REQUIRE(o.index < b.trace.size());
        const auto& m = b.trace[o.index];
        CHECK(m.sensor_id == o.sensor_id);
        CHECK(m.attribute == o.attribute);
        CHECK(m.observed_at == o.at);
        CHECK(m.value == o.value);
        CHECK(o.value != o.clean_value);
        CHECK(o.attribute != "open");
        CHECK(o.attribute != "presence");
        const auto& pos = positions[o.sensor_id];
        const auto series_index = static_cast<std::size_t>(std::find(pos.begin(), pos.end(), o.index) - pos.begin());
        CHECK(series_index >= spec.outliers.warmup);
        const auto policy = stream::default_policy_for(o.attribute);
        if (o.kind == "range") {
            CHECK((o.value < policy.lo || o.value > policy.hi));
        } else {
            REQUIRE(o.kind == "spike");
            REQUIRE(o.factor);
            CHECK(*o.factor >= 5.0);
            CHECK(*o.factor <= 20.0);
            CHECK(o.value == doctest::Approx(o.clean_value * *o.factor).epsilon(1e-3));
        }
    }
}

TEST_CASE("four people in 20 m2 raise CO2 at 300 ppm/h and cross 1000 ppm inside the occupied window") {
    const auto spec = sim::scenario_from_json(office_spec());
    const auto& room = spec.spaces.front();
    const TimePoint enter = spec.start + 8h;
    // Initial slope from outdoor level with four occupants.
    const double slope = (sim::co2_at(spec, room, enter + 60s) - sim::co2_at(spec, room, enter)) * 60.0;
    CHECK(slope == doctest::Approx(300.0).epsilon(0.01));

    const auto b = sim::generate(spec);
    REQUIRE(b.truth.crossings.size() >= 2);
    const auto& up = b.truth.crossings.front();
    CHECK(up.upward);
    CHECK(up.at > enter);
    CHECK(up.at < spec.start + 12h);

    const auto curve = Co2Integrator{spec, room}.run(spec.start + spec.duration);
    std::vector<std::pair<TimePoint, bool>> numeric;
    for (std::size_t i = 1; i < curve.size(); ++i) {
        const bool a = curve[i - 1].second >= 1000.0, c = curve[i].second >= 1000.0;
        if (a != c) numeric.emplace_back(curve[i].first, c);
    }
    REQUIRE(numeric.size() == b.truth.crossings.size());
    for (std::size_t i = 0; i < numeric.size(); ++i) {
        CHECK(numeric[i].second == b.truth.crossings[i].upward);
        CHECK(std::abs((numeric[i].first - b.truth.crossings[i].at).count()) <= 2000);
    }
    for (std::size_t i = 0; i < curve.size(); i += 977) {
        CHECK(sim::co2_at(spec, room, curve[i].first) == doctest::Approx(curve[i].second).epsilon(1e-6));
    }
}

TEST_CASE("expected firings follow hourly last-value ticks over the clean trace") {
    auto j = office_spec();
    j["outliers"]["rate"] = 0.05;
    const auto spec = sim::scenario_from_json(j);
    const auto b = sim::generate(spec);
    std::set<std::size_t> outliers;
    for (const auto& o : b.truth.outliers) outliers.insert(o.index);

    std::vector<TimePoint> expected;
    std::optional<TimePoint> last_fired;
    for (TimePoint tick = spec.start + 1h; tick <= spec.start + spec.duration; tick += 1h) {
        std::optional<std::pair<TimePoint, double>> latest;
        for (std::size_t i = 0; i < b.trace.size(); ++i) {
            const auto& m = b.trace[i];
            if (m.sensor_id != "co2-office-12" || outliers.contains(i) || m.observed_at > tick) continue;
            if (!latest || m.observed_at >= latest->first) latest = {{m.observed_at, m.value}};
        }
        if (latest && tick - latest->first <= 2h && latest->second > 1000.0 && (!last_fired || tick - *last_fired >= 1h)) {
            expected.push_back(tick);
            last_fired = tick;
        }
    }
    std::vector<TimePoint> truth;
    for (const auto& f : b.truth.firings) truth.push_back(f.at);
    CHECK(truth == expected);
    CHECK_FALSE(truth.empty());
}

TEST_CASE("invalid specs are rejected") {
    const auto bad = [](auto mutate) {
        auto j = office_spec();
        mutate(j);
        return code_of([&] { sim::scenario_from_json(j); });
    };
    CHECK(bad([](json& j) { j.erase("start"); }) == ErrorCode::InvalidSpec);
    CHECK(bad([](json& j) { j["duration"] = "PT0S"; }) == ErrorCode::InvalidSpec);
    CHECK(bad([](json& j) { j["sample_interval"] = "PT20H"; }) == ErrorCode::InvalidSpec);
    CHECK(bad([](json& j) { j["spaces"] = json::array(); }) == ErrorCode::InvalidSpec);
    CHECK(bad([](json& j) { j["spaces"][0]["sensors"] = {"co2", "co2"}; }) == ErrorCode::InvalidSpec);
    CHECK(bad([](json& j) { j["spaces"][0]["sensors"] = {"radon"}; }) == ErrorCode::InvalidSpec);
    CHECK(bad([](json& j) { j["spaces"][0]["area"] = 0; }) == ErrorCode::InvalidSpec);
    CHECK(bad([](json& j) { j["occupants"][0]["space"] = "attic"; }) == ErrorCode::InvalidSpec);
    CHECK(bad([](json& j) { j["occupants"][0]["presence"][0]["to"] = "PT7H"; }) == ErrorCode::InvalidSpec);
    CHECK(bad([](json& j) { j["outliers"]["rate"] = 1.5; }) == ErrorCode::InvalidSpec);
    CHECK(bad([](json& j) { j["outliers"]["spike_min"] = 30; }) == ErrorCode::InvalidSpec);
    CHECK(bad([](json& j) { j["speed"] = -1; }) == ErrorCode::InvalidSpec);
    CHECK(bad([](json& j) { j["spaces"][0]["co2"]["tau_open"] = "bogus"; }) == ErrorCode::InvalidSpec);
    CHECK(code_of([] { sim::scenario_from_json(json::array()); }) == ErrorCode::InvalidSpec);
    CHECK(code_of([] { sim::read_bundle("/nonexistent/bundle"); }) == ErrorCode::InvalidSpec);
}

TEST_CASE("replay acknowledges every event and per-sensor counts reconcile with the store") {
    json j = office_spec();
    j["duration"] = "PT200M";
    j["spaces"][0]["sensors"] = {"co2", "temperature", "humidity", "energy", "presence"};
    const auto spec = sim::scenario_from_json(j);
    const auto bundle = sim::generate(spec);
    REQUIRE(bundle.trace.size() == 1000);

    ApiFixture fx(spec.start);
    const auto report = sim::replay(bundle, fx.options());
    CHECK_FALSE(report.failure);
    CHECK(report.sent == 1000);
    CHECK(report.acked == 1000);
    CHECK(report.item_errors == 0);
    CHECK(report.accepted + report.dropped == 1000);
    CHECK(report.per_sensor == bundle.truth.per_sensor);
    CHECK(report.complete(bundle));

    httplib::Client c("127.0.0.1", fx.port);
    const auto from = std::to_string(to_epoch_ms(spec.start));
    const auto to = std::to_string(to_epoch_ms(spec.start + spec.duration));
    for (const auto& [sensor, count] : bundle.truth.per_sensor) {
        const auto attr = bundle.trace[std::find_if(bundle.trace.begin(), bundle.trace.end(),
                                                    [&](const Measurement& m) { return m.sensor_id == sensor; }) -
                                       bundle.trace.begin()]
                              .attribute;
        auto r = c.Get("/v1/series/raw?sensor=" + sensor + "&attribute=" + attr + "&from=" + from + "&to=" + to);
        REQUIRE(r);
        CAPTURE(sensor);
        CHECK(json::parse(r->body)["count"] == count);
    }
    // Dropped count equals what the stream processor reported as outliers.
    std::size_t raw = 0;
    for (const auto& key : fx.platform.store().series()) {
        tsdb::SeriesQuery q;
        q.key = key;
        q.t0 = spec.start;
        q.t1 = spec.start + spec.duration;
        q.quality = Quality::Raw;
        raw += fx.platform.store().query_raw(q).size();
    }
    CHECK(raw == report.dropped);

    SUBCASE("replaying again is absorbed") {
        const auto again = sim::replay(bundle, fx.options());
        CHECK(again.acked == 1000);
        CHECK(fx.platform.store().size() == 1000);
    }
}

TEST_CASE("a batch of 100 with 5 range violations reports 95 accepted and 5 dropped") {
    // Noise-free smooth series: only the injected range violations can be rejected.
    json j{{"start", kStart},
           {"duration", "PT120M"},
           {"sample_interval", "PT1M"},
           {"spaces", {{{"id", "lab"}, {"sensors", {"temperature"}}, {"temperature", {{"sigma", 0}}}}}},
           {"outliers", {{"rate", 0.05}, {"range_fraction", 1.0}}}};
    std::optional<sim::Bundle> bundle;
    for (std::uint64_t seed = 1; seed < 500 && !bundle; ++seed) {
        j["seed"] = seed;
        auto b = sim::generate(sim::scenario_from_json(j));
        if (b.truth.outliers.size() == 5 && b.truth.outliers.back().index < 120) bundle = std::move(b);
    }
    REQUIRE(bundle);
    for (const auto& o : bundle->truth.outliers) REQUIRE(o.index >= 20);

    const auto spec = bundle->spec;
    platform::Platform p(ApiFixture::config(spec.start));
    for (const auto& e : bundle->entities) p.broker().upsert_entity(e);
    json warmup = json::array(), batch = json::array();
    for (std::size_t i = 0; i < bundle->trace.size(); ++i) (i < 20 ? warmup : batch).push_back(bundle->trace[i]);
    REQUIRE(batch.size() == 100);
    CHECK(p.ingest(warmup).accepted == 20);
    const auto report = p.ingest(batch);
    CHECK(report.accepted == 95);
    CHECK(report.dropped == 5);
    for (const auto& o : bundle->truth.outliers) {
        CHECK(report.items[o.index - 20].status == platform::ItemStatus::DroppedAsOutlier);
        CHECK(report.items[o.index - 20].verdict == "range-violation");
    }
}

TEST_CASE("replay against an unreachable platform fails after bounded retries") {
    const auto bundle = sim::generate(sim::scenario_from_json(office_spec()));
    sim::ReplayOptions o;
    o.url = "http://127.0.0.1:1";
    o.token = "t";
    o.max_retries = 2;
    o.backoff = 5ms;
    const auto report = sim::replay(bundle, o);
    REQUIRE(report.failure);
    CHECK(report.failure->find("connection failure") != std::string::npos);
    CHECK(report.retries == 2);
    CHECK(report.acked == 0);
    CHECK_FALSE(report.complete(bundle));
}

TEST_CASE("occupant feedback is answered deterministically") {
    auto j = office_spec();
    j["acceptance"] = {{"Humanitarian", 1.0}};
    j["occupants"][1]["acceptance"] = 0.0;
    const auto spec = sim::scenario_from_json(j);
    const auto bundle = sim::generate(spec);
    REQUIRE_FALSE(bundle.truth.firings.empty());

    ApiFixture fx(spec.start);
    for (const auto& e : bundle.entities) fx.platform.broker().upsert_entity(e);
    stream::StreamSpec s;
    s.selector = "co2-office-12";
    s.attribute = "co2";
    const auto sid = fx.platform.register_stream(s, std::nullopt, true);
    const auto cid = fx.platform.processor().register_condition({sid, Comparator::Gt, 1000, stream::Trigger::Level, 1h});
    recommender::RuleSpec rule;
    rule.condition_id = cid;
    rule.groups = {"Humanitarian"};
    rule.kind = recommender::RecommendationKind::Message;
    rule.templates = {{"Humanitarian", "Fresh air helps everyone."}};
    fx.platform.register_rule(rule, std::nullopt);

    const auto o = fx.options();
    REQUIRE_FALSE(sim::replay(bundle, o).failure);
    fx.platform.advance_clock(spec.start + spec.duration);
    const auto delivered = fx.platform.recommender().recommendations(std::nullopt, recommender::RecState::Delivered);
    CHECK(delivered.size() == 4 * bundle.truth.firings.size());

    const auto fb = sim::respond(bundle, o);
    CHECK(fb.answered == delivered.size());
    CHECK(fb.rejected == bundle.truth.firings.size());
    CHECK(fb.accepted == 3 * bundle.truth.firings.size());
    for (const auto& r : fx.platform.recommender().recommendations("u1", std::nullopt)) {
        CHECK(r.state == recommender::RecState::Rejected);
    }
    for (const auto& r : fx.platform.recommender().recommendations("u0", std::nullopt)) {
        CHECK(r.state == recommender::RecState::Accepted);
    }
}
