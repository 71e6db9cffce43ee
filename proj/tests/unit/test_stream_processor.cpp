#include "entropy/stream/stream_processor.hpp"

#include <doctest.h>

#include "unit/test_support.hpp"

#include <algorithm>
#include <cmath>
#include <random>

using namespace entropy;
using namespace entropy::stream;
using entropy::testing::code_of;
using namespace std::chrono_literals;

namespace {

const TimePoint t0 = from_epoch_ms(1'700'006'400'000);

struct Rig {
    ManualClock clock{t0};
    broker::ContextBroker broker{clock};
    tsdb::TimeSeriesStore store;
    StreamProcessor sp{clock, broker, store};
    std::vector<ContextChange> changes;

    Rig() {
        for (const auto* id : {"co2-office-1", "door-office-1", "co2-office-2"}) {
            broker::EntityRecord r;
            r.id = id;
            r.entity_type = "SensorNode";
            broker.upsert_entity(r);
        }
        sp.on_context_change([this](const ContextChange& c) { changes.push_back(c); });
    }

    StreamEvent feed(const std::string& sensor, const std::string& attr, double v, TimePoint at) {
        clock.advance_to(at);
        return sp.ingest({sensor, attr, v, attr == "co2" ? "ppm" : "", at, Quality::Raw});
    }
    StreamEvent co2(double v, TimePoint at) { return feed("co2-office-1", "co2", v, at); }
};

/// Independent reference: full sorts, no incremental state beyond the accepted list.
struct ReferenceDetector {
    OutlierPolicy policy;
    std::vector<double> accepted;

    static double sorted_median(std::vector<double> v) {
        std::sort(v.begin(), v.end());
        const auto n = v.size();
        return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
    }

    bool accept(double x) {
        if (x < policy.lo || x > policy.hi) return false;
        bool ok = true;
        if (accepted.size() >= policy.window_size) {
            std::vector<double> w(accepted.end() - static_cast<std::ptrdiff_t>(policy.window_size), accepted.end());
            const double med = sorted_median(w);
            std::vector<double> dev;
            for (double v : w) dev.push_back(std::fabs(v - med));
            const double mad = sorted_median(dev);
            ok = mad == 0 ? std::fabs(x - med) <= policy.mad_epsilon
                          : std::fabs(0.6745 * (x - med) / mad) <= policy.zscore_threshold;
        }
        if (ok) accepted.push_back(x);
        return ok;
    }
};

} // namespace

TEST_CASE("modified z-score examples") {
    OutlierPolicy p = default_policy_for("temperature");
    p.window_size = 5;
    OutlierDetector d(p);
    for (double v : {18.0, 19.0, 20.0, 21.0, 22.0}) REQUIRE(d.offer(v).accepted());

    const auto spike = d.test(30);
    CHECK(spike.verdict == Verdict::ZScoreOutlier);
    CHECK(*spike.score == doctest::Approx(6.745));
    const auto ok = d.test(21);
    CHECK(ok.accepted());
    CHECK(*ok.score == doctest::Approx(0.6745));

    OutlierDetector co2(default_policy_for("co2"));
    CHECK(co2.offer(-5).verdict == Verdict::RangeViolation);
    CHECK(co2.window().empty());
}

TEST_CASE("flat window falls back to the epsilon band") {
    OutlierPolicy p;
    p.window_size = 5;
    p.mad_epsilon = 3;
    OutlierDetector d(p);
    for (int i = 0; i < 5; ++i) d.offer(400);
    CHECK(d.test(403).accepted());
    CHECK(d.test(404).verdict == Verdict::FlatWindowOutlier);
}

TEST_CASE("policy validation") {
    OutlierPolicy p;
    p.window_size = 4;
    CHECK(code_of([&] { p.validate(); }) == ErrorCode::InvalidSpec);
    p.window_size = 5;
    p.lo = 10;
    p.hi = 10;
    CHECK(code_of([&] { p.validate(); }) == ErrorCode::InvalidSpec);
}

TEST_CASE("median of even and odd samples") {
    CHECK(median_of({3, 1, 2}) == 2);
    CHECK(median_of({4, 1, 3, 2}) == 2.5);
}

TEST_CASE("detector matches a brute-force reference on spiky traces") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> noise(0, 15);
        std::uniform_real_distribution<double> u(0, 1);
        OutlierPolicy p = default_policy_for("co2");
        OutlierDetector det(p);
        ReferenceDetector ref{p, {}};
        std::size_t mismatches = 0;
        for (int i = 0; i < 2000; ++i) {
            double x = std::round(700 + 200 * std::sin(i / 50.0) + noise(rng));
            if (u(rng) < 0.03) x *= 5 + 15 * u(rng);
            if (u(rng) < 0.01) x = -x;
            if (i % 300 < 40 && seed % 2 == 0) x = 650; // flat stretches exercise MAD = 0
            if (det.offer(x).accepted() != ref.accept(x)) ++mismatches;
        }
        CHECK(mismatches == 0);
    }
}

TEST_CASE("ingest partitions measurements into cleaned and dropped") {
    Rig rig;
    std::mt19937_64 rng(7);
    std::size_t cleaned = 0;
    std::size_t dropped = 0;
    for (int i = 0; i < 500; ++i) {
        const double v = (i % 37 == 36) ? 9000 : 600 + static_cast<double>(rng() % 40);
        auto ev = rig.co2(v, t0 + Duration{i * 60'000});
        (ev.kind == EventKind::CleanedMeasurement ? cleaned : dropped)++;
        CHECK((ev.kind == EventKind::CleanedMeasurement || ev.kind == EventKind::OutlierDropped));
    }
    CHECK(cleaned + dropped == 500);
    CHECK(dropped >= 13);
    const auto stats = rig.sp.cleaning_stats();
    CHECK(stats.cleaned == cleaned);
    CHECK(stats.dropped == dropped);

    const SeriesKey key{"co2-office-1", "co2"};
    tsdb::SeriesQuery q{key, t0, t0 + 24h};
    q.quality = Quality::Cleaned;
    CHECK(rig.store.query_raw(q).size() == cleaned);
    q.quality = Quality::Raw;
    CHECK(rig.store.query_raw(q).size() == dropped);
    CHECK(rig.broker.get_entity("co2-office-1").attributes.at("co2").quality == Quality::Cleaned);
}

TEST_CASE("stream registration") {
    Rig rig;
    StreamSpec spec{"co2-office-1", "co2", 1h, MeasurementType::LastValue};
    const auto id = rig.sp.register_stream(spec);
    CHECK(rig.sp.register_stream(spec) == id);
    spec.type = MeasurementType::WindowAvg;
    CHECK(rig.sp.register_stream(spec) != id);
    CHECK(code_of([&] { rig.sp.register_stream({"nope", "co2", 1h}); }) == ErrorCode::UnknownSensor);
    CHECK(code_of([&] { rig.sp.register_stream({"co2-office-1", "co2", 0ms}); }) == ErrorCode::InvalidSpec);
    CHECK(code_of([&] { rig.sp.activate("stream-99"); }) == ErrorCode::UnknownStream);
}

TEST_CASE("hourly stream ticks once per hour and stops when deactivated") {
    Rig rig;
    const auto id = rig.sp.register_stream({"co2-office-1", "co2", 1h});
    rig.sp.activate(id);
    rig.clock.advance(5h + 30min);
    CHECK(rig.sp.advance_to(rig.clock.now()) == 5);
    rig.sp.deactivate(id);
    rig.clock.advance(10h);
    CHECK(rig.sp.advance_to(rig.clock.now()) == 0);
    CHECK(rig.sp.stream(id).ticks == 5);
    CHECK(rig.sp.events(id).size() == 5); // history kept
}

TEST_CASE("tick count equals floor(T / frequency)") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 50; ++trial) {
        Rig rig;
        const Duration freq{60'000 + static_cast<std::int64_t>(rng() % 7'140'000)};
        const Duration total{static_cast<std::int64_t>(rng() % 86'400'000)};
        const auto id = rig.sp.register_stream({"co2-office-1", "co2", freq});
        rig.sp.activate(id);
        // Advance in irregular steps.
        TimePoint now = t0;
        while (now < t0 + total) {
            now = std::min(t0 + total, now + Duration{1 + static_cast<std::int64_t>(rng() % 10'000'000)});
            rig.clock.advance_to(now);
            rig.sp.advance_to(now);
        }
        CHECK(rig.sp.stream(id).ticks == static_cast<std::size_t>(total / freq));
    }
}

TEST_CASE("tick values") {
    Rig rig;
    const auto last = rig.sp.register_stream({"co2-office-1", "co2", 1h, MeasurementType::LastValue});
    const auto avg = rig.sp.register_stream({"co2-office-1", "co2", 1h, MeasurementType::WindowAvg});
    const auto mn = rig.sp.register_stream({"co2-office-1", "co2", 1h, MeasurementType::WindowMin});
    const auto mx = rig.sp.register_stream({"co2-office-1", "co2", 1h, MeasurementType::WindowMax});
    rig.co2(400, t0 + 10min);
    rig.co2(600, t0 + 40min);
    CHECK(*rig.sp.evaluate_tick(last, t0 + 60min)->value == 600);
    CHECK(*rig.sp.evaluate_tick(avg, t0 + 60min)->value == 500);
    CHECK(*rig.sp.evaluate_tick(mn, t0 + 60min)->value == 400);
    CHECK(*rig.sp.evaluate_tick(mx, t0 + 60min)->value == 600);
    // Window is (now - frequency, now].
    CHECK(*rig.sp.evaluate_tick(avg, t0 + 70min)->value == 600);
    CHECK_FALSE(rig.sp.evaluate_tick(avg, t0 + 100min).has_value());
    // Staleness horizon is 2x frequency.
    CHECK(rig.sp.evaluate_tick(last, t0 + 40min + 2h).has_value());
    CHECK_FALSE(rig.sp.evaluate_tick(last, t0 + 3h + 41min).has_value());
}

TEST_CASE("outliers never reach stream ticks") {
    Rig rig;
    const auto mx = rig.sp.register_stream({"co2-office-1", "co2", 1h, MeasurementType::WindowMax});
    for (int i = 0; i < 30; ++i) rig.co2(500 + i % 3, t0 + Duration{i * 60'000});
    CHECK(rig.co2(8000, t0 + 31min).kind == EventKind::OutlierDropped);
    CHECK(*rig.sp.evaluate_tick(mx, t0 + 59min)->value == 502);
}

namespace {

std::vector<int> fire_indices(const std::vector<double>& ticks, Trigger trigger, Duration cooldown) {
    ConditionSpec c{"s", Comparator::Gt, 1000, trigger, cooldown};
    ConditionState st;
    std::vector<int> out;
    for (std::size_t i = 0; i < ticks.size(); ++i) {
        TickSample tick{"s", t0 + Duration{static_cast<std::int64_t>(i + 1) * 3'600'000}, ticks[i], 1};
        if (evaluate_condition(c, cooldown, tick, st)) out.push_back(static_cast<int>(i + 1));
    }
    return out;
}

} // namespace

TEST_CASE("condition triggers on the worked CO2 trace") {
    const std::vector<double> trace{950, 1010, 1020, 980, 1050};
    CHECK(fire_indices(trace, Trigger::Level, 0ms) == std::vector<int>{2, 3, 5});
    CHECK(fire_indices(trace, Trigger::Edge, 0ms) == std::vector<int>{2, 5});
    CHECK(fire_indices(trace, Trigger::Level, 2h) == std::vector<int>{2, 5});
}

TEST_CASE("absent tick neither fires nor resets edge state") {
    ConditionSpec c{"s", Comparator::Gt, 1000, Trigger::Edge, 0ms};
    ConditionState st;
    CHECK(evaluate_condition(c, 0ms, {"s", t0 + 1h, 1100, 1}, st));
    CHECK_FALSE(evaluate_condition(c, 0ms, {"s", t0 + 2h, std::nullopt, 0}, st));
    CHECK_FALSE(evaluate_condition(c, 0ms, {"s", t0 + 3h, 1100, 1}, st));
}

TEST_CASE("edge firings never exceed level firings") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<double> trace(1 + rng() % 40);
        for (auto& v : trace) v = (rng() % 2) ? 1100 : (rng() % 3 ? 900 : NAN);
        std::vector<std::optional<double>> ticks;
        const Duration cooldown{static_cast<std::int64_t>(rng() % 5) * 3'600'000};
        ConditionSpec level{"s", Comparator::Gt, 1000, Trigger::Level, cooldown};
        ConditionSpec edge{"s", Comparator::Gt, 1000, Trigger::Edge, cooldown};
        ConditionState ls;
        ConditionState es;
        int nl = 0;
        int ne = 0;
        for (std::size_t i = 0; i < trace.size(); ++i) {
            TickSample tick{"s", t0 + Duration{static_cast<std::int64_t>(i) * 3'600'000}, std::nullopt, 0};
            if (!std::isnan(trace[i])) tick.value = trace[i];
            nl += evaluate_condition(level, cooldown, tick, ls);
            ne += evaluate_condition(edge, cooldown, tick, es);
        }
        REQUIRE(ne <= nl);
    }
}

TEST_CASE("stream conditions raise context changes at tick times") {
    Rig rig;
    const auto id = rig.sp.register_stream({"co2-office-1", "co2", 1h});
    rig.sp.activate(id);
    const auto cond = rig.sp.register_condition({id, Comparator::Gt, 1000, Trigger::Level, std::nullopt});
    CHECK_FALSE(rig.sp.condition(cond).cooldown.has_value()); // defaults to the frequency
    const std::vector<double> trace{950, 1010, 1020, 980, 1050};
    for (std::size_t h = 0; h < trace.size(); ++h) {
        rig.co2(trace[h], t0 + Duration{static_cast<std::int64_t>(h) * 3'600'000 + 1'800'000});
        rig.clock.advance_to(t0 + Duration{static_cast<std::int64_t>(h + 1) * 3'600'000});
        rig.sp.advance_to(rig.clock.now());
    }
    REQUIRE(rig.changes.size() == 3);
    CHECK(rig.changes[0].at == t0 + 2h);
    CHECK(rig.changes[1].at == t0 + 3h);
    CHECK(rig.changes[2].at == t0 + 5h);
    CHECK(*rig.changes[2].value == 1050);
    CHECK(rig.changes[0].source_id == cond);

    const auto log = rig.sp.export_events_jsonl(id);
    CHECK(std::count(log.begin(), log.end(), '\n') == static_cast<long>(rig.sp.events(id).size()));
    CHECK(log.find("\"kind\":\"ContextChange\"") != std::string::npos);
}

namespace {

/// co2 condition holds from co2_minute, door stream fires at door_minute; both streams tick every 10 min.
std::vector<ContextChange> run_pattern(int co2_minute, int door_minute, bool ordered, Duration span) {
    Rig rig;
    const auto co2 = rig.sp.register_stream({"co2-office-1", "co2", 10min});
    const auto door = rig.sp.register_stream({"door-office-1", "open", 10min});
    rig.sp.activate(co2);
    rig.sp.activate(door);
    const auto high = rig.sp.register_condition({co2, Comparator::Gt, 1000, Trigger::Edge, 0ms});
    const auto opened = rig.sp.register_condition({door, Comparator::Eq, 1, Trigger::Edge, 0ms});
    const auto pattern = rig.sp.register_pattern({{high, opened}, span, ordered});
    for (int minute = 5; minute <= 120; minute += 10) {
        rig.feed("co2-office-1", "co2", minute >= co2_minute ? 1100 : 800, t0 + Duration{minute * 60'000});
        rig.feed("door-office-1", "open", minute >= door_minute ? 1 : 0, t0 + Duration{minute * 60'000});
        rig.sp.advance_to(t0 + Duration{(minute + 5) * 60'000});
    }
    std::vector<ContextChange> out;
    for (const auto& c : rig.changes) {
        if (c.source_id == pattern) out.push_back(c);
    }
    return out;
}

} // namespace

TEST_CASE("pattern: door opened within 30 min after co2 high") {
    auto fired = run_pattern(25, 35, true, 30min);
    REQUIRE(fired.size() == 1);
    CHECK(fired[0].at == t0 + 40min);
    CHECK(fired[0].from_pattern);

    CHECK(run_pattern(45, 25, true, 30min).empty());    // order violated
    CHECK(run_pattern(45, 25, false, 30min).size() == 1); // unordered conjunction
    CHECK(run_pattern(25, 75, true, 30min).empty());    // 50 min apart
}

TEST_CASE("pattern validation") {
    Rig rig;
    const auto s = rig.sp.register_stream({"co2-office-1", "co2", 1h});
    const auto c = rig.sp.register_condition({s, Comparator::Gt, 1000});
    CHECK(code_of([&] { rig.sp.register_pattern({{c, "cond-77"}, 30min}); }) == ErrorCode::UnknownCondition);
    CHECK(code_of([&] { rig.sp.register_pattern({{c, c}, 30min}); }) == ErrorCode::InvalidSpec);
    CHECK(code_of([&] { rig.sp.register_condition({"stream-9", Comparator::Gt, 1}); }) == ErrorCode::UnknownStream);
}

TEST_CASE("identical input gives an identical event sequence") {
    auto run = [] {
        Rig rig;
        const auto id = rig.sp.register_stream({"co2-office-1", "co2", 15min, MeasurementType::WindowAvg});
        rig.sp.activate(id);
        rig.sp.register_condition({id, Comparator::Ge, 900, Trigger::Level, 30min});
        std::mt19937_64 rng(12);
        for (int i = 0; i < 600; ++i) {
            double v = 850 + static_cast<double>(rng() % 120);
            if (i % 53 == 0) v *= 8;
            rig.co2(v, t0 + Duration{i * 30'000});
            rig.sp.advance_to(rig.clock.now());
        }
        return rig.sp.export_events_jsonl(id);
    };
    const auto a = run();
    CHECK(!a.empty());
    CHECK(a == run());
}

TEST_CASE("spec JSON round trips") {
    StreamSpec s{"co2-office-1", "co2", 1h, MeasurementType::WindowMax, default_policy_for("co2"), 3h};
    const json j = s;
    CHECK(j.at("frequency") == "PT1H");
    const auto back = j.get<StreamSpec>();
    CHECK(back.frequency == 1h);
    CHECK(back.type == MeasurementType::WindowMax);
    CHECK(back.cleaning->hi == 10'000);
    CHECK(*back.staleness_horizon == 3h);

    const auto c = json::parse(R"({"stream_id":"stream-1","comparator":">","threshold":1000,"trigger":"Edge","cooldown":3600})")
                       .get<ConditionSpec>();
    CHECK(c.trigger == Trigger::Edge);
    CHECK(*c.cooldown == 1h);
}
