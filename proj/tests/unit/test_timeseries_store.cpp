#include "entropy/core/error.hpp"
#include "entropy/tsdb/timeseries_store.hpp"

#include <doctest.h>

#include "unit/test_support.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

using namespace entropy;
using entropy::testing::code_of;
using namespace entropy::tsdb;
using namespace std::chrono_literals;

namespace {

const TimePoint t0 = from_epoch_ms(1'700'006'400'000); // a whole hour
const SeriesKey co2{"co2-office-1", "co2"};

Measurement m(double v, TimePoint at, Quality q = Quality::Cleaned) { return {co2.sensor_id, co2.attribute, v, "ppm", at, q}; }

bool close(double a, double b, double rel = 1e-9) {
    return std::abs(a - b) <= rel * std::max({1.0, std::abs(a), std::abs(b)});
}

/// Reference fold over raw samples; independent of the store's bucket code.
std::optional<double> fold(const std::vector<double>& xs, AggregateFn fn) {
    if (xs.empty()) return std::nullopt;
    switch (fn) {
    case AggregateFn::Count: return static_cast<double>(xs.size());
    case AggregateFn::Min: return *std::min_element(xs.begin(), xs.end());
    case AggregateFn::Max: return *std::max_element(xs.begin(), xs.end());
    case AggregateFn::Sum: {
        long double s = 0;
        for (double x : xs) s += x;
        return static_cast<double>(s);
    }
    case AggregateFn::Avg: {
        long double s = 0;
        for (double x : xs) s += x;
        return static_cast<double>(s / xs.size());
    }
    }
    return std::nullopt;
}

void check_against_raw(const TimeSeriesStore& store, const SeriesQuery& q) {
    auto buckets = store.query_aggregate(q);
    SeriesQuery raw_q = q;
    raw_q.fn.reset();
    raw_q.bucket.reset();
    const auto raw = store.query_raw(raw_q);
    std::size_t total = 0;
    TimePoint cursor = q.t0;
    for (const auto& b : buckets) {
        REQUIRE(b.bucket_start == cursor);
        cursor = b.bucket_end;
        std::vector<double> xs;
        for (const auto& r : raw) {
            if (r.observed_at >= b.bucket_start && r.observed_at < b.bucket_end) xs.push_back(r.value);
        }
        REQUIRE(b.sample_count == xs.size());
        total += b.sample_count;
        const auto expect = fold(xs, *q.fn);
        REQUIRE(b.value.has_value() == expect.has_value());
        if (expect) {
            if (*q.fn == AggregateFn::Avg || *q.fn == AggregateFn::Sum) {
                REQUIRE(close(*b.value, *expect));
            } else {
                REQUIRE(*b.value == *expect);
            }
        }
    }
    REQUIRE(cursor == q.t1);
    REQUIRE(total == raw.size());
}

const AggregateFn kAllFns[] = {AggregateFn::Avg, AggregateFn::Min, AggregateFn::Max, AggregateFn::Sum,
                               AggregateFn::Count};

} // namespace

TEST_CASE("append is idempotent for exact duplicates") {
    TimeSeriesStore store;
    CHECK(store.append(m(450, t0)));
    CHECK_FALSE(store.append(m(450, t0)));
    CHECK(store.append(m(451, t0))); // same instant, different value: kept
    auto raw = store.query_raw({co2, t0, t0 + 1s});
    REQUIRE(raw.size() == 2);
    CHECK(raw[0].value == 450);
    CHECK(raw[1].value == 451); // ties in insertion order
}

TEST_CASE("unit is fixed by the first write; non-finite values rejected") {
    TimeSeriesStore store;
    store.append({"t1", "temperature", 70, "degF", t0, Quality::Raw});
    CHECK(code_of([&] { store.append({"t1", "temperature", 21, "degC", t0 + 1s, Quality::Raw}); }) ==
          ErrorCode::UnitMismatch);
    CHECK(code_of([&] { store.append(m(NAN, t0)); }) == ErrorCode::NonFiniteValue);
    CHECK(code_of([&] { store.append(m(INFINITY, t0)); }) == ErrorCode::NonFiniteValue);
}

TEST_CASE("10,000 appended points are all returned") {
    TimeSeriesStore store;
    for (int i = 0; i < 10'000; ++i) store.append(m(i, t0 + Duration{i * 1000}));
    CHECK(store.query_raw({co2, t0, t0 + 10'000s}).size() == 10'000);
}

TEST_CASE("raw query edges") {
    TimeSeriesStore store;
    CHECK(store.query_raw({co2, t0, t0 + 1h}).empty());
    store.append(m(1, t0));
    store.append(m(2, t0 + 1h));
    auto raw = store.query_raw({co2, t0, t0 + 1h});
    REQUIRE(raw.size() == 1); // the sample at t1 is excluded
    CHECK(raw[0].value == 1);
    CHECK(code_of([&] { store.query_raw({co2, t0, t0}); }) == ErrorCode::InvalidRange);
}

TEST_CASE("raw query equals a linear-scan filter of a random fixture") {
    std::mt19937_64 rng(11);
    TimeSeriesStore store;
    std::vector<Measurement> fixture;
    for (int i = 0; i < 500; ++i) {
        auto x = m(static_cast<double>(rng() % 2000), t0 + Duration{static_cast<std::int64_t>(rng() % 86'400'000)},
                   (rng() % 5 == 0) ? Quality::Raw : Quality::Cleaned);
        if (store.append(x)) fixture.push_back(x);
    }
    for (int trial = 0; trial < 50; ++trial) {
        auto a = t0 + Duration{static_cast<std::int64_t>(rng() % 86'400'000)};
        auto b = t0 + Duration{static_cast<std::int64_t>(rng() % 86'400'000)};
        if (a == b) continue;
        if (b < a) std::swap(a, b);
        std::vector<Measurement> expect;
        for (const auto& x : fixture) {
            if (x.observed_at >= a && x.observed_at < b) expect.push_back(x);
        }
        std::stable_sort(expect.begin(), expect.end(),
                         [](const auto& l, const auto& r) { return l.observed_at < r.observed_at; });
        CHECK(store.query_raw({co2, a, b}) == expect);
    }
}

TEST_CASE("aggregate basics") {
    TimeSeriesStore store;
    store.append(m(1, t0 + 1min));
    store.append(m(2, t0 + 2min));
    store.append(m(3, t0 + 3min));
    auto avg = store.query_aggregate({co2, t0, t0 + 1h, 1h, AggregateFn::Avg});
    REQUIRE(avg.size() == 1);
    CHECK(*avg[0].value == 2.0);

    TimeSeriesStore s2;
    for (auto [v, k] : {std::pair{5.0, 1}, std::pair{-1.0, 2}, std::pair{7.0, 3}}) s2.append(m(v, t0 + Duration{k * 1000}));
    CHECK(*s2.query_aggregate({co2, t0, t0 + 1h, 1h, AggregateFn::Min})[0].value == -1);
    CHECK(*s2.query_aggregate({co2, t0, t0 + 1h, 1h, AggregateFn::Max})[0].value == 7);
    CHECK(*s2.query_aggregate({co2, t0, t0 + 1h, 1h, AggregateFn::Count})[0].value == 3);

    auto empty = s2.query_aggregate({co2, t0 + 1h, t0 + 3h, 1h, AggregateFn::Avg});
    REQUIRE(empty.size() == 2);
    CHECK_FALSE(empty[0].value.has_value());
    CHECK(empty[0].sample_count == 0);

    CHECK(code_of([&] { s2.query_aggregate({co2, t0, t0 + 1h, 0ms, AggregateFn::Avg}); }) == ErrorCode::ZeroBucketWidth);
    CHECK(code_of([&] { s2.query_aggregate({co2, t0 + 1h, t0, 1h, AggregateFn::Avg}); }) == ErrorCode::InvalidRange);
}

TEST_CASE("last bucket is clipped to the range end") {
    TimeSeriesStore store;
    store.append(m(10, t0 + 90min));
    auto b = store.query_aggregate({co2, t0, t0 + 100min, 1h, AggregateFn::Sum});
    REQUIRE(b.size() == 2);
    CHECK(b[1].bucket_end == t0 + 100min);
    CHECK(*b[1].value == 10);
}

TEST_CASE("hourly buckets over 48 h match per-bucket recomputation for every fn") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> noise(0.0, 150.0);
    TimeSeriesStore store;
    for (int i = 0; i < 1000; ++i) {
        store.append(m(800 + noise(rng), t0 + Duration{static_cast<std::int64_t>(rng() % (48 * 3'600'000))}));
    }
    for (auto fn : kAllFns) {
        check_against_raw(store, {co2, t0, t0 + 48h, 1h, fn});
    }
}

TEST_CASE("aggregation consistency property over random queries") {
    std::mt19937_64 rng(99);
    TimeSeriesStore store;
    for (int i = 0; i < 2000; ++i) {
        store.append(m(static_cast<double>(rng() % 100'000) / 7.0, t0 + Duration{static_cast<std::int64_t>(rng() % (72 * 3'600'000))},
                       (rng() % 4 == 0) ? Quality::Raw : Quality::Cleaned));
    }
    store.rollup_maintenance(co2, {1h});
    for (int trial = 0; trial < 200; ++trial) {
        const auto a = static_cast<std::int64_t>(rng() % (72 * 3'600'000));
        const auto len = 1 + static_cast<std::int64_t>(rng() % (24 * 3'600'000));
        const auto width = (trial % 3 == 0) ? 3'600'000 : 1 + static_cast<std::int64_t>(rng() % (6 * 3'600'000));
        SeriesQuery q{co2, t0 + Duration{a}, t0 + Duration{a + len}, Duration{width}, kAllFns[rng() % 5]};
        if (trial % 5 == 0) q.quality = Quality::Cleaned;
        check_against_raw(store, q);
    }
}

TEST_CASE("materialized rollups equal on-the-fly aggregation, including after late appends") {
    std::mt19937_64 rng(5);
    TimeSeriesStore rolled;
    TimeSeriesStore plain;
    for (int i = 0; i < 1500; ++i) {
        auto x = m(static_cast<double>(rng() % 5000), t0 + Duration{static_cast<std::int64_t>(rng() % (10 * 86'400'000LL))});
        rolled.append(x);
        plain.append(x);
    }
    rolled.rollup_maintenance(co2, {1h, 24h});
    CHECK(rolled.materialized_bucket_count(co2, 1h) > 0);

    auto compare_ranges = [&] {
        for (int trial = 0; trial < 10; ++trial) {
            const auto width = (trial % 2 == 0) ? Duration{1h} : Duration{24h};
            const auto start_idx = static_cast<std::int64_t>(rng() % 5);
            const auto t_start = from_epoch_ms((to_epoch_ms(t0) / width.count() + start_idx) * width.count());
            const auto n = 1 + static_cast<std::int64_t>(rng() % 48);
            for (auto fn : kAllFns) {
                SeriesQuery q{co2, t_start, t_start + width * n, width, fn};
                auto a = rolled.query_aggregate(q);
                auto b = plain.query_aggregate(q);
                REQUIRE(a.size() == b.size());
                for (std::size_t i = 0; i < a.size(); ++i) {
                    REQUIRE(a[i].sample_count == b[i].sample_count);
                    REQUIRE(a[i].value.has_value() == b[i].value.has_value());
                    if (a[i].value) REQUIRE(close(*a[i].value, *b[i].value));
                }
            }
        }
    };
    compare_ranges();

    // Late data lands in already-materialized buckets.
    for (int i = 0; i < 100; ++i) {
        auto late = m(1e4 + i, t0 + Duration{static_cast<std::int64_t>(rng() % (5 * 86'400'000LL))});
        rolled.append(late);
        plain.append(late);
    }
    compare_ranges();
}

TEST_CASE("rollup maintenance edge cases") {
    TimeSeriesStore store;
    CHECK(code_of([&] { store.rollup_maintenance(co2, {1h}); }) == ErrorCode::UnknownSeries);
    store.declare_series(co2, "ppm");
    CHECK_NOTHROW(store.rollup_maintenance(co2, {1h}));
    CHECK(store.materialized_bucket_count(co2, 1h) == 0);
    CHECK(code_of([&] { store.rollup_maintenance(co2, {7min}); }) == ErrorCode::UnsupportedBucketWidth);
}

TEST_CASE("identical queries without writes return identical results") {
    TimeSeriesStore store;
    for (int i = 0; i < 100; ++i) store.append(m(i * 1.5, t0 + Duration{i * 60'000}));
    SeriesQuery q{co2, t0, t0 + 2h, 10min, AggregateFn::Avg};
    CHECK(store.query_aggregate(q) == store.query_aggregate(q));
    CHECK(store.query_raw({co2, t0, t0 + 2h}) == store.query_raw({co2, t0, t0 + 2h}));
}

TEST_CASE("history survives a restart and torn tail records are skipped") {
    const auto dir = std::filesystem::temp_directory_path() / ("entropy-tsdb-" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    {
        TimeSeriesStore store({.data_dir = dir});
        for (int i = 0; i < 250; ++i) store.append(m(i, t0 + Duration{i * 1000}));
        store.append({"door-1", "open", 1, "", t0, Quality::Raw});
    }
    {
        std::ofstream torn(dir / "measurements.log", std::ios::app);
        torn << "{\"sensor_id\":\"co2-office-1\",\"attr";
    }
    TimeSeriesStore reopened({.data_dir = dir});
    CHECK(reopened.series_size(co2) == 250);
    CHECK(reopened.series_unit({"door-1", "open"}) == std::string{});
    CHECK(reopened.query_raw({co2, t0, t0 + 1h}).back().value == 249);
    CHECK_FALSE(reopened.append(m(0, t0))); // dedup state is rebuilt as well
    std::filesystem::remove_all(dir);
}
