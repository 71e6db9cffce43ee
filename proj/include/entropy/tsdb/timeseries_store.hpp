#pragma once

#include "entropy/core/types.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <condition_variable>
#include <vector>

namespace entropy::tsdb {

enum class AggregateFn { Avg, Min, Max, Sum, Count };

std::string_view to_string(AggregateFn fn);
AggregateFn aggregate_fn_from_string(std::string_view s);

struct AggregateBucket {
    SeriesKey key;
    TimePoint bucket_start{};
    TimePoint bucket_end{};
    AggregateFn fn = AggregateFn::Avg;
    /// Absent for an empty bucket.
    std::optional<double> value;
    std::size_t sample_count = 0;

    bool operator==(const AggregateBucket&) const = default;
};

void to_json(json& j, const AggregateBucket& b);

struct SeriesQuery {
    SeriesKey key;
    TimePoint t0{};
    TimePoint t1{};
    std::optional<Duration> bucket;
    std::optional<AggregateFn> fn;
    std::optional<Quality> quality;
};

struct StoreOptions {
    /// Where the append-only log lives; in-memory only when absent.
    std::optional<std::filesystem::path> data_dir;
    /// Maximum age of buffered, not-yet-written log records.
    Duration flush_window = std::chrono::seconds(1);
    std::vector<Duration> rollup_widths{std::chrono::hours(1), std::chrono::hours(24)};
    /// Spawn a thread that flushes the log buffer every flush_window / 4.
    bool background_flush = false;
};

/// Running partial aggregate for one rollup bucket.
struct Partial {
    std::size_t count = 0;
    double sum = 0.0;
    double min = 0.0;
    double max = 0.0;

    void add(double v);
    std::optional<double> finish(AggregateFn fn) const;
};

/// Durable measurement history per (sensor, attribute) with raw and bucketed reads.
class TimeSeriesStore {
public:
    explicit TimeSeriesStore(StoreOptions options = {});
    ~TimeSeriesStore();
    TimeSeriesStore(const TimeSeriesStore&) = delete;
    TimeSeriesStore& operator=(const TimeSeriesStore&) = delete;

    /// Creates an empty series whose unit is fixed up front. No-op if it exists.
    void declare_series(const SeriesKey& key, const std::string& unit);

    /// Returns false when the measurement duplicated a stored one and was collapsed.
    bool append(const Measurement& m);

    std::vector<Measurement> query_raw(const SeriesQuery& q) const;
    std::vector<AggregateBucket> query_aggregate(const SeriesQuery& q) const;

    /// Materializes rollups for the given widths; later aggregate queries aligned to them read from it.
    void rollup_maintenance(const SeriesKey& key, const std::vector<Duration>& widths);
    std::size_t materialized_bucket_count(const SeriesKey& key, Duration width) const;

    std::vector<SeriesKey> series() const;
    std::optional<std::string> series_unit(const SeriesKey& key) const;
    std::size_t size() const;
    std::size_t series_size(const SeriesKey& key) const;

    /// Writes every buffered log record to the file.
    void flush();

private:
    struct Sample {
        std::int64_t t;
        double value;
        Quality quality;
    };

    struct Rollup {
        std::map<std::int64_t, Partial> buckets; // bucket index (epoch-aligned) -> partial
    };

    struct Series {
        std::string unit;
        std::vector<Sample> samples; // sorted by t, ties in insertion order
        mutable std::shared_mutex mu;
        mutable std::mutex rollup_mu;
        mutable std::map<std::int64_t, Rollup> rollups; // width ms -> rollup
    };

    std::shared_ptr<Series> find_series(const SeriesKey& key) const;
    static void check_range(const SeriesQuery& q);
    Partial compute_partial(const Series& s, std::int64_t from, std::int64_t to, std::optional<Quality> quality) const;
    void log_append(const Measurement& m);
    void recover();
    bool insert_locked(Series& s, const Measurement& m);
    void flush_locked();
    void flusher_loop();

    StoreOptions options_;
    mutable std::shared_mutex map_mu_;
    std::map<SeriesKey, std::shared_ptr<Series>> series_;

    std::mutex log_mu_;
    int log_fd_ = -1;
    std::string log_buffer_;
    std::chrono::steady_clock::time_point last_flush_;

    std::mutex flusher_mu_;
    std::condition_variable flusher_cv_;
    bool stopping_ = false;
    std::thread flusher_;
};

} // namespace entropy::tsdb
