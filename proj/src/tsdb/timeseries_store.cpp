#include "entropy/tsdb/timeseries_store.hpp"

#include "entropy/core/error.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <fcntl.h>
#include <fstream>
#include <unistd.h>

namespace entropy::tsdb {

std::string_view to_string(AggregateFn fn) {
    switch (fn) {
    case AggregateFn::Avg: return "avg";
    case AggregateFn::Min: return "min";
    case AggregateFn::Max: return "max";
    case AggregateFn::Sum: return "sum";
    case AggregateFn::Count: return "count";
    }
    return "avg";
}

AggregateFn aggregate_fn_from_string(std::string_view s) {
    if (s == "avg" || s == "Avg") return AggregateFn::Avg;
    if (s == "min" || s == "Min") return AggregateFn::Min;
    if (s == "max" || s == "Max") return AggregateFn::Max;
    if (s == "sum" || s == "Sum") return AggregateFn::Sum;
    if (s == "count" || s == "Count") return AggregateFn::Count;
    fail(ErrorCode::BadRequest, "unknown aggregate function '" + std::string(s) + "'");
}

void to_json(json& j, const AggregateBucket& b) {
    j = json{{"sensor_id", b.key.sensor_id},
             {"attribute", b.key.attribute},
             {"bucket_start", to_epoch_ms(b.bucket_start)},
             {"bucket_end", to_epoch_ms(b.bucket_end)},
             {"fn", to_string(b.fn)},
             {"sample_count", b.sample_count}};
    j["value"] = b.value ? json(*b.value) : json(nullptr);
}

void Partial::add(double v) {
    if (count == 0) {
        min = max = v;
    } else {
        min = std::min(min, v);
        max = std::max(max, v);
    }
    sum += v;
    ++count;
}

std::optional<double> Partial::finish(AggregateFn fn) const {
    if (count == 0) return std::nullopt;
    switch (fn) {
    case AggregateFn::Avg: return sum / static_cast<double>(count);
    case AggregateFn::Min: return min;
    case AggregateFn::Max: return max;
    case AggregateFn::Sum: return sum;
    case AggregateFn::Count: return static_cast<double>(count);
    }
    return std::nullopt;
}

namespace {

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    std::int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

} // namespace

TimeSeriesStore::TimeSeriesStore(StoreOptions options) : options_(std::move(options)) {
    last_flush_ = std::chrono::steady_clock::now();
    if (options_.data_dir) {
        std::filesystem::create_directories(*options_.data_dir);
        recover();
        const auto path = (*options_.data_dir / "measurements.log").string();
        log_fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
        if (log_fd_ < 0) {
            throw std::runtime_error("cannot open measurement log " + path);
        }
        if (options_.background_flush) {
            flusher_ = std::thread([this] { flusher_loop(); });
        }
    }
}

TimeSeriesStore::~TimeSeriesStore() {
    {
        std::lock_guard lock(flusher_mu_);
        stopping_ = true;
    }
    flusher_cv_.notify_all();
    if (flusher_.joinable()) flusher_.join();
    flush();
    if (log_fd_ >= 0) ::close(log_fd_);
}

void TimeSeriesStore::recover() {
    std::ifstream in(*options_.data_dir / "measurements.log");
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = json::parse(line, nullptr, false);
        if (j.is_discarded()) continue; // torn tail write
        Measurement m;
        try {
            m = j.get<Measurement>();
        } catch (const std::exception&) {
            continue;
        }
        auto& slot = series_[SeriesKey{m.sensor_id, m.attribute}];
        if (!slot) {
            slot = std::make_shared<Series>();
            slot->unit = m.unit;
        }
        insert_locked(*slot, m);
    }
}

void TimeSeriesStore::flusher_loop() {
    const auto period = std::max(Duration{1}, options_.flush_window / 4);
    std::unique_lock lock(flusher_mu_);
    while (!stopping_) {
        flusher_cv_.wait_for(lock, period, [this] { return stopping_; });
        lock.unlock();
        flush();
        lock.lock();
    }
}

void TimeSeriesStore::flush() {
    std::lock_guard lock(log_mu_);
    flush_locked();
}

void TimeSeriesStore::flush_locked() {
    if (log_fd_ < 0) {
        log_buffer_.clear();
        return;
    }
    std::size_t off = 0;
    while (off < log_buffer_.size()) {
        const auto n = ::write(log_fd_, log_buffer_.data() + off, log_buffer_.size() - off);
        if (n < 0) {
            if (errno == EINTR) continue;
            break;
        }
        off += static_cast<std::size_t>(n);
    }
    log_buffer_.clear();
    last_flush_ = std::chrono::steady_clock::now();
}

void TimeSeriesStore::log_append(const Measurement& m) {
    if (!options_.data_dir) return;
    std::lock_guard lock(log_mu_);
    log_buffer_ += json(m).dump();
    log_buffer_ += '\n';
    if (std::chrono::steady_clock::now() - last_flush_ >= options_.flush_window) {
        flush_locked();
    }
}

bool TimeSeriesStore::insert_locked(Series& s, const Measurement& m) {
    const auto t = to_epoch_ms(m.observed_at);
    auto lo = std::lower_bound(s.samples.begin(), s.samples.end(), t, [](const Sample& a, std::int64_t v) { return a.t < v; });
    auto hi = lo;
    while (hi != s.samples.end() && hi->t == t) {
        if (hi->value == m.value) return false;
        ++hi;
    }
    s.samples.insert(hi, Sample{t, m.value, m.quality});
    std::lock_guard rl(s.rollup_mu);
    for (auto& [width, rollup] : s.rollups) {
        rollup.buckets.erase(floor_div(t, width));
    }
    return true;
}

void TimeSeriesStore::declare_series(const SeriesKey& key, const std::string& unit) {
    std::unique_lock lock(map_mu_);
    auto& slot = series_[key];
    if (!slot) {
        slot = std::make_shared<Series>();
        slot->unit = unit;
    }
}

bool TimeSeriesStore::append(const Measurement& m) {
    if (!std::isfinite(m.value)) {
        fail(ErrorCode::NonFiniteValue, "measurement value for " + m.sensor_id + "/" + m.attribute + " is not finite");
    }
    const SeriesKey key{m.sensor_id, m.attribute};
    std::shared_ptr<Series> s = find_series(key);
    if (!s) {
        std::unique_lock lock(map_mu_);
        auto& slot = series_[key];
        if (!slot) {
            slot = std::make_shared<Series>();
            slot->unit = m.unit;
        }
        s = slot;
    }
    bool inserted = false;
    {
        std::unique_lock lock(s->mu);
        if (s->unit != m.unit) {
            fail(ErrorCode::UnitMismatch,
                 "series " + key.str() + " stores '" + s->unit + "', got '" + m.unit + "'");
        }
        inserted = insert_locked(*s, m);
        if (inserted) {
            log_append(m);
        }
    }
    return inserted;
}

std::shared_ptr<TimeSeriesStore::Series> TimeSeriesStore::find_series(const SeriesKey& key) const {
    std::shared_lock lock(map_mu_);
    auto it = series_.find(key);
    return it == series_.end() ? nullptr : it->second;
}

void TimeSeriesStore::check_range(const SeriesQuery& q) {
    if (!(q.t0 < q.t1)) {
        fail(ErrorCode::InvalidRange, "query range must satisfy t0 < t1");
    }
}

std::vector<Measurement> TimeSeriesStore::query_raw(const SeriesQuery& q) const {
    check_range(q);
    std::vector<Measurement> out;
    auto s = find_series(q.key);
    if (!s) return out;
    std::shared_lock lock(s->mu);
    const auto from = to_epoch_ms(q.t0);
    const auto to = to_epoch_ms(q.t1);
    auto it = std::lower_bound(s->samples.begin(), s->samples.end(), from,
                               [](const Sample& a, std::int64_t v) { return a.t < v; });
    for (; it != s->samples.end() && it->t < to; ++it) {
        if (q.quality && it->quality != *q.quality) continue;
        out.push_back(Measurement{q.key.sensor_id, q.key.attribute, it->value, s->unit, from_epoch_ms(it->t), it->quality});
    }
    return out;
}

Partial TimeSeriesStore::compute_partial(const Series& s, std::int64_t from, std::int64_t to,
                                         std::optional<Quality> quality) const {
    Partial p;
    auto it = std::lower_bound(s.samples.begin(), s.samples.end(), from,
                               [](const Sample& a, std::int64_t v) { return a.t < v; });
    for (; it != s.samples.end() && it->t < to; ++it) {
        if (quality && it->quality != *quality) continue;
        p.add(it->value);
    }
    return p;
}

std::vector<AggregateBucket> TimeSeriesStore::query_aggregate(const SeriesQuery& q) const {
    check_range(q);
    if (!q.fn || !q.bucket) {
        fail(ErrorCode::InvalidRange, "aggregate query needs a bucket width and a function");
    }
    if (q.bucket->count() <= 0) {
        fail(ErrorCode::ZeroBucketWidth, "bucket width must be positive");
    }
    const auto width = q.bucket->count();
    const auto from = to_epoch_ms(q.t0);
    const auto to = to_epoch_ms(q.t1);

    std::vector<AggregateBucket> out;
    auto s = find_series(q.key);
    std::shared_lock lock = s ? std::shared_lock(s->mu) : std::shared_lock<std::shared_mutex>();

    Rollup* rollup = nullptr;
    std::unique_lock<std::mutex> rollup_lock;
    if (s && !q.quality && from % width == 0) {
        rollup_lock = std::unique_lock(s->rollup_mu);
        auto it = s->rollups.find(width);
        if (it != s->rollups.end()) rollup = &it->second;
    }

    for (std::int64_t start = from; start < to; start += width) {
        const auto end = std::min(start + width, to);
        Partial p;
        if (s) {
            if (rollup && end - start == width) {
                const auto idx = floor_div(start, width);
                auto cached = rollup->buckets.find(idx);
                if (cached == rollup->buckets.end()) {
                    p = compute_partial(*s, start, end, std::nullopt);
                    if (p.count > 0) rollup->buckets.emplace(idx, p);
                } else {
                    p = cached->second;
                }
            } else {
                p = compute_partial(*s, start, end, q.quality);
            }
        }
        out.push_back(AggregateBucket{q.key, from_epoch_ms(start), from_epoch_ms(end), *q.fn, p.finish(*q.fn), p.count});
    }
    return out;
}

void TimeSeriesStore::rollup_maintenance(const SeriesKey& key, const std::vector<Duration>& widths) {
    for (const auto& w : widths) {
        if (std::find(options_.rollup_widths.begin(), options_.rollup_widths.end(), w) == options_.rollup_widths.end()) {
            fail(ErrorCode::UnsupportedBucketWidth,
                 "rollup width " + std::to_string(w.count()) + " ms is not in the configured set");
        }
    }
    auto s = find_series(key);
    if (!s) {
        fail(ErrorCode::UnknownSeries, "series " + key.str() + " does not exist");
    }
    std::shared_lock lock(s->mu);
    std::lock_guard rl(s->rollup_mu);
    for (const auto& w : widths) {
        const auto width = w.count();
        Rollup rollup;
        std::size_t i = 0;
        while (i < s->samples.size()) {
            const auto idx = floor_div(s->samples[i].t, width);
            const auto end = (idx + 1) * width;
            Partial p;
            for (; i < s->samples.size() && s->samples[i].t < end; ++i) {
                p.add(s->samples[i].value);
            }
            rollup.buckets.emplace(idx, p);
        }
        s->rollups[width] = std::move(rollup);
    }
}

std::size_t TimeSeriesStore::materialized_bucket_count(const SeriesKey& key, Duration width) const {
    auto s = find_series(key);
    if (!s) return 0;
    std::lock_guard rl(s->rollup_mu);
    auto it = s->rollups.find(width.count());
    return it == s->rollups.end() ? 0 : it->second.buckets.size();
}

std::vector<SeriesKey> TimeSeriesStore::series() const {
    std::shared_lock lock(map_mu_);
    std::vector<SeriesKey> out;
    for (const auto& [key, _] : series_) out.push_back(key);
    return out;
}

std::optional<std::string> TimeSeriesStore::series_unit(const SeriesKey& key) const {
    auto s = find_series(key);
    if (!s) return std::nullopt;
    std::shared_lock lock(s->mu);
    return s->unit;
}

std::size_t TimeSeriesStore::size() const {
    std::shared_lock lock(map_mu_);
    std::size_t n = 0;
    for (const auto& [_, s] : series_) {
        std::shared_lock sl(s->mu);
        n += s->samples.size();
    }
    return n;
}

std::size_t TimeSeriesStore::series_size(const SeriesKey& key) const {
    auto s = find_series(key);
    if (!s) return 0;
    std::shared_lock lock(s->mu);
    return s->samples.size();
}

} // namespace entropy::tsdb
