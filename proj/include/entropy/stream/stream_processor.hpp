#pragma once

#include "entropy/broker/context_broker.hpp"
#include "entropy/stream/outlier.hpp"
#include "entropy/tsdb/timeseries_store.hpp"

#include <atomic>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

namespace entropy::stream {

enum class MeasurementType { LastValue, WindowAvg, WindowMin, WindowMax };

std::string_view to_string(MeasurementType t);
MeasurementType measurement_type_from_string(std::string_view s);

struct StreamSpec {
    /// Sensor or composite entity id.
    std::string selector;
    std::string attribute;
    Duration frequency = std::chrono::hours(1);
    MeasurementType type = MeasurementType::LastValue;
    /// Overrides the attribute-kind default for the selector's series.
    std::optional<OutlierPolicy> cleaning;
    /// LastValue ticks are absent when the newest sample is older than this; 2x frequency when unset.
    std::optional<Duration> staleness_horizon;
};

void to_json(json& j, const StreamSpec& s);
void from_json(const json& j, StreamSpec& s);

struct StreamInfo {
    std::string id;
    StreamSpec spec;
    bool active = false;
    std::optional<TimePoint> activated_at;
    std::optional<TimePoint> next_tick;
    std::size_t ticks = 0;
};

void to_json(json& j, const StreamInfo& s);

enum class EventKind { CleanedMeasurement, OutlierDropped, TickSample, ContextChange };

std::string_view to_string(EventKind k);

struct StreamEvent {
    std::uint64_t seq = 0;
    std::string stream_id;
    EventKind kind = EventKind::TickSample;
    TimePoint at{};
    std::optional<Measurement> measurement;
    /// Tick value, or the tick value that satisfied a condition.
    std::optional<double> value;
    std::optional<Verdict> verdict;
    std::optional<double> score;
    /// Condition or pattern id for ContextChange.
    std::string source_id;
};

void to_json(json& j, const StreamEvent& e);

struct TickSample {
    std::string stream_id;
    TimePoint at{};
    /// Absent when the stream had no usable sample.
    std::optional<double> value;
    std::size_t sample_count = 0;
};

enum class Trigger { Level, Edge };

std::string_view to_string(Trigger t);
Trigger trigger_from_string(std::string_view s);

struct ConditionSpec {
    std::string stream_id;
    Comparator comparator = Comparator::Gt;
    double threshold = 0.0;
    Trigger trigger = Trigger::Level;
    /// Defaults to the stream's frequency.
    std::optional<Duration> cooldown;
};

void to_json(json& j, const ConditionSpec& c);
void from_json(const json& j, ConditionSpec& c);

struct ConditionState {
    std::optional<TimePoint> last_fired;
    bool was_true = false;
};

/// Pure evaluation of one tick. An absent tick never fires and leaves state untouched.
bool evaluate_condition(const ConditionSpec& cond, Duration cooldown, const TickSample& tick, ConditionState& state);

struct PatternSpec {
    std::vector<std::string> condition_ids;
    Duration span = std::chrono::minutes(30);
    /// Member firings must occur in declaration order.
    bool ordered = true;
};

void to_json(json& j, const PatternSpec& p);
void from_json(const json& j, PatternSpec& p);

struct ContextChange {
    /// Condition or pattern id.
    std::string source_id;
    bool from_pattern = false;
    std::string stream_id;
    TimePoint at{};
    std::optional<double> value;
};

void to_json(json& j, const ContextChange& c);

struct CleaningStats {
    std::size_t cleaned = 0;
    std::size_t dropped = 0;
};

/// Cleans raw measurements, evaluates stream ticks on a simulated or wall clock and raises context changes.
class StreamProcessor {
public:
    using ContextListener = std::function<void(const ContextChange&)>;

    StreamProcessor(const Clock& clock, broker::ContextBroker& broker, tsdb::TimeSeriesStore& store);
    ~StreamProcessor();
    StreamProcessor(const StreamProcessor&) = delete;
    StreamProcessor& operator=(const StreamProcessor&) = delete;

    void set_policy(const SeriesKey& key, OutlierPolicy policy);
    OutlierPolicy policy_for(const SeriesKey& key) const;

    /// Yields exactly one CleanedMeasurement or OutlierDropped event.
    StreamEvent ingest(const Measurement& m);
    CleaningStats cleaning_stats() const;

    /// Same selector, attribute, frequency and type returns the existing id.
    std::string register_stream(StreamSpec spec);
    void activate(const std::string& id);
    void deactivate(const std::string& id);
    StreamInfo stream(const std::string& id) const;
    std::vector<StreamInfo> streams() const;

    std::optional<TickSample> evaluate_tick(const std::string& id, TimePoint now) const;
    /// Buffered samples with t0 <= t <= t1, oldest first.
    std::vector<std::pair<TimePoint, double>> samples(const std::string& id, TimePoint t0, TimePoint t1) const;

    std::string register_condition(ConditionSpec spec);
    ConditionSpec condition(const std::string& id) const;
    std::string register_pattern(PatternSpec spec);

    void on_context_change(ContextListener listener);

    /// Evaluates every due tick up to and including now, ordered by (tick time, stream id). Returns the tick count.
    std::size_t advance_to(TimePoint now);

    std::vector<StreamEvent> events(const std::string& stream_id) const;
    std::string export_events_jsonl(const std::string& stream_id) const;

private:
    struct Cleaner {
        std::mutex mu;
        OutlierDetector detector;
        explicit Cleaner(OutlierPolicy p) : detector(std::move(p)) {}
    };

    struct Condition {
        std::string id;
        ConditionSpec spec;
        Duration cooldown{};
        ConditionState state;
    };

    struct Stream {
        std::string id;
        StreamSpec spec;
        std::uint64_t subscription = 0;
        mutable std::mutex mu;
        bool active = false;
        std::optional<TimePoint> activated_at;
        std::optional<TimePoint> next_tick;
        std::size_t ticks = 0;
        std::deque<std::pair<TimePoint, double>> buffer; // sorted by time
        std::vector<StreamEvent> log;
        std::vector<std::string> condition_ids;
    };

    struct Pattern {
        std::string id;
        PatternSpec spec;
        std::map<std::string, std::deque<TimePoint>> history;
    };

    std::shared_ptr<Stream> find_stream(const std::string& id) const;
    std::shared_ptr<Stream> require_stream(const std::string& id) const;
    std::shared_ptr<Cleaner> cleaner_for(const SeriesKey& key);
    void on_notification(const std::shared_ptr<Stream>& s, const broker::Notification& n);
    static void buffer_sample(Stream& s, TimePoint t, double v);
    static std::optional<TickSample> tick_locked(const Stream& s, TimePoint now);
    bool pattern_satisfied(const Pattern& p) const;
    std::uint64_t next_seq() { return seq_.fetch_add(1) + 1; }

    const Clock& clock_;
    broker::ContextBroker& broker_;
    tsdb::TimeSeriesStore& store_;

    mutable std::shared_mutex cleaners_mu_;
    std::map<SeriesKey, std::shared_ptr<Cleaner>> cleaners_;
    std::map<SeriesKey, OutlierPolicy> policies_;
    std::atomic<std::size_t> cleaned_{0};
    std::atomic<std::size_t> dropped_{0};

    mutable std::shared_mutex streams_mu_;
    std::map<std::string, std::shared_ptr<Stream>> streams_;
    std::map<SeriesKey, std::vector<std::string>> streams_by_series_;
    std::uint64_t next_stream_ = 1;

    /// Held across one advance_to, including listener dispatch; taken before tick_mu_.
    std::mutex advance_mu_;
    /// Owns conditions, patterns and listeners.
    mutable std::mutex tick_mu_;
    std::map<std::string, Condition> conditions_;
    std::map<std::string, Pattern> patterns_;
    std::vector<ContextListener> listeners_;
    std::uint64_t next_condition_ = 1;
    std::uint64_t next_pattern_ = 1;

    std::atomic<std::uint64_t> seq_{0};
};

} // namespace entropy::stream
