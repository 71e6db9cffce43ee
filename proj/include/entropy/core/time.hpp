#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace entropy {

using Duration = std::chrono::milliseconds;
using TimePoint = std::chrono::sys_time<Duration>;

constexpr TimePoint from_epoch_ms(std::int64_t ms) { return TimePoint{Duration{ms}}; }
constexpr std::int64_t to_epoch_ms(TimePoint t) { return t.time_since_epoch().count(); }

/// UTC, millisecond precision: "2024-03-01T08:00:00.000Z".
std::string format_iso8601(TimePoint t);
std::optional<TimePoint> parse_iso8601(std::string_view text);

/// ISO 8601 durations limited to days and time parts: "P1D", "PT1H30M", "PT0.5S".
std::optional<Duration> parse_iso_duration(std::string_view text);
std::string format_iso_duration(Duration d);

class Clock {
public:
    virtual ~Clock() = default;
    virtual TimePoint now() const = 0;
};

class SystemClock final : public Clock {
public:
    TimePoint now() const override;
};

/// Clock driven explicitly by tests and the simulated-time server mode.
class ManualClock final : public Clock {
public:
    explicit ManualClock(TimePoint start = TimePoint{}) : now_ms_(to_epoch_ms(start)) {}

    TimePoint now() const override { return from_epoch_ms(now_ms_.load()); }
    void set(TimePoint t) { now_ms_.store(to_epoch_ms(t)); }
    void advance(Duration d) { now_ms_.fetch_add(d.count()); }
    /// Moves forward only; never rewinds.
    void advance_to(TimePoint t);

private:
    std::atomic<std::int64_t> now_ms_;
};

} // namespace entropy
