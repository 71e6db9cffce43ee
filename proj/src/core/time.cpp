#include "entropy/core/time.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <ctime>

namespace entropy {

std::string format_iso8601(TimePoint t) {
    const auto ms = to_epoch_ms(t);
    auto secs = static_cast<std::time_t>(ms / 1000);
    auto rem = static_cast<int>(ms % 1000);
    if (rem < 0) {
        rem += 1000;
        --secs;
    }
    std::tm tm{};
    gmtime_r(&secs, &tm);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1,
                  tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, rem);
    return buf;
}

std::optional<TimePoint> parse_iso8601(std::string_view text) {
    std::tm tm{};
    int ms = 0;
    char tail = 0;
    const std::string s(text);
    int consumed = 0;
    if (std::sscanf(s.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%n", &tm.tm_year, &tm.tm_mon, &tm.tm_mday, &tm.tm_hour,
                    &tm.tm_min, &tm.tm_sec, &consumed) != 6) {
        return std::nullopt;
    }
    std::string_view rest = std::string_view(s).substr(static_cast<std::size_t>(consumed));
    if (!rest.empty() && rest.front() == '.') {
        int digits = 0;
        std::size_t i = 1;
        for (; i < rest.size() && rest[i] >= '0' && rest[i] <= '9'; ++i) {
            if (digits < 3) {
                ms = ms * 10 + (rest[i] - '0');
                ++digits;
            }
        }
        while (digits++ < 3) {
            ms *= 10;
        }
        rest.remove_prefix(i);
    }
    if (rest.size() != 1) {
        return std::nullopt;
    }
    tail = rest.front();
    if (tail != 'Z') {
        return std::nullopt;
    }
    tm.tm_year -= 1900;
    tm.tm_mon -= 1;
    const std::time_t secs = timegm(&tm);
    return from_epoch_ms(static_cast<std::int64_t>(secs) * 1000 + ms);
}

std::optional<Duration> parse_iso_duration(std::string_view text) {
    bool negative = false;
    if (!text.empty() && text.front() == '-') {
        negative = true;
        text.remove_prefix(1);
    }
    if (text.size() < 2 || text.front() != 'P') return std::nullopt;
    text.remove_prefix(1);
    bool in_time = false;
    bool any = false;
    double total_ms = 0;
    while (!text.empty()) {
        if (text.front() == 'T') {
            if (in_time) return std::nullopt;
            in_time = true;
            text.remove_prefix(1);
            continue;
        }
        std::size_t i = 0;
        while (i < text.size() && ((text[i] >= '0' && text[i] <= '9') || text[i] == '.')) ++i;
        if (i == 0 || i == text.size()) return std::nullopt;
        const double n = std::strtod(std::string(text.substr(0, i)).c_str(), nullptr);
        const char unit = text[i];
        text.remove_prefix(i + 1);
        if (!in_time && unit == 'D') {
            total_ms += n * 86'400'000.0;
        } else if (!in_time && unit == 'W') {
            total_ms += n * 7 * 86'400'000.0;
        } else if (in_time && unit == 'H') {
            total_ms += n * 3'600'000.0;
        } else if (in_time && unit == 'M') {
            total_ms += n * 60'000.0;
        } else if (in_time && unit == 'S') {
            total_ms += n * 1000.0;
        } else {
            return std::nullopt;
        }
        any = true;
    }
    if (!any) return std::nullopt;
    const auto ms = static_cast<std::int64_t>(std::llround(total_ms));
    return Duration{negative ? -ms : ms};
}

std::string format_iso_duration(Duration d) {
    auto ms = d.count();
    std::string out = ms < 0 ? "-P" : "P";
    if (ms < 0) ms = -ms;
    const auto days = ms / 86'400'000;
    ms %= 86'400'000;
    if (days) out += std::to_string(days) + "D";
    if (ms == 0) return days ? out : out + "T0S";
    out += "T";
    const auto h = ms / 3'600'000;
    ms %= 3'600'000;
    const auto m = ms / 60'000;
    ms %= 60'000;
    if (h) out += std::to_string(h) + "H";
    if (m) out += std::to_string(m) + "M";
    if (ms) {
        out += std::to_string(ms / 1000);
        if (ms % 1000) {
            char frac[8];
            std::snprintf(frac, sizeof frac, ".%03d", static_cast<int>(ms % 1000));
            out += frac;
        }
        out += "S";
    }
    return out;
}

TimePoint SystemClock::now() const {
    return std::chrono::time_point_cast<Duration>(std::chrono::system_clock::now());
}

void ManualClock::advance_to(TimePoint t) {
    const auto target = to_epoch_ms(t);
    auto cur = now_ms_.load();
    while (cur < target && !now_ms_.compare_exchange_weak(cur, target)) {
    }
}

} // namespace entropy
