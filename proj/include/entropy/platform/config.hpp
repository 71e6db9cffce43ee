#pragma once

#include "entropy/core/types.hpp"

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace entropy::platform {

enum class ClockMode {
    System,
    /// Time follows ingested data and explicit clock advances.
    Simulated,
};

/// Keys (file and ENTROPY_<KEY> env names):
///   host, port, token, data_dir, flush_window, clock, simulated_start, tick_interval,
///   default_frequency, validation_window, vocabulary_version, gamer_type_precedence,
///   require_registered_sensors, threads, log_level
/// Precedence: environment > file > defaults.
struct PlatformConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    /// Bearer token for mutating endpoints; the server refuses to start without one.
    std::string token;
    /// Empty keeps measurements in memory only.
    std::string data_dir;
    Duration flush_window = std::chrono::seconds(1);
    ClockMode clock = ClockMode::System;
    TimePoint simulated_start{};
    /// Wall-clock period of the tick/sweep loop in System mode.
    Duration tick_interval = std::chrono::seconds(1);
    Duration default_frequency = std::chrono::hours(1);
    Duration validation_window = std::chrono::minutes(30);
    std::string vocabulary_version = "1.0.0";
    std::vector<std::string> gamer_type_precedence{"Player", "Socialiser", "Humanitarian", "FreeSpirit"};
    bool require_registered_sensors = true;
    int threads = 8;
    std::string log_level = "info";
};

const std::vector<std::string>& config_keys();

/// Applies one key; raises invalid-config on unknown keys or unparsable values.
void apply_setting(PlatformConfig& cfg, const std::string& key, const std::string& value);

/// "key = value" lines; '#' starts a comment.
std::map<std::string, std::string> parse_key_values(const std::string& text);

/// Defaults, then the file (when given), then ENTROPY_* entries of `env`.
PlatformConfig load_config(const std::optional<std::filesystem::path>& file,
                           const std::map<std::string, std::string>& env);

/// ENTROPY_* variables of the current process.
std::map<std::string, std::string> process_environment();

json to_json(const PlatformConfig& cfg, bool redact_token = true);

enum class LogLevel { Debug, Info, Warn, Error };

/// One JSON object per line: {"ts", "level", "msg", ...fields}.
class Logger {
public:
    explicit Logger(std::ostream& out, LogLevel min = LogLevel::Info) : out_(out), min_(min) {}

    void log(LogLevel level, std::string_view msg, json fields = json::object());
    void info(std::string_view msg, json fields = json::object()) { log(LogLevel::Info, msg, std::move(fields)); }
    void warn(std::string_view msg, json fields = json::object()) { log(LogLevel::Warn, msg, std::move(fields)); }
    void error(std::string_view msg, json fields = json::object()) { log(LogLevel::Error, msg, std::move(fields)); }

private:
    std::mutex mu_;
    std::ostream& out_;
    LogLevel min_;
};

LogLevel log_level_from_string(std::string_view s);

} // namespace entropy::platform
