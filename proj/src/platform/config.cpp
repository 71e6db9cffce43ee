#include "entropy/platform/config.hpp"

#include "entropy/core/error.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

extern char** environ;

namespace entropy::platform {

namespace {

std::string trim(std::string s) {
    const auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

[[noreturn]] void bad(const std::string& key, const std::string& value, const std::string& why) {
    fail(ErrorCode::InvalidConfig, "setting '" + key + "' = '" + value + "': " + why);
}

int parse_int(const std::string& key, const std::string& v, int lo, int hi) {
    try {
        std::size_t used = 0;
        const int n = std::stoi(v, &used);
        if (used != v.size() || n < lo || n > hi) bad(key, v, "out of range");
        return n;
    } catch (const std::logic_error&) {
        bad(key, v, "expected an integer");
    }
}

Duration parse_duration(const std::string& key, const std::string& v) {
    if (auto d = parse_iso_duration(v)) {
        if (*d > Duration::zero()) return *d;
        bad(key, v, "must be positive");
    }
    try {
        std::size_t used = 0;
        const double s = std::stod(v, &used);
        if (used == v.size() && s > 0) return Duration{static_cast<std::int64_t>(s * 1000)};
    } catch (const std::logic_error&) {
    }
    bad(key, v, "expected seconds or an ISO 8601 duration");
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    bad(key, v, "expected true or false");
}

std::string_view to_string(LogLevel l) {
    switch (l) {
    case LogLevel::Debug: return "debug";
    case LogLevel::Info: return "info";
    case LogLevel::Warn: return "warn";
    case LogLevel::Error: return "error";
    }
    return "info";
}

} // namespace

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys{
        "host",           "port",          "token",           "data_dir",          "flush_window",
        "clock",          "simulated_start", "tick_interval", "default_frequency", "validation_window",
        "vocabulary_version", "gamer_type_precedence", "require_registered_sensors", "threads", "log_level"};
    return keys;
}

void apply_setting(PlatformConfig& cfg, const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    if (key == "host") {
        cfg.host = v;
    } else if (key == "port") {
        cfg.port = parse_int(key, v, 0, 65535);
    } else if (key == "token") {
        cfg.token = v;
    } else if (key == "data_dir") {
        cfg.data_dir = v;
    } else if (key == "flush_window") {
        cfg.flush_window = parse_duration(key, v);
    } else if (key == "clock") {
        if (v == "system") {
            cfg.clock = ClockMode::System;
        } else if (v == "simulated") {
            cfg.clock = ClockMode::Simulated;
        } else {
            bad(key, v, "expected system or simulated");
        }
    } else if (key == "simulated_start") {
        auto t = parse_iso8601(v);
        if (!t) bad(key, v, "expected an ISO 8601 timestamp");
        cfg.simulated_start = *t;
    } else if (key == "tick_interval") {
        cfg.tick_interval = parse_duration(key, v);
    } else if (key == "default_frequency") {
        cfg.default_frequency = parse_duration(key, v);
    } else if (key == "validation_window") {
        cfg.validation_window = parse_duration(key, v);
    } else if (key == "vocabulary_version") {
        cfg.vocabulary_version = v;
    } else if (key == "gamer_type_precedence") {
        cfg.gamer_type_precedence.clear();
        std::stringstream ss(v);
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (!trim(item).empty()) cfg.gamer_type_precedence.push_back(trim(item));
        }
        if (cfg.gamer_type_precedence.empty()) bad(key, v, "needs at least one gamer type");
    } else if (key == "require_registered_sensors") {
        cfg.require_registered_sensors = parse_bool(key, v);
    } else if (key == "threads") {
        cfg.threads = parse_int(key, v, 1, 256);
    } else if (key == "log_level") {
        log_level_from_string(v);
        cfg.log_level = v;
    } else {
        fail(ErrorCode::InvalidConfig, "unknown setting '" + key + "'");
    }
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
    std::map<std::string, std::string> out;
    std::stringstream ss(text);
    std::string line;
    int n = 0;
    while (std::getline(ss, line)) {
        ++n;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            fail(ErrorCode::InvalidConfig, "line " + std::to_string(n) + ": expected key = value");
        }
        out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return out;
}

PlatformConfig load_config(const std::optional<std::filesystem::path>& file,
                           const std::map<std::string, std::string>& env) {
    PlatformConfig cfg;
    if (file) {
        std::ifstream in(*file);
        if (!in) fail(ErrorCode::InvalidConfig, "cannot read config file " + file->string());
        std::stringstream buf;
        buf << in.rdbuf();
        for (const auto& [k, v] : parse_key_values(buf.str())) apply_setting(cfg, k, v);
    }
    for (const auto& key : config_keys()) {
        std::string name = "ENTROPY_" + key;
        std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::toupper(c); });
        if (auto it = env.find(name); it != env.end()) apply_setting(cfg, key, it->second);
    }
    return cfg;
}

std::map<std::string, std::string> process_environment() {
    std::map<std::string, std::string> out;
    for (char** e = environ; e && *e; ++e) {
        std::string_view kv(*e);
        if (kv.rfind("ENTROPY_", 0) != 0) continue;
        const auto eq = kv.find('=');
        if (eq == std::string_view::npos) continue;
        out.emplace(std::string(kv.substr(0, eq)), std::string(kv.substr(eq + 1)));
    }
    return out;
}

json to_json(const PlatformConfig& cfg, bool redact_token) {
    return json{{"host", cfg.host},
                {"port", cfg.port},
                {"token", redact_token ? (cfg.token.empty() ? "" : "***") : cfg.token},
                {"data_dir", cfg.data_dir},
                {"flush_window", format_iso_duration(cfg.flush_window)},
                {"clock", cfg.clock == ClockMode::System ? "system" : "simulated"},
                {"simulated_start", format_iso8601(cfg.simulated_start)},
                {"tick_interval", format_iso_duration(cfg.tick_interval)},
                {"default_frequency", format_iso_duration(cfg.default_frequency)},
                {"validation_window", format_iso_duration(cfg.validation_window)},
                {"vocabulary_version", cfg.vocabulary_version},
                {"gamer_type_precedence", cfg.gamer_type_precedence},
                {"require_registered_sensors", cfg.require_registered_sensors},
                {"threads", cfg.threads},
                {"log_level", cfg.log_level}};
}

LogLevel log_level_from_string(std::string_view s) {
    for (auto l : {LogLevel::Debug, LogLevel::Info, LogLevel::Warn, LogLevel::Error}) {
        if (to_string(l) == s) return l;
    }
    fail(ErrorCode::InvalidConfig, "unknown log level '" + std::string(s) + "'");
}

void Logger::log(LogLevel level, std::string_view msg, json fields) {
    if (level < min_) return;
    const auto now = std::chrono::time_point_cast<Duration>(std::chrono::system_clock::now());
    json line{{"ts", format_iso8601(now)}, {"level", to_string(level)}, {"msg", msg}};
    if (fields.is_object()) {
        for (auto& [k, v] : fields.items()) line[k] = std::move(v);
    }
    std::lock_guard lock(mu_);
    out_ << line.dump() << '\n';
    out_.flush();
}

} // namespace entropy::platform
