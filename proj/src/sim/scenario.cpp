#include "entropy/sim/scenario.hpp"

#include "entropy/core/error.hpp"
#include "entropy/stream/outlier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

namespace entropy::sim {

namespace {

constexpr SensorKind kAllKinds[] = {SensorKind::Co2,    SensorKind::Temperature, SensorKind::Humidity,
                                    SensorKind::Energy, SensorKind::Door,        SensorKind::Presence};

constexpr double kMsPerHour = 3'600'000.0;
constexpr std::int64_t kMsPerDay = 86'400'000;

[[noreturn]] void invalid(const std::string& what) { fail(ErrorCode::InvalidSpec, what); }

double hours(Duration d) { return static_cast<double>(d.count()) / kMsPerHour; }

/// ISO duration relative to start, or an absolute timestamp.
TimePoint spec_time(const json& j, TimePoint start) {
    if (j.is_string()) {
        if (auto d = parse_iso_duration(j.get<std::string>())) return start + *d;
    }
    return time_from_json(j);
}

std::vector<Interval> intervals_from(const json& j, TimePoint start, const std::string& what) {
    std::vector<Interval> out;
    for (const auto& item : j) {
        Interval iv{spec_time(item.at("from"), start), spec_time(item.at("to"), start)};
        if (!(iv.from < iv.to)) invalid(what + ": interval must have from < to");
        out.push_back(iv);
    }
    return out;
}

json intervals_to_json(const std::vector<Interval>& ivs) {
    json out = json::array();
    for (const auto& iv : ivs) out.push_back({{"from", format_iso8601(iv.from)}, {"to", format_iso8601(iv.to)}});
    return out;
}

SignalModel signal_from(const json& j, SignalModel m) {
    m.baseline = j.value("baseline", m.baseline);
    m.amplitude = j.value("amplitude", m.amplitude);
    if (j.contains("peak")) m.peak = duration_from_json(j.at("peak"));
    m.sigma = j.value("sigma", m.sigma);
    if (m.sigma < 0) invalid("signal sigma must be non-negative");
    return m;
}

json signal_to_json(const SignalModel& m) {
    return {{"baseline", m.baseline}, {"amplitude", m.amplitude}, {"peak", format_iso_duration(m.peak)}, {"sigma", m.sigma}};
}

/// cos(2*pi*(time_of_day - peak)/24h): 1 at the peak hour.
double diurnal(TimePoint t, Duration peak) {
    const std::int64_t tod = ((to_epoch_ms(t) - peak.count()) % kMsPerDay + kMsPerDay) % kMsPerDay;
    return std::cos(2 * std::numbers::pi * static_cast<double>(tod) / static_cast<double>(kMsPerDay));
}

/// Reported steps per unit.
double steps_per_unit(SensorKind k) {
    switch (k) {
    case SensorKind::Co2: return 10.0;
    case SensorKind::Temperature:
    case SensorKind::Humidity: return 100.0;
    case SensorKind::Energy: return 1e6;
    default: return 1.0;
    }
}

double round_to(double x, double per_unit) { return std::round(x * per_unit) / per_unit; }

bool door_open_at(const SpaceSpec& space, TimePoint t) {
    return std::any_of(space.door_open.begin(), space.door_open.end(), [&](const Interval& iv) { return iv.contains(t); });
}

struct Segment {
    TimePoint from, to;
    double asymptote;
    Duration tau;
};

/// Piecewise-constant regimes of the CO2 model over [spec.start, until].
std::vector<Segment> co2_segments(const ScenarioSpec& spec, const SpaceSpec& space, TimePoint until) {
    std::set<TimePoint> cuts{spec.start, until};
    for (const auto& iv : space.door_open) cuts.insert({iv.from, iv.to});
    for (const auto& o : spec.occupants) {
        if (o.space != space.id) continue;
        for (const auto& iv : o.presence) cuts.insert({iv.from, iv.to});
    }
    std::vector<Segment> out;
    for (auto it = cuts.begin(); it != cuts.end() && std::next(it) != cuts.end(); ++it) {
        if (*it < spec.start || *std::next(it) > until) continue;
        const TimePoint a = *it;
        const Duration tau = door_open_at(space, a) ? space.co2.tau_open : space.co2.tau_closed;
        const double rate = space.co2.per_person * occupants_at(spec, space.id, a) / space.area;
        out.push_back({a, *std::next(it), space.co2.outdoor + rate * hours(tau), tau});
    }
    return out;
}

double relax(double c0, const Segment& s, TimePoint t) {
    return s.asymptote + (c0 - s.asymptote) * std::exp(-hours(t - s.from) / hours(s.tau));
}

} // namespace

std::string_view to_string(SensorKind k) {
    switch (k) {
    case SensorKind::Co2: return "co2";
    case SensorKind::Temperature: return "temperature";
    case SensorKind::Humidity: return "humidity";
    case SensorKind::Energy: return "energy";
    case SensorKind::Door: return "door";
    case SensorKind::Presence: return "presence";
    }
    return "co2";
}

SensorKind sensor_kind_from_string(std::string_view s) {
    for (auto k : kAllKinds) {
        if (to_string(k) == s) return k;
    }
    invalid("unknown sensor kind '" + std::string(s) + "'");
}

std::string_view attribute_of(SensorKind k) { return k == SensorKind::Door ? "open" : to_string(k); }

std::string_view unit_of(SensorKind k) {
    switch (k) {
    case SensorKind::Co2: return "ppm";
    case SensorKind::Temperature: return "Cel";
    case SensorKind::Humidity: return "%";
    case SensorKind::Energy: return "kWh";
    default: return "";
    }
}

bool is_continuous(SensorKind k) { return k != SensorKind::Door && k != SensorKind::Presence; }

std::string sensor_id(SensorKind kind, const std::string& space) { return std::string(to_string(kind)) + "-" + space; }

ScenarioSpec scenario_from_json(const json& j) {
    if (!j.is_object()) invalid("scenario must be a JSON object");
    ScenarioSpec s;
    try {
        s.seed = j.value("seed", s.seed);
        s.start = time_from_json(j.at("start"));
        if (j.contains("duration")) s.duration = duration_from_json(j.at("duration"));
        if (j.contains("sample_interval")) s.sample_interval = duration_from_json(j.at("sample_interval"));
        if (s.duration <= Duration::zero() || s.sample_interval <= Duration::zero()) {
            invalid("duration and sample_interval must be positive");
        }
        if (s.sample_interval > s.duration) invalid("sample_interval exceeds duration");

        std::set<std::string> ids;
        for (const auto& sj : j.at("spaces")) {
            SpaceSpec sp;
            sp.id = sj.at("id").get<std::string>();
            if (sp.id.empty() || !ids.insert(sp.id).second) invalid("space ids must be non-empty and unique");
            sp.entity_type = sj.value("type", sp.entity_type);
            sp.area = sj.value("area", sp.area);
            if (!(sp.area > 0)) invalid("space '" + sp.id + "': area must be positive");
            std::set<SensorKind> seen;
            for (const auto& k : sj.at("sensors")) {
                const auto kind = sensor_kind_from_string(k.get<std::string>());
                if (!seen.insert(kind).second) invalid("space '" + sp.id + "': duplicate sensor kind");
                sp.sensors.push_back(kind);
            }
            if (sj.contains("co2")) {
                const auto& c = sj.at("co2");
                sp.co2.outdoor = c.value("outdoor", sp.co2.outdoor);
                sp.co2.initial = c.value("initial", sp.co2.outdoor);
                sp.co2.per_person = c.value("per_person", sp.co2.per_person);
                if (c.contains("tau_closed")) sp.co2.tau_closed = duration_from_json(c.at("tau_closed"));
                if (c.contains("tau_open")) sp.co2.tau_open = duration_from_json(c.at("tau_open"));
                sp.co2.sigma = c.value("sigma", sp.co2.sigma);
                if (sp.co2.tau_closed <= Duration::zero() || sp.co2.tau_open <= Duration::zero() || sp.co2.sigma < 0) {
                    invalid("space '" + sp.id + "': CO2 time constants must be positive and sigma non-negative");
                }
            }
            if (sj.contains("temperature")) sp.temperature = signal_from(sj.at("temperature"), sp.temperature);
            if (sj.contains("humidity")) sp.humidity = signal_from(sj.at("humidity"), sp.humidity);
            if (sj.contains("energy")) {
                const auto& e = sj.at("energy");
                sp.energy.base_kw = e.value("base_kw", sp.energy.base_kw);
                sp.energy.per_person_kw = e.value("per_person_kw", sp.energy.per_person_kw);
                sp.energy.amplitude_kw = e.value("amplitude_kw", sp.energy.amplitude_kw);
                if (e.contains("peak")) sp.energy.peak = duration_from_json(e.at("peak"));
                sp.energy.sigma = e.value("sigma", sp.energy.sigma);
                if (sp.energy.sigma < 0) invalid("space '" + sp.id + "': energy sigma must be non-negative");
            }
            if (sj.contains("door_open")) sp.door_open = intervals_from(sj.at("door_open"), s.start, "door_open");
            s.spaces.push_back(std::move(sp));
        }
        if (s.spaces.empty()) invalid("at least one space is required");

        std::set<std::string> occupant_ids;
        for (const auto& oj : j.value("occupants", json::array())) {
            OccupantSpec o;
            o.id = oj.at("id").get<std::string>();
            if (o.id.empty() || !occupant_ids.insert(o.id).second) invalid("occupant ids must be non-empty and unique");
            o.gamer_type = oj.value("gamer_type", std::string{});
            o.space = oj.at("space").get<std::string>();
            if (!ids.contains(o.space)) invalid("occupant '" + o.id + "' names unknown space '" + o.space + "'");
            if (oj.contains("presence")) o.presence = intervals_from(oj.at("presence"), s.start, "presence");
            if (oj.contains("acceptance")) o.acceptance = oj.at("acceptance").get<double>();
            s.occupants.push_back(std::move(o));
        }

        if (j.contains("outliers")) {
            const auto& oj = j.at("outliers");
            s.outliers.rate = oj.value("rate", s.outliers.rate);
            s.outliers.spike_min = oj.value("spike_min", s.outliers.spike_min);
            s.outliers.spike_max = oj.value("spike_max", s.outliers.spike_max);
            s.outliers.range_fraction = oj.value("range_fraction", s.outliers.range_fraction);
            s.outliers.warmup = oj.value("warmup", s.outliers.warmup);
        }
        const auto& o = s.outliers;
        if (o.rate < 0 || o.rate > 1 || o.range_fraction < 0 || o.range_fraction > 1) {
            invalid("outlier rate and range_fraction must lie in [0, 1]");
        }
        if (!(o.spike_min > 1) || o.spike_max < o.spike_min) invalid("spike factors need 1 < spike_min <= spike_max");

        if (j.contains("condition")) {
            const auto& c = j.at("condition");
            s.condition.threshold = c.value("threshold", s.condition.threshold);
            if (c.contains("frequency")) s.condition.frequency = duration_from_json(c.at("frequency"));
            if (c.contains("cooldown")) s.condition.cooldown = duration_from_json(c.at("cooldown"));
            if (s.condition.frequency <= Duration::zero() || s.condition.cooldown < Duration::zero()) {
                invalid("condition frequency must be positive");
            }
        }
        s.acceptance = j.value("acceptance", s.acceptance);
        for (const auto& [type, p] : s.acceptance) {
            if (p < 0 || p > 1) invalid("acceptance for '" + type + "' must lie in [0, 1]");
        }
        for (const auto& occ : s.occupants) {
            if (occ.acceptance && (*occ.acceptance < 0 || *occ.acceptance > 1)) invalid("acceptance must lie in [0, 1]");
        }
        if (j.contains("speed") && !j.at("speed").is_null()) {
            const auto& sp = j.at("speed");
            if (sp.is_string() && sp.get<std::string>() == "max") {
                s.speed.reset();
            } else {
                s.speed = sp.get<double>();
                if (!(*s.speed > 0)) invalid("speed must be positive or \"max\"");
            }
        }
    } catch (const json::exception& e) {
        invalid(std::string("malformed scenario: ") + e.what());
    } catch (const Error& e) {
        if (e.code() == ErrorCode::InvalidSpec) throw;
        invalid(e.what());
    }
    return s;
}

json to_json(const ScenarioSpec& s) {
    json spaces = json::array();
    for (const auto& sp : s.spaces) {
        json sensors = json::array();
        for (auto k : sp.sensors) sensors.push_back(to_string(k));
        spaces.push_back({{"id", sp.id},
                          {"type", sp.entity_type},
                          {"area", sp.area},
                          {"sensors", sensors},
                          {"co2",
                           {{"outdoor", sp.co2.outdoor},
                            {"initial", sp.co2.initial},
                            {"per_person", sp.co2.per_person},
                            {"tau_closed", format_iso_duration(sp.co2.tau_closed)},
                            {"tau_open", format_iso_duration(sp.co2.tau_open)},
                            {"sigma", sp.co2.sigma}}},
                          {"temperature", signal_to_json(sp.temperature)},
                          {"humidity", signal_to_json(sp.humidity)},
                          {"energy",
                           {{"base_kw", sp.energy.base_kw},
                            {"per_person_kw", sp.energy.per_person_kw},
                            {"amplitude_kw", sp.energy.amplitude_kw},
                            {"peak", format_iso_duration(sp.energy.peak)},
                            {"sigma", sp.energy.sigma}}},
                          {"door_open", intervals_to_json(sp.door_open)}});
    }
    json occupants = json::array();
    for (const auto& o : s.occupants) {
        json oj{{"id", o.id}, {"gamer_type", o.gamer_type}, {"space", o.space}, {"presence", intervals_to_json(o.presence)}};
        if (o.acceptance) oj["acceptance"] = *o.acceptance;
        occupants.push_back(std::move(oj));
    }
    return {{"seed", s.seed},
            {"start", format_iso8601(s.start)},
            {"duration", format_iso_duration(s.duration)},
            {"sample_interval", format_iso_duration(s.sample_interval)},
            {"spaces", spaces},
            {"occupants", occupants},
            {"outliers",
             {{"rate", s.outliers.rate},
              {"spike_min", s.outliers.spike_min},
              {"spike_max", s.outliers.spike_max},
              {"range_fraction", s.outliers.range_fraction},
              {"warmup", s.outliers.warmup}}},
            {"condition",
             {{"threshold", s.condition.threshold},
              {"frequency", format_iso_duration(s.condition.frequency)},
              {"cooldown", format_iso_duration(s.condition.cooldown)}}},
            {"acceptance", s.acceptance},
            {"speed", s.speed ? json(*s.speed) : json("max")}};
}

json to_json(const GroundTruth& g) {
    json outliers = json::array();
    for (const auto& o : g.outliers) {
        json oj{{"index", o.index},         {"sensor_id", o.sensor_id}, {"attribute", o.attribute},
                {"observed_at", to_epoch_ms(o.at)}, {"value", o.value},   {"clean_value", o.clean_value},
                {"kind", o.kind}};
        if (o.factor) oj["factor"] = *o.factor;
        outliers.push_back(std::move(oj));
    }
    json crossings = json::array();
    for (const auto& c : g.crossings) {
        crossings.push_back({{"space", c.space}, {"at", format_iso8601(c.at)}, {"direction", c.upward ? "up" : "down"}});
    }
    json firings = json::array();
    for (const auto& f : g.firings) {
        firings.push_back({{"space", f.space}, {"sensor_id", f.sensor_id}, {"at", format_iso8601(f.at)}, {"value", f.value}});
    }
    return {{"samples", g.samples}, {"per_sensor", g.per_sensor}, {"outliers", outliers},
            {"crossings", crossings}, {"firings", firings}};
}

GroundTruth ground_truth_from_json(const json& j) {
    GroundTruth g;
    g.samples = j.at("samples").get<std::size_t>();
    g.per_sensor = j.at("per_sensor").get<std::map<std::string, std::size_t>>();
    for (const auto& o : j.at("outliers")) {
        InjectedOutlier x;
        x.index = o.at("index").get<std::size_t>();
        x.sensor_id = o.at("sensor_id").get<std::string>();
        x.attribute = o.at("attribute").get<std::string>();
        x.at = time_from_json(o.at("observed_at"));
        x.value = o.at("value").get<double>();
        x.clean_value = o.at("clean_value").get<double>();
        x.kind = o.at("kind").get<std::string>();
        if (o.contains("factor")) x.factor = o.at("factor").get<double>();
        g.outliers.push_back(std::move(x));
    }
    for (const auto& c : j.at("crossings")) {
        g.crossings.push_back({c.at("space").get<std::string>(), time_from_json(c.at("at")), c.at("direction") == "up"});
    }
    for (const auto& f : j.at("firings")) {
        g.firings.push_back({f.at("space").get<std::string>(), f.at("sensor_id").get<std::string>(),
                             time_from_json(f.at("at")), f.at("value").get<double>()});
    }
    return g;
}

int occupants_at(const ScenarioSpec& spec, const std::string& space, TimePoint t) {
    int n = 0;
    for (const auto& o : spec.occupants) {
        if (o.space != space) continue;
        if (std::any_of(o.presence.begin(), o.presence.end(), [&](const Interval& iv) { return iv.contains(t); })) ++n;
    }
    return n;
}

double co2_at(const ScenarioSpec& spec, const SpaceSpec& space, TimePoint t) {
    double c = space.co2.initial;
    if (t <= spec.start) return c;
    for (const auto& seg : co2_segments(spec, space, t)) c = relax(c, seg, seg.to);
    return c;
}

Bundle generate(const ScenarioSpec& spec) {
    Bundle b;
    b.spec = spec;
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const TimePoint end = spec.start + spec.duration;

    for (const auto& sp : spec.spaces) {
        broker::EntityRecord room;
        room.id = sp.id;
        room.entity_type = sp.entity_type;
        room.attributes["area"] = {Scalar{sp.area}, "m2", spec.start, Quality::Raw};
        b.entities.push_back(room);
        for (auto kind : sp.sensors) {
            broker::EntityRecord e;
            e.id = sensor_id(kind, sp.id);
            e.entity_type = kind == SensorKind::Door ? "Door" : "SensorNode";
            e.attributes["location"] = {Scalar{sp.id}, "", spec.start, Quality::Raw};
            b.entities.push_back(e);
        }
    }
    for (const auto& o : spec.occupants) {
        json u{{"user_id", o.id}, {"activity_locations", {o.space}}};
        if (!o.gamer_type.empty()) u["gamer_type"] = o.gamer_type;
        b.users.push_back(std::move(u));
    }

    std::map<std::string, std::size_t> series_index;
    std::vector<double> co2(spec.spaces.size());
    std::vector<std::vector<Segment>> segments;
    std::vector<std::size_t> seg_pos(spec.spaces.size(), 0);
    for (std::size_t i = 0; i < spec.spaces.size(); ++i) {
        co2[i] = spec.spaces[i].co2.initial;
        segments.push_back(co2_segments(spec, spec.spaces[i], end));
    }
    const double interval_h = hours(spec.sample_interval);

    for (TimePoint t = spec.start; t < end; t += spec.sample_interval) {
        for (std::size_t si = 0; si < spec.spaces.size(); ++si) {
            const auto& sp = spec.spaces[si];
            // Advance the CO2 state to t across regime boundaries.
            auto& pos = seg_pos[si];
            const auto& segs = segments[si];
            double c = co2[si];
            TimePoint at = pos < segs.size() ? std::max(segs[pos].from, t - spec.sample_interval) : t;
            if (t == spec.start) at = t;
            while (pos < segs.size() && segs[pos].to <= t) {
                c = relax(c, {at, segs[pos].to, segs[pos].asymptote, segs[pos].tau}, segs[pos].to);
                at = segs[pos].to;
                ++pos;
            }
            if (pos < segs.size()) c = relax(c, {at, t, segs[pos].asymptote, segs[pos].tau}, t);
            co2[si] = c;
            const int n = occupants_at(spec, sp.id, t);

            for (auto kind : sp.sensors) {
                const double noise = gauss(rng);
                const double u_inject = unit(rng);
                const double u_kind = unit(rng);
                const double u_mag = unit(rng);
                const double u_side = unit(rng);
                double v = 0.0;
                switch (kind) {
                case SensorKind::Co2: v = c + sp.co2.sigma * noise; break;
                case SensorKind::Temperature:
                    v = sp.temperature.baseline + sp.temperature.amplitude * diurnal(t, sp.temperature.peak) +
                        sp.temperature.sigma * noise;
                    break;
                case SensorKind::Humidity:
                    v = std::clamp(sp.humidity.baseline + sp.humidity.amplitude * diurnal(t, sp.humidity.peak) +
                                       sp.humidity.sigma * noise,
                                   0.0, 100.0);
                    break;
                case SensorKind::Energy: {
                    const double kw = sp.energy.base_kw + sp.energy.per_person_kw * n +
                                      sp.energy.amplitude_kw * diurnal(t, sp.energy.peak);
                    v = std::max(0.0, kw * interval_h + sp.energy.sigma * noise);
                    break;
                }
                case SensorKind::Door: v = door_open_at(sp, t) ? 1.0 : 0.0; break;
                case SensorKind::Presence: v = n > 0 ? 1.0 : 0.0; break;
                }
                v = round_to(v, steps_per_unit(kind));
                const std::string id = sensor_id(kind, sp.id);
                const std::string attr(attribute_of(kind));
                const std::size_t k = series_index[id]++;

                Measurement m{id, attr, v, std::string(unit_of(kind)), t, Quality::Raw};
                if (is_continuous(kind) && k >= spec.outliers.warmup && u_inject < spec.outliers.rate) {
                    InjectedOutlier o;
                    o.index = b.trace.size();
                    o.sensor_id = id;
                    o.attribute = attr;
                    o.at = t;
                    o.clean_value = v;
                    if (u_kind < spec.outliers.range_fraction || v == 0.0) {
                        const auto policy = stream::default_policy_for(attr);
                        const double span = policy.hi - policy.lo;
                        const double off = span * (0.01 + 0.49 * u_mag);
                        m.value = round_to(u_side < 0.5 ? policy.lo - off : policy.hi + off, steps_per_unit(kind));
                        o.kind = "range";
                    } else {
                        o.factor = spec.outliers.spike_min + (spec.outliers.spike_max - spec.outliers.spike_min) * u_mag;
                        m.value = round_to(v * *o.factor, steps_per_unit(kind));
                        o.kind = "spike";
                    }
                    o.value = m.value;
                    b.truth.outliers.push_back(std::move(o));
                }
                b.trace.push_back(std::move(m));
            }
        }
    }
    b.truth.samples = b.trace.size();
    b.truth.per_sensor = series_index;

    // Model crossings of the threshold, solved per regime.
    const double thr = spec.condition.threshold;
    for (std::size_t si = 0; si < spec.spaces.size(); ++si) {
        const auto& sp = spec.spaces[si];
        if (std::find(sp.sensors.begin(), sp.sensors.end(), SensorKind::Co2) == sp.sensors.end()) continue;
        double c = sp.co2.initial;
        for (const auto& seg : segments[si]) {
            const double c1 = relax(c, seg, seg.to);
            if ((c < thr) != (c1 < thr) && seg.asymptote != thr) {
                const double dt_h = hours(seg.tau) * std::log((c - seg.asymptote) / (thr - seg.asymptote));
                const auto at = seg.from + Duration{static_cast<std::int64_t>(std::llround(dt_h * kMsPerHour))};
                b.truth.crossings.push_back({sp.id, at, c1 >= thr});
            }
            c = c1;
        }
    }

    // Expected firings: LastValue ticks over the emitted non-outlier CO2 samples.
    std::set<std::size_t> outlier_idx;
    for (const auto& o : b.truth.outliers) outlier_idx.insert(o.index);
    for (const auto& sp : spec.spaces) {
        const std::string id = sensor_id(SensorKind::Co2, sp.id);
        std::vector<std::pair<TimePoint, double>> clean;
        for (std::size_t i = 0; i < b.trace.size(); ++i) {
            if (b.trace[i].sensor_id == id && !outlier_idx.contains(i)) clean.emplace_back(b.trace[i].observed_at, b.trace[i].value);
        }
        if (clean.empty()) continue;
        std::optional<TimePoint> last_fired;
        std::size_t next = 0;
        std::optional<std::pair<TimePoint, double>> last;
        for (TimePoint tick = spec.start + spec.condition.frequency; tick <= end; tick += spec.condition.frequency) {
            while (next < clean.size() && clean[next].first <= tick) last = clean[next++];
            if (!last || tick - last->first > 2 * spec.condition.frequency) continue;
            if (last->second > thr && (!last_fired || tick - *last_fired >= spec.condition.cooldown)) {
                b.truth.firings.push_back({sp.id, id, tick, last->second});
                last_fired = tick;
            }
        }
    }
    return b;
}

void write_bundle(const Bundle& b, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const auto write = [&](const std::string& name, const std::string& text) {
        std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorCode::InvalidSpec, "cannot write " + (dir / name).string());
        out << text;
    };
    write("scenario.json", to_json(b.spec).dump(2) + "\n");
    write("entities.json", json(b.entities).dump(2) + "\n");
    write("users.json", b.users.dump(2) + "\n");
    write("ground_truth.json", to_json(b.truth).dump(2) + "\n");
    std::string trace;
    for (const auto& m : b.trace) {
        json line = m;
        line.erase("quality");
        trace += line.dump();
        trace += '\n';
    }
    write("trace.jsonl", trace);
}

Bundle read_bundle(const std::filesystem::path& dir) {
    const auto read = [&](const std::string& name) {
        std::ifstream in(dir / name, std::ios::binary);
        if (!in) invalid("bundle file missing: " + (dir / name).string());
        std::stringstream buf;
        buf << in.rdbuf();
        return buf.str();
    };
    Bundle b;
    try {
        b.spec = scenario_from_json(json::parse(read("scenario.json")));
        for (const auto& e : json::parse(read("entities.json"))) b.entities.push_back(e.get<broker::EntityRecord>());
        b.users = json::parse(read("users.json"));
        b.truth = ground_truth_from_json(json::parse(read("ground_truth.json")));
        std::istringstream trace(read("trace.jsonl"));
        std::string line;
        while (std::getline(trace, line)) {
            if (!line.empty()) b.trace.push_back(json::parse(line).get<Measurement>());
        }
    } catch (const json::exception& e) {
        invalid(std::string("malformed bundle: ") + e.what());
    }
    if (b.trace.size() != b.truth.samples) invalid("trace length disagrees with ground truth");
    return b;
}

} // namespace entropy::sim
