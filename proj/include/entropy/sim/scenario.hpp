#pragma once

#include "entropy/broker/context_broker.hpp"
#include "entropy/core/types.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace entropy::sim {

enum class SensorKind { Co2, Temperature, Humidity, Energy, Door, Presence };

std::string_view to_string(SensorKind k);
SensorKind sensor_kind_from_string(std::string_view s);
/// Measurement attribute and unit reported by a sensor kind.
std::string_view attribute_of(SensorKind k);
std::string_view unit_of(SensorKind k);
/// Door and presence report 0/1 and never carry injected outliers.
bool is_continuous(SensorKind k);

/// Half-open interval [from, to).
struct Interval {
    TimePoint from{}, to{};

    bool contains(TimePoint t) const { return t >= from && t < to; }
};

/// baseline + amplitude * sin(2*pi*(t - peak)/24h + pi/2) + N(0, sigma)
struct SignalModel {
    double baseline = 0.0;
    double amplitude = 0.0;
    Duration peak = std::chrono::hours(15);
    double sigma = 0.0;
};

/// Piecewise first-order model: in each segment C(t) = A + (C0 - A) exp(-dt/tau),
/// A = outdoor + rate * tau, rate = per_person * occupants / area (ppm per hour).
struct Co2Model {
    double outdoor = 420.0;
    double initial = 420.0;
    /// ppm per hour per person per square metre.
    double per_person = 1500.0;
    Duration tau_closed = std::chrono::hours(4);
    Duration tau_open = std::chrono::minutes(15);
    double sigma = 10.0;
};

/// Power drawn in kW; the meter reports energy per sample interval in kWh.
struct EnergyModel {
    double base_kw = 0.3;
    double per_person_kw = 0.1;
    double amplitude_kw = 0.05;
    Duration peak = std::chrono::hours(15);
    /// kWh per sample.
    double sigma = 0.001;
};

struct SpaceSpec {
    std::string id;
    std::string entity_type = "Room";
    double area = 20.0;
    std::vector<SensorKind> sensors;
    Co2Model co2;
    SignalModel temperature{21.0, 1.5, std::chrono::hours(15), 0.1};
    SignalModel humidity{45.0, 5.0, std::chrono::hours(5), 0.5};
    EnergyModel energy;
    std::vector<Interval> door_open;
};

struct OccupantSpec {
    std::string id;
    std::string gamer_type;
    std::string space;
    std::vector<Interval> presence;
    /// Probability of accepting a delivered recommendation.
    std::optional<double> acceptance;
};

struct OutlierSpec {
    /// Per-sample injection probability on continuous sensors.
    double rate = 0.0;
    double spike_min = 5.0;
    double spike_max = 20.0;
    /// Share of injections that are plausible-range violations instead of spikes.
    double range_fraction = 0.5;
    /// Leading samples per series kept clean.
    std::size_t warmup = 20;
};

struct ConditionModel {
    double threshold = 1000.0;
    Duration frequency = std::chrono::hours(1);
    Duration cooldown = std::chrono::hours(1);
};

struct ScenarioSpec {
    std::uint64_t seed = 42;
    TimePoint start{};
    Duration duration = std::chrono::hours(24);
    Duration sample_interval = std::chrono::minutes(1);
    std::vector<SpaceSpec> spaces;
    std::vector<OccupantSpec> occupants;
    OutlierSpec outliers;
    ConditionModel condition;
    /// Default acceptance per gamer type; an occupant's own value wins.
    std::map<std::string, double> acceptance;
    /// Wall-clock pacing multiplier for replay; absent means as fast as possible.
    std::optional<double> speed;
};

/// Times in the spec are ISO 8601 timestamps or ISO durations relative to start. Raises invalid-spec.
ScenarioSpec scenario_from_json(const json& j);
json to_json(const ScenarioSpec& s);

std::string sensor_id(SensorKind kind, const std::string& space);

struct InjectedOutlier {
    std::size_t index = 0;
    std::string sensor_id;
    std::string attribute;
    TimePoint at{};
    double value = 0.0;
    double clean_value = 0.0;
    /// "spike" or "range".
    std::string kind;
    std::optional<double> factor;
};

struct Crossing {
    std::string space;
    TimePoint at{};
    bool upward = true;
};

struct Firing {
    std::string space;
    std::string sensor_id;
    TimePoint at{};
    double value = 0.0;
};

struct GroundTruth {
    std::size_t samples = 0;
    std::map<std::string, std::size_t> per_sensor;
    std::vector<InjectedOutlier> outliers;
    /// Noise-free model crossings of the condition threshold.
    std::vector<Crossing> crossings;
    /// Hourly LastValue ticks over the emitted non-outlier CO2 trace with Level trigger and cooldown.
    std::vector<Firing> firings;
};

json to_json(const GroundTruth& g);
GroundTruth ground_truth_from_json(const json& j);

struct Bundle {
    ScenarioSpec spec;
    /// Sorted by observed_at, then by sensor order within the spec.
    std::vector<Measurement> trace;
    std::vector<broker::EntityRecord> entities;
    /// UserProfile JSON bodies.
    json users = json::array();
    GroundTruth truth;
};

/// Noise-free CO2 concentration of a space at t.
double co2_at(const ScenarioSpec& spec, const SpaceSpec& space, TimePoint t);
/// Occupants present in a space at t.
int occupants_at(const ScenarioSpec& spec, const std::string& space, TimePoint t);

/// Deterministic in the spec, seed included.
Bundle generate(const ScenarioSpec& spec);

/// Writes scenario.json, entities.json, users.json, trace.jsonl and ground_truth.json.
void write_bundle(const Bundle& b, const std::filesystem::path& dir);
/// Raises invalid-spec for a missing or malformed bundle.
Bundle read_bundle(const std::filesystem::path& dir);

} // namespace entropy::sim
