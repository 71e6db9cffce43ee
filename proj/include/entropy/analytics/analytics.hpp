#pragma once

#include "entropy/analytics/kmeans.hpp"
#include "entropy/analytics/query.hpp"
#include "entropy/broker/context_broker.hpp"
#include "entropy/fusion/document_store.hpp"
#include "entropy/fusion/mapping.hpp"
#include "entropy/recommender/recommender.hpp"
#include "entropy/tsdb/timeseries_store.hpp"

#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace entropy::analytics {

enum class Algorithm { KMeans, SummaryStats };

std::string_view to_string(Algorithm a);
Algorithm algorithm_from_string(std::string_view s);

enum class OptionType { Integer, Number, String, Boolean, Time };

struct OptionSpec {
    std::string name;
    OptionType type = OptionType::Number;
    /// Null means the option is optional and unset by default.
    json default_value;
    std::optional<double> min;
    std::optional<double> max;
};

struct AnalysisTemplate {
    std::string id;
    Algorithm algorithm = Algorithm::SummaryStats;
    std::vector<OptionSpec> schema;
    /// Series inputs may omit the range; "from"/"to" options then supply it.
    QueryAst input;
};

void to_json(json& j, const AnalysisTemplate& t);
/// Unknown algorithm or option type raises invalid-config; the input query follows parse_query.
AnalysisTemplate template_from_json(const json& j);

/// Defaults merged with overrides. Unknown keys, wrong types and out-of-range values raise invalid-config.
json validate_config(const std::vector<OptionSpec>& schema, const json& overrides);

struct AnalysisResult {
    /// "analysis-" + FNV-1a 64 over (template, config, input, data).
    std::string id;
    std::string template_id;
    Algorithm algorithm = Algorithm::SummaryStats;
    json config;
    json input_query;
    json data;
    TimePoint computed_at{};

    bool operator==(const AnalysisResult&) const = default;
};

void to_json(json& j, const AnalysisResult& r);

struct SummaryStats {
    std::size_t count = 0;
    double sum = 0.0;
    /// Unset when count = 0.
    std::optional<double> mean, min, max, stddev;
};

/// Population standard deviation.
SummaryStats summarize(const std::vector<double>& values);
json to_json(const SummaryStats& s);

/// (current - previous) / previous; unset when previous is zero.
std::optional<double> relative_delta(double current, double previous);

/// Sign classification of a consumption change at the +/-2% band: a drop is "positive".
std::string classify_effect(std::optional<double> delta, double band = 0.02);

/// Fixed feature order of behavioural_features.
const std::vector<std::string>& behavioural_feature_names();

std::uint64_t fnv1a64(std::string_view data);

/// Templates shipped by default: "summary-stats" (Series) and "user-segments" (KMeans over Users).
std::vector<AnalysisTemplate> builtin_templates();
std::vector<OptionSpec> default_schema(Algorithm a);

class AnalyticsEngine {
public:
    /// Enricher and document store may be null; results are then kept in memory only.
    AnalyticsEngine(const broker::ContextBroker& broker, const tsdb::TimeSeriesStore& store,
                    const recommender::Recommender& recommender, const Clock& clock,
                    const fusion::Enricher* enricher = nullptr, fusion::DocumentStore* documents = nullptr);

    void register_template(AnalysisTemplate t);
    AnalysisTemplate template_for(const std::string& id) const;
    std::vector<AnalysisTemplate> templates() const;

    QueryResult execute(const QueryAst& q) const;

    AnalysisResult run_template(const std::string& template_id, const json& overrides = json::object());
    AnalysisResult result(const std::string& id) const;
    std::vector<AnalysisResult> results() const;

    /// (received, acceptance rate, validation rate, mean response latency s, consumption delta)
    /// over recommendations delivered in [from, to). Neutral defaults: rates 0, latency = period
    /// length in seconds, delta 0.
    std::vector<double> behavioural_features(const std::string& user_id, TimePoint from, TimePoint to,
                                             const std::string& energy_attribute = "energy") const;

    /// Sum of `attribute` samples in [from, to) over sensors located in any of `spaces`.
    double consumption(const std::set<std::string>& spaces, const std::string& attribute, TimePoint from,
                       TimePoint to) const;
    /// Sensors whose "location" attribute or own id names one of `spaces`.
    std::set<std::string> sensors_in(const std::set<std::string>& spaces) const;

private:
    /// Both resolve period defaults into `config` and `input`.
    json run_summary(json& config, QueryAst& input) const;
    json run_kmeans(json& config, QueryAst& input) const;
    void persist(const AnalysisResult& r) const;

    const broker::ContextBroker& broker_;
    const tsdb::TimeSeriesStore& store_;
    const recommender::Recommender& recommender_;
    const Clock& clock_;
    const fusion::Enricher* enricher_;
    fusion::DocumentStore* documents_;

    mutable std::mutex mu_;
    std::map<std::string, AnalysisTemplate> templates_;
    std::map<std::string, AnalysisResult> results_;
};

} // namespace entropy::analytics
