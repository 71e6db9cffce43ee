#include "entropy/analytics/analytics.hpp"

#include "entropy/core/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace entropy::analytics {

namespace {

constexpr Duration kDefaultPeriod = std::chrono::hours(24 * 7);

std::string_view to_string(OptionType t) {
    switch (t) {
    case OptionType::Integer: return "integer";
    case OptionType::Number: return "number";
    case OptionType::String: return "string";
    case OptionType::Boolean: return "boolean";
    case OptionType::Time: return "time";
    }
    return "number";
}

OptionType option_type_from_string(std::string_view s) {
    for (auto t : {OptionType::Integer, OptionType::Number, OptionType::String, OptionType::Boolean, OptionType::Time}) {
        if (to_string(t) == s) return t;
    }
    fail(ErrorCode::InvalidConfig, "unknown option type '" + std::string(s) + "'");
}

OptionSpec option(std::string name, OptionType type, json def, std::optional<double> min = std::nullopt,
                  std::optional<double> max = std::nullopt) {
    return OptionSpec{std::move(name), type, std::move(def), min, max};
}

json check_value(const OptionSpec& spec, const json& v) {
    const auto bad = [&](const std::string& why) {
        fail(ErrorCode::InvalidConfig, "option '" + spec.name + "' " + why);
    };
    if (v.is_null()) return v;
    json out = v;
    switch (spec.type) {
    case OptionType::Integer:
        if (!v.is_number_integer() && !(v.is_number_float() && std::floor(v.get<double>()) == v.get<double>())) {
            bad("must be an integer");
        }
        out = v.get<std::int64_t>();
        break;
    case OptionType::Number:
        if (!v.is_number() || !std::isfinite(v.get<double>())) bad("must be a finite number");
        break;
    case OptionType::String:
        if (!v.is_string()) bad("must be a string");
        break;
    case OptionType::Boolean:
        if (!v.is_boolean()) bad("must be a boolean");
        break;
    case OptionType::Time:
        try {
            out = format_iso8601(time_from_json(v));
        } catch (const std::exception&) {
            bad("must be epoch milliseconds or an ISO 8601 timestamp");
        }
        break;
    }
    if (v.is_number()) {
        const double x = v.get<double>();
        if (spec.min && x < *spec.min) bad("is below its minimum");
        if (spec.max && x > *spec.max) bad("is above its maximum");
    }
    return out;
}

std::optional<TimePoint> time_option(const json& config, const std::string& name) {
    if (!config.contains(name) || config.at(name).is_null()) return std::nullopt;
    return time_from_json(config.at(name));
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

} // namespace

std::string_view to_string(Algorithm a) { return a == Algorithm::KMeans ? "KMeans" : "SummaryStats"; }

Algorithm algorithm_from_string(std::string_view s) {
    if (s == "KMeans") return Algorithm::KMeans;
    if (s == "SummaryStats") return Algorithm::SummaryStats;
    fail(ErrorCode::InvalidConfig, "unknown algorithm '" + std::string(s) + "'");
}

std::vector<OptionSpec> default_schema(Algorithm a) {
    if (a == Algorithm::KMeans) {
        return {option("k", OptionType::Integer, 3, 1),
                option("seed", OptionType::Integer, 42, 0),
                option("max_iter", OptionType::Integer, 100, 1),
                option("tol", OptionType::Number, 1e-6, 0),
                option("restarts", OptionType::Integer, 1, 1, 100),
                option("from", OptionType::Time, nullptr),
                option("to", OptionType::Time, nullptr),
                option("energy_attribute", OptionType::String, "energy")};
    }
    return {option("from", OptionType::Time, nullptr),
            option("to", OptionType::Time, nullptr),
            option("split_at", OptionType::Time, nullptr),
            option("band", OptionType::Number, 0.02, 0, 1)};
}

void to_json(json& j, const AnalysisTemplate& t) {
    json schema = json::array();
    for (const auto& o : t.schema) {
        json s{{"name", o.name}, {"type", to_string(o.type)}, {"default", o.default_value}};
        if (o.min) s["min"] = *o.min;
        if (o.max) s["max"] = *o.max;
        schema.push_back(std::move(s));
    }
    j = json{{"id", t.id}, {"algorithm", to_string(t.algorithm)}, {"options", std::move(schema)},
             {"input", serialize_query(t.input)}};
}

AnalysisTemplate template_from_json(const json& j) {
    if (!j.is_object()) fail(ErrorCode::InvalidConfig, "template must be an object");
    AnalysisTemplate t;
    try {
        t.id = j.at("id").get<std::string>();
        t.algorithm = algorithm_from_string(j.at("algorithm").get<std::string>());
        if (j.contains("options")) {
            for (const auto& o : j.at("options")) {
                OptionSpec s;
                s.name = o.at("name").get<std::string>();
                s.type = option_type_from_string(o.at("type").get<std::string>());
                s.default_value = o.value("default", json(nullptr));
                if (o.contains("min")) s.min = o.at("min").get<double>();
                if (o.contains("max")) s.max = o.at("max").get<double>();
                s.default_value = check_value(s, s.default_value);
                t.schema.push_back(std::move(s));
            }
        } else {
            t.schema = default_schema(t.algorithm);
        }
    } catch (const json::exception& e) {
        fail(ErrorCode::InvalidConfig, e.what());
    }
    if (t.id.empty()) fail(ErrorCode::InvalidConfig, "template id must be non-empty");
    if (!j.contains("input")) fail(ErrorCode::InvalidConfig, "template needs an input query");
    t.input = parse_query(j.at("input"), false);
    return t;
}

json validate_config(const std::vector<OptionSpec>& schema, const json& overrides) {
    if (!overrides.is_null() && !overrides.is_object()) fail(ErrorCode::InvalidConfig, "config must be an object");
    json merged = json::object();
    for (const auto& s : schema) merged[s.name] = s.default_value;
    if (overrides.is_object()) {
        for (const auto& [key, v] : overrides.items()) {
            auto it = std::find_if(schema.begin(), schema.end(), [&](const auto& s) { return s.name == key; });
            if (it == schema.end()) fail(ErrorCode::InvalidConfig, "unknown option '" + key + "'");
            merged[key] = check_value(*it, v);
        }
    }
    return merged;
}

void to_json(json& j, const AnalysisResult& r) {
    j = json{{"id", r.id},
             {"template", r.template_id},
             {"algorithm", to_string(r.algorithm)},
             {"config", r.config},
             {"input_query", r.input_query},
             {"data", r.data},
             {"computed_at", format_iso8601(r.computed_at)}};
}

SummaryStats summarize(const std::vector<double>& values) {
    SummaryStats s;
    s.count = values.size();
    if (values.empty()) return s;
    double mn = values.front();
    double mx = values.front();
    for (double v : values) {
        s.sum += v;
        mn = std::min(mn, v);
        mx = std::max(mx, v);
    }
    const double mean = s.sum / static_cast<double>(s.count);
    double ss = 0;
    for (double v : values) ss += (v - mean) * (v - mean);
    s.mean = mean;
    s.min = mn;
    s.max = mx;
    s.stddev = std::sqrt(ss / static_cast<double>(s.count));
    return s;
}

json to_json(const SummaryStats& s) {
    const auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    return json{{"count", s.count}, {"sum", s.sum},     {"mean", opt(s.mean)},
                {"min", opt(s.min)}, {"max", opt(s.max)}, {"stddev", opt(s.stddev)}};
}

std::optional<double> relative_delta(double current, double previous) {
    if (previous == 0.0) return std::nullopt;
    return (current - previous) / previous;
}

std::string classify_effect(std::optional<double> delta, double band) {
    if (!delta) return "neutral";
    if (*delta <= -band) return "positive";
    if (*delta >= band) return "negative";
    return "neutral";
}

const std::vector<std::string>& behavioural_feature_names() {
    static const std::vector<std::string> names{"received", "acceptance_rate", "validation_rate",
                                                "mean_latency_s", "consumption_delta"};
    return names;
}

std::uint64_t fnv1a64(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::vector<AnalysisTemplate> builtin_templates() {
    AnalysisTemplate stats;
    stats.id = "summary-stats";
    stats.algorithm = Algorithm::SummaryStats;
    stats.schema = default_schema(stats.algorithm);
    stats.input.target = QueryTarget::Series;
    stats.input.where = Predicate::leaf("attribute", Comparator::Eq, Scalar{std::string("energy")});
    stats.input.select = {"sensor_id", "attribute", "timestamp", "value"};

    AnalysisTemplate segments;
    segments.id = "user-segments";
    segments.algorithm = Algorithm::KMeans;
    segments.schema = default_schema(segments.algorithm);
    segments.input.target = QueryTarget::Users;
    segments.input.select = {"user_id"};
    return {stats, segments};
}

AnalyticsEngine::AnalyticsEngine(const broker::ContextBroker& broker, const tsdb::TimeSeriesStore& store,
                                 const recommender::Recommender& recommender, const Clock& clock,
                                 const fusion::Enricher* enricher, fusion::DocumentStore* documents)
    : broker_(broker), store_(store), recommender_(recommender), clock_(clock), enricher_(enricher),
      documents_(documents) {
    for (auto& t : builtin_templates()) templates_.emplace(t.id, std::move(t));
}

void AnalyticsEngine::register_template(AnalysisTemplate t) {
    if (t.id.empty()) fail(ErrorCode::InvalidConfig, "template id must be non-empty");
    if (t.algorithm == Algorithm::KMeans && t.input.target != QueryTarget::Users) {
        fail(ErrorCode::InvalidConfig, "KMeans templates segment users");
    }
    if (t.algorithm == Algorithm::SummaryStats && t.input.target != QueryTarget::Series) {
        fail(ErrorCode::InvalidConfig, "SummaryStats templates summarize series");
    }
    for (const auto& s : t.schema) check_value(s, s.default_value);
    std::lock_guard lock(mu_);
    templates_[t.id] = std::move(t);
}

AnalysisTemplate AnalyticsEngine::template_for(const std::string& id) const {
    std::lock_guard lock(mu_);
    auto it = templates_.find(id);
    if (it == templates_.end()) fail(ErrorCode::UnknownTemplate, "no template '" + id + "'");
    return it->second;
}

std::vector<AnalysisTemplate> AnalyticsEngine::templates() const {
    std::lock_guard lock(mu_);
    std::vector<AnalysisTemplate> out;
    for (const auto& [id, t] : templates_) out.push_back(t);
    return out;
}

QueryResult AnalyticsEngine::execute(const QueryAst& q) const {
    if (q.target == QueryTarget::Users) return execute_users(q, recommender_.users());
    return execute_series(q, store_);
}

AnalysisResult AnalyticsEngine::run_template(const std::string& template_id, const json& overrides) {
    const auto t = template_for(template_id);
    json config = validate_config(t.schema, overrides);
    QueryAst input = t.input;
    json data = t.algorithm == Algorithm::KMeans ? run_kmeans(config, input) : run_summary(config, input);

    AnalysisResult r;
    r.template_id = t.id;
    r.algorithm = t.algorithm;
    r.config = std::move(config);
    r.input_query = serialize_query(input);
    r.data = std::move(data);
    r.computed_at = clock_.now();
    r.id = "analysis-" + hex64(fnv1a64(r.template_id + "\n" + r.config.dump() + "\n" + r.input_query.dump() + "\n" +
                                       r.data.dump()));
    {
        std::lock_guard lock(mu_);
        results_[r.id] = r;
    }
    persist(r);
    return r;
}

json AnalyticsEngine::run_summary(json& config, QueryAst& input) const {
    if (auto f = time_option(config, "from")) input.from = f;
    if (auto t = time_option(config, "to")) input.to = t;
    if (!input.from || !input.to) fail(ErrorCode::InvalidConfig, "series input needs 'from' and 'to'");
    if (!(*input.from < *input.to)) fail(ErrorCode::InvalidRange, "range must satisfy from < to");
    config["from"] = format_iso8601(*input.from);
    config["to"] = format_iso8601(*input.to);

    const auto rows = execute_series(input, store_).rows;
    std::vector<double> all;
    for (const auto& r : rows) all.push_back(r.value);
    json data{{"overall", to_json(summarize(all))}};
    if (auto split = time_option(config, "split_at")) {
        std::vector<double> before, after;
        for (const auto& r : rows) (r.at < *split ? before : after).push_back(r.value);
        const auto b = summarize(before);
        const auto a = summarize(after);
        std::optional<double> delta;
        if (b.mean && a.mean) delta = relative_delta(*a.mean, *b.mean);
        data["before"] = to_json(b);
        data["after"] = to_json(a);
        data["delta"] = delta ? json(*delta) : json(nullptr);
        data["effect"] = classify_effect(delta, config.at("band").get<double>());
    }
    return data;
}

json AnalyticsEngine::run_kmeans(json& config, QueryAst& input) const {
    const TimePoint to = time_option(config, "to").value_or(clock_.now());
    const TimePoint from = time_option(config, "from").value_or(to - kDefaultPeriod);
    if (!(from < to)) fail(ErrorCode::InvalidRange, "period must satisfy from < to");
    config["from"] = format_iso8601(from);
    config["to"] = format_iso8601(to);

    const auto users = execute_users(input, recommender_.users()).users;
    const auto attribute = config.at("energy_attribute").get<std::string>();
    std::vector<Point> raw;
    for (const auto& u : users) raw.push_back(behavioural_features(u, from, to, attribute));

    KMeansOptions opt;
    opt.k = static_cast<std::size_t>(config.at("k").get<std::int64_t>());
    opt.seed = static_cast<std::uint64_t>(config.at("seed").get<std::int64_t>());
    opt.max_iter = static_cast<std::size_t>(config.at("max_iter").get<std::int64_t>());
    opt.tol = config.at("tol").get<double>();
    if (raw.empty()) {
        fail(ErrorCode::KTooLarge, "k = " + std::to_string(opt.k) + " exceeds 0 points");
    }
    const auto restarts = static_cast<std::size_t>(config.at("restarts").get<std::int64_t>());
    const auto clusters = kmeans_best_of(standardize(raw), opt, restarts);

    json assignments = json::object();
    json points = json::object();
    for (std::size_t i = 0; i < users.size(); ++i) {
        assignments[users[i]] = clusters.assignments[i];
        points[users[i]] = raw[i];
    }
    return json{{"k", clusters.k},
                {"features", behavioural_feature_names()},
                {"points", std::move(points)},
                {"assignments", std::move(assignments)},
                {"centroids", clusters.centroids},
                {"inertia", clusters.inertia},
                {"inertia_history", clusters.inertia_history},
                {"iterations", clusters.iterations},
                {"seed", clusters.seed}};
}

void AnalyticsEngine::persist(const AnalysisResult& r) const {
    if (!enricher_ || !documents_) return;
    fusion::SourceRecord rec;
    rec.kind = fusion::SourceKind::AnalysisResult;
    rec.source_id = r.id;
    rec.at = r.computed_at;
    rec.fields["algorithm"] = {std::string(to_string(r.algorithm))};
    rec.fields["configuration"] = {r.config.dump()};
    rec.fields["input_query"] = {r.input_query.dump()};
    rec.fields["result"] = {r.data.dump()};
    rec.fields["computed_at"] = {format_iso8601(r.computed_at)};
    documents_->store(enricher_->enrich(rec));
}

AnalysisResult AnalyticsEngine::result(const std::string& id) const {
    std::lock_guard lock(mu_);
    auto it = results_.find(id);
    if (it == results_.end()) fail(ErrorCode::UnknownAnalysis, "no analysis '" + id + "'");
    return it->second;
}

std::vector<AnalysisResult> AnalyticsEngine::results() const {
    std::lock_guard lock(mu_);
    std::vector<AnalysisResult> out;
    for (const auto& [id, r] : results_) out.push_back(r);
    return out;
}

std::vector<double> AnalyticsEngine::behavioural_features(const std::string& user_id, TimePoint from, TimePoint to,
                                                          const std::string& energy_attribute) const {
    if (!(from < to)) fail(ErrorCode::InvalidRange, "period must satisfy from < to");
    const auto profile = recommender_.user(user_id);
    const Duration period = to - from;
    std::size_t received = 0, accepted = 0, tasks = 0, validated = 0, answered = 0;
    double latency_sum = 0;
    for (const auto& r : recommender_.recommendations(user_id)) {
        if (!r.delivered_at || *r.delivered_at < from || !(*r.delivered_at < to)) continue;
        ++received;
        if (r.kind == recommender::RecommendationKind::Task) {
            ++tasks;
            if (r.state == recommender::RecState::Validated) ++validated;
        }
        if (r.feedback) {
            if (r.feedback->kind == recommender::FeedbackKind::Accept) ++accepted;
            ++answered;
            latency_sum += std::chrono::duration<double>(r.feedback->at - *r.delivered_at).count();
        }
    }
    const double period_s = std::chrono::duration<double>(period).count();
    const double acceptance = received ? static_cast<double>(accepted) / static_cast<double>(received) : 0.0;
    const double validation = tasks ? static_cast<double>(validated) / static_cast<double>(tasks) : 0.0;
    const double latency = answered ? latency_sum / static_cast<double>(answered) : period_s;
    const double current = consumption(profile.activity_locations, energy_attribute, from, to);
    const double previous = consumption(profile.activity_locations, energy_attribute, from - period, from);
    const double delta = relative_delta(current, previous).value_or(0.0);
    return {static_cast<double>(received), acceptance, validation, latency, delta};
}

std::set<std::string> AnalyticsEngine::sensors_in(const std::set<std::string>& spaces) const {
    std::set<std::string> out;
    if (spaces.empty()) return out;
    for (const auto& e : broker_.query_entities()) {
        if (spaces.count(e.id)) out.insert(e.id);
        auto it = e.attributes.find("location");
        if (it != e.attributes.end()) {
            if (const auto* s = std::get_if<std::string>(&it->second.value); s && spaces.count(*s)) out.insert(e.id);
        }
    }
    for (const auto& key : store_.series()) {
        if (spaces.count(key.sensor_id)) out.insert(key.sensor_id);
    }
    return out;
}

double AnalyticsEngine::consumption(const std::set<std::string>& spaces, const std::string& attribute,
                                    TimePoint from, TimePoint to) const {
    if (!(from < to)) return 0.0;
    const auto sensors = sensors_in(spaces);
    double total = 0;
    for (const auto& key : store_.series()) {
        if (key.attribute != attribute || !sensors.count(key.sensor_id)) continue;
        tsdb::SeriesQuery q;
        q.key = key;
        q.t0 = from;
        q.t1 = to;
        for (const auto& m : store_.query_raw(q)) total += m.value;
    }
    return total;
}

} // namespace entropy::analytics
