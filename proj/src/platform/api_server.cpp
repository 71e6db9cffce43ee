#include "entropy/platform/api_server.hpp"

#include "entropy/core/error.hpp"
#include "entropy/fusion/jsonld.hpp"

#include <httplib.h>

#include <algorithm>
#include <cctype>

namespace entropy::platform {

namespace {

using Req = httplib::Request;
using Res = httplib::Response;

void send(Res& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

json body_of(const Req& req) {
    if (req.body.empty()) return json::object();
    try {
        return json::parse(req.body);
    } catch (const json::parse_error& e) {
        fail(ErrorCode::BadRequest, std::string("body is not JSON: ") + e.what());
    }
}

std::optional<std::string> param(const Req& req, const char* name) {
    if (!req.has_param(name)) return std::nullopt;
    return req.get_param_value(name);
}

std::string required_param(const Req& req, const char* name) {
    auto v = param(req, name);
    if (!v || v->empty()) fail(ErrorCode::BadRequest, std::string("query parameter '") + name + "' is required");
    return *v;
}

/// Epoch milliseconds or ISO 8601.
TimePoint time_param(const std::string& v) {
    if (!v.empty() && std::all_of(v.begin(), v.end(), [](unsigned char c) { return std::isdigit(c) || c == '-'; }) &&
        v.find('-', 1) == std::string::npos) {
        return from_epoch_ms(std::stoll(v));
    }
    auto t = parse_iso8601(v);
    if (!t) fail(ErrorCode::BadRequest, "'" + v + "' is neither epoch milliseconds nor ISO 8601");
    return *t;
}

Duration duration_param(const std::string& v) {
    if (auto d = parse_iso_duration(v)) return *d;
    try {
        std::size_t used = 0;
        const double s = std::stod(v, &used);
        if (used == v.size()) return Duration{static_cast<std::int64_t>(s * 1000)};
    } catch (const std::logic_error&) {
    }
    fail(ErrorCode::BadRequest, "'" + v + "' is not a duration");
}

/// "attr op value" terms joined by ';'. Values parse as number, then boolean, then string.
std::vector<broker::AttributePredicate> parse_entity_q(const std::string& q) {
    std::vector<broker::AttributePredicate> out;
    std::size_t start = 0;
    while (start <= q.size()) {
        const auto end = std::min(q.find(';', start), q.size());
        const auto term = q.substr(start, end - start);
        start = end + 1;
        if (term.empty()) continue;
        static const char* ops[] = {"==", "!=", ">=", "<=", ">", "<", "="};
        bool matched = false;
        for (const char* op : ops) {
            const auto pos = term.find(op);
            if (pos == std::string::npos || pos == 0) continue;
            broker::AttributePredicate p;
            p.attribute = term.substr(0, pos);
            p.comparator = comparator_from_string(op);
            const auto lit = term.substr(pos + std::string_view(op).size());
            char* endp = nullptr;
            const double d = std::strtod(lit.c_str(), &endp);
            if (!lit.empty() && endp == lit.c_str() + lit.size()) {
                p.literal = d;
            } else if (lit == "true" || lit == "false") {
                p.literal = lit == "true";
            } else {
                p.literal = lit;
            }
            out.push_back(std::move(p));
            matched = true;
            break;
        }
        if (!matched) fail(ErrorCode::BadRequest, "cannot parse filter term '" + term + "'");
    }
    return out;
}

std::optional<std::string> campaign_of(json& body) {
    if (!body.contains("campaign")) return std::nullopt;
    auto c = body.at("campaign").get<std::string>();
    body.erase("campaign");
    return c;
}

} // namespace

int http_status(ErrorCode code) {
    switch (code) {
    case ErrorCode::BadRequest:
    case ErrorCode::MalformedId:
    case ErrorCode::MalformedTree: return 400;
    case ErrorCode::Unauthorized: return 401;
    case ErrorCode::NotFound:
    case ErrorCode::UnknownEntity:
    case ErrorCode::UnknownSubscription:
    case ErrorCode::UnknownSeries:
    case ErrorCode::UnknownSensor:
    case ErrorCode::UnknownStream:
    case ErrorCode::UnknownCondition:
    case ErrorCode::UnknownComposite:
    case ErrorCode::UnknownRule:
    case ErrorCode::UnknownRecommendation:
    case ErrorCode::UnknownUser:
    case ErrorCode::UnknownTemplate:
    case ErrorCode::UnknownAnalysis:
    case ErrorCode::UnknownCampaign: return 404;
    case ErrorCode::WrongState:
    case ErrorCode::CampaignNotActive:
    case ErrorCode::StaleTimestamp:
    case ErrorCode::CycleDetected: return 409;
    case ErrorCode::ConnectionFailure: return 502;
    default: return 422;
    }
}

json error_body(ErrorCode code, const std::string& message) {
    return json{{"error", {{"code", to_string(code)}, {"message", message}}}};
}

ApiServer::ApiServer(Platform& platform, std::string token, Logger* logger, int threads)
    : platform_(platform), token_(std::move(token)), logger_(logger), server_(std::make_unique<httplib::Server>()) {
    if (token_.empty()) fail(ErrorCode::InvalidConfig, "a bearer token must be configured");
    const int n = std::max(1, threads);
    server_->new_task_queue = [n] { return new httplib::ThreadPool(static_cast<std::size_t>(n)); };
    server_->set_payload_max_length(64u << 20);
    routes();
}

ApiServer::~ApiServer() { stop(); }

int ApiServer::bind(const std::string& host, int port) {
    const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
    if (bound < 0) fail(ErrorCode::ConnectionFailure, "cannot bind " + host + ":" + std::to_string(port));
    return bound;
}

void ApiServer::listen() { server_->listen_after_bind(); }

int ApiServer::start(const std::string& host, int port) {
    const int bound = bind(host, port);
    thread_ = std::thread([this] { listen(); });
    server_->wait_until_ready();
    return bound;
}

void ApiServer::stop() {
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
}

void ApiServer::routes() {
    auto& s = *server_;
    Platform& p = platform_;

    s.set_pre_routing_handler([this](const Req& req, Res& res) {
        const bool mutating = req.method == "POST" || req.method == "PATCH" || req.method == "PUT" ||
                              req.method == "DELETE";
        if (!mutating) return httplib::Server::HandlerResponse::Unhandled;
        if (req.get_header_value("Authorization") != "Bearer " + token_) {
            send(res, 401, error_body(ErrorCode::Unauthorized, "missing or invalid bearer token"));
            return httplib::Server::HandlerResponse::Handled;
        }
        return httplib::Server::HandlerResponse::Unhandled;
    });
    s.set_exception_handler([](const Req&, Res& res, std::exception_ptr ep) {
        try {
            std::rethrow_exception(ep);
        } catch (const Error& e) {
            send(res, http_status(e.code()), error_body(e.code(), e.what()));
        } catch (const json::exception& e) {
            send(res, 400, error_body(ErrorCode::BadRequest, e.what()));
        } catch (const std::exception& e) {
            send(res, 500, json{{"error", {{"code", "internal"}, {"message", e.what()}}}});
        }
    });
    s.set_error_handler([](const Req&, Res& res) {
        if (res.status == 404 && res.body.empty()) send(res, 404, error_body(ErrorCode::NotFound, "no such route"));
    });
    if (logger_) {
        s.set_logger([this](const Req& req, const Res& res) {
            logger_->info("request", {{"method", req.method}, {"path", req.path}, {"status", res.status}});
        });
    }

    // Service
    s.Get("/v1/health", [&p](const Req&, Res& res) {
        send(res, 200, {{"status", "ok"}, {"now", format_iso8601(p.clock().now())}});
    });
    s.Get("/v1/config", [&p](const Req&, Res& res) { send(res, 200, to_json(p.config())); });
    s.Get("/v1/clock", [&p](const Req&, Res& res) {
        send(res, 200, {{"now", format_iso8601(p.clock().now())}, {"simulated", p.simulated()}});
    });
    s.Post("/v1/clock", [&p](const Req& req, Res& res) {
        const auto body = body_of(req);
        p.advance_clock(time_from_json(body.at("to")));
        send(res, 200, {{"now", format_iso8601(p.clock().now())}});
    });
    s.Get("/v1/context", [&p](const Req&, Res& res) {
        send(res, 200, {{"@context", p.enricher().vocabulary().context()},
                        {"version", p.enricher().vocabulary().version()}});
    });

    // Campaigns
    s.Post("/v1/campaigns", [&p](const Req& req, Res& res) {
        send(res, 201, p.create_campaign(campaign_from_json(body_of(req))));
    });
    s.Get("/v1/campaigns", [&p](const Req&, Res& res) { send(res, 200, p.campaigns()); });
    s.Get(R"(/v1/campaigns/([^/]+))", [&p](const Req& req, Res& res) { send(res, 200, p.campaign(req.matches[1])); });
    s.Post(R"(/v1/campaigns/([^/]+)/activate)", [&p](const Req& req, Res& res) {
        send(res, 200, p.activate_campaign(req.matches[1]));
    });
    s.Post(R"(/v1/campaigns/([^/]+)/end)", [&p](const Req& req, Res& res) {
        send(res, 200, p.end_campaign(req.matches[1]));
    });
    s.Get(R"(/v1/campaigns/([^/]+)/dashboard)", [&p](const Req& req, Res& res) {
        std::optional<TimePoint> from, to;
        if (auto f = param(req, "from")) from = time_param(*f);
        if (auto t = param(req, "to")) to = time_param(*t);
        send(res, 200, p.dashboard(req.matches[1], from, to));
    });

    // Entities
    s.Post("/v1/entities", [&p](const Req& req, Res& res) {
        auto body = body_of(req);
        std::vector<json> items = body.is_array() ? body.get<std::vector<json>>() : std::vector<json>{body};
        json out = json::array();
        for (const auto& item : items) {
            auto rec = item.get<broker::EntityRecord>();
            for (const auto& [name, v] : rec.attributes) p.follow(v.observed_at);
            p.broker().upsert_entity(rec);
            out.push_back(p.broker().get_entity(rec.id));
        }
        send(res, 201, body.is_array() ? out : out.front());
    });
    s.Get("/v1/entities", [&p](const Req& req, Res& res) {
        broker::EntityFilter f;
        if (auto t = param(req, "type"); t && !t->empty()) f.entity_type = *t;
        if (auto q = param(req, "q")) f.predicates = parse_entity_q(*q);
        send(res, 200, p.broker().query_entities(f));
    });
    s.Get(R"(/v1/entities/([^/]+))", [&p](const Req& req, Res& res) {
        send(res, 200, p.broker().get_entity(req.matches[1]));
    });
    s.Patch(R"(/v1/entities/([^/]+)/attrs)", [&p](const Req& req, Res& res) {
        const auto body = body_of(req);
        std::map<std::string, broker::AttributeValue> patch;
        for (const auto& [name, v] : body.items()) {
            patch[name] = v.get<broker::AttributeValue>();
            p.follow(patch[name].observed_at);
        }
        send(res, 200, p.broker().update_attributes(req.matches[1], patch));
    });
    s.Delete(R"(/v1/entities/([^/]+))", [&p](const Req& req, Res& res) {
        p.broker().delete_entity(req.matches[1]);
        send(res, 200, {{"deleted", std::string(req.matches[1])}});
    });
    s.Post("/v1/composites", [&p](const Req& req, Res& res) {
        const auto id = p.composites().define_composite(body_of(req).get<composite::CompositeSpec>());
        send(res, 201, {{"id", id}, {"members", p.composites().members(id)}});
    });

    // Ingestion
    s.Post("/v1/ingest", [&p](const Req& req, Res& res) {
        std::optional<std::string> key;
        if (req.has_header("Idempotency-Key")) key = req.get_header_value("Idempotency-Key");
        send(res, 200, p.ingest(body_of(req), key));
    });

    // Streams and conditions
    s.Post("/v1/streams", [&p](const Req& req, Res& res) {
        auto body = body_of(req);
        const auto campaign = campaign_of(body);
        const bool activate = body.value("activate", false);
        body.erase("activate");
        if (!body.contains("frequency")) body["frequency"] = duration_to_json(p.config().default_frequency);
        const auto id = p.register_stream(body.get<stream::StreamSpec>(), campaign, activate);
        send(res, 201, p.processor().stream(id));
    });
    s.Get("/v1/streams", [&p](const Req&, Res& res) { send(res, 200, p.processor().streams()); });
    s.Get(R"(/v1/streams/([^/]+))", [&p](const Req& req, Res& res) {
        send(res, 200, p.processor().stream(req.matches[1]));
    });
    s.Post(R"(/v1/streams/([^/]+)/activate)", [&p](const Req& req, Res& res) {
        p.processor().activate(req.matches[1]);
        send(res, 200, p.processor().stream(req.matches[1]));
    });
    s.Post(R"(/v1/streams/([^/]+)/deactivate)", [&p](const Req& req, Res& res) {
        p.processor().deactivate(req.matches[1]);
        send(res, 200, p.processor().stream(req.matches[1]));
    });
    s.Get(R"(/v1/streams/([^/]+)/events)", [&p](const Req& req, Res& res) {
        std::uint64_t since = 0;
        if (auto v = param(req, "since")) since = std::stoull(*v);
        json out = json::array();
        for (const auto& e : p.processor().events(req.matches[1])) {
            if (e.seq > since) out.push_back(e);
        }
        send(res, 200, out);
    });
    s.Post("/v1/conditions", [&p](const Req& req, Res& res) {
        const auto id = p.processor().register_condition(body_of(req).get<stream::ConditionSpec>());
        json out = p.processor().condition(id);
        out["id"] = id;
        send(res, 201, out);
    });
    s.Get(R"(/v1/conditions/([^/]+))", [&p](const Req& req, Res& res) {
        json out = p.processor().condition(req.matches[1]);
        out["id"] = std::string(req.matches[1]);
        send(res, 200, out);
    });

    // Series
    s.Get("/v1/series", [&p](const Req&, Res& res) {
        json out = json::array();
        for (const auto& k : p.store().series()) {
            out.push_back({{"sensor_id", k.sensor_id},
                           {"attribute", k.attribute},
                           {"unit", p.store().series_unit(k).value_or("")},
                           {"size", p.store().series_size(k)}});
        }
        send(res, 200, out);
    });
    const auto series_query = [](const Req& req) {
        tsdb::SeriesQuery q;
        q.key = {required_param(req, "sensor"), required_param(req, "attribute")};
        q.t0 = time_param(required_param(req, "from"));
        q.t1 = time_param(required_param(req, "to"));
        if (auto quality = param(req, "quality")) q.quality = quality_from_string(*quality);
        return q;
    };
    s.Get("/v1/series/raw", [&p, series_query](const Req& req, Res& res) {
        const auto rows = p.store().query_raw(series_query(req));
        send(res, 200, {{"count", rows.size()}, {"rows", rows}});
    });
    s.Get("/v1/series/agg", [&p, series_query](const Req& req, Res& res) {
        auto q = series_query(req);
        q.fn = tsdb::aggregate_fn_from_string(required_param(req, "fn"));
        q.bucket = duration_param(required_param(req, "bucket"));
        const auto buckets = p.store().query_aggregate(q);
        send(res, 200, {{"count", buckets.size()}, {"buckets", buckets}});
    });

    // Groups, users and rules
    s.Post("/v1/groups", [&p](const Req& req, Res& res) {
        const auto body = body_of(req);
        auto def = body.contains("definition") ? recommender::parse_group_definition(body.at("definition").get<std::string>())
                                               : body.get<recommender::GroupDefinition>();
        p.recommender().register_group(def);
        send(res, 201, def);
    });
    s.Get("/v1/groups", [&p](const Req&, Res& res) { send(res, 200, p.recommender().group_definitions()); });
    s.Post("/v1/users", [&p](const Req& req, Res& res) {
        send(res, 201, p.recommender().upsert_user(body_of(req).get<recommender::UserProfile>(), p.clock().now()));
    });
    s.Get("/v1/users", [&p](const Req&, Res& res) { send(res, 200, p.recommender().users()); });
    s.Get(R"(/v1/users/([^/]+))", [&p](const Req& req, Res& res) { send(res, 200, p.recommender().user(req.matches[1])); });
    s.Get(R"(/v1/users/([^/]+)/recommendations)", [&p](const Req& req, Res& res) {
        const std::string user = req.matches[1];
        p.recommender().user(user);
        std::optional<recommender::RecState> state;
        if (auto st = param(req, "state")) state = recommender::rec_state_from_string(*st);
        send(res, 200, p.recommender().recommendations(user, state));
    });
    s.Post("/v1/rules", [&p](const Req& req, Res& res) {
        auto body = body_of(req);
        const auto campaign = campaign_of(body);
        if (body.contains("condition") && body.at("condition").is_object()) {
            body["condition"] = p.processor().register_condition(body.at("condition").get<stream::ConditionSpec>());
        }
        const auto id = p.register_rule(body.get<recommender::RuleSpec>(), campaign);
        send(res, 201, p.recommender().rule(id));
    });
    s.Get("/v1/rules", [&p](const Req&, Res& res) { send(res, 200, p.recommender().rules()); });
    s.Get(R"(/v1/rules/([^/]+))", [&p](const Req& req, Res& res) { send(res, 200, p.recommender().rule(req.matches[1])); });

    // Recommendations
    s.Get(R"(/v1/recommendations/([^/]+))", [&p](const Req& req, Res& res) {
        send(res, 200, p.recommender().recommendation(req.matches[1]));
    });
    s.Post(R"(/v1/recommendations/([^/]+)/feedback)", [&p](const Req& req, Res& res) {
        const auto body = body_of(req);
        recommender::Feedback f;
        f.kind = recommender::feedback_kind_from_string(body.at("kind").get<std::string>());
        if (body.contains("answer") && !body.at("answer").is_null()) f.answer = body.at("answer").get<std::string>();
        if (body.contains("at")) p.follow(time_from_json(body.at("at")));
        f.at = body.contains("at") ? time_from_json(body.at("at")) : p.clock().now();
        send(res, 200, p.recommender().record_feedback(req.matches[1], f));
    });
    s.Post(R"(/v1/recommendations/([^/]+)/validate)", [&p](const Req& req, Res& res) {
        const std::string id = req.matches[1];
        const auto outcome = p.recommender().validate_task(id, p.clock().now());
        send(res, 200, {{"outcome", recommender::to_string(outcome)}, {"recommendation", p.recommender().recommendation(id)}});
    });

    // Queries and analyses
    s.Post("/v1/queries", [&p](const Req& req, Res& res) {
        const auto q = analytics::parse_query(body_of(req));
        json out = p.analytics().execute(q);
        out["query"] = analytics::serialize_query(q);
        send(res, 200, out);
    });
    s.Get("/v1/analyses/templates", [&p](const Req&, Res& res) { send(res, 200, p.analytics().templates()); });
    s.Post("/v1/analyses/templates", [&p](const Req& req, Res& res) {
        auto t = analytics::template_from_json(body_of(req));
        p.analytics().register_template(t);
        send(res, 201, p.analytics().template_for(t.id));
    });
    s.Post("/v1/analyses", [&p](const Req& req, Res& res) {
        const auto body = body_of(req);
        const auto r = p.analytics().run_template(body.at("template").get<std::string>(),
                                                  body.value("config", json::object()));
        send(res, 201, r);
    });
    s.Get(R"(/v1/analyses/([^/]+))", [&p](const Req& req, Res& res) {
        const auto r = p.analytics().result(req.matches[1]);
        if (param(req, "format") != std::optional<std::string>{"jsonld"}) return send(res, 200, r);
        const auto prefix = "urn:entropy:analysis:" + r.id + ":";
        for (const auto& doc : p.documents().find({"entropy:AnalysisResult", {}, std::nullopt, std::nullopt})) {
            if (doc.node.id.rfind(prefix, 0) == 0) return send(res, 200, fusion::to_jsonld(doc));
        }
        fail(ErrorCode::NotFound, "no document for analysis '" + r.id + "'");
    });
}

} // namespace entropy::platform
