#include "entropy/sim/replay.hpp"

#include "entropy/core/error.hpp"

#include <httplib.h>

#include <random>
#include <thread>

namespace entropy::sim {

namespace {

using Clock = std::chrono::steady_clock;

std::unique_ptr<httplib::Client> client_for(const ReplayOptions& o) {
    auto c = std::make_unique<httplib::Client>(o.url);
    if (!c->is_valid()) fail(ErrorCode::InvalidSpec, "unusable target url '" + o.url + "'");
    c->set_bearer_token_auth(o.token);
    c->set_connection_timeout(std::chrono::seconds(2));
    c->set_read_timeout(std::chrono::seconds(30));
    return c;
}

/// POST with bounded exponential backoff; nullopt after the last retry failed to connect or got a 5xx.
std::optional<httplib::Result> post_retrying(httplib::Client& c, const ReplayOptions& o, const std::string& path,
                                             const std::string& body, const httplib::Headers& headers,
                                             std::size_t& retries, std::string& last_error) {
    auto delay = o.backoff;
    for (int attempt = 0;; ++attempt) {
        auto r = c.Post(path, headers, body, "application/json");
        if (r && r->status < 500) return r;
        last_error = r ? "HTTP " + std::to_string(r->status) + " from " + path
                       : "connection failure on " + path + ": " + httplib::to_string(r.error());
        if (attempt >= o.max_retries) return std::nullopt;
        ++retries;
        std::this_thread::sleep_for(delay);
        delay = std::min(delay * 2, std::chrono::milliseconds(2000));
    }
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

} // namespace

json to_json(const ReplayReport& r) {
    json j{{"sent", r.sent},       {"acked", r.acked},     {"accepted", r.accepted},
           {"dropped", r.dropped}, {"item_errors", r.item_errors}, {"batches", r.batches},
           {"retries", r.retries}, {"per_sensor", r.per_sensor}, {"wall_seconds", r.wall_seconds}};
    j["failure"] = r.failure ? json(*r.failure) : json(nullptr);
    return j;
}

json to_json(const FeedbackReport& r) {
    return {{"answered", r.answered}, {"accepted", r.accepted}, {"rejected", r.rejected}};
}

ReplayReport replay(const Bundle& bundle, const ReplayOptions& o) {
    if (o.batch_size == 0) fail(ErrorCode::InvalidSpec, "batch size must be positive");
    if (o.speed && !(*o.speed > 0)) fail(ErrorCode::InvalidSpec, "speed must be positive");
    ReplayReport report;
    auto client = client_for(o);
    const auto wall_start = Clock::now();
    const auto finish = [&] {
        report.wall_seconds = std::chrono::duration<double>(Clock::now() - wall_start).count();
        return report;
    };
    std::string error;

    if (o.register_fixtures) {
        auto r = post_retrying(*client, o, "/v1/entities", json(bundle.entities).dump(), {}, report.retries, error);
        if (!r) {
            report.failure = error;
            return finish();
        }
        if ((*r)->status != 201) {
            report.failure = "entity registration rejected: " + (*r)->body;
            return finish();
        }
        for (const auto& u : bundle.users) {
            auto ur = post_retrying(*client, o, "/v1/users", u.dump(), {}, report.retries, error);
            if (!ur || (*ur)->status != 201) {
                report.failure = ur ? "user registration rejected: " + (*ur)->body : error;
                return finish();
            }
        }
    }

    const auto& trace = bundle.trace;
    const TimePoint t0 = trace.empty() ? bundle.spec.start : trace.front().observed_at;
    const std::string key_prefix =
        "replay-" + std::to_string(bundle.spec.seed) + "-" + std::to_string(trace.size()) + "-" + std::to_string(o.batch_size) + "-";
    for (std::size_t b = o.start_batch; b * o.batch_size < trace.size(); ++b) {
        const std::size_t lo = b * o.batch_size;
        const std::size_t hi = std::min(trace.size(), lo + o.batch_size);
        if (o.speed) {
            const double sim_s = std::chrono::duration<double>(trace[lo].observed_at - t0).count();
            std::this_thread::sleep_until(wall_start + std::chrono::duration_cast<Clock::duration>(
                                                           std::chrono::duration<double>(sim_s / *o.speed)));
        }
        json items = json::array();
        for (std::size_t i = lo; i < hi; ++i) items.push_back(trace[i]);
        report.sent += hi - lo;
        auto r = post_retrying(*client, o, "/v1/ingest", items.dump(), {{"Idempotency-Key", key_prefix + std::to_string(b)}},
                               report.retries, error);
        if (!r) {
            report.failure = error;
            return finish();
        }
        if ((*r)->status != 200) {
            report.failure = "batch " + std::to_string(b) + " rejected: " + (*r)->body;
            return finish();
        }
        const auto body = json::parse((*r)->body);
        for (const auto& item : body.at("items")) {
            const auto status = item.at("status").get<std::string>();
            if (status == "error") {
                ++report.item_errors;
                continue;
            }
            ++report.acked;
            ++(status == "accepted" ? report.accepted : report.dropped);
            ++report.per_sensor[trace[lo + item.at("index").get<std::size_t>()].sensor_id];
        }
        ++report.batches;
        if (o.on_batch) o.on_batch(b, report.acked);
    }
    return finish();
}

FeedbackReport respond(const Bundle& bundle, const ReplayOptions& o) {
    FeedbackReport report;
    auto client = client_for(o);
    for (const auto& occ : bundle.spec.occupants) {
        auto r = client->Get("/v1/users/" + occ.id + "/recommendations?state=Delivered");
        if (!r) fail(ErrorCode::ConnectionFailure, "cannot reach " + o.url);
        if (r->status != 200) continue;
        double p = 0.5;
        if (occ.acceptance) {
            p = *occ.acceptance;
        } else if (auto it = bundle.spec.acceptance.find(occ.gamer_type); it != bundle.spec.acceptance.end()) {
            p = it->second;
        }
        for (const auto& rec : json::parse(r->body)) {
            const auto id = rec.at("id").get<std::string>();
            std::mt19937_64 rng(bundle.spec.seed ^ fnv1a(id));
            const bool accept = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
            const json body{{"kind", accept ? "Accept" : "Reject"}};
            auto fr = client->Post("/v1/recommendations/" + id + "/feedback", body.dump(), "application/json");
            if (!fr) fail(ErrorCode::ConnectionFailure, "cannot reach " + o.url);
            if (fr->status != 200) continue;
            ++report.answered;
            ++(accept ? report.accepted : report.rejected);
        }
    }
    return report;
}

} // namespace entropy::sim
