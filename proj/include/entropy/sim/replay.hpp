#pragma once

#include "entropy/sim/scenario.hpp"

#include <chrono>
#include <functional>
#include <map>
#include <optional>
#include <string>

namespace entropy::sim {

struct ReplayOptions {
    /// e.g. "http://127.0.0.1:8080"
    std::string url;
    std::string token;
    /// Simulated seconds per wall second; absent replays as fast as possible.
    std::optional<double> speed;
    std::size_t batch_size = 500;
    int max_retries = 5;
    std::chrono::milliseconds backoff{100};
    /// Posts entities and users before the trace.
    bool register_fixtures = true;
    /// First batch to send; earlier batches are skipped.
    std::size_t start_batch = 0;
    /// Called after each acknowledged batch with its index and the cumulative acked count.
    std::function<void(std::size_t batch, std::size_t acked)> on_batch;
};

struct ReplayReport {
    std::size_t sent = 0;
    /// Items the platform answered for with accepted or dropped-as-outlier.
    std::size_t acked = 0;
    std::size_t accepted = 0;
    std::size_t dropped = 0;
    std::size_t item_errors = 0;
    std::size_t batches = 0;
    std::size_t retries = 0;
    std::map<std::string, std::size_t> per_sensor;
    double wall_seconds = 0.0;
    /// Set when the platform stayed unreachable or rejected a batch; the replay stops there.
    std::optional<std::string> failure;

    bool complete(const Bundle& b) const { return !failure && item_errors == 0 && acked == b.trace.size(); }
};

json to_json(const ReplayReport& r);

/// Posts the trace to /v1/ingest in timestamp order, batch by batch, with bounded retry on connection failure and 5xx.
ReplayReport replay(const Bundle& bundle, const ReplayOptions& options);

struct FeedbackReport {
    std::size_t answered = 0;
    std::size_t accepted = 0;
    std::size_t rejected = 0;
};

json to_json(const FeedbackReport& r);

/// Answers every Delivered recommendation of the bundle's occupants: Accept with the occupant's
/// acceptance probability (else the gamer-type default, else 0.5), Reject otherwise. Deterministic in seed and id.
FeedbackReport respond(const Bundle& bundle, const ReplayOptions& options);

} // namespace entropy::sim
