#pragma once

#include "entropy/core/types.hpp"

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

namespace entropy::broker {

struct AttributeValue {
    Scalar value;
    std::string unit;
    TimePoint observed_at{};
    Quality quality = Quality::Raw;

    bool operator==(const AttributeValue&) const = default;
};

void to_json(json& j, const AttributeValue& v);
void from_json(const json& j, AttributeValue& v);

inline const std::set<std::string>& known_entity_types() {
    static const std::set<std::string> types{"SensorNode", "Room", "Building", "BuildingSpace", "Door", "Custom"};
    return types;
}

struct EntityRecord {
    std::string id;
    std::string entity_type = "Custom";
    std::map<std::string, AttributeValue> attributes;
    TimePoint created_at{};
    TimePoint updated_at{};
    std::uint64_t version = 0;
    bool deleted = false;

    /// Equality of identity, type and attributes; timestamps and version ignored.
    bool same_content(const EntityRecord& other) const {
        return id == other.id && entity_type == other.entity_type && attributes == other.attributes;
    }
};

void to_json(json& j, const EntityRecord& r);
void from_json(const json& j, EntityRecord& r);

enum class LifecycleState { Registered, Bootstrapping, Connected, Disconnected };

std::string_view to_string(LifecycleState s);

/// Registered -> Bootstrapping -> Connected <-> Disconnected.
bool lifecycle_transition_allowed(LifecycleState from, LifecycleState to);

struct NodeLifecycle {
    std::string node_id;
    LifecycleState state = LifecycleState::Registered;
    std::vector<std::string> config_commands;
    std::optional<TimePoint> last_seen;
    Duration reporting_period{};
    Duration liveness_timeout{};
    /// Every state the node has been in, oldest first.
    std::vector<LifecycleState> history{LifecycleState::Registered};
};

/// Reserved attribute name carried by lifecycle-transition notifications.
inline constexpr std::string_view kLifecycleAttribute = "@lifecycle";

struct Notification {
    std::uint64_t subscription_id = 0;
    std::string entity_id;
    std::string attribute;
    std::optional<AttributeValue> old_value;
    /// Absent when the attribute was removed.
    std::optional<AttributeValue> new_value;
    std::uint64_t version = 0;
};

struct AttributePredicate {
    std::string attribute;
    Comparator comparator = Comparator::Eq;
    Scalar literal;
};

struct EntityFilter {
    std::optional<std::string> entity_type;
    std::vector<AttributePredicate> predicates;
    std::optional<std::set<std::string>> ids;
};

bool matches(const EntityRecord& r, const EntityFilter& f);

/// {"attribute": "location", "op": "=", "value": "office-12"}
void to_json(json& j, const AttributePredicate& p);
void from_json(const json& j, AttributePredicate& p);
/// {"type": "SensorNode", "where": [predicate...], "ids": [...]}, every key optional.
void to_json(json& j, const EntityFilter& f);
void from_json(const json& j, EntityFilter& f);

struct SubscriptionSelector {
    std::optional<std::string> entity_type;
    /// Empty means every attribute, including lifecycle transitions.
    std::set<std::string> attributes;
    std::optional<std::set<std::string>> ids;
};

using NotificationSink = std::function<void(const Notification&)>;

struct Subscription {
    std::uint64_t id = 0;
    SubscriptionSelector selector;
    /// Consumer name for diagnostics ("timeseries-store", a webhook URL, ...).
    std::string sink_name;
    NotificationSink sink;
    bool active = true;
};

enum class DeliveryMode {
    /// Delivered on the writing thread after the write commits, outside broker locks.
    Inline,
    /// Delivered by a dedicated worker thread.
    Queued,
};

/// Ordered fan-out of notifications. Commit order is preserved; one delivery runs at a time.
class NotificationBus {
public:
    explicit NotificationBus(DeliveryMode mode = DeliveryMode::Inline);
    ~NotificationBus();
    NotificationBus(const NotificationBus&) = delete;
    NotificationBus& operator=(const NotificationBus&) = delete;

    void enqueue(NotificationSink sink, Notification n);
    /// Inline mode: drains on the caller unless a delivery is already running.
    void pump();
    /// Blocks until no notification is queued or in flight.
    void wait_idle();
    DeliveryMode mode() const { return mode_; }

private:
    struct Item {
        NotificationSink sink;
        Notification notification;
    };

    void drain(std::unique_lock<std::mutex>& lock);
    void worker_loop();

    DeliveryMode mode_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::condition_variable idle_cv_;
    std::deque<Item> queue_;
    bool delivering_ = false;
    bool stopping_ = false;
    std::thread worker_;
};

struct BrokerConfig {
    Duration default_reporting_period = std::chrono::seconds(60);
    int liveness_factor = 3;
    Duration max_future_skew = std::chrono::seconds(60);
    /// Numeric attributes that may omit a unit.
    std::set<std::string> unitless_attributes{"open", "presence", "occupancy", "count"};
    /// Bootstrap command palette per entity type; "{id}" and "{period}" are substituted.
    std::map<std::string, std::vector<std::string>> bootstrap_policies{
        {"SensorNode", {"SET_ID {id}", "SET_REPORTING_PERIOD {period}", "START"}},
        {"Door", {"SET_ID {id}", "SET_REPORTING_PERIOD {period}", "START"}},
    };
    DeliveryMode delivery = DeliveryMode::Inline;
};

/// Current state of every registered entity, with change subscriptions.
class ContextBroker {
public:
    explicit ContextBroker(const Clock& clock, BrokerConfig config = {});

    std::uint64_t upsert_entity(EntityRecord record);
    EntityRecord update_attributes(const std::string& id, const std::map<std::string, AttributeValue>& patch);
    EntityRecord remove_attributes(const std::string& id, const std::set<std::string>& names);
    /// Soft delete: the record is tombstoned and hidden from queries.
    void delete_entity(const std::string& id);

    EntityRecord get_entity(const std::string& id, bool include_deleted = false) const;
    std::optional<EntityRecord> find_entity(const std::string& id) const;
    std::vector<EntityRecord> query_entities(const EntityFilter& filter = {}) const;

    std::uint64_t subscribe(Subscription sub);
    void unsubscribe(std::uint64_t id);

    /// Delivers the bootstrap command sequence (Registered -> Bootstrapping).
    std::vector<std::string> begin_bootstrap(const std::string& node_id);
    NodeLifecycle mark_liveness(const std::string& node_id, TimePoint seen_at);
    std::vector<std::string> sweep_liveness(TimePoint now);
    std::optional<NodeLifecycle> lifecycle(const std::string& node_id) const;
    bool has_lifecycle(const std::string& node_id) const;

    NotificationBus& bus() { return bus_; }
    const BrokerConfig& config() const { return config_; }

private:
    struct Pending {
        std::string entity_id;
        std::string attribute;
        std::optional<AttributeValue> old_value;
        std::optional<AttributeValue> new_value;
        std::uint64_t version;
        std::string entity_type;
    };

    void validate_attribute(const std::string& name, const AttributeValue& v, TimePoint now) const;
    void emit_locked(const std::vector<Pending>& changes);
    bool transition_locked(NodeLifecycle& node, LifecycleState to, const std::string& entity_type,
                           std::vector<Pending>& out);
    void ensure_lifecycle_locked(const EntityRecord& r);

    const Clock& clock_;
    BrokerConfig config_;
    mutable std::shared_mutex mu_;
    std::map<std::string, EntityRecord> entities_;
    std::map<std::string, NodeLifecycle> nodes_;
    std::map<std::uint64_t, Subscription> subscriptions_;
    std::uint64_t next_version_ = 1;
    std::uint64_t next_subscription_ = 1;
    NotificationBus bus_;
};

/// Sink-side dedup keyed by (entity, attribute, version); turns at-least-once into exactly-once.
class DedupSink {
public:
    explicit DedupSink(NotificationSink inner) : inner_(std::move(inner)) {}
    void operator()(const Notification& n);

private:
    std::mutex mu_;
    std::set<std::tuple<std::string, std::string, std::uint64_t>> seen_;
    NotificationSink inner_;
};

} // namespace entropy::broker
