#include "entropy/broker/context_broker.hpp"

#include "entropy/core/error.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace entropy::broker {

// ---------------------------------------------------------------------------
// JSON

void to_json(json& j, const AttributeValue& v) {
    j = json{{"value", scalar_to_json(v.value)},
             {"unit", v.unit},
             {"observed_at", to_epoch_ms(v.observed_at)},
             {"quality", to_string(v.quality)}};
}

void from_json(const json& j, AttributeValue& v) {
    v.value = scalar_from_json(j.at("value"));
    v.unit = j.value("unit", std::string{});
    v.observed_at = from_epoch_ms(j.value("observed_at", std::int64_t{0}));
    v.quality = j.contains("quality") ? quality_from_string(j.at("quality").get<std::string>()) : Quality::Raw;
}

void to_json(json& j, const EntityRecord& r) {
    json attrs = json::object();
    for (const auto& [name, value] : r.attributes) {
        attrs[name] = value;
    }
    j = json{{"id", r.id},
             {"type", r.entity_type},
             {"attributes", attrs},
             {"created_at", to_epoch_ms(r.created_at)},
             {"updated_at", to_epoch_ms(r.updated_at)},
             {"version", r.version}};
    if (r.deleted) {
        j["deleted"] = true;
    }
}

void from_json(const json& j, EntityRecord& r) {
    r.id = j.at("id").get<std::string>();
    r.entity_type = j.value("type", std::string{"Custom"});
    r.attributes.clear();
    if (j.contains("attributes")) {
        for (const auto& [name, value] : j.at("attributes").items()) {
            r.attributes[name] = value.get<AttributeValue>();
        }
    }
}

std::string_view to_string(LifecycleState s) {
    switch (s) {
    case LifecycleState::Registered: return "Registered";
    case LifecycleState::Bootstrapping: return "Bootstrapping";
    case LifecycleState::Connected: return "Connected";
    case LifecycleState::Disconnected: return "Disconnected";
    }
    return "Registered";
}

bool lifecycle_transition_allowed(LifecycleState from, LifecycleState to) {
    using S = LifecycleState;
    return (from == S::Registered && to == S::Bootstrapping) || (from == S::Bootstrapping && to == S::Connected) ||
           (from == S::Connected && to == S::Disconnected) || (from == S::Disconnected && to == S::Connected);
}

void to_json(json& j, const AttributePredicate& p) {
    j = json{{"attribute", p.attribute}, {"op", to_string(p.comparator)}, {"value", scalar_to_json(p.literal)}};
}

void from_json(const json& j, AttributePredicate& p) {
    p.attribute = j.at("attribute").get<std::string>();
    p.comparator = comparator_from_string(j.value("op", std::string{"="}));
    p.literal = scalar_from_json(j.at("value"));
}

void to_json(json& j, const EntityFilter& f) {
    j = json::object();
    if (f.entity_type) j["type"] = *f.entity_type;
    if (!f.predicates.empty()) j["where"] = f.predicates;
    if (f.ids) j["ids"] = *f.ids;
}

void from_json(const json& j, EntityFilter& f) {
    f = {};
    if (j.contains("type") && !j.at("type").is_null()) f.entity_type = j.at("type").get<std::string>();
    if (j.contains("where")) f.predicates = j.at("where").get<std::vector<AttributePredicate>>();
    if (j.contains("ids") && !j.at("ids").is_null()) f.ids = j.at("ids").get<std::set<std::string>>();
}

bool matches(const EntityRecord& r, const EntityFilter& f) {
    if (r.deleted) return false;
    if (f.entity_type && r.entity_type != *f.entity_type) return false;
    if (f.ids && !f.ids->contains(r.id)) return false;
    for (const auto& p : f.predicates) {
        auto it = r.attributes.find(p.attribute);
        if (it == r.attributes.end()) return false;
        if (!compare_scalars(it->second.value, p.comparator, p.literal)) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// NotificationBus

NotificationBus::NotificationBus(DeliveryMode mode) : mode_(mode) {
    if (mode_ == DeliveryMode::Queued) {
        worker_ = std::thread([this] { worker_loop(); });
    }
}

NotificationBus::~NotificationBus() {
    {
        std::lock_guard lock(mu_);
        stopping_ = true;
    }
    cv_.notify_all();
    if (worker_.joinable()) {
        worker_.join();
    }
}

void NotificationBus::enqueue(NotificationSink sink, Notification n) {
    {
        std::lock_guard lock(mu_);
        queue_.push_back(Item{std::move(sink), std::move(n)});
    }
    if (mode_ == DeliveryMode::Queued) {
        cv_.notify_one();
    }
}

void NotificationBus::pump() {
    if (mode_ != DeliveryMode::Inline) return;
    std::unique_lock lock(mu_);
    if (delivering_) return;
    drain(lock);
}

void NotificationBus::drain(std::unique_lock<std::mutex>& lock) {
    delivering_ = true;
    while (!queue_.empty()) {
        Item item = std::move(queue_.front());
        queue_.pop_front();
        lock.unlock();
        try {
            item.sink(item.notification);
        } catch (...) {
            // A failing sink must not stall delivery to the others.
        }
        lock.lock();
    }
    delivering_ = false;
    idle_cv_.notify_all();
}

void NotificationBus::worker_loop() {
    std::unique_lock lock(mu_);
    while (true) {
        cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
        if (!queue_.empty()) {
            drain(lock);
        }
        if (stopping_ && queue_.empty()) {
            return;
        }
    }
}

void NotificationBus::wait_idle() {
    if (mode_ == DeliveryMode::Inline) {
        pump();
    }
    std::unique_lock lock(mu_);
    idle_cv_.wait(lock, [this] { return queue_.empty() && !delivering_; });
}

// ---------------------------------------------------------------------------
// ContextBroker

namespace {

bool valid_id(const std::string& id) {
    if (id.empty() || id.size() > 256) return false;
    return std::all_of(id.begin(), id.end(), [](unsigned char c) {
        return std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == ':' || c == '/' || c == '@';
    });
}

bool is_node_type(const std::string& type) { return type == "SensorNode" || type == "Door"; }

std::string substitute(std::string text, std::string_view key, const std::string& value) {
    for (auto pos = text.find(key); pos != std::string::npos; pos = text.find(key, pos + value.size())) {
        text.replace(pos, key.size(), value);
    }
    return text;
}

} // namespace

ContextBroker::ContextBroker(const Clock& clock, BrokerConfig config)
    : clock_(clock), config_(std::move(config)), bus_(config_.delivery) {}

void ContextBroker::validate_attribute(const std::string& name, const AttributeValue& v, TimePoint now) const {
    if (name.empty() || name.front() == '@') {
        fail(ErrorCode::MalformedId, "attribute name '" + name + "' is not allowed");
    }
    if (const auto* d = std::get_if<double>(&v.value)) {
        if (!std::isfinite(*d)) {
            fail(ErrorCode::NonFiniteValue, "attribute '" + name + "' is not finite");
        }
        if (v.unit.empty() && !config_.unitless_attributes.contains(name)) {
            fail(ErrorCode::AttributeWithoutUnit, "numeric attribute '" + name + "' has no unit");
        }
    }
    if (v.observed_at > now + config_.max_future_skew) {
        fail(ErrorCode::FutureTimestamp, "attribute '" + name + "' observed in the future beyond the skew bound");
    }
}

void ContextBroker::emit_locked(const std::vector<Pending>& changes) {
    for (const auto& change : changes) {
        for (const auto& [sid, sub] : subscriptions_) {
            if (!sub.active) continue;
            const auto& sel = sub.selector;
            if (sel.entity_type && *sel.entity_type != change.entity_type) continue;
            if (sel.ids && !sel.ids->contains(change.entity_id)) continue;
            if (!sel.attributes.empty() && !sel.attributes.contains(change.attribute)) continue;
            bus_.enqueue(sub.sink, Notification{sid, change.entity_id, change.attribute, change.old_value,
                                                change.new_value, change.version});
        }
    }
}

void ContextBroker::ensure_lifecycle_locked(const EntityRecord& r) {
    if (!is_node_type(r.entity_type)) return;
    Duration period = config_.default_reporting_period;
    if (auto it = r.attributes.find("reporting_period"); it != r.attributes.end()) {
        if (auto secs = as_number(it->second.value); secs && *secs > 0) {
            period = Duration{static_cast<std::int64_t>(*secs * 1000.0)};
        }
    }
    auto [it, inserted] = nodes_.try_emplace(r.id);
    auto& node = it->second;
    node.node_id = r.id;
    node.reporting_period = period;
    node.liveness_timeout = period * config_.liveness_factor;
    if (inserted) {
        node.config_commands.clear();
        if (auto p = config_.bootstrap_policies.find(r.entity_type); p != config_.bootstrap_policies.end()) {
            const auto period_s = std::to_string(period.count() / 1000);
            for (const auto& cmd : p->second) {
                node.config_commands.push_back(substitute(substitute(cmd, "{id}", r.id), "{period}", period_s));
            }
        }
    }
}

std::uint64_t ContextBroker::upsert_entity(EntityRecord record) {
    if (!valid_id(record.id)) {
        fail(ErrorCode::MalformedId, "entity id '" + record.id + "' is malformed");
    }
    if (!known_entity_types().contains(record.entity_type)) {
        fail(ErrorCode::UnknownEntityType, "entity type '" + record.entity_type + "' is not known");
    }
    const auto now = clock_.now();
    for (const auto& [name, value] : record.attributes) {
        validate_attribute(name, value, now);
    }

    std::vector<Pending> changes;
    std::uint64_t version = 0;
    {
        std::unique_lock lock(mu_);
        auto it = entities_.find(record.id);
        TimePoint latest = now;
        for (const auto& [name, value] : record.attributes) {
            latest = std::max(latest, value.observed_at);
        }
        version = next_version_++;
        if (it == entities_.end()) {
            record.created_at = now;
            record.updated_at = latest;
            record.version = version;
            record.deleted = false;
            for (const auto& [name, value] : record.attributes) {
                changes.push_back({record.id, name, std::nullopt, value, version, record.entity_type});
            }
            ensure_lifecycle_locked(record);
            entities_.emplace(record.id, record);
        } else {
            auto& existing = it->second;
            for (const auto& [name, value] : record.attributes) {
                auto old = existing.attributes.find(name);
                if (old != existing.attributes.end() && value.observed_at < old->second.observed_at) {
                    fail(ErrorCode::StaleTimestamp, "attribute '" + name + "' is older than the stored value");
                }
            }
            for (const auto& [name, value] : record.attributes) {
                auto old = existing.attributes.find(name);
                if (old == existing.attributes.end()) {
                    changes.push_back({record.id, name, std::nullopt, value, version, record.entity_type});
                } else if (!(old->second == value)) {
                    changes.push_back({record.id, name, old->second, value, version, record.entity_type});
                }
            }
            for (const auto& [name, value] : existing.attributes) {
                if (!record.attributes.contains(name)) {
                    changes.push_back({record.id, name, value, std::nullopt, version, record.entity_type});
                }
            }
            record.created_at = existing.created_at;
            record.updated_at = std::max(latest, existing.updated_at);
            record.version = version;
            record.deleted = false;
            existing = record;
            ensure_lifecycle_locked(existing);
        }
        emit_locked(changes);
    }
    bus_.pump();
    return version;
}

EntityRecord ContextBroker::update_attributes(const std::string& id,
                                              const std::map<std::string, AttributeValue>& patch) {
    const auto now = clock_.now();
    for (const auto& [name, value] : patch) {
        validate_attribute(name, value, now);
    }
    EntityRecord result;
    {
        std::unique_lock lock(mu_);
        auto it = entities_.find(id);
        if (it == entities_.end() || it->second.deleted) {
            fail(ErrorCode::UnknownEntity, "entity '" + id + "' does not exist");
        }
        auto& rec = it->second;
        for (const auto& [name, value] : patch) {
            auto old = rec.attributes.find(name);
            if (old != rec.attributes.end() && value.observed_at < old->second.observed_at) {
                fail(ErrorCode::StaleTimestamp, "attribute '" + name + "' is older than the stored value");
            }
        }
        std::vector<Pending> changes;
        const auto version = next_version_++;
        TimePoint latest = now;
        for (const auto& [name, value] : patch) {
            latest = std::max(latest, value.observed_at);
            auto old = rec.attributes.find(name);
            if (old == rec.attributes.end()) {
                changes.push_back({id, name, std::nullopt, value, version, rec.entity_type});
                rec.attributes.emplace(name, value);
            } else if (!(old->second == value)) {
                changes.push_back({id, name, old->second, value, version, rec.entity_type});
                old->second = value;
            }
        }
        rec.version = version;
        rec.updated_at = std::max(latest, rec.updated_at);
        if (patch.contains("reporting_period")) {
            ensure_lifecycle_locked(rec);
        }
        emit_locked(changes);
        result = rec;
    }
    bus_.pump();
    return result;
}

EntityRecord ContextBroker::remove_attributes(const std::string& id, const std::set<std::string>& names) {
    EntityRecord result;
    {
        std::unique_lock lock(mu_);
        auto it = entities_.find(id);
        if (it == entities_.end() || it->second.deleted) {
            fail(ErrorCode::UnknownEntity, "entity '" + id + "' does not exist");
        }
        auto& rec = it->second;
        std::vector<Pending> changes;
        const auto version = next_version_++;
        for (const auto& name : names) {
            auto old = rec.attributes.find(name);
            if (old == rec.attributes.end()) continue;
            changes.push_back({id, name, old->second, std::nullopt, version, rec.entity_type});
            rec.attributes.erase(old);
        }
        rec.version = version;
        rec.updated_at = std::max(clock_.now(), rec.updated_at);
        emit_locked(changes);
        result = rec;
    }
    bus_.pump();
    return result;
}

void ContextBroker::delete_entity(const std::string& id) {
    std::unique_lock lock(mu_);
    auto it = entities_.find(id);
    if (it == entities_.end() || it->second.deleted) {
        fail(ErrorCode::UnknownEntity, "entity '" + id + "' does not exist");
    }
    it->second.deleted = true;
    it->second.version = next_version_++;
    it->second.updated_at = std::max(clock_.now(), it->second.updated_at);
}

EntityRecord ContextBroker::get_entity(const std::string& id, bool include_deleted) const {
    std::shared_lock lock(mu_);
    auto it = entities_.find(id);
    if (it == entities_.end() || (it->second.deleted && !include_deleted)) {
        fail(ErrorCode::UnknownEntity, "entity '" + id + "' does not exist");
    }
    return it->second;
}

std::optional<EntityRecord> ContextBroker::find_entity(const std::string& id) const {
    std::shared_lock lock(mu_);
    auto it = entities_.find(id);
    if (it == entities_.end() || it->second.deleted) return std::nullopt;
    return it->second;
}

std::vector<EntityRecord> ContextBroker::query_entities(const EntityFilter& filter) const {
    std::shared_lock lock(mu_);
    std::vector<EntityRecord> out;
    for (const auto& [id, rec] : entities_) {
        if (matches(rec, filter)) {
            out.push_back(rec);
        }
    }
    return out;
}

std::uint64_t ContextBroker::subscribe(Subscription sub) {
    std::unique_lock lock(mu_);
    sub.id = next_subscription_++;
    const auto id = sub.id;
    subscriptions_.emplace(id, std::move(sub));
    return id;
}

void ContextBroker::unsubscribe(std::uint64_t id) {
    std::unique_lock lock(mu_);
    if (subscriptions_.erase(id) == 0) {
        fail(ErrorCode::UnknownSubscription, "subscription " + std::to_string(id) + " does not exist");
    }
}

bool ContextBroker::transition_locked(NodeLifecycle& node, LifecycleState to, const std::string& entity_type,
                                      std::vector<Pending>& out) {
    if (!lifecycle_transition_allowed(node.state, to)) {
        return false;
    }
    const auto version = next_version_++;
    const auto at = node.last_seen.value_or(clock_.now());
    AttributeValue before{std::string(to_string(node.state)), "", at, Quality::Derived};
    AttributeValue after{std::string(to_string(to)), "", at, Quality::Derived};
    node.state = to;
    node.history.push_back(to);
    out.push_back({node.node_id, std::string(kLifecycleAttribute), before, after, version, entity_type});
    return true;
}

std::vector<std::string> ContextBroker::begin_bootstrap(const std::string& node_id) {
    std::vector<std::string> commands;
    {
        std::unique_lock lock(mu_);
        auto it = nodes_.find(node_id);
        if (it == nodes_.end()) {
            fail(ErrorCode::UnknownEntity, "node '" + node_id + "' is not registered");
        }
        std::vector<Pending> changes;
        transition_locked(it->second, LifecycleState::Bootstrapping, entities_.at(node_id).entity_type, changes);
        emit_locked(changes);
        commands = it->second.config_commands;
    }
    bus_.pump();
    return commands;
}

NodeLifecycle ContextBroker::mark_liveness(const std::string& node_id, TimePoint seen_at) {
    NodeLifecycle result;
    {
        std::unique_lock lock(mu_);
        auto it = nodes_.find(node_id);
        if (it == nodes_.end()) {
            fail(ErrorCode::UnknownEntity, "node '" + node_id + "' is not registered");
        }
        auto& node = it->second;
        node.last_seen = node.last_seen ? std::max(*node.last_seen, seen_at) : seen_at;
        const auto& type = entities_.at(node_id).entity_type;
        std::vector<Pending> changes;
        if (node.state == LifecycleState::Registered) {
            transition_locked(node, LifecycleState::Bootstrapping, type, changes);
        }
        if (node.state != LifecycleState::Connected) {
            transition_locked(node, LifecycleState::Connected, type, changes);
        }
        emit_locked(changes);
        result = node;
    }
    bus_.pump();
    return result;
}

std::vector<std::string> ContextBroker::sweep_liveness(TimePoint now) {
    std::vector<std::string> transitioned;
    {
        std::unique_lock lock(mu_);
        std::vector<Pending> changes;
        for (auto& [id, node] : nodes_) {
            if (node.state != LifecycleState::Connected || !node.last_seen) continue;
            if (now - *node.last_seen > node.liveness_timeout) {
                transition_locked(node, LifecycleState::Disconnected, entities_.at(id).entity_type, changes);
                transitioned.push_back(id);
            }
        }
        emit_locked(changes);
    }
    bus_.pump();
    return transitioned;
}

std::optional<NodeLifecycle> ContextBroker::lifecycle(const std::string& node_id) const {
    std::shared_lock lock(mu_);
    auto it = nodes_.find(node_id);
    if (it == nodes_.end()) return std::nullopt;
    return it->second;
}

bool ContextBroker::has_lifecycle(const std::string& node_id) const {
    std::shared_lock lock(mu_);
    return nodes_.contains(node_id);
}

void DedupSink::operator()(const Notification& n) {
    {
        std::lock_guard lock(mu_);
        if (!seen_.emplace(n.entity_id, n.attribute, n.version).second) return;
    }
    inner_(n);
}

} // namespace entropy::broker
