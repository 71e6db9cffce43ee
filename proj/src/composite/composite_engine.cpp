#include "entropy/composite/composite_engine.hpp"

#include "entropy/core/error.hpp"

#include <algorithm>

namespace entropy::composite {

std::string_view to_string(CompositeFn fn) {
    switch (fn) {
    case CompositeFn::Avg: return "Avg";
    case CompositeFn::Min: return "Min";
    case CompositeFn::Max: return "Max";
    case CompositeFn::Sum: return "Sum";
    case CompositeFn::Any: return "Any";
    case CompositeFn::All: return "All";
    }
    return "Avg";
}

CompositeFn composite_fn_from_string(std::string_view s) {
    for (auto fn : {CompositeFn::Avg, CompositeFn::Min, CompositeFn::Max, CompositeFn::Sum, CompositeFn::Any,
                    CompositeFn::All}) {
        if (s == to_string(fn)) return fn;
    }
    fail(ErrorCode::InvalidSpec, "unknown composite function '" + std::string(s) + "'");
}

std::optional<Scalar> fold(CompositeFn fn, const std::vector<Scalar>& values) {
    if (fn == CompositeFn::Any || fn == CompositeFn::All) {
        if (values.empty()) return std::nullopt;
        const bool any = std::any_of(values.begin(), values.end(), truthy);
        const bool all = std::all_of(values.begin(), values.end(), truthy);
        return Scalar{fn == CompositeFn::Any ? any : all};
    }
    std::vector<double> xs;
    for (const auto& v : values) {
        if (auto d = as_number(v)) xs.push_back(*d);
    }
    if (xs.empty()) return std::nullopt;
    switch (fn) {
    case CompositeFn::Min: return Scalar{*std::min_element(xs.begin(), xs.end())};
    case CompositeFn::Max: return Scalar{*std::max_element(xs.begin(), xs.end())};
    case CompositeFn::Sum:
    case CompositeFn::Avg: {
        double sum = 0;
        for (double x : xs) sum += x;
        return Scalar{fn == CompositeFn::Sum ? sum : sum / static_cast<double>(xs.size())};
    }
    default: return std::nullopt;
    }
}

void to_json(json& j, const CompositeSpec& s) {
    j = json{{"composite_id", s.composite_id}, {"type", s.entity_type}};
    if (!s.member_ids.empty()) {
        j["members"] = s.member_ids;
    } else {
        j["member_filter"] = s.member_filter;
    }
    json attrs = json::object();
    for (const auto& [name, fn] : s.attributes) attrs[name] = to_string(fn);
    j["attributes"] = attrs;
}

void from_json(const json& j, CompositeSpec& s) {
    s.composite_id = j.contains("composite_id") ? j.at("composite_id").get<std::string>() : j.at("id").get<std::string>();
    s.entity_type = j.value("type", std::string{"Room"});
    s.member_ids = j.value("members", std::vector<std::string>{});
    if (j.contains("member_filter")) s.member_filter = j.at("member_filter").get<broker::EntityFilter>();
    s.attributes.clear();
    for (const auto& [name, fn] : j.at("attributes").items()) {
        s.attributes[name] = composite_fn_from_string(fn.get<std::string>());
    }
}

CompositeEngine::CompositeEngine(broker::ContextBroker& broker) : broker_(broker) {
    broker::Subscription sub;
    sub.sink_name = "composite-entities";
    sub.sink = [this](const broker::Notification& n) { on_notification(n); };
    subscription_ = broker_.subscribe(std::move(sub));
}

CompositeEngine::~CompositeEngine() { broker_.unsubscribe(subscription_); }

std::shared_ptr<CompositeEngine::Composite> CompositeEngine::find(const std::string& id) const {
    std::shared_lock lock(mu_);
    auto it = composites_.find(id);
    return it == composites_.end() ? nullptr : it->second;
}

bool CompositeEngine::is_composite(const std::string& id) const { return find(id) != nullptr; }

std::set<std::string> CompositeEngine::resolve_members(const CompositeSpec& spec) const {
    std::set<std::string> out;
    if (!spec.member_ids.empty()) {
        for (const auto& id : spec.member_ids) {
            if (broker_.find_entity(id)) out.insert(id);
        }
    } else {
        for (const auto& r : broker_.query_entities(spec.member_filter)) out.insert(r.id);
    }
    out.erase(spec.composite_id);
    return out;
}

bool CompositeEngine::reaches(const std::string& from, const std::string& target, std::set<std::string>& seen) const {
    if (from == target) return true;
    if (!seen.insert(from).second) return false;
    auto c = find(from);
    if (!c) return false;
    std::set<std::string> next;
    {
        std::lock_guard lock(c->members_mu);
        next = c->members;
    }
    next.insert(c->spec.member_ids.begin(), c->spec.member_ids.end());
    return std::any_of(next.begin(), next.end(), [&](const auto& m) { return reaches(m, target, seen); });
}

bool CompositeEngine::is_live(const std::string& id) const {
    const auto node = broker_.lifecycle(id);
    return !node || node->state != broker::LifecycleState::Disconnected;
}

std::string CompositeEngine::define_composite(CompositeSpec spec) {
    if (spec.composite_id.empty()) fail(ErrorCode::MalformedId, "composite id is empty");
    if (spec.attributes.empty()) fail(ErrorCode::InvalidSpec, "composite maps no attributes");
    for (const auto& id : spec.member_ids) {
        if (id == spec.composite_id) fail(ErrorCode::CycleDetected, "composite '" + id + "' lists itself as a member");
        if (!broker_.find_entity(id)) fail(ErrorCode::UnknownEntity, "member '" + id + "' is not registered");
    }
    auto candidates = resolve_members(spec);
    candidates.insert(spec.member_ids.begin(), spec.member_ids.end());
    for (const auto& m : candidates) {
        std::set<std::string> seen;
        if (reaches(m, spec.composite_id, seen)) {
            fail(ErrorCode::CycleDetected, "member '" + m + "' already aggregates '" + spec.composite_id + "'");
        }
    }
    if (!broker_.find_entity(spec.composite_id)) {
        broker::EntityRecord r;
        r.id = spec.composite_id;
        r.entity_type = spec.entity_type;
        broker_.upsert_entity(std::move(r));
    }
    auto c = std::make_shared<Composite>();
    c->spec = spec;
    {
        std::unique_lock lock(mu_);
        composites_[spec.composite_id] = c;
    }
    refresh(spec.composite_id);
    return spec.composite_id;
}

broker::EntityRecord CompositeEngine::refresh(const std::string& composite_id) {
    auto c = find(composite_id);
    if (!c) fail(ErrorCode::UnknownComposite, "no composite '" + composite_id + "'");
    std::lock_guard lock(c->refresh_mu);

    std::set<std::string> members;
    for (const auto& m : resolve_members(c->spec)) {
        std::set<std::string> seen;
        if (!reaches(m, composite_id, seen)) members.insert(m);
    }
    std::vector<broker::EntityRecord> live;
    std::set<std::string> live_ids;
    for (const auto& m : members) {
        if (!is_live(m)) continue;
        if (auto r = broker_.find_entity(m)) {
            live_ids.insert(m);
            live.push_back(std::move(*r));
        }
    }

    auto current = broker_.find_entity(composite_id);
    if (!current) {
        broker::EntityRecord r;
        r.id = composite_id;
        r.entity_type = c->spec.entity_type;
        broker_.upsert_entity(std::move(r));
        current = broker_.get_entity(composite_id);
    }

    std::map<std::string, broker::AttributeValue> patch;
    std::set<std::string> removals;
    for (const auto& [attr, fn] : c->spec.attributes) {
        std::vector<Scalar> values;
        std::string unit;
        std::optional<TimePoint> observed;
        for (const auto& r : live) {
            auto it = r.attributes.find(attr);
            if (it == r.attributes.end()) continue;
            values.push_back(it->second.value);
            if (unit.empty()) unit = it->second.unit;
            observed = observed ? std::max(*observed, it->second.observed_at) : it->second.observed_at;
        }
        const auto existing = current->attributes.find(attr);
        const auto value = fold(fn, values);
        if (!value) {
            if (existing != current->attributes.end()) removals.insert(attr);
            continue;
        }
        broker::AttributeValue next{*value, fn == CompositeFn::Any || fn == CompositeFn::All ? "" : unit, *observed,
                                    Quality::Derived};
        if (existing != current->attributes.end()) {
            next.observed_at = std::max(next.observed_at, existing->second.observed_at);
            if (existing->second == next) continue;
        }
        patch[attr] = std::move(next);
    }
    if (!removals.empty()) broker_.remove_attributes(composite_id, removals);
    if (!patch.empty()) broker_.update_attributes(composite_id, patch);
    std::lock_guard members_lock(c->members_mu);
    c->members = std::move(members);
    c->live = std::move(live_ids);
    return broker_.get_entity(composite_id);
}

CompositeSpec CompositeEngine::spec(const std::string& composite_id) const {
    auto c = find(composite_id);
    if (!c) fail(ErrorCode::UnknownComposite, "no composite '" + composite_id + "'");
    return c->spec;
}

std::vector<CompositeSpec> CompositeEngine::composites() const {
    std::shared_lock lock(mu_);
    std::vector<CompositeSpec> out;
    for (const auto& [id, c] : composites_) out.push_back(c->spec);
    return out;
}

std::vector<std::string> CompositeEngine::members(const std::string& composite_id) const {
    auto c = find(composite_id);
    if (!c) fail(ErrorCode::UnknownComposite, "no composite '" + composite_id + "'");
    std::lock_guard lock(c->members_mu);
    return {c->members.begin(), c->members.end()};
}

std::vector<std::string> CompositeEngine::live_members(const std::string& composite_id) const {
    auto c = find(composite_id);
    if (!c) fail(ErrorCode::UnknownComposite, "no composite '" + composite_id + "'");
    std::lock_guard lock(c->members_mu);
    return {c->live.begin(), c->live.end()};
}

void CompositeEngine::on_notification(const broker::Notification& n) {
    std::vector<std::shared_ptr<Composite>> all;
    {
        std::shared_lock lock(mu_);
        for (const auto& [id, c] : composites_) all.push_back(c);
    }
    std::optional<std::optional<broker::EntityRecord>> entity; // fetched lazily
    for (const auto& c : all) {
        const auto& spec = c->spec;
        if (spec.composite_id == n.entity_id) continue;
        bool relevant = false;
        if (!spec.member_ids.empty()) {
            relevant = std::find(spec.member_ids.begin(), spec.member_ids.end(), n.entity_id) != spec.member_ids.end();
        } else {
            {
                std::lock_guard lock(c->members_mu);
                relevant = c->members.contains(n.entity_id);
            }
            if (!relevant) {
                if (!entity) entity = broker_.find_entity(n.entity_id);
                relevant = *entity && broker::matches(**entity, spec.member_filter);
            }
        }
        if (!relevant) continue;
        try {
            refresh(spec.composite_id);
        } catch (const Error&) {
            // A concurrent redefinition or deletion; the next member update retries.
        }
    }
}

} // namespace entropy::composite
