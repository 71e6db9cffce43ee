#pragma once

#include "entropy/broker/context_broker.hpp"

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

namespace entropy::composite {

enum class CompositeFn { Avg, Min, Max, Sum, Any, All };

std::string_view to_string(CompositeFn fn);
CompositeFn composite_fn_from_string(std::string_view s);

/// Fold over member values. Avg/Min/Max/Sum skip non-numeric values; Any/All use truthiness.
std::optional<Scalar> fold(CompositeFn fn, const std::vector<Scalar>& values);

struct CompositeSpec {
    std::string composite_id;
    /// Used when the composite entity does not exist yet.
    std::string entity_type = "Room";
    /// Explicit membership; when empty, members are every entity matching member_filter.
    std::vector<std::string> member_ids;
    broker::EntityFilter member_filter;
    std::map<std::string, CompositeFn> attributes;
};

void to_json(json& j, const CompositeSpec& s);
void from_json(const json& j, CompositeSpec& s);

/// Maintains broker entities whose attributes fold the current values of their live members.
class CompositeEngine {
public:
    explicit CompositeEngine(broker::ContextBroker& broker);
    ~CompositeEngine();
    CompositeEngine(const CompositeEngine&) = delete;
    CompositeEngine& operator=(const CompositeEngine&) = delete;

    /// Creates or replaces the definition and refreshes it once. Throws cycle-detected.
    std::string define_composite(CompositeSpec spec);
    broker::EntityRecord refresh(const std::string& composite_id);

    bool is_composite(const std::string& id) const;
    CompositeSpec spec(const std::string& composite_id) const;
    std::vector<CompositeSpec> composites() const;
    /// Members resolved at the last refresh, including disconnected ones.
    std::vector<std::string> members(const std::string& composite_id) const;
    /// Members that contributed to the last refresh.
    std::vector<std::string> live_members(const std::string& composite_id) const;

private:
    struct Composite {
        CompositeSpec spec;
        std::mutex refresh_mu;
        /// Guards members and live; never held while calling the broker.
        mutable std::mutex members_mu;
        std::set<std::string> members;
        std::set<std::string> live;
    };

    std::shared_ptr<Composite> find(const std::string& id) const;
    std::set<std::string> resolve_members(const CompositeSpec& spec) const;
    bool reaches(const std::string& from, const std::string& target, std::set<std::string>& seen) const;
    bool is_live(const std::string& id) const;
    void on_notification(const broker::Notification& n);

    broker::ContextBroker& broker_;
    std::uint64_t subscription_ = 0;
    mutable std::shared_mutex mu_;
    std::map<std::string, std::shared_ptr<Composite>> composites_;
};

} // namespace entropy::composite
