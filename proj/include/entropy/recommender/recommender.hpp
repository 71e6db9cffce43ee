#pragma once

#include "entropy/broker/context_broker.hpp"
#include "entropy/fusion/document_store.hpp"
#include "entropy/fusion/mapping.hpp"
#include "entropy/recommender/groups.hpp"
#include "entropy/stream/stream_processor.hpp"

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace entropy::recommender {

struct UserProfile {
    std::string user_id;
    /// "age_band", "role", ...
    std::map<std::string, std::string> demographics;
    /// Asserted preference classes, local names ("Reward").
    std::set<std::string> preferences;
    /// Materialized from accepted-feedback evidence.
    std::set<std::string> derived_preferences;
    std::optional<std::string> gamer_type;
    std::set<std::string> asserted_groups;
    /// Recomputed from preferences and derived_preferences; never overlaps asserted_groups.
    std::set<std::string> inferred_groups;
    std::set<std::string> activity_locations;
    /// Badge -> times the action was validated.
    std::map<std::string, int> action_counters;
    /// Preference theme -> accepted recommendations carrying it.
    std::map<std::string, int> preference_evidence;

    /// asserted ∪ inferred, plus the stored gamer type.
    std::set<std::string> groups() const;
    std::set<std::string> all_preferences() const;
};

void to_json(json& j, const UserProfile& p);
void from_json(const json& j, UserProfile& p);

enum class RecommendationKind { Task, Message, Quiz };
enum class RecState { Pending, Delivered, Accepted, Rejected, Validated, Failed, Expired };

std::string_view to_string(RecommendationKind k);
RecommendationKind recommendation_kind_from_string(std::string_view s);
std::string_view to_string(RecState s);
RecState rec_state_from_string(std::string_view s);

/// Pending -> Delivered -> {Accepted, Rejected, Validated, Failed, Expired}.
bool transition_allowed(RecState from, RecState to);
bool is_terminal(RecState s);

struct ValidationSpec {
    /// Involved building object, e.g. a Door entity.
    std::string object_id;
    std::string action_attribute = "open";
    Scalar action_value = true;
    Duration window = std::chrono::minutes(30);
    /// Effect holds below this metric value; the condition threshold when unset.
    std::optional<double> effect_threshold;
    /// Effect also holds after a drop of at least this fraction of the triggering value.
    double relative_drop = 0.10;
};

void to_json(json& j, const ValidationSpec& v);
void from_json(const json& j, ValidationSpec& v);

struct RuleSpec {
    /// Assigned as "rule-N" when empty.
    std::string id;
    std::string condition_id;
    std::vector<std::string> groups;
    RecommendationKind kind = RecommendationKind::Message;
    /// Gamer type (or "default") -> template; "{N}" expands to the remaining action count.
    std::map<std::string, std::string> templates;
    std::optional<ValidationSpec> validation;
    int n_required = 5;
    /// Action counter key; the rule id when empty.
    std::string badge;
    /// Preference class credited by accepted feedback.
    std::optional<std::string> theme;
    /// Per-(rule, user) dedup window; the condition's cooldown when unset.
    std::optional<Duration> cooldown;
    /// Message, Quiz and unvalidated Task lifetime after delivery.
    Duration expires_after = std::chrono::hours(24);
};

void to_json(json& j, const RuleSpec& r);
void from_json(const json& j, RuleSpec& r);

struct RuleInfo {
    RuleSpec spec;
    std::string stream_id;
    /// Building space the condition's stream observes.
    std::string space;
    Duration cooldown{};
    double threshold = 0.0;
    Comparator comparator = Comparator::Gt;
};

void to_json(json& j, const RuleInfo& r);

enum class FeedbackKind { Accept, Reject, Answer };

std::string_view to_string(FeedbackKind k);
FeedbackKind feedback_kind_from_string(std::string_view s);

struct Feedback {
    FeedbackKind kind = FeedbackKind::Accept;
    std::optional<std::string> answer;
    TimePoint at{};
};

struct Recommendation {
    std::string id;
    std::string rule_id;
    std::string user_id;
    RecommendationKind kind = RecommendationKind::Message;
    std::string content;
    RecState state = RecState::Pending;
    TimePoint created_at{};
    std::optional<TimePoint> delivered_at;
    /// Task validation window end, or expiry for the other kinds.
    std::optional<TimePoint> deadline;
    std::optional<TimePoint> resolved_at;
    std::string space;
    std::optional<double> trigger_value;
    std::optional<Feedback> feedback;
};

void to_json(json& j, const Recommendation& r);

struct RecEvent {
    std::uint64_t seq = 0;
    std::string recommendation_id;
    std::string user_id;
    std::optional<RecState> from;
    RecState to = RecState::Pending;
    TimePoint at{};
    std::string detail;
};

void to_json(json& j, const RecEvent& e);

enum class ValidationOutcome { Validated, Failed, Pending };

std::string_view to_string(ValidationOutcome o);

struct RecommenderConfig {
    std::vector<std::string> gamer_type_precedence = default_gamer_type_precedence();
    /// Accepted recommendations per theme before the preference is materialized.
    int evidence_threshold = 3;
    Duration validation_window = std::chrono::minutes(30);
    double relative_drop = 0.10;
};

/// Substitutes every "{N}".
std::string render_template(std::string_view tmpl, int remaining);

/// The CO2 ventilation texts for Humanitarian, Socialiser and FreeSpirit.
std::map<std::string, std::string> ventilation_templates();

fusion::SourceRecord source_from_profile(const UserProfile& p, TimePoint at);
fusion::SourceRecord source_from_recommendation(const Recommendation& r, std::optional<std::string> theme);
fusion::SourceRecord source_from_feedback(const Recommendation& r, const Feedback& f);

/// Condition-action engine over stream-processor context changes.
class Recommender {
public:
    using Listener = std::function<void(const Recommendation&)>;

    /// Enricher and store may be null; documents are then not emitted.
    Recommender(broker::ContextBroker& broker, stream::StreamProcessor& processor, RecommenderConfig config = {},
                const fusion::Enricher* enricher = nullptr, fusion::DocumentStore* documents = nullptr);
    ~Recommender();
    Recommender(const Recommender&) = delete;
    Recommender& operator=(const Recommender&) = delete;

    const RecommenderConfig& config() const { return config_; }

    void register_group(GroupDefinition def);
    std::vector<GroupDefinition> group_definitions() const;

    /// Recomputes inferred groups; counters and evidence of an existing profile are kept
    /// unless the new profile sets them.
    UserProfile upsert_user(UserProfile profile, TimePoint at);
    UserProfile user(const std::string& id) const;
    std::vector<UserProfile> users() const;

    std::string register_rule(RuleSpec spec);
    RuleInfo rule(const std::string& id) const;
    std::vector<RuleInfo> rules() const;

    /// One recommendation per targeted user outside the (rule, user) cooldown.
    std::vector<Recommendation> on_condition_fired(const std::string& rule_id, const stream::ContextChange& change);
    /// Highest-precedence gamer type with a template, else "default".
    std::string select_content(const RuleSpec& rule, const UserProfile& profile) const;
    std::optional<std::string> gamer_type_of(const UserProfile& profile) const;

    Recommendation record_feedback(const std::string& rec_id, Feedback feedback);
    ValidationOutcome validate_task(const std::string& rec_id, TimePoint now);
    /// Validates open Tasks and expires overdue ones. Returns the number of state changes.
    std::size_t sweep(TimePoint now);

    Recommendation recommendation(const std::string& id) const;
    std::vector<Recommendation> recommendations(const std::optional<std::string>& user = std::nullopt,
                                                const std::optional<RecState>& state = std::nullopt) const;
    std::vector<RecEvent> events() const;

    /// Called after each state change, outside engine locks.
    void on_change(Listener l);

private:
    struct Observation {
        TimePoint at;
        Scalar value;
    };

    void recompute_inferred(UserProfile& p) const;
    void transition(Recommendation& r, RecState to, TimePoint at, std::string detail, std::vector<Recommendation>& out);
    ValidationOutcome validate_locked(Recommendation& r, TimePoint now, std::vector<Recommendation>& changed);
    void emit_document(const fusion::SourceRecord& rec);
    void notify(const std::vector<Recommendation>& changed);
    std::string resolve_space(const std::string& selector) const;
    void watch_object(const std::string& object_id, const std::string& attribute);

    broker::ContextBroker& broker_;
    stream::StreamProcessor& processor_;
    RecommenderConfig config_;
    const fusion::Enricher* enricher_;
    fusion::DocumentStore* documents_;
    std::shared_ptr<int> alive_ = std::make_shared<int>(0);

    mutable std::mutex mu_;
    std::vector<GroupDefinition> groups_;
    std::map<std::string, UserProfile> users_;
    std::map<std::string, RuleInfo> rules_;
    std::map<std::string, Recommendation> recs_;
    std::map<std::pair<std::string, std::string>, TimePoint> last_created_;
    std::map<std::string, std::vector<Observation>> observations_; // keyed "object/attribute"
    std::vector<std::uint64_t> subscriptions_;
    std::vector<RecEvent> events_;
    std::vector<Listener> listeners_;
    std::uint64_t next_rule_ = 1;
    std::uint64_t next_rec_ = 1;
    std::uint64_t next_seq_ = 1;
};

} // namespace entropy::recommender
