#include "entropy/recommender/recommender.hpp"

#include "entropy/core/error.hpp"

#include <algorithm>

namespace entropy::recommender {

namespace {

constexpr std::string_view kDefaultTemplate = "default";

std::string template_key(std::string_view key) {
    return key == kDefaultTemplate ? std::string(kDefaultTemplate) : normalize_term(key);
}

std::uint64_t id_number(const std::string& id) {
    const auto dash = id.rfind('-');
    return dash == std::string::npos ? 0 : std::strtoull(id.c_str() + dash + 1, nullptr, 10);
}

bool same_signal(const Scalar& observed, const Scalar& expected) {
    if (const auto* b = std::get_if<bool>(&expected)) return truthy(observed) == *b;
    return compare_scalars(observed, Comparator::Eq, expected);
}

template <class E, std::size_t N>
E enum_from(std::string_view s, const E (&all)[N], std::string_view what) {
    for (auto e : all) {
        if (s == to_string(e)) return e;
    }
    fail(ErrorCode::BadRequest, "unknown " + std::string(what) + " '" + std::string(s) + "'");
}

constexpr RecommendationKind kKinds[] = {RecommendationKind::Task, RecommendationKind::Message, RecommendationKind::Quiz};
constexpr RecState kStates[] = {RecState::Pending,   RecState::Delivered, RecState::Accepted, RecState::Rejected,
                                RecState::Validated, RecState::Failed,    RecState::Expired};
constexpr FeedbackKind kFeedback[] = {FeedbackKind::Accept, FeedbackKind::Reject, FeedbackKind::Answer};

json opt_time(const std::optional<TimePoint>& t) { return t ? json(format_iso8601(*t)) : json(nullptr); }

} // namespace

std::set<std::string> UserProfile::groups() const {
    std::set<std::string> out = asserted_groups;
    out.insert(inferred_groups.begin(), inferred_groups.end());
    if (gamer_type) out.insert(*gamer_type);
    return out;
}

std::set<std::string> UserProfile::all_preferences() const {
    std::set<std::string> out = preferences;
    out.insert(derived_preferences.begin(), derived_preferences.end());
    return out;
}

void to_json(json& j, const UserProfile& p) {
    j = json{{"user_id", p.user_id},
             {"demographics", p.demographics},
             {"preferences", p.preferences},
             {"derived_preferences", p.derived_preferences},
             {"gamer_type", p.gamer_type ? json(*p.gamer_type) : json(nullptr)},
             {"asserted_groups", p.asserted_groups},
             {"inferred_groups", p.inferred_groups},
             {"activity_locations", p.activity_locations},
             {"action_counters", p.action_counters},
             {"preference_evidence", p.preference_evidence}};
}

void from_json(const json& j, UserProfile& p) {
    p.user_id = j.at("user_id").get<std::string>();
    p.demographics = j.value("demographics", std::map<std::string, std::string>{});
    p.preferences = j.value("preferences", std::set<std::string>{});
    p.derived_preferences = j.value("derived_preferences", std::set<std::string>{});
    p.gamer_type.reset();
    if (j.contains("gamer_type") && j.at("gamer_type").is_string()) p.gamer_type = j.at("gamer_type").get<std::string>();
    p.asserted_groups = j.value("asserted_groups", j.value("groups", std::set<std::string>{}));
    p.inferred_groups.clear();
    p.activity_locations = j.value("activity_locations", std::set<std::string>{});
    p.action_counters = j.value("action_counters", std::map<std::string, int>{});
    p.preference_evidence = j.value("preference_evidence", std::map<std::string, int>{});
}

std::string_view to_string(RecommendationKind k) {
    switch (k) {
    case RecommendationKind::Task: return "Task";
    case RecommendationKind::Message: return "Message";
    case RecommendationKind::Quiz: return "Quiz";
    }
    return "Message";
}

RecommendationKind recommendation_kind_from_string(std::string_view s) { return enum_from(s, kKinds, "kind"); }

std::string_view to_string(RecState s) {
    switch (s) {
    case RecState::Pending: return "Pending";
    case RecState::Delivered: return "Delivered";
    case RecState::Accepted: return "Accepted";
    case RecState::Rejected: return "Rejected";
    case RecState::Validated: return "Validated";
    case RecState::Failed: return "Failed";
    case RecState::Expired: return "Expired";
    }
    return "Pending";
}

RecState rec_state_from_string(std::string_view s) { return enum_from(s, kStates, "state"); }

bool transition_allowed(RecState from, RecState to) {
    if (from == RecState::Pending) return to == RecState::Delivered;
    if (from == RecState::Delivered) return is_terminal(to);
    return false;
}

bool is_terminal(RecState s) { return s != RecState::Pending && s != RecState::Delivered; }

std::string_view to_string(FeedbackKind k) {
    switch (k) {
    case FeedbackKind::Accept: return "Accept";
    case FeedbackKind::Reject: return "Reject";
    case FeedbackKind::Answer: return "Answer";
    }
    return "Accept";
}

FeedbackKind feedback_kind_from_string(std::string_view s) { return enum_from(s, kFeedback, "feedback kind"); }

std::string_view to_string(ValidationOutcome o) {
    switch (o) {
    case ValidationOutcome::Validated: return "Validated";
    case ValidationOutcome::Failed: return "Failed";
    case ValidationOutcome::Pending: return "Pending";
    }
    return "Pending";
}

void to_json(json& j, const ValidationSpec& v) {
    j = json{{"object_id", v.object_id},
             {"action_attribute", v.action_attribute},
             {"action_value", scalar_to_json(v.action_value)},
             {"window", duration_to_json(v.window)},
             {"relative_drop", v.relative_drop}};
    if (v.effect_threshold) j["effect_threshold"] = *v.effect_threshold;
}

void from_json(const json& j, ValidationSpec& v) {
    v.object_id = j.at("object_id").get<std::string>();
    v.action_attribute = j.value("action_attribute", std::string{"open"});
    v.action_value = j.contains("action_value") ? scalar_from_json(j.at("action_value")) : Scalar{true};
    if (j.contains("window")) v.window = duration_from_json(j.at("window"));
    v.effect_threshold.reset();
    if (j.contains("effect_threshold") && !j.at("effect_threshold").is_null()) {
        v.effect_threshold = j.at("effect_threshold").get<double>();
    }
    v.relative_drop = j.value("relative_drop", 0.10);
}

void to_json(json& j, const RuleSpec& r) {
    j = json{{"id", r.id},
             {"condition", r.condition_id},
             {"groups", r.groups},
             {"kind", to_string(r.kind)},
             {"templates", r.templates},
             {"n_required", r.n_required},
             {"badge", r.badge},
             {"expires_after", duration_to_json(r.expires_after)}};
    if (r.validation) j["validation"] = *r.validation;
    if (r.theme) j["theme"] = *r.theme;
    if (r.cooldown) j["cooldown"] = duration_to_json(*r.cooldown);
}

void from_json(const json& j, RuleSpec& r) {
    r.id = j.value("id", std::string{});
    r.condition_id = j.at("condition").get<std::string>();
    r.groups = j.at("groups").get<std::vector<std::string>>();
    r.kind = recommendation_kind_from_string(j.value("kind", std::string{"Message"}));
    r.templates = j.at("templates").get<std::map<std::string, std::string>>();
    r.validation.reset();
    if (j.contains("validation") && !j.at("validation").is_null()) r.validation = j.at("validation").get<ValidationSpec>();
    r.n_required = j.value("n_required", 5);
    r.badge = j.value("badge", std::string{});
    r.theme.reset();
    if (j.contains("theme") && j.at("theme").is_string()) r.theme = j.at("theme").get<std::string>();
    r.cooldown.reset();
    if (j.contains("cooldown") && !j.at("cooldown").is_null()) r.cooldown = duration_from_json(j.at("cooldown"));
    if (j.contains("expires_after")) r.expires_after = duration_from_json(j.at("expires_after"));
}

void to_json(json& j, const RuleInfo& r) {
    j = r.spec;
    j["stream_id"] = r.stream_id;
    j["space"] = r.space;
    j["cooldown"] = duration_to_json(r.cooldown);
    j["threshold"] = r.threshold;
    j["comparator"] = to_string(r.comparator);
}

void to_json(json& j, const Recommendation& r) {
    j = json{{"id", r.id},
             {"rule_id", r.rule_id},
             {"user_id", r.user_id},
             {"kind", to_string(r.kind)},
             {"content", r.content},
             {"state", to_string(r.state)},
             {"created_at", format_iso8601(r.created_at)},
             {"delivered_at", opt_time(r.delivered_at)},
             {"deadline", opt_time(r.deadline)},
             {"resolved_at", opt_time(r.resolved_at)},
             {"space", r.space},
             {"trigger_value", r.trigger_value ? json(*r.trigger_value) : json(nullptr)}};
    if (r.feedback) {
        j["feedback"] = json{{"kind", to_string(r.feedback->kind)},
                             {"answer", r.feedback->answer ? json(*r.feedback->answer) : json(nullptr)},
                             {"at", format_iso8601(r.feedback->at)}};
    } else {
        j["feedback"] = nullptr;
    }
}

void to_json(json& j, const RecEvent& e) {
    j = json{{"seq", e.seq},
             {"recommendation_id", e.recommendation_id},
             {"user_id", e.user_id},
             {"from", e.from ? json(to_string(*e.from)) : json(nullptr)},
             {"to", to_string(e.to)},
             {"at", format_iso8601(e.at)},
             {"detail", e.detail}};
}

std::string render_template(std::string_view tmpl, int remaining) {
    std::string out;
    const std::string n = std::to_string(std::max(0, remaining));
    for (std::size_t i = 0; i < tmpl.size();) {
        if (tmpl.substr(i, 3) == "{N}") {
            out += n;
            i += 3;
        } else {
            out += tmpl[i++];
        }
    }
    return out;
}

std::map<std::string, std::string> ventilation_templates() {
    return {
        {"Humanitarian",
         "The air quality can become better. Let's open the door for 2 minutes to freshen up and get closer to "
         "earning the Refresher Badge (after {N} times of action)"},
        {"Socialiser",
         "The air quality is poor for all in the office. Open the door for 2 minutes to freshen the atmosphere and "
         "become the Fresh Air Challenge team leader for now"},
        {"FreeSpirit",
         "The air quality is quite poor. Open the door for 2 minutes to freshen up and get closer to unlocking a new "
         "functionality ({N} more actions remaining)"},
    };
}

fusion::SourceRecord source_from_profile(const UserProfile& p, TimePoint at) {
    using fusion::Literal;
    fusion::SourceRecord r;
    r.kind = fusion::SourceKind::UserProfile;
    r.source_id = p.user_id;
    r.at = at;
    r.fields["user_id"] = {p.user_id};
    if (p.gamer_type) r.fields["gamer_type"] = {*p.gamer_type};
    if (auto it = p.demographics.find("age_band"); it != p.demographics.end()) r.fields["age_band"] = {it->second};
    if (auto it = p.demographics.find("role"); it != p.demographics.end()) r.fields["role"] = {it->second};
    for (const auto& g : p.asserted_groups) r.fields["groups"].push_back(g);
    for (const auto& g : p.inferred_groups) r.fields["inferred_groups"].push_back(g);
    for (const auto& l : p.activity_locations) r.fields["locations"].push_back(fusion::NodeRef{fusion::entity_iri(l)});
    for (const auto& pref : p.all_preferences()) {
        r.children["preferences"].push_back({pref, {{"theme", {Literal{pref}}}}});
    }
    for (const auto& [badge, count] : p.action_counters) {
        r.children["actions"].push_back(
            {badge, {{"badge", {Literal{badge}}}, {"count", {Literal{static_cast<double>(count)}}}}});
    }
    return r;
}

fusion::SourceRecord source_from_recommendation(const Recommendation& rec, std::optional<std::string> theme) {
    fusion::SourceRecord r;
    r.kind = fusion::SourceKind::Recommendation;
    r.source_id = rec.id;
    r.at = rec.created_at;
    r.fields["user"] = {fusion::NodeRef{fusion::user_iri(rec.user_id)}};
    r.fields["rule"] = {rec.rule_id};
    r.fields["kind"] = {std::string(to_string(rec.kind))};
    r.fields["content"] = {rec.content};
    r.fields["state"] = {std::string(to_string(rec.state))};
    if (rec.delivered_at) r.fields["delivered_at"] = {format_iso8601(*rec.delivered_at)};
    if (!rec.space.empty()) r.fields["space"] = {fusion::NodeRef{fusion::entity_iri(rec.space)}};
    if (theme) r.fields["theme"] = {*theme};
    return r;
}

fusion::SourceRecord source_from_feedback(const Recommendation& rec, const Feedback& f) {
    fusion::SourceRecord r;
    r.kind = fusion::SourceKind::Feedback;
    r.source_id = rec.id;
    r.at = f.at;
    r.fields["recommendation"] = {
        fusion::NodeRef{fusion::make_document_id("recommendation", rec.id, rec.created_at)}};
    r.fields["user"] = {fusion::NodeRef{fusion::user_iri(rec.user_id)}};
    r.fields["kind"] = {std::string(to_string(f.kind))};
    if (f.answer) r.fields["answer"] = {*f.answer};
    r.fields["given_at"] = {format_iso8601(f.at)};
    return r;
}

Recommender::Recommender(broker::ContextBroker& broker, stream::StreamProcessor& processor, RecommenderConfig config,
                         const fusion::Enricher* enricher, fusion::DocumentStore* documents)
    : broker_(broker), processor_(processor), config_(std::move(config)), enricher_(enricher), documents_(documents) {
    for (auto& g : config_.gamer_type_precedence) g = normalize_term(g);
    groups_ = default_group_definitions();
    std::weak_ptr<int> alive = alive_;
    processor_.on_context_change([this, alive](const stream::ContextChange& c) {
        if (alive.expired()) return;
        std::vector<std::string> ids;
        {
            std::lock_guard lock(mu_);
            for (const auto& [id, r] : rules_) {
                if (r.spec.condition_id == c.source_id) ids.push_back(id);
            }
        }
        for (const auto& id : ids) on_condition_fired(id, c);
    });
}

Recommender::~Recommender() {
    alive_.reset();
    for (auto id : subscriptions_) {
        try {
            broker_.unsubscribe(id);
        } catch (const Error&) {
        }
    }
}

void Recommender::recompute_inferred(UserProfile& p) const {
    auto inferred = infer_groups(p.all_preferences(), groups_);
    for (const auto& g : p.asserted_groups) inferred.erase(g);
    p.inferred_groups = std::move(inferred);
}

void Recommender::register_group(GroupDefinition def) {
    check_definition(def);
    std::lock_guard lock(mu_);
    auto it = std::find_if(groups_.begin(), groups_.end(), [&](const auto& g) { return g.name == def.name; });
    if (it != groups_.end()) {
        *it = std::move(def);
    } else {
        groups_.push_back(std::move(def));
    }
    for (auto& [id, p] : users_) recompute_inferred(p);
}

std::vector<GroupDefinition> Recommender::group_definitions() const {
    std::lock_guard lock(mu_);
    return groups_;
}

UserProfile Recommender::upsert_user(UserProfile profile, TimePoint at) {
    if (profile.user_id.empty()) fail(ErrorCode::MalformedId, "user id is empty");
    const auto& vocab = fusion::Vocabulary::standard();
    auto normalize_prefs = [&](std::set<std::string>& prefs) {
        std::set<std::string> out;
        for (const auto& p : prefs) {
            auto n = normalize_term(p);
            if (!vocab.is_subclass_of(std::string(fusion::kBehaviourPrefix) + ":" + n,
                                      std::string(fusion::kBehaviourPrefix) + ":Preference")) {
                fail(ErrorCode::UnknownTerm, "'" + p + "' is not a declared preference class");
            }
            out.insert(std::move(n));
        }
        prefs = std::move(out);
    };
    normalize_prefs(profile.preferences);
    normalize_prefs(profile.derived_preferences);
    if (profile.gamer_type) profile.gamer_type = normalize_term(*profile.gamer_type);
    UserProfile stored;
    {
        std::lock_guard lock(mu_);
        if (auto it = users_.find(profile.user_id); it != users_.end()) {
            if (profile.action_counters.empty()) profile.action_counters = it->second.action_counters;
            if (profile.preference_evidence.empty()) profile.preference_evidence = it->second.preference_evidence;
            if (profile.derived_preferences.empty()) profile.derived_preferences = it->second.derived_preferences;
        }
        recompute_inferred(profile);
        users_[profile.user_id] = profile;
        stored = profile;
    }
    emit_document(source_from_profile(stored, at));
    return stored;
}

UserProfile Recommender::user(const std::string& id) const {
    std::lock_guard lock(mu_);
    auto it = users_.find(id);
    if (it == users_.end()) fail(ErrorCode::UnknownUser, "no user '" + id + "'");
    return it->second;
}

std::vector<UserProfile> Recommender::users() const {
    std::lock_guard lock(mu_);
    std::vector<UserProfile> out;
    for (const auto& [id, p] : users_) out.push_back(p);
    return out;
}

std::string Recommender::resolve_space(const std::string& selector) const {
    const auto e = broker_.find_entity(selector);
    if (!e) fail(ErrorCode::UnknownEntity, "stream selector '" + selector + "' is not registered");
    if (e->entity_type == "Room" || e->entity_type == "Building" || e->entity_type == "BuildingSpace") return e->id;
    auto it = e->attributes.find("location");
    if (it != e->attributes.end()) {
        if (const auto* s = std::get_if<std::string>(&it->second.value); s && !s->empty()) return *s;
    }
    fail(ErrorCode::UnknownSpace, "'" + selector + "' has no containing building space");
}

void Recommender::watch_object(const std::string& object_id, const std::string& attribute) {
    const std::string key = object_id + "/" + attribute;
    {
        std::lock_guard lock(mu_);
        if (observations_.contains(key)) return;
        observations_[key];
    }
    broker::Subscription sub;
    sub.sink_name = "recommender-validation";
    sub.selector.ids = std::set<std::string>{object_id};
    sub.selector.attributes = {attribute};
    std::weak_ptr<int> alive = alive_;
    sub.sink = [this, alive, key](const broker::Notification& n) {
        if (alive.expired() || !n.new_value) return;
        std::lock_guard lock(mu_);
        observations_[key].push_back({n.new_value->observed_at, n.new_value->value});
    };
    const auto id = broker_.subscribe(std::move(sub));
    std::lock_guard lock(mu_);
    subscriptions_.push_back(id);
}

std::string Recommender::register_rule(RuleSpec spec) {
    const auto cond = processor_.condition(spec.condition_id);
    const auto stream = processor_.stream(cond.stream_id);
    RuleInfo info;
    info.stream_id = stream.id;
    info.space = resolve_space(stream.spec.selector);
    info.threshold = cond.threshold;
    info.comparator = cond.comparator;
    info.cooldown = spec.cooldown ? *spec.cooldown : cond.cooldown.value_or(stream.spec.frequency);

    if (spec.groups.empty()) fail(ErrorCode::InvalidSpec, "rule targets no group");
    if (spec.n_required < 0) fail(ErrorCode::InvalidSpec, "n_required must be non-negative");
    std::map<std::string, std::string> templates;
    for (const auto& [k, v] : spec.templates) templates[template_key(k)] = v;
    spec.templates = std::move(templates);
    for (auto& g : spec.groups) {
        const auto n = normalize_term(g);
        const bool gamer = std::find(config_.gamer_type_precedence.begin(), config_.gamer_type_precedence.end(), n) !=
                           config_.gamer_type_precedence.end();
        if (gamer) g = n;
        const std::string key = gamer ? n : std::string(kDefaultTemplate);
        if (!spec.templates.contains(key)) fail(ErrorCode::MissingTemplate, "no template for group '" + g + "'");
    }
    if (spec.theme) spec.theme = normalize_term(*spec.theme);

    if (spec.kind == RecommendationKind::Task) {
        if (spec.validation) {
            if (!broker_.find_entity(spec.validation->object_id)) {
                fail(ErrorCode::UnknownEntity, "validation object '" + spec.validation->object_id + "' is not registered");
            }
            if (spec.validation->relative_drop < 0 || spec.validation->relative_drop > 1 ||
                spec.validation->window <= Duration::zero()) {
                fail(ErrorCode::InvalidSpec, "validation window and relative drop must be positive");
            }
        } else {
            broker::EntityFilter doors;
            doors.entity_type = "Door";
            doors.predicates.push_back({"location", Comparator::Eq, Scalar{info.space}});
            if (!broker_.query_entities(doors).empty()) {
                fail(ErrorCode::TaskWithoutValidationSpec,
                     "space '" + info.space + "' has a sensed door; the Task needs a validation spec");
            }
        }
    } else if (spec.validation) {
        fail(ErrorCode::UnexpectedValidationSpec, std::string(to_string(spec.kind)) + " rules cannot be validated");
    }

    {
        std::lock_guard lock(mu_);
        if (spec.id.empty()) spec.id = "rule-" + std::to_string(next_rule_++);
        if (rules_.contains(spec.id)) fail(ErrorCode::InvalidSpec, "rule '" + spec.id + "' already exists");
        if (spec.badge.empty()) spec.badge = spec.id;
        info.spec = spec;
        rules_[spec.id] = info;
    }
    if (spec.validation) watch_object(spec.validation->object_id, spec.validation->action_attribute);
    return spec.id;
}

RuleInfo Recommender::rule(const std::string& id) const {
    std::lock_guard lock(mu_);
    auto it = rules_.find(id);
    if (it == rules_.end()) fail(ErrorCode::NotFound, "no rule '" + id + "'");
    return it->second;
}

std::vector<RuleInfo> Recommender::rules() const {
    std::lock_guard lock(mu_);
    std::vector<RuleInfo> out;
    for (const auto& [id, r] : rules_) out.push_back(r);
    return out;
}

std::optional<std::string> Recommender::gamer_type_of(const UserProfile& profile) const {
    const auto groups = profile.groups();
    for (const auto& g : config_.gamer_type_precedence) {
        if (groups.contains(g)) return g;
    }
    return std::nullopt;
}

std::string Recommender::select_content(const RuleSpec& rule, const UserProfile& profile) const {
    const auto groups = profile.groups();
    const auto done = profile.action_counters.contains(rule.badge) ? profile.action_counters.at(rule.badge) : 0;
    for (const auto& g : config_.gamer_type_precedence) {
        if (!groups.contains(g)) continue;
        if (auto it = rule.templates.find(g); it != rule.templates.end()) {
            return render_template(it->second, rule.n_required - done);
        }
    }
    if (auto it = rule.templates.find(std::string(kDefaultTemplate)); it != rule.templates.end()) {
        return render_template(it->second, rule.n_required - done);
    }
    fail(ErrorCode::NoMatchingTemplate, "no template of rule '" + rule.id + "' fits user '" + profile.user_id + "'");
}

void Recommender::transition(Recommendation& r, RecState to, TimePoint at, std::string detail,
                             std::vector<Recommendation>& out) {
    if (!transition_allowed(r.state, to)) {
        fail(ErrorCode::WrongState, "recommendation '" + r.id + "' cannot move from " + std::string(to_string(r.state)) +
                                        " to " + std::string(to_string(to)));
    }
    events_.push_back({next_seq_++, r.id, r.user_id, r.state, to, at, std::move(detail)});
    r.state = to;
    if (to == RecState::Delivered) r.delivered_at = at;
    if (is_terminal(to)) r.resolved_at = at;
    out.push_back(r);
}

std::vector<Recommendation> Recommender::on_condition_fired(const std::string& rule_id,
                                                            const stream::ContextChange& change) {
    std::vector<Recommendation> created;
    {
        std::lock_guard lock(mu_);
        auto rit = rules_.find(rule_id);
        if (rit == rules_.end()) fail(ErrorCode::NotFound, "no rule '" + rule_id + "'");
        const RuleInfo& info = rit->second;
        const auto& spec = info.spec;
        const std::set<std::string> wanted(spec.groups.begin(), spec.groups.end());
        for (const auto& [uid, profile] : users_) {
            if (!profile.activity_locations.contains(info.space)) continue;
            const auto groups = profile.groups();
            if (std::none_of(groups.begin(), groups.end(), [&](const auto& g) { return wanted.contains(g); })) continue;
            const auto key = std::make_pair(rule_id, uid);
            if (auto last = last_created_.find(key);
                last != last_created_.end() && change.at - last->second < info.cooldown) {
                continue;
            }
            std::string content;
            try {
                content = select_content(spec, profile);
            } catch (const Error&) {
                continue;
            }
            Recommendation r;
            r.id = "rec-" + std::to_string(next_rec_++);
            r.rule_id = rule_id;
            r.user_id = uid;
            r.kind = spec.kind;
            r.content = std::move(content);
            r.created_at = change.at;
            r.space = info.space;
            r.trigger_value = change.value;
            events_.push_back({next_seq_++, r.id, uid, std::nullopt, RecState::Pending, change.at, change.source_id});
            std::vector<Recommendation> scratch;
            transition(r, RecState::Delivered, change.at, "delivered", scratch);
            r.deadline = change.at + ((spec.kind == RecommendationKind::Task && spec.validation) ? spec.validation->window
                                                                                                : spec.expires_after);
            last_created_[key] = change.at;
            recs_[r.id] = r;
            created.push_back(r);
        }
    }
    for (const auto& r : created) emit_document(source_from_recommendation(r, rule(r.rule_id).spec.theme));
    notify(created);
    return created;
}

Recommendation Recommender::record_feedback(const std::string& rec_id, Feedback feedback) {
    std::vector<Recommendation> changed;
    Recommendation result;
    std::optional<std::string> theme;
    std::optional<UserProfile> profile_doc;
    {
        std::lock_guard lock(mu_);
        auto it = recs_.find(rec_id);
        if (it == recs_.end()) fail(ErrorCode::UnknownRecommendation, "no recommendation '" + rec_id + "'");
        auto& r = it->second;
        if (r.state != RecState::Delivered) {
            fail(ErrorCode::WrongState, "recommendation '" + rec_id + "' is " + std::string(to_string(r.state)));
        }
        const auto& spec = rules_.at(r.rule_id).spec;
        theme = spec.theme;
        r.feedback = feedback;
        const bool positive = feedback.kind != FeedbackKind::Reject;
        if (!positive) {
            transition(r, RecState::Rejected, feedback.at, "feedback", changed);
        } else if (r.kind != RecommendationKind::Task || !spec.validation) {
            transition(r, RecState::Accepted, feedback.at, "feedback", changed);
        } else {
            changed.push_back(r); // Task awaits validation
        }
        if (positive && spec.theme) {
            auto& p = users_.at(r.user_id);
            if (++p.preference_evidence[*spec.theme] >= config_.evidence_threshold &&
                !p.preferences.contains(*spec.theme) && p.derived_preferences.insert(*spec.theme).second) {
                recompute_inferred(p);
                profile_doc = p;
            }
        }
        result = r;
    }
    emit_document(source_from_feedback(result, feedback));
    emit_document(source_from_recommendation(result, theme));
    if (profile_doc) emit_document(source_from_profile(*profile_doc, feedback.at));
    notify(changed);
    return result;
}

ValidationOutcome Recommender::validate_locked(Recommendation& r, TimePoint now, std::vector<Recommendation>& changed) {
    const auto& info = rules_.at(r.rule_id);
    const auto& v = *info.spec.validation;
    const TimePoint start = *r.delivered_at;
    const TimePoint end = *r.deadline;
    const TimePoint horizon = std::min(now, end);

    std::optional<TimePoint> action;
    for (const auto& o : observations_[v.object_id + "/" + v.action_attribute]) {
        if (o.at < start || o.at > horizon || !same_signal(o.value, v.action_value)) continue;
        if (!action || o.at < *action) action = o.at;
    }
    std::optional<TimePoint> effect;
    if (action) {
        const double threshold = v.effect_threshold.value_or(info.threshold);
        for (const auto& [t, x] : processor_.samples(info.stream_id, *action, horizon)) {
            const bool below = x < threshold;
            const bool dropped = r.trigger_value && *r.trigger_value > 0 &&
                                 (*r.trigger_value - x) / *r.trigger_value >= v.relative_drop;
            if (below || dropped) {
                effect = t;
                break;
            }
        }
    }
    if (action && effect) {
        transition(r, RecState::Validated, *effect, "action at " + format_iso8601(*action), changed);
        auto& p = users_.at(r.user_id);
        ++p.action_counters[info.spec.badge];
        return ValidationOutcome::Validated;
    }
    if (now >= end) {
        transition(r, RecState::Failed, end, action ? "effect missing" : "action missing", changed);
        return ValidationOutcome::Failed;
    }
    return ValidationOutcome::Pending;
}

ValidationOutcome Recommender::validate_task(const std::string& rec_id, TimePoint now) {
    std::vector<Recommendation> changed;
    ValidationOutcome outcome;
    std::optional<std::string> theme;
    {
        std::lock_guard lock(mu_);
        auto it = recs_.find(rec_id);
        if (it == recs_.end()) fail(ErrorCode::UnknownRecommendation, "no recommendation '" + rec_id + "'");
        auto& r = it->second;
        const auto& spec = rules_.at(r.rule_id).spec;
        if (r.kind != RecommendationKind::Task || !spec.validation) {
            fail(ErrorCode::NoValidationSpec, "recommendation '" + rec_id + "' has no validation spec");
        }
        if (r.state != RecState::Delivered) {
            fail(ErrorCode::WrongState, "recommendation '" + rec_id + "' is " + std::string(to_string(r.state)));
        }
        theme = spec.theme;
        outcome = validate_locked(r, now, changed);
    }
    for (const auto& r : changed) emit_document(source_from_recommendation(r, theme));
    notify(changed);
    return outcome;
}

std::size_t Recommender::sweep(TimePoint now) {
    std::vector<Recommendation> changed;
    {
        std::lock_guard lock(mu_);
        for (auto& [id, r] : recs_) {
            if (r.state != RecState::Delivered) continue;
            const auto& spec = rules_.at(r.rule_id).spec;
            if (r.kind == RecommendationKind::Task && spec.validation) {
                validate_locked(r, now, changed);
            } else if (r.deadline && now >= *r.deadline) {
                transition(r, RecState::Expired, *r.deadline, "expired", changed);
            }
        }
    }
    for (const auto& r : changed) emit_document(source_from_recommendation(r, rule(r.rule_id).spec.theme));
    notify(changed);
    return changed.size();
}

Recommendation Recommender::recommendation(const std::string& id) const {
    std::lock_guard lock(mu_);
    auto it = recs_.find(id);
    if (it == recs_.end()) fail(ErrorCode::UnknownRecommendation, "no recommendation '" + id + "'");
    return it->second;
}

std::vector<Recommendation> Recommender::recommendations(const std::optional<std::string>& user,
                                                         const std::optional<RecState>& state) const {
    std::vector<Recommendation> out;
    {
        std::lock_guard lock(mu_);
        for (const auto& [id, r] : recs_) {
            if (user && r.user_id != *user) continue;
            if (state && r.state != *state) continue;
            out.push_back(r);
        }
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return id_number(a.id) < id_number(b.id); });
    return out;
}

std::vector<RecEvent> Recommender::events() const {
    std::lock_guard lock(mu_);
    return events_;
}

void Recommender::on_change(Listener l) {
    std::lock_guard lock(mu_);
    listeners_.push_back(std::move(l));
}

void Recommender::emit_document(const fusion::SourceRecord& rec) {
    if (!enricher_ || !documents_) return;
    documents_->store(enricher_->enrich(rec));
}

void Recommender::notify(const std::vector<Recommendation>& changed) {
    if (changed.empty()) return;
    std::vector<Listener> ls;
    {
        std::lock_guard lock(mu_);
        ls = listeners_;
    }
    for (const auto& r : changed) {
        for (const auto& l : ls) l(r);
    }
}

} // namespace entropy::recommender
