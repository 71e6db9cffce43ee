#include "entropy/recommender/recommender.hpp"

#include <doctest.h>

#include "unit/test_support.hpp"

#include <random>

using namespace entropy;
using namespace entropy::recommender;
using entropy::testing::code_of;
using namespace std::chrono_literals;

namespace {

const TimePoint t0 = from_epoch_ms(1'700'006'400'000); // an exact hour

struct Office {
    ManualClock clock{t0};
    broker::ContextBroker broker{clock};
    tsdb::TimeSeriesStore store;
    stream::StreamProcessor sp{clock, broker, store};
    fusion::Enricher enricher;
    fusion::DocumentStore docs;
    Recommender rec{broker, sp, {}, &enricher, &docs};
    std::string stream_id;
    std::string cond_id;

    explicit Office(bool with_door = true) {
        add("co2-office-12", "SensorNode", "office-12");
        add("co2-office-9", "SensorNode", "office-9");
        if (with_door) add("door-12", "Door", "office-12");
        stream::StreamSpec s;
        s.selector = "co2-office-12";
        s.attribute = "co2";
        stream_id = sp.register_stream(s);
        sp.activate(stream_id);
        cond_id = sp.register_condition({stream_id, Comparator::Gt, 1000, stream::Trigger::Level, std::nullopt});
    }

    void add(const std::string& id, const std::string& type, const std::string& location) {
        broker::EntityRecord r;
        r.id = id;
        r.entity_type = type;
        r.attributes["location"] = {Scalar{location}, "", t0, Quality::Raw};
        broker.upsert_entity(r);
    }

    void user(const std::string& id, const std::string& gamer, const std::string& location) {
        UserProfile p;
        p.user_id = id;
        p.gamer_type = gamer;
        p.activity_locations = {location};
        rec.upsert_user(p, clock.now());
    }

    void feed(const std::string& sensor, const std::string& attr, double v, TimePoint at) {
        clock.advance_to(at);
        sp.ingest({sensor, attr, v, attr == "co2" ? "ppm" : "", at, Quality::Raw});
    }

    RuleSpec co2_rule(RecommendationKind kind = RecommendationKind::Task) const {
        RuleSpec r;
        r.condition_id = cond_id;
        r.groups = {"Humanitarian", "Socialiser"};
        r.kind = kind;
        r.templates = ventilation_templates();
        if (kind == RecommendationKind::Task) r.validation = ValidationSpec{"door-12"};
        return r;
    }

    void advance(TimePoint at) {
        clock.advance_to(at);
        sp.advance_to(at);
    }
};

const std::string kHumanitarian =
    "The air quality can become better. Let's open the door for 2 minutes to freshen up and get closer to earning "
    "the Refresher Badge (after 5 times of action)";
const std::string kSocialiser =
    "The air quality is poor for all in the office. Open the door for 2 minutes to freshen the atmosphere and "
    "become the Fresh Air Challenge team leader for now";

} // namespace

TEST_CASE("group definition parsing") {
    const auto d = parse_group_definition(
        "Player equivalentTo Person that hasPreference some Reward and hasPreference some Competition");
    CHECK(d.name == "Player");
    CHECK(d.expression.named_class == "Person");
    CHECK(d.expression.some_preferences == std::vector<std::string>{"Reward", "Competition"});
    CHECK(parse_group_definition(to_manchester(d)).expression == d.expression);
    CHECK(parse_group_definition("Person").expression.some_preferences.empty());
    CHECK(code_of([] { parse_group_definition("Person or hasPreference some Reward"); }) ==
          ErrorCode::UnsupportedExpressionShape);
    CHECK(code_of([] { parse_group_definition("Person that hasPreference only Reward"); }) ==
          ErrorCode::UnsupportedExpressionShape);
    CHECK(code_of([] { parse_group_definition("Person that likes some Reward"); }) ==
          ErrorCode::UnsupportedExpressionShape);
    CHECK(code_of([] { parse_group_definition("Person that hasPreference some"); }) ==
          ErrorCode::UnsupportedExpressionShape);
    CHECK(code_of([] { check_definition({"X", {"Robot", {}}}); }) == ErrorCode::UnsupportedExpressionShape);
    CHECK(code_of([] { check_definition({"X", {"Person", {"Money"}}}); }) == ErrorCode::UnknownTerm);
}

TEST_CASE("group inference examples") {
    const auto defs = default_group_definitions();
    CHECK(infer_groups({"Reward", "Competition"}, defs).contains("Player"));
    CHECK_FALSE(infer_groups({"Reward"}, defs).contains("Player"));
    const std::vector<GroupDefinition> bare{{"Everyone", {"Person", {}}}};
    CHECK(infer_groups({}, bare) == std::set<std::string>{"Everyone"});
    CHECK(infer_groups({"Comfort"}, bare) == std::set<std::string>{"Everyone"});
    // A superclass restriction is witnessed by any subclass preference.
    CHECK(satisfies({"Person", {"Preference"}}, {"Reward"}));
    CHECK_FALSE(satisfies({"Person", {"Preference"}}, {}));
}

TEST_CASE("inference is sound, complete and monotone on random profiles") {
    const std::vector<std::string> prefs{"Reward",   "Competition", "Recognition", "Altruism",
                                         "SocialInteraction", "Autonomy", "Comfort"};
    std::mt19937_64 rng(17);
    std::vector<GroupDefinition> defs;
    for (int d = 0; d < 50; ++d) {
        GroupDefinition g{"g" + std::to_string(d), {"Person", {}}};
        const int n = static_cast<int>(rng() % 4);
        for (int k = 0; k < n; ++k) g.expression.some_preferences.push_back(prefs[rng() % prefs.size()]);
        defs.push_back(g);
    }
    for (int i = 0; i < 500; ++i) {
        std::set<std::string> p;
        for (const auto& c : prefs) {
            if (rng() % 3 == 0) p.insert(c);
        }
        const auto got = infer_groups(p, defs);
        for (const auto& d : defs) {
            bool all = true;
            for (const auto& c : d.expression.some_preferences) all = all && p.count(c) == 1;
            CHECK(got.contains(d.name) == all);
        }
        auto bigger = p;
        bigger.insert(prefs[rng() % prefs.size()]);
        const auto more = infer_groups(bigger, defs);
        for (const auto& g : got) CHECK(more.contains(g));
    }
}

TEST_CASE("rule registration") {
    Office o;
    SUBCASE("the ventilation Task rule is accepted") {
        const auto id = o.rec.register_rule(o.co2_rule());
        const auto info = o.rec.rule(id);
        CHECK(info.space == "office-12");
        CHECK(info.cooldown == 1h);
        CHECK(info.threshold == 1000);
    }
    SUBCASE("missing template") {
        auto r = o.co2_rule();
        r.templates.erase("Socialiser");
        CHECK(code_of([&] { o.rec.register_rule(r); }) == ErrorCode::MissingTemplate);
    }
    SUBCASE("message with validation spec") {
        auto r = o.co2_rule(RecommendationKind::Message);
        r.validation = ValidationSpec{"door-12"};
        CHECK(code_of([&] { o.rec.register_rule(r); }) == ErrorCode::UnexpectedValidationSpec);
    }
    SUBCASE("task without validation spec in a space with a door") {
        auto r = o.co2_rule();
        r.validation.reset();
        CHECK(code_of([&] { o.rec.register_rule(r); }) == ErrorCode::TaskWithoutValidationSpec);
    }
    SUBCASE("unknown condition") {
        auto r = o.co2_rule();
        r.condition_id = "cond-99";
        CHECK(code_of([&] { o.rec.register_rule(r); }) == ErrorCode::UnknownCondition);
    }
    SUBCASE("JSON round trip") {
        const auto r = o.co2_rule();
        const json j = r;
        CHECK(json(j.get<RuleSpec>()) == j);
    }
}

TEST_CASE("Task without a door in the space needs no validation spec") {
    Office o(false);
    auto r = o.co2_rule();
    r.validation.reset();
    CHECK_NOTHROW(o.rec.register_rule(r));
}

TEST_CASE("content follows the gamer type") {
    Office o;
    auto spec = o.rec.rule(o.rec.register_rule(o.co2_rule())).spec;
    UserProfile h{"h"};
    h.gamer_type = "Humanitarian";
    CHECK(o.rec.select_content(spec, h) == kHumanitarian);
    UserProfile s{"s"};
    s.gamer_type = "Socialiser";
    CHECK(o.rec.select_content(spec, s) == kSocialiser);
    UserProfile f{"f"};
    f.gamer_type = "FreeSpirit";
    f.action_counters[spec.badge] = 3;
    const auto text = o.rec.select_content(spec, f);
    CHECK(text.find("(2 more actions remaining)") != std::string::npos);
    f.action_counters[spec.badge] = 9;
    CHECK(o.rec.select_content(spec, f).find("(0 more actions remaining)") != std::string::npos);
    UserProfile p{"p"};
    p.gamer_type = "Player";
    CHECK(code_of([&] { (void)o.rec.select_content(spec, p); }) == ErrorCode::NoMatchingTemplate);

    // Socialiser outranks Humanitarian when both apply.
    UserProfile both{"b"};
    both.gamer_type = "Humanitarian";
    both.asserted_groups = {"Socialiser"};
    CHECK(o.rec.select_content(spec, both) == kSocialiser);
    CHECK(render_template("{N}/{N}", -4) == "0/0");
}

TEST_CASE("firing targets in-space users of the selected groups") {
    Office o;
    o.user("u1", "Humanitarian", "office-12");
    o.user("u2", "Socialiser", "office-12");
    o.user("u3", "Humanitarian", "office-9");
    o.rec.register_rule(o.co2_rule(RecommendationKind::Message));

    o.feed("co2-office-12", "co2", 1050, t0 + 50min);
    o.advance(t0 + 1h);
    auto recs = o.rec.recommendations();
    REQUIRE(recs.size() == 2);
    CHECK(recs[0].user_id == "u1");
    CHECK(recs[0].content == kHumanitarian);
    CHECK(recs[1].user_id == "u2");
    CHECK(recs[1].content == kSocialiser);
    CHECK(recs[0].state == RecState::Delivered);
    CHECK(recs[0].created_at == t0 + 1h);

    // Level trigger fires again next hour; cooldown 1h lets it through, 2h would not.
    o.advance(t0 + 2h);
    CHECK(o.rec.recommendations().size() == 4);
}

TEST_CASE("repeat firing within cooldown creates no duplicates") {
    Office o;
    o.user("u1", "Humanitarian", "office-12");
    auto r = o.co2_rule(RecommendationKind::Message);
    r.cooldown = 3h;
    const auto id = o.rec.register_rule(r);
    stream::ContextChange c{o.cond_id, false, o.stream_id, t0 + 1h, 1050.0};
    CHECK(o.rec.on_condition_fired(id, c).size() == 1);
    c.at = t0 + 2h;
    CHECK(o.rec.on_condition_fired(id, c).empty());
    c.at = t0 + 4h;
    CHECK(o.rec.on_condition_fired(id, c).size() == 1);
}

TEST_CASE("no users in the space") {
    Office o;
    o.user("u3", "Humanitarian", "office-9");
    const auto id = o.rec.register_rule(o.co2_rule(RecommendationKind::Message));
    CHECK(o.rec.on_condition_fired(id, {o.cond_id, false, o.stream_id, t0 + 1h, 1100.0}).empty());
}

TEST_CASE("targeting equals a brute-force oracle on random fixtures") {
    const std::vector<std::string> gamers{"Humanitarian", "Socialiser", "FreeSpirit", "Player"};
    const std::vector<std::string> spaces{"office-12", "office-9", "lab"};
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        std::mt19937_64 rng(seed);
        Office o;
        std::vector<UserProfile> users;
        for (int i = 0; i < 30; ++i) {
            UserProfile p;
            p.user_id = "u" + std::to_string(i);
            if (rng() % 4 != 0) p.gamer_type = gamers[rng() % gamers.size()];
            if (rng() % 3 == 0) p.asserted_groups.insert(gamers[rng() % gamers.size()]);
            if (rng() % 3 == 0) p.preferences = {"Reward", "Competition"};
            for (const auto& s : spaces) {
                if (rng() % 2 == 0) p.activity_locations.insert(s);
            }
            users.push_back(o.rec.upsert_user(p, t0));
        }
        RuleSpec r;
        r.condition_id = o.cond_id;
        r.kind = RecommendationKind::Message;
        r.templates = ventilation_templates();
        r.templates["Player"] = "Beat your colleagues: open the door.";
        for (const auto& g : gamers) {
            if (rng() % 2 == 0) r.groups.push_back(g);
        }
        if (r.groups.empty()) r.groups.push_back("Player");
        r.cooldown = 90min;
        const auto id = o.rec.register_rule(r);

        std::set<std::pair<std::string, std::string>> issued;
        std::map<std::string, TimePoint> last;
        for (int firing = 0; firing < 6; ++firing) {
            const auto at = t0 + std::chrono::minutes(40 * firing);
            std::set<std::string> expected;
            for (const auto& u : users) {
                bool group = false;
                for (const auto& g : r.groups) {
                    group = group || u.asserted_groups.count(g) || u.inferred_groups.count(g) ||
                            (u.gamer_type && *u.gamer_type == g);
                }
                const bool space = u.activity_locations.count("office-12") == 1;
                const bool cooled = !last.count(u.user_id) || at - last[u.user_id] >= 90min;
                if (group && space && cooled) expected.insert(u.user_id);
            }
            std::set<std::string> got;
            for (const auto& rec : o.rec.on_condition_fired(id, {o.cond_id, false, o.stream_id, at, 1200.0})) {
                got.insert(rec.user_id);
            }
            CHECK(got == expected);
            for (const auto& u : expected) last[u] = at;
        }
    }
}

TEST_CASE("feedback on Messages and Quizzes") {
    Office o;
    o.user("u1", "Humanitarian", "office-12");
    auto quiz = o.co2_rule(RecommendationKind::Quiz);
    quiz.groups = {"Humanitarian"};
    const auto qid = o.rec.register_rule(quiz);
    const auto mid = o.rec.register_rule(o.co2_rule(RecommendationKind::Message));
    const stream::ContextChange c{o.cond_id, false, o.stream_id, t0 + 1h, 1050.0};
    const auto q = o.rec.on_condition_fired(qid, c).at(0);
    const auto m = o.rec.on_condition_fired(mid, c).at(0);

    CHECK(o.rec.record_feedback(m.id, {FeedbackKind::Accept, std::nullopt, t0 + 70min}).state == RecState::Accepted);
    const auto answered = o.rec.record_feedback(q.id, {FeedbackKind::Answer, "yes", t0 + 71min});
    CHECK(answered.state == RecState::Accepted);
    fusion::DocumentQuery fq;
    fq.class_term = "ebio:Feedback";
    fq.filters = {{"ebio:answer", Comparator::Eq, std::string("yes")}};
    CHECK(o.docs.find(fq).size() == 1);

    CHECK(code_of([&] { o.rec.record_feedback(m.id, {FeedbackKind::Reject, std::nullopt, t0 + 80min}); }) ==
          ErrorCode::WrongState);
    CHECK(code_of([&] { o.rec.record_feedback("rec-404", {}); }) == ErrorCode::UnknownRecommendation);
    CHECK(code_of([&] { o.rec.validate_task(m.id, t0 + 2h); }) == ErrorCode::NoValidationSpec);
}

TEST_CASE("expired recommendations reject feedback") {
    Office o;
    o.user("u1", "Humanitarian", "office-12");
    auto r = o.co2_rule(RecommendationKind::Message);
    r.expires_after = 2h;
    const auto id = o.rec.register_rule(r);
    const auto m = o.rec.on_condition_fired(id, {o.cond_id, false, o.stream_id, t0 + 1h, 1050.0}).at(0);
    CHECK(o.rec.sweep(t0 + 2h) == 0);
    CHECK(o.rec.sweep(t0 + 3h) == 1);
    CHECK(o.rec.recommendation(m.id).state == RecState::Expired);
    CHECK(code_of([&] { o.rec.record_feedback(m.id, {FeedbackKind::Accept, std::nullopt, t0 + 4h}); }) ==
          ErrorCode::WrongState);
}

TEST_CASE("task validation timelines") {
    const TimePoint fire = t0 + 1h;
    auto setup = [&](Office& o) {
        o.user("u1", "Humanitarian", "office-12");
        o.rec.register_rule(o.co2_rule());
        o.feed("co2-office-12", "co2", 1050, t0 + 50min);
        o.advance(fire);
        auto recs = o.rec.recommendations("u1");
        REQUIRE(recs.size() == 1);
        CHECK(recs[0].deadline == fire + 30min);
        return recs[0].id;
    };

    SUBCASE("door opens and CO2 drops") {
        Office o;
        const auto id = setup(o);
        o.feed("door-12", "open", 1, fire + 5min);
        CHECK(o.rec.validate_task(id, fire + 10min) == ValidationOutcome::Pending);
        o.feed("co2-office-12", "co2", 900, fire + 20min);
        CHECK(o.rec.validate_task(id, fire + 20min) == ValidationOutcome::Validated);
        const auto r = o.rec.recommendation(id);
        CHECK(r.state == RecState::Validated);
        CHECK(r.resolved_at == fire + 20min);
        CHECK(o.rec.user("u1").action_counters.at(o.rec.rule(r.rule_id).spec.badge) == 1);
    }
    SUBCASE("door never opens") {
        Office o;
        const auto id = setup(o);
        o.feed("co2-office-12", "co2", 900, fire + 20min);
        CHECK(o.rec.validate_task(id, fire + 29min) == ValidationOutcome::Pending);
        CHECK(o.rec.validate_task(id, fire + 30min) == ValidationOutcome::Failed);
        CHECK(o.rec.recommendation(id).resolved_at == fire + 30min);
    }
    SUBCASE("door opens but CO2 stays high") {
        Office o;
        const auto id = setup(o);
        o.feed("door-12", "open", 1, fire + 5min);
        o.feed("co2-office-12", "co2", 1100, fire + 20min);
        CHECK(o.rec.sweep(fire + 31min) == 1);
        CHECK(o.rec.recommendation(id).state == RecState::Failed);
    }
    SUBCASE("a 10% relative drop counts as effect") {
        Office o;
        const auto id = setup(o);
        o.feed("door-12", "open", 1, fire + 5min);
        o.feed("co2-office-12", "co2", 1010, fire + 10min); // -3.8%
        CHECK(o.rec.validate_task(id, fire + 12min) == ValidationOutcome::Pending);
        o.feed("co2-office-12", "co2", 945, fire + 15min); // -10%
        CHECK(o.rec.validate_task(id, fire + 16min) == ValidationOutcome::Validated);
    }
    SUBCASE("task accept waits for validation") {
        Office o;
        const auto id = setup(o);
        CHECK(o.rec.record_feedback(id, {FeedbackKind::Accept, std::nullopt, fire + 1min}).state == RecState::Delivered);
    }
}

TEST_CASE("accepted feedback evidence materializes a preference") {
    Office o;
    UserProfile p;
    p.user_id = "u1";
    p.preferences = {"Reward"};
    p.activity_locations = {"office-12"};
    p.asserted_groups = {"Humanitarian"};
    o.rec.upsert_user(p, t0);
    auto r = o.co2_rule(RecommendationKind::Message);
    r.groups = {"Humanitarian"};
    r.theme = "Competition";
    r.cooldown = 1min;
    const auto id = o.rec.register_rule(r);
    for (int i = 0; i < 3; ++i) {
        CHECK_FALSE(o.rec.user("u1").inferred_groups.contains("Player"));
        const auto at = t0 + std::chrono::hours(1 + i);
        const auto m = o.rec.on_condition_fired(id, {o.cond_id, false, o.stream_id, at, 1050.0}).at(0);
        o.rec.record_feedback(m.id, {FeedbackKind::Accept, std::nullopt, at + 1min});
    }
    const auto u = o.rec.user("u1");
    CHECK(u.derived_preferences == std::set<std::string>{"Competition"});
    CHECK(u.inferred_groups.contains("Player"));
    CHECK(u.preference_evidence.at("Competition") == 3);
}

TEST_CASE("event log only holds allowed transitions and every document validates") {
    std::mt19937_64 rng(23);
    Office o;
    for (int i = 0; i < 12; ++i) {
        o.user("u" + std::to_string(i), i % 2 ? "Humanitarian" : "Socialiser", i % 3 ? "office-12" : "office-9");
    }
    o.rec.register_rule(o.co2_rule());
    auto msg = o.co2_rule(RecommendationKind::Message);
    msg.expires_after = 45min;
    o.rec.register_rule(msg);
    for (int h = 0; h < 8; ++h) {
        const auto base = t0 + std::chrono::hours(h);
        o.feed("co2-office-12", "co2", 950 + static_cast<double>(rng() % 200), base + 50min);
        o.advance(base + 1h);
        if (rng() % 2) o.feed("door-12", "open", static_cast<double>(rng() % 2), base + 1h + 5min);
        for (const auto& r : o.rec.recommendations(std::nullopt, RecState::Delivered)) {
            if (rng() % 3 == 0) {
                const auto kind = static_cast<FeedbackKind>(rng() % 3);
                o.rec.record_feedback(r.id, {kind, std::nullopt, base + 1h + 10min});
            }
        }
        o.rec.sweep(base + 1h + 50min);
    }
    std::map<std::string, RecState> state;
    for (const auto& e : o.rec.events()) {
        if (!e.from) {
            CHECK(e.to == RecState::Pending);
            CHECK_FALSE(state.contains(e.recommendation_id));
        } else {
            CHECK(state.at(e.recommendation_id) == *e.from);
            CHECK(transition_allowed(*e.from, e.to));
        }
        state[e.recommendation_id] = e.to;
    }
    for (const auto& r : o.rec.recommendations()) {
        CHECK(state.at(r.id) == r.state);
        if (r.kind != RecommendationKind::Task) {
            CHECK(r.state != RecState::Validated);
            CHECK(r.state != RecState::Failed);
        }
    }
    CHECK(o.docs.count() > 0);
    for (const auto& d : o.docs.find({})) {
        CHECK(fusion::validate(d, fusion::Vocabulary::standard()).empty());
        CHECK(fusion::parse(fusion::serialize(d)) == d);
    }
}
