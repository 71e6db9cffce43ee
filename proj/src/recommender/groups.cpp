#include "entropy/recommender/groups.hpp"

#include "entropy/core/error.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

namespace entropy::recommender {

namespace {

std::string behaviour_curie(const std::string& local) { return std::string(fusion::kBehaviourPrefix) + ":" + local; }

std::string strip_prefix(std::string s) {
    const std::string prefix = std::string(fusion::kBehaviourPrefix) + ":";
    if (s.starts_with(prefix)) s.erase(0, prefix.size());
    return s;
}

[[noreturn]] void unsupported(const std::string& why) { fail(ErrorCode::UnsupportedExpressionShape, why); }

} // namespace

std::string normalize_term(std::string_view name) {
    std::string out;
    bool upper = true;
    for (char c : strip_prefix(std::string(name))) {
        if (c == ' ' || c == '-' || c == '_') {
            upper = true;
            continue;
        }
        out += upper ? static_cast<char>(std::toupper(static_cast<unsigned char>(c))) : c;
        upper = false;
    }
    return out;
}

GroupDefinition parse_group_definition(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::vector<std::string> tok;
    for (std::string w; in >> w;) {
        // Parentheses around a conjunct carry no meaning in this shape.
        w.erase(std::remove(w.begin(), w.end(), '('), w.end());
        w.erase(std::remove(w.begin(), w.end(), ')'), w.end());
        if (!w.empty()) tok.push_back(w);
    }
    GroupDefinition def;
    std::size_t i = 0;
    if (tok.size() >= 2 && (tok[1] == "equivalentTo" || tok[1] == "EquivalentTo:")) {
        def.name = tok[0];
        i = 2;
    }
    if (i >= tok.size()) unsupported("expression has no named class");
    def.expression.named_class = strip_prefix(tok[i++]);
    bool first = true;
    while (i < tok.size()) {
        const auto& joiner = tok[i];
        if (joiner == "or" || joiner == "not") unsupported("'" + joiner + "' is outside the conjunctive shape");
        if (!(joiner == "and" || (first && joiner == "that"))) unsupported("unexpected token '" + joiner + "'");
        if (i + 3 >= tok.size()) unsupported("truncated restriction");
        const auto& prop = tok[i + 1];
        const auto& quant = tok[i + 2];
        if (strip_prefix(prop) != "hasPreference") unsupported("property '" + prop + "' is not hasPreference");
        if (quant != "some") unsupported("restriction '" + quant + "' is not existential");
        def.expression.some_preferences.push_back(strip_prefix(tok[i + 3]));
        i += 4;
        first = false;
    }
    return def;
}

std::string to_manchester(const GroupDefinition& def) {
    std::string out;
    if (!def.name.empty()) out = def.name + " equivalentTo ";
    out += def.expression.named_class;
    for (std::size_t k = 0; k < def.expression.some_preferences.size(); ++k) {
        out += k == 0 ? " that" : " and";
        out += " hasPreference some " + def.expression.some_preferences[k];
    }
    return out;
}

void to_json(json& j, const GroupDefinition& d) {
    j = json{{"name", d.name},
             {"class", d.expression.named_class},
             {"some", d.expression.some_preferences},
             {"expression", to_manchester(GroupDefinition{"", d.expression})}};
}

void from_json(const json& j, GroupDefinition& d) {
    if (j.contains("expression") && j.at("expression").is_string()) {
        d = parse_group_definition(j.at("expression").get<std::string>());
        if (j.contains("name")) d.name = j.at("name").get<std::string>();
        return;
    }
    d.name = j.at("name").get<std::string>();
    d.expression.named_class = strip_prefix(j.value("class", std::string{"Person"}));
    d.expression.some_preferences.clear();
    for (const auto& p : j.value("some", std::vector<std::string>{})) d.expression.some_preferences.push_back(strip_prefix(p));
}

bool satisfies(const ClassExpression& e, const std::set<std::string>& preferences, const fusion::Vocabulary& vocab) {
    return std::all_of(e.some_preferences.begin(), e.some_preferences.end(), [&](const std::string& c) {
        if (preferences.contains(c)) return true;
        const auto super = behaviour_curie(c);
        return std::any_of(preferences.begin(), preferences.end(), [&](const std::string& p) {
            return vocab.is_subclass_of(behaviour_curie(p), super);
        });
    });
}

void check_definition(const GroupDefinition& def, const fusion::Vocabulary& vocab) {
    if (def.name.empty()) fail(ErrorCode::InvalidSpec, "group definition has no name");
    if (def.expression.named_class != "Person") {
        unsupported("named class '" + def.expression.named_class + "' is not Person");
    }
    for (const auto& c : def.expression.some_preferences) {
        if (!vocab.is_subclass_of(behaviour_curie(c), behaviour_curie("Preference"))) {
            fail(ErrorCode::UnknownTerm, "'" + c + "' is not a declared preference class");
        }
    }
}

std::set<std::string> infer_groups(const std::set<std::string>& preferences, const std::vector<GroupDefinition>& defs,
                                   const fusion::Vocabulary& vocab) {
    std::set<std::string> out;
    for (const auto& d : defs) {
        if (satisfies(d.expression, preferences, vocab)) out.insert(d.name);
    }
    return out;
}

std::vector<GroupDefinition> default_group_definitions() {
    return {
        {"Player", {"Person", {"Reward", "Competition"}}},
        {"Socialiser", {"Person", {"SocialInteraction"}}},
        {"Humanitarian", {"Person", {"Altruism"}}},
        {"FreeSpirit", {"Person", {"Autonomy"}}},
    };
}

std::vector<std::string> default_gamer_type_precedence() { return {"Player", "Socialiser", "Humanitarian", "FreeSpirit"}; }

} // namespace entropy::recommender
