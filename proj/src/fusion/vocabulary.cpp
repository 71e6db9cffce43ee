#include "entropy/fusion/vocabulary.hpp"

#include "entropy/core/error.hpp"

namespace entropy::fusion {

std::string_view to_string(Range r) {
    switch (r) {
    case Range::Number: return "Number";
    case Range::String: return "String";
    case Range::Boolean: return "Boolean";
    case Range::DateTime: return "DateTime";
    case Range::Node: return "Node";
    case Range::Any: return "Any";
    }
    return "Any";
}

Vocabulary::Vocabulary(std::string version, std::map<std::string, std::string> prefixes)
    : version_(std::move(version)), prefixes_(std::move(prefixes)) {}

void Vocabulary::add(Term term) {
    const auto colon = term.curie.find(':');
    if (colon == std::string::npos || !prefixes_.contains(term.curie.substr(0, colon))) {
        fail(ErrorCode::UnknownTerm, "term '" + term.curie + "' has no declared prefix");
    }
    if (term.parent && !is_class(*term.parent)) {
        fail(ErrorCode::UnknownTerm, "superclass '" + *term.parent + "' of '" + term.curie + "' is not declared");
    }
    terms_[term.curie] = std::move(term);
}

const Term* Vocabulary::find(std::string_view curie) const {
    auto it = terms_.find(curie);
    return it == terms_.end() ? nullptr : &it->second;
}

bool Vocabulary::is_class(std::string_view curie) const {
    const auto* t = find(curie);
    return t && t->kind == TermKind::Class;
}

bool Vocabulary::is_property(std::string_view curie) const {
    const auto* t = find(curie);
    return t && t->kind == TermKind::Property;
}

bool Vocabulary::is_subclass_of(std::string_view sub, std::string_view super) const {
    const Term* t = find(sub);
    if (!t || t->kind != TermKind::Class || !is_class(super)) return false;
    for (int depth = 0; t && depth < 64; ++depth) {
        if (t->curie == super) return true;
        t = t->parent ? find(*t->parent) : nullptr;
    }
    return false;
}

std::vector<std::string> Vocabulary::subclasses_of(std::string_view super) const {
    std::vector<std::string> out;
    for (const auto& [curie, term] : terms_) {
        if (is_subclass_of(curie, super)) out.push_back(curie);
    }
    return out;
}

std::optional<std::string> Vocabulary::expand(std::string_view curie) const {
    const auto colon = curie.find(':');
    if (colon == std::string_view::npos) return std::nullopt;
    auto it = prefixes_.find(std::string(curie.substr(0, colon)));
    if (it == prefixes_.end()) return std::nullopt;
    return it->second + std::string(curie.substr(colon + 1));
}

json Vocabulary::context() const {
    json ctx = json::object();
    for (const auto& [prefix, iri] : prefixes_) ctx[prefix] = iri;
    return ctx;
}

namespace {

Vocabulary build_standard() {
    Vocabulary v("1.0.0", {{std::string(kEnergyPrefix), std::string(kEnergyIri)},
                           {std::string(kBehaviourPrefix), std::string(kBehaviourIri)}});
    auto cls = [&](const char* curie, std::optional<std::string> parent = std::nullopt) {
        v.add({curie, TermKind::Class, Range::Any, std::move(parent)});
    };
    auto prop = [&](const char* curie, Range range) { v.add({curie, TermKind::Property, range, std::nullopt}); };

    cls("entropy:Entity");
    cls("entropy:Sensor", "entropy:Entity");
    cls("entropy:SensorNode", "entropy:Sensor");
    cls("entropy:Door", "entropy:Entity");
    cls("entropy:BuildingSpace", "entropy:Entity");
    cls("entropy:Room", "entropy:BuildingSpace");
    cls("entropy:Building", "entropy:BuildingSpace");
    cls("entropy:Observation");
    cls("entropy:AttributeState");
    cls("entropy:AnalysisResult");

    prop("entropy:hasValue", Range::Number);
    prop("entropy:textValue", Range::String);
    prop("entropy:booleanValue", Range::Boolean);
    prop("entropy:unit", Range::String);
    prop("entropy:observedAt", Range::DateTime);
    prop("entropy:madeBySensor", Range::Node);
    prop("entropy:observedProperty", Range::String);
    prop("entropy:quality", Range::String);
    prop("entropy:entityType", Range::String);
    prop("entropy:hasAttribute", Range::Node);
    prop("entropy:name", Range::String);
    prop("entropy:createdAt", Range::DateTime);
    prop("entropy:updatedAt", Range::DateTime);
    prop("entropy:version", Range::Number);
    prop("entropy:algorithm", Range::String);
    prop("entropy:configuration", Range::String);
    prop("entropy:inputQuery", Range::String);
    prop("entropy:resultData", Range::String);
    prop("entropy:computedAt", Range::DateTime);

    cls("ebio:Person");
    cls("ebio:GamerType", "ebio:Person");
    cls("ebio:Player", "ebio:GamerType");
    cls("ebio:Socialiser", "ebio:GamerType");
    cls("ebio:Humanitarian", "ebio:GamerType");
    cls("ebio:FreeSpirit", "ebio:GamerType");
    cls("ebio:Preference");
    cls("ebio:Reward", "ebio:Preference");
    cls("ebio:Competition", "ebio:Preference");
    cls("ebio:Recognition", "ebio:Preference");
    cls("ebio:Altruism", "ebio:Preference");
    cls("ebio:SocialInteraction", "ebio:Preference");
    cls("ebio:Autonomy", "ebio:Preference");
    cls("ebio:Comfort", "ebio:Preference");
    cls("ebio:PreferenceAssertion");
    cls("ebio:Recommendation");
    cls("ebio:Task", "ebio:Recommendation");
    cls("ebio:Message", "ebio:Recommendation");
    cls("ebio:Quiz", "ebio:Recommendation");
    cls("ebio:Feedback");
    cls("ebio:ActionCounter");

    prop("ebio:userId", Range::String);
    prop("ebio:hasPreference", Range::Node);
    prop("ebio:memberOf", Range::String);
    prop("ebio:inferredMemberOf", Range::String);
    prop("ebio:hasGamerType", Range::String);
    prop("ebio:hasActivityLocation", Range::Node);
    prop("ebio:ageBand", Range::String);
    prop("ebio:role", Range::String);
    prop("ebio:hasActionCounter", Range::Node);
    prop("ebio:actionCount", Range::Number);
    prop("ebio:actionBadge", Range::String);
    prop("ebio:targetsUser", Range::Node);
    prop("ebio:fromRule", Range::String);
    prop("ebio:content", Range::String);
    prop("ebio:state", Range::String);
    prop("ebio:deliveredAt", Range::DateTime);
    prop("ebio:boundSpace", Range::Node);
    prop("ebio:preferenceTheme", Range::String);
    prop("ebio:aboutRecommendation", Range::Node);
    prop("ebio:feedbackKind", Range::String);
    prop("ebio:answer", Range::String);
    prop("ebio:givenBy", Range::Node);
    prop("ebio:givenAt", Range::DateTime);
    return v;
}

} // namespace

const Vocabulary& Vocabulary::standard() {
    static const Vocabulary v = build_standard();
    return v;
}

} // namespace entropy::fusion
