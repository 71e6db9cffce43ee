#include "entropy/fusion/mapping.hpp"

#include "entropy/core/error.hpp"

#include <algorithm>
#include <set>

namespace entropy::fusion {

namespace {

constexpr SourceKind kAllKinds[] = {SourceKind::Measurement,    SourceKind::EntityRecord, SourceKind::UserProfile,
                                    SourceKind::Recommendation, SourceKind::Feedback,     SourceKind::AnalysisResult};

std::vector<FieldSchema> fields(std::initializer_list<std::pair<const char*, bool>> list) {
    std::vector<FieldSchema> out;
    for (const auto& [name, required] : list) out.push_back({name, required});
    return out;
}

std::map<SourceKind, SourceSchema> build_schemas() {
    std::map<SourceKind, SourceSchema> s;
    s[SourceKind::Measurement] = {SourceKind::Measurement,
                                  fields({{"sensor", true},
                                          {"attribute", true},
                                          {"value", true},
                                          {"unit", false},
                                          {"observed_at", true},
                                          {"quality", false}}),
                                  {}};
    s[SourceKind::EntityRecord] = {
        SourceKind::EntityRecord,
        fields({{"entity_type", true}, {"created_at", false}, {"updated_at", false}, {"version", false}}),
        {{"attributes", fields({{"name", true},
                                {"value", false},
                                {"text", false},
                                {"flag", false},
                                {"unit", false},
                                {"observed_at", true},
                                {"quality", false}})}}};
    s[SourceKind::UserProfile] = {SourceKind::UserProfile,
                                  fields({{"user_id", true},
                                          {"gamer_type", false},
                                          {"age_band", false},
                                          {"role", false},
                                          {"groups", false},
                                          {"inferred_groups", false},
                                          {"locations", false}}),
                                  {{"preferences", fields({{"theme", true}})},
                                   {"actions", fields({{"badge", true}, {"count", true}})}}};
    s[SourceKind::Recommendation] = {SourceKind::Recommendation,
                                     fields({{"user", true},
                                             {"rule", true},
                                             {"kind", true},
                                             {"content", true},
                                             {"state", true},
                                             {"delivered_at", false},
                                             {"space", false},
                                             {"theme", false}}),
                                     {}};
    s[SourceKind::Feedback] = {SourceKind::Feedback,
                               fields({{"recommendation", true},
                                       {"user", true},
                                       {"kind", true},
                                       {"answer", false},
                                       {"given_at", true}}),
                               {}};
    s[SourceKind::AnalysisResult] = {SourceKind::AnalysisResult,
                                     fields({{"algorithm", true},
                                             {"configuration", false},
                                             {"input_query", false},
                                             {"result", true},
                                             {"computed_at", true},
                                             {"version", false}}),
                                     {}};
    return s;
}

const FieldSchema* find_field(const std::vector<FieldSchema>& fs, const std::string& name) {
    auto it = std::find_if(fs.begin(), fs.end(), [&](const FieldSchema& f) { return f.name == name; });
    return it == fs.end() ? nullptr : &*it;
}

void check_field_map(const std::vector<FieldSchema>& schema, const std::map<std::string, std::string>& map,
                     const Vocabulary& vocab, const std::string& where) {
    for (const auto& f : schema) {
        if (!map.contains(f.name)) fail(ErrorCode::UnmappedField, where + ": field '" + f.name + "' is not mapped");
    }
    for (const auto& [field, term] : map) {
        if (!find_field(schema, field)) {
            fail(ErrorCode::UnmappedField, where + ": field '" + field + "' is not declared for this source kind");
        }
        if (term != kOmit && !vocab.is_property(term)) {
            fail(ErrorCode::UnknownTerm, where + ": '" + term + "' is not a declared property");
        }
    }
}

std::string class_for(const std::string& target, const std::optional<std::string>& class_field,
                      const std::map<std::string, std::vector<Literal>>& fields, const Vocabulary& vocab) {
    if (!class_field) return target;
    auto it = fields.find(*class_field);
    if (it == fields.end() || it->second.empty()) return target;
    const auto* s = std::get_if<std::string>(&it->second.front());
    if (!s) return target;
    std::string local;
    for (char c : *s) {
        if (c != ' ' && c != '-' && c != '_') local += c;
    }
    const std::string candidate = target.substr(0, target.find(':') + 1) + local;
    return vocab.is_subclass_of(candidate, target) ? candidate : target;
}

void map_fields(const std::vector<FieldSchema>& schema, const std::map<std::string, std::string>& map,
                const std::map<std::string, std::vector<Literal>>& values, Node& node, const std::string& where) {
    for (const auto& f : schema) {
        auto it = values.find(f.name);
        const bool present = it != values.end() && !it->second.empty();
        if (f.required && !present) {
            fail(ErrorCode::MissingRequiredField, where + ": required field '" + f.name + "' is missing");
        }
        if (!present) continue;
        const auto& term = map.at(f.name);
        if (term == kOmit) continue;
        auto& out = node.properties[term];
        out.insert(out.end(), it->second.begin(), it->second.end());
    }
    for (const auto& [name, v] : values) {
        if (!find_field(schema, name)) fail(ErrorCode::UnmappedField, where + ": undeclared field '" + name + "'");
    }
}

json field_map_to_json(const std::map<std::string, std::string>& m) {
    json j = json::object();
    for (const auto& [k, v] : m) j[k] = v;
    return j;
}

} // namespace

std::string_view to_string(SourceKind k) {
    switch (k) {
    case SourceKind::Measurement: return "Measurement";
    case SourceKind::EntityRecord: return "EntityRecord";
    case SourceKind::UserProfile: return "UserProfile";
    case SourceKind::Recommendation: return "Recommendation";
    case SourceKind::Feedback: return "Feedback";
    case SourceKind::AnalysisResult: return "AnalysisResult";
    }
    return "Measurement";
}

SourceKind source_kind_from_string(std::string_view s) {
    for (auto k : kAllKinds) {
        if (s == to_string(k)) return k;
    }
    fail(ErrorCode::InvalidSpec, "unknown source kind '" + std::string(s) + "'");
}

std::string_view id_segment(SourceKind k) {
    switch (k) {
    case SourceKind::Measurement: return "observation";
    case SourceKind::EntityRecord: return "entity";
    case SourceKind::UserProfile: return "user";
    case SourceKind::Recommendation: return "recommendation";
    case SourceKind::Feedback: return "feedback";
    case SourceKind::AnalysisResult: return "analysis";
    }
    return "observation";
}

const SourceSchema& schema_for(SourceKind kind) {
    static const auto schemas = build_schemas();
    return schemas.at(kind);
}

void to_json(json& j, const MappingRule& r) {
    j = json{{"id", r.id},
             {"source_kind", to_string(r.kind)},
             {"target_class", r.target_class},
             {"fields", field_map_to_json(r.fields)}};
    if (r.class_field) j["class_field"] = *r.class_field;
    if (!r.children.empty()) {
        json children = json::object();
        for (const auto& [name, c] : r.children) {
            json cj{{"link_property", c.link_property},
                    {"target_class", c.target_class},
                    {"fields", field_map_to_json(c.fields)}};
            if (c.class_field) cj["class_field"] = *c.class_field;
            children[name] = std::move(cj);
        }
        j["children"] = std::move(children);
    }
}

void from_json(const json& j, MappingRule& r) {
    r.id = j.at("id").get<std::string>();
    r.kind = source_kind_from_string(j.at("source_kind").get<std::string>());
    r.target_class = j.at("target_class").get<std::string>();
    r.class_field.reset();
    if (j.contains("class_field")) r.class_field = j.at("class_field").get<std::string>();
    r.fields = j.at("fields").get<std::map<std::string, std::string>>();
    r.children.clear();
    if (j.contains("children")) {
        for (const auto& [name, cj] : j.at("children").items()) {
            ChildMapping c;
            c.link_property = cj.at("link_property").get<std::string>();
            c.target_class = cj.at("target_class").get<std::string>();
            if (cj.contains("class_field")) c.class_field = cj.at("class_field").get<std::string>();
            c.fields = cj.at("fields").get<std::map<std::string, std::string>>();
            r.children[name] = std::move(c);
        }
    }
}

std::vector<MappingRule> default_rules() {
    std::vector<MappingRule> out;
    {
        MappingRule r{"observation", SourceKind::Measurement, "entropy:Observation", std::nullopt, {}, {}};
        r.fields = {{"sensor", "entropy:madeBySensor"},   {"attribute", "entropy:observedProperty"},
                    {"value", "entropy:hasValue"},        {"unit", "entropy:unit"},
                    {"observed_at", "entropy:observedAt"}, {"quality", "entropy:quality"}};
        out.push_back(std::move(r));
    }
    {
        MappingRule r{"entity", SourceKind::EntityRecord, "entropy:Entity", "entity_type", {}, {}};
        r.fields = {{"entity_type", "entropy:entityType"},
                    {"created_at", "entropy:createdAt"},
                    {"updated_at", "entropy:updatedAt"},
                    {"version", "entropy:version"}};
        r.children["attributes"] = {"entropy:hasAttribute",
                                    "entropy:AttributeState",
                                    std::nullopt,
                                    {{"name", "entropy:observedProperty"},
                                     {"value", "entropy:hasValue"},
                                     {"text", "entropy:textValue"},
                                     {"flag", "entropy:booleanValue"},
                                     {"unit", "entropy:unit"},
                                     {"observed_at", "entropy:observedAt"},
                                     {"quality", "entropy:quality"}}};
        out.push_back(std::move(r));
    }
    {
        MappingRule r{"user-profile", SourceKind::UserProfile, "ebio:Person", "gamer_type", {}, {}};
        r.fields = {{"user_id", "ebio:userId"},
                    {"gamer_type", "ebio:hasGamerType"},
                    {"age_band", "ebio:ageBand"},
                    {"role", "ebio:role"},
                    {"groups", "ebio:memberOf"},
                    {"inferred_groups", "ebio:inferredMemberOf"},
                    {"locations", "ebio:hasActivityLocation"}};
        r.children["preferences"] = {
            "ebio:hasPreference", "ebio:Preference", "theme", {{"theme", "ebio:preferenceTheme"}}};
        r.children["actions"] = {"ebio:hasActionCounter",
                                 "ebio:ActionCounter",
                                 std::nullopt,
                                 {{"badge", "ebio:actionBadge"}, {"count", "ebio:actionCount"}}};
        out.push_back(std::move(r));
    }
    {
        MappingRule r{"recommendation", SourceKind::Recommendation, "ebio:Recommendation", "kind", {}, {}};
        r.fields = {{"user", "ebio:targetsUser"},         {"rule", "ebio:fromRule"},
                    {"kind", std::string(kOmit)},         {"content", "ebio:content"},
                    {"state", "ebio:state"},              {"delivered_at", "ebio:deliveredAt"},
                    {"space", "ebio:boundSpace"},         {"theme", "ebio:preferenceTheme"}};
        out.push_back(std::move(r));
    }
    {
        MappingRule r{"feedback", SourceKind::Feedback, "ebio:Feedback", std::nullopt, {}, {}};
        r.fields = {{"recommendation", "ebio:aboutRecommendation"},
                    {"user", "ebio:givenBy"},
                    {"kind", "ebio:feedbackKind"},
                    {"answer", "ebio:answer"},
                    {"given_at", "ebio:givenAt"}};
        out.push_back(std::move(r));
    }
    {
        MappingRule r{"analysis-result", SourceKind::AnalysisResult, "entropy:AnalysisResult", std::nullopt, {}, {}};
        r.fields = {{"algorithm", "entropy:algorithm"},     {"configuration", "entropy:configuration"},
                    {"input_query", "entropy:inputQuery"}, {"result", "entropy:resultData"},
                    {"computed_at", "entropy:computedAt"}, {"version", "entropy:version"}};
        out.push_back(std::move(r));
    }
    return out;
}

Enricher::Enricher(Vocabulary vocab) : vocab_(std::move(vocab)) {
    for (auto& r : default_rules()) {
        const auto kind = r.kind;
        const auto id = r.id;
        register_rule(std::move(r));
        defaults_[kind] = id;
    }
}

void Enricher::check_rule(const MappingRule& rule) const {
    if (rule.id.empty()) fail(ErrorCode::InvalidSpec, "mapping rule id is empty");
    const std::string where = "rule '" + rule.id + "'";
    if (!vocab_.is_class(rule.target_class)) {
        fail(ErrorCode::UnknownTerm, where + ": '" + rule.target_class + "' is not a declared class");
    }
    const auto& schema = schema_for(rule.kind);
    check_field_map(schema.fields, rule.fields, vocab_, where);
    if (rule.class_field && !find_field(schema.fields, *rule.class_field)) {
        fail(ErrorCode::UnmappedField, where + ": class field '" + *rule.class_field + "' is not declared");
    }
    for (const auto& child : schema.children) {
        if (!rule.children.contains(child.name)) {
            fail(ErrorCode::UnmappedField, where + ": nested field '" + child.name + "' is not mapped");
        }
    }
    for (const auto& [name, c] : rule.children) {
        auto it = std::find_if(schema.children.begin(), schema.children.end(),
                               [&](const ChildSchema& s) { return s.name == name; });
        if (it == schema.children.end()) {
            fail(ErrorCode::UnmappedField, where + ": nested field '" + name + "' is not declared");
        }
        const std::string cw = where + "/" + name;
        if (!vocab_.is_property(c.link_property)) {
            fail(ErrorCode::UnknownTerm, cw + ": '" + c.link_property + "' is not a declared property");
        }
        if (!vocab_.is_class(c.target_class)) {
            fail(ErrorCode::UnknownTerm, cw + ": '" + c.target_class + "' is not a declared class");
        }
        if (c.class_field && !find_field(it->fields, *c.class_field)) {
            fail(ErrorCode::UnmappedField, cw + ": class field '" + *c.class_field + "' is not declared");
        }
        check_field_map(it->fields, c.fields, vocab_, cw);
    }
}

void Enricher::register_rule(MappingRule rule) {
    check_rule(rule);
    std::unique_lock lock(mu_);
    rules_[rule.id] = std::move(rule);
}

void Enricher::set_default(SourceKind kind, const std::string& rule_id) {
    std::unique_lock lock(mu_);
    auto it = rules_.find(rule_id);
    if (it == rules_.end()) fail(ErrorCode::UnknownRule, "no mapping rule '" + rule_id + "'");
    if (it->second.kind != kind) fail(ErrorCode::InvalidSpec, "rule '" + rule_id + "' maps a different source kind");
    defaults_[kind] = rule_id;
}

std::optional<MappingRule> Enricher::rule(const std::string& id) const {
    std::shared_lock lock(mu_);
    auto it = rules_.find(id);
    if (it == rules_.end()) return std::nullopt;
    return it->second;
}

std::vector<MappingRule> Enricher::rules() const {
    std::shared_lock lock(mu_);
    std::vector<MappingRule> out;
    for (const auto& [id, r] : rules_) out.push_back(r);
    return out;
}

Document Enricher::enrich(const SourceRecord& record) const {
    std::string id;
    {
        std::shared_lock lock(mu_);
        id = defaults_.at(record.kind);
    }
    return enrich(record, id);
}

Document Enricher::enrich(const SourceRecord& record, const std::string& rule_id) const {
    auto r = rule(rule_id);
    if (!r) fail(ErrorCode::UnknownRule, "no mapping rule '" + rule_id + "'");
    return apply(record, *r, vocab_);
}

Document Enricher::apply(const SourceRecord& record, const MappingRule& rule, const Vocabulary& vocab) {
    if (record.kind != rule.kind) {
        fail(ErrorCode::InvalidSpec, "rule '" + rule.id + "' maps " + std::string(to_string(rule.kind)) +
                                         ", record is " + std::string(to_string(record.kind)));
    }
    if (record.source_id.empty()) fail(ErrorCode::MissingRequiredField, "source record has no identity");
    const auto& schema = schema_for(rule.kind);
    Document doc;
    doc.context = vocab.context();
    doc.node.id = make_document_id(id_segment(record.kind), record.source_id, record.at);
    doc.node.types = {class_for(rule.target_class, rule.class_field, record.fields, vocab)};
    map_fields(schema.fields, rule.fields, record.fields, doc.node, "rule '" + rule.id + "'");

    for (const auto& [name, subs] : record.children) {
        if (!rule.children.contains(name)) {
            fail(ErrorCode::UnmappedField, "rule '" + rule.id + "': undeclared nested field '" + name + "'");
        }
    }
    for (const auto& child : schema.children) {
        auto it = record.children.find(child.name);
        if (it == record.children.end()) continue;
        const auto& mapping = rule.children.at(child.name);
        std::set<std::string> keys;
        for (const auto& sub : it->second) {
            if (!keys.insert(sub.key).second) {
                fail(ErrorCode::InvalidDocument, "duplicate nested key '" + sub.key + "' in '" + child.name + "'");
            }
            Node n;
            n.id = doc.node.id + "#" + child.name + "/" + sub.key;
            n.types = {class_for(mapping.target_class, mapping.class_field, sub.fields, vocab)};
            map_fields(child.fields, mapping.fields, sub.fields, n, "rule '" + rule.id + "'/" + child.name);
            doc.node.add(mapping.link_property, NodeRef{n.id});
            doc.graph.push_back(std::move(n));
        }
    }
    if (auto violations = validate(doc, vocab); !violations.empty()) {
        fail(ErrorCode::InvalidDocument,
             "rule '" + rule.id + "' produced an invalid document: " + violations.front().path + " " +
                 violations.front().message);
    }
    return doc;
}

std::string sensor_iri(std::string_view sensor_id) { return "urn:entropy:sensor:" + std::string(sensor_id); }
std::string entity_iri(std::string_view entity_id) { return "urn:entropy:entity:" + std::string(entity_id); }
std::string user_iri(std::string_view user_id) { return "urn:entropy:user:" + std::string(user_id); }

SourceRecord source_from_measurement(const Measurement& m) {
    SourceRecord r;
    r.kind = SourceKind::Measurement;
    r.source_id = m.sensor_id + "." + m.attribute;
    r.at = m.observed_at;
    r.fields["sensor"] = {NodeRef{sensor_iri(m.sensor_id)}};
    r.fields["attribute"] = {m.attribute};
    r.fields["value"] = {m.value};
    if (!m.unit.empty()) r.fields["unit"] = {m.unit};
    r.fields["observed_at"] = {format_iso8601(m.observed_at)};
    r.fields["quality"] = {std::string(to_string(m.quality))};
    return r;
}

SourceRecord source_from_entity(const broker::EntityRecord& e) {
    SourceRecord r;
    r.kind = SourceKind::EntityRecord;
    r.source_id = e.id;
    r.at = e.updated_at;
    r.fields["entity_type"] = {e.entity_type};
    r.fields["created_at"] = {format_iso8601(e.created_at)};
    r.fields["updated_at"] = {format_iso8601(e.updated_at)};
    r.fields["version"] = {static_cast<double>(e.version)};
    auto& attrs = r.children["attributes"];
    for (const auto& [name, a] : e.attributes) {
        SubRecord s{name, {}};
        s.fields["name"] = {name};
        std::visit(
            [&](const auto& v) {
                using T = std::decay_t<decltype(v)>;
                if constexpr (std::is_same_v<T, double>) {
                    s.fields["value"] = {v};
                } else if constexpr (std::is_same_v<T, bool>) {
                    s.fields["flag"] = {v};
                } else {
                    s.fields["text"] = {v};
                }
            },
            a.value);
        if (!a.unit.empty()) s.fields["unit"] = {a.unit};
        s.fields["observed_at"] = {format_iso8601(a.observed_at)};
        s.fields["quality"] = {std::string(to_string(a.quality))};
        attrs.push_back(std::move(s));
    }
    return r;
}

} // namespace entropy::fusion
