#pragma once

#include "entropy/broker/context_broker.hpp"
#include "entropy/fusion/jsonld.hpp"

#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

namespace entropy::fusion {

enum class SourceKind { Measurement, EntityRecord, UserProfile, Recommendation, Feedback, AnalysisResult };

std::string_view to_string(SourceKind k);
SourceKind source_kind_from_string(std::string_view s);
/// Kind segment of document ids: "observation", "entity", "user", ...
std::string_view id_segment(SourceKind k);

/// A nested element of a source record, e.g. one attribute of an entity.
struct SubRecord {
    /// Unique within its parent field; becomes the id suffix of the nested node.
    std::string key;
    std::map<std::string, std::vector<Literal>> fields;
};

/// Neutral view of a platform object, built by adapters next to the owning module.
struct SourceRecord {
    SourceKind kind = SourceKind::Measurement;
    std::string source_id;
    TimePoint at{};
    std::map<std::string, std::vector<Literal>> fields;
    std::map<std::string, std::vector<SubRecord>> children;
};

struct FieldSchema {
    std::string name;
    bool required = false;
};

struct ChildSchema {
    std::string name;
    std::vector<FieldSchema> fields;
};

struct SourceSchema {
    SourceKind kind = SourceKind::Measurement;
    std::vector<FieldSchema> fields;
    std::vector<ChildSchema> children;
};

/// The declared fields of every source kind.
const SourceSchema& schema_for(SourceKind kind);

/// Field target that drops the field from the document.
inline constexpr std::string_view kOmit = "@omit";

struct ChildMapping {
    /// Property linking the parent node to each nested node.
    std::string link_property;
    std::string target_class;
    /// Field whose string value names a subclass of target_class in the same prefix.
    std::optional<std::string> class_field;
    std::map<std::string, std::string> fields;
};

struct MappingRule {
    std::string id;
    SourceKind kind = SourceKind::Measurement;
    std::string target_class;
    std::optional<std::string> class_field;
    /// Field -> property term, or kOmit. Must cover the declared schema exactly.
    std::map<std::string, std::string> fields;
    std::map<std::string, ChildMapping> children;
};

void to_json(json& j, const MappingRule& r);
void from_json(const json& j, MappingRule& r);

/// Registered rules plus one default rule per source kind.
class Enricher {
public:
    explicit Enricher(Vocabulary vocab = Vocabulary::standard());

    const Vocabulary& vocabulary() const { return vocab_; }

    /// Raises unknown-term for undeclared classes/properties and unmapped-field for schema gaps.
    void register_rule(MappingRule rule);
    void set_default(SourceKind kind, const std::string& rule_id);
    std::optional<MappingRule> rule(const std::string& id) const;
    std::vector<MappingRule> rules() const;

    Document enrich(const SourceRecord& record) const;
    Document enrich(const SourceRecord& record, const std::string& rule_id) const;
    /// Pure: identical inputs yield identical documents.
    static Document apply(const SourceRecord& record, const MappingRule& rule, const Vocabulary& vocab);

private:
    void check_rule(const MappingRule& rule) const;

    Vocabulary vocab_;
    mutable std::shared_mutex mu_;
    std::map<std::string, MappingRule> rules_;
    std::map<SourceKind, std::string> defaults_;
};

/// Default rules, one per kind, with ids "observation", "entity", "user-profile",
/// "recommendation", "feedback", "analysis-result".
std::vector<MappingRule> default_rules();

std::string sensor_iri(std::string_view sensor_id);
std::string entity_iri(std::string_view entity_id);
std::string user_iri(std::string_view user_id);

SourceRecord source_from_measurement(const Measurement& m);
SourceRecord source_from_entity(const broker::EntityRecord& r);

} // namespace entropy::fusion
