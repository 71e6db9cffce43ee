#pragma once

#include "entropy/fusion/jsonld.hpp"

#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

namespace entropy::fusion {

struct PropertyFilter {
    std::string property;
    Comparator op = Comparator::Eq;
    Literal value;
};

/// A document matches when any value of the property satisfies the comparison.
bool matches(const Node& node, const PropertyFilter& f);

void to_json(json& j, const PropertyFilter& f);
void from_json(const json& j, PropertyFilter& f);

struct DocumentQuery {
    /// Matches the class and its subclasses; empty matches every class.
    std::string class_term;
    std::vector<PropertyFilter> filters;
    /// Half-open [from, to) on the timestamp embedded in the document id.
    std::optional<TimePoint> from;
    std::optional<TimePoint> to;
};

/// Validated JSON-LD documents keyed by id; re-storing an id replaces the previous document.
class DocumentStore {
public:
    explicit DocumentStore(const Vocabulary& vocab = Vocabulary::standard()) : vocab_(vocab) {}

    /// Raises invalid-document when validation reports violations.
    std::string store(Document doc);
    std::optional<Document> get(const std::string& id) const;
    /// Ordered by (id timestamp, id).
    std::vector<Document> find(const DocumentQuery& q) const;
    std::size_t count() const;
    std::size_t count_of(const std::string& class_term) const;

private:
    bool matches_query(const Document& doc, const DocumentQuery& q) const;

    const Vocabulary& vocab_;
    mutable std::shared_mutex mu_;
    std::map<std::string, Document> docs_;
};

} // namespace entropy::fusion
