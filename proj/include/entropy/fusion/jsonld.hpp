#pragma once

#include "entropy/fusion/vocabulary.hpp"

#include <compare>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace entropy::fusion {

struct NodeRef {
    std::string id;
    auto operator<=>(const NodeRef&) const = default;
};

using Literal = std::variant<double, std::string, bool, NodeRef>;

struct Node {
    std::string id;
    std::vector<std::string> types;
    /// Multi-valued properties keep insertion order.
    std::map<std::string, std::vector<Literal>> properties;

    bool operator==(const Node&) const = default;
    void set(const std::string& property, Literal value) { properties[property] = {std::move(value)}; }
    void add(const std::string& property, Literal value) { properties[property].push_back(std::move(value)); }
    const Literal* first(const std::string& property) const;
};

/// Compacted JSON-LD document: a top node plus nodes embedded through its NodeRefs.
struct Document {
    json context = json::object();
    Node node;
    /// Nested nodes, each reachable through a NodeRef from `node`; order is not significant.
    std::vector<Node> graph;

    /// Structural equality; graph compared as a set keyed by node id.
    bool operator==(const Document& other) const;
    const std::string& id() const { return node.id; }
};

/// Sorted keys, embedded nodes inlined at their reference.
json to_jsonld(const Document& doc);
Document from_jsonld(const json& j);
std::string serialize(const Document& doc);
Document parse(std::string_view text);

struct Violation {
    std::string path;
    std::string message;
    bool operator==(const Violation&) const = default;
};

/// Empty when every term resolves and every literal matches its declared range.
std::vector<Violation> validate(const Document& doc, const Vocabulary& vocab);

/// urn:entropy:<kind>:<source-id>:<epoch-ms>
std::string make_document_id(std::string_view kind, std::string_view source_id, TimePoint at);
/// The timestamp component of a document id.
std::optional<TimePoint> document_time(std::string_view id);

} // namespace entropy::fusion
