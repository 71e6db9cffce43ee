#include "entropy/fusion/jsonld.hpp"

#include "entropy/core/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>

namespace entropy::fusion {

const Literal* Node::first(const std::string& property) const {
    auto it = properties.find(property);
    return it == properties.end() || it->second.empty() ? nullptr : &it->second.front();
}

namespace {

std::vector<Node> sorted_graph(std::vector<Node> g) {
    std::sort(g.begin(), g.end(), [](const Node& a, const Node& b) { return a.id < b.id; });
    return g;
}

json node_to_json(const Node& node, const std::map<std::string, const Node*>& graph, std::set<std::string>& embedded);

json literal_to_json(const Literal& lit, const std::map<std::string, const Node*>& graph,
                     std::set<std::string>& embedded) {
    return std::visit(
        [&](const auto& v) -> json {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, NodeRef>) {
                auto it = graph.find(v.id);
                // First reference embeds the node; later ones stay references.
                if (it != graph.end() && embedded.insert(v.id).second) return node_to_json(*it->second, graph, embedded);
                return json{{"@id", v.id}};
            } else {
                return json(v);
            }
        },
        lit);
}

json node_to_json(const Node& node, const std::map<std::string, const Node*>& graph, std::set<std::string>& embedded) {
    json j = json::object();
    j["@id"] = node.id;
    if (node.types.size() == 1) {
        j["@type"] = node.types.front();
    } else if (!node.types.empty()) {
        j["@type"] = node.types;
    }
    for (const auto& [term, values] : node.properties) {
        if (values.empty()) continue;
        if (values.size() == 1) {
            j[term] = literal_to_json(values.front(), graph, embedded);
        } else {
            json arr = json::array();
            for (const auto& v : values) arr.push_back(literal_to_json(v, graph, embedded));
            j[term] = std::move(arr);
        }
    }
    return j;
}

Node node_from_json(const json& j, std::vector<Node>& graph);

Literal literal_from_json(const json& j, std::vector<Node>& graph) {
    if (j.is_object()) {
        if (!j.contains("@id") || !j.at("@id").is_string()) fail(ErrorCode::InvalidDocument, "node object without @id");
        if (j.size() > 1) graph.push_back(node_from_json(j, graph));
        return NodeRef{j.at("@id").get<std::string>()};
    }
    if (j.is_boolean()) return j.get<bool>();
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) return j.get<std::string>();
    fail(ErrorCode::InvalidDocument, "unsupported literal " + j.dump());
}

Node node_from_json(const json& j, std::vector<Node>& graph) {
    if (!j.is_object()) fail(ErrorCode::InvalidDocument, "node is not an object");
    Node n;
    if (!j.contains("@id") || !j.at("@id").is_string()) fail(ErrorCode::InvalidDocument, "node without @id");
    n.id = j.at("@id").get<std::string>();
    if (j.contains("@type")) {
        const auto& t = j.at("@type");
        if (t.is_string()) {
            n.types.push_back(t.get<std::string>());
        } else if (t.is_array()) {
            for (const auto& x : t) {
                if (!x.is_string()) fail(ErrorCode::InvalidDocument, "@type entries must be strings");
                n.types.push_back(x.get<std::string>());
            }
        } else {
            fail(ErrorCode::InvalidDocument, "@type must be a string or array");
        }
    }
    for (const auto& [key, value] : j.items()) {
        if (key == "@id" || key == "@type" || key == "@context") continue;
        if (key.starts_with("@")) fail(ErrorCode::InvalidDocument, "unsupported keyword " + key);
        auto& values = n.properties[key];
        if (value.is_array()) {
            for (const auto& v : value) values.push_back(literal_from_json(v, graph));
        } else {
            values.push_back(literal_from_json(value, graph));
        }
    }
    return n;
}

bool in_range(const Literal& lit, Range range) {
    switch (range) {
    case Range::Any: return true;
    case Range::Number: return std::holds_alternative<double>(lit) && std::isfinite(std::get<double>(lit));
    case Range::String: return std::holds_alternative<std::string>(lit);
    case Range::Boolean: return std::holds_alternative<bool>(lit);
    case Range::Node: return std::holds_alternative<NodeRef>(lit);
    case Range::DateTime:
        return std::holds_alternative<std::string>(lit) && parse_iso8601(std::get<std::string>(lit)).has_value();
    }
    return false;
}

std::string describe(const Literal& lit) {
    return std::visit(
        [](const auto& v) -> std::string {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, NodeRef>) {
                return "node " + v.id;
            } else {
                return json(v).dump();
            }
        },
        lit);
}

void validate_node(const Node& node, const std::string& path, const Vocabulary& vocab, const json& context,
                   std::vector<Violation>& out) {
    auto check_prefix = [&](const std::string& term, const std::string& where) {
        const auto colon = term.find(':');
        if (colon == std::string::npos) return;
        const auto prefix = term.substr(0, colon);
        auto it = vocab.prefixes().find(prefix);
        if (it == vocab.prefixes().end()) return; // reported as an unknown term
        if (!context.is_object() || !context.contains(prefix) || context.at(prefix) != it->second) {
            out.push_back({where, "prefix '" + prefix + "' is not bound to " + it->second + " in @context"});
        }
    };
    if (node.id.empty()) out.push_back({path + "/@id", "node has no @id"});
    if (node.types.empty()) out.push_back({path + "/@type", "node has no @type"});
    for (const auto& t : node.types) {
        if (!vocab.is_class(t)) {
            out.push_back({path + "/@type", "'" + t + "' is not a declared class"});
        } else {
            check_prefix(t, path + "/@type");
        }
    }
    for (const auto& [term, values] : node.properties) {
        const std::string where = path + "/" + term;
        const Term* decl = vocab.find(term);
        if (!decl || decl->kind != TermKind::Property) {
            out.push_back({where, "'" + term + "' is not a declared property"});
            continue;
        }
        check_prefix(term, where);
        for (const auto& v : values) {
            if (!in_range(v, decl->range)) {
                out.push_back({where, describe(v) + " is outside range " + std::string(to_string(decl->range))});
            }
        }
    }
}

void collect_refs(const Node& node, std::set<std::string>& refs) {
    for (const auto& [term, values] : node.properties) {
        for (const auto& v : values) {
            if (const auto* r = std::get_if<NodeRef>(&v)) refs.insert(r->id);
        }
    }
}

} // namespace

bool Document::operator==(const Document& other) const {
    return context == other.context && node == other.node && sorted_graph(graph) == sorted_graph(other.graph);
}

json to_jsonld(const Document& doc) {
    std::map<std::string, const Node*> graph;
    for (const auto& n : doc.graph) graph.emplace(n.id, &n);
    std::set<std::string> embedded{doc.node.id};
    json j = node_to_json(doc.node, graph, embedded);
    j["@context"] = doc.context;
    return j;
}

Document from_jsonld(const json& j) {
    if (!j.is_object()) fail(ErrorCode::InvalidDocument, "document is not a JSON object");
    Document doc;
    if (j.contains("@context")) {
        if (!j.at("@context").is_object()) fail(ErrorCode::InvalidDocument, "@context must be an object");
        doc.context = j.at("@context");
    }
    doc.node = node_from_json(j, doc.graph);
    return doc;
}

std::string serialize(const Document& doc) { return to_jsonld(doc).dump(); }

Document parse(std::string_view text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) fail(ErrorCode::InvalidDocument, "document is not valid JSON");
    return from_jsonld(j);
}

std::vector<Violation> validate(const Document& doc, const Vocabulary& vocab) {
    std::vector<Violation> out;
    validate_node(doc.node, "", vocab, doc.context, out);
    std::set<std::string> ids{doc.node.id};
    std::set<std::string> refs;
    collect_refs(doc.node, refs);
    for (const auto& n : doc.graph) {
        const std::string path = "/@graph/" + n.id;
        if (!ids.insert(n.id).second) out.push_back({path, "duplicate node id"});
        validate_node(n, path, vocab, doc.context, out);
        collect_refs(n, refs);
    }
    for (const auto& n : doc.graph) {
        if (!refs.contains(n.id)) out.push_back({"/@graph/" + n.id, "nested node is not referenced"});
    }
    return out;
}

std::string make_document_id(std::string_view kind, std::string_view source_id, TimePoint at) {
    std::string id = "urn:entropy:";
    id += kind;
    id += ':';
    id += source_id;
    id += ':';
    id += std::to_string(to_epoch_ms(at));
    return id;
}

std::optional<TimePoint> document_time(std::string_view id) {
    const auto colon = id.rfind(':');
    if (colon == std::string_view::npos) return std::nullopt;
    auto tail = id.substr(colon + 1);
    if (const auto hash = tail.find('#'); hash != std::string_view::npos) tail = tail.substr(0, hash);
    std::int64_t ms = 0;
    auto [ptr, ec] = std::from_chars(tail.data(), tail.data() + tail.size(), ms);
    if (ec != std::errc{} || ptr != tail.data() + tail.size() || tail.empty()) return std::nullopt;
    return from_epoch_ms(ms);
}

} // namespace entropy::fusion
