#include "entropy/fusion/document_store.hpp"

#include "entropy/core/error.hpp"

#include <algorithm>
#include <mutex>

namespace entropy::fusion {

bool matches(const Node& node, const PropertyFilter& f) {
    auto it = node.properties.find(f.property);
    if (it == node.properties.end()) return false;
    return std::any_of(it->second.begin(), it->second.end(), [&](const Literal& v) {
        if (v.index() != f.value.index()) return f.op == Comparator::Ne;
        return std::visit(
            [&](const auto& lhs) {
                using T = std::decay_t<decltype(lhs)>;
                return compare(lhs, f.op, std::get<T>(f.value));
            },
            v);
    });
}

void to_json(json& j, const PropertyFilter& f) {
    j = json{{"property", f.property}, {"op", to_string(f.op)}};
    std::visit(
        [&](const auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, NodeRef>) {
                j["value"] = json{{"@id", v.id}};
            } else {
                j["value"] = v;
            }
        },
        f.value);
}

void from_json(const json& j, PropertyFilter& f) {
    f.property = j.at("property").get<std::string>();
    f.op = comparator_from_string(j.value("op", std::string{"="}));
    const auto& v = j.at("value");
    if (v.is_object() && v.contains("@id")) {
        f.value = NodeRef{v.at("@id").get<std::string>()};
    } else if (v.is_boolean()) {
        f.value = v.get<bool>();
    } else if (v.is_number()) {
        f.value = v.get<double>();
    } else if (v.is_string()) {
        f.value = v.get<std::string>();
    } else {
        fail(ErrorCode::BadRequest, "filter value must be a number, string, boolean or node reference");
    }
}

std::string DocumentStore::store(Document doc) {
    if (auto v = validate(doc, vocab_); !v.empty()) {
        fail(ErrorCode::InvalidDocument, "document '" + doc.id() + "': " + v.front().path + " " + v.front().message);
    }
    std::string id = doc.id();
    std::unique_lock lock(mu_);
    docs_[id] = std::move(doc);
    return id;
}

std::optional<Document> DocumentStore::get(const std::string& id) const {
    std::shared_lock lock(mu_);
    auto it = docs_.find(id);
    if (it == docs_.end()) return std::nullopt;
    return it->second;
}

bool DocumentStore::matches_query(const Document& doc, const DocumentQuery& q) const {
    if (!q.class_term.empty()) {
        const bool typed = std::any_of(doc.node.types.begin(), doc.node.types.end(),
                                       [&](const std::string& t) { return vocab_.is_subclass_of(t, q.class_term); });
        if (!typed) return false;
    }
    if (q.from || q.to) {
        const auto t = document_time(doc.id());
        if (!t) return false;
        if (q.from && *t < *q.from) return false;
        if (q.to && *t >= *q.to) return false;
    }
    return std::all_of(q.filters.begin(), q.filters.end(), [&](const PropertyFilter& f) { return matches(doc.node, f); });
}

std::vector<Document> DocumentStore::find(const DocumentQuery& q) const {
    std::vector<Document> out;
    {
        std::shared_lock lock(mu_);
        for (const auto& [id, doc] : docs_) {
            if (matches_query(doc, q)) out.push_back(doc);
        }
    }
    std::stable_sort(out.begin(), out.end(), [](const Document& a, const Document& b) {
        const auto ta = document_time(a.id()).value_or(TimePoint{});
        const auto tb = document_time(b.id()).value_or(TimePoint{});
        return ta != tb ? ta < tb : a.id() < b.id();
    });
    return out;
}

std::size_t DocumentStore::count() const {
    std::shared_lock lock(mu_);
    return docs_.size();
}

std::size_t DocumentStore::count_of(const std::string& class_term) const {
    DocumentQuery q;
    q.class_term = class_term;
    return find(q).size();
}

} // namespace entropy::fusion
