#include "entropy/analytics/query.hpp"

#include "entropy/core/error.hpp"

#include <algorithm>

namespace entropy::analytics {

namespace {

bool declared(const std::vector<std::string>& fields, const std::string& f) {
    return std::find(fields.begin(), fields.end(), f) != fields.end();
}

std::vector<std::string> projection_fields(QueryTarget t) {
    if (t == QueryTarget::Users) return user_fields();
    auto f = series_fields();
    f.push_back("timestamp");
    return f;
}

std::vector<std::string> default_projection(QueryTarget t) {
    if (t == QueryTarget::Users) return {"user_id"};
    return {"sensor_id", "attribute", "timestamp", "value"};
}

Predicate parse_predicate(const json& j, QueryTarget target, std::size_t depth) {
    if (depth > kMaxQueryDepth) fail(ErrorCode::MalformedTree, "predicate deeper than 16 levels");
    if (!j.is_object()) fail(ErrorCode::MalformedTree, "predicate node must be an object");
    for (const char* op : {"and", "or"}) {
        if (!j.contains(op)) continue;
        if (j.size() != 1) fail(ErrorCode::MalformedTree, std::string("'") + op + "' node carries extra keys");
        const auto& kids = j.at(op);
        if (!kids.is_array() || kids.empty()) {
            fail(ErrorCode::MalformedTree, std::string("'") + op + "' needs a non-empty array");
        }
        Predicate p;
        p.kind = std::string(op) == "and" ? Predicate::Kind::And : Predicate::Kind::Or;
        for (const auto& k : kids) p.children.push_back(parse_predicate(k, target, depth + 1));
        return p;
    }
    if (!j.contains("field") || !j.contains("value") || !j.at("field").is_string()) {
        fail(ErrorCode::MalformedTree, "leaf needs 'field' and 'value'");
    }
    for (const auto& [key, v] : j.items()) {
        if (key != "field" && key != "op" && key != "value") fail(ErrorCode::MalformedTree, "unexpected key '" + key + "'");
    }
    Predicate p;
    p.field = j.at("field").get<std::string>();
    const auto& fields = target == QueryTarget::Users ? user_fields() : series_fields();
    if (!declared(fields, p.field)) fail(ErrorCode::UnknownField, "field '" + p.field + "' is not declared");
    try {
        p.op = comparator_from_string(j.value("op", std::string{"="}));
        p.literal = scalar_from_json(j.at("value"));
    } catch (const Error& e) {
        fail(ErrorCode::MalformedTree, e.what());
    } catch (const json::exception& e) {
        fail(ErrorCode::MalformedTree, e.what());
    }
    return p;
}

json predicate_to_json(const Predicate& p) {
    if (p.kind == Predicate::Kind::Leaf) {
        return json{{"field", p.field}, {"op", to_string(p.op)}, {"value", scalar_to_json(p.literal)}};
    }
    json kids = json::array();
    for (const auto& c : p.children) kids.push_back(predicate_to_json(c));
    return json{{p.kind == Predicate::Kind::And ? "and" : "or", std::move(kids)}};
}

bool match_one(const Scalar& v, Comparator op, const Scalar& lit) { return compare_scalars(v, op, lit); }

bool match_set(const std::set<std::string>& values, Comparator op, const Scalar& lit) {
    if (op == Comparator::Ne) {
        return std::none_of(values.begin(), values.end(),
                            [&](const auto& v) { return compare_scalars(Scalar{v}, Comparator::Eq, lit); });
    }
    return std::any_of(values.begin(), values.end(), [&](const auto& v) { return compare_scalars(Scalar{v}, op, lit); });
}

bool match_missing(Comparator op) { return op == Comparator::Ne; }

template <class LeafFn>
bool eval(const Predicate& p, const LeafFn& leaf) {
    switch (p.kind) {
    case Predicate::Kind::Leaf: return leaf(p);
    case Predicate::Kind::And:
        return std::all_of(p.children.begin(), p.children.end(), [&](const auto& c) { return eval(c, leaf); });
    case Predicate::Kind::Or:
        return std::any_of(p.children.begin(), p.children.end(), [&](const auto& c) { return eval(c, leaf); });
    }
    return false;
}

std::optional<std::string> demographic(const recommender::UserProfile& u, const std::string& key) {
    auto it = u.demographics.find(key);
    if (it == u.demographics.end()) return std::nullopt;
    return it->second;
}

json user_field(const recommender::UserProfile& u, const std::string& f) {
    if (f == "user_id") return u.user_id;
    if (f == "gamer_type") return u.gamer_type ? json(*u.gamer_type) : json(nullptr);
    if (f == "group") return u.groups();
    if (f == "preference") return u.all_preferences();
    if (f == "activity_location") return u.activity_locations;
    if (auto d = demographic(u, f)) return *d;
    return nullptr;
}

} // namespace

std::string_view to_string(QueryTarget t) { return t == QueryTarget::Users ? "Users" : "Series"; }

Predicate Predicate::leaf(std::string field, Comparator op, Scalar literal) {
    Predicate p;
    p.field = std::move(field);
    p.op = op;
    p.literal = std::move(literal);
    return p;
}

Predicate Predicate::all(std::vector<Predicate> children) {
    Predicate p;
    p.kind = Kind::And;
    p.children = std::move(children);
    return p;
}

Predicate Predicate::any(std::vector<Predicate> children) {
    Predicate p;
    p.kind = Kind::Or;
    p.children = std::move(children);
    return p;
}

std::size_t Predicate::depth() const {
    std::size_t d = 0;
    for (const auto& c : children) d = std::max(d, c.depth());
    return d + 1;
}

const std::vector<std::string>& user_fields() {
    static const std::vector<std::string> f{"user_id",  "gamer_type", "group", "preference",
                                            "activity_location", "age_band", "role"};
    return f;
}

const std::vector<std::string>& series_fields() {
    static const std::vector<std::string> f{"sensor_id", "attribute", "value", "quality", "unit"};
    return f;
}

QueryAst parse_query(const json& j, bool require_series_range) {
    if (!j.is_object()) fail(ErrorCode::MalformedTree, "query must be an object");
    QueryAst q;
    const auto target = j.value("target", std::string{"Users"});
    if (target == "Users") {
        q.target = QueryTarget::Users;
    } else if (target == "Series") {
        q.target = QueryTarget::Series;
    } else {
        fail(ErrorCode::MalformedTree, "unknown target '" + target + "'");
    }
    for (const auto& [key, v] : j.items()) {
        if (key != "target" && key != "where" && key != "range" && key != "select") {
            fail(ErrorCode::MalformedTree, "unexpected key '" + key + "'");
        }
    }
    if (j.contains("where") && !j.at("where").is_null()) q.where = parse_predicate(j.at("where"), q.target, 1);
    if (j.contains("range") && !j.at("range").is_null()) {
        if (q.target != QueryTarget::Series) fail(ErrorCode::MalformedTree, "range applies to Series queries only");
        const auto& r = j.at("range");
        try {
            q.from = time_from_json(r.at("from"));
            q.to = time_from_json(r.at("to"));
        } catch (const json::exception&) {
            fail(ErrorCode::MalformedTree, "range needs 'from' and 'to'");
        }
        if (!(*q.from < *q.to)) fail(ErrorCode::InvalidRange, "range must satisfy from < to");
    }
    if (require_series_range && q.target == QueryTarget::Series && !q.from) {
        fail(ErrorCode::InvalidRange, "Series queries need a range");
    }
    if (j.contains("select") && !j.at("select").is_null()) {
        const auto allowed = projection_fields(q.target);
        for (const auto& f : j.at("select")) {
            if (!f.is_string()) fail(ErrorCode::MalformedTree, "select entries must be strings");
            const auto name = f.get<std::string>();
            if (!declared(allowed, name)) fail(ErrorCode::UnknownField, "field '" + name + "' is not declared");
            q.select.push_back(name);
        }
    }
    if (q.select.empty()) q.select = default_projection(q.target);
    return q;
}

json serialize_query(const QueryAst& q) {
    json j{{"target", to_string(q.target)},
           {"where", q.where ? predicate_to_json(*q.where) : json(nullptr)},
           {"select", q.select}};
    if (q.from && q.to) j["range"] = json{{"from", format_iso8601(*q.from)}, {"to", format_iso8601(*q.to)}};
    return j;
}

void to_json(json& j, const QueryResult& r) {
    j = json{{"target", to_string(r.target)}, {"select", r.select}};
    if (r.target == QueryTarget::Users) {
        j["users"] = r.users;
        j["rows"] = r.user_rows;
        j["count"] = r.users.size();
        return;
    }
    json rows = json::array();
    for (const auto& row : r.rows) {
        json o = json::object();
        for (const auto& f : r.select) {
            if (f == "sensor_id") o[f] = row.key.sensor_id;
            if (f == "attribute") o[f] = row.key.attribute;
            if (f == "timestamp") o[f] = format_iso8601(row.at);
            if (f == "value") o[f] = row.value;
            if (f == "quality") o[f] = to_string(row.quality);
            if (f == "unit") o[f] = row.unit;
        }
        rows.push_back(std::move(o));
    }
    j["rows"] = std::move(rows);
    j["count"] = r.rows.size();
}

bool matches_user(const Predicate& p, const recommender::UserProfile& u) {
    return eval(p, [&](const Predicate& leaf) {
        const auto& f = leaf.field;
        if (f == "user_id") return match_one(Scalar{u.user_id}, leaf.op, leaf.literal);
        if (f == "gamer_type") {
            return u.gamer_type ? match_one(Scalar{*u.gamer_type}, leaf.op, leaf.literal) : match_missing(leaf.op);
        }
        if (f == "group") return match_set(u.groups(), leaf.op, leaf.literal);
        if (f == "preference") return match_set(u.all_preferences(), leaf.op, leaf.literal);
        if (f == "activity_location") return match_set(u.activity_locations, leaf.op, leaf.literal);
        const auto d = demographic(u, f);
        return d ? match_one(Scalar{*d}, leaf.op, leaf.literal) : match_missing(leaf.op);
    });
}

bool matches_row(const Predicate& p, const SeriesRow& r) {
    return eval(p, [&](const Predicate& leaf) {
        const auto& f = leaf.field;
        if (f == "sensor_id") return match_one(Scalar{r.key.sensor_id}, leaf.op, leaf.literal);
        if (f == "attribute") return match_one(Scalar{r.key.attribute}, leaf.op, leaf.literal);
        if (f == "value") return match_one(Scalar{r.value}, leaf.op, leaf.literal);
        if (f == "quality") return match_one(Scalar{std::string(to_string(r.quality))}, leaf.op, leaf.literal);
        if (f == "unit") return match_one(Scalar{r.unit}, leaf.op, leaf.literal);
        return false;
    });
}

QueryResult execute_users(const QueryAst& q, const std::vector<recommender::UserProfile>& users) {
    if (q.target != QueryTarget::Users) fail(ErrorCode::MalformedTree, "not a Users query");
    QueryResult r;
    r.target = q.target;
    r.select = q.select;
    std::vector<const recommender::UserProfile*> hits;
    for (const auto& u : users) {
        if (!q.where || matches_user(*q.where, u)) hits.push_back(&u);
    }
    std::sort(hits.begin(), hits.end(), [](auto* a, auto* b) { return a->user_id < b->user_id; });
    for (const auto* u : hits) {
        r.users.push_back(u->user_id);
        json row = json::object();
        for (const auto& f : q.select) row[f] = user_field(*u, f);
        r.user_rows.push_back(std::move(row));
    }
    return r;
}

QueryResult execute_series(const QueryAst& q, const tsdb::TimeSeriesStore& store) {
    if (q.target != QueryTarget::Series) fail(ErrorCode::MalformedTree, "not a Series query");
    QueryResult r;
    r.target = q.target;
    r.select = q.select;
    for (const auto& key : store.series()) {
        tsdb::SeriesQuery sq;
        sq.key = key;
        sq.t0 = *q.from;
        sq.t1 = *q.to;
        for (const auto& m : store.query_raw(sq)) {
            SeriesRow row{key, m.observed_at, m.value, m.quality, m.unit};
            if (!q.where || matches_row(*q.where, row)) r.rows.push_back(std::move(row));
        }
    }
    return r;
}

} // namespace entropy::analytics
