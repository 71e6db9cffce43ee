#pragma once

#include "entropy/recommender/recommender.hpp"
#include "entropy/tsdb/timeseries_store.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace entropy::analytics {

enum class QueryTarget { Users, Series };

std::string_view to_string(QueryTarget t);

inline constexpr std::size_t kMaxQueryDepth = 16;

/// Leaf comparison or AND/OR over at least one child.
struct Predicate {
    enum class Kind { Leaf, And, Or };
    Kind kind = Kind::Leaf;
    std::string field;
    Comparator op = Comparator::Eq;
    Scalar literal;
    std::vector<Predicate> children;

    bool operator==(const Predicate&) const = default;
    static Predicate leaf(std::string field, Comparator op, Scalar literal);
    static Predicate all(std::vector<Predicate> children);
    static Predicate any(std::vector<Predicate> children);
    std::size_t depth() const;
};

struct QueryAst {
    QueryTarget target = QueryTarget::Users;
    /// Absent matches everything.
    std::optional<Predicate> where;
    /// Series only, half-open [from, to).
    std::optional<TimePoint> from;
    std::optional<TimePoint> to;
    std::vector<std::string> select;

    bool operator==(const QueryAst&) const = default;
};

/// Declared fields per target. Set-valued user fields (group, preference, activity_location)
/// match when any element satisfies the comparison; "!=" means no element equals.
/// A missing single-valued field satisfies only "!=".
const std::vector<std::string>& user_fields();
const std::vector<std::string>& series_fields();
/// Series projections may also name "timestamp".

/// Raises unknown-field or malformed-tree; fills the default projection.
/// Series queries without a range are accepted only when require_series_range is false.
QueryAst parse_query(const json& j, bool require_series_range = true);
/// Canonical form: {"range"?, "select", "target", "where"} with explicit {"and"|"or": [...]} nesting.
json serialize_query(const QueryAst& q);

struct SeriesRow {
    SeriesKey key;
    TimePoint at{};
    double value = 0.0;
    Quality quality = Quality::Raw;
    std::string unit;
};

struct QueryResult {
    QueryTarget target = QueryTarget::Users;
    /// Sorted user ids.
    std::vector<std::string> users;
    /// Projected user fields, parallel to users.
    std::vector<json> user_rows;
    /// Ordered by (series key, time).
    std::vector<SeriesRow> rows;
    std::vector<std::string> select;
};

void to_json(json& j, const QueryResult& r);

bool matches_user(const Predicate& p, const recommender::UserProfile& u);
bool matches_row(const Predicate& p, const SeriesRow& r);

QueryResult execute_users(const QueryAst& q, const std::vector<recommender::UserProfile>& users);
QueryResult execute_series(const QueryAst& q, const tsdb::TimeSeriesStore& store);

} // namespace entropy::analytics
