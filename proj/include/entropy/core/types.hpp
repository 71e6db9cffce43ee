#pragma once

#include "entropy/core/time.hpp"

#include <json.hpp>

#include <compare>
#include <optional>
#include <string>
#include <string_view>
#include <variant>

namespace entropy {

using json = nlohmann::json;

using Scalar = std::variant<double, std::string, bool>;

enum class Quality { Raw, Cleaned, Derived };

std::string_view to_string(Quality q);
Quality quality_from_string(std::string_view s);

enum class Comparator { Gt, Ge, Lt, Le, Eq, Ne };

std::string_view to_string(Comparator c);
/// Accepts ">", ">=", "<", "<=", "=", "==", "!=" and the unicode forms.
Comparator comparator_from_string(std::string_view s);

template <class T>
bool compare(const T& lhs, Comparator c, const T& rhs) {
    switch (c) {
    case Comparator::Gt: return lhs > rhs;
    case Comparator::Ge: return lhs >= rhs;
    case Comparator::Lt: return lhs < rhs;
    case Comparator::Le: return lhs <= rhs;
    case Comparator::Eq: return lhs == rhs;
    case Comparator::Ne: return lhs != rhs;
    }
    return false;
}

/// Type-aware scalar comparison; values of different kinds only satisfy Ne.
bool compare_scalars(const Scalar& lhs, Comparator c, const Scalar& rhs);

/// Numbers are truthy when non-zero, strings when non-empty.
bool truthy(const Scalar& v);
std::optional<double> as_number(const Scalar& v);

json scalar_to_json(const Scalar& v);
Scalar scalar_from_json(const json& j);
std::string scalar_to_string(const Scalar& v);

/// Durations on the wire: a number of seconds or an ISO 8601 string ("PT1H").
Duration duration_from_json(const json& j);
json duration_to_json(Duration d);

/// Timestamps on the wire: epoch milliseconds or an ISO 8601 UTC string.
TimePoint time_from_json(const json& j);

/// One timestamped sensor reading; the unit of ingestion and storage.
struct Measurement {
    std::string sensor_id;
    std::string attribute;
    double value = 0.0;
    std::string unit;
    TimePoint observed_at{};
    Quality quality = Quality::Raw;

    bool operator==(const Measurement&) const = default;
};

void to_json(json& j, const Measurement& m);
void from_json(const json& j, Measurement& m);

struct SeriesKey {
    std::string sensor_id;
    std::string attribute;

    auto operator<=>(const SeriesKey&) const = default;
    std::string str() const { return sensor_id + "/" + attribute; }
};

} // namespace entropy
