#include "entropy/core/types.hpp"

#include "entropy/core/error.hpp"

#include <cmath>

namespace entropy {

std::string_view to_string(Quality q) {
    switch (q) {
    case Quality::Raw: return "Raw";
    case Quality::Cleaned: return "Cleaned";
    case Quality::Derived: return "Derived";
    }
    return "Raw";
}

Quality quality_from_string(std::string_view s) {
    if (s == "Raw" || s == "raw") return Quality::Raw;
    if (s == "Cleaned" || s == "cleaned") return Quality::Cleaned;
    if (s == "Derived" || s == "derived") return Quality::Derived;
    fail(ErrorCode::BadRequest, "unknown quality '" + std::string(s) + "'");
}

std::string_view to_string(Comparator c) {
    switch (c) {
    case Comparator::Gt: return ">";
    case Comparator::Ge: return ">=";
    case Comparator::Lt: return "<";
    case Comparator::Le: return "<=";
    case Comparator::Eq: return "=";
    case Comparator::Ne: return "!=";
    }
    return "=";
}

Comparator comparator_from_string(std::string_view s) {
    if (s == ">") return Comparator::Gt;
    if (s == ">=" || s == "≥") return Comparator::Ge;
    if (s == "<") return Comparator::Lt;
    if (s == "<=" || s == "≤") return Comparator::Le;
    if (s == "=" || s == "==") return Comparator::Eq;
    if (s == "!=" || s == "≠") return Comparator::Ne;
    fail(ErrorCode::BadRequest, "unknown comparator '" + std::string(s) + "'");
}

bool compare_scalars(const Scalar& lhs, Comparator c, const Scalar& rhs) {
    if (lhs.index() != rhs.index()) {
        return c == Comparator::Ne;
    }
    return std::visit(
        [&](const auto& l) {
            using T = std::decay_t<decltype(l)>;
            return compare(l, c, std::get<T>(rhs));
        },
        lhs);
}

bool truthy(const Scalar& v) {
    if (const auto* d = std::get_if<double>(&v)) return *d != 0.0;
    if (const auto* b = std::get_if<bool>(&v)) return *b;
    return !std::get<std::string>(v).empty();
}

std::optional<double> as_number(const Scalar& v) {
    if (const auto* d = std::get_if<double>(&v)) return *d;
    if (const auto* b = std::get_if<bool>(&v)) return *b ? 1.0 : 0.0;
    return std::nullopt;
}

json scalar_to_json(const Scalar& v) {
    return std::visit([](const auto& x) { return json(x); }, v);
}

Scalar scalar_from_json(const json& j) {
    if (j.is_boolean()) return j.get<bool>();
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) return j.get<std::string>();
    fail(ErrorCode::BadRequest, "attribute value must be a number, string or boolean");
}

std::string scalar_to_string(const Scalar& v) {
    if (const auto* s = std::get_if<std::string>(&v)) return *s;
    return scalar_to_json(v).dump();
}

Duration duration_from_json(const json& j) {
    if (j.is_number()) {
        return Duration{static_cast<std::int64_t>(std::llround(j.get<double>() * 1000.0))};
    }
    if (j.is_string()) {
        if (auto d = parse_iso_duration(j.get<std::string>())) return *d;
    }
    fail(ErrorCode::BadRequest, "duration must be seconds or an ISO 8601 duration, got " + j.dump());
}

json duration_to_json(Duration d) { return format_iso_duration(d); }

TimePoint time_from_json(const json& j) {
    if (j.is_string()) {
        auto parsed = parse_iso8601(j.get<std::string>());
        if (!parsed) fail(ErrorCode::BadRequest, "'" + j.get<std::string>() + "' is not an ISO 8601 UTC timestamp");
        return *parsed;
    }
    if (j.is_number_integer()) return from_epoch_ms(j.get<std::int64_t>());
    if (j.is_number()) return from_epoch_ms(static_cast<std::int64_t>(j.get<double>()));
    fail(ErrorCode::BadRequest, "timestamp must be epoch milliseconds or ISO 8601, got " + j.dump());
}

void to_json(json& j, const Measurement& m) {
    j = json{{"sensor_id", m.sensor_id},
             {"attribute", m.attribute},
             {"value", m.value},
             {"unit", m.unit},
             {"observed_at", to_epoch_ms(m.observed_at)},
             {"quality", to_string(m.quality)}};
}

void from_json(const json& j, Measurement& m) {
    m.sensor_id = j.at("sensor_id").get<std::string>();
    m.attribute = j.at("attribute").get<std::string>();
    const auto& v = j.at("value");
    if (!v.is_number()) {
        fail(ErrorCode::NonFiniteValue, "measurement value must be numeric");
    }
    m.value = v.get<double>();
    m.unit = j.value("unit", std::string{});
    m.observed_at = time_from_json(j.at("observed_at"));
    m.quality = j.contains("quality") ? quality_from_string(j.at("quality").get<std::string>()) : Quality::Raw;
}

} // namespace entropy
