#include "entropy/stream/outlier.hpp"

#include "entropy/core/error.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace entropy::stream {

void OutlierPolicy::validate() const {
    if (!(lo < hi)) fail(ErrorCode::InvalidSpec, "outlier policy needs lo < hi");
    if (window_size < 5) fail(ErrorCode::InvalidSpec, "outlier window must hold at least 5 samples");
    if (!(zscore_threshold > 0)) fail(ErrorCode::InvalidSpec, "z-score threshold must be positive");
    if (mad_epsilon < 0) fail(ErrorCode::InvalidSpec, "mad_epsilon must be non-negative");
}

namespace {

json bound_to_json(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double bound_from_json(const json& j, const char* key, double fallback) {
    if (!j.contains(key) || j.at(key).is_null()) return fallback;
    return j.at(key).get<double>();
}

} // namespace

void to_json(json& j, const OutlierPolicy& p) {
    j = json{{"plausible_range", json::array({bound_to_json(p.lo), bound_to_json(p.hi)})},
             {"window_size", p.window_size},
             {"zscore_threshold", p.zscore_threshold},
             {"mad_epsilon", p.mad_epsilon}};
}

void from_json(const json& j, OutlierPolicy& p) {
    if (j.contains("plausible_range")) {
        const auto& r = j.at("plausible_range");
        if (!r.is_array() || r.size() != 2) fail(ErrorCode::InvalidSpec, "plausible_range must be [lo, hi]");
        p.lo = r[0].is_null() ? -std::numeric_limits<double>::infinity() : r[0].get<double>();
        p.hi = r[1].is_null() ? std::numeric_limits<double>::infinity() : r[1].get<double>();
    } else {
        p.lo = bound_from_json(j, "lo", p.lo);
        p.hi = bound_from_json(j, "hi", p.hi);
    }
    p.window_size = j.value("window_size", p.window_size);
    p.zscore_threshold = j.value("zscore_threshold", p.zscore_threshold);
    p.mad_epsilon = j.value("mad_epsilon", p.mad_epsilon);
}

OutlierPolicy default_policy_for(std::string_view attribute) {
    struct Kind {
        double lo, hi, resolution;
    };
    static const std::map<std::string, Kind, std::less<>> kinds{
        {"co2", {0, 10'000, 1.0}},
        {"temperature", {-40, 85, 0.1}},
        {"humidity", {0, 100, 0.5}},
        {"energy", {0, 1e6, 0.001}},
        {"power", {0, 1e6, 0.1}},
        {"occupancy", {0, 1000, 1.0}},
        {"open", {0, 1, 1.0}},
        {"presence", {0, 1, 1.0}},
    };
    OutlierPolicy p;
    if (auto it = kinds.find(attribute); it != kinds.end()) {
        p.lo = it->second.lo;
        p.hi = it->second.hi;
        p.mad_epsilon = 3 * it->second.resolution;
    }
    return p;
}

std::string_view to_string(Verdict v) {
    switch (v) {
    case Verdict::Accepted: return "accepted";
    case Verdict::RangeViolation: return "range-violation";
    case Verdict::ZScoreOutlier: return "zscore-outlier";
    case Verdict::FlatWindowOutlier: return "flat-window-outlier";
    }
    return "accepted";
}

double median_of(std::vector<double> xs) {
    const auto n = xs.size();
    const auto mid = xs.begin() + static_cast<std::ptrdiff_t>(n / 2);
    std::nth_element(xs.begin(), mid, xs.end());
    if (n % 2 == 1) return *mid;
    const double upper = *mid;
    const double lower = *std::max_element(xs.begin(), mid);
    return (lower + upper) / 2.0;
}

OutlierDetector::OutlierDetector(OutlierPolicy policy) : policy_(policy) { policy_.validate(); }

Decision OutlierDetector::test(double x) const {
    if (!std::isfinite(x) || x < policy_.lo || x > policy_.hi) return {Verdict::RangeViolation, std::nullopt};
    if (window_.size() < policy_.window_size) return {Verdict::Accepted, std::nullopt};

    std::vector<double> xs(window_.begin(), window_.end());
    const double med = median_of(xs);
    for (auto& v : xs) v = std::abs(v - med);
    const double mad = median_of(std::move(xs));
    if (mad == 0.0) {
        const bool outside = std::abs(x - med) > policy_.mad_epsilon;
        return {outside ? Verdict::FlatWindowOutlier : Verdict::Accepted, std::nullopt};
    }
    const double m = 0.6745 * (x - med) / mad;
    return {std::abs(m) > policy_.zscore_threshold ? Verdict::ZScoreOutlier : Verdict::Accepted, m};
}

Decision OutlierDetector::offer(double x) {
    const auto d = test(x);
    if (d.accepted()) {
        window_.push_back(x);
        if (window_.size() > policy_.window_size) window_.pop_front();
    }
    return d;
}

} // namespace entropy::stream
