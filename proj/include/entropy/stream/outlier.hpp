#pragma once

#include "entropy/core/types.hpp"

#include <cstddef>
#include <deque>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace entropy::stream {

struct OutlierPolicy {
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
    /// Number of most recent accepted samples the score is computed against.
    std::size_t window_size = 20;
    double zscore_threshold = 3.5;
    /// Tolerance around the median when the window has zero spread.
    double mad_epsilon = 0.0;

    /// Throws invalid-spec unless lo < hi, window_size >= 5 and threshold > 0.
    void validate() const;
};

void to_json(json& j, const OutlierPolicy& p);
void from_json(const json& j, OutlierPolicy& p);

/// Plausible range and 3x resolution band for the attribute kinds the fleet reports.
OutlierPolicy default_policy_for(std::string_view attribute);

enum class Verdict { Accepted, RangeViolation, ZScoreOutlier, FlatWindowOutlier };

std::string_view to_string(Verdict v);

struct Decision {
    Verdict verdict = Verdict::Accepted;
    /// Modified z-score; absent during cold start, for range violations and for a flat window.
    std::optional<double> score;

    bool accepted() const { return verdict == Verdict::Accepted; }
};

/// Median of an unsorted sample; the mean of the middle pair for even sizes.
double median_of(std::vector<double> xs);

/// Range check, then modified z-score 0.6745 (x - median) / MAD over the trailing accepted window.
class OutlierDetector {
public:
    explicit OutlierDetector(OutlierPolicy policy);

    Decision test(double x) const;
    /// test() and, when accepted, append x to the trailing window.
    Decision offer(double x);

    const OutlierPolicy& policy() const { return policy_; }
    const std::deque<double>& window() const { return window_; }

private:
    OutlierPolicy policy_;
    std::deque<double> window_;
};

} // namespace entropy::stream
