#include "entropy/analytics/kmeans.hpp"

#include "entropy/core/error.hpp"

#include <cmath>
#include <limits>

namespace entropy::analytics {

void to_json(json& j, const ClusterResult& r) {
    j = json{{"k", r.k},
             {"assignments", r.assignments},
             {"centroids", r.centroids},
             {"inertia", r.inertia},
             {"iterations", r.iterations},
             {"seed", r.seed},
             {"inertia_history", r.inertia_history}};
}

double unit_draw(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double squared_distance(const Point& a, const Point& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

namespace {

std::size_t nearest(const Point& p, const std::vector<Point>& centroids, double& dist) {
    std::size_t best = 0;
    dist = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.size(); ++c) {
        const double d = squared_distance(p, centroids[c]);
        if (d < dist) {
            dist = d;
            best = c;
        }
    }
    return best;
}

std::vector<Point> seed_plus_plus(const std::vector<Point>& points, std::size_t k, std::mt19937_64& rng) {
    const std::size_t n = points.size();
    std::vector<Point> centroids;
    centroids.push_back(points[std::min(n - 1, static_cast<std::size_t>(unit_draw(rng) * static_cast<double>(n)))]);
    std::vector<double> d2(n);
    while (centroids.size() < k) {
        double total = 0;
        for (std::size_t i = 0; i < n; ++i) {
            double d;
            nearest(points[i], centroids, d);
            d2[i] = d;
            total += d;
        }
        std::size_t pick = n - 1;
        if (total > 0) {
            const double target = unit_draw(rng) * total;
            double acc = 0;
            for (std::size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (target < acc) {
                    pick = i;
                    break;
                }
            }
        } else {
            // Every point coincides with a centroid; take the first point not yet chosen.
            pick = centroids.size() % n;
        }
        centroids.push_back(points[pick]);
    }
    return centroids;
}

} // namespace

ClusterResult kmeans(const std::vector<Point>& points, const KMeansOptions& options) {
    if (options.k == 0) fail(ErrorCode::InvalidConfig, "k must be at least 1");
    if (options.k > points.size()) {
        fail(ErrorCode::KTooLarge, "k = " + std::to_string(options.k) + " exceeds " + std::to_string(points.size()) +
                                       " points");
    }
    const std::size_t dim = points.front().size();
    for (const auto& p : points) {
        if (p.size() != dim) fail(ErrorCode::DimensionMismatch, "points have different dimensions");
        for (double x : p) {
            if (!std::isfinite(x)) fail(ErrorCode::InvalidConfig, "points must be finite");
        }
    }
    std::mt19937_64 rng(options.seed);
    ClusterResult r;
    r.k = options.k;
    r.seed = options.seed;
    r.centroids = seed_plus_plus(points, options.k, rng);
    r.assignments.assign(points.size(), 0);

    auto assign = [&] {
        double inertia = 0;
        for (std::size_t i = 0; i < points.size(); ++i) {
            double d;
            r.assignments[i] = nearest(points[i], r.centroids, d);
            inertia += d;
        }
        return inertia;
    };

    r.inertia = assign();
    r.inertia_history.push_back(r.inertia);
    for (std::size_t it = 0; it < options.max_iter; ++it) {
        std::vector<Point> sums(options.k, Point(dim, 0.0));
        std::vector<std::size_t> counts(options.k, 0);
        for (std::size_t i = 0; i < points.size(); ++i) {
            ++counts[r.assignments[i]];
            for (std::size_t d = 0; d < dim; ++d) sums[r.assignments[i]][d] += points[i][d];
        }
        double shift = 0;
        for (std::size_t c = 0; c < options.k; ++c) {
            if (counts[c] == 0) continue; // empty cluster keeps its centroid
            Point next(dim);
            for (std::size_t d = 0; d < dim; ++d) next[d] = sums[c][d] / static_cast<double>(counts[c]);
            shift = std::max(shift, std::sqrt(squared_distance(next, r.centroids[c])));
            r.centroids[c] = std::move(next);
        }
        r.iterations = it + 1;
        const double inertia = assign();
        r.inertia = inertia;
        r.inertia_history.push_back(inertia);
        if (shift < options.tol) break;
    }
    return r;
}

ClusterResult kmeans_best_of(const std::vector<Point>& points, KMeansOptions options, std::size_t restarts) {
    if (restarts == 0) fail(ErrorCode::InvalidConfig, "restarts must be at least 1");
    const auto base = options.seed;
    ClusterResult best;
    for (std::size_t i = 0; i < restarts; ++i) {
        options.seed = base + i;
        auto r = kmeans(points, options);
        if (i == 0 || r.inertia < best.inertia) best = std::move(r);
    }
    return best;
}

std::vector<Point> standardize(const std::vector<Point>& points) {
    if (points.empty()) return {};
    const std::size_t dim = points.front().size();
    const double n = static_cast<double>(points.size());
    std::vector<Point> out = points;
    for (std::size_t d = 0; d < dim; ++d) {
        double mean = 0;
        for (const auto& p : points) mean += p[d];
        mean /= n;
        double var = 0;
        for (const auto& p : points) var += (p[d] - mean) * (p[d] - mean);
        const double sd = std::sqrt(var / n);
        for (auto& p : out) p[d] = sd > 0 ? (p[d] - mean) / sd : 0.0;
    }
    return out;
}

} // namespace entropy::analytics
