#pragma once

#include "entropy/core/types.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace entropy::analytics {

using Point = std::vector<double>;

struct ClusterResult {
    std::size_t k = 0;
    /// Cluster index per input point; each point sits at its nearest centroid, ties to the lowest index.
    std::vector<std::size_t> assignments;
    std::vector<Point> centroids;
    double inertia = 0.0;
    std::size_t iterations = 0;
    std::uint64_t seed = 0;
    /// Inertia after each assignment step; non-increasing.
    std::vector<double> inertia_history;
};

void to_json(json& j, const ClusterResult& r);

struct KMeansOptions {
    std::size_t k = 2;
    std::uint64_t seed = 42;
    std::size_t max_iter = 100;
    double tol = 1e-6;
};

/// Uniform double in [0, 1) from the top 53 bits.
double unit_draw(std::mt19937_64& rng);

double squared_distance(const Point& a, const Point& b);

/// Lloyd iterations from k-means++ seeding. Raises dimension-mismatch, k-too-large, invalid-config (k = 0).
ClusterResult kmeans(const std::vector<Point>& points, const KMeansOptions& options);

/// Lowest-inertia result over `restarts` runs seeded seed, seed+1, ...
ClusterResult kmeans_best_of(const std::vector<Point>& points, KMeansOptions options, std::size_t restarts);

/// Per-dimension z-scores; dimensions with zero spread become 0.
std::vector<Point> standardize(const std::vector<Point>& points);

} // namespace entropy::analytics
