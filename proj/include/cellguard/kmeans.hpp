#pragma once

// Seeded k-means++ with Lloyd refinement. Deterministic for a given seed and
// input order; centroids are returned sorted lexicographically so the cell
// index of a centroid does not depend on the order clusters were discovered.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace cellguard {

using Point = std::vector<double>;

struct KMeansResult {
  std::vector<Point> centroids;
  std::vector<std::size_t> assignment;  // per input point, index into centroids
  int iterations = 0;
};

// Requires 1 <= k <= number of distinct points.
KMeansResult kmeans(const std::vector<Point>& points, std::size_t k, std::uint64_t seed, int max_iterations = 100);

std::size_t count_distinct(const std::vector<Point>& points);

double squared_distance(std::span<const double> a, std::span<const double> b);

// Lowest index wins ties.
std::size_t nearest_centroid(const std::vector<Point>& centroids, std::span<const double> x);

}  // namespace cellguard
