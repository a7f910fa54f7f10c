#include "cellguard/kmeans.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include <fmt/format.h>

#include "cellguard/error.hpp"

namespace cellguard {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

std::size_t nearest_centroid(const std::vector<Point>& centroids, std::span<const double> x) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = squared_distance(centroids[c], x);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

std::size_t count_distinct(const std::vector<Point>& points) {
  return std::set<Point>(points.begin(), points.end()).size();
}

namespace {

// D^2-weighted draw; falls back to the farthest point when all weights vanish.
std::size_t sample_weighted(const std::vector<double>& w, std::mt19937_64& rng) {
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  if (!(total > 0)) return static_cast<std::size_t>(std::max_element(w.begin(), w.end()) - w.begin());
  std::uniform_real_distribution<double> u(0.0, total);
  double r = u(rng);
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] <= 0) continue;
    r -= w[i];
    if (r < 0) return i;
  }
  for (std::size_t i = w.size(); i-- > 0;) {
    if (w[i] > 0) return i;
  }
  return 0;
}

}  // namespace

KMeansResult kmeans(const std::vector<Point>& points, std::size_t k, std::uint64_t seed, int max_iterations) {
  if (points.empty()) throw ValidationError("k-means needs at least one point");
  if (k == 0 || k > count_distinct(points)) {
    throw ValidationError(fmt::format("k-means: k={} but only {} distinct points", k, count_distinct(points)));
  }
  const std::size_t n = points.size();
  std::mt19937_64 rng(seed);

  std::vector<Point> centroids;
  centroids.push_back(points[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)]);
  std::vector<double> d2(n);
  while (centroids.size() < k) {
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = squared_distance(points[i], centroids[nearest_centroid(centroids, points[i])]);
    }
    centroids.push_back(points[sample_weighted(d2, rng)]);
  }

  KMeansResult res;
  res.assignment.assign(n, 0);
  const std::size_t dim = points.front().size();
  for (int it = 0; it < max_iterations; ++it) {
    res.iterations = it + 1;
    bool changed = it == 0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = nearest_centroid(centroids, points[i]);
      if (c != res.assignment[i]) changed = true;
      res.assignment[i] = c;
    }
    if (!changed) break;

    std::vector<Point> sums(k, Point(dim, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[res.assignment[i]];
      for (std::size_t j = 0; j < dim; ++j) sums[res.assignment[i]][j] += points[i][j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        // Reseed an empty cluster at the point farthest from its centroid.
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double d = squared_distance(points[i], centroids[res.assignment[i]]);
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        centroids[c] = points[far];
        res.assignment[far] = c;
        continue;
      }
      for (std::size_t j = 0; j < dim; ++j) centroids[c][j] = sums[c][j] / static_cast<double>(counts[c]);
    }
  }

  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return centroids[a] < centroids[b]; });
  std::vector<std::size_t> rank(k);
  for (std::size_t r = 0; r < k; ++r) rank[order[r]] = r;
  std::vector<Point> sorted(k);
  for (std::size_t c = 0; c < k; ++c) sorted[rank[c]] = centroids[c];
  res.centroids = std::move(sorted);
  for (std::size_t i = 0; i < n; ++i) res.assignment[i] = nearest_centroid(res.centroids, points[i]);
  return res;
}

}  // namespace cellguard
