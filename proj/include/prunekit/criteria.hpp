#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "prunekit/tensor.hpp"

namespace prunekit {

enum class Criterion { L1Norm, Fpgm };

inline std::string to_string(Criterion criterion) {
  return criterion == Criterion::L1Norm ? "l1" : "fpgm";
}

inline Criterion criterion_from_string(const std::string& text) {
  if (text == "l1") return Criterion::L1Norm;
  if (text == "fpgm") return Criterion::Fpgm;
  raise(errc::invalid_argument, "unknown criterion \"" + text + "\" (expected \"l1\" or \"fpgm\")");
}

// Per-filter scores; lower score = pruned first for both criteria.
struct ScoreVector {
  std::string layer_name;
  Criterion criterion = Criterion::L1Norm;
  std::vector<double> scores;
};

struct Selection {
  std::string layer_name;
  double theta = 0.0;
  std::vector<std::size_t> pruned_indices;  // sorted ascending
  std::vector<std::size_t> kept_indices;    // sorted ascending, complement of pruned
};

// scores[j] = sum_i |filters[j][i]|, accumulated in f64 in flattening order.
inline ScoreVector l1_scores(const FilterBank& bank) {
  ScoreVector out{bank.layer_name, Criterion::L1Norm, {}};
  out.scores.reserve(bank.n);
  for (const auto& filter : bank.filters) {
    double sum = 0.0;
    for (float w : filter) sum += std::abs(static_cast<double>(w));
    out.scores.push_back(sum);
  }
  return out;
}

namespace detail {

inline double filter_distance(const std::vector<float>& a, const std::vector<float>& b) {
  double squared = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    squared += diff * diff;
  }
  return std::sqrt(squared);
}

}  // namespace detail

// scores[j] = sum_j' ||F_j - F_j'||_2 over the layer's filters. A low
// aggregate distance marks a filter sitting near the layer's geometric
// median, i.e. one whose information the other filters largely replicate.
inline ScoreVector fpgm_scores(const FilterBank& bank) {
  ScoreVector out{bank.layer_name, Criterion::Fpgm, std::vector<double>(bank.n, 0.0)};
  for (std::size_t i = 0; i < bank.n; ++i) {
    for (std::size_t j = i + 1; j < bank.n; ++j) {
      const double distance = detail::filter_distance(bank.filters[i], bank.filters[j]);
      out.scores[i] += distance;
      out.scores[j] += distance;
    }
  }
  return out;
}

inline ScoreVector compute_scores(const FilterBank& bank, Criterion criterion) {
  return criterion == Criterion::L1Norm ? l1_scores(bank) : fpgm_scores(bank);
}

inline std::size_t prune_count(std::size_t n, double theta) {
  if (!(theta >= 0.0 && theta < 1.0)) raise(errc::invalid_argument, "theta must be in [0,1)");
  return static_cast<std::size_t>(std::floor(static_cast<double>(n) * theta));
}

// Prunes the floor(n*theta) lowest-scoring filters; score ties go to the
// lower index.
inline Selection select(const ScoreVector& scores, double theta) {
  const std::size_t n = scores.scores.size();
  const std::size_t m = prune_count(n, theta);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores.scores[a] != scores.scores[b]) return scores.scores[a] < scores.scores[b];
    return a < b;
  });
  Selection selection;
  selection.layer_name = scores.layer_name;
  selection.theta = theta;
  selection.pruned_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m));
  selection.kept_indices.assign(order.begin() + static_cast<std::ptrdiff_t>(m), order.end());
  std::sort(selection.pruned_indices.begin(), selection.pruned_indices.end());
  std::sort(selection.kept_indices.begin(), selection.kept_indices.end());
  return selection;
}

// sum_j ||point - F_j||_2 for an arbitrary point in filter space.
inline double aggregate_distance(const std::vector<double>& point, const FilterBank& bank) {
  if (point.size() != bank.filter_size())
    raise(errc::shape_mismatch, "point dimension " + std::to_string(point.size()) +
                                    " does not match filter size " +
                                    std::to_string(bank.filter_size()));
  double total = 0.0;
  for (const auto& filter : bank.filters) {
    double squared = 0.0;
    for (std::size_t i = 0; i < point.size(); ++i) {
      const double diff = point[i] - static_cast<double>(filter[i]);
      squared += diff * diff;
    }
    total += std::sqrt(squared);
  }
  return total;
}

// Weiszfeld iteration for the exact geometric median. Diagnostic companion to
// fpgm_scores, which ranks by aggregate distance instead of solving for the
// median point. Starts at the centroid; stops once the objective decrease per
// iteration falls below tol, or returns an input point outright when an
// iterate lands within tol of it.
inline std::vector<double> geometric_median(const FilterBank& bank, double tol,
                                            std::size_t max_iter) {
  if (!(tol > 0.0)) raise(errc::invalid_argument, "tol must be positive");
  if (max_iter == 0) raise(errc::invalid_argument, "max_iter must be positive");

  const std::size_t dim = bank.filter_size();
  std::vector<double> x(dim, 0.0);
  for (const auto& filter : bank.filters)
    for (std::size_t i = 0; i < dim; ++i) x[i] += static_cast<double>(filter[i]);
  for (double& v : x) v /= static_cast<double>(bank.n);

  double objective = aggregate_distance(x, bank);
  std::vector<double> distances(bank.n, 0.0);
  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    for (std::size_t j = 0; j < bank.n; ++j) {
      double squared = 0.0;
      for (std::size_t i = 0; i < dim; ++i) {
        const double diff = x[i] - static_cast<double>(bank.filters[j][i]);
        squared += diff * diff;
      }
      distances[j] = std::sqrt(squared);
      if (distances[j] <= tol)
        return std::vector<double>(bank.filters[j].begin(), bank.filters[j].end());
    }

    std::vector<double> next(dim, 0.0);
    double weight_sum = 0.0;
    for (std::size_t j = 0; j < bank.n; ++j) {
      const double weight = 1.0 / distances[j];
      weight_sum += weight;
      for (std::size_t i = 0; i < dim; ++i)
        next[i] += weight * static_cast<double>(bank.filters[j][i]);
    }
    for (double& v : next) v /= weight_sum;

    const double next_objective = aggregate_distance(next, bank);
    x = std::move(next);
    if (objective - next_objective < tol) return x;
    objective = next_objective;
  }
  raise(errc::no_convergence, "geometric median did not converge within " +
                                  std::to_string(max_iter) + " iterations at tol " +
                                  std::to_string(tol));
}

inline nlohmann::json to_json(const ScoreVector& scores) {
  return {{"layer", scores.layer_name},
          {"criterion", to_string(scores.criterion)},
          {"scores", scores.scores}};
}

inline nlohmann::json to_json(const Selection& selection) {
  return {{"layer", selection.layer_name},
          {"theta", selection.theta},
          {"pruned", selection.pruned_indices},
          {"kept", selection.kept_indices}};
}

}  // namespace prunekit
