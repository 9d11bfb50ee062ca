#include "ibpcat/analysis.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>
#include <string>

namespace ibpcat::analysis {

namespace {

void check_pattern(const FeaturePattern& p, std::size_t k_active) {
  for (auto k : p.active) {
    if (k >= k_active) {
      throw std::out_of_range("feature index " + std::to_string(k) + " out of range (K+ = " +
                              std::to_string(k_active) + ")");
    }
  }
}

}  // namespace

std::vector<Vector> pattern_probabilities(const WeightStack& b, const FeaturePattern& pattern) {
  if (b.weights.empty()) return {};
  const auto k1 = b.weights[0].rows();
  for (const auto& w : b.weights) {
    if (w.rows() != k1) throw DimensionError("weight matrices disagree on K+");
  }
  check_pattern(pattern, static_cast<std::size_t>(k1 - 1));
  Vector row = Vector::Zero(k1);
  row[0] = 1.0;
  for (auto k : pattern.active) row[static_cast<Eigen::Index>(k + 1)] = 1.0;
  std::vector<Vector> out;
  out.reserve(b.weights.size());
  for (const auto& w : b.weights) out.push_back(category_probabilities(row, w));
  return out;
}

std::vector<double> empirical_baseline(const ObservationMatrix& x, std::span<const int> target) {
  if (target.size() != x.n_cols()) throw DimensionError("need one target category per dimension");
  for (std::size_t d = 0; d < x.n_cols(); ++d) {
    if (target[d] < 0 || target[d] >= x.cardinality(d)) {
      throw DimensionError("target category out of range in dimension " + std::to_string(d));
    }
  }
  std::vector<double> out(x.n_cols(), 0.0);
  if (x.n_rows() == 0) return out;
  for (std::size_t n = 0; n < x.n_rows(); ++n) {
    for (std::size_t d = 0; d < x.n_cols(); ++d) {
      if (x(n, d) == target[d]) out[d] += 1.0;
    }
  }
  for (auto& v : out) v /= static_cast<double>(x.n_rows());
  return out;
}

std::vector<MaybeReal> probability_ratio(std::span<const double> probs,
                                         std::span<const double> baseline) {
  if (probs.size() != baseline.size()) throw DimensionError("ratio inputs differ in length");
  std::vector<MaybeReal> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (baseline[i] > 0.0) out[i] = probs[i] / baseline[i];
  }
  return out;
}

Prevalence feature_prevalence(const LatentFeatureState& z) {
  const std::size_t k = z.k_active();
  Prevalence out{std::vector<double>(k, 0.0), std::vector<double>(k, 0.0)};
  if (z.n_rows() == 0) return out;
  const double n = static_cast<double>(z.n_rows());
  for (std::size_t j = 0; j < k; ++j) out.overall[j] = z.column_count(j) / n;
  for (std::size_t i = 0; i < z.n_rows(); ++i) {
    if (z.row_sum(i) != 1) continue;
    for (std::size_t j = 0; j < k; ++j) {
      if (z(i, j)) out.single[j] += 1.0 / n;
    }
  }
  return out;
}

Cooccurrence cooccurrence_tables(const LatentFeatureState& z) {
  const auto k = static_cast<Eigen::Index>(z.k_active());
  if (k < 2) throw std::invalid_argument("co-occurrence tables need at least two features");
  const Matrix zm = z.extended().rightCols(k);
  const double n = std::max<double>(1.0, static_cast<double>(z.n_rows()));
  Cooccurrence out;
  out.empirical = zm.transpose() * zm / n;
  const Vector prev = out.empirical.diagonal();
  out.product = prev * prev.transpose();
  return out;
}

std::vector<std::vector<MaybeReal>> conditional_cooccurrence(const LatentFeatureState& z) {
  const std::size_t k = z.k_active();
  std::vector<std::vector<MaybeReal>> out(k, std::vector<MaybeReal>(k));
  for (std::size_t a = 0; a < k; ++a) {
    const int m = z.column_count(a);
    if (m == 0) continue;
    for (std::size_t b = 0; b < k; ++b) {
      int both = 0;
      for (std::size_t n = 0; n < z.n_rows(); ++n) both += z(n, a) && z(n, b);
      out[a][b] = static_cast<double>(both) / m;
    }
  }
  return out;
}

std::vector<CensusEntry> pattern_census(const LatentFeatureState& z, std::size_t top_m) {
  // lexicographic order on the row equals binary order with feature 0 as MSB
  std::map<std::vector<std::uint8_t>, std::size_t> counts;
  for (std::size_t n = 0; n < z.n_rows(); ++n) ++counts[z.row(n)];
  std::vector<CensusEntry> out;
  out.reserve(counts.size());
  for (auto& [pattern, count] : counts) out.push_back({pattern, count});
  std::stable_sort(out.begin(), out.end(),
                   [](const CensusEntry& a, const CensusEntry& b) { return a.count > b.count; });
  if (out.size() > top_m) out.resize(top_m);
  return out;
}

FlipResult flip_prevalent_features(const LatentFeatureState& z, double threshold) {
  FlipResult out{z, {}};
  const double n = static_cast<double>(z.n_rows());
  for (std::size_t k = 0; k < z.k_active(); ++k) {
    if (n == 0.0 || z.column_count(k) / n <= threshold) continue;
    for (std::size_t i = 0; i < z.n_rows(); ++i) out.z.set(i, k, !z(i, k));
    out.flipped.push_back(k);
  }
  return out;
}

double wildcard_prevalence(const LatentFeatureState& z, const FeaturePattern& required) {
  check_pattern(required, z.k_active());
  if (z.n_rows() == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t n = 0; n < z.n_rows(); ++n) {
    bool all = true;
    for (auto k : required.active) all = all && z(n, k);
    if (all) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(z.n_rows());
}

}  // namespace ibpcat::analysis
