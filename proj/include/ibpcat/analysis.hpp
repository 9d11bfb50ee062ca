#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ibpcat/core.hpp"

namespace ibpcat::analysis {

/// Ratios and conditional frequencies with a zero denominator are nullopt.
using MaybeReal = std::optional<double>;

/// Set of active features (0-based). The bias is always active.
struct FeaturePattern {
  std::vector<std::size_t> active;
};

/// Category probabilities per dimension for a row that has exactly the
/// pattern's features active.
std::vector<Vector> pattern_probabilities(const WeightStack& b, const FeaturePattern& pattern);

/// Fraction of rows whose entry in dimension d equals target[d] (0-based).
std::vector<double> empirical_baseline(const ObservationMatrix& x, std::span<const int> target);

std::vector<MaybeReal> probability_ratio(std::span<const double> probs,
                                         std::span<const double> baseline);

struct Prevalence {
  std::vector<double> overall;  // m_k / N
  std::vector<double> single;   // rows with k as their only feature, over N
};

Prevalence feature_prevalence(const LatentFeatureState& z);

struct Cooccurrence {
  Matrix empirical;  // (1/N) sum_n z_nk1 z_nk2
  Matrix product;    // prevalence_k1 * prevalence_k2
};

/// Requires at least two features.
Cooccurrence cooccurrence_tables(const LatentFeatureState& z);

/// Entry (k1, k2) is P(k2 active | k1 active); rows of empty features are nullopt.
std::vector<std::vector<MaybeReal>> conditional_cooccurrence(const LatentFeatureState& z);

struct CensusEntry {
  std::vector<std::uint8_t> pattern;
  std::size_t count = 0;
};

/// Distinct row patterns by count, descending. Ties go to the smaller binary
/// value, reading feature 0 as the most significant bit.
std::vector<CensusEntry> pattern_census(const LatentFeatureState& z, std::size_t top_m);

struct FlipResult {
  LatentFeatureState z;
  std::vector<std::size_t> flipped;
};

/// Complements every column whose prevalence is strictly above the threshold.
FlipResult flip_prevalent_features(const LatentFeatureState& z, double threshold = 0.8);

/// Fraction of rows having every feature of the pattern (others unconstrained).
double wildcard_prevalence(const LatentFeatureState& z, const FeaturePattern& required);

}  // namespace ibpcat::analysis
