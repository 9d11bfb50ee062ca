#pragma once

#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include "ibpcat/core.hpp"

// Laplace approximation of the per-dimension marginal likelihood p(x_d | Z)
// under the multinomial-logit model with Gaussian weight prior.
//
// Parameter vectors use column stacking of B (shape (K+ + 1) x R): entry
// (k, r) sits at index r * (K+ + 1) + k.

namespace ibpcat::laplace {

class NewtonError : public std::runtime_error {
 public:
  NewtonError(const std::string& what, Matrix last_iterate, double grad_norm)
      : std::runtime_error(what),
        last_iterate(std::move(last_iterate)),
        grad_norm(grad_norm) {}
  Matrix last_iterate;
  double grad_norm;
};

class WoodburyDegeneracy : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Distinct rows of Z. Shared by all dimensions of one evaluation.
class PatternIndex {
 public:
  explicit PatternIndex(const LatentFeatureState& z);

  std::size_t n_patterns() const { return static_cast<std::size_t>(design_.rows()); }
  std::size_t n_features() const { return static_cast<std::size_t>(design_.cols()) - 1; }
  std::size_t n_rows() const { return row_pattern_.size(); }
  /// Extended rows (leading 1), one per distinct pattern.
  const Matrix& design() const { return design_; }
  /// Number of observations carrying each pattern.
  const Vector& multiplicity() const { return multiplicity_; }
  std::size_t pattern_of(std::size_t n) const { return row_pattern_[n]; }

 private:
  Matrix design_;
  Vector multiplicity_;
  std::vector<std::size_t> row_pattern_;
};

/// m_kr = sum_n [x_n = r] z_nk, with row 0 counting the bias.
struct SufficientCounts {
  Matrix m;
};

/// Observations of one dimension reduced to (pattern, category) groups.
class DimensionData {
 public:
  DimensionData(std::shared_ptr<const PatternIndex> patterns,
                std::span<const int> x_col, int cardinality);
  DimensionData(const LatentFeatureState& z, std::span<const int> x_col,
                int cardinality);

  struct Group {
    std::size_t pattern;
    int category;
    double count;
  };

  int cardinality() const { return cardinality_; }
  std::size_t n_features() const { return patterns_->n_features(); }
  std::size_t n_params() const {
    return static_cast<std::size_t>(cardinality_) * (n_features() + 1);
  }
  const PatternIndex& patterns() const { return *patterns_; }
  const SufficientCounts& counts() const { return counts_; }
  const std::vector<Group>& groups() const { return groups_; }

 private:
  std::shared_ptr<const PatternIndex> patterns_;
  int cardinality_;
  SufficientCounts counts_;
  std::vector<Group> groups_;
};

struct LaplaceResult {
  Matrix b_map;
  double log_marginal = 0.0;
  int newton_iters = 0;
  double grad_norm_final = 0.0;
};

struct NewtonOptions {
  double grad_tol = 1e-8;
  int max_iters = 100;
};

/// Per-pattern category probabilities (n_patterns x R) at B.
Matrix pattern_probabilities(const Matrix& b, const DimensionData& data);

/// Un-normalised log posterior f(B) = log p(x_d | B, Z) + log p(B).
double objective_f(const Matrix& b, const DimensionData& data, double sigma_b_sq);

/// M - rho - B / sigma_b^2.
Matrix gradient_f(const Matrix& b, const DimensionData& data, double sigma_b_sq);

/// Dense -Hessian of f in column-stacked coordinates.
Matrix hessian_neg(const Matrix& b, const DimensionData& data, double sigma_b_sq);

struct RankOneResult {
  Matrix inverse;
  double log_det = 0.0;
};

/// Inverse and log-determinant of
///   D - sum_g w_g v_g v_g^T,   v_g = pi_g (x) z_g,
/// where D is block diagonal with blocks I / sigma_b^2 + sum_g w_g pi_gr z_g z_g^T.
/// The block inverses are computed first, then one Woodbury downdate and one
/// determinant-lemma factor per row of `design`. Rows with equal (z, pi) may be
/// merged by summing their weights.
///
/// Throws WoodburyDegeneracy when a downdate denominator falls below 1e-12.
RankOneResult rank_one_inverse(const Matrix& design, const Matrix& pi,
                               const Vector& weights, double sigma_b_sq);

/// (-Hessian)^-1 from per-observation probabilities pi_all (N x R).
Matrix fast_inverse(const Matrix& pi_all, const LatentFeatureState& z,
                    const Hyperparams& hyper);

/// log |-Hessian| from per-observation probabilities pi_all (N x R).
double log_det_neg_hessian(const Matrix& pi_all, const LatentFeatureState& z,
                           const Hyperparams& hyper);

/// MAP of B by damped Newton from `start` (zero when null). The Newton
/// direction comes from rank_one_inverse, with a dense Cholesky fallback on
/// Woodbury degeneracy; the inverse of an earlier iterate is reused while the
/// gradient shrinks at least tenfold per step. Throws NewtonError when the
/// gradient max-norm has not dropped below the tolerance within the iteration
/// cap.
LaplaceResult newton_map(const DimensionData& data, double sigma_b_sq,
                         const Matrix* start = nullptr,
                         const NewtonOptions& options = {});

/// Convenience overloads working from raw inputs.
LaplaceResult newton_map(std::span<const int> x_col, int cardinality,
                         const LatentFeatureState& z, const Hyperparams& hyper);
double log_marginal(std::span<const int> x_col, int cardinality,
                    const LatentFeatureState& z, const Hyperparams& hyper);

/// B_MAP for every dimension.
WeightStack map_weights(const ObservationMatrix& x, const LatentFeatureState& z,
                        const Hyperparams& hyper);

/// sum_d log p(x_d | Z).
double log_marginal_sum(const ObservationMatrix& x, const LatentFeatureState& z,
                        const Hyperparams& hyper);

}  // namespace ibpcat::laplace
