#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ibpcat/rng.hpp"

namespace ibpcat {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// N x D matrix of categorical observations.
///
/// Categories are stored 0-based (0..R_d-1). The 1-based convention of the
/// file formats is converted at the I/O boundary only.
class ObservationMatrix {
 public:
  ObservationMatrix() = default;
  ObservationMatrix(std::size_t n_rows, std::vector<int> cardinalities);

  std::size_t n_rows() const { return n_rows_; }
  std::size_t n_cols() const { return cardinalities_.size(); }
  int cardinality(std::size_t d) const { return cardinalities_[d]; }
  const std::vector<int>& cardinalities() const { return cardinalities_; }

  int operator()(std::size_t n, std::size_t d) const {
    return data_[n * n_cols() + d];
  }
  /// Throws DimensionError if the category is outside [0, R_d).
  void set(std::size_t n, std::size_t d, int category);

  std::vector<int> column(std::size_t d) const;

  bool operator==(const ObservationMatrix&) const = default;

 private:
  std::size_t n_rows_ = 0;
  std::vector<int> cardinalities_;
  std::vector<int> data_;
};

/// Binary N x K+ feature matrix. The always-on bias column is implicit and
/// never stored; code that needs the "extended" row treats index 0 as the
/// bias and feature k as index k + 1.
class LatentFeatureState {
 public:
  LatentFeatureState() = default;
  explicit LatentFeatureState(std::size_t n_rows, std::size_t k_active = 0);

  std::size_t n_rows() const { return n_rows_; }
  std::size_t k_active() const { return columns_.size(); }

  bool operator()(std::size_t n, std::size_t k) const {
    return columns_[k][n] != 0;
  }
  void set(std::size_t n, std::size_t k, bool value);

  int column_count(std::size_t k) const { return counts_[k]; }
  const std::vector<int>& column_counts() const { return counts_; }
  const std::vector<std::uint8_t>& column(std::size_t k) const {
    return columns_[k];
  }

  void add_column(std::vector<std::uint8_t> column);
  void remove_column(std::size_t k);
  /// Row n as K+ entries (without the bias).
  std::vector<std::uint8_t> row(std::size_t n) const;
  std::size_t row_sum(std::size_t n) const;

  /// Recounts from scratch and compares against the cached counts.
  bool counts_consistent() const;

  /// N x (K+ + 1) dense copy with a leading column of ones.
  Matrix extended() const;

  bool operator==(const LatentFeatureState&) const = default;

 private:
  std::size_t n_rows_ = 0;
  std::vector<std::vector<std::uint8_t>> columns_;
  std::vector<int> counts_;
};

/// Per-dimension weight matrices B^d of shape (K+ + 1) x R_d. Row 0 is the
/// bias vector b_0^d.
struct WeightStack {
  std::vector<Matrix> weights;

  std::size_t n_dims() const { return weights.size(); }
  bool all_finite() const;
  /// Checks shapes against (K+ + 1, R_d) for every dimension.
  bool matches(std::size_t k_active, const std::vector<int>& cardinalities) const;
  void remove_feature(std::size_t k);
};

struct Hyperparams {
  double alpha = 1.0;
  double sigma_b_sq = 1.0;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument unless alpha > 0 and sigma_b_sq > 0.
  void validate() const;
};

/// Softmax of z_row^T * weights (column r gives the score of category r).
/// z_row is the extended row, so z_row[0] must be 1.
Vector category_probabilities(const Vector& z_row, const Matrix& weights);

/// In-place softmax with max subtraction.
void softmax_inplace(Eigen::Ref<Vector> scores);

/// Extended row of Z for observation n.
Vector extended_row(const LatentFeatureState& z, std::size_t n);

/// sum_n sum_d log pi_nd^{x_nd}.
double log_likelihood(const ObservationMatrix& x, const LatentFeatureState& z,
                      const WeightStack& b);

/// Draws Z from the IBP via the stick-breaking construction, adding sticks
/// until the remaining probability mass drops below 1e-12. Empty columns are
/// pruned.
LatentFeatureState sample_prior(std::size_t n_rows, const Hyperparams& hyper,
                                Rng& rng);

/// Columns reordered by their binary value (row 0 most significant),
/// descending.
LatentFeatureState left_order(const LatentFeatureState& z);

}  // namespace ibpcat
