#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "ibpcat/core.hpp"
#include "ibpcat/rng.hpp"

namespace testing {

using ibpcat::Matrix;
using ibpcat::Vector;

inline ibpcat::LatentFeatureState random_z(std::size_t n, std::size_t k, ibpcat::Rng& rng,
                                           double p = 0.5) {
  ibpcat::LatentFeatureState z(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) z.set(i, j, rng.bernoulli(p));
  }
  return z;
}

inline ibpcat::ObservationMatrix random_x(std::size_t n, const std::vector<int>& cards,
                                          ibpcat::Rng& rng) {
  ibpcat::ObservationMatrix x(n, cards);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < cards.size(); ++d) {
      x.set(i, d, static_cast<int>(rng.uniform() * cards[d]));
    }
  }
  return x;
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, ibpcat::Rng& rng,
                            double sd = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal(0.0, sd);
  }
  return m;
}

inline ibpcat::WeightStack random_weights(std::size_t k, const std::vector<int>& cards,
                                          ibpcat::Rng& rng, double sd = 1.0) {
  ibpcat::WeightStack b;
  for (int r : cards) b.weights.push_back(random_matrix(static_cast<Eigen::Index>(k + 1), r, rng, sd));
  return b;
}

inline double max_rel_error(const Matrix& a, const Matrix& b) {
  const double scale = std::max(1.0, b.cwiseAbs().maxCoeff());
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

inline double dense_log_det(const Matrix& m) {
  Eigen::LLT<Matrix> llt(m);
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

inline double log_sum_exp(const std::vector<double>& v) {
  double m = -INFINITY;
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace testing
