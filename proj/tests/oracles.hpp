#pragma once

// Reference computations shared by the unit tests and the acceptance binary.

#include <cmath>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "ibpcat/core.hpp"
#include "ibpcat/rng.hpp"

namespace oracle {

using ibpcat::LatentFeatureState;
using ibpcat::Matrix;
using ibpcat::Vector;

/// -Hessian assembled entry by entry: I / s2 + sum_n (diag(pi_n) - pi_n pi_n^T) (x) z_n z_n^T.
inline Matrix neg_hessian(const Matrix& pi_all, const LatentFeatureState& z, double s2) {
  const auto k1 = static_cast<Eigen::Index>(z.k_active() + 1);
  const Eigen::Index r_count = pi_all.cols();
  Matrix h = Matrix::Identity(k1 * r_count, k1 * r_count) / s2;
  for (std::size_t n = 0; n < z.n_rows(); ++n) {
    const Vector zn = ibpcat::extended_row(z, n);
    const auto i = static_cast<Eigen::Index>(n);
    for (Eigen::Index r = 0; r < r_count; ++r) {
      for (Eigen::Index q = 0; q < r_count; ++q) {
        const double a = (r == q ? pi_all(i, r) : 0.0) - pi_all(i, r) * pi_all(i, q);
        for (Eigen::Index k = 0; k < k1; ++k) {
          for (Eigen::Index j = 0; j < k1; ++j) h(r * k1 + k, q * k1 + j) += a * zn[k] * zn[j];
        }
      }
    }
  }
  return h;
}

inline Matrix probabilities(const Matrix& b, const LatentFeatureState& z) {
  Matrix pi(static_cast<Eigen::Index>(z.n_rows()), b.cols());
  for (std::size_t n = 0; n < z.n_rows(); ++n) {
    pi.row(static_cast<Eigen::Index>(n)) =
        ibpcat::category_probabilities(ibpcat::extended_row(z, n), b).transpose();
  }
  return pi;
}

// With two categories the likelihood only depends on the weight differences
// delta_k = b_k0 - b_k1, which are independent N(0, 2 s2) under the prior.
inline double binary_log_lik(const std::vector<int>& x, const LatentFeatureState& z,
                             double d0, double d1) {
  double total = 0.0;
  for (std::size_t n = 0; n < x.size(); ++n) {
    const double s = d0 + (z.k_active() > 0 && z(n, 0) ? d1 : 0.0);
    // log sigmoid(+-s)
    const double t = x[n] == 0 ? s : -s;
    total += t > 0 ? -std::log1p(std::exp(-t)) : t - std::log1p(std::exp(t));
  }
  return total;
}

struct MonteCarlo {
  double log_estimate;
  double log_se;  // delta-method standard error of the log estimate
};

/// Plain prior-sampling estimate of log p(x | Z) for R = 2, K+ <= 1.
inline MonteCarlo mc_log_marginal_binary(const std::vector<int>& x, const LatentFeatureState& z,
                                         double s2, std::size_t samples, ibpcat::Rng& rng) {
  const double sd = std::sqrt(2.0 * s2);
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    const double d0 = rng.normal(0.0, sd);
    const double d1 = rng.normal(0.0, sd);
    const double l = std::exp(binary_log_lik(x, z, d0, d1));
    sum += l;
    sum_sq += l * l;
  }
  const double n = static_cast<double>(samples);
  const double mean = sum / n;
  const double var = std::max(0.0, sum_sq / n - mean * mean);
  return {std::log(mean), std::sqrt(var / n) / mean};
}

/// Adaptive Gauss-Kronrod estimate of log p(x | Z) for R = 2, K+ <= 1.
inline double quadrature_log_marginal_binary(const std::vector<int>& x,
                                             const LatentFeatureState& z, double s2) {
  using boost::math::quadrature::gauss_kronrod;
  const double sd = std::sqrt(2.0 * s2);
  const double lim = 10.0;
  const double norm = 1.0 / std::sqrt(2.0 * M_PI);
  auto outer = [&](double u0) {
    const double w0 = norm * std::exp(-0.5 * u0 * u0);
    if (z.k_active() == 0) return w0 * std::exp(binary_log_lik(x, z, sd * u0, 0.0));
    auto inner = [&](double u1) {
      return norm * std::exp(-0.5 * u1 * u1) * std::exp(binary_log_lik(x, z, sd * u0, sd * u1));
    };
    return w0 * gauss_kronrod<double, 61>::integrate(inner, -lim, lim, 15, 1e-12);
  };
  return std::log(gauss_kronrod<double, 61>::integrate(outer, -lim, lim, 15, 1e-12));
}

}  // namespace oracle
