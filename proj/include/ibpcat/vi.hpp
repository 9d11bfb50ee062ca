#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "ibpcat/core.hpp"
#include "ibpcat/rng.hpp"

namespace ibpcat::vi {

/// Raised when a state violates its invariants or a derivative is not finite.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// The bound went down by more than the schedule allows within one cycle.
class BoundDecrease : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parameters of the truncated mean-field family. Feature indices run 1..K in
/// the weight matrices (row 0 is the bias) and 0..K-1 in tau, nu and lambda.
struct VariationalState {
  std::size_t k = 0;
  Matrix tau;                     // K x 2 Beta parameters
  Matrix nu;                      // N x K Bernoulli means
  Matrix lambda;                  // K x K, row k a distribution over 0..k
  std::vector<Matrix> phi;        // per dimension, (K+1) x R_d means
  std::vector<Matrix> sigma_sq;   // per dimension, (K+1) x R_d variances
  Matrix xi;                      // N x D

  std::size_t n_rows() const { return static_cast<std::size_t>(nu.rows()); }
  std::size_t n_dims() const { return phi.size(); }

  /// Throws DomainError when an invariant fails or shapes do not match x.
  void check(const ObservationMatrix& x) const;
};

/// Closed-form evidence lower bound.
double lower_bound(const ObservationMatrix& x, const VariationalState& s,
                   const Hyperparams& hyper);

/// Bounded likelihood contribution of a single observation x_nd.
double likelihood_term(const ObservationMatrix& x, const VariationalState& s,
                       std::size_t n, std::size_t d);

void update_tau(VariationalState& s, const Hyperparams& hyper);
void update_lambda(VariationalState& s);
void update_nu(VariationalState& s, const ObservationMatrix& x, const Hyperparams& hyper);
void update_xi(VariationalState& s);

struct NewtonSchedule {
  int max_iters = 100;
  double tol = 1e-10;  // on the absolute first derivative
};

/// Coordinate-wise Newton on every phi and then sigma^2 entry, bias row
/// included, using the analytic first and second derivatives.
void update_phi_sigma(VariationalState& s, const ObservationMatrix& x,
                      const Hyperparams& hyper, const NewtonSchedule& newton = {});

struct GaussianDerivatives {
  double d_phi = 0.0;
  double d2_phi = 0.0;
  double d_sigma_sq = 0.0;
  double d2_sigma_sq = 0.0;
};

/// Analytic partials of the bound with respect to phi^d_kr and
/// (sigma^d_kr)^2; k = 0 is the bias row.
GaussianDerivatives gaussian_derivatives(const ObservationMatrix& x, const VariationalState& s,
                                         const Hyperparams& hyper, std::size_t d,
                                         std::size_t k, int r);

/// nu ~ U(0.25, 0.75), phi ~ N(0, 0.01), sigma^2 = sigma_B^2, tau = (alpha, 1),
/// uniform lambda rows, xi at its optimum.
VariationalState initial_state(const ObservationMatrix& x, std::size_t k,
                               const Hyperparams& hyper, Rng& rng);

/// Seeds the first columns from a binary Z (nu = 0.95 / 0.05) and the
/// matching weight rows from B; remaining columns as in initial_state.
VariationalState warm_start(const ObservationMatrix& x, std::size_t k,
                            const LatentFeatureState& z, const WeightStack& b,
                            const Hyperparams& hyper, Rng& rng);

struct Schedule {
  std::size_t max_iterations = 1000;
  double relative_tolerance = 1e-8;
  /// Allowed drop of the bound over one cycle before BoundDecrease.
  double decrease_tolerance = 1e-6;
  NewtonSchedule newton;
};

struct RunResult {
  VariationalState state;
  std::vector<double> bound_trace;  // one value per completed cycle
  bool converged = false;
};

/// Cycles xi, phi/sigma^2, lambda, tau, nu until the relative change of the
/// bound falls below the tolerance or the cycle cap is reached.
RunResult run_vi(const ObservationMatrix& x, VariationalState init, const Hyperparams& hyper,
                 const Schedule& schedule = {});

/// z_nk = 1 iff nu_nk > threshold.
LatentFeatureState binarize(const Matrix& nu, double threshold = 0.5);

}  // namespace ibpcat::vi
