#include "ibpcat/vi.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include <boost/math/special_functions/digamma.hpp>

namespace ibpcat::vi {

namespace {

constexpr double kNuFloor = 1e-8;
constexpr double kSigmaFloor = 1e-10;

double digamma(double v) { return boost::math::digamma(v); }

double clamp_nu(double v) { return std::clamp(v, kNuFloor, 1.0 - kNuFloor); }

// exp(phi + sigma^2 / 2), the Gaussian moment generating function at 1
Matrix exp_moments(const VariationalState& s, std::size_t d) {
  return (s.phi[d].array() + 0.5 * s.sigma_sq[d].array()).exp().matrix();
}

std::vector<Matrix> all_moments(const VariationalState& s) {
  std::vector<Matrix> e;
  e.reserve(s.n_dims());
  for (std::size_t d = 0; d < s.n_dims(); ++d) e.push_back(exp_moments(s, d));
  return e;
}

double factor(double nu, double e) { return 1.0 - nu + nu * e; }

// prod_k (1 - nu_nk + nu_nk E_kr) for every r
void row_products(const VariationalState& s, const Matrix& e, std::size_t n,
                  std::vector<double>& out) {
  const auto r_count = e.cols();
  out.assign(static_cast<std::size_t>(r_count), 1.0);
  for (std::size_t k = 0; k < s.k; ++k) {
    const double nu = s.nu(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
    for (Eigen::Index r = 0; r < r_count; ++r) {
      out[static_cast<std::size_t>(r)] *= factor(nu, e(static_cast<Eigen::Index>(k + 1), r));
    }
  }
}

struct StickTerms {
  std::vector<double> expected_log_omega;  // sum_{i<=k} psi(tau_i1) - psi(tau_i1 + tau_i2)
  std::vector<double> multinomial;         // lower bound on E log(1 - omega_k)
};

// Weights c_m of the lambda_k softmax; they do not depend on k.
std::vector<double> lambda_scores(const Matrix& tau) {
  const auto k_count = static_cast<std::size_t>(tau.rows());
  std::vector<double> c(k_count);
  double sum_psi1 = 0.0;
  double sum_psi12 = 0.0;
  for (std::size_t m = 0; m < k_count; ++m) {
    const auto i = static_cast<Eigen::Index>(m);
    sum_psi12 += digamma(tau(i, 0) + tau(i, 1));
    c[m] = digamma(tau(i, 1)) + sum_psi1 - sum_psi12;
    sum_psi1 += digamma(tau(i, 0));
  }
  return c;
}

StickTerms stick_terms(const VariationalState& s) {
  StickTerms out;
  const auto c = lambda_scores(s.tau);
  double acc = 0.0;
  for (std::size_t k = 0; k < s.k; ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    acc += digamma(s.tau(i, 0)) - digamma(s.tau(i, 0) + s.tau(i, 1));
    out.expected_log_omega.push_back(acc);
    double mb = 0.0;
    for (std::size_t m = 0; m <= k; ++m) {
      const double l = s.lambda(i, static_cast<Eigen::Index>(m));
      if (l > 0.0) mb += l * (c[m] - std::log(l));
    }
    out.multinomial.push_back(mb);
  }
  return out;
}

double bernoulli_entropy(double p) {
  double h = 0.0;
  if (p > 0.0) h -= p * std::log(p);
  if (p < 1.0) h -= (1.0 - p) * std::log1p(-p);
  return h;
}

double beta_entropy(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b) - (a - 1.0) * digamma(a) -
         (b - 1.0) * digamma(b) + (a + b - 2.0) * digamma(a + b);
}

// Local objective of one Gaussian coordinate pair with everything else fixed:
// a phi - (phi^2 + s) / (2 sigma_B^2) + log(s) / 2 - c exp(phi + s / 2).
struct LocalObjective {
  double a;
  double c;
  double inv_prior;  // 1 / sigma_B^2

  double value(double phi, double s) const {
    return a * phi - 0.5 * inv_prior * (phi * phi + s) + 0.5 * std::log(s) -
           c * std::exp(phi + 0.5 * s);
  }
};

void newton_coordinate(const LocalObjective& obj, double& phi, double& s,
                       const NewtonSchedule& sched, std::size_t d, std::size_t k, int r) {
  auto fail = [&](const char* what) {
    throw DomainError(std::string("non-finite ") + what + " derivative at (d=" +
                      std::to_string(d) + ", k=" + std::to_string(k) +
                      ", r=" + std::to_string(r) + ")");
  };
  const double scale = 1.0 + std::abs(obj.a);

  for (int it = 0; it < sched.max_iters; ++it) {
    const double ce = obj.c * std::exp(phi + 0.5 * s);
    const double g = obj.a - obj.inv_prior * phi - ce;
    const double h = -obj.inv_prior - ce;
    if (!std::isfinite(g) || !std::isfinite(h)) fail("phi");
    if (std::abs(g) <= sched.tol * scale) break;
    const double step = -g / h;
    const double base = obj.value(phi, s);
    double t = 1.0;
    while (t > 1e-12 && obj.value(phi + t * step, s) < base) t *= 0.5;
    if (t <= 1e-12) break;
    phi += t * step;
    if (std::abs(t * step) <= 1e-15 * (1.0 + std::abs(phi))) break;
  }

  for (int it = 0; it < sched.max_iters; ++it) {
    const double ce = obj.c * std::exp(phi + 0.5 * s);
    const double g = -0.5 * obj.inv_prior + 0.5 / s - 0.5 * ce;
    const double h = -0.5 / (s * s) - 0.25 * ce;
    if (!std::isfinite(g) || !std::isfinite(h)) fail("sigma^2");
    if (std::abs(g) * s <= sched.tol * scale) break;
    // never shrink by more than a factor of ten in one step
    const double target = std::max({s - g / h, 0.1 * s, kSigmaFloor});
    const double step = target - s;
    const double base = obj.value(phi, s);
    double t = 1.0;
    while (t > 1e-12 && obj.value(phi, s + t * step) < base) t *= 0.5;
    if (t <= 1e-12) break;
    s += t * step;
    if (std::abs(t * step) <= 1e-15 * s) break;
  }
}

}  // namespace

void VariationalState::check(const ObservationMatrix& x) const {
  const auto n = static_cast<Eigen::Index>(x.n_rows());
  const auto kk = static_cast<Eigen::Index>(k);
  if (k == 0) throw DomainError("truncation level must be at least 1");
  if (tau.rows() != kk || tau.cols() != 2) throw DomainError("tau must be K x 2");
  if (nu.rows() != n || nu.cols() != kk) throw DomainError("nu must be N x K");
  if (lambda.rows() != kk || lambda.cols() != kk) throw DomainError("lambda must be K x K");
  if (xi.rows() != n || xi.cols() != static_cast<Eigen::Index>(x.n_cols())) {
    throw DomainError("xi must be N x D");
  }
  if (phi.size() != x.n_cols() || sigma_sq.size() != x.n_cols()) {
    throw DomainError("phi and sigma_sq need one matrix per dimension");
  }
  for (std::size_t d = 0; d < x.n_cols(); ++d) {
    if (phi[d].rows() != kk + 1 || phi[d].cols() != x.cardinality(d) ||
        sigma_sq[d].rows() != kk + 1 || sigma_sq[d].cols() != x.cardinality(d)) {
      throw DomainError("phi / sigma_sq shape mismatch in dimension " + std::to_string(d));
    }
    if (!phi[d].allFinite()) throw DomainError("non-finite phi");
    if (!(sigma_sq[d].array() > 0.0).all()) throw DomainError("sigma_sq must be positive");
  }
  if (!(tau.array() > 0.0).all()) throw DomainError("tau must be positive");
  if (!(nu.array() > 0.0).all() || !(nu.array() < 1.0).all()) {
    throw DomainError("nu must lie strictly inside (0, 1)");
  }
  if (!(xi.array() > 0.0).all()) throw DomainError("xi must be positive");
  for (Eigen::Index i = 0; i < kk; ++i) {
    double total = 0.0;
    for (Eigen::Index m = 0; m < kk; ++m) {
      const double l = lambda(i, m);
      if (l < 0.0 || (m > i && l != 0.0)) throw DomainError("lambda must be lower triangular");
      total += l;
    }
    if (std::abs(total - 1.0) > 1e-9) throw DomainError("lambda rows must sum to one");
  }
}

double likelihood_term(const ObservationMatrix& x, const VariationalState& s,
                       std::size_t n, std::size_t d) {
  const Matrix e = exp_moments(s, d);
  std::vector<double> prod;
  row_products(s, e, n, prod);
  const int xv = x(n, d);
  const auto ni = static_cast<Eigen::Index>(n);
  double linear = s.phi[d](0, xv);
  for (std::size_t k = 0; k < s.k; ++k) {
    linear += s.nu(ni, static_cast<Eigen::Index>(k)) * s.phi[d](static_cast<Eigen::Index>(k + 1), xv);
  }
  double denom = 0.0;
  for (Eigen::Index r = 0; r < e.cols(); ++r) denom += e(0, r) * prod[static_cast<std::size_t>(r)];
  const double xi = s.xi(ni, static_cast<Eigen::Index>(d));
  return linear + std::log(xi) + 1.0 - xi * denom;
}

double lower_bound(const ObservationMatrix& x, const VariationalState& s,
                   const Hyperparams& hyper) {
  hyper.validate();
  s.check(x);
  const double alpha = hyper.alpha;
  const double sb2 = hyper.sigma_b_sq;
  const auto sticks = stick_terms(s);

  double bound = 0.0;
  for (std::size_t k = 0; k < s.k; ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    const double a = s.tau(i, 0);
    const double b = s.tau(i, 1);
    bound += std::log(alpha) + (alpha - 1.0) * (digamma(a) - digamma(a + b));
    bound += beta_entropy(a, b);
  }

  for (std::size_t d = 0; d < s.n_dims(); ++d) {
    const double count = static_cast<double>(s.phi[d].size());
    bound -= 0.5 * count * std::log(2.0 * std::numbers::pi * sb2);
    bound -= (s.phi[d].squaredNorm() + s.sigma_sq[d].sum()) / (2.0 * sb2);
    bound += 0.5 * (s.sigma_sq[d].array() * (2.0 * std::numbers::pi * std::numbers::e))
                       .log()
                       .sum();
  }

  for (Eigen::Index n = 0; n < s.nu.rows(); ++n) {
    for (std::size_t k = 0; k < s.k; ++k) {
      const double v = s.nu(n, static_cast<Eigen::Index>(k));
      bound += v * sticks.expected_log_omega[k] + (1.0 - v) * sticks.multinomial[k];
      bound += bernoulli_entropy(v);
    }
  }

  std::vector<double> prod;
  for (std::size_t d = 0; d < s.n_dims(); ++d) {
    const Matrix e = exp_moments(s, d);
    for (std::size_t n = 0; n < x.n_rows(); ++n) {
      row_products(s, e, n, prod);
      const auto ni = static_cast<Eigen::Index>(n);
      const int xv = x(n, d);
      double linear = s.phi[d](0, xv);
      for (std::size_t k = 0; k < s.k; ++k) {
        linear += s.nu(ni, static_cast<Eigen::Index>(k)) *
                  s.phi[d](static_cast<Eigen::Index>(k + 1), xv);
      }
      double denom = 0.0;
      for (Eigen::Index r = 0; r < e.cols(); ++r) {
        denom += e(0, r) * prod[static_cast<std::size_t>(r)];
      }
      const double xi = s.xi(ni, static_cast<Eigen::Index>(d));
      bound += linear + std::log(xi) + 1.0 - xi * denom;
    }
  }
  return bound;
}

void update_tau(VariationalState& s, const Hyperparams& hyper) {
  const auto kk = static_cast<Eigen::Index>(s.k);
  const double n = static_cast<double>(s.nu.rows());
  const Vector on = s.nu.colwise().sum().transpose();
  for (Eigen::Index k = 0; k < kk; ++k) {
    double t1 = hyper.alpha;
    double t2 = 1.0;
    for (Eigen::Index m = k; m < kk; ++m) {
      const double off = n - on[m];
      t1 += on[m];
      if (m > k) t1 += off * s.lambda.row(m).segment(k + 1, m - k).sum();
      t2 += off * s.lambda(m, k);
    }
    s.tau(k, 0) = t1;
    s.tau(k, 1) = t2;
  }
}

void update_lambda(VariationalState& s) {
  const auto c = lambda_scores(s.tau);
  const auto kk = static_cast<Eigen::Index>(s.k);
  s.lambda.setZero(kk, kk);
  for (Eigen::Index k = 0; k < kk; ++k) {
    const double top = *std::max_element(c.begin(), c.begin() + k + 1);
    double total = 0.0;
    for (Eigen::Index m = 0; m <= k; ++m) {
      s.lambda(k, m) = std::exp(c[static_cast<std::size_t>(m)] - top);
      total += s.lambda(k, m);
    }
    s.lambda.row(k).head(k + 1) /= total;
  }
}

void update_xi(VariationalState& s) {
  std::vector<double> prod;
  for (std::size_t d = 0; d < s.n_dims(); ++d) {
    const Matrix e = exp_moments(s, d);
    for (Eigen::Index n = 0; n < s.nu.rows(); ++n) {
      row_products(s, e, static_cast<std::size_t>(n), prod);
      double denom = 0.0;
      for (Eigen::Index r = 0; r < e.cols(); ++r) {
        denom += e(0, r) * prod[static_cast<std::size_t>(r)];
      }
      s.xi(n, static_cast<Eigen::Index>(d)) = 1.0 / denom;
    }
  }
}

void update_nu(VariationalState& s, const ObservationMatrix& x, const Hyperparams& hyper) {
  hyper.validate();
  const auto sticks = stick_terms(s);
  const auto e = all_moments(s);
  const std::size_t dims = s.n_dims();
  std::vector<std::vector<double>> prod(dims);

  for (std::size_t n = 0; n < x.n_rows(); ++n) {
    const auto ni = static_cast<Eigen::Index>(n);
    for (std::size_t d = 0; d < dims; ++d) row_products(s, e[d], n, prod[d]);
    for (std::size_t k = 0; k < s.k; ++k) {
      const auto ki = static_cast<Eigen::Index>(k);
      const double old = s.nu(ni, ki);
      double a = sticks.expected_log_omega[k] - sticks.multinomial[k];
      for (std::size_t d = 0; d < dims; ++d) {
        const Matrix& ed = e[d];
        const double xi = s.xi(ni, static_cast<Eigen::Index>(d));
        double acc = 0.0;
        for (Eigen::Index r = 0; r < ed.cols(); ++r) {
          const double ek = ed(ki + 1, r);
          acc += ed(0, r) * (1.0 - ek) * prod[d][static_cast<std::size_t>(r)] / factor(old, ek);
        }
        a += s.phi[d](ki + 1, x(n, d)) + xi * acc;
      }
      const double updated = clamp_nu(1.0 / (1.0 + std::exp(-a)));
      s.nu(ni, ki) = updated;
      for (std::size_t d = 0; d < dims; ++d) {
        for (Eigen::Index r = 0; r < e[d].cols(); ++r) {
          const double ek = e[d](ki + 1, r);
          prod[d][static_cast<std::size_t>(r)] *= factor(updated, ek) / factor(old, ek);
        }
      }
    }
  }
}

GaussianDerivatives gaussian_derivatives(const ObservationMatrix& x, const VariationalState& s,
                                         const Hyperparams& hyper, std::size_t d,
                                         std::size_t k, int r) {
  const Matrix e = exp_moments(s, d);
  const auto ki = static_cast<Eigen::Index>(k);
  std::vector<double> prod;
  double a = 0.0;
  double c = 0.0;
  for (std::size_t n = 0; n < x.n_rows(); ++n) {
    const auto ni = static_cast<Eigen::Index>(n);
    row_products(s, e, n, prod);
    const double xi = s.xi(ni, static_cast<Eigen::Index>(d));
    const double p = prod[static_cast<std::size_t>(r)];
    const bool hit = x(n, d) == r;
    if (k == 0) {
      a += hit ? 1.0 : 0.0;
      c += xi * p;
    } else {
      const double v = s.nu(ni, ki - 1);
      a += hit ? v : 0.0;
      c += v * xi * e(0, r) * p / factor(v, e(ki, r));
    }
  }
  const double ce = c * e(ki, r);
  const double phi = s.phi[d](ki, r);
  const double var = s.sigma_sq[d](ki, r);
  const double inv = 1.0 / hyper.sigma_b_sq;
  return {a - inv * phi - ce, -inv - ce, -0.5 * inv + 0.5 / var - 0.5 * ce,
          -0.5 / (var * var) - 0.25 * ce};
}

void update_phi_sigma(VariationalState& s, const ObservationMatrix& x,
                      const Hyperparams& hyper, const NewtonSchedule& newton) {
  hyper.validate();
  const std::size_t n_rows = x.n_rows();
  const double inv = 1.0 / hyper.sigma_b_sq;
  std::vector<double> prod(n_rows);
  std::vector<double> rest(n_rows);

  for (std::size_t d = 0; d < s.n_dims(); ++d) {
    Matrix& phi = s.phi[d];
    Matrix& var = s.sigma_sq[d];
    for (int r = 0; r < x.cardinality(d); ++r) {
      auto moment = [&](Eigen::Index k) { return std::exp(phi(k, r) + 0.5 * var(k, r)); };
      for (std::size_t n = 0; n < n_rows; ++n) {
        double p = 1.0;
        for (std::size_t k = 0; k < s.k; ++k) {
          p *= factor(s.nu(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k)),
                      moment(static_cast<Eigen::Index>(k + 1)));
        }
        prod[n] = p;
      }

      // bias row: the product over features does not involve it
      {
        double a = 0.0;
        double c = 0.0;
        for (std::size_t n = 0; n < n_rows; ++n) {
          if (x(n, d) == r) a += 1.0;
          c += s.xi(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d)) * prod[n];
        }
        newton_coordinate({a, c, inv}, phi(0, r), var(0, r), newton, d, 0, r);
      }
      const double e0 = moment(0);

      for (std::size_t k = 1; k <= s.k; ++k) {
        const auto ki = static_cast<Eigen::Index>(k);
        const double ek = moment(ki);
        double a = 0.0;
        double c = 0.0;
        for (std::size_t n = 0; n < n_rows; ++n) {
          const double v = s.nu(static_cast<Eigen::Index>(n), ki - 1);
          rest[n] = prod[n] / factor(v, ek);
          if (x(n, d) == r) a += v;
          c += v * s.xi(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d)) * e0 * rest[n];
        }
        newton_coordinate({a, c, inv}, phi(ki, r), var(ki, r), newton, d, k, r);
        const double updated = moment(ki);
        for (std::size_t n = 0; n < n_rows; ++n) {
          prod[n] = rest[n] * factor(s.nu(static_cast<Eigen::Index>(n), ki - 1), updated);
        }
      }
    }
  }
}

VariationalState initial_state(const ObservationMatrix& x, std::size_t k,
                               const Hyperparams& hyper, Rng& rng) {
  hyper.validate();
  if (k == 0) throw DomainError("truncation level must be at least 1");
  const auto n = static_cast<Eigen::Index>(x.n_rows());
  const auto kk = static_cast<Eigen::Index>(k);
  VariationalState s;
  s.k = k;
  s.tau.resize(kk, 2);
  s.tau.col(0).setConstant(hyper.alpha);
  s.tau.col(1).setConstant(1.0);
  s.lambda = Matrix::Zero(kk, kk);
  for (Eigen::Index i = 0; i < kk; ++i) {
    s.lambda.row(i).head(i + 1).setConstant(1.0 / static_cast<double>(i + 1));
  }
  s.nu.resize(n, kk);
  for (Eigen::Index j = 0; j < kk; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) s.nu(i, j) = rng.uniform(0.25, 0.75);
  }
  for (std::size_t d = 0; d < x.n_cols(); ++d) {
    Matrix p(kk + 1, x.cardinality(d));
    for (Eigen::Index r = 0; r < p.cols(); ++r) {
      for (Eigen::Index i = 0; i < p.rows(); ++i) p(i, r) = rng.normal(0.0, 0.1);
    }
    s.phi.push_back(std::move(p));
    s.sigma_sq.push_back(Matrix::Constant(kk + 1, x.cardinality(d), hyper.sigma_b_sq));
  }
  s.xi = Matrix::Ones(n, static_cast<Eigen::Index>(x.n_cols()));
  update_xi(s);
  return s;
}

VariationalState warm_start(const ObservationMatrix& x, std::size_t k,
                            const LatentFeatureState& z, const WeightStack& b,
                            const Hyperparams& hyper, Rng& rng) {
  if (z.n_rows() != x.n_rows()) throw DimensionError("warm start Z has the wrong row count");
  if (z.k_active() > k) throw DomainError("warm start Z has more columns than the truncation");
  if (!b.matches(z.k_active(), x.cardinalities())) {
    throw DimensionError("warm start weights do not match Z and X");
  }
  VariationalState s = initial_state(x, k, hyper, rng);
  for (std::size_t j = 0; j < z.k_active(); ++j) {
    for (std::size_t n = 0; n < z.n_rows(); ++n) {
      s.nu(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(j)) = z(n, j) ? 0.95 : 0.05;
    }
  }
  const auto rows = static_cast<Eigen::Index>(z.k_active() + 1);
  // variances shrink with the number of rows that inform each weight row
  Vector scale(s.k + 1);
  scale[0] = 1.0 / (1.0 + static_cast<double>(x.n_rows()));
  for (std::size_t j = 0; j < s.k; ++j) {
    const double m = j < z.k_active() ? z.column_count(j) : 0.0;
    scale[static_cast<Eigen::Index>(j + 1)] = 1.0 / (1.0 + m);
  }
  for (std::size_t d = 0; d < x.n_cols(); ++d) {
    s.phi[d].topRows(rows) = b.weights[d];
    s.sigma_sq[d] = hyper.sigma_b_sq * scale.replicate(1, s.sigma_sq[d].cols());
  }
  update_xi(s);
  return s;
}

RunResult run_vi(const ObservationMatrix& x, VariationalState init, const Hyperparams& hyper,
                 const Schedule& schedule) {
  hyper.validate();
  init.check(x);
  RunResult out;
  out.state = std::move(init);
  VariationalState& s = out.state;
  double previous = lower_bound(x, s, hyper);
  for (std::size_t it = 0; it < schedule.max_iterations; ++it) {
    update_xi(s);
    update_phi_sigma(s, x, hyper, schedule.newton);
    update_lambda(s);
    update_tau(s, hyper);
    update_nu(s, x, hyper);
    const double bound = lower_bound(x, s, hyper);
    out.bound_trace.push_back(bound);
    if (bound < previous - schedule.decrease_tolerance) {
      throw BoundDecrease("lower bound fell from " + std::to_string(previous) + " to " +
                          std::to_string(bound) + " in cycle " + std::to_string(it));
    }
    const bool done = std::abs(bound - previous) < schedule.relative_tolerance * std::abs(previous);
    previous = bound;
    if (done) {
      out.converged = true;
      break;
    }
  }
  return out;
}

LatentFeatureState binarize(const Matrix& nu, double threshold) {
  LatentFeatureState z(static_cast<std::size_t>(nu.rows()), static_cast<std::size_t>(nu.cols()));
  for (Eigen::Index k = 0; k < nu.cols(); ++k) {
    for (Eigen::Index n = 0; n < nu.rows(); ++n) {
      if (nu(n, k) > threshold) z.set(static_cast<std::size_t>(n), static_cast<std::size_t>(k), true);
    }
  }
  return z;
}

}  // namespace ibpcat::vi
