#include "ibpcat/laplace.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <unordered_map>

namespace ibpcat::laplace {

namespace {

std::string row_key(const LatentFeatureState& z, std::size_t n) {
  std::string key(z.k_active(), '\0');
  for (std::size_t k = 0; k < z.k_active(); ++k) key[k] = z(n, k) ? '1' : '0';
  return key;
}

Eigen::Map<const Vector> stacked(const Matrix& b) {
  return {b.data(), b.size()};
}

// Scores, log-sum-exp and probabilities for every pattern at B.
struct Evaluation {
  Matrix log_pi;  // n_patterns x R
  Matrix pi;
};

Evaluation evaluate(const Matrix& b, const DimensionData& data) {
  Evaluation ev;
  ev.log_pi = data.patterns().design() * b;
  for (Eigen::Index p = 0; p < ev.log_pi.rows(); ++p) {
    auto row = ev.log_pi.row(p);
    const double top = row.maxCoeff();
    const double lse = top + std::log((row.array() - top).exp().sum());
    row.array() -= lse;
  }
  ev.pi = ev.log_pi.array().exp();
  return ev;
}

double data_log_likelihood(const Evaluation& ev, const DimensionData& data) {
  double total = 0.0;
  for (const auto& g : data.groups()) {
    total += g.count * ev.log_pi(static_cast<Eigen::Index>(g.pattern), g.category);
  }
  return total;
}

double objective_from(const Matrix& b, const Evaluation& ev,
                      const DimensionData& data, double sigma_b_sq) {
  const double n_params = static_cast<double>(b.size());
  return data_log_likelihood(ev, data) - b.squaredNorm() / (2.0 * sigma_b_sq) -
         0.5 * n_params * std::log(2.0 * std::numbers::pi * sigma_b_sq);
}

Matrix gradient_from(const Matrix& b, const Evaluation& ev,
                     const DimensionData& data, double sigma_b_sq) {
  const auto& pat = data.patterns();
  Matrix rho = pat.design().transpose() * (pat.multiplicity().asDiagonal() * ev.pi);
  return data.counts().m - rho - b / sigma_b_sq;
}

void check_shape(const Matrix& b, const DimensionData& data) {
  if (b.rows() != static_cast<Eigen::Index>(data.n_features() + 1) ||
      b.cols() != data.cardinality()) {
    throw DimensionError("weight matrix shape does not match (K+ + 1, R)");
  }
}

Matrix dense_hessian_neg(const Matrix& design, const Matrix& pi,
                         const Vector& weights, double sigma_b_sq) {
  const Eigen::Index k1 = design.cols();
  const Eigen::Index r_count = pi.cols();
  const Eigen::Index p = k1 * r_count;
  Matrix h = Matrix::Identity(p, p) / sigma_b_sq;
  for (Eigen::Index g = 0; g < design.rows(); ++g) {
    const Vector z = design.row(g).transpose();
    const Matrix zz = weights[g] * z * z.transpose();
    for (Eigen::Index r = 0; r < r_count; ++r) {
      for (Eigen::Index s = 0; s < r_count; ++s) {
        const double c = (r == s ? pi(g, r) : 0.0) - pi(g, r) * pi(g, s);
        h.block(r * k1, s * k1, k1, k1) += c * zz;
      }
    }
  }
  return h;
}

Matrix per_observation_design(const LatentFeatureState& z) { return z.extended(); }

// Inverse of a small symmetric positive definite matrix through its Cholesky
// factor; adds log|a| to log_det. Returns false if a is not positive definite.
bool spd_inverse(const Matrix& a, Matrix& inv, double& log_det) {
  const Eigen::Index n = a.rows();
  Matrix l = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double s = a(j, j);
    for (Eigen::Index k = 0; k < j; ++k) s -= l(j, k) * l(j, k);
    if (!(s > 0.0)) return false;
    const double d = std::sqrt(s);
    l(j, j) = d;
    log_det += 2.0 * std::log(d);
    for (Eigen::Index i = j + 1; i < n; ++i) {
      double t = a(i, j);
      for (Eigen::Index k = 0; k < j; ++k) t -= l(i, k) * l(j, k);
      l(i, j) = t / d;
    }
  }
  // l <- l^-1 (lower triangular), column by column
  Matrix linv = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    linv(j, j) = 1.0 / l(j, j);
    for (Eigen::Index i = j + 1; i < n; ++i) {
      double t = 0.0;
      for (Eigen::Index k = j; k < i; ++k) t -= l(i, k) * linv(k, j);
      linv(i, j) = t / l(i, i);
    }
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = j; i < n; ++i) {
      double t = 0.0;
      for (Eigen::Index k = i; k < n; ++k) t += linv(k, i) * linv(k, j);
      inv(i, j) = t;
      inv(j, i) = t;
    }
  }
  return true;
}

}  // namespace

PatternIndex::PatternIndex(const LatentFeatureState& z) : row_pattern_(z.n_rows()) {
  std::unordered_map<std::string, std::size_t> seen;
  std::vector<std::size_t> first_row;
  std::vector<double> mult;
  for (std::size_t n = 0; n < z.n_rows(); ++n) {
    auto [it, inserted] = seen.try_emplace(row_key(z, n), first_row.size());
    if (inserted) {
      first_row.push_back(n);
      mult.push_back(0.0);
    }
    row_pattern_[n] = it->second;
    mult[it->second] += 1.0;
  }
  const auto k1 = static_cast<Eigen::Index>(z.k_active() + 1);
  design_.resize(static_cast<Eigen::Index>(first_row.size()), k1);
  for (std::size_t p = 0; p < first_row.size(); ++p) {
    design_.row(static_cast<Eigen::Index>(p)) = extended_row(z, first_row[p]).transpose();
  }
  multiplicity_ = Eigen::Map<Vector>(mult.data(), static_cast<Eigen::Index>(mult.size()));
}

DimensionData::DimensionData(std::shared_ptr<const PatternIndex> patterns,
                             std::span<const int> x_col, int cardinality)
    : patterns_(std::move(patterns)), cardinality_(cardinality) {
  if (x_col.size() != patterns_->n_rows()) {
    throw DimensionError("observation column length does not match Z");
  }
  const auto n_pat = patterns_->n_patterns();
  // per-pattern category histogram, then flattened into (pattern, x) groups
  std::vector<double> hist(n_pat * static_cast<std::size_t>(cardinality), 0.0);
  for (std::size_t n = 0; n < x_col.size(); ++n) {
    const int x = x_col[n];
    if (x < 0 || x >= cardinality) {
      throw DimensionError("category out of range in observation column");
    }
    hist[patterns_->pattern_of(n) * static_cast<std::size_t>(cardinality) +
         static_cast<std::size_t>(x)] += 1.0;
  }
  const auto k1 = static_cast<Eigen::Index>(patterns_->n_features() + 1);
  counts_.m = Matrix::Zero(k1, cardinality);
  for (std::size_t p = 0; p < n_pat; ++p) {
    for (int r = 0; r < cardinality; ++r) {
      const double c = hist[p * static_cast<std::size_t>(cardinality) +
                            static_cast<std::size_t>(r)];
      if (c == 0.0) continue;
      groups_.push_back({p, r, c});
      counts_.m.col(r) +=
          c * patterns_->design().row(static_cast<Eigen::Index>(p)).transpose();
    }
  }
}

DimensionData::DimensionData(const LatentFeatureState& z, std::span<const int> x_col,
                             int cardinality)
    : DimensionData(std::make_shared<const PatternIndex>(z), x_col, cardinality) {}

Matrix pattern_probabilities(const Matrix& b, const DimensionData& data) {
  check_shape(b, data);
  return evaluate(b, data).pi;
}

double objective_f(const Matrix& b, const DimensionData& data, double sigma_b_sq) {
  check_shape(b, data);
  if (!b.allFinite()) throw std::invalid_argument("objective_f: non-finite weights");
  return objective_from(b, evaluate(b, data), data, sigma_b_sq);
}

Matrix gradient_f(const Matrix& b, const DimensionData& data, double sigma_b_sq) {
  check_shape(b, data);
  return gradient_from(b, evaluate(b, data), data, sigma_b_sq);
}

Matrix hessian_neg(const Matrix& b, const DimensionData& data, double sigma_b_sq) {
  check_shape(b, data);
  const auto ev = evaluate(b, data);
  return dense_hessian_neg(data.patterns().design(), ev.pi,
                           data.patterns().multiplicity(), sigma_b_sq);
}

RankOneResult rank_one_inverse(const Matrix& design, const Matrix& pi,
                               const Vector& weights, double sigma_b_sq) {
  if (pi.rows() != design.rows() || weights.size() != design.rows()) {
    throw DimensionError("rank_one_inverse: row counts differ");
  }
  const Eigen::Index k1 = design.cols();
  const Eigen::Index r_count = pi.cols();
  const Eigen::Index p = k1 * r_count;
  const Eigen::Index groups = design.rows();

  // non-zero coordinates of every design row
  std::vector<Eigen::Index> active_start(static_cast<std::size_t>(groups) + 1, 0);
  std::vector<Eigen::Index> active;
  for (Eigen::Index g = 0; g < groups; ++g) {
    for (Eigen::Index k = 0; k < k1; ++k) {
      if (design(g, k) != 0.0) active.push_back(k);
    }
    active_start[static_cast<std::size_t>(g) + 1] = static_cast<Eigen::Index>(active.size());
  }

  RankOneResult out;
  out.inverse = Matrix::Zero(p, p);
  Matrix block(k1, k1);
  Matrix block_inv(k1, k1);
  for (Eigen::Index r = 0; r < r_count; ++r) {
    block.setZero();
    block.diagonal().setConstant(1.0 / sigma_b_sq);
    for (Eigen::Index g = 0; g < groups; ++g) {
      const double w = weights[g] * pi(g, r);
      if (w == 0.0) continue;
      const auto a0 = active_start[static_cast<std::size_t>(g)];
      const auto a1 = active_start[static_cast<std::size_t>(g) + 1];
      for (auto j = a0; j < a1; ++j) {
        const auto cj = active[static_cast<std::size_t>(j)];
        const double wj = w * design(g, cj);
        for (auto i = a0; i < a1; ++i) {
          const auto ci = active[static_cast<std::size_t>(i)];
          block(ci, cj) += wj * design(g, ci);
        }
      }
    }
    if (!spd_inverse(block, block_inv, out.log_det)) {
      throw WoodburyDegeneracy("diagonal block is not positive definite");
    }
    out.inverse.block(r * k1, r * k1, k1, k1) = block_inv;
  }

  std::vector<Eigen::Index> idx;
  std::vector<double> val;
  idx.reserve(static_cast<std::size_t>(p));
  val.reserve(static_cast<std::size_t>(p));
  Vector u(p);
  double* inv = out.inverse.data();
  for (Eigen::Index g = 0; g < groups; ++g) {
    if (weights[g] <= 0.0) continue;
    const double scale = std::sqrt(weights[g]);
    idx.clear();
    val.clear();
    const auto a0 = active_start[static_cast<std::size_t>(g)];
    const auto a1 = active_start[static_cast<std::size_t>(g) + 1];
    for (Eigen::Index r = 0; r < r_count; ++r) {
      for (auto i = a0; i < a1; ++i) {
        const auto k = active[static_cast<std::size_t>(i)];
        idx.push_back(r * k1 + k);
        val.push_back(scale * pi(g, r) * design(g, k));
      }
    }
    u.setZero();
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const double* col = inv + idx[j] * p;
      const double v = val[j];
      for (Eigen::Index i = 0; i < p; ++i) u[i] += v * col[i];
    }
    double quad = 0.0;
    for (std::size_t j = 0; j < idx.size(); ++j) quad += val[j] * u[idx[j]];
    const double denom = 1.0 - quad;
    if (!(denom > 1e-12)) {
      throw WoodburyDegeneracy("rank-one downdate denominator " + std::to_string(denom));
    }
    for (Eigen::Index c = 0; c < p; ++c) {
      const double uc = u[c] / denom;
      double* col = inv + c * p;
      for (Eigen::Index i = 0; i < p; ++i) col[i] += u[i] * uc;
    }
    out.log_det += std::log(denom);
  }
  return out;
}

Matrix fast_inverse(const Matrix& pi_all, const LatentFeatureState& z,
                    const Hyperparams& hyper) {
  hyper.validate();
  if (pi_all.rows() != static_cast<Eigen::Index>(z.n_rows())) {
    throw DimensionError("fast_inverse: pi rows do not match Z");
  }
  return rank_one_inverse(per_observation_design(z), pi_all,
                          Vector::Ones(pi_all.rows()), hyper.sigma_b_sq)
      .inverse;
}

double log_det_neg_hessian(const Matrix& pi_all, const LatentFeatureState& z,
                           const Hyperparams& hyper) {
  hyper.validate();
  if (pi_all.rows() != static_cast<Eigen::Index>(z.n_rows())) {
    throw DimensionError("log_det_neg_hessian: pi rows do not match Z");
  }
  return rank_one_inverse(per_observation_design(z), pi_all,
                          Vector::Ones(pi_all.rows()), hyper.sigma_b_sq)
      .log_det;
}

LaplaceResult newton_map(const DimensionData& data, double sigma_b_sq,
                         const Matrix* start, const NewtonOptions& options) {
  const auto k1 = static_cast<Eigen::Index>(data.n_features() + 1);
  const Eigen::Index r_count = data.cardinality();
  const auto& pat = data.patterns();

  Matrix b = Matrix::Zero(k1, r_count);
  if (start != nullptr) {
    check_shape(*start, data);
    b = *start;
  }
  Evaluation ev = evaluate(b, data);
  double f = objective_from(b, ev, data, sigma_b_sq);

  LaplaceResult result;
  Matrix inverse;
  double log_det = 0.0;
  bool fresh = false;  // inverse and log_det belong to the current b
  double prev_gnorm = std::numeric_limits<double>::infinity();
  for (int iter = 0;; ++iter) {
    const Matrix g = gradient_from(b, ev, data, sigma_b_sq);
    const double gnorm = g.cwiseAbs().maxCoeff();

    // The factor from an earlier iterate is kept while the gradient keeps
    // shrinking fast; the log-determinant is always taken at the final b.
    const bool converged = gnorm < options.grad_tol;
    if (!fresh && (converged || inverse.size() == 0 || gnorm > 0.1 * prev_gnorm)) {
      try {
        auto ro = rank_one_inverse(pat.design(), ev.pi, pat.multiplicity(), sigma_b_sq);
        inverse = std::move(ro.inverse);
        log_det = ro.log_det;
      } catch (const WoodburyDegeneracy&) {
        const Matrix h = dense_hessian_neg(pat.design(), ev.pi, pat.multiplicity(), sigma_b_sq);
        Eigen::LLT<Matrix> llt(h);
        inverse = llt.solve(Matrix::Identity(h.rows(), h.cols()));
        log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
      }
      fresh = true;
    }
    prev_gnorm = gnorm;

    if (gnorm < options.grad_tol) {
      const double n_params = static_cast<double>(b.size());
      result.log_marginal = data_log_likelihood(ev, data) -
                            b.squaredNorm() / (2.0 * sigma_b_sq) -
                            0.5 * (log_det + n_params * std::log(sigma_b_sq));
      result.b_map = std::move(b);
      result.newton_iters = iter;
      result.grad_norm_final = gnorm;
      return result;
    }
    if (iter >= options.max_iters) {
      throw NewtonError("Newton did not converge in " + std::to_string(options.max_iters) +
                            " iterations (gradient max-norm " + std::to_string(gnorm) + ")",
                        b, gnorm);
    }

    const Vector step = inverse * stacked(g);
    const Eigen::Map<const Matrix> step_mat(step.data(), k1, r_count);
    double t = 1.0;
    for (int halving = 0; halving < 60; ++halving, t *= 0.5) {
      Matrix trial = b + t * step_mat;
      Evaluation trial_ev = evaluate(trial, data);
      const double trial_f = objective_from(trial, trial_ev, data, sigma_b_sq);
      if (trial_f >= f - 1e-13 * (1.0 + std::abs(f))) {
        b = std::move(trial);
        ev = std::move(trial_ev);
        f = trial_f;
        fresh = false;
        break;
      }
    }
  }
}

LaplaceResult newton_map(std::span<const int> x_col, int cardinality,
                         const LatentFeatureState& z, const Hyperparams& hyper) {
  hyper.validate();
  return newton_map(DimensionData(z, x_col, cardinality), hyper.sigma_b_sq);
}

double log_marginal(std::span<const int> x_col, int cardinality,
                    const LatentFeatureState& z, const Hyperparams& hyper) {
  return newton_map(x_col, cardinality, z, hyper).log_marginal;
}

WeightStack map_weights(const ObservationMatrix& x, const LatentFeatureState& z,
                        const Hyperparams& hyper) {
  hyper.validate();
  auto patterns = std::make_shared<const PatternIndex>(z);
  WeightStack out;
  for (std::size_t d = 0; d < x.n_cols(); ++d) {
    const auto col = x.column(d);
    DimensionData data(patterns, col, x.cardinality(d));
    out.weights.push_back(newton_map(data, hyper.sigma_b_sq).b_map);
  }
  return out;
}

double log_marginal_sum(const ObservationMatrix& x, const LatentFeatureState& z,
                        const Hyperparams& hyper) {
  hyper.validate();
  auto patterns = std::make_shared<const PatternIndex>(z);
  double total = 0.0;
  for (std::size_t d = 0; d < x.n_cols(); ++d) {
    const auto col = x.column(d);
    DimensionData data(patterns, col, x.cardinality(d));
    total += newton_map(data, hyper.sigma_b_sq).log_marginal;
  }
  return total;
}

}  // namespace ibpcat::laplace
