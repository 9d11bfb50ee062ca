#include "ibpcat/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ibpcat {

std::size_t Rng::categorical_log(std::span<const double> log_weights) {
  double top = -std::numeric_limits<double>::infinity();
  for (double w : log_weights) top = std::max(top, w);
  if (!std::isfinite(top)) {
    throw std::invalid_argument("categorical_log: no finite weight");
  }
  std::vector<double> w(log_weights.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = std::exp(log_weights[i] - top);
  }
  return categorical(w);
}

std::size_t Rng::categorical(std::span<const double> weights) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(total > 0.0)) throw std::invalid_argument("categorical: zero mass");
  double u = uniform() * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (u < weights[i]) return i;
    u -= weights[i];
  }
  // Rounding can leave u marginally above the last weight.
  for (std::size_t i = weights.size(); i-- > 0;) {
    if (weights[i] > 0.0) return i;
  }
  return weights.size() - 1;
}

ObservationMatrix::ObservationMatrix(std::size_t n_rows,
                                     std::vector<int> cardinalities)
    : n_rows_(n_rows), cardinalities_(std::move(cardinalities)) {
  for (int r : cardinalities_) {
    if (r < 2) throw DimensionError("cardinality must be at least 2");
  }
  data_.assign(n_rows_ * cardinalities_.size(), 0);
}

void ObservationMatrix::set(std::size_t n, std::size_t d, int category) {
  if (n >= n_rows_ || d >= n_cols()) {
    throw DimensionError("observation index out of range");
  }
  if (category < 0 || category >= cardinalities_[d]) {
    throw DimensionError("category " + std::to_string(category + 1) +
                         " outside 1.." + std::to_string(cardinalities_[d]) +
                         " in column " + std::to_string(d + 1));
  }
  data_[n * n_cols() + d] = category;
}

std::vector<int> ObservationMatrix::column(std::size_t d) const {
  std::vector<int> out(n_rows_);
  for (std::size_t n = 0; n < n_rows_; ++n) out[n] = (*this)(n, d);
  return out;
}

LatentFeatureState::LatentFeatureState(std::size_t n_rows, std::size_t k_active)
    : n_rows_(n_rows),
      columns_(k_active, std::vector<std::uint8_t>(n_rows, 0)),
      counts_(k_active, 0) {}

void LatentFeatureState::set(std::size_t n, std::size_t k, bool value) {
  auto& cell = columns_[k][n];
  const std::uint8_t v = value ? 1 : 0;
  if (cell == v) return;
  counts_[k] += value ? 1 : -1;
  cell = v;
}

void LatentFeatureState::add_column(std::vector<std::uint8_t> column) {
  if (column.size() != n_rows_) {
    throw DimensionError("add_column: column length does not match N");
  }
  int count = 0;
  for (auto& c : column) {
    c = c ? 1 : 0;
    count += c;
  }
  columns_.push_back(std::move(column));
  counts_.push_back(count);
}

void LatentFeatureState::remove_column(std::size_t k) {
  columns_.erase(columns_.begin() + static_cast<std::ptrdiff_t>(k));
  counts_.erase(counts_.begin() + static_cast<std::ptrdiff_t>(k));
}

std::vector<std::uint8_t> LatentFeatureState::row(std::size_t n) const {
  std::vector<std::uint8_t> out(k_active());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = columns_[k][n];
  return out;
}

std::size_t LatentFeatureState::row_sum(std::size_t n) const {
  std::size_t s = 0;
  for (const auto& col : columns_) s += col[n];
  return s;
}

bool LatentFeatureState::counts_consistent() const {
  for (std::size_t k = 0; k < columns_.size(); ++k) {
    const int c = std::accumulate(columns_[k].begin(), columns_[k].end(), 0);
    if (c != counts_[k]) return false;
  }
  return true;
}

Matrix LatentFeatureState::extended() const {
  Matrix out(n_rows_, k_active() + 1);
  out.col(0).setOnes();
  for (std::size_t k = 0; k < k_active(); ++k) {
    for (std::size_t n = 0; n < n_rows_; ++n) out(n, k + 1) = columns_[k][n];
  }
  return out;
}

bool WeightStack::all_finite() const {
  return std::all_of(weights.begin(), weights.end(),
                     [](const Matrix& w) { return w.allFinite(); });
}

bool WeightStack::matches(std::size_t k_active,
                          const std::vector<int>& cardinalities) const {
  if (weights.size() != cardinalities.size()) return false;
  for (std::size_t d = 0; d < weights.size(); ++d) {
    if (weights[d].rows() != static_cast<Eigen::Index>(k_active + 1) ||
        weights[d].cols() != cardinalities[d]) {
      return false;
    }
  }
  return true;
}

void WeightStack::remove_feature(std::size_t k) {
  for (auto& w : weights) {
    const Eigen::Index row = static_cast<Eigen::Index>(k) + 1;
    Matrix shrunk(w.rows() - 1, w.cols());
    shrunk.topRows(row) = w.topRows(row);
    shrunk.bottomRows(w.rows() - row - 1) = w.bottomRows(w.rows() - row - 1);
    w = std::move(shrunk);
  }
}

void Hyperparams::validate() const {
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
  if (!(sigma_b_sq > 0.0)) {
    throw std::invalid_argument("sigma_b_sq must be positive");
  }
}

void softmax_inplace(Eigen::Ref<Vector> scores) {
  const double top = scores.maxCoeff();
  scores = (scores.array() - top).exp();
  scores /= scores.sum();
}

Vector category_probabilities(const Vector& z_row, const Matrix& weights) {
  if (z_row.size() != weights.rows()) {
    throw DimensionError("category_probabilities: z_row has length " +
                         std::to_string(z_row.size()) + ", weights have " +
                         std::to_string(weights.rows()) + " rows");
  }
  Vector p = weights.transpose() * z_row;
  softmax_inplace(p);
  return p;
}

Vector extended_row(const LatentFeatureState& z, std::size_t n) {
  Vector row(z.k_active() + 1);
  row[0] = 1.0;
  for (std::size_t k = 0; k < z.k_active(); ++k) row[k + 1] = z(n, k) ? 1.0 : 0.0;
  return row;
}

double log_likelihood(const ObservationMatrix& x, const LatentFeatureState& z,
                      const WeightStack& b) {
  if (x.n_rows() != z.n_rows()) {
    throw DimensionError("log_likelihood: X and Z row counts differ");
  }
  if (!b.matches(z.k_active(), x.cardinalities())) {
    throw DimensionError("log_likelihood: weight shapes do not match (K+ + 1, R_d)");
  }
  double total = 0.0;
  for (std::size_t n = 0; n < x.n_rows(); ++n) {
    const Vector row = extended_row(z, n);
    for (std::size_t d = 0; d < x.n_cols(); ++d) {
      Vector scores = b.weights[d].transpose() * row;
      const double top = scores.maxCoeff();
      const double lse = top + std::log((scores.array() - top).exp().sum());
      total += scores[x(n, d)] - lse;
    }
  }
  return total;
}

LatentFeatureState sample_prior(std::size_t n_rows, const Hyperparams& hyper,
                                Rng& rng) {
  hyper.validate();
  LatentFeatureState z(n_rows);
  double log_omega = 0.0;
  const double log_threshold = std::log(1e-12);
  while (true) {
    // v ~ Beta(alpha, 1)  <=>  v = U^(1/alpha)
    log_omega += std::log(rng.uniform_open()) / hyper.alpha;
    if (log_omega < log_threshold) break;
    const double omega = std::exp(log_omega);
    std::vector<std::uint8_t> column(n_rows);
    bool any = false;
    for (auto& c : column) {
      c = rng.bernoulli(omega) ? 1 : 0;
      any = any || c;
    }
    if (any) z.add_column(std::move(column));
  }
  return z;
}

LatentFeatureState left_order(const LatentFeatureState& z) {
  std::vector<std::size_t> order(z.k_active());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    // Lexicographic with row 0 first equals comparing binary values.
    return z.column(a) > z.column(b);
  });
  LatentFeatureState out(z.n_rows());
  for (std::size_t k : order) out.add_column(z.column(k));
  return out;
}

}  // namespace ibpcat
