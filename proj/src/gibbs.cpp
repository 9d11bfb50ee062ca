#include "ibpcat/gibbs.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace ibpcat::gibbs {

namespace {

Matrix pad_rows(const Matrix& b, std::size_t extra) {
  if (extra == 0) return b;
  Matrix out = Matrix::Zero(b.rows() + static_cast<Eigen::Index>(extra), b.cols());
  out.topRows(b.rows()) = b;
  return out;
}

Matrix drop_row(const Matrix& b, Eigen::Index row) {
  Matrix out(b.rows() - 1, b.cols());
  out.topRows(row) = b.topRows(row);
  out.bottomRows(b.rows() - row - 1) = b.bottomRows(b.rows() - row - 1);
  return out;
}

double log_poisson(std::size_t k, double mean) {
  const double kd = static_cast<double>(k);
  return -mean + kd * std::log(mean) - std::lgamma(kd + 1.0);
}

template <class Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
  threads = std::min(threads, count);
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = t; i < count; i += threads) fn(i);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

void GibbsConfig::validate(const ObservationMatrix& x) const {
  hyper.validate();
  if (n_iterations > 0 && burn_in >= n_iterations) {
    throw std::invalid_argument("burn_in must be smaller than n_iterations");
  }
  if (p_init < 0.0 || p_init > 1.0) {
    throw std::invalid_argument("p_init must lie in [0, 1]");
  }
  if (skip_all_baseline_rows && baseline_categories.size() != x.n_cols()) {
    throw std::invalid_argument("baseline_categories needs one entry per dimension");
  }
  for (std::size_t d = 0; d < baseline_categories.size() && d < x.n_cols(); ++d) {
    if (baseline_categories[d] < 0 || baseline_categories[d] >= x.cardinality(d)) {
      throw std::invalid_argument("baseline category out of range");
    }
  }
  if (initial_state && initial_state->n_rows() != x.n_rows()) {
    throw std::invalid_argument("initial_state row count differs from the data");
  }
  if (freeze_initial_columns && !initial_state) {
    throw std::invalid_argument("freeze_initial_columns requires initial_state");
  }
  for (auto n : rows_to_sample) {
    if (n >= x.n_rows()) throw std::invalid_argument("rows_to_sample index out of range");
  }
  if (x.n_rows() == 0) throw std::invalid_argument("empty data set");
}

double conditional_prior(int m_minus, std::size_t n_rows) {
  if (m_minus < 0 || static_cast<std::size_t>(m_minus) + 1 > n_rows) {
    throw std::out_of_range("conditional_prior: m_minus must lie in [0, N-1]");
  }
  return static_cast<double>(m_minus) / static_cast<double>(n_rows);
}

LatentFeatureState prune_empty_columns(const LatentFeatureState& z, WeightStack* weights) {
  LatentFeatureState out(z.n_rows());
  for (std::size_t k = z.k_active(); k-- > 0;) {
    if (z.column_count(k) == 0 && weights != nullptr) weights->remove_feature(k);
  }
  for (std::size_t k = 0; k < z.k_active(); ++k) {
    if (z.column_count(k) > 0) out.add_column(z.column(k));
  }
  return out;
}

LatentFeatureState initial_state(const ObservationMatrix& x, const GibbsConfig& config) {
  if (config.initial_state) return *config.initial_state;
  Rng rng = Rng::stream(config.hyper.seed, 0, 0);
  LatentFeatureState z(x.n_rows());
  for (std::size_t k = 0; k < config.k_init; ++k) {
    std::vector<std::uint8_t> column(x.n_rows());
    for (auto& c : column) c = rng.bernoulli(config.p_init) ? 1 : 0;
    z.add_column(std::move(column));
  }
  if (config.skip_all_baseline_rows) {
    for (std::size_t n = 0; n < x.n_rows(); ++n) {
      bool baseline = true;
      for (std::size_t d = 0; d < x.n_cols() && baseline; ++d) {
        baseline = x(n, d) == config.baseline_categories[d];
      }
      if (baseline) {
        for (std::size_t k = 0; k < z.k_active(); ++k) z.set(n, k, false);
      }
    }
  }
  if (config.k_cap > 0) {
    while (z.k_active() > config.k_cap) z.remove_column(z.k_active() - 1);
  }
  return prune_empty_columns(z);
}

CollapsedGibbs::CollapsedGibbs(const ObservationMatrix& x, GibbsConfig config)
    : CollapsedGibbs(x, config, initial_state(x, config)) {}

CollapsedGibbs::CollapsedGibbs(const ObservationMatrix& x, GibbsConfig config,
                               LatentFeatureState z)
    : x_(x), config_(std::move(config)), z_(std::move(z)) {
  config_.validate(x_);
  if (z_.n_rows() != x_.n_rows()) {
    throw DimensionError("initial Z row count differs from the data");
  }
  columns_.reserve(x_.n_cols());
  for (std::size_t d = 0; d < x_.n_cols(); ++d) columns_.push_back(x_.column(d));
  if (config_.freeze_initial_columns) frozen_columns_ = z_.k_active();
  if (config_.rows_to_sample.empty()) {
    rows_.resize(x_.n_rows());
    std::iota(rows_.begin(), rows_.end(), 0);
  } else {
    rows_ = config_.rows_to_sample;
  }
}

bool CollapsedGibbs::is_baseline_row(std::size_t n) const {
  if (config_.baseline_categories.size() != x_.n_cols()) return false;
  for (std::size_t d = 0; d < x_.n_cols(); ++d) {
    if (x_(n, d) != config_.baseline_categories[d]) return false;
  }
  return true;
}

CollapsedGibbs::Evaluation CollapsedGibbs::evaluate(const LatentFeatureState& z,
                                                    std::size_t padding_rows) {
  ++evaluations_;
  auto patterns = std::make_shared<const laplace::PatternIndex>(z);
  const auto k1 = static_cast<Eigen::Index>(z.k_active() + 1);
  Evaluation out;
  out.dims.resize(x_.n_cols());
  parallel_for(x_.n_cols(), config_.threads, [&](std::size_t d) {
    laplace::DimensionData data(patterns, columns_[d], x_.cardinality(d));
    const Matrix* start = nullptr;
    Matrix padded;
    if (current_.dims.size() == x_.n_cols() &&
        current_.dims[d].b_map.rows() + static_cast<Eigen::Index>(padding_rows) == k1) {
      padded = pad_rows(current_.dims[d].b_map, padding_rows);
      start = &padded;
    }
    try {
      out.dims[d] = laplace::newton_map(data, config_.hyper.sigma_b_sq, start);
    } catch (const laplace::NewtonError&) {
      if (start == nullptr) throw;
      out.dims[d] = laplace::newton_map(data, config_.hyper.sigma_b_sq);
    }
  });
  for (const auto& r : out.dims) out.total += r.log_marginal;
  return out;
}

void CollapsedGibbs::ensure_current() {
  if (current_valid_) return;
  current_ = evaluate(z_, 0);
  current_valid_ = true;
}

double CollapsedGibbs::log_marginal_sum() {
  ensure_current();
  return current_.total;
}

WeightStack CollapsedGibbs::map_weights() {
  ensure_current();
  WeightStack out;
  for (const auto& r : current_.dims) out.weights.push_back(r.b_map);
  return out;
}

double CollapsedGibbs::entry_probability(std::size_t n, std::size_t k) {
  const bool on = z_(n, k);
  const int m_minus = z_.column_count(k) - (on ? 1 : 0);
  const double prior = conditional_prior(m_minus, z_.n_rows());
  if (m_minus == 0) return 0.0;
  ensure_current();
  LatentFeatureState flipped = z_;
  flipped.set(n, k, !on);
  const double other = evaluate(flipped, 0).total;
  const double log_on = std::log(prior) + (on ? current_.total : other);
  const double log_off = std::log1p(-prior) + (on ? other : current_.total);
  return 1.0 / (1.0 + std::exp(log_off - log_on));
}

void CollapsedGibbs::resample_entry(std::size_t n, std::size_t k, Rng& rng) {
  const bool on = z_(n, k);
  const int m_minus = z_.column_count(k) - (on ? 1 : 0);
  const double prior = conditional_prior(m_minus, z_.n_rows());
  if (m_minus == 0) {
    if (on) {
      z_.set(n, k, false);
      current_valid_ = false;
    }
    return;
  }
  ensure_current();
  LatentFeatureState flipped = z_;
  flipped.set(n, k, !on);
  Evaluation other = evaluate(flipped, 0);
  const double log_on = std::log(prior) + (on ? current_.total : other.total);
  const double log_off = std::log1p(-prior) + (on ? other.total : current_.total);
  const double p_on = 1.0 / (1.0 + std::exp(log_off - log_on));
  const bool new_on = rng.uniform() < p_on;
  if (new_on != on) {
    z_ = std::move(flipped);
    current_ = std::move(other);
  }
}

std::size_t CollapsedGibbs::births_allowed() const {
  if (config_.freeze_initial_columns) return 0;
  std::size_t allowed = config_.max_new_features_per_step;
  if (config_.k_cap > 0) {
    allowed = z_.k_active() >= config_.k_cap
                  ? 0
                  : std::min(allowed, config_.k_cap - z_.k_active());
  }
  return allowed;
}

std::vector<double> CollapsedGibbs::new_feature_distribution(std::size_t n) {
  const std::size_t max_new = births_allowed();
  const double mean = config_.hyper.alpha / static_cast<double>(z_.n_rows());
  ensure_current();
  std::vector<double> logw(max_new + 1);
  logw[0] = log_poisson(0, mean) + current_.total;
  for (std::size_t j = 1; j <= max_new; ++j) {
    LatentFeatureState proposal = z_;
    std::vector<std::uint8_t> col(z_.n_rows(), 0);
    col[n] = 1;
    for (std::size_t i = 0; i < j; ++i) proposal.add_column(col);
    logw[j] = log_poisson(j, mean) + evaluate(proposal, j).total;
  }
  const double top = *std::max_element(logw.begin(), logw.end());
  double total = 0.0;
  for (auto& w : logw) total += (w = std::exp(w - top));
  for (auto& w : logw) w /= total;
  return logw;
}

void CollapsedGibbs::sample_new_features(std::size_t n, Rng& rng) {
  const std::size_t max_new = births_allowed();
  if (max_new == 0) return;
  const double mean = config_.hyper.alpha / static_cast<double>(z_.n_rows());
  ensure_current();
  std::vector<double> logw(max_new + 1);
  std::vector<LatentFeatureState> proposals(max_new + 1);
  std::vector<Evaluation> evals(max_new + 1);
  logw[0] = log_poisson(0, mean) + current_.total;
  std::vector<std::uint8_t> col(z_.n_rows(), 0);
  col[n] = 1;
  for (std::size_t j = 1; j <= max_new; ++j) {
    proposals[j] = j == 1 ? z_ : proposals[j - 1];
    proposals[j].add_column(col);
    evals[j] = evaluate(proposals[j], j);
    logw[j] = log_poisson(j, mean) + evals[j].total;
  }
  const std::size_t pick = rng.categorical_log(logw);
  if (pick > 0) {
    z_ = std::move(proposals[pick]);
    current_ = std::move(evals[pick]);
  }
}

void CollapsedGibbs::prune_empty_columns() {
  for (std::size_t k = z_.k_active(); k-- > 0;) {
    if (z_.column_count(k) != 0 || is_frozen(k)) continue;
    z_.remove_column(k);
    // An all-zero column contributes nothing to p(x_d | Z): its MAP row is
    // zero and its Hessian block is the prior, so the cache stays valid
    // once the row is dropped.
    for (auto& r : current_.dims) {
      if (r.b_map.rows() > static_cast<Eigen::Index>(k + 1)) {
        r.b_map = drop_row(r.b_map, static_cast<Eigen::Index>(k) + 1);
      }
    }
  }
}

void CollapsedGibbs::sweep(std::size_t iteration) {
  for (std::size_t n : rows_) {
    if (config_.skip_all_baseline_rows && is_baseline_row(n)) continue;
    Rng rng = Rng::stream(config_.hyper.seed, iteration + 1, n);
    for (std::size_t k = 0; k < z_.k_active(); ++k) resample_entry(n, k, rng);
    prune_empty_columns();
    sample_new_features(n, rng);
    prune_empty_columns();
  }
}

ChainTrace run_chain(const ObservationMatrix& x, const GibbsConfig& config,
                     const IterationObserver& observer) {
  CollapsedGibbs sampler(x, config);
  ChainTrace trace;
  trace.k_active.reserve(config.n_iterations);
  trace.log_marginal_sum.reserve(config.n_iterations);
  for (std::size_t it = 0; it < config.n_iterations; ++it) {
    sampler.sweep(it);
    trace.k_active.push_back(sampler.state().k_active());
    trace.log_marginal_sum.push_back(sampler.log_marginal_sum());
    trace.occupancy.push_back(sampler.state().column_counts());
    if (observer) observer(it, sampler);
  }
  trace.final_z = sampler.state();
  return trace;
}

}  // namespace ibpcat::gibbs
