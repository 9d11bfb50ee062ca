#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "ibpcat/core.hpp"
#include "ibpcat/laplace.hpp"
#include "ibpcat/rng.hpp"

namespace ibpcat::gibbs {

struct GibbsConfig {
  std::size_t n_iterations = 350;
  std::size_t burn_in = 0;
  std::size_t k_init = 2;
  double p_init = 0.5;
  std::size_t max_new_features_per_step = 4;
  /// Upper bound on K+ (0 = unbounded). Births never exceed it.
  std::size_t k_cap = 0;

  /// Rows whose every entry equals baseline_categories[d] keep an all-zero
  /// feature row and are never resampled.
  bool skip_all_baseline_rows = false;
  std::vector<int> baseline_categories;  // 0-based, one per dimension

  /// Starting state instead of the random k_init / p_init initialisation.
  std::optional<LatentFeatureState> initial_state;
  /// Columns of initial_state are never pruned and no features are born.
  bool freeze_initial_columns = false;
  /// Rows to resample; empty means every row.
  std::vector<std::size_t> rows_to_sample;

  /// Worker threads for the per-dimension marginal evaluations.
  std::size_t threads = 1;

  Hyperparams hyper;

  /// Throws std::invalid_argument on inconsistent settings.
  void validate(const ObservationMatrix& x) const;
};

struct ChainTrace {
  std::vector<std::size_t> k_active;
  std::vector<double> log_marginal_sum;
  /// Column counts m_k after each iteration.
  std::vector<std::vector<int>> occupancy;
  LatentFeatureState final_z;
};

/// p(z_nk = 1 | Z_-nk) = m_-n,k / N.
double conditional_prior(int m_minus, std::size_t n_rows);

/// Removes all-zero columns (and the matching weight rows when given).
LatentFeatureState prune_empty_columns(const LatentFeatureState& z,
                                       WeightStack* weights = nullptr);

/// Collapsed sampler over Z with the weights integrated out by the Laplace
/// approximation. Holds the current state together with the per-dimension
/// Laplace results for it; those serve as Newton warm starts for proposals.
class CollapsedGibbs {
 public:
  CollapsedGibbs(const ObservationMatrix& x, GibbsConfig config);
  CollapsedGibbs(const ObservationMatrix& x, GibbsConfig config, LatentFeatureState z);

  const LatentFeatureState& state() const { return z_; }
  const GibbsConfig& config() const { return config_; }

  /// sum_d log p(x_d | Z) for the current state.
  double log_marginal_sum();
  /// Per-dimension B_MAP for the current state.
  WeightStack map_weights();

  /// P(z_nk = 1 | X, Z_-nk); zero when no other row has feature k.
  double entry_probability(std::size_t n, std::size_t k);
  void resample_entry(std::size_t n, std::size_t k, Rng& rng);

  /// Normalised distribution over 0..max new singleton features for row n.
  std::vector<double> new_feature_distribution(std::size_t n);
  void sample_new_features(std::size_t n, Rng& rng);

  void prune_empty_columns();

  /// One pass over all (selected, non-baseline) rows; randomness for row n
  /// comes from the stream (seed, iteration + 1, n).
  void sweep(std::size_t iteration);

  bool is_baseline_row(std::size_t n) const;
  std::size_t marginal_evaluations() const { return evaluations_; }

 private:
  struct Evaluation {
    std::vector<laplace::LaplaceResult> dims;
    double total = 0.0;
  };

  Evaluation evaluate(const LatentFeatureState& z, std::size_t padding_rows);
  void ensure_current();
  std::size_t births_allowed() const;
  bool is_frozen(std::size_t k) const { return k < frozen_columns_; }

  const ObservationMatrix& x_;
  GibbsConfig config_;
  std::vector<std::vector<int>> columns_;
  LatentFeatureState z_;
  Evaluation current_;
  bool current_valid_ = false;
  std::size_t frozen_columns_ = 0;
  std::vector<std::size_t> rows_;
  std::size_t evaluations_ = 0;
};

/// Initial state: k_init columns with Bernoulli(p_init) entries (baseline
/// rows zeroed when skipping is enabled), empty columns pruned.
LatentFeatureState initial_state(const ObservationMatrix& x, const GibbsConfig& config);

using IterationObserver = std::function<void(std::size_t, CollapsedGibbs&)>;

/// Runs n_iterations sweeps and records K+ and sum_d log p(x_d | Z) after each.
/// Bit-identical for a fixed configuration and seed.
ChainTrace run_chain(const ObservationMatrix& x, const GibbsConfig& config,
                     const IterationObserver& observer = {});

}  // namespace ibpcat::gibbs
