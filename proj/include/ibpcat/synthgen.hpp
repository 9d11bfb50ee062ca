#pragma once

#include <cstdint>
#include <vector>

#include "ibpcat/core.hpp"
#include "ibpcat/rng.hpp"

namespace ibpcat::synthgen {

/// Black-and-white mask, row-major, 1 = white.
struct BinaryImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;

  std::size_t size() const { return pixels.size(); }
};

/// Category codes used for image pixels.
inline constexpr int kBlack = 0;  // "1" in data files
inline constexpr int kWhite = 1;  // "2" in data files

/// Four disjoint 6x6 masks, one shape per corner.
std::vector<BinaryImage> default_base_images();

struct ImageGenConfig {
  std::vector<BinaryImage> base_images = default_base_images();
  double presence_prob = 0.3;
  /// Probability that a white composite pixel is turned black.
  double noise_flip_prob = 0.5;
  std::size_t n_samples = 200;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ImageData {
  ObservationMatrix x;
  LatentFeatureState true_z;
  /// Noise-free composites (pixelwise OR of the active bases), one per row.
  std::vector<std::vector<std::uint8_t>> composites;
};

/// Each base is present independently with presence_prob; the composite is
/// the pixelwise OR; every white composite pixel then flips to black with
/// noise_flip_prob. Black pixels never change.
ImageData generate_images(const ImageGenConfig& config, Rng& rng);

struct CategoricalGenConfig {
  std::size_t n_rows = 100;
  std::size_t n_dims = 10;
  std::size_t k_true = 3;
  std::vector<int> cardinalities;       // empty: all 2
  std::vector<double> feature_probs;    // empty: all 0.3
  Hyperparams hyper;

  void validate() const;
  std::vector<int> resolved_cardinalities() const;
  std::vector<double> resolved_feature_probs() const;
};

struct CategoricalData {
  ObservationMatrix x;
  LatentFeatureState true_z;
  WeightStack true_b;
};

/// Draws X with x_nd ~ Categorical(softmax(z_n^T B^d)).
ObservationMatrix sample_observations(const LatentFeatureState& z,
                                      const WeightStack& b, Rng& rng);

/// Planted model: z_nk ~ Bernoulli(p_k), B entries ~ N(0, sigma_b^2), then X
/// from sample_observations. Planted columns may come out empty and are kept.
CategoricalData generate_categorical(const CategoricalGenConfig& config, Rng& rng);

}  // namespace ibpcat::synthgen
