#include "ibpcat/synthgen.hpp"

#include <stdexcept>

namespace ibpcat::synthgen {

namespace {

BinaryImage mask_from(std::initializer_list<std::pair<int, int>> on) {
  BinaryImage img{6, 6, std::vector<std::uint8_t>(36, 0)};
  for (auto [r, c] : on) img.pixels[static_cast<std::size_t>(r * 6 + c)] = 1;
  return img;
}

}  // namespace

std::vector<BinaryImage> default_base_images() {
  return {
      // top-left corner bracket
      mask_from({{0, 0}, {0, 1}, {0, 2}, {1, 0}, {2, 0}}),
      // top-right plus
      mask_from({{0, 4}, {1, 3}, {1, 4}, {1, 5}, {2, 4}}),
      // bottom-left cross
      mask_from({{3, 0}, {3, 2}, {4, 1}, {5, 0}, {5, 2}}),
      // bottom-right ring
      mask_from({{3, 3}, {3, 4}, {3, 5}, {4, 3}, {4, 5}, {5, 3}, {5, 4}, {5, 5}}),
  };
}

void ImageGenConfig::validate() const {
  if (base_images.empty()) throw std::invalid_argument("need at least one base image");
  for (const auto& img : base_images) {
    if (img.height != base_images[0].height || img.width != base_images[0].width ||
        img.pixels.size() != img.height * img.width) {
      throw std::invalid_argument("base images must share one height x width");
    }
  }
  auto unit = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!unit(presence_prob) || !unit(noise_flip_prob)) {
    throw std::invalid_argument("probabilities must lie in [0, 1]");
  }
}

ImageData generate_images(const ImageGenConfig& config, Rng& rng) {
  config.validate();
  const std::size_t n = config.n_samples;
  const std::size_t pixels = config.base_images[0].size();
  const std::size_t k = config.base_images.size();

  ImageData out{ObservationMatrix(n, std::vector<int>(pixels, 2)), LatentFeatureState(n, k), {}};
  out.composites.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::uint8_t> composite(pixels, 0);
    for (std::size_t b = 0; b < k; ++b) {
      if (!rng.bernoulli(config.presence_prob)) continue;
      out.true_z.set(i, b, true);
      for (std::size_t p = 0; p < pixels; ++p) composite[p] |= config.base_images[b].pixels[p];
    }
    for (std::size_t p = 0; p < pixels; ++p) {
      bool white = composite[p] != 0;
      if (white && rng.bernoulli(config.noise_flip_prob)) white = false;
      out.x.set(i, p, white ? kWhite : kBlack);
    }
    out.composites.push_back(std::move(composite));
  }
  return out;
}

void CategoricalGenConfig::validate() const {
  hyper.validate();
  if (!cardinalities.empty() && cardinalities.size() != n_dims) {
    throw std::invalid_argument("cardinalities needs one entry per dimension");
  }
  if (!feature_probs.empty() && feature_probs.size() != k_true) {
    throw std::invalid_argument("feature_probs needs one entry per planted feature");
  }
  for (double p : feature_probs) {
    if (p < 0.0 || p > 1.0) throw std::invalid_argument("feature_probs must lie in [0, 1]");
  }
}

std::vector<int> CategoricalGenConfig::resolved_cardinalities() const {
  return cardinalities.empty() ? std::vector<int>(n_dims, 2) : cardinalities;
}

std::vector<double> CategoricalGenConfig::resolved_feature_probs() const {
  return feature_probs.empty() ? std::vector<double>(k_true, 0.3) : feature_probs;
}

ObservationMatrix sample_observations(const LatentFeatureState& z,
                                      const WeightStack& b, Rng& rng) {
  std::vector<int> cards;
  for (const auto& w : b.weights) cards.push_back(static_cast<int>(w.cols()));
  if (!b.matches(z.k_active(), cards)) {
    throw DimensionError("sample_observations: weights do not match Z");
  }
  ObservationMatrix x(z.n_rows(), cards);
  for (std::size_t n = 0; n < z.n_rows(); ++n) {
    const Vector row = extended_row(z, n);
    for (std::size_t d = 0; d < cards.size(); ++d) {
      const Vector p = category_probabilities(row, b.weights[d]);
      x.set(n, d, static_cast<int>(rng.categorical(std::span<const double>(p.data(), p.size()))));
    }
  }
  return x;
}

CategoricalData generate_categorical(const CategoricalGenConfig& config, Rng& rng) {
  config.validate();
  const auto cards = config.resolved_cardinalities();
  const auto probs = config.resolved_feature_probs();
  const double sd = std::sqrt(config.hyper.sigma_b_sq);

  LatentFeatureState z(config.n_rows, config.k_true);
  for (std::size_t k = 0; k < config.k_true; ++k) {
    for (std::size_t n = 0; n < config.n_rows; ++n) z.set(n, k, rng.bernoulli(probs[k]));
  }
  WeightStack b;
  for (std::size_t d = 0; d < config.n_dims; ++d) {
    Matrix w(static_cast<Eigen::Index>(config.k_true + 1), cards[d]);
    for (Eigen::Index r = 0; r < w.cols(); ++r) {
      for (Eigen::Index k = 0; k < w.rows(); ++k) w(k, r) = rng.normal(0.0, sd);
    }
    b.weights.push_back(std::move(w));
  }
  ObservationMatrix x = sample_observations(z, b, rng);
  return {std::move(x), std::move(z), std::move(b)};
}

}  // namespace ibpcat::synthgen
