#include <doctest.h>

#include <cmath>

#include "ibpcat/synthgen.hpp"
#include "support.hpp"

using namespace ibpcat;
using namespace ibpcat::synthgen;

namespace {

bool within_3se(double count, double total, double p) {
  const double se = std::sqrt(p * (1 - p) / total);
  return std::abs(count / total - p) <= 3 * se;
}

}  // namespace

TEST_CASE("default base images are disjoint and equally sized") {
  const auto bases = default_base_images();
  REQUIRE(bases.size() == 4);
  for (const auto& b : bases) {
    CHECK(b.height == 6);
    CHECK(b.width == 6);
    CHECK(b.size() == 36);
  }
  for (std::size_t p = 0; p < 36; ++p) {
    int owners = 0;
    for (const auto& b : bases) owners += b.pixels[p];
    CHECK(owners <= 1);
  }
}

TEST_CASE("noiseless single base reproduces the base") {
  ImageGenConfig cfg;
  cfg.noise_flip_prob = 0.0;
  cfg.n_samples = 500;
  Rng rng(1);
  const auto data = generate_images(cfg, rng);
  int singles = 0;
  for (std::size_t n = 0; n < cfg.n_samples; ++n) {
    if (data.true_z.row_sum(n) != 1) continue;
    ++singles;
    std::size_t k = 0;
    while (!data.true_z(n, k)) ++k;
    for (std::size_t p = 0; p < 36; ++p) {
      CHECK(data.x(n, p) == (cfg.base_images[k].pixels[p] ? kWhite : kBlack));
    }
  }
  CHECK(singles > 0);
}

TEST_CASE("zero presence gives black images") {
  ImageGenConfig cfg;
  cfg.presence_prob = 0.0;
  Rng rng(2);
  const auto data = generate_images(cfg, rng);
  for (std::size_t k = 0; k < 4; ++k) CHECK(data.true_z.column_count(k) == 0);
  for (std::size_t n = 0; n < cfg.n_samples; ++n) {
    for (std::size_t p = 0; p < 36; ++p) CHECK(data.x(n, p) == kBlack);
  }
}

TEST_CASE("image statistics match the generative process") {
  ImageGenConfig cfg;
  cfg.n_samples = 10000;
  Rng rng(3);
  const auto data = generate_images(cfg, rng);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(within_3se(data.true_z.column_count(k), 10000, 0.3));
  }
  double white = 0, survived = 0;
  bool leaked = false;
  for (std::size_t n = 0; n < cfg.n_samples; ++n) {
    for (std::size_t p = 0; p < 36; ++p) {
      if (data.composites[n][p]) {
        white += 1;
        survived += data.x(n, p) == kWhite;
      } else {
        leaked = leaked || data.x(n, p) == kWhite;
      }
    }
  }
  CHECK_FALSE(leaked);
  // Pixels of one image are independent given the composite.
  CHECK(within_3se(survived, white, 0.5));
}

TEST_CASE("image generator is deterministic and validates") {
  ImageGenConfig cfg;
  Rng a(4), b(4);
  const auto da = generate_images(cfg, a);
  const auto db = generate_images(cfg, b);
  CHECK(da.x == db.x);
  CHECK(da.true_z == db.true_z);
  cfg.presence_prob = 1.5;
  CHECK_THROWS(cfg.validate());
  cfg.presence_prob = 0.3;
  cfg.base_images.clear();
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("zero weights give uniform categories") {
  const LatentFeatureState z(20000, 0);
  WeightStack b;
  b.weights.push_back(Matrix::Zero(1, 4));
  b.weights.push_back(Matrix::Zero(1, 2));
  Rng rng(5);
  const auto x = sample_observations(z, b, rng);
  for (std::size_t d = 0; d < 2; ++d) {
    const int r = x.cardinality(d);
    std::vector<double> counts(static_cast<std::size_t>(r), 0.0);
    for (std::size_t n = 0; n < 20000; ++n) counts[static_cast<std::size_t>(x(n, d))] += 1;
    for (double c : counts) CHECK(within_3se(c, 20000, 1.0 / r));
  }
}

TEST_CASE("conditional frequencies follow the softmax probabilities") {
  Rng rng(6);
  const std::size_t n = 100000;
  const auto z = testing::random_z(n, 2, rng, 0.4);
  const auto b = testing::random_weights(2, {3, 2}, rng);
  const auto x = sample_observations(z, b, rng);
  for (int pattern = 0; pattern < 4; ++pattern) {
    Vector row(3);
    row << 1.0, pattern & 1, (pattern >> 1) & 1;
    for (std::size_t d = 0; d < 2; ++d) {
      const Vector p = category_probabilities(row, b.weights[d]);
      std::vector<double> counts(static_cast<std::size_t>(p.size()), 0.0);
      double total = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (z(i, 0) != static_cast<bool>(pattern & 1) || z(i, 1) != static_cast<bool>(pattern & 2)) {
          continue;
        }
        total += 1;
        counts[static_cast<std::size_t>(x(i, d))] += 1;
      }
      for (Eigen::Index r = 0; r < p.size(); ++r) {
        CHECK(within_3se(counts[static_cast<std::size_t>(r)], total, p[r]));
      }
    }
  }
}

TEST_CASE("planted categorical data") {
  CategoricalGenConfig cfg;
  cfg.n_rows = 20000;
  cfg.n_dims = 4;
  cfg.k_true = 3;
  cfg.cardinalities = {2, 3, 4, 2};
  cfg.feature_probs = {0.3, 0.5, 0.1};
  cfg.hyper.sigma_b_sq = 2.0;
  Rng a(7), b(7);
  const auto da = generate_categorical(cfg, a);
  const auto db = generate_categorical(cfg, b);
  CHECK(da.x == db.x);
  CHECK(da.true_z == db.true_z);
  CHECK(da.true_b.matches(3, cfg.cardinalities));
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(within_3se(da.true_z.column_count(k), 20000, cfg.feature_probs[k]));
  }

  double sum = 0, sum_sq = 0, count = 0;
  for (const auto& w : da.true_b.weights) {
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      sum += w.data()[i];
      sum_sq += w.data()[i] * w.data()[i];
      count += 1;
    }
  }
  CHECK(std::abs(sum / count) < 4 * std::sqrt(2.0 / count));
  CHECK(std::abs(sum_sq / count - 2.0) < 4 * std::sqrt(8.0 / count));

  CategoricalGenConfig defaults;
  CHECK(defaults.resolved_cardinalities() == std::vector<int>(10, 2));
  CHECK(defaults.resolved_feature_probs() == std::vector<double>(3, 0.3));
  defaults.cardinalities = {2, 2};
  CHECK_THROWS(defaults.validate());
}
