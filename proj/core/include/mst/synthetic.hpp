#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mst/config.hpp"
#include "mst/model.hpp"
#include "mst/training.hpp"

namespace mst {

/// Mirrored summation: N vectors a_1..a_N in [0,1)^d, target
/// sum_{i=1..K} a_i * a_{N-i+1} (elementwise).
struct MirroredSample {
  Tensor inputs;  // N x d
  Tensor target;  // d
};

struct MirroredSet {
  std::size_t n = 0;
  std::size_t d = 0;
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::vector<MirroredSample> samples;
};

Tensor mirrored_target(const Tensor& inputs, std::size_t k);

/// Sample i draws from Rng(derive_seed(seed, i)), so any subset can be
/// regenerated independently. Throws ConfigError unless 1 <= K <= N, d >= 1.
MirroredSet gen_dataset(std::size_t n, std::size_t d, std::size_t k, std::size_t count, std::uint64_t seed);

/// 7K/144: per-component variance of a sum of K independent products of two
/// U(0,1) draws, i.e. the MSE of predicting the mean. Only exact for
/// K <= N/2; beyond that mirrored pairs repeat and the terms correlate.
double trivial_mse(std::size_t k);

// File layout, little-endian:
//   "MSTD", u32 version (1), u64 N, d, K, count, seed,
//   tensor [count x N x d] inputs, tensor [count x d] targets.
void save_dataset(const std::string& path, const MirroredSet& set);
MirroredSet load_dataset(const std::string& path);

Dataset to_examples(const MirroredSet& set);

/// Named model configurations for the mirrored-summation comparison:
/// hier-s, deephier-s, flex, vanilla.
std::vector<std::string> mirrored_grid_models();

struct MirroredGridConfig {
  std::size_t n = 40;
  std::size_t d = 10;
  std::vector<std::size_t> ks = {10, 20, 30, 40};
  std::size_t train_size = 20000;
  std::size_t valid_size = 1000;
  std::size_t test_size = 5000;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::vector<std::string> models = mirrored_grid_models();
  // Desk-scale model width; 10 heads of 2 units each.
  std::size_t hidden = 16;
  std::size_t head_dim = 2;
  TrainConfig train = default_train();

  /// One pass over the training set in batches of 16 at lr 3e-3.
  static TrainConfig default_train();

  void validate() const;
  void write(KeyValueConfig& out) const;
  /// Reads [mirrored] and [train]; unknown keys are errors.
  void read(const KeyValueConfig& in);
};

ModelConfig mirrored_grid_model(const std::string& name, const MirroredGridConfig& config);

struct MirroredGridCell {
  std::string model;
  std::size_t k = 0;
  std::vector<double> seed_mse;  // NaN where the run failed
  double median = 0.0;
  std::string error;
};

struct MirroredGridResult {
  std::vector<MirroredGridCell> cells;
  const MirroredGridCell* find(const std::string& model, std::size_t k) const;
};

/// Median of the finite values; NaN when there are none.
double median(std::vector<double> values);

/// Trains every (model, K, seed) combination. Training failures are caught
/// and recorded in the cell instead of aborting the grid.
MirroredGridResult run_mirrored_grid(const MirroredGridConfig& config, MetricsLog* log = nullptr,
                                     std::ostream* progress = nullptr);

/// Columns K, model, test_mse (median over seeds).
std::string mirrored_grid_csv(const MirroredGridResult& result);
std::string mirrored_grid_table(const MirroredGridResult& result);

}  // namespace mst
