#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mst/config.hpp"
#include "mst/graph.hpp"
#include "mst/model.hpp"

namespace mst {

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  std::uint64_t seed = 1;
  /// Decoupled (AdamW-style); 0 disables.
  double weight_decay = 0.0;
  /// Global L2 gradient clipping; 0 disables.
  double clip_norm = 0.0;
  /// Worker threads for per-example forward/backward. Results do not depend
  /// on this value.
  std::size_t threads = 1;

  void validate() const;
  void write(KeyValueConfig& out, const std::string& section = "train") const;
  void read(const KeyValueConfig& in, const std::string& section = "train");
};

/// First and second moment estimates, one pair per parameter.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t step = 0;
};

/// One Adam update with bias correction and decoupled weight decay:
///   p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * p
/// Reads gradients from Parameter::grad. Throws NumericError (leaving every
/// parameter and the state untouched) when a gradient is not finite.
void adam_step(std::span<Parameter* const> params, AdamState& state, const TrainConfig& config);

/// One training or evaluation item. Token models read `tokens`, vector
/// models read `vectors`; classifiers read `label`, regressors `target`.
struct Example {
  std::vector<std::size_t> tokens;
  Tensor vectors;
  std::size_t label = 0;
  Tensor target;
};

using Dataset = std::vector<Example>;

struct EvalResult {
  double loss = 0.0;
  /// Accuracy for classifiers, mean squared error for regressors.
  double metric = 0.0;
};

/// Line-delimited JSON metric records:
///   {"epoch":1,"split":"dev","metric":"accuracy","value":0.93}
/// written to an optional stream and an optional file.
class MetricsLog {
 public:
  MetricsLog() = default;
  explicit MetricsLog(std::ostream* echo, const std::string& path = "");

  void emit(std::size_t epoch, const std::string& split, const std::string& metric, double value,
            const std::string& run = "");
  const std::vector<std::string>& lines() const { return lines_; }

 private:
  std::ostream* echo_ = nullptr;
  std::ofstream file_;
  std::vector<std::string> lines_;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double eval_metric = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_metric = 0.0;
};

struct TrainOptions {
  MetricsLog* log = nullptr;
  std::string run_name;
  /// Restore the parameters of the best epoch (by eval metric) at the end.
  bool keep_best = true;
};

/// Loss of one example (cross entropy or MSE), no gradient.
double example_loss(const Model& model, const Example& ex);

/// Forward pass over `data` without gradients.
EvalResult evaluate(const Model& model, const Dataset& data);

/// Mini-batch Adam. Each epoch shuffles with a Fisher-Yates pass seeded by
/// (config.seed, epoch); per-example gradients are summed in example order,
/// so parameters after k steps depend only on (model init, config, data).
/// `eval` selects the best epoch; when null the training set is used.
/// Epoch 0 records the untrained model. Throws NumericError on a NaN loss
/// naming the epoch and step.
TrainHistory train(Model& model, const Dataset& train_set, const Dataset* eval, const TrainConfig& config,
                   const TrainOptions& options = {});

/// True when larger metric values are better for this model's task.
bool higher_is_better(const Model& model);

}  // namespace mst
