#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mst/attention.hpp"
#include "mst/config.hpp"
#include "mst/graph.hpp"
#include "mst/planner.hpp"

namespace mst {

enum class Architecture { MultiScale, Vanilla };
enum class InputKind { Tokens, Vectors };
enum class TaskKind { Classify, Regress };

struct ModelConfig {
  Architecture arch = Architecture::MultiScale;
  std::size_t layers = 2;
  std::size_t heads = 10;
  std::size_t hidden = 40;   // D
  std::size_t head_dim = 4;  // D'
  double alpha = 0.0;
  /// Candidate scales, smallest first.
  std::vector<ScaleSpec> scales = {ScaleSpec::fixed(3), ScaleSpec::ratio(16), ScaleSpec::ratio(8),
                                   ScaleSpec::ratio(4), ScaleSpec::ratio(2)};
  bool use_cls = true;
  bool use_positional = false;
  /// Vanilla only: position-wise feed-forward sublayer.
  bool ffn = true;
  /// 0 means 4 * hidden.
  std::size_t ffn_dim = 0;
  /// Vanilla only: ReLU on the attention output before the residual, the
  /// way the multi-scale layer does it. Used for equivalence checks.
  bool attention_relu = false;
  double dropout = 0.0;
  std::size_t max_len = 512;

  InputKind input = InputKind::Tokens;
  std::size_t vocab_size = 0;
  std::size_t input_dim = 0;

  TaskKind task = TaskKind::Classify;
  std::size_t classes = 2;
  std::size_t mlp_hidden = 64;
  std::size_t output_dim = 1;

  std::uint64_t init_seed = 1;

  /// Throws ConfigError on inconsistent settings.
  void validate() const;
  std::size_t ffn_width() const { return ffn_dim ? ffn_dim : 4 * hidden; }
  std::size_t representation_dim() const { return use_cls ? 2 * hidden : hidden; }
  /// Per-layer head allocation (multi-scale only).
  std::vector<LayerPlan> plans() const;

  void write(KeyValueConfig& out, const std::string& section = "model") const;
  /// Reads every key of `section` over the current values; unknown keys are
  /// errors.
  void read(const KeyValueConfig& in, const std::string& section = "model");
};

struct ForwardOptions {
  bool training = false;
  Rng* rng = nullptr;  // required when training with dropout > 0
  bool retain_attention = false;
};

/// One multi-scale layer: H' = norm(H + ReLU(MSMSA(H))), no FFN.
struct MsLayer {
  std::vector<AttentionHead> heads;
  Parameter wo;
  Parameter ln_gain;
  Parameter ln_bias;
};

/// One Transformer layer: Z = norm(H + MSA(H)); H' = norm(Z + FFN(Z)).
struct VanillaLayer {
  std::vector<HeadParams> heads;
  Parameter wo;
  Parameter ln1_gain, ln1_bias;
  Parameter w1, b1, w2, b2;
  Parameter ln2_gain, ln2_bias;
};

Var ms_transformer_layer(Var h, const MsLayer& layer, const ForwardOptions& opts, double dropout = 0.0,
                         std::vector<Tensor>* attention = nullptr);
Var vanilla_transformer_layer(Var h, const VanillaLayer& layer, const ForwardOptions& opts, bool ffn,
                              bool attention_relu, double dropout = 0.0, std::vector<Tensor>* attention = nullptr);

/// concat(H[0], maxpool(H)) with CLS (max over every row, CLS included),
/// maxpool(H) alone without.
Var sentence_representation(Var top, bool use_cls);

/// concat(r1, r2, |r1 - r2|, r1 - r2) with an elementwise absolute value.
Var pair_features(Var r1, Var r2);

struct Encoding {
  Var top;
  /// attention[layer][head] is a dense N x N matrix; empty unless retained.
  std::vector<std::vector<Tensor>> attention;
};

class Model {
 public:
  explicit Model(ModelConfig config);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }

  /// Every parameter, in a fixed construction order.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  Parameter* find(const std::string& name);
  std::size_t parameter_count() const;

  Encoding encode(Graph& g, std::span<const std::size_t> tokens, const ForwardOptions& opts = {}) const;
  Encoding encode(Graph& g, const Tensor& vectors, const ForwardOptions& opts = {}) const;

  /// Task head on a sentence representation: class logits or regression
  /// outputs.
  Var head(Var representation, const ForwardOptions& opts = {}) const;

  Var forward(Graph& g, std::span<const std::size_t> tokens, const ForwardOptions& opts = {}) const;
  Var forward(Graph& g, const Tensor& vectors, const ForwardOptions& opts = {}) const;

  /// Sets the regression output bias (e.g. to the training-target mean).
  void set_output_bias(std::span<const double> bias);

 private:
  Encoding run_layers(Var x, const ForwardOptions& opts) const;

  ModelConfig config_;
  Parameter embed_;  // tokens: vocab x D; vectors: input_dim x D
  Parameter input_bias_;
  Parameter cls_;
  Parameter positional_;
  std::vector<MsLayer> ms_layers_;
  std::vector<VanillaLayer> vanilla_layers_;
  Parameter head_w1_, head_b1_, head_w2_, head_b2_;
  std::vector<Parameter*> params_;
};

/// Copies parameter values by name from `src` into `dst`. Throws when a
/// name is missing or a shape differs.
void copy_parameters(const Model& src, Model& dst);

struct CheckpointExtras {
  std::vector<std::string> vocab;
  std::vector<std::string> labels;
};

/// Directory layout:
///   manifest.ini  [model] config echo, [parameters] name = shape, [meta]
///   tensors.bin   named tensor records in parameter order
///   vocab.txt     one token per line (token models)
///   labels.txt    one label per line (classifiers)
void save_checkpoint(const std::string& dir, const Model& model, const CheckpointExtras& extras = {});
std::unique_ptr<Model> load_checkpoint(const std::string& dir, CheckpointExtras* extras = nullptr);

}  // namespace mst
