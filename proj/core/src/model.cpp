#include "mst/model.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mst/error.hpp"

namespace mst {

namespace {

const char* arch_name(Architecture a) { return a == Architecture::MultiScale ? "ms" : "vanilla"; }
const char* input_name(InputKind k) { return k == InputKind::Tokens ? "tokens" : "vectors"; }
const char* task_name(TaskKind t) { return t == TaskKind::Classify ? "classify" : "regress"; }

Parameter uniform_param(const std::string& name, Shape shape, double a, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(-a, a);
  return Parameter(name, std::move(t));
}

Parameter constant_param(const std::string& name, Shape shape, double v) {
  return Parameter(name, Tensor(std::move(shape), v));
}

Rng* dropout_rng(const ForwardOptions& opts, double p) {
  if (opts.training && p > 0.0 && !opts.rng) throw std::invalid_argument("training with dropout needs an Rng");
  return opts.rng;
}

Var apply_dropout(Var x, double p, const ForwardOptions& opts) {
  Rng* rng = dropout_rng(opts, p);
  if (!opts.training || p == 0.0) return x;
  return dropout(x, p, true, *rng);
}

}  // namespace

// ---------------------------------------------------------------------------
// ModelConfig

void ModelConfig::validate() const {
  if (layers == 0) throw ConfigError("model.layers must be >= 1");
  if (heads == 0) throw ConfigError("model.heads must be >= 1");
  if (hidden == 0 || head_dim == 0) throw ConfigError("model.hidden and model.head_dim must be >= 1");
  if (scales.empty()) throw ConfigError("model.scales must not be empty");
  if (!std::isfinite(alpha)) throw ConfigError("model.alpha must be finite");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout must be in [0, 1)");
  if (use_positional && max_len == 0) throw ConfigError("model.max_len must be >= 1 with positional embeddings");
  if (input == InputKind::Tokens && vocab_size == 0) throw ConfigError("model.vocab_size must be >= 1");
  if (input == InputKind::Vectors && input_dim == 0) throw ConfigError("model.input_dim must be >= 1");
  if (task == TaskKind::Classify && (classes == 0 || mlp_hidden == 0)) {
    throw ConfigError("model.classes and model.mlp_hidden must be >= 1");
  }
  if (task == TaskKind::Regress && output_dim == 0) throw ConfigError("model.output_dim must be >= 1");
}

std::vector<LayerPlan> ModelConfig::plans() const { return plan_scales(alpha, layers, heads, scales); }

void ModelConfig::write(KeyValueConfig& out, const std::string& section) const {
  const auto key = [&](const char* k) { return section + "." + k; };
  out.set(key("arch"), arch_name(arch));
  out.set(key("layers"), std::to_string(layers));
  out.set(key("heads"), std::to_string(heads));
  out.set(key("hidden"), std::to_string(hidden));
  out.set(key("head_dim"), std::to_string(head_dim));
  out.set(key("alpha"), format_double(alpha));
  out.set(key("scales"), format_scales(scales));
  out.set(key("use_cls"), use_cls ? "true" : "false");
  out.set(key("use_positional"), use_positional ? "true" : "false");
  out.set(key("ffn"), ffn ? "true" : "false");
  out.set(key("ffn_dim"), std::to_string(ffn_dim));
  out.set(key("attention_relu"), attention_relu ? "true" : "false");
  out.set(key("dropout"), format_double(dropout));
  out.set(key("max_len"), std::to_string(max_len));
  out.set(key("input"), input_name(input));
  out.set(key("vocab_size"), std::to_string(vocab_size));
  out.set(key("input_dim"), std::to_string(input_dim));
  out.set(key("task"), task_name(task));
  out.set(key("classes"), std::to_string(classes));
  out.set(key("mlp_hidden"), std::to_string(mlp_hidden));
  out.set(key("output_dim"), std::to_string(output_dim));
  out.set(key("init_seed"), std::to_string(init_seed));
}

void ModelConfig::read(const KeyValueConfig& in, const std::string& section) {
  in.require_known(section, {"arch", "layers", "heads", "hidden", "head_dim", "alpha", "scales", "use_cls",
                             "use_positional", "ffn", "ffn_dim", "attention_relu", "dropout", "max_len", "input",
                             "vocab_size", "input_dim", "task", "classes", "mlp_hidden", "output_dim",
                             "init_seed"});
  const auto key = [&](const char* k) { return section + "." + k; };
  if (auto v = in.get(key("arch"))) {
    if (*v == "ms") arch = Architecture::MultiScale;
    else if (*v == "vanilla") arch = Architecture::Vanilla;
    else throw ConfigError(key("arch") + ": expected 'ms' or 'vanilla', got '" + *v + "'");
  }
  layers = in.get_size(key("layers"), layers);
  heads = in.get_size(key("heads"), heads);
  hidden = in.get_size(key("hidden"), hidden);
  head_dim = in.get_size(key("head_dim"), head_dim);
  alpha = in.get_double(key("alpha"), alpha);
  if (auto v = in.get(key("scales"))) scales = parse_scales(*v);
  use_cls = in.get_bool(key("use_cls"), use_cls);
  use_positional = in.get_bool(key("use_positional"), use_positional);
  ffn = in.get_bool(key("ffn"), ffn);
  ffn_dim = in.get_size(key("ffn_dim"), ffn_dim);
  attention_relu = in.get_bool(key("attention_relu"), attention_relu);
  dropout = in.get_double(key("dropout"), dropout);
  max_len = in.get_size(key("max_len"), max_len);
  if (auto v = in.get(key("input"))) {
    if (*v == "tokens") input = InputKind::Tokens;
    else if (*v == "vectors") input = InputKind::Vectors;
    else throw ConfigError(key("input") + ": expected 'tokens' or 'vectors', got '" + *v + "'");
  }
  vocab_size = in.get_size(key("vocab_size"), vocab_size);
  input_dim = in.get_size(key("input_dim"), input_dim);
  if (auto v = in.get(key("task"))) {
    if (*v == "classify") task = TaskKind::Classify;
    else if (*v == "regress") task = TaskKind::Regress;
    else throw ConfigError(key("task") + ": expected 'classify' or 'regress', got '" + *v + "'");
  }
  classes = in.get_size(key("classes"), classes);
  mlp_hidden = in.get_size(key("mlp_hidden"), mlp_hidden);
  output_dim = in.get_size(key("output_dim"), output_dim);
  init_seed = in.get_u64(key("init_seed"), init_seed);
}

// ---------------------------------------------------------------------------
// Layers

Var ms_transformer_layer(Var h, const MsLayer& layer, const ForwardOptions& opts, double p,
                         std::vector<Tensor>* attention) {
  Graph& g = h.graph();
  if (h.value().cols() != layer.wo.value.shape()[1]) {
    throw DimensionError("ms_transformer_layer: input " + shape_string(h.shape()) + " vs W_o " +
                         shape_string(layer.wo.value.shape()));
  }
  Var a = relu(msmsa(h, layer.heads, layer.wo, attention));
  a = apply_dropout(a, p, opts);
  return layer_norm(add(h, a), g.param(layer.ln_gain), g.param(layer.ln_bias));
}

Var vanilla_transformer_layer(Var h, const VanillaLayer& layer, const ForwardOptions& opts, bool ffn,
                              bool attention_relu, double p, std::vector<Tensor>* attention) {
  Graph& g = h.graph();
  if (h.value().cols() != layer.wo.value.shape()[1]) {
    throw DimensionError("vanilla_transformer_layer: input " + shape_string(h.shape()) + " vs W_o " +
                         shape_string(layer.wo.value.shape()));
  }
  Var a = msa_standard(h, layer.heads, layer.wo, attention);
  if (attention_relu) a = relu(a);
  a = apply_dropout(a, p, opts);
  Var z = layer_norm(add(h, a), g.param(layer.ln1_gain), g.param(layer.ln1_bias));
  if (!ffn) return z;
  Var f = relu(add(matmul(z, g.param(layer.w1)), g.param(layer.b1)));
  f = add(matmul(f, g.param(layer.w2)), g.param(layer.b2));
  f = apply_dropout(f, p, opts);
  return layer_norm(add(z, f), g.param(layer.ln2_gain), g.param(layer.ln2_bias));
}

Var sentence_representation(Var top, bool use_cls) {
  Var pooled = max_over_positions(top);
  if (!use_cls) return pooled;
  const std::size_t d = pooled.value().size();
  const Var parts[] = {reshape(slice_rows(top, 0, 1), {d}), pooled};
  return concat_last(parts);
}

Var pair_features(Var r1, Var r2) {
  if (r1.value().shape() != r2.value().shape()) {
    throw DimensionError("pair_features: " + shape_string(r1.shape()) + " vs " + shape_string(r2.shape()));
  }
  Var diff = sub(r1, r2);
  const Var parts[] = {r1, r2, abs(diff), diff};
  return concat_last(parts);
}

// ---------------------------------------------------------------------------
// Model

Model::Model(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  Rng rng(derive_seed(config_.init_seed, 0));
  const std::size_t d = config_.hidden;

  if (config_.input == InputKind::Tokens) {
    embed_ = uniform_param("embed", {config_.vocab_size, d}, 0.1, rng);
  } else {
    embed_ = init_projection("input.w", config_.input_dim, d, rng);
    input_bias_ = constant_param("input.b", {d}, 0.0);
  }
  if (config_.use_cls) cls_ = uniform_param("cls", {1, d}, 0.1, rng);
  if (config_.use_positional) positional_ = uniform_param("pos", {config_.max_len, d}, 0.1, rng);

  const std::size_t concat = config_.heads * config_.head_dim;
  if (config_.arch == Architecture::MultiScale) {
    const auto plans = config_.plans();
    for (std::size_t l = 0; l < config_.layers; ++l) {
      const std::string prefix = "layer" + std::to_string(l);
      MsLayer layer;
      const auto scales = plans[l].head_scales();
      for (std::size_t h = 0; h < scales.size(); ++h) {
        layer.heads.push_back(
            {HeadParams::init(d, config_.head_dim, rng, prefix + ".head" + std::to_string(h)), scales[h]});
      }
      layer.wo = init_projection(prefix + ".wo", concat, d, rng);
      layer.ln_gain = constant_param(prefix + ".ln1.gain", {d}, 1.0);
      layer.ln_bias = constant_param(prefix + ".ln1.bias", {d}, 0.0);
      ms_layers_.push_back(std::move(layer));
    }
  } else {
    for (std::size_t l = 0; l < config_.layers; ++l) {
      const std::string prefix = "layer" + std::to_string(l);
      VanillaLayer layer;
      for (std::size_t h = 0; h < config_.heads; ++h) {
        layer.heads.push_back(HeadParams::init(d, config_.head_dim, rng, prefix + ".head" + std::to_string(h)));
      }
      layer.wo = init_projection(prefix + ".wo", concat, d, rng);
      layer.ln1_gain = constant_param(prefix + ".ln1.gain", {d}, 1.0);
      layer.ln1_bias = constant_param(prefix + ".ln1.bias", {d}, 0.0);
      if (config_.ffn) {
        const std::size_t f = config_.ffn_width();
        layer.w1 = init_projection(prefix + ".ffn.w1", d, f, rng);
        layer.b1 = constant_param(prefix + ".ffn.b1", {f}, 0.0);
        layer.w2 = init_projection(prefix + ".ffn.w2", f, d, rng);
        layer.b2 = constant_param(prefix + ".ffn.b2", {d}, 0.0);
        layer.ln2_gain = constant_param(prefix + ".ln2.gain", {d}, 1.0);
        layer.ln2_bias = constant_param(prefix + ".ln2.bias", {d}, 0.0);
      }
      vanilla_layers_.push_back(std::move(layer));
    }
  }

  const std::size_t rep = config_.representation_dim();
  if (config_.task == TaskKind::Regress) {
    head_w1_ = init_projection("head.w", rep, config_.output_dim, rng);
    head_b1_ = constant_param("head.b", {config_.output_dim}, 0.0);
  } else {
    head_w1_ = init_projection("head.w1", rep, config_.mlp_hidden, rng);
    head_b1_ = constant_param("head.b1", {config_.mlp_hidden}, 0.0);
    head_w2_ = init_projection("head.w2", config_.mlp_hidden, config_.classes, rng);
    head_b2_ = constant_param("head.b2", {config_.classes}, 0.0);
  }

  // Pointers are taken once every container has its final size.
  const auto add = [this](Parameter& p) {
    if (!p.name.empty()) params_.push_back(&p);
  };
  add(embed_);
  add(input_bias_);
  add(cls_);
  add(positional_);
  for (auto& layer : ms_layers_) {
    for (auto& h : layer.heads) {
      add(h.params.wq);
      add(h.params.wk);
      add(h.params.wv);
    }
    add(layer.wo);
    add(layer.ln_gain);
    add(layer.ln_bias);
  }
  for (auto& layer : vanilla_layers_) {
    for (auto& h : layer.heads) {
      add(h.wq);
      add(h.wk);
      add(h.wv);
    }
    add(layer.wo);
    add(layer.ln1_gain);
    add(layer.ln1_bias);
    add(layer.w1);
    add(layer.b1);
    add(layer.w2);
    add(layer.b2);
    add(layer.ln2_gain);
    add(layer.ln2_bias);
  }
  add(head_w1_);
  add(head_b1_);
  add(head_w2_);
  add(head_b2_);
}

std::vector<Parameter*> Model::parameters() { return params_; }

std::vector<const Parameter*> Model::parameters() const { return {params_.begin(), params_.end()}; }

Parameter* Model::find(const std::string& name) {
  for (auto* p : params_)
    if (p->name == name) return p;
  return nullptr;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : params_) n += p->value.size();
  return n;
}

Encoding Model::encode(Graph& g, std::span<const std::size_t> tokens, const ForwardOptions& opts) const {
  if (config_.input != InputKind::Tokens) throw ConfigError("model expects vector input, got token ids");
  if (tokens.empty()) throw DimensionError("encode: empty sequence");
  for (auto id : tokens) {
    if (id >= config_.vocab_size) {
      throw DimensionError("encode: token id " + std::to_string(id) + " >= vocab size " +
                           std::to_string(config_.vocab_size));
    }
  }
  return run_layers(gather_rows(g.param(embed_), tokens), opts);
}

Encoding Model::encode(Graph& g, const Tensor& vectors, const ForwardOptions& opts) const {
  if (config_.input != InputKind::Vectors) throw ConfigError("model expects token ids, got vectors");
  if (vectors.rank() != 2 || vectors.rows() == 0) throw DimensionError("encode: empty sequence");
  if (vectors.cols() != config_.input_dim) {
    throw DimensionError("encode: input " + shape_string(vectors.shape()) + " vs input_dim " +
                         std::to_string(config_.input_dim));
  }
  Var x = add(matmul(g.input(vectors), g.param(embed_)), g.param(input_bias_));
  return run_layers(x, opts);
}

Encoding Model::run_layers(Var x, const ForwardOptions& opts) const {
  Graph& g = x.graph();
  if (config_.use_cls) {
    const Var parts[] = {g.param(cls_), x};
    x = concat_rows(parts);
  }
  const std::size_t n = x.value().rows();
  if (config_.use_positional) {
    if (n > config_.max_len) {
      throw DimensionError("encode: sequence of " + std::to_string(n) + " positions exceeds max_len " +
                           std::to_string(config_.max_len));
    }
    x = add(x, slice_rows(g.param(positional_), 0, n));
  }
  Encoding enc;
  if (opts.retain_attention) enc.attention.resize(config_.layers);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    std::vector<Tensor>* attn = opts.retain_attention ? &enc.attention[l] : nullptr;
    if (config_.arch == Architecture::MultiScale) {
      x = ms_transformer_layer(x, ms_layers_[l], opts, config_.dropout, attn);
    } else {
      x = vanilla_transformer_layer(x, vanilla_layers_[l], opts, config_.ffn, config_.attention_relu,
                                    config_.dropout, attn);
    }
  }
  enc.top = x;
  return enc;
}

Var Model::head(Var rep, const ForwardOptions& opts) const {
  Graph& g = rep.graph();
  Var h1 = add(matmul(rep, g.param(head_w1_)), g.param(head_b1_));
  if (config_.task == TaskKind::Regress) return h1;
  h1 = apply_dropout(relu(h1), config_.dropout, opts);
  return add(matmul(h1, g.param(head_w2_)), g.param(head_b2_));
}

Var Model::forward(Graph& g, std::span<const std::size_t> tokens, const ForwardOptions& opts) const {
  return head(sentence_representation(encode(g, tokens, opts).top, config_.use_cls), opts);
}

Var Model::forward(Graph& g, const Tensor& vectors, const ForwardOptions& opts) const {
  return head(sentence_representation(encode(g, vectors, opts).top, config_.use_cls), opts);
}

void Model::set_output_bias(std::span<const double> bias) {
  Parameter& b = config_.task == TaskKind::Regress ? head_b1_ : head_b2_;
  if (bias.size() != b.value.size()) {
    throw DimensionError("set_output_bias: got " + std::to_string(bias.size()) + " values for " +
                         shape_string(b.value.shape()));
  }
  std::copy(bias.begin(), bias.end(), b.value.values().begin());
}

void copy_parameters(const Model& src, Model& dst) {
  const auto sp = src.parameters();
  for (Parameter* p : dst.parameters()) {
    auto it = std::find_if(sp.begin(), sp.end(), [&](const Parameter* q) { return q->name == p->name; });
    if (it == sp.end()) throw ConfigError("copy_parameters: source has no parameter '" + p->name + "'");
    if ((*it)->value.shape() != p->value.shape()) {
      throw DimensionError("copy_parameters: '" + p->name + "' is " + shape_string((*it)->value.shape()) +
                           " in source, " + shape_string(p->value.shape()) + " in destination");
    }
    p->value = (*it)->value;
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& l : lines) out << l << "\n";
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

}  // namespace

void save_checkpoint(const std::string& dir, const Model& model, const CheckpointExtras& extras) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  KeyValueConfig manifest;
  manifest.set("meta.format", "mst-checkpoint");
  manifest.set("meta.version", "1");
  model.config().write(manifest, "model");
  for (const auto* p : model.parameters()) manifest.set("parameters." + p->name, shape_string(p->value.shape()));
  manifest.save((fs::path(dir) / "manifest.ini").string());

  std::ofstream out(fs::path(dir) / "tensors.bin", std::ios::binary);
  if (!out) throw IoError("cannot write " + (fs::path(dir) / "tensors.bin").string());
  for (const auto* p : model.parameters()) write_named_tensor(out, p->name, p->value);

  if (!extras.vocab.empty()) write_lines(fs::path(dir) / "vocab.txt", extras.vocab);
  if (!extras.labels.empty()) write_lines(fs::path(dir) / "labels.txt", extras.labels);
}

std::unique_ptr<Model> load_checkpoint(const std::string& dir, CheckpointExtras* extras) {
  namespace fs = std::filesystem;
  const auto manifest = KeyValueConfig::load((fs::path(dir) / "manifest.ini").string());
  if (manifest.get_string("meta.format", "") != "mst-checkpoint" || manifest.get_string("meta.version", "") != "1") {
    throw IoError(dir + ": not an mst checkpoint (manifest format/version)");
  }
  ModelConfig cfg;
  cfg.read(manifest, "model");
  auto model = std::make_unique<Model>(cfg);

  const auto listed = manifest.keys_in("parameters");
  auto params = model->parameters();
  if (listed.size() != params.size()) {
    throw ConfigError(dir + ": manifest lists " + std::to_string(listed.size()) + " parameters, config implies " +
                      std::to_string(params.size()));
  }
  std::ifstream in(fs::path(dir) / "tensors.bin", std::ios::binary);
  if (!in) throw IoError("cannot read " + (fs::path(dir) / "tensors.bin").string());
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto [name, tensor] = read_named_tensor(in);
    Parameter* p = params[i];
    if (name != p->name || listed[i] != p->name) {
      throw ConfigError(dir + ": parameter " + std::to_string(i) + " is '" + name + "', config expects '" + p->name +
                        "'");
    }
    if (tensor.shape() != p->value.shape() ||
        manifest.get_string("parameters." + name, "") != shape_string(p->value.shape())) {
      throw DimensionError(dir + ": parameter '" + name + "' has shape " + shape_string(tensor.shape()) +
                           ", config expects " + shape_string(p->value.shape()));
    }
    p->value = std::move(tensor);
  }
  if (extras) {
    *extras = {};
    if (fs::exists(fs::path(dir) / "vocab.txt")) extras->vocab = read_lines(fs::path(dir) / "vocab.txt");
    if (fs::exists(fs::path(dir) / "labels.txt")) extras->labels = read_lines(fs::path(dir) / "labels.txt");
  }
  return model;
}

}  // namespace mst
