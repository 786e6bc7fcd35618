#include "mst/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <thread>

#include <json.hpp>

#include "mst/error.hpp"

namespace mst {

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be finite and >= 0");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw ConfigError("train.beta1 and train.beta2 must be in (0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps must be positive");
  if (batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
  if (!(clip_norm >= 0.0)) throw ConfigError("train.clip_norm must be >= 0");
  if (threads == 0) throw ConfigError("train.threads must be >= 1");
}

void TrainConfig::write(KeyValueConfig& out, const std::string& section) const {
  const auto key = [&](const char* k) { return section + "." + k; };
  out.set(key("lr"), format_double(lr));
  out.set(key("beta1"), format_double(beta1));
  out.set(key("beta2"), format_double(beta2));
  out.set(key("adam_eps"), format_double(adam_eps));
  out.set(key("batch_size"), std::to_string(batch_size));
  out.set(key("epochs"), std::to_string(epochs));
  out.set(key("seed"), std::to_string(seed));
  out.set(key("weight_decay"), format_double(weight_decay));
  out.set(key("clip_norm"), format_double(clip_norm));
  out.set(key("threads"), std::to_string(threads));
}

void TrainConfig::read(const KeyValueConfig& in, const std::string& section) {
  in.require_known(section, {"lr", "beta1", "beta2", "adam_eps", "batch_size", "epochs", "seed", "weight_decay",
                             "clip_norm", "threads"});
  const auto key = [&](const char* k) { return section + "." + k; };
  lr = in.get_double(key("lr"), lr);
  beta1 = in.get_double(key("beta1"), beta1);
  beta2 = in.get_double(key("beta2"), beta2);
  adam_eps = in.get_double(key("adam_eps"), adam_eps);
  batch_size = in.get_size(key("batch_size"), batch_size);
  epochs = in.get_size(key("epochs"), epochs);
  seed = in.get_u64(key("seed"), seed);
  weight_decay = in.get_double(key("weight_decay"), weight_decay);
  clip_norm = in.get_double(key("clip_norm"), clip_norm);
  threads = in.get_size(key("threads"), threads);
}

void adam_step(std::span<Parameter* const> params, AdamState& state, const TrainConfig& config) {
  for (const Parameter* p : params) {
    for (double g : p->grad.values()) {
      if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient in '" + p->name + "'");
    }
  }
  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (const Parameter* p : params) {
      state.m.emplace_back(p->value.shape());
      state.v.emplace_back(p->value.shape());
    }
    state.step = 0;
  }
  double clip = 1.0;
  if (config.clip_norm > 0.0) {
    double sq = 0.0;
    for (const Parameter* p : params)
      for (double g : p->grad.values()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > config.clip_norm) clip = config.clip_norm / norm;
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = p.grad[j] * clip;
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g;
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g * g;
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      const double old = p.value[j];
      p.value[j] = old - config.lr * m_hat / (std::sqrt(v_hat) + config.adam_eps) - config.lr * config.weight_decay * old;
    }
  }
}

// ---------------------------------------------------------------------------

MetricsLog::MetricsLog(std::ostream* echo, const std::string& path) : echo_(echo) {
  if (!path.empty()) {
    file_.open(path);
    if (!file_) throw IoError("cannot write metrics file " + path);
  }
}

void MetricsLog::emit(std::size_t epoch, const std::string& split, const std::string& metric, double value,
                      const std::string& run) {
  nlohmann::ordered_json j;
  if (!run.empty()) j["run"] = run;
  j["epoch"] = epoch;
  j["split"] = split;
  j["metric"] = metric;
  j["value"] = value;
  std::string line = j.dump();
  if (echo_) *echo_ << line << "\n";
  if (file_.is_open()) file_ << line << "\n" << std::flush;
  lines_.push_back(std::move(line));
}

// ---------------------------------------------------------------------------

namespace {

Var forward_example(Graph& g, const Model& model, const Example& ex, const ForwardOptions& opts) {
  if (model.config().input == InputKind::Tokens) return model.forward(g, ex.tokens, opts);
  return model.forward(g, ex.vectors, opts);
}

Var loss_of(Graph& g, const Model& model, const Example& ex, Var out) {
  if (model.config().task == TaskKind::Classify) return cross_entropy(out, ex.label);
  return mse_loss(out, g.input(ex.target));
}

struct ExampleGrad {
  double loss = 0.0;
  std::vector<Tensor> grads;  // aligned with the parameter list; empty = unused
};

ExampleGrad example_grad(const Model& model, std::span<Parameter* const> params, const Example& ex,
                         std::uint64_t dropout_seed) {
  Graph g;
  Rng rng(dropout_seed);
  ForwardOptions opts{true, &rng, false};
  Var loss = loss_of(g, model, ex, forward_example(g, model, ex, opts));
  g.backward(loss);
  ExampleGrad out;
  out.loss = loss.value()[0];
  out.grads.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (const Tensor* gr = g.param_grad(*params[i])) out.grads[i] = *gr;
  }
  return out;
}

std::vector<Tensor> snapshot(const Model& model) {
  std::vector<Tensor> out;
  for (const auto* p : model.parameters()) out.push_back(p->value);
  return out;
}

void restore(Model& model, const std::vector<Tensor>& values) {
  auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

}  // namespace

bool higher_is_better(const Model& model) { return model.config().task == TaskKind::Classify; }

double example_loss(const Model& model, const Example& ex) {
  Graph g(false);
  return loss_of(g, model, ex, forward_example(g, model, ex, {})).value()[0];
}

EvalResult evaluate(const Model& model, const Dataset& data) {
  if (data.empty()) throw ConfigError("evaluate: empty dataset");
  const bool classify = model.config().task == TaskKind::Classify;
  double loss = 0.0, metric = 0.0;
  for (const auto& ex : data) {
    Graph g(false);
    Var out = forward_example(g, model, ex, {});
    loss += loss_of(g, model, ex, out).value()[0];
    const Tensor& o = out.value();
    if (classify) {
      const auto pred = static_cast<std::size_t>(std::max_element(o.values().begin(), o.values().end()) -
                                                 o.values().begin());
      metric += pred == ex.label ? 1.0 : 0.0;
    } else {
      double se = 0.0;
      for (std::size_t i = 0; i < o.size(); ++i) se += (o[i] - ex.target[i]) * (o[i] - ex.target[i]);
      metric += se / static_cast<double>(o.size());
    }
  }
  const double n = static_cast<double>(data.size());
  return {loss / n, metric / n};
}

TrainHistory train(Model& model, const Dataset& train_set, const Dataset* eval, const TrainConfig& config,
                   const TrainOptions& options) {
  config.validate();
  if (train_set.empty()) throw ConfigError("train: empty training set");
  const Dataset& eval_set = eval && !eval->empty() ? *eval : train_set;
  const bool higher = higher_is_better(model);
  const char* metric_name = higher ? "accuracy" : "mse";
  auto params = model.parameters();

  TrainHistory history;
  const auto initial = evaluate(model, eval_set);
  history.epochs.push_back({0, std::nan(""), initial.metric});
  history.best_epoch = 0;
  history.best_metric = initial.metric;
  if (options.log) options.log->emit(0, "eval", metric_name, initial.metric, options.run_name);
  std::vector<Tensor> best = options.keep_best ? snapshot(model) : std::vector<Tensor>{};

  AdamState state;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(config.seed, epoch));
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;

    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::size_t count = end - start;
      const double scale = 1.0 / static_cast<double>(count);
      for (Parameter* p : params) p->zero_grad();

      const auto seed_of = [&](std::size_t pos) {
        return derive_seed(derive_seed(config.seed, epoch + 0x1000), pos);
      };

      std::vector<ExampleGrad> results(count);
      const std::size_t workers = std::min(config.threads, count);
      if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) results[i] = example_grad(model, params, train_set[order[start + i]], seed_of(start + i));
      } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
          pool.emplace_back([&, w] {
            for (std::size_t i = w; i < count; i += workers)
              results[i] = example_grad(model, params, train_set[order[start + i]], seed_of(start + i));
          });
        }
      }
      // Fixed reduction order: example position within the batch.
      double batch_loss = 0.0;
      for (std::size_t i = 0; i < count; ++i) {
        batch_loss += results[i].loss;
        for (std::size_t k = 0; k < params.size(); ++k) {
          const Tensor& gr = results[i].grads[k];
          if (gr.empty()) continue;
          Tensor& acc = params[k]->grad;
          for (std::size_t j = 0; j < gr.size(); ++j) acc[j] += scale * gr[j];
        }
      }
      ++step;
      if (!std::isfinite(batch_loss)) {
        throw NumericError("training diverged: loss is " + std::to_string(batch_loss) + " at epoch " +
                           std::to_string(epoch) + ", step " + std::to_string(step));
      }
      epoch_loss += batch_loss;
      adam_step(params, state, config);
    }

    epoch_loss /= static_cast<double>(train_set.size());
    const auto ev = evaluate(model, eval_set);
    history.epochs.push_back({epoch, epoch_loss, ev.metric});
    if (options.log) {
      options.log->emit(epoch, "train", "loss", epoch_loss, options.run_name);
      options.log->emit(epoch, "eval", metric_name, ev.metric, options.run_name);
    }
    const bool improved = higher ? ev.metric > history.best_metric : ev.metric < history.best_metric;
    if (improved) {
      history.best_epoch = epoch;
      history.best_metric = ev.metric;
      if (options.keep_best) best = snapshot(model);
    }
  }
  if (options.keep_best) restore(model, best);
  return history;
}

}  // namespace mst
