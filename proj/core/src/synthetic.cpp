#include "mst/synthetic.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "mst/error.hpp"
#include "mst/random.hpp"

namespace mst {

Tensor mirrored_target(const Tensor& inputs, std::size_t k) {
  const std::size_t n = inputs.rows();
  const std::size_t d = inputs.cols();
  if (k == 0 || k > n) throw ConfigError("mirrored_target: K must be in [1, N]");
  Tensor target({d});
  for (std::size_t i = 0; i < k; ++i) {
    const auto a = inputs.row(i);
    const auto b = inputs.row(n - 1 - i);
    for (std::size_t c = 0; c < d; ++c) target[c] += a[c] * b[c];
  }
  return target;
}

MirroredSet gen_dataset(std::size_t n, std::size_t d, std::size_t k, std::size_t count, std::uint64_t seed) {
  if (n == 0 || d == 0) throw ConfigError("gen_dataset: N and d must be >= 1");
  if (k == 0 || k > n) {
    throw ConfigError("gen_dataset: K must be in [1, N], got K=" + std::to_string(k) + " N=" + std::to_string(n));
  }
  MirroredSet set{n, d, k, seed, {}};
  set.samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, i));
    Tensor inputs = Tensor::matrix(n, d);
    for (double& x : inputs.values()) x = rng.uniform();
    Tensor target = mirrored_target(inputs, k);
    set.samples.push_back({std::move(inputs), std::move(target)});
  }
  return set;
}

double trivial_mse(std::size_t k) { return 7.0 * static_cast<double>(k) / 144.0; }

namespace {

constexpr char kDatasetMagic[4] = {'M', 'S', 'T', 'D'};

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw IoError("truncated dataset header");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

}  // namespace

void save_dataset(const std::string& path, const MirroredSet& set) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dataset " + path);
  out.write(kDatasetMagic, 4);
  const char version[4] = {1, 0, 0, 0};
  out.write(version, 4);
  put_u64(out, set.n);
  put_u64(out, set.d);
  put_u64(out, set.k);
  put_u64(out, set.samples.size());
  put_u64(out, set.seed);
  Tensor inputs({set.samples.size(), set.n, set.d});
  Tensor targets({set.samples.size(), set.d});
  for (std::size_t i = 0; i < set.samples.size(); ++i) {
    std::copy(set.samples[i].inputs.values().begin(), set.samples[i].inputs.values().end(),
              inputs.values().begin() + static_cast<std::ptrdiff_t>(i * set.n * set.d));
    std::copy(set.samples[i].target.values().begin(), set.samples[i].target.values().end(),
              targets.values().begin() + static_cast<std::ptrdiff_t>(i * set.d));
  }
  write_tensor(out, inputs);
  write_tensor(out, targets);
  if (!out) throw IoError("failed writing dataset " + path);
}

MirroredSet load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset " + path);
  char magic[4];
  char version[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kDatasetMagic)) throw IoError(path + ": not a dataset file");
  if (!in.read(version, 4) || version[0] != 1) throw IoError(path + ": unsupported dataset version");
  MirroredSet set;
  set.n = get_u64(in);
  set.d = get_u64(in);
  set.k = get_u64(in);
  const std::size_t count = get_u64(in);
  set.seed = get_u64(in);
  const Tensor inputs = read_tensor(in);
  const Tensor targets = read_tensor(in);
  if (inputs.shape() != Shape{count, set.n, set.d} || targets.shape() != Shape{count, set.d}) {
    throw IoError(path + ": tensor shapes disagree with header");
  }
  for (std::size_t i = 0; i < count; ++i) {
    const auto in_begin = inputs.values().begin() + static_cast<std::ptrdiff_t>(i * set.n * set.d);
    const auto t_begin = targets.values().begin() + static_cast<std::ptrdiff_t>(i * set.d);
    set.samples.push_back({Tensor({set.n, set.d}, std::vector<double>(in_begin, in_begin + static_cast<std::ptrdiff_t>(set.n * set.d))),
                           Tensor({set.d}, std::vector<double>(t_begin, t_begin + static_cast<std::ptrdiff_t>(set.d)))});
  }
  return set;
}

Dataset to_examples(const MirroredSet& set) {
  Dataset out;
  out.reserve(set.samples.size());
  for (const auto& s : set.samples) {
    Example ex;
    ex.vectors = s.inputs;
    ex.target = s.target;
    out.push_back(std::move(ex));
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::string> mirrored_grid_models() { return {"hier-s", "deephier-s", "flex", "vanilla"}; }

TrainConfig MirroredGridConfig::default_train() {
  TrainConfig t;
  t.lr = 3e-3;
  t.batch_size = 16;
  t.epochs = 1;
  return t;
}

void MirroredGridConfig::validate() const {
  if (n == 0 || d == 0) throw ConfigError("mirrored.n and mirrored.d must be >= 1");
  if (ks.empty()) throw ConfigError("mirrored.ks must not be empty");
  for (std::size_t k : ks) {
    if (k == 0 || k > n) throw ConfigError("mirrored.ks: K=" + std::to_string(k) + " outside [1, N]");
  }
  if (train_size == 0 || test_size == 0) throw ConfigError("mirrored.train_size and mirrored.test_size must be >= 1");
  if (seeds.empty()) throw ConfigError("mirrored.seeds must not be empty");
  if (models.empty()) throw ConfigError("mirrored.models must not be empty");
  const auto known = mirrored_grid_models();
  for (const auto& m : models) {
    if (std::find(known.begin(), known.end(), m) == known.end()) {
      throw ConfigError("mirrored.models: unknown model '" + m + "' (expected hier-s, deephier-s, flex, vanilla)");
    }
  }
  if (hidden == 0 || head_dim == 0) throw ConfigError("mirrored.hidden and mirrored.head_dim must be >= 1");
  train.validate();
}

namespace {

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::ostringstream os;
  for (std::size_t i = 0; i < xs.size(); ++i) os << (i ? "," : "") << xs[i];
  return os.str();
}

}  // namespace

void MirroredGridConfig::write(KeyValueConfig& out) const {
  out.set("mirrored.n", std::to_string(n));
  out.set("mirrored.d", std::to_string(d));
  out.set("mirrored.ks", join(ks));
  out.set("mirrored.train_size", std::to_string(train_size));
  out.set("mirrored.valid_size", std::to_string(valid_size));
  out.set("mirrored.test_size", std::to_string(test_size));
  out.set("mirrored.seeds", join(seeds));
  out.set("mirrored.models", join(models));
  out.set("mirrored.hidden", std::to_string(hidden));
  out.set("mirrored.head_dim", std::to_string(head_dim));
  train.write(out);
}

void MirroredGridConfig::read(const KeyValueConfig& in) {
  in.require_known("mirrored", {"n", "d", "ks", "train_size", "valid_size", "test_size", "seeds", "models", "hidden",
                                "head_dim"});
  n = in.get_size("mirrored.n", n);
  d = in.get_size("mirrored.d", d);
  if (auto v = in.get("mirrored.ks")) {
    ks.clear();
    for (const auto& s : split_list(*v)) ks.push_back(parse_size(s, "mirrored.ks"));
  }
  train_size = in.get_size("mirrored.train_size", train_size);
  valid_size = in.get_size("mirrored.valid_size", valid_size);
  test_size = in.get_size("mirrored.test_size", test_size);
  if (auto v = in.get("mirrored.seeds")) {
    seeds.clear();
    for (const auto& s : split_list(*v)) seeds.push_back(parse_size(s, "mirrored.seeds"));
  }
  if (auto v = in.get("mirrored.models")) models = split_list(*v);
  hidden = in.get_size("mirrored.hidden", hidden);
  head_dim = in.get_size("mirrored.head_dim", head_dim);
  train.read(in);
}

ModelConfig mirrored_grid_model(const std::string& name, const MirroredGridConfig& config) {
  ModelConfig m;
  m.input = InputKind::Vectors;
  m.input_dim = config.d;
  m.task = TaskKind::Regress;
  m.output_dim = config.d;
  m.hidden = config.hidden;
  m.head_dim = config.head_dim;
  m.heads = 10;
  m.layers = 2;
  m.alpha = 0.0;
  m.use_cls = true;
  m.max_len = config.n + 1;
  if (name == "hier-s") {
    m.scales = {ScaleSpec::fixed(3)};
  } else if (name == "deephier-s") {
    m.layers = 6;
    m.scales = {ScaleSpec::fixed(3)};
  } else if (name == "flex") {
    m.scales = {ScaleSpec::fixed(3), ScaleSpec::ratio(16), ScaleSpec::ratio(8), ScaleSpec::ratio(4),
                ScaleSpec::ratio(2)};
  } else if (name == "vanilla") {
    m.arch = Architecture::Vanilla;
    m.use_positional = true;
    m.ffn = true;
  } else {
    throw ConfigError("unknown mirrored-summation model '" + name + "'");
  }
  return m;
}

const MirroredGridCell* MirroredGridResult::find(const std::string& model, std::size_t k) const {
  for (const auto& c : cells)
    if (c.model == model && c.k == k) return &c;
  return nullptr;
}

double median(std::vector<double> values) {
  std::erase_if(values, [](double v) { return !std::isfinite(v); });
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const std::size_t m = values.size() / 2;
  return values.size() % 2 ? values[m] : 0.5 * (values[m - 1] + values[m]);
}

MirroredGridResult run_mirrored_grid(const MirroredGridConfig& config, MetricsLog* log, std::ostream* progress) {
  config.validate();
  MirroredGridResult result;
  for (std::size_t k : config.ks) {
    for (const auto& name : config.models) result.cells.push_back({name, k, {}, 0.0, ""});
  }
  for (std::size_t k : config.ks) {
    for (std::uint64_t seed : config.seeds) {
      const std::uint64_t data_seed = derive_seed(seed, k);
      const auto train_set = to_examples(gen_dataset(config.n, config.d, k, config.train_size, derive_seed(data_seed, 1)));
      const auto test_set = to_examples(gen_dataset(config.n, config.d, k, config.test_size, derive_seed(data_seed, 2)));
      Dataset valid_set;
      if (config.valid_size > 0) {
        valid_set = to_examples(gen_dataset(config.n, config.d, k, config.valid_size, derive_seed(data_seed, 3)));
      }
      std::vector<double> mean(config.d, 0.0);
      for (const auto& ex : train_set)
        for (std::size_t c = 0; c < config.d; ++c) mean[c] += ex.target[c];
      for (double& m : mean) m /= static_cast<double>(train_set.size());

      for (const auto& name : config.models) {
        MirroredGridCell* cell = nullptr;
        for (auto& c : result.cells)
          if (c.model == name && c.k == k) cell = &c;
        const std::string run = name + ".K" + std::to_string(k) + ".seed" + std::to_string(seed);
        double mse = std::numeric_limits<double>::quiet_NaN();
        try {
          ModelConfig mc = mirrored_grid_model(name, config);
          mc.init_seed = seed;
          Model model(mc);
          model.set_output_bias(mean);
          TrainConfig tc = config.train;
          tc.seed = seed;
          TrainOptions opts;
          opts.log = log;
          opts.run_name = run;
          opts.keep_best = !valid_set.empty();
          train(model, train_set, valid_set.empty() ? nullptr : &valid_set, tc, opts);
          mse = evaluate(model, test_set).metric;
          if (log) log->emit(tc.epochs, "test", "mse", mse, run);
        } catch (const NumericError& e) {
          cell->error += (cell->error.empty() ? "" : "; ") + run + ": " + e.what();
        }
        cell->seed_mse.push_back(mse);
        if (progress) {
          *progress << run << " test_mse=" << mse << " floor=" << trivial_mse(k) << "\n" << std::flush;
        }
      }
    }
  }
  for (auto& c : result.cells) c.median = median(c.seed_mse);
  return result;
}

std::string mirrored_grid_csv(const MirroredGridResult& result) {
  std::ostringstream os;
  os << "K,model,test_mse\n";
  os << std::setprecision(17);
  for (const auto& c : result.cells) os << c.k << "," << c.model << "," << c.median << "\n";
  return os.str();
}

std::string mirrored_grid_table(const MirroredGridResult& result) {
  std::vector<std::size_t> ks;
  std::vector<std::string> models;
  for (const auto& c : result.cells) {
    if (std::find(ks.begin(), ks.end(), c.k) == ks.end()) ks.push_back(c.k);
    if (std::find(models.begin(), models.end(), c.model) == models.end()) models.push_back(c.model);
  }
  std::ostringstream os;
  os << std::left << std::setw(12) << "model";
  for (std::size_t k : ks) os << std::right << std::setw(12) << ("K=" + std::to_string(k));
  os << "\n" << std::left << std::setw(12) << "mean-floor";
  for (std::size_t k : ks) os << std::right << std::setw(12) << std::fixed << std::setprecision(4) << trivial_mse(k);
  os << "\n";
  for (const auto& m : models) {
    os << std::left << std::setw(12) << m;
    for (std::size_t k : ks) {
      const MirroredGridCell* c = result.find(m, k);
      os << std::right << std::setw(12) << std::fixed << std::setprecision(4) << (c ? c->median : std::nan(""));
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace mst
