#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>

#include "mst/error.hpp"
#include "mst/gradcheck.hpp"
#include "mst/model.hpp"
#include "mst/planner.hpp"
#include "mst/probe.hpp"
#include "mst/random.hpp"
#include "mst/synthetic.hpp"
#include "mst/text.hpp"
#include "mst/training.hpp"

namespace fs = std::filesystem;

namespace mst::cli {

namespace {

std::string bool_text(bool b) { return b ? "true" : "false"; }

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::ostringstream os;
  for (std::size_t i = 0; i < xs.size(); ++i) os << (i ? "," : "") << xs[i];
  return os.str();
}

std::vector<std::size_t> parse_sizes(const std::string& csv, const std::string& what) {
  std::vector<std::size_t> out;
  for (const auto& s : split_list(csv)) out.push_back(parse_size(s, what));
  return out;
}

std::string absolute_path(const std::string& p) {
  if (p.empty()) return p;
  return fs::absolute(p).lexically_normal().string();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << text;
  if (!f) throw IoError("failed writing " + path);
}

std::string join_path(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

// --- plan -------------------------------------------------------------------

struct PlanConfig {
  double alpha = 0.0;
  std::size_t layers = 3;
  std::size_t heads = 10;
  std::vector<ScaleSpec> scales = ModelConfig{}.scales;
  std::size_t seq_len = 0;  // 0: show scales unresolved
  bool kv = false;

  void read(const KeyValueConfig& in) {
    in.require_known("plan", {"alpha", "layers", "heads", "scales", "seq_len", "kv"});
    alpha = in.get_double("plan.alpha", alpha);
    layers = in.get_size("plan.layers", layers);
    heads = in.get_size("plan.heads", heads);
    if (auto v = in.get("plan.scales")) scales = parse_scales(*v);
    seq_len = in.get_size("plan.seq_len", seq_len);
    kv = in.get_bool("plan.kv", kv);
    if (layers == 0) throw ConfigError("plan.layers must be >= 1");
    if (heads == 0) throw ConfigError("plan.heads must be >= 1");
  }
  void write(KeyValueConfig& out) const {
    out.set("plan.alpha", format_double(alpha));
    out.set("plan.layers", std::to_string(layers));
    out.set("plan.heads", std::to_string(heads));
    out.set("plan.scales", format_scales(scales));
    out.set("plan.seq_len", std::to_string(seq_len));
    out.set("plan.kv", bool_text(kv));
  }
};

CommandResult run_plan(const KeyValueConfig& config, const std::string& out_dir, std::ostream& out) {
  PlanConfig pc;
  pc.read(config);
  const auto plans = plan_scales(pc.alpha, pc.layers, pc.heads, pc.scales);
  const auto seq = pc.seq_len ? std::optional<std::size_t>(pc.seq_len) : std::nullopt;
  out << describe_plan(plans, seq);
  const std::string kv = plan_key_values(plans, seq);
  if (pc.kv) out << "\n" << kv;
  CommandResult r;
  r.outputs.push_back(join_path(out_dir, "plan.txt"));
  write_text(r.outputs.back(), kv);
  for (const auto& p : plans) {
    for (const auto& a : p.allocations) {
      const std::string prefix = "layer" + std::to_string(p.layer) + "." + a.scale.to_string();
      r.metrics.emplace_back(prefix + ".fraction", a.fraction);
      r.metrics.emplace_back(prefix + ".heads", static_cast<double>(a.heads));
    }
  }
  return r;
}

// --- mirrored ---------------------------------------------------------------

CommandResult run_mirrored(const KeyValueConfig& config, const std::string& out_dir, std::ostream& out,
                           MetricsLog& log) {
  MirroredGridConfig fc;
  fc.read(config);
  const MirroredGridResult result = run_mirrored_grid(fc, &log, &std::cerr);
  CommandResult r;
  const std::string table = mirrored_grid_table(result);
  out << table;
  r.outputs.push_back(join_path(out_dir, "mirrored.csv"));
  write_text(r.outputs.back(), mirrored_grid_csv(result));
  r.outputs.push_back(join_path(out_dir, "table.txt"));
  write_text(r.outputs.back(), table);
  for (const auto& c : result.cells) {
    const std::string prefix = c.model + ".K" + std::to_string(c.k);
    for (std::size_t s = 0; s < c.seed_mse.size(); ++s) {
      if (std::isfinite(c.seed_mse[s])) {
        r.metrics.emplace_back(prefix + ".seed" + std::to_string(fc.seeds[s]) + ".test_mse", c.seed_mse[s]);
      }
    }
    if (std::isfinite(c.median)) r.metrics.emplace_back(prefix + ".median_test_mse", c.median);
    if (!c.error.empty()) {
      out << "failed: " << c.error << "\n";
      r.ok = false;
    }
  }
  return r;
}

// --- classify ---------------------------------------------------------------

struct ClassifyConfig {
  std::string train;
  std::string dev;
  std::string test;
  /// Training-set size of the generated keyword task; 0 reads the TSVs.
  std::size_t keyword_task = 0;
  std::uint64_t keyword_seed = 1;
  bool checkpoint = true;

  void read(const KeyValueConfig& in) {
    in.require_known("classify", {"train", "dev", "test", "keyword_task", "keyword_seed", "checkpoint"});
    train = in.get_string("classify.train", train);
    dev = in.get_string("classify.dev", dev);
    test = in.get_string("classify.test", test);
    keyword_task = in.get_size("classify.keyword_task", keyword_task);
    keyword_seed = in.get_u64("classify.keyword_seed", keyword_seed);
    checkpoint = in.get_bool("classify.checkpoint", checkpoint);
    if (keyword_task == 0 && (train.empty() || dev.empty() || test.empty())) {
      throw ConfigError("classify needs classify.train, classify.dev and classify.test (or classify.keyword_task > 0)");
    }
  }
  void write(KeyValueConfig& out) const {
    out.set("classify.train", absolute_path(train));
    out.set("classify.dev", absolute_path(dev));
    out.set("classify.test", absolute_path(test));
    out.set("classify.keyword_task", std::to_string(keyword_task));
    out.set("classify.keyword_seed", std::to_string(keyword_seed));
    out.set("classify.checkpoint", bool_text(checkpoint));
  }
};

CommandResult run_classify_cmd(const KeyValueConfig& config, const std::string& out_dir, std::ostream& out,
                               MetricsLog& log) {
  ClassifyConfig cc;
  cc.read(config);
  ModelConfig mc;
  mc.read(config);
  TrainConfig tc;
  tc.read(config);
  CommandResult r;

  std::vector<TextExample> train_data, dev_data, test_data;
  if (cc.keyword_task > 0) {
    const std::size_t n = cc.keyword_task;
    train_data = keyword_task(n, derive_seed(cc.keyword_seed, 1));
    dev_data = keyword_task(std::max<std::size_t>(n / 4, 1), derive_seed(cc.keyword_seed, 2));
    test_data = keyword_task(std::max<std::size_t>(n / 2, 1), derive_seed(cc.keyword_seed, 3));
    for (auto [name, data] : {std::pair{"train.tsv", &train_data}, {"dev.tsv", &dev_data}, {"test.tsv", &test_data}}) {
      r.outputs.push_back(join_path(out_dir, name));
      std::ofstream f(r.outputs.back());
      if (!f) throw IoError("cannot write " + r.outputs.back());
      write_tsv(f, *data);
    }
  } else {
    train_data = read_tsv(cc.train);
    dev_data = read_tsv(cc.dev);
    test_data = read_tsv(cc.test);
  }

  const std::string ckpt = cc.checkpoint ? join_path(out_dir, "checkpoint") : "";
  const ClassifyResult result = run_classify(train_data, dev_data, test_data, mc, tc, &log, ckpt);
  if (!ckpt.empty()) r.outputs.push_back(ckpt);

  out << std::fixed << std::setprecision(4) << "train examples  " << train_data.size() << "\n"
      << "best epoch      " << result.history.best_epoch << "\n"
      << "dev accuracy    " << result.dev_accuracy << "\n"
      << "test accuracy   " << result.test_accuracy << "\n";
  out.unsetf(std::ios::floatfield);
  r.metrics.emplace_back("dev_accuracy", result.dev_accuracy);
  r.metrics.emplace_back("test_accuracy", result.test_accuracy);
  r.metrics.emplace_back("best_epoch", static_cast<double>(result.history.best_epoch));
  for (const auto& e : result.history.epochs) {
    if (e.epoch > 0) r.metrics.emplace_back("epoch" + std::to_string(e.epoch) + ".train_loss", e.train_loss);
  }
  return r;
}

// --- probe ------------------------------------------------------------------

struct ProbeConfig {
  std::string checkpoint;   // empty: untrained model from [model]
  std::string dump;         // imported attention maps; replaces the model
  std::string corpus;       // one sequence per line, optional "label<TAB>" prefix
  std::string export_dump;  // write the collected maps here
  std::size_t buckets = 0;
  bool truncate = true;
  std::size_t random_inputs = 20;
  std::size_t seq_len = 32;
  std::uint64_t seed = 1;

  void read(const KeyValueConfig& in) {
    in.require_known("probe", {"checkpoint", "dump", "corpus", "export_dump", "buckets", "truncate", "random_inputs",
                               "seq_len", "seed"});
    checkpoint = in.get_string("probe.checkpoint", checkpoint);
    dump = in.get_string("probe.dump", dump);
    corpus = in.get_string("probe.corpus", corpus);
    export_dump = in.get_string("probe.export_dump", export_dump);
    buckets = in.get_size("probe.buckets", buckets);
    truncate = in.get_bool("probe.truncate", truncate);
    random_inputs = in.get_size("probe.random_inputs", random_inputs);
    seq_len = in.get_size("probe.seq_len", seq_len);
    seed = in.get_u64("probe.seed", seed);
    if (!dump.empty() && !checkpoint.empty()) throw ConfigError("probe.dump and probe.checkpoint are exclusive");
    if (dump.empty() && corpus.empty() && (random_inputs == 0 || seq_len == 0)) {
      throw ConfigError("probe needs probe.corpus or probe.random_inputs and probe.seq_len >= 1");
    }
  }
  void write(KeyValueConfig& out) const {
    out.set("probe.checkpoint", absolute_path(checkpoint));
    out.set("probe.dump", absolute_path(dump));
    out.set("probe.corpus", absolute_path(corpus));
    out.set("probe.export_dump", absolute_path(export_dump));
    out.set("probe.buckets", std::to_string(buckets));
    out.set("probe.truncate", bool_text(truncate));
    out.set("probe.random_inputs", std::to_string(random_inputs));
    out.set("probe.seq_len", std::to_string(seq_len));
    out.set("probe.seed", std::to_string(seed));
  }
};

ModelConfig probe_default_model() {
  ModelConfig m;
  m.vocab_size = 100;
  return m;
}

std::vector<std::vector<std::string>> read_corpus(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open corpus " + path);
  std::vector<std::vector<std::string>> out;
  std::string line;
  while (std::getline(f, line)) {
    const auto tab = line.find('\t');
    std::istringstream words(tab == std::string::npos ? line : line.substr(tab + 1));
    std::vector<std::string> tokens;
    for (std::string w; words >> w;) tokens.push_back(w);
    if (!tokens.empty()) out.push_back(std::move(tokens));
  }
  if (out.empty()) throw ConfigError(path + ": corpus has no sequences");
  return out;
}

std::vector<AttentionMaps> probe_maps(const ProbeConfig& pc, const KeyValueConfig& config) {
  if (!pc.dump.empty()) return load_attention_dump(pc.dump);
  CheckpointExtras extras;
  std::unique_ptr<Model> model;
  if (!pc.checkpoint.empty()) {
    model = load_checkpoint(pc.checkpoint, &extras);
  } else {
    ModelConfig mc = probe_default_model();
    mc.read(config);
    model = std::make_unique<Model>(mc);
  }
  const ModelConfig& mc = model->config();
  Rng rng(pc.seed);
  if (mc.input == InputKind::Vectors) {
    if (!pc.corpus.empty()) throw ConfigError("probe.corpus needs a token model; vector models use random inputs");
    std::vector<Tensor> seqs;
    for (std::size_t i = 0; i < pc.random_inputs; ++i) {
      Tensor t = Tensor::matrix(pc.seq_len, mc.input_dim);
      for (double& v : t.values()) v = rng.uniform();
      seqs.push_back(std::move(t));
    }
    return collect_attention(*model, seqs);
  }
  std::vector<std::vector<std::size_t>> seqs;
  if (!pc.corpus.empty()) {
    if (extras.vocab.empty()) throw ConfigError("probe.corpus needs a checkpoint with a vocabulary");
    const Vocabulary vocab = Vocabulary::from_list(extras.vocab);
    for (const auto& words : read_corpus(pc.corpus)) {
      std::vector<std::size_t> ids;
      for (const auto& w : words) ids.push_back(vocab.id(w));
      seqs.push_back(std::move(ids));
    }
  } else {
    for (std::size_t i = 0; i < pc.random_inputs; ++i) {
      std::vector<std::size_t> ids(pc.seq_len);
      for (auto& id : ids) id = rng.below(mc.vocab_size);
      seqs.push_back(std::move(ids));
    }
  }
  return collect_attention(*model, seqs);
}

CommandResult run_probe(const KeyValueConfig& config, const std::string& out_dir, std::ostream& out) {
  ProbeConfig pc;
  pc.read(config);
  const auto maps = probe_maps(pc, config);
  CommandResult r;
  if (!pc.export_dump.empty()) {
    save_attention_dump(pc.export_dump, maps);
    r.outputs.push_back(pc.export_dump);
  }
  const auto records = edges_of(maps);
  const std::size_t n = longest_sequence(maps);
  const auto rows = group_histograms(records, n, pc.buckets, pc.truncate);
  r.outputs.push_back(join_path(out_dir, "histogram.csv"));
  write_text(r.outputs.back(), histogram_csv(rows));

  std::map<std::pair<std::size_t, std::size_t>, std::size_t> max_distance;
  for (const auto& rec : records) {
    auto& m = max_distance[{rec.layer, rec.head}];
    m = std::max(m, rec.distance);
  }

  out << maps.size() << " sequences, longest " << n << ", " << records.size() << " edges\n";
  out << "layer  head  max_dist  distance % (bucket 0..)\n";
  for (const auto& row : rows) {
    out << std::setw(5) << row.layer << "  " << std::setw(4) << (row.head ? std::to_string(*row.head) : "ALL") << "  ";
    if (row.head) {
      out << std::setw(8) << max_distance[{row.layer, *row.head}];
    } else {
      out << std::setw(8) << "";
    }
    out << " ";
    for (double p : row.percent) out << " " << std::fixed << std::setprecision(1) << p;
    out.unsetf(std::ios::floatfield);
    out << "\n";
    const std::string prefix = "layer" + std::to_string(row.layer) + "." + (row.head ? "head" + std::to_string(*row.head) : "all");
    for (std::size_t b = 0; b < row.percent.size(); ++b) {
      r.metrics.emplace_back(prefix + ".d" + std::to_string(b), row.percent[b]);
    }
    if (row.head) r.metrics.emplace_back(prefix + ".max_distance", static_cast<double>(max_distance[{row.layer, *row.head}]));
  }
  return r;
}

// --- gradcheck --------------------------------------------------------------

struct GradcheckConfig {
  std::string scope = "all";

  void read(const KeyValueConfig& in) {
    in.require_known("gradcheck", {"scope"});
    scope = in.get_string("gradcheck.scope", scope);
    if (scope != "all" && scope != "ops" && scope != "attention" && scope != "layers" && scope != "model") {
      throw ConfigError("gradcheck.scope: expected all, ops, attention, layers or model, got '" + scope + "'");
    }
  }
  void write(KeyValueConfig& out) const { out.set("gradcheck.scope", scope); }
};

CommandResult run_gradcheck(const KeyValueConfig& config, const std::string& out_dir, std::ostream& out) {
  GradcheckConfig gc;
  gc.read(config);
  CommandResult r;
  std::ostringstream csv;
  csv << "name,scope,max_rel_error,tolerance,passed\n" << std::setprecision(17);
  std::size_t run = 0, failed = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& c : gradcheck_suite()) {
    if (gc.scope != "all" && c.scope != gc.scope) continue;
    const GradCheckResult res = c.run();
    const bool pass = res.max_rel_error <= c.tolerance;
    ++run;
    if (!pass) ++failed;
    out << std::left << std::setw(32) << c.name << std::setw(11) << c.scope << std::right << std::scientific
        << std::setprecision(2) << std::setw(10) << res.max_rel_error << "  tol " << c.tolerance << "  "
        << (pass ? "ok" : "FAIL") << "\n";
    out.unsetf(std::ios::floatfield);
    if (!pass) {
      out << "    worst element: leaf " << res.worst_leaf << " index " << res.worst_index << " analytic "
          << res.analytic << " numeric " << res.numeric << "\n";
    }
    csv << c.name << "," << c.scope << "," << res.max_rel_error << "," << c.tolerance << "," << (pass ? 1 : 0) << "\n";
    r.metrics.emplace_back(c.name + ".max_rel_error", res.max_rel_error);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out << run - failed << "/" << run << " checks passed in " << std::fixed << std::setprecision(2) << secs << " s\n";
  out.unsetf(std::ios::floatfield);
  r.outputs.push_back(join_path(out_dir, "gradcheck.csv"));
  write_text(r.outputs.back(), csv.str());
  r.ok = failed == 0 && run > 0;
  return r;
}

// --- bench ------------------------------------------------------------------

struct BenchConfig {
  std::vector<std::size_t> lengths = {32, 128, 512};
  std::size_t repeats = 5;
  std::size_t hidden = 40;
  std::size_t heads = 10;
  std::size_t head_dim = 4;
  std::size_t layers = 2;
  std::uint64_t seed = 1;

  void read(const KeyValueConfig& in) {
    in.require_known("bench", {"lengths", "repeats", "hidden", "heads", "head_dim", "layers", "seed"});
    if (auto v = in.get("bench.lengths")) lengths = parse_sizes(*v, "bench.lengths");
    repeats = in.get_size("bench.repeats", repeats);
    hidden = in.get_size("bench.hidden", hidden);
    heads = in.get_size("bench.heads", heads);
    head_dim = in.get_size("bench.head_dim", head_dim);
    layers = in.get_size("bench.layers", layers);
    seed = in.get_u64("bench.seed", seed);
    if (lengths.empty() || std::find(lengths.begin(), lengths.end(), 0) != lengths.end()) {
      throw ConfigError("bench.lengths must be a non-empty list of positive lengths");
    }
    if (repeats == 0) throw ConfigError("bench.repeats must be >= 1");
  }
  void write(KeyValueConfig& out) const {
    out.set("bench.lengths", join(lengths));
    out.set("bench.repeats", std::to_string(repeats));
    out.set("bench.hidden", std::to_string(hidden));
    out.set("bench.heads", std::to_string(heads));
    out.set("bench.head_dim", std::to_string(head_dim));
    out.set("bench.layers", std::to_string(layers));
    out.set("bench.seed", std::to_string(seed));
  }
};

CommandResult run_bench(const KeyValueConfig& config, const std::string& out_dir, std::ostream& out) {
  BenchConfig bc;
  bc.read(config);
  CommandResult r;
  ModelConfig base;
  base.hidden = bc.hidden;
  base.heads = bc.heads;
  base.head_dim = bc.head_dim;
  base.layers = bc.layers;
  base.vocab_size = 100;
  base.max_len = *std::max_element(bc.lengths.begin(), bc.lengths.end()) + 1;
  base.init_seed = bc.seed;
  ModelConfig vanilla_cfg = base;
  vanilla_cfg.arch = Architecture::Vanilla;
  const Model ms(base);
  const Model vanilla(vanilla_cfg);

  std::ostringstream csv;
  csv << "length,model,median_ms\n";
  out << std::setw(8) << "N" << std::setw(16) << "ms-trans (ms)" << std::setw(16) << "vanilla (ms)" << "\n";
  Rng rng(bc.seed);
  for (std::size_t n : bc.lengths) {
    std::vector<std::size_t> tokens(n);
    for (auto& t : tokens) t = rng.below(base.vocab_size);
    out << std::setw(8) << n;
    for (const auto& [name, model] : {std::pair{"ms", &ms}, {"vanilla", &vanilla}}) {
      std::vector<double> times;
      double checksum = 0.0;
      for (std::size_t i = 0; i < bc.repeats; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        Graph g(false);
        const Var y = model->forward(g, tokens);
        times.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
        checksum = 0.0;
        for (double v : y.value().values()) checksum += v;
      }
      std::sort(times.begin(), times.end());
      const double med = times[times.size() / 2];
      out << std::setw(16) << std::fixed << std::setprecision(3) << med;
      out.unsetf(std::ios::floatfield);
      csv << n << "," << name << "," << std::setprecision(6) << med << "\n";
      // Timings vary run to run; the output checksum is the reproducible part.
      r.metrics.emplace_back(std::string(name) + ".n" + std::to_string(n) + ".output_sum", checksum);
    }
    out << "\n";
  }
  r.outputs.push_back(join_path(out_dir, "bench.csv"));
  write_text(r.outputs.back(), csv.str());
  return r;
}

std::vector<CommandSpec> build_specs() {
  std::vector<CommandSpec> specs;
  {
    CommandSpec s{"plan", "Per-layer head allocation over candidate scales", "plan", {"plan"}, {}};
    PlanConfig{}.write(s.defaults);
    specs.push_back(std::move(s));
  }
  {
    CommandSpec s{"mirrored", "Mirrored-summation comparison across K", "mirrored", {"mirrored", "train"}, {}};
    MirroredGridConfig{}.write(s.defaults);
    specs.push_back(std::move(s));
  }
  {
    CommandSpec s{"classify", "Train and evaluate a text classifier", "classify", {"classify", "model", "train"}, {}};
    ClassifyConfig{}.write(s.defaults);
    ModelConfig{}.write(s.defaults);
    TrainConfig{}.write(s.defaults);
    specs.push_back(std::move(s));
  }
  {
    CommandSpec s{"probe", "Attention-distance histograms", "probe", {"probe", "model"}, {}};
    ProbeConfig{}.write(s.defaults);
    probe_default_model().write(s.defaults);
    specs.push_back(std::move(s));
  }
  {
    CommandSpec s{"gradcheck", "Compare analytic gradients with finite differences", "gradcheck", {"gradcheck"}, {}};
    GradcheckConfig{}.write(s.defaults);
    specs.push_back(std::move(s));
  }
  {
    CommandSpec s{"bench", "Forward-pass timing, multi-scale vs vanilla", "bench", {"bench"}, {}};
    BenchConfig{}.write(s.defaults);
    specs.push_back(std::move(s));
  }
  return specs;
}

}  // namespace

const std::vector<CommandSpec>& command_specs() {
  static const std::vector<CommandSpec> specs = build_specs();
  return specs;
}

const CommandSpec& command_spec(const std::string& name) {
  for (const auto& s : command_specs())
    if (s.name == name) return s;
  throw ConfigError("unknown command '" + name + "'");
}

KeyValueConfig resolve_config(const std::string& name, const KeyValueConfig& merged) {
  const CommandSpec& spec = command_spec(name);
  for (const auto& key : merged.keys()) {
    const std::string section = key.substr(0, key.find('.'));
    if (key.find('.') == std::string::npos ||
        std::find(spec.sections.begin(), spec.sections.end(), section) == spec.sections.end()) {
      throw ConfigError("'" + key + "' is not a setting of " + name + " (sections: " + join(spec.sections) + ")");
    }
  }
  KeyValueConfig out;
  if (name == "plan") {
    PlanConfig c;
    c.read(merged);
    c.write(out);
  } else if (name == "mirrored") {
    MirroredGridConfig c;
    c.read(merged);
    c.validate();
    c.write(out);
  } else if (name == "classify") {
    ClassifyConfig c;
    c.read(merged);
    c.write(out);
    ModelConfig m;
    m.read(merged);
    m.write(out);
    TrainConfig t;
    t.read(merged);
    t.validate();
    t.write(out);
  } else if (name == "probe") {
    ProbeConfig c;
    c.read(merged);
    c.write(out);
    ModelConfig m = probe_default_model();
    m.read(merged);
    m.write(out);
  } else if (name == "gradcheck") {
    GradcheckConfig c;
    c.read(merged);
    c.write(out);
  } else if (name == "bench") {
    BenchConfig c;
    c.read(merged);
    c.write(out);
  }
  return out;
}

CommandResult run_command(const std::string& name, const KeyValueConfig& config, const std::string& out_dir,
                          std::ostream& out) {
  const bool training = name == "mirrored" || name == "classify";
  const std::string metrics_path = join_path(out_dir, "metrics.jsonl");
  MetricsLog log(training ? &out : nullptr, metrics_path);
  CommandResult r;
  if (name == "plan") r = run_plan(config, out_dir, out);
  else if (name == "mirrored") r = run_mirrored(config, out_dir, out, log);
  else if (name == "classify") r = run_classify_cmd(config, out_dir, out, log);
  else if (name == "probe") r = run_probe(config, out_dir, out);
  else if (name == "gradcheck") r = run_gradcheck(config, out_dir, out);
  else if (name == "bench") r = run_bench(config, out_dir, out);
  else throw ConfigError("unknown command '" + name + "'");
  if (!training) {
    for (const auto& [metric, value] : r.metrics) log.emit(0, "result", metric, value, name);
  }
  r.outputs.insert(r.outputs.begin(), metrics_path);
  return r;
}

}  // namespace mst::cli
