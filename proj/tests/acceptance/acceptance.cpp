// Acceptance run: one PASS/FAIL line per criterion.
//
//   mst_acceptance [--mst PATH] [--out DIR] [--only 1,2,...] [--expect-fail 5,...]
//
// Exit status is 0 when every criterion passes, or fails only where listed in
// --expect-fail. Expected failures still print FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mst/attention.hpp"
#include "mst/config.hpp"
#include "mst/graph.hpp"
#include "mst/manifest.hpp"
#include "mst/model.hpp"
#include "mst/planner.hpp"
#include "mst/probe.hpp"
#include "mst/synthetic.hpp"
#include "mst/text.hpp"

#ifndef MST_CLI_PATH
#define MST_CLI_PATH "mst"
#endif

namespace fs = std::filesystem;
using namespace mst;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;
};

struct Settings {
  std::string mst = MST_CLI_PATH;
  fs::path out = "acceptance_out";
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

HeadParams random_head(std::size_t d, std::size_t dh, Rng& rng) {
  return {Parameter("wq", random_tensor({d, dh}, rng)), Parameter("wk", random_tensor({d, dh}, rng)),
          Parameter("wv", random_tensor({d, dh}, rng))};
}

int run_cli(const Settings& s, const std::string& args, const fs::path& log) {
  const std::string cmd = "\"" + s.mst + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  if (status == -1) return -1;
#ifdef WEXITSTATUS
  return WEXITSTATUS(status);
#else
  return status;
#endif
}

// 1 -------------------------------------------------------------------------
Verdict gradients(const Settings& s) {
  const fs::path dir = s.out / "gradcheck";
  const auto t0 = std::chrono::steady_clock::now();
  const int code = run_cli(s, "gradcheck --scope all --out \"" + dir.string() + "\"", s.out / "gradcheck.log");
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (code != 0) return {false, "mst gradcheck exited with " + std::to_string(code)};
  const auto m = RunManifest::load((dir / "manifest.json").string());
  double worst = 0.0;
  for (const auto& [name, v] : m.metrics) worst = std::max(worst, v);
  const bool ok = !m.metrics.empty() && worst <= 1e-4 && secs < 120.0;
  return {ok, std::to_string(m.metrics.size()) + " checks, worst rel err " + fmt(worst) + ", " + fmt(secs) + " s"};
}

// 2 -------------------------------------------------------------------------
Verdict oracle_equivalence(const Settings&) {
  Rng rng(2024);
  double worst_head = 0.0, worst_model = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.below(16);
    const std::size_t d = 1 + rng.below(32);
    const std::size_t dh = 1 + rng.below(8);
    const std::vector<HeadParams> heads{random_head(d, dh, rng)};
    const Parameter wo("wo", Tensor::identity(dh));
    Graph g;
    const Var h = g.input(random_tensor({n, d}, rng));
    const Tensor a = sasa_head(h, heads[0], 2 * n - 1 + 2 * rng.below(3)).value();
    worst_head = std::max(worst_head, max_abs_diff(a, msa_standard(h, heads, wo).value()));
  }
  for (int trial = 0; trial < 20; ++trial) {
    ModelConfig ms;
    ms.vocab_size = 50;
    ms.hidden = 2 + rng.below(31);
    ms.head_dim = 1 + rng.below(6);
    ms.heads = 1 + rng.below(4);
    ms.layers = 1 + rng.below(3);
    ms.mlp_hidden = 8;
    ms.scales = {ScaleSpec::fixed(33)};  // >= 2(N+1)-1 with the CLS row
    ms.init_seed = 100 + trial;
    ModelConfig van = ms;
    van.arch = Architecture::Vanilla;
    van.ffn = false;
    van.use_positional = false;
    van.attention_relu = true;
    Model a(ms);
    Model b(van);
    for (Parameter* p : a.parameters())
      for (double& v : p->value.values()) v = rng.uniform(-0.5, 0.5);
    copy_parameters(a, b);
    std::vector<std::size_t> seq(1 + rng.below(16));
    for (auto& t : seq) t = rng.below(50);
    Graph g;
    const Tensor ya = a.encode(g, seq).top.value();
    worst_model = std::max(worst_model, max_abs_diff(ya, b.encode(g, seq).top.value()));
  }
  return {worst_head <= 1e-10 && worst_model <= 1e-10,
          "SASA vs standard head " + fmt(worst_head) + ", MS stack vs vanilla stack " + fmt(worst_model)};
}

// 3 -------------------------------------------------------------------------
Verdict locality(const Settings&) {
  Rng rng(3);
  std::size_t violations = 0, perturbed = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.below(24);
    const std::size_t d = 1 + rng.below(8);
    const HeadParams p = random_head(d, 1 + rng.below(4), rng);
    const std::size_t w = 2 * rng.below(n) + 1;
    const std::size_t r = (w - 1) / 2;
    const std::size_t j = rng.below(n);
    Tensor h = random_tensor({n, d}, rng);
    Graph g;
    const Tensor before = sasa_head(g.input(h), p, w).value();
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (i + r >= j && i <= j + r) continue;
      for (std::size_t c = 0; c < d; ++c) h.at(i, c) += rng.uniform(-10.0, 10.0);
      any = true;
    }
    if (!any) continue;
    ++perturbed;
    const Tensor after = sasa_head(g.input(h), p, w).value();
    for (std::size_t c = 0; c < before.cols(); ++c)
      if (before.at(j, c) != after.at(j, c)) {
        ++violations;
        break;
      }
  }
  return {violations == 0, std::to_string(perturbed) + " of 1000 trials had tokens outside the window, " +
                               std::to_string(violations) + " changed the output"};
}

// 4 -------------------------------------------------------------------------
Verdict planner(const Settings&) {
  const std::vector<ScaleSpec> five = {ScaleSpec::fixed(1), ScaleSpec::fixed(3), ScaleSpec::ratio(16),
                                       ScaleSpec::ratio(8), ScaleSpec::ratio(4)};
  std::vector<std::string> problems;
  for (double alpha : {-1.0, -0.5, 0.0, 0.5, 1.0}) {
    for (std::size_t layers : {1u, 3u, 6u}) {
      const auto plans = plan_scales(alpha, layers, 10, five);
      for (std::size_t l = 0; l < plans.size(); ++l) {
        const auto& al = plans[l].allocations;
        std::size_t total = 0;
        for (const auto& a : al) total += a.heads;
        if (total != 10) problems.push_back("sum");
        for (std::size_t k = 0; k + 1 < al.size(); ++k) {
          const double a = al[k].fraction, b = al[k + 1].fraction;
          if (l + 1 == plans.size() || alpha == 0.0) {
            if (std::abs(a - b) > 1e-12) problems.push_back("uniform");
          } else if ((alpha > 0 && !(a > b && al[k].heads >= al[k + 1].heads)) ||
                     (alpha < 0 && !(a < b && al[k].heads <= al[k + 1].heads))) {
            problems.push_back("monotone");
          }
        }
      }
    }
  }
  const auto plans = plan_scales(0.5, 3, 10, five);
  const double expect[] = {4.287, 2.600, 1.577, 0.957, 0.580};
  // Agreement within 1e-3: the reference 0.957 is 0.95646 rounded up.
  std::string got;
  for (std::size_t k = 0; k < 5; ++k) {
    const double f = plans[0].allocations[k].fraction;
    if (std::abs(f - expect[k]) >= 1e-3) problems.push_back("fraction");
    std::ostringstream os;
    os.precision(6);
    os << f;
    got += (k ? " " : "") + os.str();
  }
  return {problems.empty(), "layer 1 fractions at alpha 0.5: " + got +
                                (problems.empty() ? "" : "; " + std::to_string(problems.size()) + " violations")};
}

// 5 -------------------------------------------------------------------------
Verdict mirrored(const Settings& s) {
  const MirroredGridConfig cfg;  // N=40, d=10, K in {10,20,30,40}, 20k train, 3 seeds
  const auto wall0 = std::chrono::steady_clock::now();
  const std::clock_t cpu0 = std::clock();
  const auto result = run_mirrored_grid(cfg, nullptr, &std::cerr);
  const double cpu_min = static_cast<double>(std::clock() - cpu0) / CLOCKS_PER_SEC / 60.0;
  const double wall_min = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count() / 60.0;
  fs::create_directories(s.out);
  std::ofstream(s.out / "mirrored.csv") << mirrored_grid_csv(result);
  std::ofstream(s.out / "mirrored.txt") << mirrored_grid_table(result);
  std::cout << mirrored_grid_table(result);

  auto med = [&](const std::string& model, std::size_t k) {
    const auto* c = result.find(model, k);
    return c ? c->median : std::nan("");
  };
  const double floor40 = trivial_mse(40);
  std::string a_detail;
  bool a = true;
  for (const auto& m : cfg.models) {
    const double v = med(m, 40);
    if (!(v < floor40)) {
      a = false;
      a_detail += " " + m + "=" + fmt(v);
    }
  }
  const double h10 = med("hier-s", 10), h40 = med("hier-s", 40), f10 = med("flex", 10);
  const bool b = h10 >= 1.5 * h40;
  const bool c = f10 <= h10;
  const bool time_ok = cpu_min <= 30.0;
  std::cout << "  (a) all models below 7K/144 = " << fmt(floor40) << " at K=40: " << (a ? "PASS" : "FAIL")
            << (a ? "" : " (above:" + a_detail + ")") << "\n"
            << "      (information only: at K=N the mirrored pairs repeat, so predicting the mean scores "
            << fmt(2.0 * floor40) << ")\n"
            << "  (b) hier-s K=10 " << fmt(h10) << " >= 1.5 x K=40 " << fmt(h40) << ": " << (b ? "PASS" : "FAIL")
            << "\n"
            << "  (c) flex K=10 " << fmt(f10) << " <= hier-s K=10 " << fmt(h10) << ": " << (c ? "PASS" : "FAIL")
            << "\n"
            << "  runtime " << fmt(cpu_min) << " CPU min (" << fmt(wall_min) << " wall) <= 30: "
            << (time_ok ? "PASS" : "FAIL") << "\n";
  return {a && b && c && time_ok, std::string("(a) ") + (a ? "pass" : "fail") + ", (b) " + (b ? "pass" : "fail") +
                                      ", (c) " + (c ? "pass" : "fail") + ", " + fmt(cpu_min) + " CPU min"};
}

// 6 -------------------------------------------------------------------------
Verdict keyword(const Settings&) {
  const std::size_t n = 2000;
  const auto train = keyword_task(n, derive_seed(1, 1));
  const auto dev = keyword_task(n / 4, derive_seed(1, 2));
  const auto test = keyword_task(n / 2, derive_seed(1, 3));
  const ModelConfig model;  // 2 layers, 10 heads, mixed scales
  TrainConfig train_cfg;
  train_cfg.epochs = 10;
  const auto r = run_classify(train, dev, test, model, train_cfg);
  return {r.test_accuracy >= 0.95 && r.history.best_epoch <= 10,
          "test accuracy " + fmt(100.0 * r.test_accuracy) + "% (selected epoch " +
              std::to_string(r.history.best_epoch) + " of " + std::to_string(train_cfg.epochs) + ", " +
              std::to_string(model.layers) + " layers x " + std::to_string(model.heads) + " heads)"};
}

// 7 -------------------------------------------------------------------------
Verdict probe(const Settings&) {
  Rng rng(7);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(20);
    Tensor map = random_tensor({n, n}, rng, 0.0, 1.0);
    // Some maps get exact ties to exercise the tie rule.
    if (trial % 5 == 0)
      for (std::size_t j = 0; j < n; ++j) map.at(j, rng.below(n)) = map.at(j, 0) = 2.0;
    const auto edges = extract_edges(map);
    for (std::size_t j = 0; j < n; ++j) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < n; ++i)
        if (map.at(j, i) > map.at(j, best)) best = i;
      const std::size_t dist = best > j ? best - j : j - best;
      if (edges[j].key != best || edges[j].distance != dist) ++mismatches;
    }
  }

  ModelConfig c;
  c.vocab_size = 40;
  c.hidden = 12;
  c.head_dim = 2;
  c.heads = 6;
  c.layers = 3;
  c.alpha = 0.5;
  c.scales = {ScaleSpec::fixed(1), ScaleSpec::fixed(3), ScaleSpec::ratio(4), ScaleSpec::ratio(2)};
  const Model model(c);
  std::vector<std::vector<std::size_t>> corpus(60);
  for (auto& seq : corpus) {
    seq.resize(2 + rng.below(40));
    for (auto& t : seq) t = rng.below(40);
  }
  const auto maps = collect_attention(model, corpus);
  const auto plans = c.plans();
  std::size_t width_violations = 0, records = 0;
  for (const auto& seq : maps) {
    const std::size_t rows = seq.front().front().rows();
    for (std::size_t l = 0; l < seq.size(); ++l) {
      const auto scales = plans[l].head_scales();
      for (std::size_t h = 0; h < seq[l].size(); ++h) {
        const std::size_t w = resolve_scale(scales[h], rows);
        for (const auto& e : extract_edges(seq[l][h])) {
          ++records;
          if (e.distance > (w - 1) / 2) ++width_violations;
        }
      }
    }
  }
  double worst_sum = 0.0;
  const auto recs = edges_of(maps);
  const std::size_t longest = longest_sequence(maps);
  for (bool trunc : {false, true})
    for (const auto& row : group_histograms(recs, longest, 0, trunc)) {
      double sum = 0.0;
      for (double p : row.percent) sum += p;
      worst_sum = std::max(worst_sum, std::abs(sum - 100.0));
    }
  return {mismatches == 0 && width_violations == 0 && worst_sum <= 1e-9,
          "argmax mismatches " + std::to_string(mismatches) + " on 1000 maps, " + std::to_string(width_violations) +
              " of " + std::to_string(records) + " edges beyond the head window, worst |sum-100| " +
              fmt(worst_sum)};
}

// 8 -------------------------------------------------------------------------
Verdict determinism(const Settings& s) {
  const std::vector<std::pair<std::string, std::string>> runs = {
      {"plan", "--alpha 0.5 --layers 3 --heads 10 --seq-len 64"},
      {"mirrored", "--n 12 --d 3 --ks 3,6,12 --train-size 200 --valid-size 40 --test-size 100 --seeds 1,2 "
                   "--models hier-s,flex,vanilla --threads 3"},
      {"classify", "--keyword-task 200 --epochs 2 --batch-size 16"},
      {"probe", "--random-inputs 8 --seq-len 24 --seed 5"},
      {"gradcheck", "--scope all"},
      {"bench", "--lengths 16,64 --repeats 1"},
  };
  std::vector<std::string> failed;
  for (const auto& [cmd, args] : runs) {
    const fs::path dir = s.out / "determinism" / cmd;
    fs::remove_all(dir);
    if (run_cli(s, cmd + " " + args + " --out \"" + dir.string() + "\"", s.out / ("determinism_" + cmd + ".log")) != 0) {
      failed.push_back(cmd + " (run)");
      continue;
    }
    if (RunManifest::load((dir / "manifest.json").string()).metrics.empty()) failed.push_back(cmd + " (no metrics)");
    if (run_cli(s, "replay \"" + (dir / "manifest.json").string() + "\"",
                s.out / ("determinism_" + cmd + "_replay.log")) != 0)
      failed.push_back(cmd + " (replay)");
  }
  std::string detail = std::to_string(runs.size() - failed.size()) + " of " + std::to_string(runs.size()) +
                       " subcommands replayed bit for bit";
  for (const auto& f : failed) detail += "; " + f;
  return {failed.empty(), detail};
}

std::set<int> parse_set(const std::string& csv) {
  std::set<int> out;
  for (const auto& v : split_list(csv)) out.insert(std::stoi(v));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  Settings settings;
  std::set<int> only, expect_fail;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    auto next = [&]() -> std::string {
      if (i + 1 >= argc) {
        std::cerr << a << " needs a value\n";
        std::exit(2);
      }
      return argv[++i];
    };
    if (a == "--mst") settings.mst = next();
    else if (a == "--out") settings.out = next();
    else if (a == "--only") only = parse_set(next());
    else if (a == "--expect-fail") expect_fail = parse_set(next());
    else {
      std::cerr << "unknown argument " << a << "\n";
      return 2;
    }
  }
  settings.out = fs::absolute(settings.out);
  fs::create_directories(settings.out);

  const std::vector<std::pair<std::string, std::function<Verdict(const Settings&)>>> criteria = {
      {"gradient correctness", gradients},  {"oracle equivalence", oracle_equivalence},
      {"window locality", locality},        {"scale planner", planner},
      {"mirrored summation", mirrored},     {"keyword classification", keyword},
      {"attention probe", probe},           {"determinism", determinism},
  };
  int unexpected = 0;
  std::size_t passed = 0, ran = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(id)) continue;
    ++ran;
    Verdict v;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      v = criteria[i].second(settings);
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    passed += v.pass;
    const bool known = expect_fail.count(id) > 0;
    if (!v.pass && !known) ++unexpected;
    std::cout << "criterion " << id << " " << (v.pass ? "PASS" : "FAIL") << (!v.pass && known ? " (expected)" : "")
              << "  " << criteria[i].first << ": " << v.detail << " [" << fmt(secs) << " s]" << std::endl;
  }
  std::cout << passed << " of " << ran << " criteria passed" << std::endl;
  return unexpected ? 1 : 0;
}
