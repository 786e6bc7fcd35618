#include "mst/text.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "mst/error.hpp"
#include "mst/random.hpp"

namespace mst {

std::vector<TextExample> parse_tsv(std::istream& in, const std::string& origin) {
  std::vector<TextExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string where = origin + ":" + std::to_string(lineno);
    if (line.empty()) throw ConfigError(where + ": empty line");
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ConfigError(where + ": expected 'label<TAB>text'");
    TextExample ex;
    ex.label = line.substr(0, tab);
    if (ex.label.empty()) throw ConfigError(where + ": empty label");
    std::istringstream words(line.substr(tab + 1));
    for (std::string w; words >> w;) ex.tokens.push_back(w);
    if (ex.tokens.empty()) throw ConfigError(where + ": empty text");
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<TextExample> read_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return parse_tsv(in, path);
}

void write_tsv(std::ostream& out, const std::vector<TextExample>& data) {
  for (const auto& ex : data) {
    out << ex.label << '\t';
    for (std::size_t i = 0; i < ex.tokens.size(); ++i) out << (i ? " " : "") << ex.tokens[i];
    out << '\n';
  }
}

// ---------------------------------------------------------------------------

Vocabulary::Vocabulary() : tokens_{kUnknown}, ids_{{kUnknown, 0}} {}

Vocabulary Vocabulary::build(const std::vector<TextExample>& data) {
  std::set<std::string> seen;
  for (const auto& ex : data) seen.insert(ex.tokens.begin(), ex.tokens.end());
  seen.erase(kUnknown);
  Vocabulary v;
  for (const auto& t : seen) {
    v.ids_.emplace(t, v.tokens_.size());
    v.tokens_.push_back(t);
  }
  return v;
}

Vocabulary Vocabulary::from_list(const std::vector<std::string>& tokens) {
  if (tokens.empty() || tokens.front() != kUnknown) {
    throw ConfigError(std::string("vocabulary must start with ") + kUnknown);
  }
  Vocabulary v;
  for (std::size_t i = 1; i < tokens.size(); ++i) {
    if (!v.ids_.emplace(tokens[i], v.tokens_.size()).second) throw ConfigError("duplicate vocabulary entry '" + tokens[i] + "'");
    v.tokens_.push_back(tokens[i]);
  }
  return v;
}

std::size_t Vocabulary::id(const std::string& token) const {
  const auto it = ids_.find(token);
  return it == ids_.end() ? 0 : it->second;
}

LabelSet LabelSet::build(const std::vector<TextExample>& data) {
  std::set<std::string> seen;
  for (const auto& ex : data) seen.insert(ex.label);
  return from_list({seen.begin(), seen.end()});
}

LabelSet LabelSet::from_list(const std::vector<std::string>& labels) {
  LabelSet s;
  for (const auto& l : labels) {
    if (!s.index_.emplace(l, s.names_.size()).second) throw ConfigError("duplicate label '" + l + "'");
    s.names_.push_back(l);
  }
  return s;
}

std::size_t LabelSet::index(const std::string& label) const {
  const auto it = index_.find(label);
  if (it == index_.end()) throw ConfigError("label set mismatch: '" + label + "' does not occur in the training split");
  return it->second;
}

Dataset encode_text(const std::vector<TextExample>& data, const Vocabulary& vocab, const LabelSet& labels) {
  Dataset out;
  out.reserve(data.size());
  for (const auto& ex : data) {
    Example e;
    e.label = labels.index(ex.label);
    for (const auto& t : ex.tokens) e.tokens.push_back(vocab.id(t));
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<TextExample> keyword_task(std::size_t count, std::uint64_t seed, std::size_t min_len, std::size_t max_len,
                                      std::size_t distractors) {
  if (min_len == 0 || max_len < min_len || distractors == 0) throw ConfigError("keyword_task: bad lengths");
  std::vector<TextExample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, i));
    const std::size_t len = min_len + rng.below(max_len - min_len + 1);
    const bool positive = rng.uniform() < 0.5;
    TextExample ex;
    ex.label = positive ? "pos" : "neg";
    for (std::size_t t = 0; t < len; ++t) ex.tokens.push_back("w" + std::to_string(rng.below(distractors)));
    if (positive) ex.tokens[rng.below(len)] = "kw";
    out.push_back(std::move(ex));
  }
  return out;
}

ClassifyResult run_classify(const std::vector<TextExample>& train_data, const std::vector<TextExample>& dev_data,
                            const std::vector<TextExample>& test_data, ModelConfig base, const TrainConfig& train_config,
                            MetricsLog* log, const std::string& checkpoint_dir) {
  if (train_data.empty()) throw ConfigError("classify: empty training split");
  const Vocabulary vocab = Vocabulary::build(train_data);
  const LabelSet labels = LabelSet::build(train_data);
  const Dataset train_set = encode_text(train_data, vocab, labels);
  const Dataset dev_set = encode_text(dev_data, vocab, labels);
  const Dataset test_set = encode_text(test_data, vocab, labels);

  base.input = InputKind::Tokens;
  base.task = TaskKind::Classify;
  base.vocab_size = vocab.size();
  base.classes = labels.size();
  std::size_t longest = 0;
  for (const auto* split : {&train_data, &dev_data, &test_data})
    for (const auto& ex : *split) longest = std::max(longest, ex.tokens.size());
  if (base.use_positional) base.max_len = std::max(base.max_len, longest + (base.use_cls ? 1 : 0));

  Model model(base);
  TrainOptions opts;
  opts.log = log;
  opts.run_name = "classify";
  ClassifyResult result;
  result.history = train(model, train_set, dev_set.empty() ? nullptr : &dev_set, train_config, opts);
  result.dev_accuracy = dev_set.empty() ? result.history.best_metric : evaluate(model, dev_set).metric;
  result.test_accuracy = test_set.empty() ? result.dev_accuracy : evaluate(model, test_set).metric;
  if (log) {
    log->emit(result.history.best_epoch, "dev", "accuracy", result.dev_accuracy, "classify");
    log->emit(result.history.best_epoch, "test", "accuracy", result.test_accuracy, "classify");
  }
  if (!checkpoint_dir.empty()) save_checkpoint(checkpoint_dir, model, {vocab.tokens(), labels.names()});
  return result;
}

}  // namespace mst
