#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "mst/model.hpp"
#include "mst/training.hpp"

namespace mst {

struct TextExample {
  std::string label;
  std::vector<std::string> tokens;
};

/// `label<TAB>space separated tokens`, one example per line. Empty lines,
/// missing tabs and empty texts are ConfigErrors naming origin and line.
std::vector<TextExample> parse_tsv(std::istream& in, const std::string& origin);
std::vector<TextExample> read_tsv(const std::string& path);
void write_tsv(std::ostream& out, const std::vector<TextExample>& data);

/// Token ids; id 0 is the reserved unknown token.
class Vocabulary {
 public:
  static constexpr const char* kUnknown = "<unk>";

  Vocabulary();
  /// Every distinct token of `data`, sorted.
  static Vocabulary build(const std::vector<TextExample>& data);
  /// From a saved list whose first entry is the unknown token.
  static Vocabulary from_list(const std::vector<std::string>& tokens);

  std::size_t id(const std::string& token) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, std::size_t> ids_;
};

class LabelSet {
 public:
  LabelSet() = default;
  static LabelSet build(const std::vector<TextExample>& data);
  static LabelSet from_list(const std::vector<std::string>& labels);

  /// Throws ConfigError for a label that was not in the training split.
  std::size_t index(const std::string& label) const;
  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::map<std::string, std::size_t> index_;
};

Dataset encode_text(const std::vector<TextExample>& data, const Vocabulary& vocab, const LabelSet& labels);

/// Two-class keyword task: label "pos" when the token `kw` occurs among
/// random distractors `w0..w{distractors-1}`, else "neg". Balanced in
/// expectation, deterministic in `seed`.
std::vector<TextExample> keyword_task(std::size_t count, std::uint64_t seed, std::size_t min_len = 8,
                                      std::size_t max_len = 16, std::size_t distractors = 50);

struct ClassifyResult {
  double dev_accuracy = 0.0;
  double test_accuracy = 0.0;
  TrainHistory history;
};

/// Builds vocabulary and labels from `train_data`, trains `base` (vocab
/// size and class count are filled in) with dev-based epoch selection and
/// reports test accuracy of the selected epoch. Writes a checkpoint when
/// `checkpoint_dir` is non-empty.
ClassifyResult run_classify(const std::vector<TextExample>& train_data, const std::vector<TextExample>& dev_data,
                            const std::vector<TextExample>& test_data, ModelConfig base, const TrainConfig& train_config,
                            MetricsLog* log = nullptr, const std::string& checkpoint_dir = "");

}  // namespace mst
