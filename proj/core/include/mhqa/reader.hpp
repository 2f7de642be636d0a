#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mhqa/backbone.hpp"
#include "mhqa/corpus.hpp"
#include "mhqa/nn/graph.hpp"
#include "mhqa/subquestions.hpp"
#include "mhqa/text.hpp"

namespace mhqa::reader {

struct SentenceSpan {
  int paragraph_index = 0;
  int sentence_index = 0;
  int token_start = 0;
  /// One past the last token.
  int token_end = 0;

  bool operator==(const SentenceSpan&) const = default;
};

/// [CLS] Q [SEP] subq1 [SEP] ... subqk [SEP] title1 sent ... [SEP]
struct ReaderInput {
  std::vector<int> token_ids;
  std::vector<int> segment_ids;
  /// Surface piece per token (empty for specials), used to decode spans.
  std::vector<std::string> pieces;
  std::vector<SentenceSpan> sentence_spans;
  std::vector<std::string> titles;
  /// Tokens before the context: [CLS] Q [SEP] and the sub-question block.
  int question_length = 0;
  int max_positions = 1024;

  std::size_t size() const { return token_ids.size(); }
  /// 1 over title and sentence tokens, 0 elsewhere.
  std::vector<int> context_mask() const;
  /// Surface text of tokens [start, end].
  std::string span_text(int start, int end) const;
};

/// Throws DataError when paragraphs are empty or the question alone overflows
/// max_positions. Sub-questions that do not fit are dropped whole, then
/// trailing context sentences are dropped whole.
ReaderInput build_reader_input(const std::string& question, const qd::SubQuestionSet& subquestions,
                               const std::vector<corpus::Paragraph>& paragraphs, int max_positions,
                               const text::Vocabulary& vocab);

/// Best (s, e) by start[s] + end[e] with both masked in, s <= e and
/// e - s < max_answer_len; ties go to the smallest s, then the smallest e.
/// Throws RuntimeError when no pair is valid.
std::pair<int, int> extract_best_span(std::span<const double> start_logits, std::span<const double> end_logits,
                                      std::span<const int> context_mask, int max_answer_len);

/// Clamp applied before the log in answer_type_loss.
inline constexpr double kTypeProbabilityEpsilon = 1e-12;

/// -log p[gold]. Throws DataError when probs are negative or do not sum to 1
/// within 1e-6.
double answer_type_loss(std::span<const double> probs, corpus::AnswerType gold);

struct LossWeights {
  double type = 1.0;
  double span = 1.0;
  double sup = 1.0;

  bool operator==(const LossWeights&) const = default;
};

double reading_loss(double l_type, double l_start, double l_end, double l_sup, const LossWeights& w);

/// Sentences scoring >= threshold; when fewer than two pass, the top two by
/// score (earlier position on ties). Output follows sentence order.
std::vector<corpus::SupportingFact> select_supporting_facts(std::span<const double> sentence_scores,
                                                            const ReaderInput& input, double threshold = 0.5);
/// Same rule on bare indices.
std::vector<int> select_sentence_indices(std::span<const double> sentence_scores, double threshold = 0.5);

struct ReaderConfig {
  BackboneSpec backbone;
  int max_positions = 1024;
  int max_answer_len = 30;
  double sp_threshold = 0.5;
  LossWeights weights;
  TrainingOptions training{.epochs = 12, .batch_size = 4, .learning_rate = 5e-5};

  bool operator==(const ReaderConfig&) const = default;
};

void validate(const ReaderConfig& config);
nlohmann::json to_json(const ReaderConfig& config);
ReaderConfig reader_config_from_json(const nlohmann::json& doc);

/// Raw head outputs for one input.
struct ReaderOutputs {
  std::vector<double> start_logits;
  std::vector<double> end_logits;
  std::vector<double> sentence_logits;
  /// {negative, positive, span}
  std::array<double, 3> type_logits{};
};

struct ReaderPrediction {
  std::string answer_text;
  corpus::AnswerType answer_type = corpus::AnswerType::kSpan;
  std::optional<std::pair<int, int>> span;
  std::vector<corpus::SupportingFact> supporting_facts;
  std::vector<double> sentence_scores;
  std::array<double, 3> type_probs{};
};

/// Turns head outputs into a prediction. A span-typed output with no valid
/// span falls back to whichever of yes/no scores higher.
ReaderPrediction decode_prediction(const ReaderInput& input, const ReaderOutputs& outputs, int max_answer_len,
                                   double sp_threshold);

struct ReaderExample {
  std::string id;
  ReaderInput input;
  corpus::AnswerType answer_type = corpus::AnswerType::kSpan;
  /// Gold token span (inclusive), present for span answers.
  std::optional<std::pair<int, int>> span;
  /// One 0/1 label per sentence span.
  std::vector<int> sentence_labels;
};

/// Labels one example over the given paragraphs. Throws DataError naming the
/// example when the answer or supporting facts cannot be placed.
ReaderExample build_reader_example(const corpus::MultiHopExample& example, const qd::SubQuestionSet& subquestions,
                                   const std::vector<corpus::Paragraph>& paragraphs, int max_positions,
                                   const text::Vocabulary& vocab);

/// Encoder with start/end token heads, a pooled per-sentence supporting-fact
/// head and a 3-way answer-type head on [CLS].
class Reader {
 public:
  Reader(ReaderConfig config, text::Vocabulary vocab, std::uint64_t seed);
  ~Reader();
  Reader(Reader&&) noexcept;
  Reader& operator=(Reader&&) noexcept;

  static Reader create(const ReaderConfig& config, const text::Vocabulary& vocab);

  const ReaderConfig& config() const;
  const text::Vocabulary& vocab() const;
  nn::ParameterStore& parameters();

  ReaderOutputs outputs(const ReaderInput& input) const;

  /// Weighted multi-task loss node for one labelled example.
  nn::Var loss(nn::Graph& g, const ReaderExample& example) const;

  void save(const std::filesystem::path& dir) const;
  static Reader load(const std::filesystem::path& dir);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

ReaderPrediction predict(const Reader& reader, const ReaderInput& input);

TrainingLog train_reader(Reader& reader, const std::vector<ReaderExample>& examples);

}  // namespace mhqa::reader
