#pragma once

#include <Eigen/Core>

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mhqa/backbone.hpp"
#include "mhqa/corpus.hpp"
#include "mhqa/metrics.hpp"
#include "mhqa/nn/layers.hpp"
#include "mhqa/subquestions.hpp"
#include "mhqa/text.hpp"

namespace mhqa::retrieval {

/// Probability clamp used inside the logs of the retrieval loss.
inline constexpr double kProbabilityEpsilon = 1e-7;

struct ScoringInput {
  std::string question;
  std::optional<std::string> subquestion;
  corpus::Paragraph paragraph;
};

/// One encoded (question, sub-question?, paragraph) row.
struct EncodedRow {
  std::vector<int> token_ids;
  /// 0 over [CLS] question [SEP] (sub-question [SEP]), 1 over the paragraph.
  std::vector<int> segment_ids;
};

struct RowProvenance {
  std::string example_id;
  int paragraph_index = 0;
  std::optional<int> subquestion_index;
};

/// Padded rows with provenance. ids and mask share one shape.
struct EncodedBatch {
  Eigen::MatrixXi token_ids;
  Eigen::MatrixXi attention_mask;
  std::vector<RowProvenance> provenance;

  static EncodedBatch pack(const std::vector<EncodedRow>& rows, std::vector<RowProvenance> provenance);
};

/// [CLS] question [SEP] (sub-question [SEP]) paragraph [SEP], at most max_len
/// tokens. Over budget, the paragraph is cut first, then the sub-question;
/// the question is cut only when nothing else is left.
EncodedRow encode_pair(const ScoringInput& input, int max_len, const text::Vocabulary& vocab);

struct ParagraphScore {
  int paragraph_index = 0;
  /// Empty for the question-only pass.
  std::optional<int> subquestion_index;
  /// Softmax probability of the "relevant" logit.
  double score = 0.0;
  /// {irrelevant, relevant}
  std::array<double, 2> logits{};
};

struct ScorerConfig {
  BackboneSpec backbone;
  int max_len = 256;
  TrainingOptions training{.epochs = 3, .batch_size = 8, .learning_rate = 5e-5};

  bool operator==(const ScorerConfig&) const = default;
};

nlohmann::json to_json(const ScorerConfig& config);
ScorerConfig scorer_config_from_json(const nlohmann::json& doc);

/// Cross-encoder relevance classifier: transformer encoder, [CLS] state,
/// 2-way linear head initialised at zero.
class Scorer {
 public:
  Scorer(ScorerConfig config, text::Vocabulary vocab, std::uint64_t seed);
  ~Scorer();
  Scorer(Scorer&&) noexcept;
  Scorer& operator=(Scorer&&) noexcept;

  /// Builds from config.backbone: a preset starts from seeded weights, a
  /// checkpoint directory is loaded (its vocabulary wins).
  static Scorer create(const ScorerConfig& config, const text::Vocabulary& vocab);

  const ScorerConfig& config() const;
  const text::Vocabulary& vocab() const;
  nn::ParameterStore& parameters();

  std::array<double, 2> logits(const EncodedRow& row) const;
  nn::Var forward(nn::Graph& g, const EncodedRow& row) const;

  /// Writes config.json, weights.bin and vocab.json.
  void save(const std::filesystem::path& dir) const;
  static Scorer load(const std::filesystem::path& dir);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Question-only scores for every paragraph, then one block per sub-question.
std::vector<ParagraphScore> score_paragraphs(const Scorer& scorer, const std::string& question,
                                             const qd::SubQuestionSet& subquestions,
                                             const std::vector<corpus::Paragraph>& paragraphs);

/// Summed binary cross-entropy over scored items, probabilities clamped to
/// [eps, 1 - eps].
double spr_loss(std::span<const ParagraphScore> scores, std::span<const int> labels);

/// Item labels for a score list: each item inherits its paragraph's label.
std::vector<int> expand_labels(std::span<const ParagraphScore> scores, std::span<const int> paragraph_labels);

struct Selection {
  std::vector<int> indices;
  /// Set when k exceeded the number of scored paragraphs.
  bool truncated = false;
};

/// Per-paragraph max over all its scores; top-k by that aggregate, descending,
/// ties to the lower index.
Selection select_paragraphs(std::span<const ParagraphScore> scores, int k);

struct SprExample {
  std::string id;
  std::string question;
  qd::SubQuestionSet subquestions;
  std::vector<corpus::Paragraph> paragraphs;
  std::vector<int> labels;
};

/// Optimises the summed cross-entropy over every (question, sub-question?,
/// paragraph) item. Batches without a positive label are skipped.
TrainingLog train_spr(Scorer& scorer, const std::vector<SprExample>& dataset);

/// EM: selected set equals gold positive set. F1: per-example set overlap.
metrics::RetrievalQuality evaluate_retrieval(const std::vector<std::vector<int>>& selected,
                                             const std::vector<std::vector<int>>& gold_labels);

/// Line record: {id, selected_indices, scores} with scores[row][paragraph];
/// row 0 is the question-only pass, row j+1 sub-question j.
struct RetrievalRecord {
  std::string id;
  std::vector<int> selected_indices;
  std::vector<std::vector<double>> scores;

  bool operator==(const RetrievalRecord&) const = default;
};

RetrievalRecord make_record(const std::string& id, std::span<const ParagraphScore> scores, const Selection& selection);
nlohmann::json to_json(const RetrievalRecord& record);
RetrievalRecord retrieval_record_from_json(const nlohmann::json& doc);
void save_retrieval_records(const std::filesystem::path& path, const std::vector<RetrievalRecord>& records);
std::vector<RetrievalRecord> load_retrieval_records(const std::filesystem::path& path);

}  // namespace mhqa::retrieval
