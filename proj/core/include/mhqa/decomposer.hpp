#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mhqa/backbone.hpp"
#include "mhqa/corpus.hpp"
#include "mhqa/metrics.hpp"
#include "mhqa/nn/graph.hpp"
#include "mhqa/subquestions.hpp"
#include "mhqa/text.hpp"

namespace mhqa::qd {

struct QDTrainingPair {
  std::string id;
  std::string source_text;
  std::string target_text;

  bool operator==(const QDTrainingPair&) const = default;
};

struct GeneratorConfig {
  BackboneSpec backbone;
  int max_input_length = 512;
  int max_output_length = 64;
  TrainingOptions training{.epochs = 3, .batch_size = 32, .learning_rate = 5e-5};

  bool operator==(const GeneratorConfig&) const = default;
};

/// Throws ConfigError unless lengths and batch size are positive and the
/// learning rate is > 0.
void validate(const GeneratorConfig& config);
nlohmann::json to_json(const GeneratorConfig& config);
GeneratorConfig generator_config_from_json(const nlohmann::json& doc);

/// "question <ctx> title: sentences <ctx> ..." cut to max_input_length pieces.
std::string build_source_text(const std::string& question, const std::vector<corpus::Paragraph>& paragraphs,
                              int max_input_length);

/// Throws DataError when the example has no evidence or no sub-questions.
QDTrainingPair build_qd_training_pair(const corpus::DecompositionExample& example, const GeneratorConfig& config);

/// Encoder-decoder transformer sharing one token table between the encoder
/// input, the decoder input and the output projection.
class Generator {
 public:
  Generator(GeneratorConfig config, text::Vocabulary vocab, std::uint64_t seed);
  ~Generator();
  Generator(Generator&&) noexcept;
  Generator& operator=(Generator&&) noexcept;

  /// A preset starts from seeded weights; a checkpoint directory is loaded
  /// and keeps its own vocabulary.
  static Generator create(const GeneratorConfig& config, const text::Vocabulary& vocab);

  const GeneratorConfig& config() const;
  const text::Vocabulary& vocab() const;
  nn::ParameterStore& parameters();

  /// Mean token cross-entropy of target under teacher forcing.
  nn::Var loss(nn::Graph& g, const std::string& source_text, const std::string& target_text) const;

  /// Greedy decode, at most max_output_length tokens.
  std::string generate(const std::string& source_text) const;

  void save(const std::filesystem::path& dir) const;
  static Generator load(const std::filesystem::path& dir);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Vocabulary over every source and target plus any extra texts the
/// generator should be able to read.
text::Vocabulary build_generator_vocabulary(const std::vector<QDTrainingPair>& pairs,
                                            const std::vector<std::string>& extra_texts = {});

TrainingLog fit_generator(Generator& generator, const std::vector<QDTrainingPair>& pairs);

struct DecomposerTraining {
  Generator generator;
  TrainingLog log;
};

/// Empty pairs raise ConfigError.
DecomposerTraining train_decomposer(const std::vector<QDTrainingPair>& pairs, const GeneratorConfig& config,
                                    const std::vector<std::string>& extra_texts = {});

/// Throws EmptySubQuestionSetError when nothing parseable comes out.
SubQuestionSet generate_subquestions(const Generator& generator, const std::string& question,
                                     const std::vector<corpus::Paragraph>& paragraphs);

struct GeneratedSet {
  SubQuestionSet subquestions;
  /// Set when the decoder output was unusable and the question stands in.
  bool fell_back = false;
};

GeneratedSet generate_or_fallback(const Generator& generator, const std::string& question,
                                  const std::vector<corpus::Paragraph>& paragraphs);

/// Corpus means over serialized decompositions; BLEU is corpus-level.
metrics::QdQuality evaluate_decompositions(const std::vector<SubQuestionSet>& predicted,
                                           const std::vector<SubQuestionSet>& gold);

struct SubQuestionRecord {
  std::string id;
  std::string question;
  SubQuestionSet subquestions;
  bool fell_back = false;

  bool operator==(const SubQuestionRecord&) const = default;
};

nlohmann::json to_json(const SubQuestionRecord& record);
SubQuestionRecord subquestion_record_from_json(const nlohmann::json& doc);
void save_subquestion_records(const std::filesystem::path& path, const std::vector<SubQuestionRecord>& records);
std::vector<SubQuestionRecord> load_subquestion_records(const std::filesystem::path& path);

}  // namespace mhqa::qd
