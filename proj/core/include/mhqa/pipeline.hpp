#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mhqa/corpus.hpp"
#include "mhqa/decomposer.hpp"
#include "mhqa/llm.hpp"
#include "mhqa/metrics.hpp"
#include "mhqa/reader.hpp"
#include "mhqa/retrieval.hpp"

namespace mhqa::pipeline {

enum class Stage {
  kIngest,
  kTrainQd,
  kGenSubq,
  kTrainSpr,
  kRetrieve,
  kTrainSqa,
  kAnswer,
  kPromptLlm,
  kEvaluate,
  kReport,
};

inline constexpr std::string_view kStageNames[] = {"ingest",   "train-qd",  "gen-subq",   "train-spr", "retrieve",
                                                  "train-sqa", "answer",   "prompt-llm", "evaluate",  "report"};

std::string_view to_string(Stage stage);
/// ConfigError for unknown names.
Stage parse_stage(std::string_view name);

struct DatasetConfig {
  std::filesystem::path path;
  corpus::DatasetFormat format = corpus::DatasetFormat::kHotpotQa;
  /// Keep only the first N examples; 0 keeps all.
  std::size_t limit = 0;
};

/// Every stage reads the same document; each stage uses its own block.
struct RunConfig {
  std::filesystem::path out = "run";
  std::uint64_t seed = 13;
  llm::PromptMode mode = llm::PromptMode::kWithQd;
  DatasetConfig dataset;
  /// Decomposition training data (JSONL). Without it, train-qd uses the gold
  /// sub-questions carried by the dataset itself.
  std::optional<std::filesystem::path> decomposition_path;
  qd::GeneratorConfig decomposer;
  /// Paragraphs shown to the decomposer at generation time: the cited
  /// (supporting) paragraphs when true, the whole context otherwise.
  bool qd_gold_evidence = true;
  retrieval::ScorerConfig retriever;
  int top_k = 2;
  reader::ReaderConfig reader;
  llm::ClientConfig llm;
  /// Whether run_pipeline includes the LLM stage.
  bool use_llm = false;
  /// "reader" or "llm": which predictions evaluate scores.
  std::string evaluate_source = "reader";
  /// Whether run_pipeline runs the training stages.
  bool train = true;
  /// The document as given, hashed into manifests.
  nlohmann::json raw = nlohmann::json::object();
};

/// Parses a config document. Unknown top-level keys raise ConfigError.
RunConfig run_config_from_json(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);
/// Re-applies seed to every stochastic component.
void apply_seed(RunConfig& config, std::uint64_t seed);

/// Optional collaborators injected by callers and tests.
struct StageContext {
  std::shared_ptr<llm::Transport> transport;
  llm::Sleeper sleeper;
};

/// Artifact names under the output directory.
namespace artifacts {
inline constexpr std::string_view kExamples = "examples.jsonl";
inline constexpr std::string_view kVocabulary = "vocab.json";
inline constexpr std::string_view kDecomposer = "models/decomposer";
inline constexpr std::string_view kSubquestions = "subquestions.jsonl";
inline constexpr std::string_view kRetriever = "models/retriever";
inline constexpr std::string_view kRetrieval = "retrieval.jsonl";
inline constexpr std::string_view kReader = "models/reader";
inline constexpr std::string_view kPredictions = "predictions.json";
inline constexpr std::string_view kIntermediate = "intermediate.jsonl";
inline constexpr std::string_view kLlmPredictions = "llm_predictions.json";
inline constexpr std::string_view kLlmResponses = "llm_responses.jsonl";
inline constexpr std::string_view kReport = "report.json";
inline constexpr std::string_view kReportText = "report.txt";
}  // namespace artifacts

struct StageResult {
  Stage stage;
  std::vector<std::filesystem::path> outputs;
  nlohmann::json manifest;
};

/// Runs one stage and writes manifest_<stage>.json next to its outputs.
/// A missing upstream artifact raises DependencyError naming its producer.
StageResult run_stage(const RunConfig& config, Stage stage, const StageContext& context = {});

/// ingest, [train-qd], gen-subq, [train-spr], retrieve, [train-sqa], answer,
/// [prompt-llm], evaluate, report. without_qd mode skips decomposition.
metrics::EvalReport run_pipeline(const RunConfig& config, const StageContext& context = {});

std::filesystem::path manifest_path(const RunConfig& config, Stage stage);

}  // namespace mhqa::pipeline
