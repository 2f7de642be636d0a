#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mhqa/error.hpp"

namespace mhqa::corpus {

/// Codes match the three-way answer-type head: 0 no, 1 yes, 2 span.
enum class AnswerType : int { kNegative = 0, kPositive = 1, kSpan = 2 };

std::string_view to_string(AnswerType type);

/// Classification by normalized answer text ("yes" / "no" / anything else).
AnswerType classify_answer(std::string_view answer);

enum class DatasetFormat { kHotpotQa, kTwoWiki, kMusique, kHvsqa };

std::string_view to_string(DatasetFormat format);
/// Accepts "hotpotqa", "2wiki", "musique", "hvsqa". Throws ConfigError otherwise.
DatasetFormat parse_format(std::string_view name);

struct Paragraph {
  std::string title;
  std::vector<std::string> sentences;
  std::optional<int> relevance_label;

  /// "title: sentence sentence ..."
  std::string text() const;

  bool operator==(const Paragraph&) const = default;
};

struct SupportingFact {
  std::string title;
  int sentence_index = 0;

  auto operator<=>(const SupportingFact&) const = default;
};

struct MultiHopExample {
  std::string id;
  std::string question;
  std::string answer;
  AnswerType answer_type = AnswerType::kSpan;
  std::vector<Paragraph> context;
  /// File order is kept; consumers treat this as a set.
  std::vector<SupportingFact> supporting_facts;
  int hop_count = 2;
  std::optional<std::vector<std::string>> gold_subquestions;
  std::optional<std::vector<std::string>> gold_intermediate_answers;
  DatasetFormat format = DatasetFormat::kHotpotQa;
  /// Source fields with no slot in the unified model, kept verbatim.
  nlohmann::json extras = nlohmann::json::object();

  bool operator==(const MultiHopExample&) const = default;
};

struct DecompositionExample {
  std::string id;
  std::string question;
  std::vector<Paragraph> evidence_paragraphs;
  std::vector<std::string> subquestions;
  std::optional<int> hop_count;

  bool operator==(const DecompositionExample&) const = default;
};

/// Throws DataError naming the violated field.
void validate(const MultiHopExample& example);
void validate(const DecompositionExample& example);

// --- multi-hop datasets -----------------------------------------------------

/// Accepts a JSON array document or JSON lines.
std::vector<MultiHopExample> load_multihop_dataset(const std::filesystem::path& path, DatasetFormat format);

/// Parses records of the given native format. Errors name the record index.
std::vector<MultiHopExample> parse_multihop_records(const std::vector<nlohmann::json>& records,
                                                    DatasetFormat format);

/// Native-format record for one example (inverse of parsing).
nlohmann::json to_native_record(const MultiHopExample& example);

/// MuSiQue is written as JSON lines, everything else as one JSON array.
void save_multihop_dataset(const std::filesystem::path& path, const std::vector<MultiHopExample>& examples,
                           DatasetFormat format);

/// Format-independent representation used between pipeline stages.
nlohmann::json to_json(const MultiHopExample& example);
MultiHopExample example_from_json(const nlohmann::json& doc);

nlohmann::json to_json(const Paragraph& paragraph);
Paragraph paragraph_from_json(const nlohmann::json& doc);

/// One label per context paragraph: 1 iff its title is cited by a supporting fact.
std::vector<int> derive_paragraph_labels(const MultiHopExample& example);

// --- decomposition data -----------------------------------------------------

/// JSON lines: {id, question, subquestions: [..], hop_count?, evidence: [[title, [sent..]], ..]}
std::vector<DecompositionExample> load_decomposition_examples(const std::filesystem::path& path);
void save_decomposition_examples(const std::filesystem::path& path, const std::vector<DecompositionExample>& examples);
nlohmann::json to_json(const DecompositionExample& example);
DecompositionExample decomposition_from_json(const nlohmann::json& doc);

/// Decomposition view of a multi-hop example that carries gold sub-questions:
/// evidence = paragraphs cited by supporting facts, in context order.
std::optional<DecompositionExample> to_decomposition_example(const MultiHopExample& example);

/// Seeded shuffle, then prefix split. train gets floor(ratio * N) items.
template <typename T>
std::pair<std::vector<T>, std::vector<T>> seeded_split(std::vector<T> items, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw ConfigError("split ratio must lie strictly between 0 and 1, got " + std::to_string(ratio));
  }
  std::mt19937_64 rng(seed);
  // Fisher-Yates with explicit draws so the permutation does not depend on the
  // standard library's shuffle implementation.
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(items[i - 1], items[j]);
  }
  const auto train_size = static_cast<std::size_t>(ratio * static_cast<double>(items.size()) + 1e-9);
  std::vector<T> train(std::make_move_iterator(items.begin()),
                       std::make_move_iterator(items.begin() + static_cast<std::ptrdiff_t>(train_size)));
  std::vector<T> test(std::make_move_iterator(items.begin() + static_cast<std::ptrdiff_t>(train_size)),
                      std::make_move_iterator(items.end()));
  return {std::move(train), std::move(test)};
}

std::pair<std::vector<DecompositionExample>, std::vector<DecompositionExample>> split_pokemqa(
    std::vector<DecompositionExample> examples, double ratio, std::uint64_t seed);

// --- prediction files -------------------------------------------------------

struct PredictionRecord {
  std::string answer;
  std::vector<SupportingFact> supporting_facts;

  bool operator==(const PredictionRecord&) const = default;
};

using PredictionMap = std::map<std::string, PredictionRecord>;

/// {"answer": {id: text}, "sp": {id: [[title, idx], ..]}}
nlohmann::json predictions_to_json(const PredictionMap& predictions);
PredictionMap predictions_from_json(const nlohmann::json& doc);

/// Compact serialization with keys in sorted order and a trailing newline.
std::string render_predictions(const PredictionMap& predictions);
void serialize_predictions(const PredictionMap& predictions, const std::filesystem::path& path);
PredictionMap load_predictions(const std::filesystem::path& path);

}  // namespace mhqa::corpus
