#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace mhqa::metrics {

/// Precision/recall/F1 plus exact match, all on the [0, 1] scale.
struct AnswerScore {
  double em = 0.0;
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

struct SupportingFactKey {
  std::string title;
  int sentence_index = 0;

  auto operator<=>(const SupportingFactKey&) const = default;
};

/// Lowercase, strip ASCII punctuation, drop the articles a/an/the, collapse
/// whitespace.
std::string normalize_answer(std::string_view text);

/// Whitespace tokens of normalize_answer(text).
std::vector<std::string> answer_tokens(std::string_view text);

AnswerScore answer_score(std::string_view prediction, std::string_view gold);

/// Exact-membership scores over (title, sentence) pairs. Duplicates collapse.
AnswerScore sp_score(const std::vector<SupportingFactKey>& predicted,
                     const std::vector<SupportingFactKey>& gold);

/// Product-of-precisions / product-of-recalls joint metric.
AnswerScore joint_score(const AnswerScore& answer, const AnswerScore& sp);

// --- generation quality -----------------------------------------------------
// All return values on the [0, 100] scale.

/// Lowercased alphanumeric tokens; every other character separates tokens.
std::vector<std::string> rouge_tokens(std::string_view text);

double rouge_n(std::string_view prediction, std::string_view gold, int n);
double rouge_l(std::string_view prediction, std::string_view gold);

/// Corpus BLEU: uniform weights up to order 4, brevity penalty, no smoothing.
/// Orders for which the hypothesis side has no n-grams at all are left out of
/// the geometric mean, so short identical segments still score 100.
double corpus_bleu(const std::vector<std::string>& predictions, const std::vector<std::string>& golds);

/// Token-level unigram F1 on normalize_answer tokens, x100.
double unigram_f_measure(std::string_view prediction, std::string_view gold);

// --- reasoning chains -------------------------------------------------------

struct ChainTriple {
  bool q_correct = false;
  bool sub1_correct = false;
  bool sub2_correct = false;
};

/// Row order: ccc, ccw, cwc, cww, wcc, wcw, wwc, www.
inline constexpr std::array<std::string_view, 8> kChainRowLabels = {"ccc", "ccw", "cwc", "cww",
                                                                   "wcc", "wcw", "wwc", "www"};

struct ChainTable {
  std::array<double, 8> percentages{};
  std::array<std::size_t, 8> counts{};
  std::size_t total = 0;
};

std::size_t chain_row(const ChainTriple& triple);
ChainTable reasoning_chain_table(const std::vector<ChainTriple>& triples);

// --- aggregation ------------------------------------------------------------

struct ExampleScores {
  std::string id;
  AnswerScore answer;
  std::optional<AnswerScore> sp;
};

/// Mean of a score set, x100 and rounded to two decimals.
struct ReportedScore {
  double em = 0.0;
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

struct QdQuality {
  double f_measure = 0.0;
  double rouge1 = 0.0;
  double rouge_l = 0.0;
  double bleu = 0.0;
  std::size_t count = 0;
};

struct RetrievalQuality {
  double em = 0.0;
  double f1 = 0.0;
  std::size_t count = 0;
};

struct EvalReport {
  std::size_t count = 0;
  ReportedScore answer;
  std::optional<ReportedScore> sp;
  std::optional<ReportedScore> joint;
  std::optional<RetrievalQuality> retrieval;
  std::optional<QdQuality> qd;
  std::optional<ChainTable> chain;
};

double round2(double value);

EvalReport aggregate_report(const std::vector<ExampleScores>& scores);

nlohmann::json to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& doc);

/// Aligned console table.
std::string render_report(const EvalReport& report);

}  // namespace mhqa::metrics
