#include "mhqa/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "mhqa/error.hpp"

namespace mhqa::metrics {

namespace {

bool is_ascii_punct(unsigned char c) { return c < 128 && std::ispunct(c) != 0; }

std::vector<std::string> split_ws(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c)) != 0) {
      if (!current.empty()) out.push_back(std::move(current)), current.clear();
    } else {
      current.push_back(c);
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

double f1_from(double precision, double recall) {
  if (precision + recall <= 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts ngrams(const std::vector<std::string>& tokens, int n) {
  NgramCounts counts;
  const auto size = static_cast<int>(tokens.size());
  for (int i = 0; i + n <= size; ++i) {
    ++counts[std::vector<std::string>(tokens.begin() + i, tokens.begin() + i + n)];
  }
  return counts;
}

std::size_t total(const NgramCounts& counts) {
  std::size_t sum = 0;
  for (const auto& [gram, count] : counts) sum += count;
  return sum;
}

std::size_t clipped_overlap(const NgramCounts& hypothesis, const NgramCounts& reference) {
  std::size_t overlap = 0;
  for (const auto& [gram, count] : hypothesis) {
    auto it = reference.find(gram);
    if (it != reference.end()) overlap += std::min(count, it->second);
  }
  return overlap;
}

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), curr(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      curr[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], curr[j - 1]);
    }
    std::swap(prev, curr);
  }
  return prev[b.size()];
}

}  // namespace

std::string normalize_answer(std::string_view text) {
  std::string stripped;
  stripped.reserve(text.size());
  for (char c : text) {
    const auto uc = static_cast<unsigned char>(c);
    if (is_ascii_punct(uc)) continue;
    stripped.push_back(uc < 128 ? static_cast<char>(std::tolower(uc)) : c);
  }
  std::string out;
  for (auto& token : split_ws(stripped)) {
    if (token == "a" || token == "an" || token == "the") continue;
    if (!out.empty()) out.push_back(' ');
    out += token;
  }
  return out;
}

std::vector<std::string> answer_tokens(std::string_view text) { return split_ws(normalize_answer(text)); }

AnswerScore answer_score(std::string_view prediction, std::string_view gold) {
  const auto pred_tokens = answer_tokens(prediction);
  const auto gold_tokens = answer_tokens(gold);
  AnswerScore score;
  score.em = pred_tokens == gold_tokens ? 1.0 : 0.0;
  if (pred_tokens.empty() && gold_tokens.empty()) {
    score.f1 = score.precision = score.recall = 1.0;
    return score;
  }
  if (pred_tokens.empty() || gold_tokens.empty()) return score;

  std::map<std::string, std::size_t> gold_counts;
  for (const auto& t : gold_tokens) ++gold_counts[t];
  std::size_t common = 0;
  for (const auto& t : pred_tokens) {
    auto it = gold_counts.find(t);
    if (it != gold_counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return score;
  score.precision = static_cast<double>(common) / static_cast<double>(pred_tokens.size());
  score.recall = static_cast<double>(common) / static_cast<double>(gold_tokens.size());
  score.f1 = f1_from(score.precision, score.recall);
  return score;
}

AnswerScore sp_score(const std::vector<SupportingFactKey>& predicted,
                     const std::vector<SupportingFactKey>& gold) {
  const std::set<SupportingFactKey> pred_set(predicted.begin(), predicted.end());
  const std::set<SupportingFactKey> gold_set(gold.begin(), gold.end());
  AnswerScore score;
  if (pred_set.empty() && gold_set.empty()) {
    score.em = score.f1 = score.precision = score.recall = 1.0;
    return score;
  }
  std::size_t tp = 0;
  for (const auto& fact : pred_set) tp += gold_set.count(fact);
  const std::size_t fp = pred_set.size() - tp;
  const std::size_t fn = gold_set.size() - tp;
  score.em = (fp == 0 && fn == 0) ? 1.0 : 0.0;
  if (tp == 0) return score;
  score.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  score.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  score.f1 = f1_from(score.precision, score.recall);
  return score;
}

AnswerScore joint_score(const AnswerScore& answer, const AnswerScore& sp) {
  AnswerScore joint;
  joint.precision = answer.precision * sp.precision;
  joint.recall = answer.recall * sp.recall;
  joint.f1 = f1_from(joint.precision, joint.recall);
  joint.em = answer.em * sp.em;
  return joint;
}

std::vector<std::string> rouge_tokens(std::string_view text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (char c : text) {
    const auto uc = static_cast<unsigned char>(c);
    cleaned.push_back(uc < 128 && std::isalnum(uc) != 0 ? static_cast<char>(std::tolower(uc)) : ' ');
  }
  return split_ws(cleaned);
}

double rouge_n(std::string_view prediction, std::string_view gold, int n) {
  if (n < 1) throw ConfigError("rouge_n: n must be >= 1");
  const auto pred_tokens = rouge_tokens(prediction);
  const auto gold_tokens = rouge_tokens(gold);
  const auto pred = ngrams(pred_tokens, n);
  const auto ref = ngrams(gold_tokens, n);
  const std::size_t pred_total = total(pred);
  const std::size_t ref_total = total(ref);
  if (pred_total == 0 || ref_total == 0) {
    return (pred_tokens == gold_tokens && !pred_tokens.empty()) ? 100.0 : 0.0;
  }
  const auto overlap = static_cast<double>(clipped_overlap(pred, ref));
  return 100.0 * f1_from(overlap / static_cast<double>(pred_total), overlap / static_cast<double>(ref_total));
}

double rouge_l(std::string_view prediction, std::string_view gold) {
  const auto pred = rouge_tokens(prediction);
  const auto ref = rouge_tokens(gold);
  if (pred.empty() || ref.empty()) return 0.0;
  const auto lcs = static_cast<double>(lcs_length(pred, ref));
  return 100.0 * f1_from(lcs / static_cast<double>(pred.size()), lcs / static_cast<double>(ref.size()));
}

double corpus_bleu(const std::vector<std::string>& predictions, const std::vector<std::string>& golds) {
  if (predictions.size() != golds.size()) {
    throw DataError("corpus_bleu: " + std::to_string(predictions.size()) + " predictions vs " +
                    std::to_string(golds.size()) + " references");
  }
  constexpr int kMaxOrder = 4;
  std::array<std::size_t, kMaxOrder> matched{};
  std::array<std::size_t, kMaxOrder> possible{};
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto hyp = rouge_tokens(predictions[i]);
    const auto ref = rouge_tokens(golds[i]);
    hyp_length += hyp.size();
    ref_length += ref.size();
    for (int n = 1; n <= kMaxOrder; ++n) {
      const auto hyp_grams = ngrams(hyp, n);
      matched[n - 1] += clipped_overlap(hyp_grams, ngrams(ref, n));
      possible[n - 1] += total(hyp_grams);
    }
  }
  if (hyp_length == 0) return 0.0;
  double log_sum = 0.0;
  int orders = 0;
  for (int n = 0; n < kMaxOrder; ++n) {
    if (possible[n] == 0) continue;
    if (matched[n] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(matched[n]) / static_cast<double>(possible[n]));
    ++orders;
  }
  const double brevity =
      hyp_length > ref_length
          ? 1.0
          : std::exp(1.0 - static_cast<double>(ref_length) / static_cast<double>(hyp_length));
  return 100.0 * brevity * std::exp(log_sum / orders);
}

double unigram_f_measure(std::string_view prediction, std::string_view gold) {
  return 100.0 * answer_score(prediction, gold).f1;
}

std::size_t chain_row(const ChainTriple& triple) {
  return (triple.q_correct ? 0U : 4U) + (triple.sub1_correct ? 0U : 2U) + (triple.sub2_correct ? 0U : 1U);
}

ChainTable reasoning_chain_table(const std::vector<ChainTriple>& triples) {
  if (triples.empty()) throw DataError("reasoning_chain_table: no triples");
  ChainTable table;
  for (const auto& triple : triples) ++table.counts[chain_row(triple)];
  table.total = triples.size();
  for (std::size_t row = 0; row < table.counts.size(); ++row) {
    table.percentages[row] = 100.0 * static_cast<double>(table.counts[row]) / static_cast<double>(table.total);
  }
  return table;
}

double round2(double value) { return std::round(value * 100.0) / 100.0; }

namespace {

struct Accumulator {
  double em = 0, f1 = 0, precision = 0, recall = 0;
  std::size_t n = 0;

  void add(const AnswerScore& s) {
    em += s.em;
    f1 += s.f1;
    precision += s.precision;
    recall += s.recall;
    ++n;
  }

  ReportedScore mean() const {
    if (n == 0) return {};
    const auto d = static_cast<double>(n);
    return {round2(100.0 * em / d), round2(100.0 * f1 / d), round2(100.0 * precision / d),
            round2(100.0 * recall / d)};
  }
};

nlohmann::json score_json(const ReportedScore& s) {
  return {{"em", s.em}, {"f1", s.f1}, {"precision", s.precision}, {"recall", s.recall}};
}

ReportedScore score_from_json(const nlohmann::json& j) {
  return {j.at("em").get<double>(), j.at("f1").get<double>(), j.at("precision").get<double>(),
          j.at("recall").get<double>()};
}

}  // namespace

EvalReport aggregate_report(const std::vector<ExampleScores>& scores) {
  Accumulator answer, sp, joint;
  for (const auto& s : scores) {
    answer.add(s.answer);
    if (s.sp) {
      sp.add(*s.sp);
      joint.add(joint_score(s.answer, *s.sp));
    }
  }
  EvalReport report;
  report.count = scores.size();
  report.answer = answer.mean();
  if (sp.n > 0) {
    report.sp = sp.mean();
    report.joint = joint.mean();
  }
  return report;
}

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json doc;
  doc["count"] = report.count;
  doc["answer"] = score_json(report.answer);
  if (report.sp) doc["sp"] = score_json(*report.sp);
  if (report.joint) doc["joint"] = score_json(*report.joint);
  if (report.retrieval) {
    doc["retrieval"] = {{"em", report.retrieval->em}, {"f1", report.retrieval->f1}, {"count", report.retrieval->count}};
  }
  if (report.qd) {
    doc["qd"] = {{"f_measure", report.qd->f_measure},
                 {"rouge1", report.qd->rouge1},
                 {"rougeL", report.qd->rouge_l},
                 {"bleu", report.qd->bleu},
                 {"count", report.qd->count}};
  }
  if (report.chain) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < kChainRowLabels.size(); ++i) {
      const auto label = kChainRowLabels[i];
      rows.push_back({{"q", std::string(1, label[0])},
                      {"sub1", std::string(1, label[1])},
                      {"sub2", std::string(1, label[2])},
                      {"count", report.chain->counts[i]},
                      {"percent", round2(report.chain->percentages[i])}});
    }
    doc["chain"] = {{"rows", rows}, {"total", report.chain->total}};
  }
  return doc;
}

EvalReport report_from_json(const nlohmann::json& doc) {
  try {
    EvalReport report;
    report.count = doc.at("count").get<std::size_t>();
    report.answer = score_from_json(doc.at("answer"));
    if (doc.contains("sp")) report.sp = score_from_json(doc["sp"]);
    if (doc.contains("joint")) report.joint = score_from_json(doc["joint"]);
    if (doc.contains("retrieval")) {
      const auto& r = doc["retrieval"];
      report.retrieval = RetrievalQuality{r.at("em").get<double>(), r.at("f1").get<double>(),
                                          r.at("count").get<std::size_t>()};
    }
    if (doc.contains("qd")) {
      const auto& q = doc["qd"];
      report.qd = QdQuality{q.at("f_measure").get<double>(), q.at("rouge1").get<double>(),
                            q.at("rougeL").get<double>(), q.at("bleu").get<double>(),
                            q.at("count").get<std::size_t>()};
    }
    if (doc.contains("chain")) {
      ChainTable table;
      const auto& rows = doc["chain"].at("rows");
      if (rows.size() != kChainRowLabels.size()) throw DataError("chain table must have 8 rows");
      for (std::size_t i = 0; i < rows.size(); ++i) {
        table.counts[i] = rows[i].at("count").get<std::size_t>();
        table.percentages[i] = rows[i].at("percent").get<double>();
      }
      table.total = doc["chain"].at("total").get<std::size_t>();
      report.chain = table;
    }
    return report;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed evaluation report: ") + e.what());
  }
}

std::string render_report(const EvalReport& report) {
  std::ostringstream out;
  out << fmt::format("examples: {}\n\n", report.count);
  out << fmt::format("{:<10}{:>10}{:>10}{:>12}{:>10}\n", "", "EM", "F1", "Precision", "Recall");
  auto row = [&out](std::string_view name, const ReportedScore& s) {
    out << fmt::format("{:<10}{:>10.2f}{:>10.2f}{:>12.2f}{:>10.2f}\n", name, s.em, s.f1, s.precision, s.recall);
  };
  row("Ans", report.answer);
  if (report.sp) row("Sup", *report.sp);
  if (report.joint) row("Joint", *report.joint);
  if (report.retrieval) {
    out << fmt::format("\nparagraph retrieval ({} examples)\n{:<10}{:>10.2f}{:>10.2f}\n", report.retrieval->count,
                       "", report.retrieval->em, report.retrieval->f1);
  }
  if (report.qd) {
    out << fmt::format("\ndecomposition quality ({} examples)\n", report.qd->count);
    out << fmt::format("{:>12}{:>10}{:>10}{:>10}\n", "F Measure", "Rouge1", "Rouge-L", "BLEU");
    out << fmt::format("{:>12.2f}{:>10.2f}{:>10.2f}{:>10.2f}\n", report.qd->f_measure, report.qd->rouge1,
                       report.qd->rouge_l, report.qd->bleu);
  }
  if (report.chain) {
    out << fmt::format("\nreasoning chains ({} examples)\n{:<4}{:<6}{:<6}{:>10}\n", report.chain->total, "q",
                       "sub1", "sub2", "%");
    for (std::size_t i = 0; i < kChainRowLabels.size(); ++i) {
      const auto label = kChainRowLabels[i];
      out << fmt::format("{:<4}{:<6}{:<6}{:>10.1f}\n", label[0], label[1], label[2], report.chain->percentages[i]);
    }
  }
  return out.str();
}

}  // namespace mhqa::metrics
