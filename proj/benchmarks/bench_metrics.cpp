#include <random>

#include <benchmark/benchmark.h>

#include "mhqa/metrics.hpp"
#include "mhqa/reader.hpp"
#include "mhqa/retrieval.hpp"

namespace {

std::string sentence(std::mt19937_64& rng, int words) {
  static const char* vocab[] = {"the", "river", "city", "born", "won", "record", "golf", "player", "capital", "novel"};
  std::string s;
  for (int i = 0; i < words; ++i) s += std::string(vocab[rng() % 10]) + " ";
  return s;
}

void BM_AnswerScore(benchmark::State& state) {
  std::mt19937_64 rng(1);
  const auto pred = sentence(rng, 8), gold = sentence(rng, 8);
  for (auto _ : state) benchmark::DoNotOptimize(mhqa::metrics::answer_score(pred, gold));
}
BENCHMARK(BM_AnswerScore);

void BM_RougeL(benchmark::State& state) {
  std::mt19937_64 rng(2);
  const auto pred = sentence(rng, static_cast<int>(state.range(0)));
  const auto gold = sentence(rng, static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(mhqa::metrics::rouge_l(pred, gold));
}
BENCHMARK(BM_RougeL)->Arg(16)->Arg(64)->Arg(256);

void BM_CorpusBleu(benchmark::State& state) {
  std::mt19937_64 rng(3);
  std::vector<std::string> preds, golds;
  for (int i = 0; i < state.range(0); ++i) {
    preds.push_back(sentence(rng, 20));
    golds.push_back(sentence(rng, 20));
  }
  for (auto _ : state) benchmark::DoNotOptimize(mhqa::metrics::corpus_bleu(preds, golds));
}
BENCHMARK(BM_CorpusBleu)->Arg(100)->Arg(1000);

void BM_ExtractBestSpan(benchmark::State& state) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0, 1);
  const auto len = static_cast<std::size_t>(state.range(0));
  std::vector<double> start(len), end(len);
  std::vector<int> mask(len, 1);
  for (std::size_t i = 0; i < len; ++i) {
    start[i] = n(rng);
    end[i] = n(rng);
  }
  for (auto _ : state) benchmark::DoNotOptimize(mhqa::reader::extract_best_span(start, end, mask, 30));
}
BENCHMARK(BM_ExtractBestSpan)->Arg(128)->Arg(512)->Arg(1024);

void BM_SelectParagraphs(benchmark::State& state) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<mhqa::retrieval::ParagraphScore> scores;
  for (int row = 0; row < 3; ++row) {
    for (int p = 0; p < 10; ++p) scores.push_back({p, row == 0 ? std::nullopt : std::optional<int>(row - 1), u(rng), {}});
  }
  for (auto _ : state) benchmark::DoNotOptimize(mhqa::retrieval::select_paragraphs(scores, 2));
}
BENCHMARK(BM_SelectParagraphs);

}  // namespace

BENCHMARK_MAIN();
