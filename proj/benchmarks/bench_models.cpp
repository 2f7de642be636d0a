#include <benchmark/benchmark.h>

#include "mhqa/reader.hpp"
#include "mhqa/retrieval.hpp"
#include "mhqa/text.hpp"

namespace {

const mhqa::corpus::Paragraph kParagraph{
    "Roberto De Vicenzo",
    {"Roberto De Vicenzo was an Argentine professional golfer.", "He won 230 tournaments worldwide during his career.",
     "He is remembered for the scorecard error at the 1968 Masters."},
    std::nullopt};
const std::string kQuestion = "The Argentine PGA Championship record holder has won how many tournaments worldwide?";
const std::string kSub = "How many tournaments did Roberto De Vicenzo win?";

mhqa::text::Vocabulary vocab() { return mhqa::text::Vocabulary::build({kQuestion, kSub, kParagraph.text()}); }

void BM_ScorerForward(benchmark::State& state) {
  mhqa::retrieval::ScorerConfig config;
  config.max_len = 128;
  const auto v = vocab();
  const auto scorer = mhqa::retrieval::Scorer::create(config, v);
  const auto row = mhqa::retrieval::encode_pair({kQuestion, kSub, kParagraph}, config.max_len, v);
  for (auto _ : state) benchmark::DoNotOptimize(scorer.logits(row));
}
BENCHMARK(BM_ScorerForward)->Unit(benchmark::kMicrosecond);

void BM_ReaderForward(benchmark::State& state) {
  mhqa::reader::ReaderConfig config;
  config.max_positions = 256;
  const auto v = vocab();
  const auto reader = mhqa::reader::Reader::create(config, v);
  const std::vector<mhqa::corpus::Paragraph> paragraphs(static_cast<std::size_t>(state.range(0)), kParagraph);
  const auto input = mhqa::reader::build_reader_input(kQuestion, {{kSub}}, paragraphs, config.max_positions, v);
  for (auto _ : state) benchmark::DoNotOptimize(mhqa::reader::predict(reader, input));
  state.counters["tokens"] = static_cast<double>(input.size());
}
BENCHMARK(BM_ReaderForward)->Arg(1)->Arg(4)->Unit(benchmark::kMicrosecond);

}  // namespace
