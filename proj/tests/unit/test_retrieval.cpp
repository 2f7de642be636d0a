#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mhqa/corpus.hpp"
#include "mhqa/error.hpp"
#include "mhqa/retrieval.hpp"
#include "mhqa/text.hpp"
#include "support.hpp"

using namespace mhqa;
using namespace mhqa::retrieval;
namespace oracle = mhqa::testing::oracle;
using mhqa::testing::fixture;
using mhqa::testing::TempDir;

namespace {

text::Vocabulary words(const std::vector<std::string>& texts) { return text::Vocabulary::build(texts); }

int count_id(const std::vector<int>& ids, int id) { return static_cast<int>(std::count(ids.begin(), ids.end(), id)); }

std::vector<ParagraphScore> aggregate_only(const std::vector<double>& values) {
  std::vector<ParagraphScore> scores;
  for (std::size_t i = 0; i < values.size(); ++i) scores.push_back({static_cast<int>(i), std::nullopt, values[i], {}});
  return scores;
}

std::vector<SprExample> hvsqa_examples() {
  std::vector<SprExample> out;
  for (const auto& ex : corpus::load_multihop_dataset(fixture("hvsqa.json"), corpus::DatasetFormat::kHvsqa)) {
    out.push_back({ex.id, ex.question, {*ex.gold_subquestions}, ex.context, corpus::derive_paragraph_labels(ex)});
  }
  return out;
}

text::Vocabulary vocab_for(const std::vector<SprExample>& data) {
  std::vector<std::string> texts;
  for (const auto& ex : data) {
    texts.push_back(ex.question);
    for (const auto& q : ex.subquestions.subquestions) texts.push_back(q);
    for (const auto& p : ex.paragraphs) texts.push_back(p.text());
  }
  return words(texts);
}

ScorerConfig tiny_config(int epochs) {
  ScorerConfig config;
  config.max_len = 96;
  config.training = {.epochs = epochs, .batch_size = 2, .learning_rate = 0.003, .seed = 5};
  return config;
}

}  // namespace

TEST(EncodePair, SeparatorLayout) {
  const auto vocab = words({"who wrote it? who is she? she wrote a book."});
  const corpus::Paragraph p{"Book", {"she wrote a book."}, std::nullopt};
  const auto plain = encode_pair({"who wrote it?", std::nullopt, p}, 64, vocab);
  EXPECT_EQ(plain.token_ids.front(), text::kClsId);
  EXPECT_EQ(count_id(plain.token_ids, text::kSepId), 2);
  EXPECT_EQ(plain.token_ids.back(), text::kSepId);
  const auto with_sub = encode_pair({"who wrote it?", "who is she?", p}, 64, vocab);
  EXPECT_EQ(count_id(with_sub.token_ids, text::kSepId), 3);
  ASSERT_EQ(with_sub.segment_ids.size(), with_sub.token_ids.size());
  // segment 0 through the second separator, segment 1 afterwards
  const auto second_sep = std::find(std::find(with_sub.token_ids.begin(), with_sub.token_ids.end(), text::kSepId) + 1,
                                    with_sub.token_ids.end(), text::kSepId) - with_sub.token_ids.begin();
  for (std::size_t i = 0; i < with_sub.segment_ids.size(); ++i) {
    EXPECT_EQ(with_sub.segment_ids[i], static_cast<long>(i) <= second_sep ? 0 : 1) << i;
  }
}

TEST(EncodePair, ParagraphTruncatedBeforeQuestion) {
  corpus::Paragraph p{"Long", {}, std::nullopt};
  for (int i = 0; i < 40; ++i) p.sentences.push_back("alpha beta gamma delta.");
  const std::string question = "which greek letter comes first?";
  const std::string sub = "what is alpha?";
  const auto vocab = words({question, sub, p.text()});
  const auto row = encode_pair({question, sub, p}, 32, vocab);
  EXPECT_EQ(row.token_ids.size(), 32u);
  const auto q_ids = vocab.encode(question), s_ids = vocab.encode(sub);
  EXPECT_TRUE(std::equal(q_ids.begin(), q_ids.end(), row.token_ids.begin() + 1));
  EXPECT_TRUE(std::equal(s_ids.begin(), s_ids.end(), row.token_ids.begin() + 2 + q_ids.size()));
  EXPECT_EQ(count_id(row.token_ids, text::kSepId), 3);
  EXPECT_EQ(row.token_ids.back(), text::kSepId);
}

TEST(EncodePair, PackPadsAndMasks) {
  const auto batch = EncodedBatch::pack({{{2, 9, 3}, {0, 0, 0}}, {{2, 3}, {0, 0}}}, {{"a", 0, {}}, {"a", 1, {}}});
  EXPECT_EQ(batch.token_ids.rows(), 2);
  EXPECT_EQ(batch.token_ids.cols(), 3);
  EXPECT_EQ(batch.token_ids(1, 2), text::kPadId);
  EXPECT_EQ(batch.attention_mask(1, 2), 0);
  EXPECT_EQ(batch.attention_mask(0, 2), 1);
  EXPECT_EQ(batch.provenance.size(), 2u);
}

TEST(ScoreParagraphs, CardinalityOrderAndUntrainedHalf) {
  std::vector<corpus::Paragraph> paragraphs;
  for (int i = 0; i < 10; ++i) paragraphs.push_back({"P" + std::to_string(i), {"text " + std::to_string(i) + "."}, {}});
  const auto vocab = words({"q? a? b? text"});
  const auto scorer = Scorer::create(tiny_config(1), vocab);
  const auto scores = score_paragraphs(scorer, "q?", {{"a?", "b?"}}, paragraphs);
  ASSERT_EQ(scores.size(), 30u);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    EXPECT_DOUBLE_EQ(scores[i].score, 0.5);
    EXPECT_EQ(scores[i].paragraph_index, static_cast<int>(i % 10));
    if (i < 10) {
      EXPECT_FALSE(scores[i].subquestion_index);
    } else {
      EXPECT_EQ(scores[i].subquestion_index, static_cast<int>(i / 10 - 1));
    }
  }
  EXPECT_EQ(score_paragraphs(scorer, "q?", {}, paragraphs).size(), 10u);
  EXPECT_THROW(score_paragraphs(scorer, "q?", {}, {}), DataError);
}

TEST(SprLoss, HandValues) {
  EXPECT_NEAR(spr_loss(aggregate_only({0.5}), std::vector<int>{1}), std::log(2.0), 1e-12);
  const double hand = -(std::log(0.9) + std::log(1 - 0.2) + std::log(0.7));
  EXPECT_NEAR(hand, 0.685179, 1e-6);
  EXPECT_NEAR(spr_loss(aggregate_only({0.9, 0.2, 0.7}), std::vector<int>{1, 0, 1}), hand, 1e-12);
  EXPECT_NEAR(spr_loss(aggregate_only({1.0 - 1e-12, 1e-12}), std::vector<int>{1, 0}), 0.0, 1e-6);
  EXPECT_TRUE(std::isfinite(spr_loss(aggregate_only({0.0, 1.0}), std::vector<int>{1, 0})));
  EXPECT_THROW(spr_loss(aggregate_only({0.5}), std::vector<int>{1, 0}), DataError);
}

TEST(SprLoss, MatchesOracleAndIsNonNegative) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> s(1 + rng() % 12);
    std::vector<int> labels(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      s[i] = u(rng);
      labels[i] = static_cast<int>(rng() % 2);
    }
    const double loss = spr_loss(aggregate_only(s), labels);
    EXPECT_GE(loss, 0.0);
    EXPECT_NEAR(loss, oracle::bce_sum(s, labels), 1e-9);
  }
}

TEST(ExpandLabels, InheritsParagraphLabel) {
  std::vector<ParagraphScore> scores = {{0, {}, 0, {}}, {1, {}, 0, {}}, {0, 0, 0, {}}, {1, 0, 0, {}}};
  EXPECT_EQ(expand_labels(scores, std::vector<int>{1, 0}), (std::vector<int>{1, 0, 1, 0}));
  EXPECT_THROW(expand_labels(scores, std::vector<int>{1}), DataError);
}

TEST(SelectParagraphs, DefinitionAndTies) {
  EXPECT_EQ(select_paragraphs(aggregate_only({0.9, 0.1, 0.8, 0.2}), 2).indices, (std::vector<int>{0, 2}));
  EXPECT_EQ(select_paragraphs(aggregate_only({0.4, 0.4, 0.4, 0.4}), 2).indices, (std::vector<int>{0, 1}));
  const auto all = select_paragraphs(aggregate_only({0.1, 0.3}), 5);
  EXPECT_TRUE(all.truncated);
  EXPECT_EQ(all.indices, (std::vector<int>{1, 0}));
  EXPECT_THROW(select_paragraphs(aggregate_only({0.1}), 0), ConfigError);
  // a sub-question pass can lift a paragraph above the question-only ranking
  std::vector<ParagraphScore> mixed = {{0, {}, 0.6, {}}, {1, {}, 0.2, {}}, {2, {}, 0.5, {}}, {1, 0, 0.95, {}}};
  EXPECT_EQ(select_paragraphs(mixed, 2).indices, (std::vector<int>{1, 0}));
}

TEST(SelectParagraphs, MatchesOracleAndMonotoneInvariance) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 10);
    const int rows = 1 + static_cast<int>(rng() % 3);
    std::vector<ParagraphScore> scores;
    std::vector<std::pair<int, double>> flat;
    for (int r = 0; r < rows; ++r) {
      for (int p = 0; p < n; ++p) {
        // coarse grid forces frequent ties
        const double s = static_cast<double>(rng() % 5) / 4.0;
        scores.push_back({p, r == 0 ? std::nullopt : std::optional<int>(r - 1), s, {}});
        flat.emplace_back(p, s);
      }
    }
    const int k = 1 + static_cast<int>(rng() % (n + 2));
    const auto got = select_paragraphs(scores, k).indices;
    EXPECT_EQ(got, oracle::top_k(flat, k));
    auto transformed = scores;
    for (auto& s : transformed) s.score = std::exp(3.0 * s.score) - 7.0;
    EXPECT_EQ(select_paragraphs(transformed, k).indices, got);
  }
}

TEST(EvaluateRetrieval, HandValues) {
  const auto perfect = evaluate_retrieval({{0, 2}, {1}}, {{1, 0, 1, 0}, {0, 1}});
  EXPECT_DOUBLE_EQ(perfect.em, 100.0);
  EXPECT_DOUBLE_EQ(perfect.f1, 100.0);
  const auto half = evaluate_retrieval({{0, 1}}, {{1, 0, 1, 0}});
  EXPECT_DOUBLE_EQ(half.em, 0.0);
  EXPECT_DOUBLE_EQ(half.f1, 50.0);
  EXPECT_THROW(evaluate_retrieval({{0}}, {}), DataError);
}

TEST(TrainSpr, OverfitSeparatesPositives) {
  const auto data = hvsqa_examples();
  ASSERT_EQ(data.size(), 8u);
  auto scorer = Scorer::create(tiny_config(30), vocab_for(data));
  const auto log = train_spr(scorer, data);
  EXPECT_LT(log.tail_mean(5), 0.5 * log.head_mean(5));
  for (const auto& ex : data) {
    const auto scores = score_paragraphs(scorer, ex.question, ex.subquestions, ex.paragraphs);
    const auto selected = select_paragraphs(scores, 2).indices;
    std::vector<int> gold;
    for (std::size_t i = 0; i < ex.labels.size(); ++i) {
      if (ex.labels[i] == 1) gold.push_back(static_cast<int>(i));
    }
    auto sorted = selected;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(sorted, gold) << ex.id;
  }
}

TEST(TrainSpr, ZeroEpochsAndDeterminism) {
  const auto data = hvsqa_examples();
  const auto vocab = vocab_for(data);
  auto idle = Scorer::create(tiny_config(0), vocab);
  EXPECT_TRUE(train_spr(idle, data).losses.empty());
  for (const auto& s : score_paragraphs(idle, data[0].question, data[0].subquestions, data[0].paragraphs)) {
    EXPECT_DOUBLE_EQ(s.score, 0.5);
  }
  auto a = Scorer::create(tiny_config(2), vocab);
  auto b = Scorer::create(tiny_config(2), vocab);
  const auto la = train_spr(a, data), lb = train_spr(b, data);
  ASSERT_FALSE(la.losses.empty());
  EXPECT_EQ(la.losses, lb.losses);
}

TEST(TrainSpr, BatchWithoutPositiveIsSkipped) {
  auto data = hvsqa_examples();
  data.resize(2);
  for (auto& ex : data) std::fill(ex.labels.begin(), ex.labels.end(), 0);
  auto config = tiny_config(1);
  config.training.batch_size = 1;
  auto scorer = Scorer::create(config, vocab_for(data));
  const auto log = train_spr(scorer, data);
  EXPECT_EQ(log.skipped_batches, 2);
  EXPECT_TRUE(log.losses.empty());
}

TEST(Scorer, SaveLoadAndConfigJson) {
  TempDir dir;
  const auto data = hvsqa_examples();
  auto scorer = Scorer::create(tiny_config(1), vocab_for(data));
  train_spr(scorer, data);
  scorer.save(dir / "spr");
  const auto loaded = Scorer::load(dir / "spr");
  const auto a = score_paragraphs(scorer, data[1].question, data[1].subquestions, data[1].paragraphs);
  const auto b = score_paragraphs(loaded, data[1].question, data[1].subquestions, data[1].paragraphs);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_DOUBLE_EQ(a[i].score, b[i].score);

  EXPECT_EQ(scorer_config_from_json(to_json(tiny_config(3))), tiny_config(3));
  EXPECT_THROW(scorer_config_from_json({{"max_len", 4}}), ConfigError);
  // a checkpoint directory works as a backbone identifier
  auto from_dir = tiny_config(0);
  from_dir.backbone.model_identifier = (dir / "spr").string();
  const auto warm = Scorer::create(from_dir, text::Vocabulary{});
  EXPECT_EQ(warm.vocab().size(), scorer.vocab().size());
}

TEST(RetrievalRecords, LayoutAndRoundTrip) {
  std::vector<ParagraphScore> scores = {{0, {}, 0.1, {}}, {1, {}, 0.2, {}}, {0, 0, 0.3, {}}, {1, 0, 0.4, {}}};
  const auto record = make_record("x", scores, select_paragraphs(scores, 1));
  EXPECT_EQ(record.scores, (std::vector<std::vector<double>>{{0.1, 0.2}, {0.3, 0.4}}));
  EXPECT_EQ(record.selected_indices, std::vector<int>{1});
  TempDir dir;
  save_retrieval_records(dir / "r.jsonl", {record, record});
  EXPECT_EQ(load_retrieval_records(dir / "r.jsonl"), (std::vector<RetrievalRecord>{record, record}));
}
