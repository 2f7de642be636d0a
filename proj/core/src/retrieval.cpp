#include "mhqa/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <spdlog/spdlog.h>

#include "mhqa/io.hpp"
#include "mhqa/nn/checkpoint.hpp"

namespace mhqa::retrieval {

using nlohmann::json;

EncodedBatch EncodedBatch::pack(const std::vector<EncodedRow>& rows, std::vector<RowProvenance> provenance) {
  if (rows.size() != provenance.size()) throw DataError("encoded batch: rows and provenance differ in count");
  std::size_t width = 0;
  for (const auto& row : rows) width = std::max(width, row.token_ids.size());
  EncodedBatch batch;
  batch.token_ids = Eigen::MatrixXi::Constant(static_cast<Eigen::Index>(rows.size()),
                                              static_cast<Eigen::Index>(width), text::kPadId);
  batch.attention_mask = Eigen::MatrixXi::Zero(batch.token_ids.rows(), batch.token_ids.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].token_ids.size(); ++c) {
      batch.token_ids(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r].token_ids[c];
      batch.attention_mask(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = 1;
    }
  }
  batch.provenance = std::move(provenance);
  return batch;
}

EncodedRow encode_pair(const ScoringInput& input, int max_len, const text::Vocabulary& vocab) {
  if (max_len < 16) throw ConfigError("encode_pair: max_len must be at least 16");
  std::vector<int> question = vocab.encode(input.question);
  std::vector<int> subquestion = input.subquestion ? vocab.encode(*input.subquestion) : std::vector<int>{};
  std::vector<int> paragraph = vocab.encode(input.paragraph.text());

  const std::size_t separators = input.subquestion ? 4 : 3;  // [CLS] + [SEP]s
  const auto budget = static_cast<std::size_t>(max_len) - separators;
  auto overflow = [&] {
    const std::size_t used = question.size() + subquestion.size() + paragraph.size();
    return used > budget ? used - budget : std::size_t{0};
  };
  for (auto* part : {&paragraph, &subquestion, &question}) {
    const std::size_t excess = overflow();
    if (excess == 0) break;
    part->resize(part->size() - std::min(excess, part->size()));
  }

  EncodedRow row;
  row.token_ids.push_back(text::kClsId);
  row.token_ids.insert(row.token_ids.end(), question.begin(), question.end());
  row.token_ids.push_back(text::kSepId);
  if (input.subquestion) {
    row.token_ids.insert(row.token_ids.end(), subquestion.begin(), subquestion.end());
    row.token_ids.push_back(text::kSepId);
  }
  row.segment_ids.assign(row.token_ids.size(), 0);
  row.token_ids.insert(row.token_ids.end(), paragraph.begin(), paragraph.end());
  row.token_ids.push_back(text::kSepId);
  row.segment_ids.resize(row.token_ids.size(), 1);
  return row;
}

json to_json(const ScorerConfig& config) {
  return {{"backbone", mhqa::to_json(config.backbone)},
          {"max_len", config.max_len},
          {"training", mhqa::to_json(config.training)}};
}

ScorerConfig scorer_config_from_json(const json& doc) {
  ScorerConfig config;
  if (doc.contains("backbone")) {
    config.backbone = backbone_from_json(doc["backbone"]);
  } else if (doc.contains("model_identifier")) {
    const auto id = doc["model_identifier"].get<std::string>();
    config.backbone = is_checkpoint_dir(id) ? BackboneSpec{id} : backbone_preset(id);
  }
  config.max_len = doc.value("max_len", config.max_len);
  if (config.max_len < 16) throw ConfigError("retrieval max_len must be at least 16");
  config.training = training_options_from_json(doc.value("training", json::object()), config.training);
  return config;
}

struct Scorer::Impl {
  Impl(ScorerConfig c, text::Vocabulary v, std::uint64_t seed)
      : config(std::move(c)), vocab(std::move(v)), store(seed) {
    nn::EncoderShape shape;
    shape.vocab_size = vocab.size();
    shape.dim = config.backbone.dim;
    shape.heads = config.backbone.heads;
    shape.hidden = config.backbone.hidden;
    shape.layers = config.backbone.layers;
    shape.max_positions = config.max_len;
    encoder = nn::TransformerEncoder(store, "encoder", shape);
    head = nn::Linear(store, "relevance_head", shape.dim, 2, /*zero_init=*/true);
  }

  ScorerConfig config;
  text::Vocabulary vocab;
  nn::ParameterStore store;
  nn::TransformerEncoder encoder;
  nn::Linear head;
};

Scorer::Scorer(ScorerConfig config, text::Vocabulary vocab, std::uint64_t seed)
    : impl_(std::make_unique<Impl>(std::move(config), std::move(vocab), seed)) {}
Scorer::~Scorer() = default;
Scorer::Scorer(Scorer&&) noexcept = default;
Scorer& Scorer::operator=(Scorer&&) noexcept = default;

Scorer Scorer::create(const ScorerConfig& config, const text::Vocabulary& vocab) {
  if (is_checkpoint_dir(config.backbone.model_identifier)) {
    Scorer scorer = load(config.backbone.model_identifier);
    scorer.impl_->config.training = config.training;
    return scorer;
  }
  ScorerConfig resolved = config;
  const auto preset = backbone_preset(config.backbone.model_identifier);
  resolved.backbone = preset;
  return Scorer(resolved, vocab, config.training.seed);
}

const ScorerConfig& Scorer::config() const { return impl_->config; }
const text::Vocabulary& Scorer::vocab() const { return impl_->vocab; }
nn::ParameterStore& Scorer::parameters() { return impl_->store; }

nn::Var Scorer::forward(nn::Graph& g, const EncodedRow& row) const {
  if (!impl_) throw RuntimeError("scorer handle is empty");
  const nn::Var hidden = impl_->encoder(g, row.token_ids, row.segment_ids);
  return impl_->head(g, g.rows(hidden, 0, 1));
}

std::array<double, 2> Scorer::logits(const EncodedRow& row) const {
  nn::Graph g;
  const auto& out = g.value(forward(g, row));
  return {out(0, 0), out(0, 1)};
}

void Scorer::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  json config = to_json(impl_->config);
  config["kind"] = "scorer";
  io::write_file_atomic(dir / "config.json", config.dump(2) + "\n");
  impl_->vocab.save(dir / "vocab.json");
  nn::save_weights(impl_->store, dir / "weights.bin");
}

Scorer Scorer::load(const std::filesystem::path& dir) {
  const json config = io::read_json(dir / "config.json");
  if (config.value("kind", "") != "scorer") throw DataError("'" + dir.string() + "' is not a scorer checkpoint");
  Scorer scorer(scorer_config_from_json(config), text::Vocabulary::load(dir / "vocab.json"), 0);
  nn::load_weights(scorer.impl_->store, dir / "weights.bin");
  return scorer;
}

namespace {

double relevance_probability(const std::array<double, 2>& logits) {
  const double m = std::max(logits[0], logits[1]);
  const double e0 = std::exp(logits[0] - m);
  const double e1 = std::exp(logits[1] - m);
  return e1 / (e0 + e1);
}

struct ItemSpec {
  int paragraph_index;
  std::optional<int> subquestion_index;
};

std::vector<ItemSpec> item_layout(std::size_t subquestions, std::size_t paragraphs) {
  std::vector<ItemSpec> items;
  for (std::size_t p = 0; p < paragraphs; ++p) items.push_back({static_cast<int>(p), std::nullopt});
  for (std::size_t j = 0; j < subquestions; ++j) {
    for (std::size_t p = 0; p < paragraphs; ++p) items.push_back({static_cast<int>(p), static_cast<int>(j)});
  }
  return items;
}

EncodedRow encode_item(const Scorer& scorer, const std::string& question, const qd::SubQuestionSet& subquestions,
                       const std::vector<corpus::Paragraph>& paragraphs, const ItemSpec& item) {
  ScoringInput input{question, std::nullopt, paragraphs[static_cast<std::size_t>(item.paragraph_index)]};
  if (item.subquestion_index) input.subquestion = subquestions.subquestions[static_cast<std::size_t>(*item.subquestion_index)];
  return encode_pair(input, scorer.config().max_len, scorer.vocab());
}

}  // namespace

std::vector<ParagraphScore> score_paragraphs(const Scorer& scorer, const std::string& question,
                                             const qd::SubQuestionSet& subquestions,
                                             const std::vector<corpus::Paragraph>& paragraphs) {
  if (paragraphs.empty()) throw DataError("score_paragraphs: no paragraphs");
  std::vector<ParagraphScore> scores;
  for (const auto& item : item_layout(subquestions.size(), paragraphs.size())) {
    ParagraphScore s;
    s.paragraph_index = item.paragraph_index;
    s.subquestion_index = item.subquestion_index;
    s.logits = scorer.logits(encode_item(scorer, question, subquestions, paragraphs, item));
    s.score = relevance_probability(s.logits);
    scores.push_back(s);
  }
  return scores;
}

double spr_loss(std::span<const ParagraphScore> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw DataError("spr_loss: " + std::to_string(scores.size()) + " scores vs " + std::to_string(labels.size()) +
                    " labels");
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double s = std::clamp(scores[i].score, kProbabilityEpsilon, 1.0 - kProbabilityEpsilon);
    loss -= labels[i] == 1 ? std::log(s) : std::log(1.0 - s);
  }
  return loss;
}

std::vector<int> expand_labels(std::span<const ParagraphScore> scores, std::span<const int> paragraph_labels) {
  std::vector<int> labels;
  labels.reserve(scores.size());
  for (const auto& s : scores) {
    if (s.paragraph_index < 0 || static_cast<std::size_t>(s.paragraph_index) >= paragraph_labels.size()) {
      throw DataError("expand_labels: paragraph index " + std::to_string(s.paragraph_index) + " has no label");
    }
    labels.push_back(paragraph_labels[static_cast<std::size_t>(s.paragraph_index)]);
  }
  return labels;
}

Selection select_paragraphs(std::span<const ParagraphScore> scores, int k) {
  if (k < 1) throw ConfigError("select_paragraphs: k must be >= 1");
  std::map<int, double> aggregate;
  for (const auto& s : scores) {
    auto [it, inserted] = aggregate.emplace(s.paragraph_index, s.score);
    if (!inserted) it->second = std::max(it->second, s.score);
  }
  std::vector<std::pair<int, double>> ranked(aggregate.begin(), aggregate.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Selection selection;
  selection.truncated = static_cast<std::size_t>(k) > ranked.size();
  const std::size_t take = std::min(static_cast<std::size_t>(k), ranked.size());
  for (std::size_t i = 0; i < take; ++i) selection.indices.push_back(ranked[i].first);
  return selection;
}

TrainingLog train_spr(Scorer& scorer, const std::vector<SprExample>& dataset) {
  struct Item {
    EncodedRow row;
    int label;
  };
  std::vector<std::vector<Item>> encoded;
  encoded.reserve(dataset.size());
  for (const auto& example : dataset) {
    if (example.labels.size() != example.paragraphs.size()) {
      throw DataError("example '" + example.id + "': " + std::to_string(example.labels.size()) + " labels for " +
                      std::to_string(example.paragraphs.size()) + " paragraphs");
    }
    std::vector<Item> items;
    for (const auto& spec : item_layout(example.subquestions.size(), example.paragraphs.size())) {
      items.push_back({encode_item(scorer, example.question, example.subquestions, example.paragraphs, spec),
                       example.labels[static_cast<std::size_t>(spec.paragraph_index)]});
    }
    encoded.push_back(std::move(items));
  }

  return run_training(scorer.parameters(), dataset.size(), scorer.config().training,
                      [&](std::span<const std::size_t> batch) -> std::optional<double> {
                        std::size_t items = 0;
                        bool any_positive = false;
                        for (std::size_t idx : batch) {
                          items += encoded[idx].size();
                          for (const auto& item : encoded[idx]) any_positive |= item.label == 1;
                        }
                        if (!any_positive || items == 0) return std::nullopt;
                        double summed = 0.0;
                        for (std::size_t idx : batch) {
                          for (const auto& item : encoded[idx]) {
                            nn::Graph g;
                            const nn::Var logits = scorer.forward(g, item.row);
                            const int target[] = {item.label};
                            const nn::Var ce = g.cross_entropy(logits, target);
                            summed += g.scalar(ce);
                            g.backward(g.scale(ce, 1.0 / static_cast<double>(items)));
                          }
                        }
                        return summed;
                      });
}

metrics::RetrievalQuality evaluate_retrieval(const std::vector<std::vector<int>>& selected,
                                             const std::vector<std::vector<int>>& gold_labels) {
  if (selected.size() != gold_labels.size()) {
    throw DataError("evaluate_retrieval: " + std::to_string(selected.size()) + " selections vs " +
                    std::to_string(gold_labels.size()) + " label sets");
  }
  metrics::RetrievalQuality quality;
  quality.count = selected.size();
  if (selected.empty()) return quality;
  double em = 0.0, f1 = 0.0;
  for (std::size_t i = 0; i < selected.size(); ++i) {
    const std::set<int> predicted(selected[i].begin(), selected[i].end());
    std::set<int> gold;
    for (std::size_t p = 0; p < gold_labels[i].size(); ++p) {
      if (gold_labels[i][p] == 1) gold.insert(static_cast<int>(p));
    }
    if (predicted == gold) em += 1.0;
    std::size_t tp = 0;
    for (int p : predicted) tp += gold.count(p);
    if (predicted.empty() && gold.empty()) {
      f1 += 1.0;
    } else if (tp > 0) {
      const double precision = static_cast<double>(tp) / static_cast<double>(predicted.size());
      const double recall = static_cast<double>(tp) / static_cast<double>(gold.size());
      f1 += 2.0 * precision * recall / (precision + recall);
    }
  }
  const auto n = static_cast<double>(selected.size());
  quality.em = metrics::round2(100.0 * em / n);
  quality.f1 = metrics::round2(100.0 * f1 / n);
  return quality;
}

RetrievalRecord make_record(const std::string& id, std::span<const ParagraphScore> scores, const Selection& selection) {
  RetrievalRecord record;
  record.id = id;
  record.selected_indices = selection.indices;
  int paragraphs = 0;
  int rows = 1;
  for (const auto& s : scores) {
    paragraphs = std::max(paragraphs, s.paragraph_index + 1);
    if (s.subquestion_index) rows = std::max(rows, *s.subquestion_index + 2);
  }
  record.scores.assign(static_cast<std::size_t>(rows), std::vector<double>(static_cast<std::size_t>(paragraphs), 0.0));
  for (const auto& s : scores) {
    const auto row = static_cast<std::size_t>(s.subquestion_index ? *s.subquestion_index + 1 : 0);
    record.scores[row][static_cast<std::size_t>(s.paragraph_index)] = s.score;
  }
  return record;
}

json to_json(const RetrievalRecord& record) {
  return {{"id", record.id}, {"selected_indices", record.selected_indices}, {"scores", record.scores}};
}

RetrievalRecord retrieval_record_from_json(const json& doc) {
  try {
    RetrievalRecord record;
    record.id = doc.at("id").get<std::string>();
    record.selected_indices = doc.at("selected_indices").get<std::vector<int>>();
    record.scores = doc.at("scores").get<std::vector<std::vector<double>>>();
    return record;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed retrieval record: ") + e.what());
  }
}

void save_retrieval_records(const std::filesystem::path& path, const std::vector<RetrievalRecord>& records) {
  std::vector<json> docs;
  for (const auto& r : records) docs.push_back(to_json(r));
  io::write_jsonl(path, docs);
}

std::vector<RetrievalRecord> load_retrieval_records(const std::filesystem::path& path) {
  std::vector<RetrievalRecord> records;
  for (const auto& doc : io::read_jsonl(path)) records.push_back(retrieval_record_from_json(doc));
  return records;
}

}  // namespace mhqa::retrieval
