#include "mhqa/reader.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <set>

#include "mhqa/io.hpp"
#include "mhqa/nn/checkpoint.hpp"
#include "mhqa/nn/layers.hpp"

namespace mhqa::reader {

using nlohmann::json;

std::vector<int> ReaderInput::context_mask() const {
  std::vector<int> mask(token_ids.size(), 0);
  for (std::size_t i = static_cast<std::size_t>(question_length); i < token_ids.size(); ++i) {
    mask[i] = token_ids[i] == text::kSepId ? 0 : 1;
  }
  return mask;
}

std::string ReaderInput::span_text(int start, int end) const {
  std::string out;
  for (int i = std::max(start, 0); i <= end && i < static_cast<int>(pieces.size()); ++i) {
    const std::string& p = pieces[static_cast<std::size_t>(i)];
    if (p.compare(0, text::kSpaceMarker.size(), text::kSpaceMarker) == 0) {
      out += ' ';
      out += p.substr(text::kSpaceMarker.size());
    } else {
      out += p;
    }
  }
  const auto first = out.find_first_not_of(' ');
  if (first == std::string::npos) return {};
  return out.substr(first, out.find_last_not_of(' ') - first + 1);
}

namespace {

void append(ReaderInput& input, const std::vector<text::Piece>& pieces, const text::Vocabulary& vocab, int segment) {
  for (const auto& p : pieces) {
    input.token_ids.push_back(vocab.id(p.text));
    input.segment_ids.push_back(segment);
    input.pieces.push_back(p.text);
  }
}

void append_special(ReaderInput& input, int id, int segment) {
  input.token_ids.push_back(id);
  input.segment_ids.push_back(segment);
  input.pieces.emplace_back();
}

}  // namespace

ReaderInput build_reader_input(const std::string& question, const qd::SubQuestionSet& subquestions,
                               const std::vector<corpus::Paragraph>& paragraphs, int max_positions,
                               const text::Vocabulary& vocab) {
  if (paragraphs.empty()) throw DataError("reader input needs at least one paragraph");
  ReaderInput input;
  input.max_positions = max_positions;
  const auto limit = static_cast<std::size_t>(max_positions);
  const auto question_pieces = text::pre_tokenize(question);
  // [CLS] Q [SEP] plus the closing [SEP]
  if (question_pieces.size() + 3 > limit) {
    throw DataError("question of " + std::to_string(question_pieces.size()) + " tokens does not fit in " +
                    std::to_string(max_positions) + " positions");
  }
  append_special(input, text::kClsId, 0);
  append(input, question_pieces, vocab, 0);
  append_special(input, text::kSepId, 0);
  for (const auto& subquestion : subquestions.subquestions) {
    const auto pieces = text::pre_tokenize(subquestion);
    if (input.size() + pieces.size() + 2 > limit) break;
    append(input, pieces, vocab, 0);
    append_special(input, text::kSepId, 0);
  }
  input.question_length = static_cast<int>(input.size());

  bool full = false;
  for (std::size_t p = 0; p < paragraphs.size(); ++p) {
    input.titles.push_back(paragraphs[p].title);
    if (full) continue;
    const auto title = text::pre_tokenize(paragraphs[p].title);
    if (input.size() + title.size() + 1 > limit) {
      full = true;
      continue;
    }
    append(input, title, vocab, 1);
    for (std::size_t s = 0; s < paragraphs[p].sentences.size(); ++s) {
      const auto pieces = text::pre_tokenize(paragraphs[p].sentences[s]);
      if (input.size() + pieces.size() + 1 > limit) {
        full = true;
        break;
      }
      if (pieces.empty()) continue;
      const int start = static_cast<int>(input.size());
      append(input, pieces, vocab, 1);
      input.sentence_spans.push_back(
          {static_cast<int>(p), static_cast<int>(s), start, static_cast<int>(input.size())});
    }
  }
  append_special(input, text::kSepId, 1);
  return input;
}

std::pair<int, int> extract_best_span(std::span<const double> start_logits, std::span<const double> end_logits,
                                      std::span<const int> context_mask, int max_answer_len) {
  if (start_logits.size() != end_logits.size() || start_logits.size() != context_mask.size()) {
    throw DataError("extract_best_span: start, end and mask lengths differ");
  }
  if (max_answer_len < 1) throw ConfigError("max_answer_len must be >= 1");
  const auto n = static_cast<int>(start_logits.size());
  std::pair<int, int> best{-1, -1};
  double best_score = 0.0;
  for (int s = 0; s < n; ++s) {
    if (context_mask[static_cast<std::size_t>(s)] == 0) continue;
    const int last = std::min(n - 1, s + max_answer_len - 1);
    for (int e = s; e <= last; ++e) {
      if (context_mask[static_cast<std::size_t>(e)] == 0) continue;
      const double score = start_logits[static_cast<std::size_t>(s)] + end_logits[static_cast<std::size_t>(e)];
      if (best.first < 0 || score > best_score) {
        best = {s, e};
        best_score = score;
      }
    }
  }
  if (best.first < 0) throw RuntimeError("no valid answer span");
  return best;
}

double answer_type_loss(std::span<const double> probs, corpus::AnswerType gold) {
  if (probs.size() != 3) throw DataError("answer_type_loss expects 3 probabilities");
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw DataError("answer_type_loss: negative or NaN probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw DataError("answer_type_loss: probabilities sum to " + std::to_string(sum));
  return -std::log(std::max(probs[static_cast<std::size_t>(gold)], kTypeProbabilityEpsilon));
}

double reading_loss(double l_type, double l_start, double l_end, double l_sup, const LossWeights& w) {
  return w.type * l_type + w.span * (l_start + l_end) + w.sup * l_sup;
}

std::vector<int> select_sentence_indices(std::span<const double> sentence_scores, double threshold) {
  std::vector<int> chosen;
  for (std::size_t i = 0; i < sentence_scores.size(); ++i) {
    if (sentence_scores[i] >= threshold) chosen.push_back(static_cast<int>(i));
  }
  if (chosen.size() >= 2) return chosen;
  std::vector<int> order(sentence_scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return sentence_scores[static_cast<std::size_t>(a)] > sentence_scores[static_cast<std::size_t>(b)];
  });
  order.resize(std::min<std::size_t>(2, order.size()));
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<corpus::SupportingFact> select_supporting_facts(std::span<const double> sentence_scores,
                                                            const ReaderInput& input, double threshold) {
  if (sentence_scores.size() != input.sentence_spans.size()) {
    throw DataError("select_supporting_facts: " + std::to_string(sentence_scores.size()) + " scores for " +
                    std::to_string(input.sentence_spans.size()) + " sentences");
  }
  std::vector<corpus::SupportingFact> facts;
  for (int i : select_sentence_indices(sentence_scores, threshold)) {
    const auto& span = input.sentence_spans[static_cast<std::size_t>(i)];
    facts.push_back({input.titles[static_cast<std::size_t>(span.paragraph_index)], span.sentence_index});
  }
  return facts;
}

void validate(const ReaderConfig& config) {
  if (config.max_positions < 8) throw ConfigError("reader max_positions must be at least 8");
  if (config.max_answer_len < 1) throw ConfigError("reader max_answer_len must be >= 1");
  if (!(config.sp_threshold >= 0.0 && config.sp_threshold <= 1.0)) {
    throw ConfigError("reader sp_threshold must lie in [0, 1]");
  }
  if (config.weights.type < 0 || config.weights.span < 0 || config.weights.sup < 0) {
    throw ConfigError("reader loss weights must be non-negative");
  }
}

json to_json(const ReaderConfig& config) {
  return {{"backbone", mhqa::to_json(config.backbone)},
          {"max_positions", config.max_positions},
          {"max_answer_len", config.max_answer_len},
          {"sp_threshold", config.sp_threshold},
          {"loss_weights", {config.weights.type, config.weights.span, config.weights.sup}},
          {"training", mhqa::to_json(config.training)}};
}

ReaderConfig reader_config_from_json(const json& doc) {
  ReaderConfig config;
  try {
    if (doc.contains("backbone")) {
      config.backbone = backbone_from_json(doc["backbone"]);
    } else if (doc.contains("model_identifier")) {
      const auto id = doc["model_identifier"].get<std::string>();
      config.backbone = is_checkpoint_dir(id) ? BackboneSpec{id} : backbone_preset(id);
    }
    config.max_positions = doc.value("max_positions", config.max_positions);
    config.max_answer_len = doc.value("max_answer_len", config.max_answer_len);
    config.sp_threshold = doc.value("sp_threshold", config.sp_threshold);
    if (doc.contains("loss_weights")) {
      const auto w = doc["loss_weights"].get<std::vector<double>>();
      if (w.size() != 3) throw ConfigError("loss_weights needs three values");
      config.weights = {w[0], w[1], w[2]};
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("reader config: ") + e.what());
  }
  config.training = training_options_from_json(doc.value("training", json::object()), config.training);
  validate(config);
  return config;
}

ReaderPrediction decode_prediction(const ReaderInput& input, const ReaderOutputs& outputs, int max_answer_len,
                                   double sp_threshold) {
  ReaderPrediction prediction;
  const double m = *std::max_element(outputs.type_logits.begin(), outputs.type_logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    prediction.type_probs[i] = std::exp(outputs.type_logits[i] - m);
    z += prediction.type_probs[i];
  }
  for (double& p : prediction.type_probs) p /= z;
  const auto best = static_cast<std::size_t>(
      std::max_element(outputs.type_logits.begin(), outputs.type_logits.end()) - outputs.type_logits.begin());
  prediction.answer_type = static_cast<corpus::AnswerType>(best);

  if (prediction.answer_type == corpus::AnswerType::kSpan) {
    try {
      const auto span = extract_best_span(outputs.start_logits, outputs.end_logits, input.context_mask(),
                                          max_answer_len);
      prediction.span = span;
      prediction.answer_text = input.span_text(span.first, span.second);
    } catch (const RuntimeError&) {
      prediction.answer_type = outputs.type_logits[1] >= outputs.type_logits[0] ? corpus::AnswerType::kPositive
                                                                                 : corpus::AnswerType::kNegative;
    }
  }
  if (prediction.answer_type == corpus::AnswerType::kPositive) prediction.answer_text = "yes";
  if (prediction.answer_type == corpus::AnswerType::kNegative) prediction.answer_text = "no";

  for (double logit : outputs.sentence_logits) prediction.sentence_scores.push_back(1.0 / (1.0 + std::exp(-logit)));
  prediction.supporting_facts = select_supporting_facts(prediction.sentence_scores, input, sp_threshold);
  return prediction;
}

namespace {

std::string fold(std::string_view piece) {
  std::string out(text::strip_marker(piece));
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::optional<std::pair<int, int>> find_tokens(const std::vector<std::string>& folded,
                                               const std::vector<std::string>& needle, int begin, int end) {
  const auto length = static_cast<int>(needle.size());
  for (int s = begin; s + length <= end; ++s) {
    if (std::equal(needle.begin(), needle.end(), folded.begin() + s)) return std::pair{s, s + length - 1};
  }
  return std::nullopt;
}

}  // namespace

ReaderExample build_reader_example(const corpus::MultiHopExample& example, const qd::SubQuestionSet& subquestions,
                                   const std::vector<corpus::Paragraph>& paragraphs, int max_positions,
                                   const text::Vocabulary& vocab) {
  if (example.supporting_facts.empty()) throw DataError("example '" + example.id + "': no supporting facts");
  ReaderExample out;
  out.id = example.id;
  out.input = build_reader_input(example.question, subquestions, paragraphs, max_positions, vocab);
  out.answer_type = example.answer_type;

  const std::set<corpus::SupportingFact> gold(example.supporting_facts.begin(), example.supporting_facts.end());
  std::vector<int> supporting;
  for (std::size_t i = 0; i < out.input.sentence_spans.size(); ++i) {
    const auto& span = out.input.sentence_spans[i];
    const bool label =
        gold.count({out.input.titles[static_cast<std::size_t>(span.paragraph_index)], span.sentence_index}) > 0;
    out.sentence_labels.push_back(label ? 1 : 0);
    if (label) supporting.push_back(static_cast<int>(i));
  }

  if (example.answer_type == corpus::AnswerType::kSpan) {
    std::vector<std::string> needle;
    for (const auto& p : text::pre_tokenize(example.answer)) needle.push_back(fold(p.text));
    if (needle.empty()) throw DataError("example '" + example.id + "': empty span answer");
    std::vector<std::string> folded;
    for (const auto& p : out.input.pieces) folded.push_back(fold(p));
    for (int i : supporting) {
      const auto& span = out.input.sentence_spans[static_cast<std::size_t>(i)];
      if ((out.span = find_tokens(folded, needle, span.token_start, span.token_end))) break;
    }
    if (!out.span) {
      out.span = find_tokens(folded, needle, out.input.question_length, static_cast<int>(out.input.size()) - 1);
    }
    if (!out.span) {
      throw DataError("example '" + example.id + "': answer '" + example.answer + "' not found in the context");
    }
  }
  return out;
}

struct Reader::Impl {
  Impl(ReaderConfig c, text::Vocabulary v, std::uint64_t seed)
      : config(std::move(c)), vocab(std::move(v)), store(seed) {
    validate(config);
    nn::EncoderShape shape;
    shape.vocab_size = vocab.size();
    shape.dim = config.backbone.dim;
    shape.heads = config.backbone.heads;
    shape.hidden = config.backbone.hidden;
    shape.layers = config.backbone.layers;
    shape.max_positions = config.max_positions;
    encoder = nn::TransformerEncoder(store, "encoder", shape);
    start_head = nn::Linear(store, "start_head", shape.dim, 1);
    end_head = nn::Linear(store, "end_head", shape.dim, 1);
    sup_head = nn::Linear(store, "sup_head", shape.dim, 1);
    type_head = nn::Linear(store, "type_head", shape.dim, 3);
  }

  struct Heads {
    nn::Var start, end, sentences, type;
  };

  Heads forward(nn::Graph& g, const ReaderInput& input) const {
    const nn::Var hidden = encoder(g, input.token_ids, input.segment_ids);
    Heads heads;
    heads.start = g.transpose(start_head(g, hidden));
    heads.end = g.transpose(end_head(g, hidden));
    heads.type = type_head(g, g.rows(hidden, 0, 1));
    if (!input.sentence_spans.empty()) {
      std::vector<nn::Var> pooled;
      for (const auto& span : input.sentence_spans) {
        pooled.push_back(g.mean_rows(hidden, span.token_start, span.token_end - span.token_start));
      }
      heads.sentences = sup_head(g, g.concat_rows(pooled));
    }
    return heads;
  }

  ReaderConfig config;
  text::Vocabulary vocab;
  nn::ParameterStore store;
  nn::TransformerEncoder encoder;
  nn::Linear start_head, end_head, sup_head, type_head;
};

Reader::Reader(ReaderConfig config, text::Vocabulary vocab, std::uint64_t seed)
    : impl_(std::make_unique<Impl>(std::move(config), std::move(vocab), seed)) {}
Reader::~Reader() = default;
Reader::Reader(Reader&&) noexcept = default;
Reader& Reader::operator=(Reader&&) noexcept = default;

Reader Reader::create(const ReaderConfig& config, const text::Vocabulary& vocab) {
  validate(config);
  if (is_checkpoint_dir(config.backbone.model_identifier)) {
    Reader reader = load(config.backbone.model_identifier);
    reader.impl_->config.training = config.training;
    reader.impl_->config.weights = config.weights;
    reader.impl_->config.sp_threshold = config.sp_threshold;
    reader.impl_->config.max_answer_len = config.max_answer_len;
    return reader;
  }
  ReaderConfig resolved = config;
  resolved.backbone = backbone_preset(config.backbone.model_identifier);
  return Reader(resolved, vocab, config.training.seed);
}

const ReaderConfig& Reader::config() const { return impl_->config; }
const text::Vocabulary& Reader::vocab() const { return impl_->vocab; }
nn::ParameterStore& Reader::parameters() { return impl_->store; }

ReaderOutputs Reader::outputs(const ReaderInput& input) const {
  nn::Graph g;
  const auto heads = impl_->forward(g, input);
  ReaderOutputs out;
  const auto& start = g.value(heads.start);
  const auto& end = g.value(heads.end);
  out.start_logits.assign(start.data(), start.data() + start.size());
  out.end_logits.assign(end.data(), end.data() + end.size());
  if (heads.sentences.valid()) {
    const auto& sentences = g.value(heads.sentences);
    out.sentence_logits.assign(sentences.data(), sentences.data() + sentences.size());
  }
  for (int i = 0; i < 3; ++i) out.type_logits[static_cast<std::size_t>(i)] = g.value(heads.type)(0, i);
  return out;
}

nn::Var Reader::loss(nn::Graph& g, const ReaderExample& example) const {
  const auto& input = example.input;
  if (example.sentence_labels.size() != input.sentence_spans.size()) {
    throw DataError("example '" + example.id + "': sentence labels do not match the input");
  }
  if (example.answer_type == corpus::AnswerType::kSpan && !example.span) {
    throw DataError("example '" + example.id + "': span answer without a gold span");
  }
  const auto heads = impl_->forward(g, input);
  const int type_target[] = {static_cast<int>(example.answer_type)};
  const nn::Var type = g.cross_entropy(heads.type, type_target);

  nn::Var span = g.constant(nn::Matrix::Zero(1, 1));
  if (example.span) {
    const auto mask_values = input.context_mask();
    nn::Matrix mask(1, static_cast<Eigen::Index>(mask_values.size()));
    for (std::size_t i = 0; i < mask_values.size(); ++i) {
      mask(0, static_cast<Eigen::Index>(i)) = mask_values[i] ? 0.0 : nn::kMaskedOut;
    }
    const int start_target[] = {example.span->first};
    const int end_target[] = {example.span->second};
    span = g.add(g.cross_entropy(heads.start, start_target, &mask), g.cross_entropy(heads.end, end_target, &mask));
  }

  nn::Var sup = g.constant(nn::Matrix::Zero(1, 1));
  if (heads.sentences.valid()) {
    std::vector<double> labels(example.sentence_labels.begin(), example.sentence_labels.end());
    sup = g.bce_with_logits(heads.sentences, labels);
  }
  const auto& w = impl_->config.weights;
  return g.weighted_sum({type, span, sup}, {w.type, w.span, w.sup});
}

void Reader::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  json config = to_json(impl_->config);
  config["kind"] = "reader";
  io::write_file_atomic(dir / "config.json", config.dump(2) + "\n");
  impl_->vocab.save(dir / "vocab.json");
  nn::save_weights(impl_->store, dir / "weights.bin");
}

Reader Reader::load(const std::filesystem::path& dir) {
  const json config = io::read_json(dir / "config.json");
  if (config.value("kind", "") != "reader") throw DataError("'" + dir.string() + "' is not a reader checkpoint");
  Reader reader(reader_config_from_json(config), text::Vocabulary::load(dir / "vocab.json"), 0);
  nn::load_weights(reader.impl_->store, dir / "weights.bin");
  return reader;
}

ReaderPrediction predict(const Reader& reader, const ReaderInput& input) {
  return decode_prediction(input, reader.outputs(input), reader.config().max_answer_len,
                           reader.config().sp_threshold);
}

TrainingLog train_reader(Reader& reader, const std::vector<ReaderExample>& examples) {
  for (const auto& e : examples) {
    if (e.sentence_labels.size() != e.input.sentence_spans.size()) {
      throw DataError("example '" + e.id + "': missing supporting-fact labels");
    }
    if (e.answer_type == corpus::AnswerType::kSpan && !e.span) {
      throw DataError("example '" + e.id + "': missing answer span label");
    }
  }
  return run_training(reader.parameters(), examples.size(), reader.config().training,
                      [&](std::span<const std::size_t> batch) -> std::optional<double> {
                        double total = 0.0;
                        const double weight = 1.0 / static_cast<double>(batch.size());
                        for (std::size_t idx : batch) {
                          nn::Graph g;
                          const nn::Var l = reader.loss(g, examples[idx]);
                          total += g.scalar(l);
                          g.backward(g.scale(l, weight));
                        }
                        return total * weight;
                      });
}

}  // namespace mhqa::reader
