#include "mhqa/decomposer.hpp"

#include <algorithm>

#include "mhqa/io.hpp"
#include "mhqa/nn/checkpoint.hpp"
#include "mhqa/nn/layers.hpp"

namespace mhqa::qd {

using nlohmann::json;

void validate(const GeneratorConfig& config) {
  if (config.max_input_length <= 0) throw ConfigError("generator max_input_length must be positive");
  if (config.max_output_length <= 0) throw ConfigError("generator max_output_length must be positive");
  if (config.training.batch_size <= 0) throw ConfigError("generator batch_size must be positive");
  if (!(config.training.learning_rate > 0.0)) throw ConfigError("generator learning_rate must be > 0");
  if (config.training.epochs < 0) throw ConfigError("generator epochs must be >= 0");
}

json to_json(const GeneratorConfig& config) {
  return {{"backbone", mhqa::to_json(config.backbone)},
          {"max_input_length", config.max_input_length},
          {"max_output_length", config.max_output_length},
          {"training", mhqa::to_json(config.training)}};
}

GeneratorConfig generator_config_from_json(const json& doc) {
  GeneratorConfig config;
  if (doc.contains("backbone")) {
    config.backbone = backbone_from_json(doc["backbone"]);
  } else if (doc.contains("model_identifier")) {
    const auto id = doc["model_identifier"].get<std::string>();
    config.backbone = is_checkpoint_dir(id) ? BackboneSpec{id} : backbone_preset(id);
  }
  config.max_input_length = doc.value("max_input_length", config.max_input_length);
  config.max_output_length = doc.value("max_output_length", config.max_output_length);
  config.training = training_options_from_json(doc.value("training", json::object()), config.training);
  validate(config);
  return config;
}

std::string build_source_text(const std::string& question, const std::vector<corpus::Paragraph>& paragraphs,
                              int max_input_length) {
  std::string source = question;
  for (const auto& p : paragraphs) {
    source += ' ';
    source += text::kContextSep;
    source += ' ';
    source += p.text();
  }
  const auto pieces = text::pre_tokenize(source);
  if (pieces.size() <= static_cast<std::size_t>(max_input_length)) return source;
  return source.substr(0, pieces[static_cast<std::size_t>(max_input_length) - 1].end);
}

QDTrainingPair build_qd_training_pair(const corpus::DecompositionExample& example, const GeneratorConfig& config) {
  if (example.subquestions.empty()) throw DataError("example '" + example.id + "': no gold sub-questions");
  if (example.evidence_paragraphs.empty()) throw DataError("example '" + example.id + "': no evidence paragraphs");
  if (example.question.empty()) throw DataError("example '" + example.id + "': empty question");
  return {example.id, build_source_text(example.question, example.evidence_paragraphs, config.max_input_length),
          serialize_subquestions(example.subquestions)};
}

struct Generator::Impl {
  Impl(GeneratorConfig c, text::Vocabulary v, std::uint64_t seed)
      : config(std::move(c)), vocab(std::move(v)), store(seed) {
    validate(config);
    nn::EncoderShape shape;
    shape.vocab_size = vocab.size();
    shape.dim = config.backbone.dim;
    shape.heads = config.backbone.heads;
    shape.hidden = config.backbone.hidden;
    shape.layers = config.backbone.layers;
    shape.max_positions = config.max_input_length;
    shape.segments = 1;
    encoder = nn::TransformerEncoder(store, "encoder", shape);
    decoder_positions = &store.normal("decoder.positions", config.max_output_length + 1, shape.dim, 0.02);
    for (int i = 0; i < shape.layers; ++i) {
      decoder.emplace_back(store, "decoder.layer" + std::to_string(i), shape.dim, shape.heads, shape.hidden);
    }
    decoder_norm = nn::LayerNorm(store, "decoder.norm", shape.dim);
    output_bias = &store.zeros("output.bias", 1, vocab.size());
    output_mask = nn::Matrix::Zero(1, vocab.size());
    for (int id = 0; id < text::kFirstRegularId; ++id) {
      if (id != text::kSubQuestionSepId && id != text::kEosId) output_mask(0, id) = nn::kMaskedOut;
    }
  }

  std::vector<int> encode_source(const std::string& source) const {
    std::vector<int> ids = vocab.encode(source);
    if (ids.empty()) throw DataError("generator source is empty");
    if (ids.size() > static_cast<std::size_t>(config.max_input_length)) {
      ids.resize(static_cast<std::size_t>(config.max_input_length));
    }
    return ids;
  }

  // Next-token logits for every position of the decoder input.
  nn::Var logits(nn::Graph& g, nn::Var memory, std::span<const int> decoder_input) const {
    std::vector<int> positions(decoder_input.size());
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
    nn::Var x = g.add(g.embedding(encoder.token_embedding(), decoder_input), g.embedding(*decoder_positions, positions));
    const nn::Matrix mask = nn::causal_mask(static_cast<int>(decoder_input.size()));
    for (const auto& layer : decoder) x = layer(g, x, memory, &mask, nullptr);
    x = decoder_norm(g, x);
    return g.add_row(g.matmul_transposed(x, g.param(encoder.token_embedding())), g.param(*output_bias));
  }

  GeneratorConfig config;
  text::Vocabulary vocab;
  nn::ParameterStore store;
  nn::TransformerEncoder encoder;
  nn::Parameter* decoder_positions = nullptr;
  std::vector<nn::DecoderLayer> decoder;
  nn::LayerNorm decoder_norm;
  nn::Parameter* output_bias = nullptr;
  nn::Matrix output_mask;
};

Generator::Generator(GeneratorConfig config, text::Vocabulary vocab, std::uint64_t seed)
    : impl_(std::make_unique<Impl>(std::move(config), std::move(vocab), seed)) {}
Generator::~Generator() = default;
Generator::Generator(Generator&&) noexcept = default;
Generator& Generator::operator=(Generator&&) noexcept = default;

Generator Generator::create(const GeneratorConfig& config, const text::Vocabulary& vocab) {
  validate(config);
  if (is_checkpoint_dir(config.backbone.model_identifier)) {
    Generator generator = load(config.backbone.model_identifier);
    generator.impl_->config.training = config.training;
    return generator;
  }
  GeneratorConfig resolved = config;
  resolved.backbone = backbone_preset(config.backbone.model_identifier);
  return Generator(resolved, vocab, config.training.seed);
}

const GeneratorConfig& Generator::config() const { return impl_->config; }
const text::Vocabulary& Generator::vocab() const { return impl_->vocab; }
nn::ParameterStore& Generator::parameters() { return impl_->store; }

nn::Var Generator::loss(nn::Graph& g, const std::string& source_text, const std::string& target_text) const {
  const auto source = impl_->encode_source(source_text);
  std::vector<int> target = impl_->vocab.encode(target_text);
  const auto budget = static_cast<std::size_t>(impl_->config.max_output_length);
  if (target.size() > budget) target.resize(budget);
  std::vector<int> input{text::kBosId};
  input.insert(input.end(), target.begin(), target.end());
  std::vector<int> expected = target;
  expected.push_back(text::kEosId);
  const nn::Var memory = impl_->encoder(g, source, {});
  return g.cross_entropy(impl_->logits(g, memory, input), expected);
}

std::string Generator::generate(const std::string& source_text) const {
  const auto source = impl_->encode_source(source_text);
  nn::Graph encoder_graph;
  const nn::Matrix memory_value = encoder_graph.value(impl_->encoder(encoder_graph, source, {}));
  std::vector<int> input{text::kBosId};
  std::vector<int> output;
  for (int step = 0; step < impl_->config.max_output_length; ++step) {
    nn::Graph g;
    const nn::Var logits = impl_->logits(g, g.constant(memory_value), input);
    const nn::Matrix last = g.value(logits).bottomRows(1) + impl_->output_mask;
    Eigen::Index best = 0;
    last.row(0).maxCoeff(&best);
    if (best == text::kEosId) break;
    output.push_back(static_cast<int>(best));
    input.push_back(static_cast<int>(best));
  }
  return impl_->vocab.decode(output);
}

void Generator::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  json config = to_json(impl_->config);
  config["kind"] = "generator";
  io::write_file_atomic(dir / "config.json", config.dump(2) + "\n");
  impl_->vocab.save(dir / "vocab.json");
  nn::save_weights(impl_->store, dir / "weights.bin");
}

Generator Generator::load(const std::filesystem::path& dir) {
  const json config = io::read_json(dir / "config.json");
  if (config.value("kind", "") != "generator") {
    throw DataError("'" + dir.string() + "' is not a generator checkpoint");
  }
  Generator generator(generator_config_from_json(config), text::Vocabulary::load(dir / "vocab.json"), 0);
  nn::load_weights(generator.impl_->store, dir / "weights.bin");
  return generator;
}

text::Vocabulary build_generator_vocabulary(const std::vector<QDTrainingPair>& pairs,
                                            const std::vector<std::string>& extra_texts) {
  std::vector<std::string> texts;
  for (const auto& p : pairs) {
    texts.push_back(p.source_text);
    texts.push_back(p.target_text);
  }
  texts.insert(texts.end(), extra_texts.begin(), extra_texts.end());
  return text::Vocabulary::build(texts);
}

TrainingLog fit_generator(Generator& generator, const std::vector<QDTrainingPair>& pairs) {
  if (pairs.empty()) throw ConfigError("decomposer training needs at least one pair");
  for (const auto& p : pairs) {
    if (p.source_text.empty()) throw DataError("pair '" + p.id + "': empty source text");
    parse_subquestion_output(p.target_text);
  }
  return run_training(generator.parameters(), pairs.size(), generator.config().training,
                      [&](std::span<const std::size_t> batch) -> std::optional<double> {
                        double total = 0.0;
                        const double weight = 1.0 / static_cast<double>(batch.size());
                        for (std::size_t idx : batch) {
                          nn::Graph g;
                          const nn::Var l = generator.loss(g, pairs[idx].source_text, pairs[idx].target_text);
                          total += g.scalar(l);
                          g.backward(g.scale(l, weight));
                        }
                        return total * weight;
                      });
}

DecomposerTraining train_decomposer(const std::vector<QDTrainingPair>& pairs, const GeneratorConfig& config,
                                    const std::vector<std::string>& extra_texts) {
  if (pairs.empty()) throw ConfigError("decomposer training needs at least one pair");
  Generator generator = Generator::create(config, build_generator_vocabulary(pairs, extra_texts));
  TrainingLog log = fit_generator(generator, pairs);
  return {std::move(generator), std::move(log)};
}

SubQuestionSet generate_subquestions(const Generator& generator, const std::string& question,
                                     const std::vector<corpus::Paragraph>& paragraphs) {
  if (question.empty()) throw DataError("generate_subquestions: empty question");
  const auto source = build_source_text(question, paragraphs, generator.config().max_input_length);
  return parse_subquestion_output(generator.generate(source));
}

GeneratedSet generate_or_fallback(const Generator& generator, const std::string& question,
                                  const std::vector<corpus::Paragraph>& paragraphs) {
  try {
    return {generate_subquestions(generator, question, paragraphs), false};
  } catch (const EmptySubQuestionSetError&) {
    return {SubQuestionSet{{question}}, true};
  }
}

metrics::QdQuality evaluate_decompositions(const std::vector<SubQuestionSet>& predicted,
                                           const std::vector<SubQuestionSet>& gold) {
  if (predicted.size() != gold.size()) {
    throw DataError("evaluate_decompositions: " + std::to_string(predicted.size()) + " predictions vs " +
                    std::to_string(gold.size()) + " references");
  }
  metrics::QdQuality quality;
  quality.count = predicted.size();
  if (predicted.empty()) return quality;
  std::vector<std::string> preds, golds;
  double f = 0.0, r1 = 0.0, rl = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    preds.push_back(predicted[i].joined());
    golds.push_back(gold[i].joined());
    f += metrics::unigram_f_measure(preds.back(), golds.back());
    r1 += metrics::rouge_n(preds.back(), golds.back(), 1);
    rl += metrics::rouge_l(preds.back(), golds.back());
  }
  const auto n = static_cast<double>(predicted.size());
  quality.f_measure = metrics::round2(f / n);
  quality.rouge1 = metrics::round2(r1 / n);
  quality.rouge_l = metrics::round2(rl / n);
  quality.bleu = metrics::round2(metrics::corpus_bleu(preds, golds));
  return quality;
}

json to_json(const SubQuestionRecord& record) {
  json doc = {{"id", record.id}, {"question", record.question}, {"subquestions", record.subquestions.subquestions}};
  if (record.fell_back) doc["fallback"] = true;
  return doc;
}

SubQuestionRecord subquestion_record_from_json(const json& doc) {
  try {
    SubQuestionRecord record;
    record.id = doc.at("id").get<std::string>();
    record.question = doc.at("question").get<std::string>();
    record.subquestions.subquestions = doc.at("subquestions").get<std::vector<std::string>>();
    record.fell_back = doc.value("fallback", false);
    return record;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed sub-question record: ") + e.what());
  }
}

void save_subquestion_records(const std::filesystem::path& path, const std::vector<SubQuestionRecord>& records) {
  std::vector<json> docs;
  for (const auto& r : records) docs.push_back(to_json(r));
  io::write_jsonl(path, docs);
}

std::vector<SubQuestionRecord> load_subquestion_records(const std::filesystem::path& path) {
  std::vector<SubQuestionRecord> records;
  for (const auto& doc : io::read_jsonl(path)) records.push_back(subquestion_record_from_json(doc));
  return records;
}

}  // namespace mhqa::qd
