#include "mhqa/pipeline.hpp"

#include <algorithm>
#include <ctime>
#include <map>
#include <set>

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "mhqa/io.hpp"

namespace mhqa::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Stage stage) { return kStageNames[static_cast<std::size_t>(stage)]; }

Stage parse_stage(std::string_view name) {
  for (std::size_t i = 0; i < std::size(kStageNames); ++i) {
    if (kStageNames[i] == name) return static_cast<Stage>(i);
  }
  throw ConfigError("unknown stage '" + std::string(name) + "'");
}

void apply_seed(RunConfig& config, std::uint64_t seed) {
  config.seed = seed;
  config.decomposer.training.seed = seed;
  config.retriever.training.seed = seed;
  config.reader.training.seed = seed;
}

RunConfig run_config_from_json(const json& doc) {
  static const std::set<std::string> known = {"out",     "seed",   "mode", "dataset", "decomposition", "decomposer",
                                              "retriever", "reader", "llm",  "evaluate", "train",        "qd_evidence"};
  if (!doc.is_object()) throw ConfigError("run config must be a JSON object");
  for (const auto& [key, value] : doc.items()) {
    if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  RunConfig config;
  config.raw = doc;
  try {
    config.out = doc.value("out", config.out.string());
    config.mode = llm::parse_prompt_mode(doc.value("mode", std::string("with_qd")));
    if (doc.contains("dataset")) {
      const auto& d = doc["dataset"];
      config.dataset.path = d.at("path").get<std::string>();
      config.dataset.format = corpus::parse_format(d.value("format", std::string("hotpotqa")));
      config.dataset.limit = d.value("limit", std::size_t{0});
    }
    if (doc.contains("decomposition")) {
      config.decomposition_path = fs::path(doc["decomposition"].at("path").get<std::string>());
    }
    if (doc.contains("decomposer")) config.decomposer = qd::generator_config_from_json(doc["decomposer"]);
    if (doc.contains("retriever")) {
      config.retriever = retrieval::scorer_config_from_json(doc["retriever"]);
      config.top_k = doc["retriever"].value("top_k", config.top_k);
    }
    if (doc.contains("reader")) config.reader = reader::reader_config_from_json(doc["reader"]);
    if (doc.contains("llm")) {
      config.llm = llm::client_config_from_json(doc["llm"]);
      config.use_llm = doc["llm"].value("enabled", false);
    }
    if (doc.contains("evaluate")) config.evaluate_source = doc["evaluate"].value("source", config.evaluate_source);
    config.train = doc.value("train", true);
    const auto evidence = doc.value("qd_evidence", std::string("gold"));
    if (evidence != "gold" && evidence != "context") throw ConfigError("qd_evidence must be 'gold' or 'context'");
    config.qd_gold_evidence = evidence == "gold";
    apply_seed(config, doc.value("seed", std::uint64_t{13}));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  if (config.top_k < 1) throw ConfigError("retriever top_k must be >= 1");
  if (config.evaluate_source != "reader" && config.evaluate_source != "llm") {
    throw ConfigError("evaluate source must be 'reader' or 'llm'");
  }
  return config;
}

RunConfig load_run_config(const fs::path& path) {
  RunConfig config;
  try {
    config = run_config_from_json(io::read_json(path));
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  const fs::path base = path.parent_path();
  auto resolve = [&](fs::path& p) {
    if (!p.empty() && p.is_relative() && !fs::exists(p) && fs::exists(base / p)) p = base / p;
  };
  resolve(config.dataset.path);
  if (config.decomposition_path) resolve(*config.decomposition_path);
  return config;
}

fs::path manifest_path(const RunConfig& config, Stage stage) {
  return config.out / ("manifest_" + std::string(to_string(stage)) + ".json");
}

namespace {

fs::path artifact(const RunConfig& config, std::string_view name) { return config.out / fs::path(name); }

void require(const fs::path& path, Stage consumer, Stage producer) {
  if (!fs::exists(path)) {
    throw DependencyError(std::string(to_string(producer)),
                          fmt::format("stage '{}' needs {}, which stage '{}' produces; run '{}' first",
                                      to_string(consumer), path.string(), to_string(producer), to_string(producer)));
  }
}

std::string hash_path(const fs::path& path) {
  if (!fs::is_directory(path)) return io::sha256_file(path);
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(path)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::string combined;
  for (const auto& f : files) combined += fs::relative(f, path).generic_string() + ":" + io::sha256_file(f) + "\n";
  return io::sha256_hex(combined);
}

std::string config_hash(const RunConfig& config) {
  json doc = config.raw;
  doc["out"] = config.out.generic_string();
  doc["seed"] = config.seed;
  doc["mode"] = llm::to_string(config.mode);
  return io::sha256_hex(doc.dump());
}

std::string utc_timestamp() { return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(std::time(nullptr))); }

class StageRun {
 public:
  StageRun(const RunConfig& config, Stage stage) : config_(config), stage_(stage) {}

  fs::path input(std::string_view name, Stage producer) {
    const fs::path path = artifact(config_, name);
    require(path, stage_, producer);
    inputs_[fs::path(name).generic_string()] = hash_path(path);
    return path;
  }
  void external_input(const fs::path& path, std::string_view label) {
    if (!fs::exists(path)) throw IoError(fmt::format("{} '{}' does not exist", label, path.string()));
    inputs_[std::string(label)] = hash_path(path);
  }
  fs::path output(std::string_view name) {
    const fs::path path = artifact(config_, name);
    outputs_.push_back(path);
    return path;
  }
  json& extra() { return extra_; }

  StageResult finish() {
    json outputs = json::object();
    for (const auto& p : outputs_) {
      outputs[fs::relative(p, config_.out).generic_string()] = fs::exists(p) ? hash_path(p) : "";
    }
    json manifest = {{"stage", to_string(stage_)},
                     {"config_hash", config_hash(config_)},
                     {"input_hashes", inputs_},
                     {"output_hashes", outputs},
                     {"seed", config_.seed},
                     {"mode", llm::to_string(config_.mode)},
                     {"timestamp", utc_timestamp()}};
    for (const auto& [k, v] : extra_.items()) manifest[k] = v;
    io::write_file_atomic(manifest_path(config_, stage_), manifest.dump(2) + "\n");
    return {stage_, outputs_, manifest};
  }

 private:
  const RunConfig& config_;
  Stage stage_;
  json inputs_ = json::object();
  std::vector<fs::path> outputs_;
  json extra_ = json::object();
};

std::vector<corpus::MultiHopExample> load_examples(StageRun& run) {
  std::vector<corpus::MultiHopExample> examples;
  for (const auto& doc : io::read_jsonl(run.input(artifacts::kExamples, Stage::kIngest))) {
    examples.push_back(corpus::example_from_json(doc));
  }
  return examples;
}

text::Vocabulary load_vocabulary(StageRun& run) {
  return text::Vocabulary::load(run.input(artifacts::kVocabulary, Stage::kIngest));
}

/// Generated sets keyed by id; empty sets throughout in without_qd mode.
std::map<std::string, qd::SubQuestionSet> load_subquestions(StageRun& run, const RunConfig& config) {
  std::map<std::string, qd::SubQuestionSet> sets;
  if (config.mode == llm::PromptMode::kWithoutQd) return sets;
  for (const auto& r : qd::load_subquestion_records(run.input(artifacts::kSubquestions, Stage::kGenSubq))) {
    sets[r.id] = r.subquestions;
  }
  return sets;
}

const qd::SubQuestionSet& subquestions_for(const std::map<std::string, qd::SubQuestionSet>& sets,
                                           const std::string& id) {
  static const qd::SubQuestionSet empty;
  const auto it = sets.find(id);
  return it == sets.end() ? empty : it->second;
}

/// Trained model under the run directory, else a checkpoint named in config.
fs::path model_dir(StageRun& run, const RunConfig& config, std::string_view name, Stage producer,
                   const std::string& identifier) {
  if (fs::exists(artifact(config, name) / "config.json")) return run.input(name, producer);
  if (is_checkpoint_dir(identifier)) {
    run.external_input(identifier, std::string(name));
    return identifier;
  }
  return run.input(name, producer);
}

std::map<std::string, retrieval::RetrievalRecord> load_retrieval(StageRun& run) {
  std::map<std::string, retrieval::RetrievalRecord> records;
  for (auto& r : retrieval::load_retrieval_records(run.input(artifacts::kRetrieval, Stage::kRetrieve))) {
    records[r.id] = std::move(r);
  }
  return records;
}

std::vector<corpus::Paragraph> pick(const corpus::MultiHopExample& example, std::vector<int> indices) {
  std::sort(indices.begin(), indices.end());
  indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
  std::vector<corpus::Paragraph> out;
  for (int i : indices) {
    if (i < 0 || static_cast<std::size_t>(i) >= example.context.size()) {
      throw DataError(fmt::format("example '{}': paragraph index {} out of range", example.id, i));
    }
    out.push_back(example.context[static_cast<std::size_t>(i)]);
  }
  return out;
}

const retrieval::RetrievalRecord& record_for(const std::map<std::string, retrieval::RetrievalRecord>& records,
                                              const std::string& id) {
  const auto it = records.find(id);
  if (it == records.end()) throw DataError("no retrieval record for example '" + id + "'");
  return it->second;
}

void save_log(const fs::path& path, const TrainingLog& log) {
  io::write_file_atomic(path, json{{"losses", log.losses}, {"skipped_batches", log.skipped_batches}}.dump(1) + "\n");
}

StageResult ingest(const RunConfig& config) {
  StageRun run(config, Stage::kIngest);
  if (config.dataset.path.empty()) throw ConfigError("dataset.path is required for ingest");
  run.external_input(config.dataset.path, "dataset");
  auto examples = corpus::load_multihop_dataset(config.dataset.path, config.dataset.format);
  if (config.dataset.limit > 0 && examples.size() > config.dataset.limit) examples.resize(config.dataset.limit);
  if (examples.empty()) throw DataError("dataset '" + config.dataset.path.string() + "' holds no examples");

  std::vector<std::string> texts;
  auto add_paragraphs = [&](const std::vector<corpus::Paragraph>& paragraphs) {
    for (const auto& p : paragraphs) texts.push_back(p.text());
  };
  std::vector<json> docs;
  for (const auto& e : examples) {
    docs.push_back(corpus::to_json(e));
    texts.push_back(e.question);
    texts.push_back(e.answer);
    add_paragraphs(e.context);
    if (e.gold_subquestions) texts.push_back(qd::serialize_subquestions(*e.gold_subquestions));
  }
  if (config.decomposition_path) {
    run.external_input(*config.decomposition_path, "decomposition");
    for (const auto& d : corpus::load_decomposition_examples(*config.decomposition_path)) {
      texts.push_back(d.question);
      texts.push_back(qd::serialize_subquestions(d.subquestions));
      add_paragraphs(d.evidence_paragraphs);
    }
  }
  fs::create_directories(config.out);
  io::write_jsonl(run.output(artifacts::kExamples), docs);
  text::Vocabulary::build(texts).save(run.output(artifacts::kVocabulary));
  run.extra()["examples"] = examples.size();
  spdlog::info("ingest: {} examples", examples.size());
  return run.finish();
}

StageResult train_qd(const RunConfig& config) {
  StageRun run(config, Stage::kTrainQd);
  const auto examples = load_examples(run);
  const auto vocab = load_vocabulary(run);
  std::vector<corpus::DecompositionExample> data;
  if (config.decomposition_path) {
    run.external_input(*config.decomposition_path, "decomposition");
    data = corpus::load_decomposition_examples(*config.decomposition_path);
  } else {
    for (const auto& e : examples) {
      if (auto d = corpus::to_decomposition_example(e)) data.push_back(std::move(*d));
    }
  }
  if (data.empty()) throw DataError("no decomposition training data: set decomposition.path or use gold sub-questions");
  std::vector<qd::QDTrainingPair> pairs;
  for (const auto& d : data) pairs.push_back(qd::build_qd_training_pair(d, config.decomposer));
  auto generator = qd::Generator::create(config.decomposer, vocab);
  const auto log = qd::fit_generator(generator, pairs);
  const fs::path dir = run.output(artifacts::kDecomposer);
  generator.save(dir);
  save_log(dir / "train_log.json", log);
  run.extra()["pairs"] = pairs.size();
  run.extra()["steps"] = log.losses.size();
  return run.finish();
}

StageResult gen_subq(const RunConfig& config) {
  StageRun run(config, Stage::kGenSubq);
  const auto examples = load_examples(run);
  const auto generator = qd::Generator::load(model_dir(run, config, artifacts::kDecomposer, Stage::kTrainQd,
                                                       config.decomposer.backbone.model_identifier));
  std::vector<qd::SubQuestionRecord> records;
  std::size_t fallbacks = 0;
  for (const auto& e : examples) {
    std::vector<corpus::Paragraph> evidence = e.context;
    if (config.qd_gold_evidence) {
      const auto labels = corpus::derive_paragraph_labels(e);
      std::vector<int> cited;
      for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == 1) cited.push_back(static_cast<int>(i));
      }
      if (!cited.empty()) evidence = pick(e, cited);
    }
    auto generated = qd::generate_or_fallback(generator, e.question, evidence);
    if (generated.fell_back) {
      ++fallbacks;
      spdlog::warn("gen-subq: example '{}' fell back to the original question", e.id);
    }
    records.push_back({e.id, e.question, std::move(generated.subquestions), generated.fell_back});
  }
  qd::save_subquestion_records(run.output(artifacts::kSubquestions), records);
  run.extra()["records"] = records.size();
  run.extra()["fallbacks"] = fallbacks;
  return run.finish();
}

StageResult train_spr(const RunConfig& config) {
  StageRun run(config, Stage::kTrainSpr);
  const auto examples = load_examples(run);
  const auto vocab = load_vocabulary(run);
  const auto sets = load_subquestions(run, config);
  std::vector<retrieval::SprExample> data;
  for (const auto& e : examples) {
    data.push_back({e.id, e.question, subquestions_for(sets, e.id), e.context, corpus::derive_paragraph_labels(e)});
  }
  auto scorer = retrieval::Scorer::create(config.retriever, vocab);
  const auto log = retrieval::train_spr(scorer, data);
  const fs::path dir = run.output(artifacts::kRetriever);
  scorer.save(dir);
  save_log(dir / "train_log.json", log);
  run.extra()["steps"] = log.losses.size();
  return run.finish();
}

StageResult retrieve(const RunConfig& config) {
  StageRun run(config, Stage::kRetrieve);
  const auto examples = load_examples(run);
  const auto sets = load_subquestions(run, config);
  const auto scorer = retrieval::Scorer::load(model_dir(run, config, artifacts::kRetriever, Stage::kTrainSpr,
                                                        config.retriever.backbone.model_identifier));
  std::vector<retrieval::RetrievalRecord> records;
  std::size_t truncated = 0;
  for (const auto& e : examples) {
    const auto scores = retrieval::score_paragraphs(scorer, e.question, subquestions_for(sets, e.id), e.context);
    const auto selection = retrieval::select_paragraphs(scores, config.top_k);
    if (selection.truncated) ++truncated;
    records.push_back(retrieval::make_record(e.id, scores, selection));
  }
  retrieval::save_retrieval_records(run.output(artifacts::kRetrieval), records);
  run.extra()["top_k"] = config.top_k;
  run.extra()["truncated"] = truncated;
  return run.finish();
}

StageResult train_sqa(const RunConfig& config) {
  StageRun run(config, Stage::kTrainSqa);
  const auto examples = load_examples(run);
  const auto vocab = load_vocabulary(run);
  const auto sets = load_subquestions(run, config);
  const auto records = load_retrieval(run);
  std::vector<reader::ReaderExample> data;
  for (const auto& e : examples) {
    std::vector<int> indices = record_for(records, e.id).selected_indices;
    const auto labels = corpus::derive_paragraph_labels(e);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == 1) indices.push_back(static_cast<int>(i));
    }
    data.push_back(reader::build_reader_example(e, subquestions_for(sets, e.id), pick(e, indices),
                                                config.reader.max_positions, vocab));
  }
  auto model = reader::Reader::create(config.reader, vocab);
  const auto log = reader::train_reader(model, data);
  const fs::path dir = run.output(artifacts::kReader);
  model.save(dir);
  save_log(dir / "train_log.json", log);
  run.extra()["steps"] = log.losses.size();
  return run.finish();
}

StageResult answer(const RunConfig& config) {
  StageRun run(config, Stage::kAnswer);
  const auto examples = load_examples(run);
  const auto sets = load_subquestions(run, config);
  const auto records = load_retrieval(run);
  const auto model = reader::Reader::load(
      model_dir(run, config, artifacts::kReader, Stage::kTrainSqa, config.reader.backbone.model_identifier));
  const int max_positions = model.config().max_positions;
  corpus::PredictionMap predictions;
  std::vector<json> intermediate;
  for (const auto& e : examples) {
    const auto paragraphs = pick(e, record_for(records, e.id).selected_indices);
    const auto input =
        reader::build_reader_input(e.question, subquestions_for(sets, e.id), paragraphs, max_positions, model.vocab());
    const auto prediction = reader::predict(model, input);
    predictions[e.id] = {prediction.answer_text, prediction.supporting_facts};
    if (e.gold_subquestions) {
      std::vector<std::string> answers;
      for (const auto& subquestion : *e.gold_subquestions) {
        const auto sub_input =
            reader::build_reader_input(subquestion, qd::SubQuestionSet{}, paragraphs, max_positions, model.vocab());
        answers.push_back(reader::predict(model, sub_input).answer_text);
      }
      intermediate.push_back({{"id", e.id}, {"answers", answers}});
    }
  }
  corpus::serialize_predictions(predictions, run.output(artifacts::kPredictions));
  io::write_jsonl(run.output(artifacts::kIntermediate), intermediate);
  run.extra()["predictions"] = predictions.size();
  return run.finish();
}

StageResult prompt_llm(const RunConfig& config, const StageContext& context) {
  StageRun run(config, Stage::kPromptLlm);
  const auto examples = load_examples(run);
  const auto sets = load_subquestions(run, config);
  llm::ClientConfig client_config = config.llm;
  if (client_config.cache_dir.is_relative()) client_config.cache_dir = config.out / client_config.cache_dir;
  std::shared_ptr<llm::Transport> transport = context.transport;
  if (!transport) transport = llm::make_http_transport(client_config.timeout);
  llm::LlmClient client(client_config, transport, context.sleeper);

  std::vector<std::string> prompts;
  for (const auto& e : examples) {
    llm::PromptSpec spec;
    spec.mode = config.mode;
    spec.shot = llm::default_shot();
    spec.target = e;
    if (config.mode == llm::PromptMode::kWithQd) spec.target_subquestions = subquestions_for(sets, e.id);
    prompts.push_back(llm::build_prompt(spec));
  }
  const auto responses = client.query_batch(prompts, config.mode);

  corpus::PredictionMap predictions;
  std::vector<json> lines;
  std::size_t unparseable = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& r = responses[i];
    if (!r.parseable) ++unparseable;
    predictions[examples[i].id] = {r.parsed_answer, {}};
    lines.push_back({{"id", examples[i].id},
                     {"raw_text", r.raw_text},
                     {"answer", r.parsed_answer},
                     {"intermediate_answers", r.parsed_intermediate_answers},
                     {"supporting_titles", r.parsed_supporting_titles},
                     {"parseable", r.parseable}});
  }
  corpus::serialize_predictions(predictions, run.output(artifacts::kLlmPredictions));
  io::write_jsonl(run.output(artifacts::kLlmResponses), lines);
  if (unparseable > 0) spdlog::warn("prompt-llm: {} unparseable responses", unparseable);
  run.extra()["model_id"] = client_config.model_id;
  run.extra()["template_version"] = std::string(llm::kTemplateVersion);
  run.extra()["dataset_slice"] = {{"path", config.dataset.path.generic_string()},
                                  {"limit", config.dataset.limit},
                                  {"count", examples.size()}};
  run.extra()["unparseable"] = unparseable;
  // call counts vary with cache state, so they are logged rather than
  // recorded in the manifest
  spdlog::info("prompt-llm: {} network calls, {} cached responses", client.network_calls(),
               std::count_if(responses.begin(), responses.end(), [](const auto& r) { return r.cached; }));
  return run.finish();
}

StageResult evaluate(const RunConfig& config) {
  StageRun run(config, Stage::kEvaluate);
  const auto examples = load_examples(run);
  const bool from_llm = config.evaluate_source == "llm";
  const auto predictions = corpus::load_predictions(
      from_llm ? run.input(artifacts::kLlmPredictions, Stage::kPromptLlm) : run.input(artifacts::kPredictions, Stage::kAnswer));

  std::vector<metrics::ExampleScores> scores;
  for (const auto& e : examples) {
    const auto it = predictions.find(e.id);
    const corpus::PredictionRecord empty;
    const auto& p = it == predictions.end() ? empty : it->second;
    metrics::ExampleScores s{e.id, metrics::answer_score(p.answer, e.answer), std::nullopt};
    if (!from_llm) {
      std::vector<metrics::SupportingFactKey> pred, gold;
      for (const auto& f : p.supporting_facts) pred.push_back({f.title, f.sentence_index});
      for (const auto& f : e.supporting_facts) gold.push_back({f.title, f.sentence_index});
      s.sp = metrics::sp_score(pred, gold);
    }
    scores.push_back(std::move(s));
  }
  auto report = metrics::aggregate_report(scores);

  if (fs::exists(artifact(config, artifacts::kRetrieval))) {
    const auto records = load_retrieval(run);
    std::vector<std::vector<int>> selected, gold;
    for (const auto& e : examples) {
      selected.push_back(record_for(records, e.id).selected_indices);
      gold.push_back(corpus::derive_paragraph_labels(e));
    }
    report.retrieval = retrieval::evaluate_retrieval(selected, gold);
  }

  if (config.mode == llm::PromptMode::kWithQd && fs::exists(artifact(config, artifacts::kSubquestions))) {
    const auto sets = load_subquestions(run, config);
    std::vector<qd::SubQuestionSet> predicted, gold;
    for (const auto& e : examples) {
      if (!e.gold_subquestions) continue;
      predicted.push_back(subquestions_for(sets, e.id));
      gold.push_back({*e.gold_subquestions});
    }
    if (!predicted.empty()) report.qd = qd::evaluate_decompositions(predicted, gold);
  }

  std::map<std::string, std::vector<std::string>> intermediate;
  const auto chain_source = from_llm ? artifacts::kLlmResponses : artifacts::kIntermediate;
  if (fs::exists(artifact(config, chain_source))) {
    const auto key = from_llm ? "intermediate_answers" : "answers";
    for (const auto& doc : io::read_jsonl(run.input(chain_source, from_llm ? Stage::kPromptLlm : Stage::kAnswer))) {
      intermediate[doc.at("id").get<std::string>()] = doc.at(key).get<std::vector<std::string>>();
    }
  }
  std::vector<metrics::ChainTriple> triples;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& e = examples[i];
    const auto it = intermediate.find(e.id);
    if (!e.gold_intermediate_answers || e.gold_intermediate_answers->size() < 2 || it == intermediate.end()) continue;
    auto correct = [&](std::size_t j) {
      return j < it->second.size() &&
             metrics::answer_score(it->second[j], (*e.gold_intermediate_answers)[j]).em > 0.5;
    };
    triples.push_back({scores[i].answer.em > 0.5, correct(0), correct(1)});
  }
  if (!triples.empty()) report.chain = metrics::reasoning_chain_table(triples);

  io::write_file_atomic(run.output(artifacts::kReport), metrics::to_json(report).dump(2) + "\n");
  run.extra()["source"] = config.evaluate_source;
  return run.finish();
}

StageResult report(const RunConfig& config) {
  StageRun run(config, Stage::kReport);
  const auto parsed = metrics::report_from_json(io::read_json(run.input(artifacts::kReport, Stage::kEvaluate)));
  io::write_file_atomic(run.output(artifacts::kReportText), metrics::render_report(parsed));
  return run.finish();
}

}  // namespace

StageResult run_stage(const RunConfig& config, Stage stage, const StageContext& context) {
  spdlog::info("stage {} -> {}", to_string(stage), config.out.string());
  switch (stage) {
    case Stage::kIngest: return ingest(config);
    case Stage::kTrainQd: return train_qd(config);
    case Stage::kGenSubq: return gen_subq(config);
    case Stage::kTrainSpr: return train_spr(config);
    case Stage::kRetrieve: return retrieve(config);
    case Stage::kTrainSqa: return train_sqa(config);
    case Stage::kAnswer: return answer(config);
    case Stage::kPromptLlm: return prompt_llm(config, context);
    case Stage::kEvaluate: return evaluate(config);
    case Stage::kReport: return report(config);
  }
  throw ConfigError("unhandled stage");
}

metrics::EvalReport run_pipeline(const RunConfig& config, const StageContext& context) {
  const bool with_qd = config.mode == llm::PromptMode::kWithQd;
  std::vector<Stage> stages{Stage::kIngest};
  if (with_qd) {
    if (config.train) stages.push_back(Stage::kTrainQd);
    stages.push_back(Stage::kGenSubq);
  }
  if (config.train) stages.push_back(Stage::kTrainSpr);
  stages.push_back(Stage::kRetrieve);
  if (config.train) stages.push_back(Stage::kTrainSqa);
  stages.push_back(Stage::kAnswer);
  if (config.use_llm) stages.push_back(Stage::kPromptLlm);
  stages.push_back(Stage::kEvaluate);
  stages.push_back(Stage::kReport);
  for (Stage s : stages) run_stage(config, s, context);
  return metrics::report_from_json(io::read_json(artifact(config, artifacts::kReport)));
}

}  // namespace mhqa::pipeline
