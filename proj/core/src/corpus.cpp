#include "mhqa/corpus.hpp"

#include <algorithm>
#include <set>

#include "mhqa/io.hpp"
#include "mhqa/metrics.hpp"

namespace mhqa::corpus {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(AnswerType type) {
  switch (type) {
    case AnswerType::kNegative:
      return "negative";
    case AnswerType::kPositive:
      return "positive";
    case AnswerType::kSpan:
      return "span";
  }
  return "span";
}

AnswerType classify_answer(std::string_view answer) {
  const std::string normalized = metrics::normalize_answer(answer);
  if (normalized == "yes") return AnswerType::kPositive;
  if (normalized == "no") return AnswerType::kNegative;
  return AnswerType::kSpan;
}

std::string_view to_string(DatasetFormat format) {
  switch (format) {
    case DatasetFormat::kHotpotQa:
      return "hotpotqa";
    case DatasetFormat::kTwoWiki:
      return "2wiki";
    case DatasetFormat::kMusique:
      return "musique";
    case DatasetFormat::kHvsqa:
      return "hvsqa";
  }
  return "hotpotqa";
}

DatasetFormat parse_format(std::string_view name) {
  if (name == "hotpotqa") return DatasetFormat::kHotpotQa;
  if (name == "2wiki") return DatasetFormat::kTwoWiki;
  if (name == "musique") return DatasetFormat::kMusique;
  if (name == "hvsqa") return DatasetFormat::kHvsqa;
  throw ConfigError("unknown dataset format '" + std::string(name) + "' (expected hotpotqa, 2wiki, musique or hvsqa)");
}

std::string Paragraph::text() const {
  std::string out = title;
  out += ':';
  for (const auto& sentence : sentences) {
    out += ' ';
    out += sentence;
  }
  return out;
}

namespace {

class RecordReader {
 public:
  RecordReader(const json& record, std::size_t index) : record_(record), index_(index) {
    if (!record.is_object()) fail("<record>", "expected a JSON object");
  }

  [[noreturn]] void fail(std::string_view field, std::string_view what) const {
    std::string message = "record " + std::to_string(index_);
    if (record_.is_object()) {
      for (const char* key : {"_id", "id"}) {
        if (record_.contains(key) && record_[key].is_string()) {
          message += " (id '" + record_[key].get<std::string>() + "')";
          break;
        }
      }
    }
    message += ": field '" + std::string(field) + "': " + std::string(what);
    throw DataError(message);
  }

  const json& field(std::string_view name) const {
    auto it = record_.find(std::string(name));
    if (it == record_.end()) fail(name, "missing");
    return *it;
  }

  std::string string(std::string_view name) const {
    const json& value = field(name);
    if (!value.is_string()) fail(name, "expected a string");
    return value.get<std::string>();
  }

  const json& array(std::string_view name) const {
    const json& value = field(name);
    if (!value.is_array()) fail(name, "expected an array");
    return value;
  }

  std::size_t index() const { return index_; }

 private:
  const json& record_;
  std::size_t index_;
};

json extras_of(const json& record, std::initializer_list<std::string_view> known) {
  json extras = json::object();
  for (auto it = record.begin(); it != record.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) extras[it.key()] = it.value();
  }
  return extras;
}

std::vector<Paragraph> parse_titled_context(const RecordReader& reader) {
  std::vector<Paragraph> context;
  const json& raw = reader.array("context");
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const json& entry = raw[i];
    const std::string where = "context[" + std::to_string(i) + "]";
    if (!entry.is_array() || entry.size() != 2 || !entry[0].is_string() || !entry[1].is_array()) {
      reader.fail(where, "expected [title, [sentence, ...]]");
    }
    Paragraph paragraph;
    paragraph.title = entry[0].get<std::string>();
    for (const auto& sentence : entry[1]) {
      if (!sentence.is_string()) reader.fail(where, "sentences must be strings");
      paragraph.sentences.push_back(sentence.get<std::string>());
    }
    context.push_back(std::move(paragraph));
  }
  return context;
}

std::vector<SupportingFact> parse_supporting_facts(const RecordReader& reader) {
  std::vector<SupportingFact> facts;
  const json& raw = reader.array("supporting_facts");
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const json& entry = raw[i];
    if (!entry.is_array() || entry.size() != 2 || !entry[0].is_string() || !entry[1].is_number_integer()) {
      reader.fail("supporting_facts[" + std::to_string(i) + "]", "expected [title, sentence_index]");
    }
    facts.push_back({entry[0].get<std::string>(), entry[1].get<int>()});
  }
  return facts;
}

int distinct_title_hops(const std::vector<SupportingFact>& facts) {
  std::set<std::string> titles;
  for (const auto& fact : facts) titles.insert(fact.title);
  return std::clamp(static_cast<int>(titles.size()), 2, 4);
}

void check(const RecordReader& reader, const MultiHopExample& example) {
  try {
    validate(example);
  } catch (const DataError& e) {
    reader.fail("<example>", e.what());
  }
}

MultiHopExample parse_titled_record(const json& record, std::size_t index, DatasetFormat format) {
  RecordReader reader(record, index);
  MultiHopExample example;
  example.format = format;
  example.id = reader.string("_id");
  example.question = reader.string("question");
  example.answer = reader.string("answer");
  example.answer_type = classify_answer(example.answer);
  example.context = parse_titled_context(reader);
  example.supporting_facts = parse_supporting_facts(reader);

  if (format == DatasetFormat::kHvsqa) {
    example.extras = extras_of(record, {"_id", "question", "answer", "context", "supporting_facts", "sub_questions"});
    const json& subs = reader.array("sub_questions");
    std::vector<std::string> questions, answers;
    for (std::size_t i = 0; i < subs.size(); ++i) {
      const json& sub = subs[i];
      if (!sub.is_object() || !sub.contains("question") || !sub["question"].is_string() || !sub.contains("answer") ||
          !sub["answer"].is_string()) {
        reader.fail("sub_questions[" + std::to_string(i) + "]", "expected {question, answer} strings");
      }
      questions.push_back(sub["question"].get<std::string>());
      answers.push_back(sub["answer"].get<std::string>());
    }
    example.hop_count = static_cast<int>(questions.size());
    example.gold_subquestions = std::move(questions);
    example.gold_intermediate_answers = std::move(answers);
  } else {
    example.extras = extras_of(record, {"_id", "question", "answer", "context", "supporting_facts"});
    example.hop_count = format == DatasetFormat::kHotpotQa ? 2 : distinct_title_hops(example.supporting_facts);
  }
  check(reader, example);
  return example;
}

MultiHopExample parse_musique_record(const json& record, std::size_t index) {
  RecordReader reader(record, index);
  MultiHopExample example;
  example.format = DatasetFormat::kMusique;
  example.id = reader.string("id");
  example.question = reader.string("question");
  example.answer = reader.string("answer");
  example.answer_type = classify_answer(example.answer);
  example.extras = extras_of(record, {"id", "question", "answer", "paragraphs"});

  const json& paragraphs = reader.array("paragraphs");
  json original_idx = json::array();
  bool idx_is_position = true;
  for (std::size_t i = 0; i < paragraphs.size(); ++i) {
    const json& raw = paragraphs[i];
    const std::string where = "paragraphs[" + std::to_string(i) + "]";
    if (!raw.is_object() || !raw.contains("title") || !raw["title"].is_string() || !raw.contains("paragraph_text") ||
        !raw["paragraph_text"].is_string()) {
      reader.fail(where, "expected {title, paragraph_text, is_supporting}");
    }
    Paragraph paragraph;
    paragraph.title = raw["title"].get<std::string>();
    paragraph.sentences.push_back(raw["paragraph_text"].get<std::string>());
    const bool supporting = raw.value("is_supporting", false);
    paragraph.relevance_label = supporting ? 1 : 0;
    if (supporting) example.supporting_facts.push_back({paragraph.title, 0});
    const json idx = raw.value("idx", json(static_cast<int>(i)));
    if (idx != json(static_cast<int>(i))) idx_is_position = false;
    original_idx.push_back(idx);
    example.context.push_back(std::move(paragraph));
  }
  if (!idx_is_position) example.extras["paragraph_idx"] = std::move(original_idx);

  const auto decomposition = example.extras.find("question_decomposition");
  if (decomposition != example.extras.end() && decomposition->is_array() && !decomposition->empty()) {
    example.hop_count = static_cast<int>(decomposition->size());
  } else {
    example.hop_count = distinct_title_hops(example.supporting_facts);
  }
  check(reader, example);
  return example;
}

json paragraph_pair(const Paragraph& paragraph) { return json::array({paragraph.title, paragraph.sentences}); }

json supporting_facts_json(const std::vector<SupportingFact>& facts) {
  json out = json::array();
  for (const auto& fact : facts) out.push_back(json::array({fact.title, fact.sentence_index}));
  return out;
}

std::vector<json> read_records(const fs::path& path) {
  const std::string text = io::read_file(path);
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  if (text[first] == '[') {
    json doc;
    try {
      doc = json::parse(text);
    } catch (const json::parse_error& e) {
      throw DataError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
    return doc.get<std::vector<json>>();
  }
  return io::read_jsonl(path);
}

}  // namespace

void validate(const MultiHopExample& example) {
  if (example.question.empty()) throw DataError("question: empty");
  std::map<std::string, std::size_t> sentence_counts;
  for (std::size_t i = 0; i < example.context.size(); ++i) {
    const Paragraph& paragraph = example.context[i];
    if (paragraph.sentences.empty()) {
      throw DataError("context[" + std::to_string(i) + "] ('" + paragraph.title + "'): no sentences");
    }
    if (paragraph.relevance_label && *paragraph.relevance_label != 0 && *paragraph.relevance_label != 1) {
      throw DataError("context[" + std::to_string(i) + "]: relevance_label must be 0 or 1");
    }
    auto& count = sentence_counts[paragraph.title];
    count = std::max(count, paragraph.sentences.size());
  }
  for (const auto& fact : example.supporting_facts) {
    auto it = sentence_counts.find(fact.title);
    if (it == sentence_counts.end()) {
      throw DataError("supporting_facts: title '" + fact.title + "' not among context titles");
    }
    if (fact.sentence_index < 0 || static_cast<std::size_t>(fact.sentence_index) >= it->second) {
      throw DataError("supporting_facts: sentence index " + std::to_string(fact.sentence_index) + " out of range for '" +
                      fact.title + "' (" + std::to_string(it->second) + " sentences)");
    }
  }
  if (example.hop_count < 2 || example.hop_count > 4) {
    throw DataError("hop_count: " + std::to_string(example.hop_count) + " not in {2, 3, 4}");
  }
  if (example.answer_type != classify_answer(example.answer)) {
    throw DataError("answer_type: inconsistent with answer '" + example.answer + "'");
  }
  if (example.gold_subquestions && example.gold_intermediate_answers &&
      example.gold_subquestions->size() != example.gold_intermediate_answers->size()) {
    throw DataError("gold_intermediate_answers: count differs from gold_subquestions");
  }
}

void validate(const DecompositionExample& example) {
  if (example.question.empty()) throw DataError("question: empty");
  if (example.subquestions.empty()) throw DataError("subquestions: empty");
  if (example.hop_count && static_cast<std::size_t>(*example.hop_count) != example.subquestions.size()) {
    throw DataError("subquestions: " + std::to_string(example.subquestions.size()) + " entries but hop_count is " +
                    std::to_string(*example.hop_count));
  }
  for (std::size_t i = 0; i < example.evidence_paragraphs.size(); ++i) {
    if (example.evidence_paragraphs[i].sentences.empty()) {
      throw DataError("evidence[" + std::to_string(i) + "]: no sentences");
    }
  }
}

std::vector<MultiHopExample> parse_multihop_records(const std::vector<json>& records, DatasetFormat format) {
  std::vector<MultiHopExample> examples;
  examples.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    examples.push_back(format == DatasetFormat::kMusique ? parse_musique_record(records[i], i)
                                                         : parse_titled_record(records[i], i, format));
  }
  return examples;
}

std::vector<MultiHopExample> load_multihop_dataset(const fs::path& path, DatasetFormat format) {
  if (!fs::exists(path)) throw IoError("dataset file '" + path.string() + "' does not exist");
  return parse_multihop_records(read_records(path), format);
}

json to_native_record(const MultiHopExample& example) {
  json record = example.extras.is_object() ? example.extras : json::object();
  if (example.format == DatasetFormat::kMusique) {
    record["id"] = example.id;
    record["question"] = example.question;
    record["answer"] = example.answer;
    const json* idx = record.contains("paragraph_idx") ? &record["paragraph_idx"] : nullptr;
    json paragraphs = json::array();
    std::set<std::string> cited;
    for (const auto& fact : example.supporting_facts) cited.insert(fact.title);
    for (std::size_t i = 0; i < example.context.size(); ++i) {
      const Paragraph& p = example.context[i];
      std::string text;
      for (std::size_t s = 0; s < p.sentences.size(); ++s) {
        if (s > 0) text += ' ';
        text += p.sentences[s];
      }
      const bool supporting = p.relevance_label ? *p.relevance_label == 1 : cited.count(p.title) > 0;
      paragraphs.push_back({{"idx", idx ? (*idx)[i] : json(static_cast<int>(i))},
                            {"title", p.title},
                            {"paragraph_text", text},
                            {"is_supporting", supporting}});
    }
    record.erase("paragraph_idx");
    record["paragraphs"] = std::move(paragraphs);
    return record;
  }

  record["_id"] = example.id;
  record["question"] = example.question;
  record["answer"] = example.answer;
  json context = json::array();
  for (const auto& p : example.context) context.push_back(paragraph_pair(p));
  record["context"] = std::move(context);
  record["supporting_facts"] = supporting_facts_json(example.supporting_facts);
  if (example.format == DatasetFormat::kHvsqa) {
    json subs = json::array();
    const auto& questions = example.gold_subquestions.value_or(std::vector<std::string>{});
    const auto& answers = example.gold_intermediate_answers.value_or(std::vector<std::string>{});
    for (std::size_t i = 0; i < questions.size(); ++i) {
      subs.push_back({{"question", questions[i]}, {"answer", i < answers.size() ? answers[i] : std::string()}});
    }
    record["sub_questions"] = std::move(subs);
  }
  return record;
}

void save_multihop_dataset(const fs::path& path, const std::vector<MultiHopExample>& examples,
                           DatasetFormat format) {
  std::vector<json> records;
  records.reserve(examples.size());
  for (const auto& example : examples) {
    if (example.format != format) {
      throw ConfigError("example '" + example.id + "' is " + std::string(to_string(example.format)) +
                        ", cannot be written as " + std::string(to_string(format)));
    }
    records.push_back(to_native_record(example));
  }
  if (format == DatasetFormat::kMusique) {
    io::write_jsonl(path, records);
  } else {
    io::write_file_atomic(path, json(records).dump(1) + "\n");
  }
}

json to_json(const Paragraph& paragraph) {
  json doc = {{"title", paragraph.title}, {"sentences", paragraph.sentences}};
  if (paragraph.relevance_label) doc["relevance_label"] = *paragraph.relevance_label;
  return doc;
}

Paragraph paragraph_from_json(const json& doc) {
  Paragraph paragraph;
  paragraph.title = doc.at("title").get<std::string>();
  paragraph.sentences = doc.at("sentences").get<std::vector<std::string>>();
  if (doc.contains("relevance_label")) paragraph.relevance_label = doc["relevance_label"].get<int>();
  return paragraph;
}

json to_json(const MultiHopExample& example) {
  json context = json::array();
  for (const auto& p : example.context) context.push_back(to_json(p));
  json doc = {{"id", example.id},
              {"question", example.question},
              {"answer", example.answer},
              {"answer_type", static_cast<int>(example.answer_type)},
              {"context", std::move(context)},
              {"supporting_facts", supporting_facts_json(example.supporting_facts)},
              {"hop_count", example.hop_count},
              {"format", to_string(example.format)},
              {"extras", example.extras}};
  if (example.gold_subquestions) doc["gold_subquestions"] = *example.gold_subquestions;
  if (example.gold_intermediate_answers) doc["gold_intermediate_answers"] = *example.gold_intermediate_answers;
  return doc;
}

MultiHopExample example_from_json(const json& doc) {
  try {
    MultiHopExample example;
    example.id = doc.at("id").get<std::string>();
    example.question = doc.at("question").get<std::string>();
    example.answer = doc.at("answer").get<std::string>();
    const int type = doc.at("answer_type").get<int>();
    if (type < 0 || type > 2) throw DataError("answer_type: code " + std::to_string(type) + " not in {0, 1, 2}");
    example.answer_type = static_cast<AnswerType>(type);
    for (const auto& p : doc.at("context")) example.context.push_back(paragraph_from_json(p));
    for (const auto& f : doc.at("supporting_facts")) {
      example.supporting_facts.push_back({f.at(0).get<std::string>(), f.at(1).get<int>()});
    }
    example.hop_count = doc.at("hop_count").get<int>();
    example.format = parse_format(doc.at("format").get<std::string>());
    example.extras = doc.value("extras", json::object());
    if (doc.contains("gold_subquestions")) {
      example.gold_subquestions = doc["gold_subquestions"].get<std::vector<std::string>>();
    }
    if (doc.contains("gold_intermediate_answers")) {
      example.gold_intermediate_answers = doc["gold_intermediate_answers"].get<std::vector<std::string>>();
    }
    validate(example);
    return example;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed example document: ") + e.what());
  }
}

std::vector<int> derive_paragraph_labels(const MultiHopExample& example) {
  std::set<std::string> cited;
  for (const auto& fact : example.supporting_facts) cited.insert(fact.title);
  std::vector<int> labels;
  labels.reserve(example.context.size());
  for (const auto& paragraph : example.context) labels.push_back(cited.count(paragraph.title) > 0 ? 1 : 0);
  return labels;
}

json to_json(const DecompositionExample& example) {
  json evidence = json::array();
  for (const auto& p : example.evidence_paragraphs) evidence.push_back(paragraph_pair(p));
  json doc = {{"id", example.id},
              {"question", example.question},
              {"subquestions", example.subquestions},
              {"evidence", std::move(evidence)}};
  if (example.hop_count) doc["hop_count"] = *example.hop_count;
  return doc;
}

DecompositionExample decomposition_from_json(const json& doc) {
  try {
    DecompositionExample example;
    example.id = doc.at("id").get<std::string>();
    example.question = doc.at("question").get<std::string>();
    example.subquestions = doc.at("subquestions").get<std::vector<std::string>>();
    if (doc.contains("hop_count") && !doc["hop_count"].is_null()) example.hop_count = doc["hop_count"].get<int>();
    for (const auto& entry : doc.value("evidence", json::array())) {
      Paragraph p;
      p.title = entry.at(0).get<std::string>();
      p.sentences = entry.at(1).get<std::vector<std::string>>();
      example.evidence_paragraphs.push_back(std::move(p));
    }
    validate(example);
    return example;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed decomposition record: ") + e.what());
  }
}

std::vector<DecompositionExample> load_decomposition_examples(const fs::path& path) {
  std::vector<DecompositionExample> examples;
  const auto records = read_records(path);
  for (std::size_t i = 0; i < records.size(); ++i) {
    try {
      examples.push_back(decomposition_from_json(records[i]));
    } catch (const DataError& e) {
      throw DataError("record " + std::to_string(i) + ": " + e.what());
    }
  }
  return examples;
}

void save_decomposition_examples(const fs::path& path, const std::vector<DecompositionExample>& examples) {
  std::vector<json> records;
  for (const auto& example : examples) records.push_back(to_json(example));
  io::write_jsonl(path, records);
}

std::optional<DecompositionExample> to_decomposition_example(const MultiHopExample& example) {
  if (!example.gold_subquestions || example.gold_subquestions->empty()) return std::nullopt;
  DecompositionExample out;
  out.id = example.id;
  out.question = example.question;
  out.subquestions = *example.gold_subquestions;
  out.hop_count = static_cast<int>(out.subquestions.size());
  const auto labels = derive_paragraph_labels(example);
  for (std::size_t i = 0; i < example.context.size(); ++i) {
    if (labels[i] == 1) out.evidence_paragraphs.push_back(example.context[i]);
  }
  return out;
}

std::pair<std::vector<DecompositionExample>, std::vector<DecompositionExample>> split_pokemqa(
    std::vector<DecompositionExample> examples, double ratio, std::uint64_t seed) {
  return seeded_split(std::move(examples), ratio, seed);
}

json predictions_to_json(const PredictionMap& predictions) {
  json answers = json::object();
  json sp = json::object();
  for (const auto& [id, record] : predictions) {
    answers[id] = record.answer;
    sp[id] = supporting_facts_json(record.supporting_facts);
  }
  return {{"answer", std::move(answers)}, {"sp", std::move(sp)}};
}

PredictionMap predictions_from_json(const json& doc) {
  if (!doc.is_object() || !doc.contains("answer") || !doc.contains("sp") || !doc["answer"].is_object() ||
      !doc["sp"].is_object()) {
    throw DataError("prediction file must be an object with 'answer' and 'sp' maps");
  }
  PredictionMap predictions;
  for (auto it = doc["answer"].begin(); it != doc["answer"].end(); ++it) {
    if (!it.value().is_string()) throw DataError("prediction '" + it.key() + "': answer must be a string");
    predictions[it.key()].answer = it.value().get<std::string>();
  }
  for (auto it = doc["sp"].begin(); it != doc["sp"].end(); ++it) {
    auto& record = predictions[it.key()];
    if (!it.value().is_array()) throw DataError("prediction '" + it.key() + "': sp must be an array");
    for (const auto& fact : it.value()) {
      if (!fact.is_array() || fact.size() != 2 || !fact[0].is_string() || !fact[1].is_number_integer()) {
        throw DataError("prediction '" + it.key() + "': sp entries must be [title, sentence_index]");
      }
      record.supporting_facts.push_back({fact[0].get<std::string>(), fact[1].get<int>()});
    }
  }
  return predictions;
}

std::string render_predictions(const PredictionMap& predictions) {
  return predictions_to_json(predictions).dump() + "\n";
}

void serialize_predictions(const PredictionMap& predictions, const fs::path& path) {
  io::write_file_atomic(path, render_predictions(predictions));
}

PredictionMap load_predictions(const fs::path& path) { return predictions_from_json(io::read_json(path)); }

}  // namespace mhqa::corpus
