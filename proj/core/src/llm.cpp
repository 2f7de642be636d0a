#include "mhqa/llm.hpp"

#include <algorithm>
#include <cmath>
#include <regex>
#include <semaphore>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "mhqa/io.hpp"

namespace mhqa::llm {

using nlohmann::json;

std::string_view to_string(PromptMode mode) { return mode == PromptMode::kWithQd ? "with_qd" : "without_qd"; }

PromptMode parse_prompt_mode(std::string_view name) {
  if (name == "with_qd") return PromptMode::kWithQd;
  if (name == "without_qd") return PromptMode::kWithoutQd;
  throw ConfigError("unknown prompt mode '" + std::string(name) + "' (expected with_qd or without_qd)");
}

const ShotExample& default_shot() {
  static const ShotExample shot = [] {
    ShotExample s;
    auto& e = s.example;
    e.id = "shot-argentine-pga";
    e.question = "The Argentine PGA Championship record holder has won how many tournaments worldwide?";
    e.answer = "230";
    e.context = {
        {"Argentine PGA Championship",
         {"The Argentine PGA Championship is an annual golf tournament held in Argentina.",
          "Roberto De Vicenzo holds the record with nine wins."},
         std::nullopt},
        {"Roberto De Vicenzo",
         {"Roberto De Vicenzo was an Argentine professional golfer.",
          "He won 230 tournaments worldwide during his career."},
         std::nullopt},
    };
    e.supporting_facts = {{"Argentine PGA Championship", 1}, {"Roberto De Vicenzo", 1}};
    s.subquestions.subquestions = {"Who is the record holder for Argentine PGA Championship tournaments?",
                                   "How many tournaments did Roberto De Vicenzo win?"};
    s.intermediate_answers = {"Roberto De Vicenzo", "230"};
    return s;
  }();
  return shot;
}

namespace {

void render_block(std::string& out, const corpus::MultiHopExample& example, const qd::SubQuestionSet* subquestions) {
  out += "Context:\n";
  for (std::size_t i = 0; i < example.context.size(); ++i) {
    const auto& p = example.context[i];
    out += fmt::format("[{}] {}:", i + 1, p.title);
    for (const auto& s : p.sentences) {
      out += ' ';
      out += s;
    }
    out += '\n';
  }
  out += "Question: " + example.question + "\n";
  if (subquestions != nullptr) {
    out += "Sub-questions:\n";
    for (std::size_t i = 0; i < subquestions->size(); ++i) {
      out += fmt::format("{}. {}\n", i + 1, subquestions->subquestions[i]);
    }
  }
}

std::vector<std::string> supporting_titles(const corpus::MultiHopExample& example) {
  std::vector<std::string> titles;
  for (const auto& f : example.supporting_facts) {
    if (std::find(titles.begin(), titles.end(), f.title) == titles.end()) titles.push_back(f.title);
  }
  return titles;
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  return std::string(s.substr(first, s.find_last_not_of(" \t\r\n") - first + 1));
}

}  // namespace

std::string render_response(const std::string& final_answer, const std::vector<std::string>& intermediate_answers,
                            const std::vector<std::string>& supporting_titles) {
  std::string out;
  for (std::size_t i = 0; i < intermediate_answers.size(); ++i) {
    out += fmt::format("Sub-answer {}: {}\n", i + 1, intermediate_answers[i]);
  }
  out += "Supporting titles: ";
  for (std::size_t i = 0; i < supporting_titles.size(); ++i) {
    if (i > 0) out += "; ";
    out += supporting_titles[i];
  }
  out += "\nFinal answer: " + final_answer + "\n";
  return out;
}

std::string build_prompt(const PromptSpec& spec) {
  const bool with_qd = spec.mode == PromptMode::kWithQd;
  if (with_qd) {
    if (!spec.target_subquestions || spec.target_subquestions->empty()) {
      throw ConfigError("with_qd prompt for '" + spec.target.id + "' has no sub-questions");
    }
    if (spec.shot.subquestions.empty()) throw ConfigError("with_qd prompt needs a decomposed shot example");
  }
  std::string out = "[" + spec.template_version + " " + std::string(to_string(spec.mode)) + "]\n";
  out += "Answer the question using the numbered context paragraphs.";
  if (with_qd) out += " Answer each sub-question first, then use those answers for the question.";
  out += "\nReply with exactly these lines and nothing else:\n";
  if (with_qd) out += "Sub-answer <i>: <answer to sub-question i>\n";
  out += "Supporting titles: <paragraph titles used, separated by \"; \">\n";
  out += "Final answer: <short answer, or yes / no>\n";

  out += "\n### Example\n";
  render_block(out, spec.shot.example, with_qd ? &spec.shot.subquestions : nullptr);
  out += render_response(spec.shot.example.answer,
                         with_qd ? spec.shot.intermediate_answers : std::vector<std::string>{},
                         supporting_titles(spec.shot.example));

  out += "\n### Task\n";
  render_block(out, spec.target, with_qd ? &*spec.target_subquestions : nullptr);
  return out;
}

ParsedAnswer parse_llm_answer(std::string_view raw_text, PromptMode /*mode*/) {
  static const std::regex sub_answer(R"(^\s*sub-answer\s*(\d+)\s*:(.*)$)", std::regex::icase);
  static const std::regex titles(R"(^\s*supporting titles\s*:(.*)$)", std::regex::icase);
  static const std::regex final_answer(R"(^\s*final answer\s*:(.*)$)", std::regex::icase);
  ParsedAnswer parsed;
  std::map<int, std::string> subs;
  std::istringstream lines{std::string(raw_text)};
  std::string line;
  std::smatch m;
  while (std::getline(lines, line)) {
    if (std::regex_match(line, m, sub_answer)) {
      const int index = std::stoi(m[1].str());
      if (index >= 1 && index <= 64 && !subs.count(index)) subs[index] = trim(m[2].str());
    } else if (std::regex_match(line, m, titles)) {
      parsed.supporting_titles.clear();
      std::istringstream parts(m[1].str());
      std::string part;
      while (std::getline(parts, part, ';')) {
        if (auto t = trim(part); !t.empty()) parsed.supporting_titles.push_back(t);
      }
    } else if (!parsed.parseable && std::regex_match(line, m, final_answer)) {
      parsed.final_answer = trim(m[1].str());
      parsed.parseable = true;
    }
  }
  if (!subs.empty()) {
    parsed.intermediate_answers.resize(static_cast<std::size_t>(subs.rbegin()->first));
    for (const auto& [i, text] : subs) parsed.intermediate_answers[static_cast<std::size_t>(i - 1)] = text;
  }
  return parsed;
}

void validate(const ClientConfig& config) {
  if (config.model_id.empty()) throw ConfigError("llm model_id is empty");
  if (config.endpoint.empty()) throw ConfigError("llm endpoint is empty");
  if (config.max_concurrency < 1) throw ConfigError("llm max_concurrency must be >= 1");
  if (config.max_retries < 0) throw ConfigError("llm max_retries must be >= 0");
  if (config.requests_per_minute < 0) throw ConfigError("llm requests_per_minute must be >= 0");
  if (config.temperature < 0) throw ConfigError("llm temperature must be >= 0");
}

json to_json(const ClientConfig& config) {
  return {{"endpoint", config.endpoint},
          {"model_id", config.model_id},
          {"temperature", config.temperature},
          {"credential_env", config.credential_env},
          {"cache_dir", config.cache_dir.string()},
          {"max_concurrency", config.max_concurrency},
          {"max_retries", config.max_retries},
          {"initial_backoff_ms", config.initial_backoff.count()},
          {"max_backoff_ms", config.max_backoff.count()},
          {"requests_per_minute", config.requests_per_minute},
          {"timeout_s", config.timeout.count()}};
}

ClientConfig client_config_from_json(const json& doc) {
  ClientConfig c;
  try {
    c.endpoint = doc.value("endpoint", c.endpoint);
    c.model_id = doc.value("model_id", c.model_id);
    c.temperature = doc.value("temperature", c.temperature);
    c.credential_env = doc.value("credential_env", c.credential_env);
    c.cache_dir = doc.value("cache_dir", c.cache_dir.string());
    c.max_concurrency = doc.value("max_concurrency", c.max_concurrency);
    c.max_retries = doc.value("max_retries", c.max_retries);
    c.initial_backoff = std::chrono::milliseconds(doc.value("initial_backoff_ms", c.initial_backoff.count()));
    c.max_backoff = std::chrono::milliseconds(doc.value("max_backoff_ms", c.max_backoff.count()));
    c.requests_per_minute = doc.value("requests_per_minute", c.requests_per_minute);
    c.timeout = std::chrono::seconds(doc.value("timeout_s", c.timeout.count()));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("llm config: ") + e.what());
  }
  validate(c);
  return c;
}

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

std::string ResponseCache::key(std::string_view prompt, std::string_view model_id, double temperature) {
  const json k = {{"prompt", prompt}, {"model_id", model_id}, {"temperature", temperature}};
  return io::sha256_hex(k.dump());
}

std::optional<std::string> ResponseCache::lookup(const std::string& key) const {
  const auto path = dir_ / (key + ".json");
  if (!std::filesystem::exists(path)) return std::nullopt;
  const json doc = io::read_json(path);
  if (!doc.contains("raw_text") || !doc["raw_text"].is_string()) {
    throw DataError("cache entry '" + path.string() + "' has no raw_text");
  }
  return doc["raw_text"].get<std::string>();
}

void ResponseCache::store(const std::string& key, const std::string& raw_text, const json& metadata) const {
  json doc = metadata;
  doc["key"] = key;
  doc["raw_text"] = raw_text;
  io::write_file_atomic(dir_ / (key + ".json"), doc.dump(2) + "\n");
}

struct LlmClient::Gate {
  explicit Gate(int n) : slots(n) {}
  std::counting_semaphore<256> slots;
};

LlmClient::LlmClient(ClientConfig config, std::shared_ptr<Transport> transport, Sleeper sleeper)
    : config_(std::move(config)),
      transport_(std::move(transport)),
      sleeper_(sleeper ? std::move(sleeper) : Sleeper([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); })),
      cache_(config_.cache_dir) {
  validate(config_);
  gate_ = std::make_unique<Gate>(std::min(config_.max_concurrency, 256));
}

LlmClient::~LlmClient() = default;

std::shared_ptr<std::mutex> LlmClient::key_lock(const std::string& key) {
  std::lock_guard guard(locks_mutex_);
  auto& slot = key_locks_[key];
  if (!slot) slot = std::make_shared<std::mutex>();
  return slot;
}

void LlmClient::pace() {
  if (config_.requests_per_minute <= 0) return;
  const auto interval = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
      std::chrono::duration<double>(60.0 / config_.requests_per_minute));
  std::chrono::milliseconds wait{0};
  {
    std::lock_guard guard(pace_mutex_);
    const auto now = std::chrono::steady_clock::now();
    const auto slot = std::max(now, next_slot_);
    next_slot_ = slot + interval;
    wait = std::chrono::ceil<std::chrono::milliseconds>(slot - now);
  }
  if (wait.count() > 0) sleeper_(wait);
}

std::string LlmClient::fetch(const std::string& prompt) {
  const char* credential = std::getenv(config_.credential_env.c_str());
  if (credential == nullptr || *credential == '\0') {
    throw AuthError("credential variable " + config_.credential_env + " is not set");
  }
  if (!transport_) throw DependencyError("transport", "no transport configured for LLM requests");
  const json body = {{"model", config_.model_id},
                     {"temperature", config_.temperature},
                     {"messages", json::array({{{"role", "user"}, {"content", prompt}}})}};
  const std::map<std::string, std::string> headers = {{"Authorization", std::string("Bearer ") + credential}};
  const std::string payload = body.dump();

  auto backoff = config_.initial_backoff;
  std::string last_error;
  std::optional<std::chrono::milliseconds> retry_after;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) {
      if (retry_after) {
        sleeper_(*retry_after);
      } else {
        sleeper_(backoff);
        backoff = std::min(config_.max_backoff, backoff * 2);
      }
      retry_after.reset();
    }
    pace();
    TransportResponse response;
    try {
      gate_->slots.acquire();
      struct Release {
        Gate& gate;
        ~Release() { gate.slots.release(); }
      } release{*gate_};
      ++network_calls_;
      response = transport_->post(config_.endpoint, headers, payload);
    } catch (const TransportFailure& e) {
      last_error = e.what();
      spdlog::warn("LLM request attempt {} failed: {}", attempt + 1, last_error);
      continue;
    }
    if (response.status == 401 || response.status == 403) {
      throw AuthError(fmt::format("LLM service rejected the credential (HTTP {})", response.status));
    }
    if (response.status == 429) {
      last_error = "rate limited (HTTP 429)";
      if (response.retry_after) {
        const auto wait = std::chrono::milliseconds(static_cast<long long>(std::ceil(*response.retry_after * 1000.0)));
        retry_after = std::min(wait, config_.max_backoff);
      }
      continue;
    }
    if (response.status >= 500) {
      last_error = fmt::format("server error (HTTP {})", response.status);
      continue;
    }
    if (response.status != 200) {
      throw RuntimeError(fmt::format("LLM request failed with HTTP {}: {}", response.status, response.body));
    }
    try {
      const json doc = json::parse(response.body);
      return doc.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
      throw DataError(std::string("unexpected LLM response body: ") + e.what());
    }
  }
  throw RuntimeError(fmt::format("LLM request failed after {} attempts: {}", config_.max_retries + 1, last_error));
}

LLMResponse LlmClient::query(const std::string& prompt, PromptMode mode) {
  const auto started = std::chrono::steady_clock::now();
  const std::string key = ResponseCache::key(prompt, config_.model_id, config_.temperature);
  LLMResponse response;
  response.model_id = config_.model_id;
  {
    const auto lock = key_lock(key);
    std::lock_guard guard(*lock);
    if (auto hit = cache_.lookup(key)) {
      response.raw_text = std::move(*hit);
      response.cached = true;
    } else {
      response.raw_text = fetch(prompt);
      cache_.store(key, response.raw_text,
                   {{"model_id", config_.model_id},
                    {"temperature", config_.temperature},
                    {"prompt_sha256", io::sha256_hex(prompt)}});
    }
  }
  const auto parsed = parse_llm_answer(response.raw_text, mode);
  response.parsed_answer = parsed.final_answer;
  response.parsed_intermediate_answers = parsed.intermediate_answers;
  response.parsed_supporting_titles = parsed.supporting_titles;
  response.parseable = parsed.parseable;
  response.latency_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  return response;
}

std::vector<LLMResponse> LlmClient::query_batch(const std::vector<std::string>& prompts, PromptMode mode) {
  std::vector<LLMResponse> responses(prompts.size());
  std::vector<std::exception_ptr> errors(prompts.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < prompts.size(); i = next++) {
      try {
        responses[i] = query(prompts[i], mode);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(config_.max_concurrency), prompts.size());
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < workers; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return responses;
}

}  // namespace mhqa::llm
