#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mhqa/corpus.hpp"
#include "mhqa/error.hpp"
#include "mhqa/subquestions.hpp"

namespace mhqa::llm {

enum class PromptMode { kWithQd, kWithoutQd };

std::string_view to_string(PromptMode mode);
/// "with_qd" or "without_qd"; ConfigError otherwise.
PromptMode parse_prompt_mode(std::string_view name);

inline constexpr std::string_view kTemplateVersion = "mhqa-1shot-v1";

struct ShotExample {
  corpus::MultiHopExample example;
  qd::SubQuestionSet subquestions;
  std::vector<std::string> intermediate_answers;
};

/// Built-in demonstration: the Argentine PGA Championship question.
const ShotExample& default_shot();

struct PromptSpec {
  PromptMode mode = PromptMode::kWithQd;
  ShotExample shot;
  corpus::MultiHopExample target;
  std::optional<qd::SubQuestionSet> target_subquestions;
  std::string template_version{kTemplateVersion};
};

/// Pure rendering. with_qd needs sub-questions on both the shot and the
/// target (ConfigError otherwise); without_qd prints none.
std::string build_prompt(const PromptSpec& spec);

struct ParsedAnswer {
  std::string final_answer;
  std::vector<std::string> intermediate_answers;
  std::vector<std::string> supporting_titles;
  /// False when no "Final answer:" line was found.
  bool parseable = false;
};

ParsedAnswer parse_llm_answer(std::string_view raw_text, PromptMode mode);

/// The response format requested by build_prompt, for tests and stubs.
std::string render_response(const std::string& final_answer, const std::vector<std::string>& intermediate_answers,
                            const std::vector<std::string>& supporting_titles);

struct LLMResponse {
  std::string raw_text;
  std::string parsed_answer;
  std::vector<std::string> parsed_supporting_titles;
  std::vector<std::string> parsed_intermediate_answers;
  bool parseable = false;
  std::string model_id;
  bool cached = false;
  double latency_ms = 0.0;
};

struct ClientConfig {
  std::string endpoint = "https://api.openai.com/v1/chat/completions";
  std::string model_id = "gpt-4";
  double temperature = 0.0;
  std::string credential_env = "LLM_API_KEY";
  std::filesystem::path cache_dir = "llm_cache";
  int max_concurrency = 4;
  int max_retries = 4;
  std::chrono::milliseconds initial_backoff{500};
  std::chrono::milliseconds max_backoff{30000};
  /// 0 disables client-side pacing.
  double requests_per_minute = 0.0;
  std::chrono::seconds timeout{60};
};

void validate(const ClientConfig& config);
nlohmann::json to_json(const ClientConfig& config);
ClientConfig client_config_from_json(const nlohmann::json& doc);

struct TransportResponse {
  int status = 0;
  std::string body;
  /// Seconds from a Retry-After header, when sent.
  std::optional<double> retry_after;
};

/// Raised by a transport when no HTTP response was obtained.
class TransportFailure : public RuntimeError {
 public:
  explicit TransportFailure(const std::string& message) : RuntimeError(message) {}
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual TransportResponse post(const std::string& url, const std::map<std::string, std::string>& headers,
                                 const std::string& body) = 0;
};

/// HTTP(S) transport with the given timeout.
std::unique_ptr<Transport> make_http_transport(std::chrono::seconds timeout);

/// Content-addressed response store, one file per key, written atomically.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);

  static std::string key(std::string_view prompt, std::string_view model_id, double temperature);

  std::optional<std::string> lookup(const std::string& key) const;
  void store(const std::string& key, const std::string& raw_text, const nlohmann::json& metadata) const;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

/// Chat-completions client with caching, pacing, bounded retries and a cap
/// on in-flight requests. At most one network call is made per cache key.
class LlmClient {
 public:
  LlmClient(ClientConfig config, std::shared_ptr<Transport> transport, Sleeper sleeper = {});
  ~LlmClient();

  LLMResponse query(const std::string& prompt, PromptMode mode = PromptMode::kWithQd);
  /// Same order as the prompts; runs up to max_concurrency at once.
  std::vector<LLMResponse> query_batch(const std::vector<std::string>& prompts, PromptMode mode);

  std::size_t network_calls() const { return network_calls_.load(); }
  const ClientConfig& config() const { return config_; }

 private:
  std::string fetch(const std::string& prompt);
  std::shared_ptr<std::mutex> key_lock(const std::string& key);
  void pace();

  ClientConfig config_;
  std::shared_ptr<Transport> transport_;
  Sleeper sleeper_;
  ResponseCache cache_;
  std::atomic<std::size_t> network_calls_{0};
  std::mutex locks_mutex_;
  std::map<std::string, std::shared_ptr<std::mutex>> key_locks_;
  struct Gate;
  std::unique_ptr<Gate> gate_;
  std::mutex pace_mutex_;
  std::chrono::steady_clock::time_point next_slot_{};
};

}  // namespace mhqa::llm
