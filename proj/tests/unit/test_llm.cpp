#include <gtest/gtest.h>

#include <cstdlib>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "mhqa/corpus.hpp"
#include "mhqa/error.hpp"
#include "mhqa/llm.hpp"
#include "support.hpp"

using namespace mhqa;
using namespace mhqa::llm;
using namespace std::chrono_literals;
using mhqa::testing::fixture;
using mhqa::testing::TempDir;

namespace {

constexpr const char* kKeyVar = "MHQA_TEST_LLM_KEY";

std::string chat_body(const std::string& content) {
  return nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}}.dump();
}

// Scripted transport: pops queued responses, then answers 200 with a canned
// reply. Tracks the peak number of concurrent calls.
class FakeTransport : public Transport {
 public:
  std::vector<TransportResponse> script;
  std::chrono::milliseconds delay{0};
  std::atomic<int> calls{0};
  std::atomic<int> in_flight{0};
  std::atomic<int> peak{0};
  std::string last_authorization;
  std::mutex mutex;

  TransportResponse post(const std::string&, const std::map<std::string, std::string>& headers,
                         const std::string& body) override {
    const int now = ++in_flight;
    for (int p = peak.load(); now > p && !peak.compare_exchange_weak(p, now);) {
    }
    ++calls;
    if (delay.count() > 0) std::this_thread::sleep_for(delay);
    std::lock_guard guard(mutex);
    --in_flight;
    last_authorization = headers.at("Authorization");
    if (!script.empty()) {
      auto r = script.front();
      script.erase(script.begin());
      if (r.status < 0) throw TransportFailure("connection reset");
      return r;
    }
    const auto prompt = nlohmann::json::parse(body)["messages"][0]["content"].get<std::string>();
    return {200, chat_body("Final answer: " + std::to_string(prompt.size())), std::nullopt};
  }
};

struct EnvKey {
  explicit EnvKey(const char* value) { ::setenv(kKeyVar, value, 1); }
  ~EnvKey() { ::unsetenv(kKeyVar); }
};

ClientConfig test_config(const std::filesystem::path& cache) {
  ClientConfig config;
  config.endpoint = "http://stub.invalid/v1/chat/completions";
  config.model_id = "stub-model";
  config.credential_env = kKeyVar;
  config.cache_dir = cache;
  config.max_retries = 3;
  config.initial_backoff = 100ms;
  config.max_backoff = 350ms;
  return config;
}

struct SleepLog {
  std::vector<std::chrono::milliseconds> waits;
  std::mutex mutex;
  Sleeper sleeper() {
    return [this](std::chrono::milliseconds d) {
      std::lock_guard guard(mutex);
      waits.push_back(d);
    };
  }
};

PromptSpec figure_one_spec(PromptMode mode) {
  const auto examples = corpus::load_multihop_dataset(fixture("hvsqa.json"), corpus::DatasetFormat::kHvsqa);
  PromptSpec spec;
  spec.mode = mode;
  spec.shot = default_shot();
  spec.target = examples[1];
  if (mode == PromptMode::kWithQd) spec.target_subquestions = qd::SubQuestionSet{*examples[1].gold_subquestions};
  return spec;
}

}  // namespace

TEST(Prompt, ByteStableAcrossRenderings) {
  for (auto mode : {PromptMode::kWithQd, PromptMode::kWithoutQd}) {
    const auto first = build_prompt(figure_one_spec(mode));
    for (int i = 0; i < 100; ++i) ASSERT_EQ(build_prompt(figure_one_spec(mode)), first);
  }
}

TEST(Prompt, WithQdListsSubquestionsBeforeAnswerSlot) {
  const auto& shot = default_shot();
  const auto prompt = build_prompt(figure_one_spec(PromptMode::kWithQd));
  const auto answer_slot = prompt.find("Final answer: " + shot.example.answer);
  ASSERT_NE(answer_slot, std::string::npos);
  for (const auto& q : shot.subquestions.subquestions) {
    const auto at = prompt.find(q);
    ASSERT_NE(at, std::string::npos) << q;
    EXPECT_LT(at, answer_slot);
  }
  EXPECT_NE(prompt.find("Who is the record holder for Argentine PGA Championship tournaments?"), std::string::npos);
  EXPECT_NE(prompt.find("How many tournaments did Roberto De Vicenzo win?"), std::string::npos);
  EXPECT_NE(prompt.find("Sub-answer 1: Roberto De Vicenzo"), std::string::npos);
  // the task block carries no answer
  const auto task = prompt.substr(prompt.find("### Task"));
  EXPECT_EQ(task.find("Final answer:"), std::string::npos);
  EXPECT_EQ(prompt.rfind("[mhqa-1shot-v1 with_qd]", 0), 0u);
}

TEST(Prompt, WithoutQdHasNoSubquestionLines) {
  const auto prompt = build_prompt(figure_one_spec(PromptMode::kWithoutQd));
  EXPECT_EQ(prompt.find("Sub-"), std::string::npos);
  for (const auto& q : default_shot().subquestions.subquestions) EXPECT_EQ(prompt.find(q), std::string::npos);
  EXPECT_NE(prompt.find(default_shot().example.question), std::string::npos);
}

TEST(Prompt, WithQdNeedsSubquestions) {
  auto spec = figure_one_spec(PromptMode::kWithQd);
  spec.target_subquestions.reset();
  EXPECT_THROW(build_prompt(spec), ConfigError);
  EXPECT_EQ(parse_prompt_mode("without_qd"), PromptMode::kWithoutQd);
  EXPECT_THROW(parse_prompt_mode("both"), ConfigError);
}

TEST(ParseAnswer, TemplateCases) {
  const auto a = parse_llm_answer("Sub-answer 1: Roberto De Vicenzo\nSub-answer 2: 230\nFinal answer: 230", PromptMode::kWithQd);
  EXPECT_TRUE(a.parseable);
  EXPECT_EQ(a.final_answer, "230");
  EXPECT_EQ(a.intermediate_answers, (std::vector<std::string>{"Roberto De Vicenzo", "230"}));
  EXPECT_TRUE(a.supporting_titles.empty());

  const auto b = parse_llm_answer("Final answer: yes", PromptMode::kWithoutQd);
  EXPECT_EQ(b.final_answer, "yes");
  EXPECT_TRUE(b.intermediate_answers.empty());

  const auto c = parse_llm_answer("I think it is 230.", PromptMode::kWithoutQd);
  EXPECT_FALSE(c.parseable);
  EXPECT_EQ(c.final_answer, "");

  const auto d = parse_llm_answer("  final ANSWER :  Lisbon \nSupporting titles: A; B ;", PromptMode::kWithoutQd);
  EXPECT_EQ(d.final_answer, "Lisbon");
  EXPECT_EQ(d.supporting_titles, (std::vector<std::string>{"A", "B"}));
}

TEST(ParseAnswer, RenderRoundTrip) {
  const std::vector<std::string> subs = {"X", "Y z"}, titles = {"T1", "T 2"};
  const auto parsed = parse_llm_answer(render_response("final", subs, titles), PromptMode::kWithQd);
  EXPECT_EQ(parsed.final_answer, "final");
  EXPECT_EQ(parsed.intermediate_answers, subs);
  EXPECT_EQ(parsed.supporting_titles, titles);
}

TEST(Client, SecondPassIsServedFromCache) {
  TempDir dir;
  EnvKey key("secret");
  auto transport = std::make_shared<FakeTransport>();
  const std::vector<std::string> prompts = {"p-one", "p-two", "p-three"};
  {
    LlmClient client(test_config(dir / "cache"), transport);
    const auto first = client.query_batch(prompts, PromptMode::kWithoutQd);
    EXPECT_EQ(client.network_calls(), 3u);
    for (const auto& r : first) EXPECT_FALSE(r.cached);
    EXPECT_EQ(transport->last_authorization, "Bearer secret");
  }
  LlmClient replay(test_config(dir / "cache"), transport);
  const auto second = replay.query_batch(prompts, PromptMode::kWithoutQd);
  EXPECT_EQ(replay.network_calls(), 0u);
  EXPECT_EQ(transport->calls.load(), 3);
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    EXPECT_TRUE(second[i].cached);
    EXPECT_EQ(second[i].parsed_answer, std::to_string(prompts[i].size()));
  }
}

TEST(Client, CacheKeyCoversModelAndTemperature) {
  const auto base = ResponseCache::key("p", "m", 0.0);
  EXPECT_EQ(base, ResponseCache::key("p", "m", 0.0));
  EXPECT_NE(base, ResponseCache::key("p", "m2", 0.0));
  EXPECT_NE(base, ResponseCache::key("p", "m", 0.5));
  EXPECT_NE(base, ResponseCache::key("q", "m", 0.0));
  EXPECT_EQ(base.size(), 64u);
}

TEST(Client, DuplicatePromptsInOneBatchCallOnce) {
  TempDir dir;
  EnvKey key("secret");
  auto transport = std::make_shared<FakeTransport>();
  transport->delay = 20ms;
  LlmClient client(test_config(dir / "cache"), transport);
  const auto out = client.query_batch(std::vector<std::string>(6, "same"), PromptMode::kWithoutQd);
  EXPECT_EQ(client.network_calls(), 1u);
  for (const auto& r : out) EXPECT_EQ(r.raw_text, out[0].raw_text);
}

TEST(Client, AuthFailureIsNotRetried) {
  TempDir dir;
  EnvKey key("bad");
  auto transport = std::make_shared<FakeTransport>();
  transport->script = {{401, "{}", std::nullopt}};
  SleepLog sleeps;
  LlmClient client(test_config(dir / "cache"), transport, sleeps.sleeper());
  EXPECT_THROW(client.query("p"), AuthError);
  EXPECT_EQ(transport->calls.load(), 1);
  EXPECT_TRUE(sleeps.waits.empty());
}

TEST(Client, MissingCredentialIsAuthError) {
  TempDir dir;
  ::unsetenv(kKeyVar);
  auto transport = std::make_shared<FakeTransport>();
  LlmClient client(test_config(dir / "cache"), transport);
  EXPECT_THROW(client.query("p"), AuthError);
  EXPECT_EQ(transport->calls.load(), 0);
}

TEST(Client, RateLimitHonoursRetryAfter) {
  TempDir dir;
  EnvKey key("secret");
  auto transport = std::make_shared<FakeTransport>();
  transport->script = {{429, "", 0.25}, {429, "", 10.0}};
  SleepLog sleeps;
  LlmClient client(test_config(dir / "cache"), transport, sleeps.sleeper());
  const auto r = client.query("p");
  EXPECT_TRUE(r.parseable);
  // the second wait is capped at max_backoff
  EXPECT_EQ(sleeps.waits, (std::vector<std::chrono::milliseconds>{250ms, 350ms}));
}

TEST(Client, ServerErrorsBackOffExponentiallyThenGiveUp) {
  TempDir dir;
  EnvKey key("secret");
  auto transport = std::make_shared<FakeTransport>();
  transport->script = {{500, "", std::nullopt}, {-1, "", std::nullopt}, {503, "", std::nullopt}, {502, "", std::nullopt}};
  SleepLog sleeps;
  LlmClient client(test_config(dir / "cache"), transport, sleeps.sleeper());
  EXPECT_THROW(client.query("p"), RuntimeError);
  EXPECT_EQ(transport->calls.load(), 4);
  EXPECT_EQ(sleeps.waits, (std::vector<std::chrono::milliseconds>{100ms, 200ms, 350ms}));
  EXPECT_FALSE(ResponseCache(dir / "cache").lookup(ResponseCache::key("p", "stub-model", 0.0)));
}

TEST(Client, TransientErrorThenSuccess) {
  TempDir dir;
  EnvKey key("secret");
  auto transport = std::make_shared<FakeTransport>();
  transport->script = {{503, "", std::nullopt}, {200, chat_body("Final answer: ok"), std::nullopt}};
  SleepLog sleeps;
  LlmClient client(test_config(dir / "cache"), transport, sleeps.sleeper());
  EXPECT_EQ(client.query("p").parsed_answer, "ok");
  EXPECT_EQ(client.network_calls(), 2u);
}

TEST(Client, MalformedBodyIsDataError) {
  TempDir dir;
  EnvKey key("secret");
  auto transport = std::make_shared<FakeTransport>();
  transport->script = {{200, "not json", std::nullopt}};
  LlmClient client(test_config(dir / "cache"), transport);
  EXPECT_THROW(client.query("p"), DataError);
}

TEST(Client, ConcurrencyIsCapped) {
  TempDir dir;
  EnvKey key("secret");
  auto transport = std::make_shared<FakeTransport>();
  transport->delay = 15ms;
  auto config = test_config(dir / "cache");
  config.max_concurrency = 2;
  LlmClient client(config, transport);
  std::vector<std::string> prompts;
  for (int i = 0; i < 8; ++i) prompts.push_back("prompt " + std::to_string(i));
  const auto out = client.query_batch(prompts, PromptMode::kWithoutQd);
  EXPECT_EQ(out.size(), 8u);
  EXPECT_LE(transport->peak.load(), 2);
  for (std::size_t i = 0; i < prompts.size(); ++i) EXPECT_EQ(out[i].parsed_answer, std::to_string(prompts[i].size()));
}

TEST(Client, PacingSpacesRequests) {
  TempDir dir;
  EnvKey key("secret");
  auto transport = std::make_shared<FakeTransport>();
  auto config = test_config(dir / "cache");
  config.requests_per_minute = 600;  // one request per 100 ms
  SleepLog sleeps;
  LlmClient client(config, transport, sleeps.sleeper());
  client.query("a");
  client.query("b");
  ASSERT_EQ(sleeps.waits.size(), 1u);
  EXPECT_GT(sleeps.waits[0].count(), 50);
  EXPECT_LE(sleeps.waits[0].count(), 100);
}

TEST(ClientConfigJson, RoundTripAndValidation) {
  auto config = test_config("c");
  EXPECT_EQ(to_json(client_config_from_json(to_json(config))), to_json(config));
  EXPECT_THROW(client_config_from_json({{"max_concurrency", 0}}), ConfigError);
  EXPECT_THROW(client_config_from_json({{"model_id", ""}}), ConfigError);
}

TEST(HttpTransport, TalksToLocalServer) {
  httplib::Server server;
  std::atomic<int> hits{0};
  std::string seen_auth;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    ++hits;
    seen_auth = req.get_header_value("Authorization");
    const auto doc = nlohmann::json::parse(req.body);
    res.set_content(chat_body("Final answer: " + doc["model"].get<std::string>()), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  TempDir dir;
  EnvKey key("k123");
  auto config = test_config(dir / "cache");
  config.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  LlmClient client(config, make_http_transport(5s));
  EXPECT_EQ(client.query("hello").parsed_answer, "stub-model");
  EXPECT_TRUE(client.query("hello").cached);
  EXPECT_EQ(hits.load(), 1);
  EXPECT_EQ(seen_auth, "Bearer k123");

  auto refused = make_http_transport(1s);
  server.stop();
  thread.join();
  EXPECT_THROW(refused->post(config.endpoint, {}, "{}"), TransportFailure);
  EXPECT_THROW(refused->post("not a url", {}, "{}"), ConfigError);
}
