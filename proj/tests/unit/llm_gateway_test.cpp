#include <doctest.h>

#include <atomic>
#include <thread>

#include <httplib.h>

#include "erragree/digest.hpp"
#include "erragree/error.hpp"
#include "erragree/fileio.hpp"
#include "erragree/llm_gateway.hpp"
#include "support.hpp"

using namespace erragree;
using erragree::testing::TempDir;
using nlohmann::json;

namespace {

std::shared_ptr<ScriptedProvider> script(const char* text) {
  return std::make_shared<ScriptedProvider>(ScriptedProvider::from_json(json::parse(text)));
}

// Fails `failures` times with the given error, then echoes the prompt.
class FlakyProvider final : public LlmProvider {
 public:
  FlakyProvider(int failures, bool retryable) : failures_(failures), retryable_(retryable) {}
  std::string describe() const override { return "flaky"; }
  std::string complete(const std::string&, const SessionParams&, std::span<const ChatMessage> m) override {
    ++calls;
    if (failures_-- > 0) {
      if (retryable_) throw RateLimited("slow down");
      throw ProviderRejected("bad request");
    }
    return "echo: " + m.back().content;
  }
  std::atomic<int> calls{0};

 private:
  int failures_;
  bool retryable_;
};

class ConcurrencyProbe final : public LlmProvider {
 public:
  std::string describe() const override { return "probe"; }
  std::string complete(const std::string&, const SessionParams&, std::span<const ChatMessage> m) override {
    const int now = ++active;
    int seen = peak.load();
    while (now > seen && !peak.compare_exchange_weak(seen, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    --active;
    return m.back().content;
  }
  std::atomic<int> active{0};
  std::atomic<int> peak{0};
};

}  // namespace

TEST_CASE("scripted provider matching rules") {
  auto p = script(R"([
    {"model": "m2", "reply": "model two"},
    {"contains": "remember", "turn": 0, "reply": "ok"},
    {"contains": "question", "replies": ["first", "second"]},
    {"sample": 3, "reply": "sample three"}
  ])");
  LlmGateway llm(p);
  auto s = llm.new_session("m1", {});
  CHECK(llm.chat(s, "please remember this") == "ok");
  CHECK(llm.chat(s, "a question") == "first");
  CHECK_THROWS_AS(llm.chat(s, "please remember this"), UnscriptedPrompt);  // turn 2 now

  auto s2 = llm.new_session("m1", SessionParams{1.0, 10, 1});
  CHECK(llm.chat(s2, "a question") == "second");
  auto s7 = llm.new_session("m1", SessionParams{1.0, 10, 7});
  CHECK(llm.chat(s7, "a question") == "second");  // clamped to the last reply
  auto s3 = llm.new_session("m1", SessionParams{1.0, 10, 3});
  CHECK(llm.chat(s3, "anything") == "sample three");
  auto other = llm.new_session("m2", {});
  CHECK(llm.chat(other, "anything") == "model two");

  const std::string prompt = "hashed prompt";
  auto by_digest = std::make_shared<ScriptedProvider>(
      std::vector<ScriptedProvider::Rule>{{std::nullopt, std::nullopt, sha256_hex(prompt), {}, {}, {"by digest"}}});
  LlmGateway d(by_digest);
  auto sd = d.new_session("m", {});
  CHECK(d.chat(sd, prompt) == "by digest");
}

TEST_CASE("sessions keep transcripts and unique ids") {
  GatewayOptions o;
  o.session_prefix = "gen";
  LlmGateway llm(script(R"([{"reply": "r"}])"), nullptr, o);
  auto a = llm.new_session("m", {}, std::string("be terse"));
  auto b = llm.new_session("m", {});
  CHECK(a.session_id == "gen-0001");
  CHECK(b.session_id == "gen-0002");
  llm.chat(a, "one");
  llm.chat(a, "two");
  REQUIRE(a.transcript.size() == 5);
  CHECK(a.transcript[0].role == Role::kSystem);
  CHECK(a.user_turns() == 2);

  TempDir dir;
  save_session(a, dir / "s.json");
  CHECK(load_session(dir / "s.json") == a);
}

TEST_CASE("caching: identical history is served from cache") {
  auto flaky = std::make_shared<FlakyProvider>(0, true);
  LlmGateway llm(flaky);
  auto a = llm.new_session("m", {});
  auto b = llm.new_session("m", {});
  CHECK(llm.chat(a, "hello") == llm.chat(b, "hello"));
  CHECK(flaky->calls == 1);
  CHECK(llm.cache_hits() == 1);

  // A different sample is a different draw.
  auto c = llm.new_session("m", SessionParams{.sample = 1});
  llm.chat(c, "hello");
  CHECK(flaky->calls == 2);

  // Cache key covers model, params and every message.
  const std::vector<ChatMessage> m1{{Role::kUser, "x"}};
  const std::vector<ChatMessage> m2{{Role::kUser, "y"}};
  CHECK(llm_cache_key("m", {}, m1) != llm_cache_key("m", {}, m2));
  CHECK(llm_cache_key("m", {}, m1) != llm_cache_key("n", {}, m1));
  CHECK(llm_cache_key("m", {}, m1) != llm_cache_key("m", SessionParams{.temperature = 0.5}, m1));

  GatewayOptions off;
  off.caching = false;
  LlmGateway uncached(flaky, nullptr, off);
  auto d = uncached.new_session("m", {});
  auto e = uncached.new_session("m", {});
  uncached.chat(d, "hi");
  uncached.chat(e, "hi");
  CHECK(uncached.provider_calls() == 2);
}

TEST_CASE("retries back off exponentially on retryable errors only") {
  std::vector<long long> sleeps;
  GatewayOptions o;
  o.retry = {3, std::chrono::milliseconds(100), 2.0};
  o.sleep = [&](std::chrono::milliseconds d) { sleeps.push_back(d.count()); };

  auto twice = std::make_shared<FlakyProvider>(2, true);
  LlmGateway llm(twice, nullptr, o);
  auto s = llm.new_session("m", {});
  CHECK(llm.chat(s, "x") == "echo: x");
  CHECK(sleeps == std::vector<long long>{100, 200});
  CHECK(llm.provider_calls() == 3);

  sleeps.clear();
  auto always = std::make_shared<FlakyProvider>(10, true);
  LlmGateway give_up(always, nullptr, o);
  auto s2 = give_up.new_session("m", {});
  CHECK_THROWS_AS(give_up.chat(s2, "x"), RateLimited);
  CHECK(always->calls == 3);
  CHECK(s2.transcript.empty());

  sleeps.clear();
  auto rejected = std::make_shared<FlakyProvider>(1, false);
  LlmGateway no_retry(rejected, nullptr, o);
  auto s3 = no_retry.new_session("m", {});
  CHECK_THROWS_AS(no_retry.chat(s3, "x"), ProviderRejected);
  CHECK(rejected->calls == 1);
  CHECK(sleeps.empty());
}

TEST_CASE("in-flight calls are bounded") {
  auto probe = std::make_shared<ConcurrencyProbe>();
  GatewayOptions o;
  o.max_in_flight = 2;
  LlmGateway llm(probe, nullptr, o);
  std::vector<std::jthread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&, t] {
      auto s = llm.new_session("m", {});
      llm.chat(s, "prompt " + std::to_string(t));
    });
  }
  threads.clear();
  CHECK(probe->peak.load() <= 2);
  CHECK(llm.provider_calls() == 8);
}

TEST_CASE("replay log reproduces a run offline") {
  TempDir dir;
  GatewayOptions o;
  o.replay_log = dir / "replay.jsonl";
  {
    LlmGateway live(script(R"([{"contains": "a", "reply": "A"}, {"contains": "b", "reply": "B"}])"), nullptr, o);
    auto s = live.new_session("m", {});
    live.chat(s, "a");
    live.chat(s, "b");
  }
  const auto log = read_file(dir / "replay.jsonl");
  const auto first = json::parse(log.substr(0, log.find('\n')));
  CHECK(first.contains("latency_ms"));
  CHECK(first.at("messages").size() == 1);

  LlmGateway replay(std::make_shared<ReplayProvider>(dir / "replay.jsonl"));
  auto s = replay.new_session("m", {});
  CHECK(replay.chat(s, "a") == "A");
  CHECK(replay.chat(s, "b") == "B");
  auto fresh = replay.new_session("m", {});
  CHECK_THROWS_AS(replay.chat(fresh, "b"), UnscriptedPrompt);  // different history
}

TEST_CASE("persistent llm cache survives restarts") {
  TempDir dir;
  auto flaky = std::make_shared<FlakyProvider>(0, true);
  {
    LlmGateway llm(flaky, std::make_shared<LlmCache>(dir / "llm.jsonl"));
    auto s = llm.new_session("m", {});
    llm.chat(s, "hello");
  }
  LlmGateway llm(flaky, std::make_shared<LlmCache>(dir / "llm.jsonl"));
  auto s = llm.new_session("m", {});
  CHECK(llm.chat(s, "hello") == "echo: hello");
  CHECK(flaky->calls == 1);
}

namespace {

class FakeChatServer {
 public:
  FakeChatServer() {
    auto handler = [this](const httplib::Request& req, httplib::Response& res) {
      last_path = req.path;
      last_body = json::parse(req.body);
      last_auth = req.get_header_value("Authorization") + req.get_header_value("x-api-key");
      if (status != 200) {
        res.status = status;
        res.set_content("{\"error\":\"nope\"}", "application/json");
        return;
      }
      if (req.path.ends_with("/chat/completions")) {
        res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"openai says hi"}}]})",
                        "application/json");
      } else {
        res.set_content(R"({"content":[{"type":"text","text":"claude says hi"}]})", "application/json");
      }
    };
    server_.Post("/v1/chat/completions", handler);
    server_.Post("/proxy/v1/chat/completions", handler);
    server_.Post("/v1/messages", handler);
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeChatServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

  int status = 200;
  std::string last_path, last_auth;
  json last_body;

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace

TEST_CASE("OpenAI-compatible adapter") {
  FakeChatServer server;
  OpenAiChatProvider p({server.url() + "/proxy", "sk-test", {{"gpt-4", "gpt-4-0613"}}, 5000});
  const std::vector<ChatMessage> m{{Role::kSystem, "sys"}, {Role::kUser, "hi"}};
  CHECK(p.complete("gpt-4", SessionParams{.temperature = 0.5, .max_tokens = 64}, m) == "openai says hi");
  CHECK(server.last_path == "/proxy/v1/chat/completions");
  CHECK(server.last_body["model"] == "gpt-4-0613");
  CHECK(server.last_body["messages"].size() == 2);
  CHECK(server.last_body["max_tokens"] == 64);
  CHECK(server.last_auth == "Bearer sk-test");

  server.status = 429;
  CHECK_THROWS_AS(p.complete("gpt-4", {}, m), RateLimited);
  server.status = 503;
  CHECK_THROWS_AS(p.complete("gpt-4", {}, m), ProviderTimeout);
  server.status = 400;
  CHECK_THROWS_AS(p.complete("gpt-4", {}, m), ProviderRejected);

  OpenAiChatProvider down({"http://127.0.0.1:1", "", {}, 500});
  CHECK_THROWS_AS(down.complete("gpt-4", {}, m), ProviderTimeout);
}

TEST_CASE("Anthropic adapter") {
  FakeChatServer server;
  AnthropicProvider p({server.url(), "key", {}, 5000});
  const std::vector<ChatMessage> m{{Role::kSystem, "sys"}, {Role::kUser, "hi"}};
  CHECK(p.complete("claude-v1.3", {}, m) == "claude says hi");
  CHECK(server.last_path == "/v1/messages");
  CHECK(server.last_body["system"] == "sys");
  CHECK(server.last_body["messages"].size() == 1);
  CHECK(server.last_auth == "key");
}
