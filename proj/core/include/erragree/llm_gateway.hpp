#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace erragree {

enum class Role { kSystem, kUser, kAssistant };

std::string_view to_string(Role role);
Role parse_role(std::string_view name);

struct ChatMessage {
  Role role = Role::kUser;
  std::string content;

  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

// `sample` distinguishes repeated independent draws of the same prompt (for
// example the categorizer's fresh sessions); it is part of the cache key.
struct SessionParams {
  double temperature = 1.0;
  int max_tokens = 4096;
  int sample = 0;

  friend bool operator==(const SessionParams&, const SessionParams&) = default;
};

struct Session {
  std::string session_id;
  std::string model_id;
  SessionParams params;
  std::vector<ChatMessage> transcript;

  std::size_t user_turns() const;

  friend bool operator==(const Session&, const Session&) = default;
};

nlohmann::json to_json(const ChatMessage& m);
nlohmann::json to_json(const SessionParams& p);
nlohmann::json to_json(const Session& s);
Session session_from_json(const nlohmann::json& j);
void save_session(const Session& s, const std::filesystem::path& path);
Session load_session(const std::filesystem::path& path);

// Digest of (model_id, params, full message list ending in the new user turn).
std::string llm_cache_key(const std::string& model_id, const SessionParams& params,
                          std::span<const ChatMessage> messages);

class LlmProvider {
 public:
  virtual ~LlmProvider() = default;
  virtual std::string describe() const = 0;
  // Throws ProviderTimeout / RateLimited (retryable) or ProviderRejected.
  virtual std::string complete(const std::string& model_id, const SessionParams& params,
                               std::span<const ChatMessage> messages) = 0;
};

// key -> response, optionally persisted as JSON lines.
class LlmCache {
 public:
  LlmCache() = default;
  explicit LlmCache(std::filesystem::path persist_path);

  std::optional<std::string> lookup(const std::string& key) const;
  void insert(const std::string& key, const std::string& model_id, const std::string& response);
  std::size_t size() const;

 private:
  mutable std::mutex mu_;
  std::unordered_map<std::string, std::string> store_;
  std::optional<std::filesystem::path> persist_path_;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds base_delay{500};
  double multiplier = 2.0;
};

struct GatewayOptions {
  bool caching = true;
  RetryPolicy retry;
  std::size_t max_in_flight = 4;
  std::optional<std::filesystem::path> replay_log;
  std::string session_prefix = "session";
  // Injected for tests; defaults to std::this_thread::sleep_for.
  std::function<void(std::chrono::milliseconds)> sleep;
};

// Provider-agnostic chat front end with caching, retries and a replay log.
// Distinct sessions may be driven from different threads; one session must
// not be used concurrently.
class LlmGateway {
 public:
  LlmGateway(std::shared_ptr<LlmProvider> provider, std::shared_ptr<LlmCache> cache = nullptr,
             GatewayOptions options = {});

  Session new_session(std::string model_id, SessionParams params,
                      std::optional<std::string> system_prompt = std::nullopt);

  // Appends the user message and the reply to the transcript.
  std::string chat(Session& session, const std::string& user_message);

  std::size_t provider_calls() const noexcept { return provider_calls_.load(); }
  std::size_t cache_hits() const noexcept { return cache_hits_.load(); }
  std::string describe() const { return provider_->describe(); }

 private:
  std::string call_with_retries(const std::string& model_id, const SessionParams& params,
                                std::span<const ChatMessage> messages);
  void record(const std::string& key, const Session& session,
              std::span<const ChatMessage> messages, const std::string& response,
              std::chrono::milliseconds latency);

  std::shared_ptr<LlmProvider> provider_;
  std::shared_ptr<LlmCache> cache_;
  GatewayOptions options_;
  std::counting_semaphore<> in_flight_;
  std::atomic<std::size_t> next_session_{0};
  std::atomic<std::size_t> provider_calls_{0};
  std::atomic<std::size_t> cache_hits_{0};
  std::mutex log_mu_;
  std::ofstream replay_out_;
};

// ---------------------------------------------------------------------------
// Providers

// Deterministic test double. A script is a list of rules; the first rule that
// matches the outgoing user message wins, and an unmatched prompt throws
// UnscriptedPrompt. Rule fields (all optional except one reply form):
//   model     exact model id
//   contains  substring of the user message
//   digest    sha256 hex of the user message
//   turn      0-based index of this user turn within its session
//   sample    SessionParams::sample
//   reply     fixed reply
//   replies   list indexed by sample (clamped to the last entry)
class ScriptedProvider final : public LlmProvider {
 public:
  struct Rule {
    std::optional<std::string> model;
    std::optional<std::string> contains;
    std::optional<std::string> digest;
    std::optional<std::size_t> turn;
    std::optional<int> sample;
    std::vector<std::string> replies;
  };

  explicit ScriptedProvider(std::vector<Rule> rules);
  static ScriptedProvider from_json(const nlohmann::json& script);
  static ScriptedProvider from_file(const std::filesystem::path& path);

  std::string describe() const override { return "scripted"; }
  std::string complete(const std::string& model_id, const SessionParams& params,
                       std::span<const ChatMessage> messages) override;

 private:
  std::vector<Rule> rules_;
};

// Serves responses recorded in a replay log; unknown keys throw UnscriptedPrompt.
class ReplayProvider final : public LlmProvider {
 public:
  explicit ReplayProvider(const std::filesystem::path& replay_log);

  std::string describe() const override { return "replay"; }
  std::string complete(const std::string& model_id, const SessionParams& params,
                       std::span<const ChatMessage> messages) override;

 private:
  std::unordered_map<std::string, std::string> responses_;
};

struct HttpChatOptions {
  std::string base_url;
  std::string api_key;  // resolved from the configured env var by the caller
  std::map<std::string, std::string> model_map;  // logical id -> provider model name
  int timeout_ms = 120000;
};

// POST {base}/v1/chat/completions, OpenAI-compatible.
class OpenAiChatProvider final : public LlmProvider {
 public:
  explicit OpenAiChatProvider(HttpChatOptions options);
  std::string describe() const override;
  std::string complete(const std::string& model_id, const SessionParams& params,
                       std::span<const ChatMessage> messages) override;

 private:
  HttpChatOptions options_;
};

// POST {base}/v1/messages, Anthropic messages API.
class AnthropicProvider final : public LlmProvider {
 public:
  explicit AnthropicProvider(HttpChatOptions options);
  std::string describe() const override;
  std::string complete(const std::string& model_id, const SessionParams& params,
                       std::span<const ChatMessage> messages) override;

 private:
  HttpChatOptions options_;
};

}  // namespace erragree
