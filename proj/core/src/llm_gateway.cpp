#include "erragree/llm_gateway.hpp"

#include <cmath>
#include <cstdio>
#include <thread>

#include "erragree/digest.hpp"
#include "erragree/error.hpp"
#include "erragree/fileio.hpp"

namespace erragree {

std::string_view to_string(Role role) {
  switch (role) {
    case Role::kSystem: return "system";
    case Role::kUser: return "user";
    case Role::kAssistant: return "assistant";
  }
  return "user";
}

Role parse_role(std::string_view name) {
  if (name == "system") return Role::kSystem;
  if (name == "user") return Role::kUser;
  if (name == "assistant") return Role::kAssistant;
  throw FormatError("unknown chat role '" + std::string(name) + "'");
}

std::size_t Session::user_turns() const {
  std::size_t n = 0;
  for (const auto& m : transcript) n += m.role == Role::kUser;
  return n;
}

nlohmann::json to_json(const ChatMessage& m) {
  return {{"role", to_string(m.role)}, {"content", m.content}};
}

nlohmann::json to_json(const SessionParams& p) {
  return {{"temperature", p.temperature}, {"max_tokens", p.max_tokens}, {"sample", p.sample}};
}

nlohmann::json to_json(const Session& s) {
  auto transcript = nlohmann::json::array();
  for (const auto& m : s.transcript) transcript.push_back(to_json(m));
  return {{"session_id", s.session_id},
          {"model_id", s.model_id},
          {"params", to_json(s.params)},
          {"transcript", transcript}};
}

Session session_from_json(const nlohmann::json& j) {
  try {
    Session s;
    s.session_id = j.at("session_id").get<std::string>();
    s.model_id = j.at("model_id").get<std::string>();
    const auto& p = j.at("params");
    s.params.temperature = p.at("temperature").get<double>();
    s.params.max_tokens = p.at("max_tokens").get<int>();
    s.params.sample = p.value("sample", 0);
    for (const auto& m : j.at("transcript")) {
      s.transcript.push_back({parse_role(m.at("role").get<std::string>()), m.at("content").get<std::string>()});
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed session: ") + e.what());
  }
}

void save_session(const Session& s, const std::filesystem::path& path) {
  write_file_atomic(path, to_json(s).dump(2) + "\n");
}

Session load_session(const std::filesystem::path& path) {
  try {
    return session_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string llm_cache_key(const std::string& model_id, const SessionParams& params,
                          std::span<const ChatMessage> messages) {
  auto msgs = nlohmann::json::array();
  for (const auto& m : messages) msgs.push_back(to_json(m));
  const nlohmann::json keyed = {{"model", model_id}, {"params", to_json(params)}, {"messages", msgs}};
  return sha256_hex(keyed.dump());
}

// ---------------------------------------------------------------------------

LlmCache::LlmCache(std::filesystem::path persist_path) : persist_path_(std::move(persist_path)) {
  if (!std::filesystem::exists(*persist_path_)) return;
  std::ifstream in(*persist_path_);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto rec = nlohmann::json::parse(line);
      store_[rec.at("key").get<std::string>()] = rec.at("response").get<std::string>();
    } catch (const nlohmann::json::exception&) {
      if (in.peek() != EOF) throw FormatError(persist_path_->string() + ": corrupt LLM cache record");
    }
  }
}

std::optional<std::string> LlmCache::lookup(const std::string& key) const {
  std::lock_guard lock(mu_);
  if (auto it = store_.find(key); it != store_.end()) return it->second;
  return std::nullopt;
}

void LlmCache::insert(const std::string& key, const std::string& model_id, const std::string& response) {
  std::lock_guard lock(mu_);
  auto [it, inserted] = store_.try_emplace(key, response);
  if (!inserted || !persist_path_) return;
  if (persist_path_->has_parent_path()) std::filesystem::create_directories(persist_path_->parent_path());
  std::ofstream out(*persist_path_, std::ios::app);
  out << nlohmann::json{{"key", key}, {"model_id", model_id}, {"response", response}}.dump() << '\n';
}

std::size_t LlmCache::size() const {
  std::lock_guard lock(mu_);
  return store_.size();
}

// ---------------------------------------------------------------------------

LlmGateway::LlmGateway(std::shared_ptr<LlmProvider> provider, std::shared_ptr<LlmCache> cache,
                       GatewayOptions options)
    : provider_(std::move(provider)),
      cache_(cache ? std::move(cache) : std::make_shared<LlmCache>()),
      options_(std::move(options)),
      in_flight_(static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, options_.max_in_flight))) {
  if (!provider_) throw ConfigError("no LLM provider configured");
  if (options_.retry.max_attempts < 1) options_.retry.max_attempts = 1;
  if (!options_.sleep) {
    options_.sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  }
  if (options_.replay_log) {
    if (options_.replay_log->has_parent_path()) {
      std::filesystem::create_directories(options_.replay_log->parent_path());
    }
    replay_out_.open(*options_.replay_log, std::ios::app);
    if (!replay_out_) throw IoError("cannot open replay log " + options_.replay_log->string());
  }
}

Session LlmGateway::new_session(std::string model_id, SessionParams params,
                                std::optional<std::string> system_prompt) {
  char id[32];
  std::snprintf(id, sizeof id, "-%04zu", ++next_session_);
  Session s{options_.session_prefix + id, std::move(model_id), params, {}};
  if (system_prompt) s.transcript.push_back({Role::kSystem, std::move(*system_prompt)});
  return s;
}

std::string LlmGateway::chat(Session& session, const std::string& user_message) {
  if (user_message.empty()) throw FormatError("refusing to send an empty user message");
  std::vector<ChatMessage> messages = session.transcript;
  messages.push_back({Role::kUser, user_message});
  const auto key = llm_cache_key(session.model_id, session.params, messages);

  std::string reply;
  if (auto hit = options_.caching ? cache_->lookup(key) : std::nullopt) {
    ++cache_hits_;
    reply = std::move(*hit);
  } else {
    const auto start = std::chrono::steady_clock::now();
    reply = call_with_retries(session.model_id, session.params, messages);
    const auto latency =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);
    record(key, session, messages, reply, latency);
    if (options_.caching) cache_->insert(key, session.model_id, reply);
  }
  session.transcript.push_back({Role::kUser, user_message});
  session.transcript.push_back({Role::kAssistant, reply});
  return reply;
}

std::string LlmGateway::call_with_retries(const std::string& model_id, const SessionParams& params,
                                          std::span<const ChatMessage> messages) {
  in_flight_.acquire();
  struct Release {
    std::counting_semaphore<>& s;
    ~Release() { s.release(); }
  } release{in_flight_};

  const auto& retry = options_.retry;
  for (int attempt = 1;; ++attempt) {
    try {
      ++provider_calls_;
      return provider_->complete(model_id, params, messages);
    } catch (const Error& e) {
      if (!is_retryable(e) || attempt >= retry.max_attempts) throw;
      const auto delay = std::chrono::milliseconds(static_cast<long long>(
          static_cast<double>(retry.base_delay.count()) * std::pow(retry.multiplier, attempt - 1)));
      options_.sleep(delay);
    }
  }
}

void LlmGateway::record(const std::string& key, const Session& session, std::span<const ChatMessage> messages,
                        const std::string& response, std::chrono::milliseconds latency) {
  if (!replay_out_.is_open()) return;
  auto msgs = nlohmann::json::array();
  for (const auto& m : messages) msgs.push_back(to_json(m));
  const nlohmann::json rec = {{"key", key},
                              {"model_id", session.model_id},
                              {"params", to_json(session.params)},
                              {"messages", msgs},
                              {"response", response},
                              {"latency_ms", latency.count()}};
  std::lock_guard lock(log_mu_);
  replay_out_ << rec.dump() << '\n';
  replay_out_.flush();
}

}  // namespace erragree
