#include <httplib.h>

#include "erragree/digest.hpp"
#include "erragree/error.hpp"
#include "erragree/fileio.hpp"
#include "erragree/llm_gateway.hpp"

namespace erragree {

// ---------------------------------------------------------------------------
// Scripted

ScriptedProvider::ScriptedProvider(std::vector<Rule> rules) : rules_(std::move(rules)) {
  for (const auto& r : rules_) {
    if (r.replies.empty()) throw ConfigError("scripted rule without a reply");
  }
}

ScriptedProvider ScriptedProvider::from_json(const nlohmann::json& script) {
  const auto& list = script.is_array() ? script : script.at("rules");
  std::vector<Rule> rules;
  try {
    for (const auto& r : list) {
      Rule rule;
      if (r.contains("model")) rule.model = r.at("model").get<std::string>();
      if (r.contains("contains")) rule.contains = r.at("contains").get<std::string>();
      if (r.contains("digest")) rule.digest = r.at("digest").get<std::string>();
      if (r.contains("turn")) rule.turn = r.at("turn").get<std::size_t>();
      if (r.contains("sample")) rule.sample = r.at("sample").get<int>();
      if (r.contains("reply")) rule.replies.push_back(r.at("reply").get<std::string>());
      if (r.contains("replies")) rule.replies = r.at("replies").get<std::vector<std::string>>();
      rules.push_back(std::move(rule));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed mock script: ") + e.what());
  }
  return ScriptedProvider(std::move(rules));
}

ScriptedProvider ScriptedProvider::from_file(const std::filesystem::path& path) {
  try {
    return from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string ScriptedProvider::complete(const std::string& model_id, const SessionParams& params,
                                       std::span<const ChatMessage> messages) {
  if (messages.empty() || messages.back().role != Role::kUser) {
    throw ProviderRejected("scripted provider expects a trailing user message");
  }
  const auto& prompt = messages.back().content;
  std::size_t turn = 0;
  for (std::size_t k = 0; k + 1 < messages.size(); ++k) turn += messages[k].role == Role::kUser;
  std::optional<std::string> digest;

  for (const auto& r : rules_) {
    if (r.model && *r.model != model_id) continue;
    if (r.turn && *r.turn != turn) continue;
    if (r.sample && *r.sample != params.sample) continue;
    if (r.contains && prompt.find(*r.contains) == std::string::npos) continue;
    if (r.digest) {
      if (!digest) digest = sha256_hex(prompt);
      if (*r.digest != *digest) continue;
    }
    const auto idx = std::min<std::size_t>(static_cast<std::size_t>(std::max(0, params.sample)),
                                           r.replies.size() - 1);
    return r.replies[idx];
  }
  throw UnscriptedPrompt("no scripted reply for model '" + model_id + "', turn " + std::to_string(turn) +
                         ", sample " + std::to_string(params.sample) + ", prompt digest " +
                         sha256_hex(prompt).substr(0, 16) + ": " + prompt.substr(0, 80));
}

// ---------------------------------------------------------------------------
// Replay

ReplayProvider::ReplayProvider(const std::filesystem::path& replay_log) {
  const auto text = read_file(replay_log);
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const auto line = text.substr(start, end - start);
    start = end + 1;
    if (line.empty()) continue;
    try {
      const auto rec = nlohmann::json::parse(line);
      responses_[rec.at("key").get<std::string>()] = rec.at("response").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(replay_log.string() + ": " + e.what());
    }
  }
}

std::string ReplayProvider::complete(const std::string& model_id, const SessionParams& params,
                                     std::span<const ChatMessage> messages) {
  const auto key = llm_cache_key(model_id, params, messages);
  if (auto it = responses_.find(key); it != responses_.end()) return it->second;
  throw UnscriptedPrompt("replay log has no response for key " + key.substr(0, 16));
}

// ---------------------------------------------------------------------------
// HTTP chat adapters

namespace {

struct UrlParts {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path without trailing slash
};

UrlParts split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  const auto host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
  const auto path_start = url.find('/', host_start);
  if (path_start == std::string::npos) return {url, ""};
  std::string prefix = url.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {url.substr(0, path_start), prefix};
}

const std::string& mapped_model(const HttpChatOptions& o, const std::string& model_id) {
  auto it = o.model_map.find(model_id);
  return it == o.model_map.end() ? model_id : it->second;
}

std::string post_json(const HttpChatOptions& o, const std::string& path, const nlohmann::json& body,
                      const httplib::Headers& headers) {
  const auto url = split_url(o.base_url);
  httplib::Client cli(url.origin);
  const auto sec = o.timeout_ms / 1000;
  const auto usec = (o.timeout_ms % 1000) * 1000;
  cli.set_connection_timeout(sec, usec);
  cli.set_read_timeout(sec, usec);
  cli.set_write_timeout(sec, usec);
  auto res = cli.Post(url.prefix + path, headers, body.dump(), "application/json");
  if (!res) throw ProviderTimeout(o.base_url + path + ": " + httplib::to_string(res.error()));
  const int status = res->status;
  if (status == 200) return res->body;
  const std::string detail = o.base_url + path + " returned HTTP " + std::to_string(status) + ": " +
                             res->body.substr(0, 300);
  if (status == 429) throw RateLimited(detail);
  if (status == 408 || status >= 500) throw ProviderTimeout(detail);
  throw ProviderRejected(detail);
}

}  // namespace

OpenAiChatProvider::OpenAiChatProvider(HttpChatOptions options) : options_(std::move(options)) {}

std::string OpenAiChatProvider::describe() const { return "openai(" + options_.base_url + ")"; }

std::string OpenAiChatProvider::complete(const std::string& model_id, const SessionParams& params,
                                         std::span<const ChatMessage> messages) {
  auto msgs = nlohmann::json::array();
  for (const auto& m : messages) msgs.push_back(to_json(m));
  const nlohmann::json body = {{"model", mapped_model(options_, model_id)},
                               {"messages", msgs},
                               {"temperature", params.temperature},
                               {"max_tokens", params.max_tokens}};
  httplib::Headers headers;
  if (!options_.api_key.empty()) headers.emplace("Authorization", "Bearer " + options_.api_key);
  const auto raw = post_json(options_, "/v1/chat/completions", body, headers);
  try {
    return nlohmann::json::parse(raw).at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ProviderRejected(std::string("malformed chat completion: ") + e.what());
  }
}

AnthropicProvider::AnthropicProvider(HttpChatOptions options) : options_(std::move(options)) {}

std::string AnthropicProvider::describe() const { return "anthropic(" + options_.base_url + ")"; }

std::string AnthropicProvider::complete(const std::string& model_id, const SessionParams& params,
                                        std::span<const ChatMessage> messages) {
  std::string system;
  auto msgs = nlohmann::json::array();
  for (const auto& m : messages) {
    if (m.role == Role::kSystem) {
      if (!system.empty()) system += "\n\n";
      system += m.content;
    } else {
      msgs.push_back(to_json(m));
    }
  }
  nlohmann::json body = {{"model", mapped_model(options_, model_id)},
                         {"messages", msgs},
                         {"temperature", params.temperature},
                         {"max_tokens", params.max_tokens}};
  if (!system.empty()) body["system"] = system;
  httplib::Headers headers{{"anthropic-version", "2023-06-01"}};
  if (!options_.api_key.empty()) headers.emplace("x-api-key", options_.api_key);
  const auto raw = post_json(options_, "/v1/messages", body, headers);
  try {
    const auto reply = nlohmann::json::parse(raw);
    std::string text;
    for (const auto& block : reply.at("content")) {
      if (block.value("type", "") == "text") text += block.at("text").get<std::string>();
    }
    return text;
  } catch (const nlohmann::json::exception& e) {
    throw ProviderRejected(std::string("malformed messages response: ") + e.what());
  }
}

}  // namespace erragree
