#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "erragree/corpus.hpp"
#include "erragree/embedding.hpp"

namespace erragree {

enum class SteerMode { kNone, kScrape, kGenerate };

SteerMode parse_steer_mode(std::string_view name);
std::string_view to_string(SteerMode mode);

struct CorpusSection {
  std::filesystem::path path;
  CorpusFormat format = CorpusFormat::kPlainLines;
  std::string name;  // defaults to the file stem
};

struct MinerSection {
  std::size_t n = 150;
  double tau = 0.7;
  std::size_t block_size = 256;
  std::size_t workers = 0;
};

struct CategorizerSection {
  std::string model_id = "gpt-4";
  std::size_t sessions = 3;
  double temperature = 1.0;
  int max_tokens = 4096;
  std::size_t max_chars = 24000;
  std::optional<std::size_t> max_pairs;
  bool include_corpus = true;
};

struct GeneratorSection {
  std::string model_id = "gpt-4";
  std::size_t k = 82;
  std::size_t m_per_turn = 41;
  std::size_t turn_budget = 0;
  double temperature = 1.0;
  int max_tokens = 4096;
};

struct EvaluatorSection {
  double t = 0.88;
  double bin_width = 0.02;
  double target_ratio = 0.65;
  std::string relevance_model_id = "gpt-3.5-turbo";
  std::optional<std::filesystem::path> labels;
};

struct SteerSection {
  std::optional<std::string> subdomain;
  SteerMode mode = SteerMode::kNone;
  std::string classifier_model = "gpt-3.5-turbo";
  std::size_t oversample_factor = 4;
};

struct EmbeddingProviderSection {
  std::string kind = "synthetic";  // synthetic | file | http
  std::map<std::string, SyntheticModel> synthetic;
  std::map<std::string, std::filesystem::path> matrices;
  std::string base_url;
  std::size_t batch_size = 256;
  std::size_t max_parallel = 1;
  int timeout_ms = 30000;
  std::string fallback = "none";  // file kind only: none | synthetic | http
};

struct LlmProviderSection {
  std::string kind = "mock";  // mock | replay | openai | anthropic
  std::optional<std::filesystem::path> script;
  std::optional<std::filesystem::path> replay_from;
  std::string base_url;
  std::string auth_env;
  std::map<std::string, std::string> model_map;
  std::size_t max_in_flight = 4;
  int max_attempts = 3;
  int base_delay_ms = 500;
  int timeout_ms = 120000;
};

struct CacheSection {
  bool enabled = true;
  std::filesystem::path embedding_path = "cache/embeddings.jsonl";
  std::filesystem::path llm_path = "cache/llm.jsonl";
  std::filesystem::path replay_log = "replay.jsonl";
};

struct RunConfig {
  CorpusSection corpus;
  std::string gen_model_id = "clip-text";
  std::string ref_model_id = "ref-distilroberta";
  MinerSection miner;
  CategorizerSection categorizer;
  GeneratorSection generator;
  EvaluatorSection evaluator;
  SteerSection steer;
  EmbeddingProviderSection embedding_provider;
  LlmProviderSection llm_provider;
  CacheSection cache;
  std::optional<std::filesystem::path> templates_dir;

  // Directory that relative input paths (corpus, script, matrices, labels,
  // templates) are resolved against. Not serialized.
  std::filesystem::path base_dir = ".";

  std::filesystem::path resolve_input(const std::filesystem::path& p) const;
};

// Strict parse: unknown keys and out-of-range values throw ConfigError naming
// the JSON pointer of the offending key. Missing keys take their defaults.
RunConfig parse_run_config(const nlohmann::json& j, std::filesystem::path base_dir = ".");
RunConfig load_run_config(const std::filesystem::path& path);

// Every field, defaults included.
nlohmann::json to_json(const RunConfig& config);

// Digest of the canonical serialization of `section`.
std::string json_digest(const nlohmann::json& section);

}  // namespace erragree
