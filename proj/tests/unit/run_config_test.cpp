#include <doctest.h>

#include "erragree/error.hpp"
#include "erragree/run_config.hpp"
#include "support.hpp"

using namespace erragree;
using erragree::testing::TempDir;
using erragree::testing::write_text;
using nlohmann::json;

namespace {

std::string config_error(const json& j) {
  try {
    parse_run_config(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("defaults follow the published setup") {
  const auto c = parse_run_config(json::object());
  CHECK(c.miner.n == 150);
  CHECK(c.miner.tau == 0.7);
  CHECK(c.categorizer.sessions == 3);
  CHECK(c.generator.k == 82);
  CHECK(c.generator.m_per_turn == 41);
  CHECK(c.evaluator.t == 0.88);
  CHECK(c.evaluator.bin_width == 0.02);
  CHECK(c.evaluator.target_ratio == 0.65);
  CHECK(c.steer.mode == SteerMode::kNone);
  CHECK(c.llm_provider.kind == "mock");
}

TEST_CASE("serialization round-trips") {
  const auto c = parse_run_config(json::parse(R"({
    "$schema": "../config/erragree.schema.json",
    "corpus": {"path": "c.jsonl", "format": "jsonl"},
    "miner": {"n": 10, "tau": 0.5},
    "steer": {"subdomain": "self-driving", "mode": "generate"},
    "embedding_provider": {"kind": "synthetic", "synthetic": {"clip-text": {"scheme": "hashed-ngram", "dims": 32}}},
    "llm_provider": {"kind": "openai", "model_map": {"gpt-4": "gpt-4-0613"}}
  })"));
  CHECK(c.llm_provider.auth_env == "OPENAI_API_KEY");
  CHECK(c.llm_provider.base_url == "https://api.openai.com");
  CHECK(c.corpus.format == CorpusFormat::kJsonl);
  CHECK(c.embedding_provider.synthetic.at("clip-text").scheme == SyntheticScheme::kHashedNgrams);
  const auto j = to_json(c);
  CHECK(to_json(parse_run_config(j)) == j);
  CHECK(json_digest(j) == json_digest(to_json(parse_run_config(j))));
  CHECK(json_digest(j) != json_digest(to_json(parse_run_config(json::object()))));
}

TEST_CASE("errors name the offending key") {
  CHECK(config_error(json::parse(R"({"miner": {"nn": 3}})")).starts_with("/miner/nn:"));
  CHECK(config_error(json::parse(R"({"bogus": 1})")).starts_with("/bogus:"));
  CHECK(config_error(json::parse(R"({"miner": {"tau": 1.5}})")).starts_with("/miner/tau:"));
  CHECK(config_error(json::parse(R"({"miner": {"tau": 0}})")).starts_with("/miner/tau:"));
  CHECK(config_error(json::parse(R"({"miner": {"n": 0}})")).starts_with("/miner/n:"));
  CHECK(config_error(json::parse(R"({"miner": {"n": "ten"}})")).starts_with("/miner/n:"));
  CHECK(config_error(json::parse(R"({"evaluator": {"t": 1.2}})")).starts_with("/evaluator/t:"));
  CHECK(config_error(json::parse(R"({"evaluator": {"bin_width": 1}})")).starts_with("/evaluator/bin_width:"));
  CHECK(config_error(json::parse(R"({"generator": {"k": 0}})")).starts_with("/generator/k:"));
  CHECK(config_error(json::parse(R"({"categorizer": {"temperature": 3}})"))
            .starts_with("/categorizer/temperature:"));
  CHECK(config_error(json::parse(R"({"corpus": {"format": "csv"}})")).starts_with("/corpus/format:"));
  CHECK(config_error(json::parse(R"({"steer": {"mode": "generate"}})")).starts_with("/steer/subdomain:"));
  CHECK(config_error(json::parse(R"({"steer": {"mode": "sideways", "subdomain": "x"}})")).starts_with("/steer/mode:"));
  CHECK(config_error(json::parse(R"({"llm_provider": {"kind": "replay"}})")).starts_with("/llm_provider/replay_from:"));
  CHECK(config_error(json::parse(R"({"embedding_provider": {"kind": "http"}})"))
            .starts_with("/embedding_provider/base_url:"));
  CHECK(config_error(json::parse(R"({"embedding_provider": {"synthetic": {"m": {"scheme": "wavelet"}}}})")) != "");
  CHECK(config_error(json::parse("[1, 2]")) != "");
}

TEST_CASE("loading resolves paths against the config directory") {
  TempDir dir;
  std::filesystem::create_directories(dir / "sub");
  write_text(dir / "sub" / "run.json", R"({"corpus": {"path": "data/c.txt"}, "templates_dir": "/abs/t"})");
  const auto c = load_run_config(dir / "sub" / "run.json");
  CHECK(c.resolve_input(c.corpus.path) == (dir.path() / "sub" / "data" / "c.txt").lexically_normal());
  CHECK(c.resolve_input(*c.templates_dir) == std::filesystem::path("/abs/t"));

  write_text(dir / "broken.json", "{\"miner\": ");
  CHECK_THROWS_AS(load_run_config(dir / "broken.json"), ConfigError);
  CHECK_THROWS_AS(load_run_config(dir / "missing.json"), ConfigError);
}

TEST_CASE("shipped example config loads") {
  const auto c = load_run_config(erragree::testing::fixture("../../config/erragree.example.json"));
  CHECK(c.llm_provider.kind == "openai");
  CHECK(c.embedding_provider.kind == "http");
  CHECK(c.miner.n == 150);
  CHECK(c.corpus.format == CorpusFormat::kJsonl);
}
