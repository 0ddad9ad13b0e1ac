#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "erragree/embedding.hpp"
#include "erragree/llm_gateway.hpp"
#include "erragree/run_config.hpp"

namespace erragree {

enum class Stage { kScrape, kCategorize, kGenerate, kEvaluate, kCalibrate };

std::string_view to_string(Stage stage);

struct StageResult {
  Stage stage = Stage::kScrape;
  std::filesystem::path artifact;  // primary artifact
  std::string digest;
  bool reused = false;  // up to date, nothing recomputed
  std::vector<std::string> warnings;
};

struct RunOptions {
  std::filesystem::path out_dir = "out";
  bool force = false;  // recompute stages even when the manifest says up to date
  // Overrides for tests and embedding the pipeline; built from the config when null.
  std::shared_ptr<EmbeddingBackend> embedding_backend;
  std::shared_ptr<LlmProvider> llm_provider;
};

// Owns one output directory for the lifetime of a run (lock file), the
// providers, caches and the manifest.
class Pipeline {
 public:
  Pipeline(RunConfig config, RunOptions options);
  ~Pipeline();
  Pipeline(const Pipeline&) = delete;
  Pipeline& operator=(const Pipeline&) = delete;

  StageResult scrape();
  StageResult categorize();
  StageResult generate();
  StageResult evaluate();
  StageResult calibrate(const std::optional<std::filesystem::path>& labels = std::nullopt);
  std::vector<StageResult> run_all();

  const RunConfig& config() const noexcept { return config_; }
  const nlohmann::json& manifest() const noexcept { return manifest_; }
  std::filesystem::path manifest_path() const;

  std::size_t embedding_backend_calls() const;
  std::size_t llm_provider_calls() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  RunConfig config_;
  nlohmann::json manifest_;
};

// Process exit codes used by the CLI.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitProviderFailure = 3;
inline constexpr int kExitPartial = 4;

int exit_code_for(const std::exception& e);

}  // namespace erragree
