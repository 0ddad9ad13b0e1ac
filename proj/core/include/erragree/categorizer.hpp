#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "erragree/llm_gateway.hpp"
#include "erragree/pair_miner.hpp"
#include "erragree/prompts.hpp"

namespace erragree {

struct FailureSource {
  std::string model_id;
  std::string session_id;
  std::size_t ordinal = 0;  // 1-based position in the parsed list

  friend bool operator==(const FailureSource&, const FailureSource&) = default;
};

struct SystematicFailure {
  std::string name;
  std::string description;
  std::string canonical_key;
  std::vector<FailureSource> sources;
  std::vector<std::string> alternate_descriptions;

  friend bool operator==(const SystematicFailure&, const SystematicFailure&) = default;
};

// Lowercase, ASCII punctuation removed, whitespace collapsed.
std::string canonical_failure_key(std::string_view name);

struct CategorizePrompt {
  std::optional<std::string> memorize;  // absent for the corpus-free variant
  std::string question;
  std::size_t included_pairs = 0;
};

struct PromptBudget {
  std::size_t max_chars = 24000;             // serialized pair lines
  std::optional<std::size_t> max_pairs;      // line budget
};

// Pairs are rendered "text_i, text_j", one per line, in the given (mined)
// order; lines past either budget are dropped from the bottom.
CategorizePrompt build_categorize_prompt(const std::vector<PairWithText>& pairs,
                                         const PromptBudget& budget = {},
                                         const PromptTemplates& templates = PromptTemplates::builtin());

CategorizePrompt build_categorize_prompt_without_corpus(
    const PromptTemplates& templates = PromptTemplates::builtin());

// Extracts "<number>. <Name>: <description>" entries. Throws NoFailuresParsed.
std::vector<SystematicFailure> parse_failure_list(std::string_view reply);

// Inverse of parse_failure_list for machine-rendered lists.
std::string render_failure_list(const std::vector<SystematicFailure>& failures);

// Merge by canonical_key in list order; the first description wins and later
// differing descriptions are kept as alternates.
std::vector<SystematicFailure> aggregate_failures(
    const std::vector<std::vector<SystematicFailure>>& lists);

struct CategorizerOptions {
  std::string model_id = "gpt-4";
  std::size_t sessions = 3;
  SessionParams params{};
  PromptBudget budget{};
  bool include_corpus = true;
};

struct SessionOutcome {
  std::string session_id;
  int sample = 0;
  std::string raw_reply;
  std::size_t parsed = 0;
  std::optional<std::string> error;
};

struct CategorizeResult {
  std::vector<SystematicFailure> failures;
  std::vector<SessionOutcome> sessions;
  std::size_t included_pairs = 0;
};

// Runs the prompt in `sessions` fresh sessions and aggregates the parsed
// lists in session order. Throws EmptyPairList or AllSessionsFailed.
CategorizeResult categorize(const std::vector<PairWithText>& pairs, LlmGateway& llm,
                            const CategorizerOptions& options = {},
                            const PromptTemplates& templates = PromptTemplates::builtin());

nlohmann::json failures_to_json(const std::vector<SystematicFailure>& failures);
std::vector<SystematicFailure> failures_from_json(const nlohmann::json& j);

}  // namespace erragree
