#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "erragree/categorizer.hpp"
#include "erragree/llm_gateway.hpp"
#include "erragree/prompts.hpp"

namespace erragree {

struct GeneratedPair {
  std::string text_a;
  std::string text_b;
  std::string failure_key;
  std::optional<std::string> steer;
  std::optional<double> gen_sim;
  std::string raw_line;

  friend bool operator==(const GeneratedPair&, const GeneratedPair&) = default;
};

struct RejectedLine {
  std::string line;
  std::string reason;
};

struct ParsedPairs {
  std::vector<GeneratedPair> pairs;
  std::vector<RejectedLine> rejects;
};

// `additional` is set for follow-up turns in the same session.
std::string build_generate_prompt(const SystematicFailure& failure, std::size_t m,
                                  const std::optional<std::string>& steer, bool additional = false,
                                  const PromptTemplates& templates = PromptTemplates::builtin());

// Accepts ("a", "b") lines with optional numbering/bullets, an optional
// trailing comma and straight or curly quotes. Blank lines are skipped;
// everything else is rejected with a reason.
ParsedPairs parse_pairs(std::string_view reply);

std::string render_pair_line(const GeneratedPair& pair);

struct GeneratorOptions {
  std::string model_id = "gpt-4";
  std::size_t k = 82;
  std::size_t m_per_turn = 41;
  std::size_t turn_budget = 0;  // 0 = twice the turns needed for k
  SessionParams params{};
};

struct GenerationResult {
  std::vector<GeneratedPair> pairs;
  std::vector<RejectedLine> rejects;
  std::size_t turns = 0;
  std::size_t duplicates_dropped = 0;
  bool insufficient = false;  // turn budget ran out before k pairs
  std::string session_id;
};

// One session; repeats the prompt (with "additional") until k distinct pairs
// are parsed or the turn budget is spent.
GenerationResult generate_instances(const SystematicFailure& failure, LlmGateway& llm,
                                    const GeneratorOptions& options,
                                    const std::optional<std::string>& steer = std::nullopt,
                                    const PromptTemplates& templates = PromptTemplates::builtin());

// Same, driving a session the caller opened (keeps session ids stable when
// failures are generated in parallel).
GenerationResult generate_instances(const SystematicFailure& failure, LlmGateway& llm, Session& session,
                                    const GeneratorOptions& options,
                                    const std::optional<std::string>& steer = std::nullopt,
                                    const PromptTemplates& templates = PromptTemplates::builtin());

nlohmann::json to_json(const GeneratedPair& p);
GeneratedPair generated_pair_from_json(const nlohmann::json& j);
std::string generated_to_jsonl(const std::vector<GeneratedPair>& pairs);
std::vector<GeneratedPair> generated_from_jsonl(std::string_view text);

}  // namespace erragree
