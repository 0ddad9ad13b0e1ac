#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "erragree/corpus.hpp"
#include "erragree/embedding.hpp"
#include "erragree/prompts.hpp"

namespace erragree {

class LlmGateway;

// A scraped individual failure: close under the generation-side embedding,
// far under the reference embedding.
struct CandidatePair {
  SentenceId i = 0;  // i < j
  SentenceId j = 0;
  double gen_sim = 0.0;
  double ref_sim = 0.0;

  friend bool operator==(const CandidatePair&, const CandidatePair&) = default;
};

// Total order used everywhere: gen_sim descending, then i, then j ascending.
bool ranks_before(const CandidatePair& a, const CandidatePair& b) noexcept;

struct SteerSpec {
  std::string subdomain;
  std::string classifier_model = "gpt-3.5-turbo";
  std::size_t oversample_factor = 4;
};

struct MinerConfig {
  std::size_t n = 150;
  double tau = 0.7;
  std::size_t block_size = 256;
  std::size_t workers = 0;  // 0 = hardware concurrency
  std::optional<SteerSpec> steer;

  void validate() const;  // throws ConfigError
};

// dot(u, v) / (|u| |v|), accumulated in double in index order. This is the
// canonical value every other similarity is checked against.
double cosine_sim(std::span<const float> u, std::span<const float> v);

// O(N^2) enumeration over i < j. Reference result for the blocked miner.
std::vector<CandidatePair> brute_force_mine(const EmbeddingMatrix& gen, const EmbeddingMatrix& ref,
                                            const MinerConfig& cfg);

// What the steering filter needs besides the config.
struct SteerContext {
  LlmGateway& llm;
  const Corpus& corpus;
  const PromptTemplates& templates = PromptTemplates::builtin();
};

// Tiled search over the upper triangle. Unsteered results match
// brute_force_mine (values are recomputed canonically before ranking).
// With cfg.steer set, the oversampled unsteered list is filtered through the
// relevance classifier; `steering` must then be provided.
std::vector<CandidatePair> mine_pairs(const EmbeddingMatrix& gen, const EmbeddingMatrix& ref,
                                      const MinerConfig& cfg,
                                      const SteerContext* steering = nullptr);

// Asks whether the difference between the texts matters for `subdomain`.
bool classify_pair_relevance(const std::string& text_a, const std::string& text_b,
                             const std::string& subdomain, LlmGateway& llm,
                             const std::string& model_id,
                             const PromptTemplates& templates = PromptTemplates::builtin());

// {i, j, text_i, text_j, gen_sim, ref_sim} list.
nlohmann::json pairs_to_json(const std::vector<CandidatePair>& pairs, const Corpus& corpus);

struct PairWithText {
  CandidatePair pair;
  std::string text_i;
  std::string text_j;
};
std::vector<PairWithText> pairs_from_json(const nlohmann::json& j);

}  // namespace erragree
