#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "erragree/embedding.hpp"
#include "erragree/generator.hpp"
#include "erragree/llm_gateway.hpp"
#include "erragree/prompts.hpp"

namespace erragree {

struct FailureEvaluation {
  std::string failure_key;
  std::string name;
  double mean_sim = 0.0;
  double std_sim = 0.0;  // population
  double success_rate = 0.0;
  std::optional<double> relevance_rate;
  std::size_t k_evaluated = 0;
  double threshold_t = 0.88;
};

// Statistics over already-computed similarities; success means sim >= t.
FailureEvaluation evaluate_similarities(const std::string& failure_key, std::span<const double> sims,
                                        double t);

// Embeds both sides of every pair with `model_id`, fills gen_sim and
// evaluates. Throws EmptyPairList.
FailureEvaluation success_rate(std::vector<GeneratedPair>& pairs, EmbeddingProvider& embeddings,
                               const std::string& model_id, double t);

struct RelevanceResult {
  double rate = 0.0;
  std::size_t yes = 0;
  std::size_t no = 0;
  std::size_t unparseable = 0;  // counted as not relevant
};

RelevanceResult relevance_rate(const std::vector<GeneratedPair>& pairs, const std::string& subdomain,
                               LlmGateway& llm, const std::string& model_id,
                               const PromptTemplates& templates = PromptTemplates::builtin());

struct LabeledPair {
  std::string text_a;
  std::string text_b;
  std::optional<double> gen_sim;
  bool downstream_failure = false;
  bool visually_identical = false;
};

std::vector<LabeledPair> load_labeled_pairs(const std::filesystem::path& path);
void fill_missing_sims(std::vector<LabeledPair>& labeled, EmbeddingProvider& embeddings,
                       const std::string& model_id);

struct CalibrationHistogram {
  double bin_width = 0.02;
  double target_ratio = 0.65;
  std::vector<double> bin_edges;
  std::vector<double> failure_ratio;
  std::vector<std::size_t> counts;
  std::optional<double> recommended_t;  // empty when no bin sustains the target
};

// Bins sit on integer multiples of bin_width. The recommendation is the left
// edge of the lowest non-empty bin from which every non-empty bin upward has
// failure ratio >= target_ratio. Throws EmptyLabelSet.
CalibrationHistogram calibrate_threshold(const std::vector<LabeledPair>& labeled, double bin_width,
                                         double target_ratio = 0.65);

nlohmann::json to_json(const CalibrationHistogram& h);

struct EvaluationReport {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<FailureEvaluation> rows;  // success rate descending

  std::string to_json_text() const;
  std::string to_markdown() const;
};

EvaluationReport build_report(std::vector<FailureEvaluation> evaluations, nlohmann::json metadata);

nlohmann::json to_json(const FailureEvaluation& e);

}  // namespace erragree
