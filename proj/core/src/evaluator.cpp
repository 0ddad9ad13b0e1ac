#include "erragree/evaluator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <thread>

#include "erragree/error.hpp"
#include "erragree/fileio.hpp"
#include "erragree/pair_miner.hpp"
#include "erragree/prompts.hpp"
#include "erragree/verdict.hpp"

namespace erragree {
namespace {

nlohmann::json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

// Decimal edge for bin index k, so 44 * 0.02 prints as 0.88.
double bin_edge(long long k, double width) {
  return std::round(static_cast<double>(k) * width * 1e12) / 1e12;
}

long long bin_index(double sim, double width) {
  return static_cast<long long>(std::floor(sim / width + 1e-9));
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

FailureEvaluation evaluate_similarities(const std::string& failure_key, std::span<const double> sims, double t) {
  if (sims.empty()) throw EmptyPairList("no similarities to evaluate for '" + failure_key + "'");
  const auto k = static_cast<double>(sims.size());
  double sum = 0.0;
  std::size_t hits = 0;
  for (double s : sims) {
    sum += s;
    if (s >= t) ++hits;
  }
  const double mean = sum / k;
  double sq = 0.0;
  for (double s : sims) sq += (s - mean) * (s - mean);

  FailureEvaluation e;
  e.failure_key = failure_key;
  e.name = failure_key;
  e.mean_sim = mean;
  e.std_sim = std::sqrt(sq / k);
  e.success_rate = static_cast<double>(hits) / k;
  e.k_evaluated = sims.size();
  e.threshold_t = t;
  return e;
}

FailureEvaluation success_rate(std::vector<GeneratedPair>& pairs, EmbeddingProvider& embeddings,
                               const std::string& model_id, double t) {
  if (pairs.empty()) throw EmptyPairList("no generated pairs to evaluate");
  std::vector<std::string> texts;
  texts.reserve(2 * pairs.size());
  for (const auto& p : pairs) {
    texts.push_back(p.text_a);
    texts.push_back(p.text_b);
  }
  const auto m = embeddings.embed_texts(model_id, texts);
  std::vector<double> sims(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    sims[i] = cosine_sim(m.row(2 * i), m.row(2 * i + 1));
    pairs[i].gen_sim = sims[i];
  }
  return evaluate_similarities(pairs.front().failure_key, sims, t);
}

RelevanceResult relevance_rate(const std::vector<GeneratedPair>& pairs, const std::string& subdomain,
                               LlmGateway& llm, const std::string& model_id,
                               const PromptTemplates& templates) {
  if (pairs.empty()) throw EmptyPairList("no pairs to judge for relevance");
  const auto& tpl = templates.get("relevance");
  std::vector<Session> sessions;
  sessions.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    sessions.push_back(llm.new_session(model_id, SessionParams{.temperature = 0.0, .max_tokens = 8, .sample = 0}));
  }

  // 1 = yes, 0 = no, -1 = unparseable
  std::vector<int> verdicts(pairs.size(), -1);
  std::vector<std::exception_ptr> errors(pairs.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < pairs.size(); i = next++) {
      try {
        const auto prompt = fill_template(
            tpl, {{"SUBDOMAIN", subdomain}, {"TEXT_A", pairs[i].text_a}, {"TEXT_B", pairs[i].text_b}});
        verdicts[i] = parse_verdict(llm.chat(sessions[i], prompt)) ? 1 : 0;
      } catch (const UnparseableVerdict&) {
        verdicts[i] = -1;
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  {
    std::vector<std::jthread> workers;
    const std::size_t n = std::min<std::size_t>(8, pairs.size());
    for (std::size_t w = 0; w < n; ++w) workers.emplace_back(work);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  RelevanceResult r;
  for (int v : verdicts) {
    if (v == 1) ++r.yes;
    else if (v == 0) ++r.no;
    else ++r.unparseable;
  }
  r.rate = static_cast<double>(r.yes) / static_cast<double>(pairs.size());
  return r;
}

std::vector<LabeledPair> load_labeled_pairs(const std::filesystem::path& path) {
  const auto text = read_file(path);
  std::vector<LabeledPair> out;
  std::size_t start = 0, line_no = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const std::string_view line(text.data() + start, end - start);
    start = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      LabeledPair p;
      p.text_a = j.at("text_a").get<std::string>();
      p.text_b = j.at("text_b").get<std::string>();
      if (j.contains("gen_sim") && !j.at("gen_sim").is_null()) {
        p.gen_sim = j.at("gen_sim").get<double>();
        if (!(*p.gen_sim >= -1.0 && *p.gen_sim <= 1.0)) throw FormatError("gen_sim outside [-1, 1]");
      }
      p.downstream_failure = j.at("downstream_failure").get<bool>();
      p.visually_identical = j.value("visually_identical", false);
      out.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void fill_missing_sims(std::vector<LabeledPair>& labeled, EmbeddingProvider& embeddings,
                       const std::string& model_id) {
  std::vector<std::size_t> missing;
  std::vector<std::string> texts;
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    if (labeled[i].gen_sim) continue;
    missing.push_back(i);
    texts.push_back(labeled[i].text_a);
    texts.push_back(labeled[i].text_b);
  }
  if (missing.empty()) return;
  const auto m = embeddings.embed_texts(model_id, texts);
  for (std::size_t k = 0; k < missing.size(); ++k) {
    labeled[missing[k]].gen_sim = cosine_sim(m.row(2 * k), m.row(2 * k + 1));
  }
}

CalibrationHistogram calibrate_threshold(const std::vector<LabeledPair>& labeled, double bin_width,
                                         double target_ratio) {
  if (labeled.empty()) throw EmptyLabelSet("no labeled pairs");
  if (!(bin_width > 0.0 && bin_width < 1.0)) throw ConfigError("bin_width must be in (0, 1)");
  long long lo = 0, hi = 0;
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    if (!labeled[i].gen_sim) throw FormatError("labeled pair " + std::to_string(i) + " has no gen_sim");
    const auto b = bin_index(*labeled[i].gen_sim, bin_width);
    if (i == 0 || b < lo) lo = b;
    if (i == 0 || b > hi) hi = b;
  }
  const auto bins = static_cast<std::size_t>(hi - lo + 1);

  CalibrationHistogram h;
  h.bin_width = bin_width;
  h.target_ratio = target_ratio;
  h.counts.assign(bins, 0);
  h.failure_ratio.assign(bins, 0.0);
  std::vector<std::size_t> failures(bins, 0);
  for (const auto& p : labeled) {
    const auto b = static_cast<std::size_t>(bin_index(*p.gen_sim, bin_width) - lo);
    ++h.counts[b];
    if (p.downstream_failure) ++failures[b];
  }
  for (std::size_t b = 0; b <= bins; ++b) h.bin_edges.push_back(bin_edge(lo + static_cast<long long>(b), bin_width));
  for (std::size_t b = 0; b < bins; ++b) {
    if (h.counts[b]) h.failure_ratio[b] = static_cast<double>(failures[b]) / static_cast<double>(h.counts[b]);
  }
  for (std::size_t b = bins; b-- > 0;) {
    if (!h.counts[b]) continue;
    if (h.failure_ratio[b] < target_ratio) break;
    h.recommended_t = h.bin_edges[b];
  }
  return h;
}

nlohmann::json to_json(const CalibrationHistogram& h) {
  return {{"bin_width", h.bin_width},
          {"target_ratio", h.target_ratio},
          {"bin_edges", h.bin_edges},
          {"failure_ratio", h.failure_ratio},
          {"counts", h.counts},
          {"recommended_t", opt_json(h.recommended_t)}};
}

nlohmann::json to_json(const FailureEvaluation& e) {
  return {{"failure_key", e.failure_key},
          {"name", e.name},
          {"mean_sim", e.mean_sim},
          {"std_sim", e.std_sim},
          {"success_rate", e.success_rate},
          {"relevance_rate", opt_json(e.relevance_rate)},
          {"k_evaluated", e.k_evaluated},
          {"threshold_t", e.threshold_t}};
}

EvaluationReport build_report(std::vector<FailureEvaluation> evaluations, nlohmann::json metadata) {
  std::stable_sort(evaluations.begin(), evaluations.end(),
                   [](const auto& a, const auto& b) { return a.success_rate > b.success_rate; });
  EvaluationReport r;
  r.metadata = metadata.is_null() ? nlohmann::json::object() : std::move(metadata);
  r.rows = std::move(evaluations);
  return r;
}

std::string EvaluationReport::to_json_text() const {
  auto rows_json = nlohmann::json::array();
  for (const auto& e : rows) rows_json.push_back(to_json(e));
  return nlohmann::json{{"metadata", metadata}, {"rows", rows_json}}.dump(2) + "\n";
}

std::string EvaluationReport::to_markdown() const {
  std::string out = "# Evaluation report\n\n";
  for (const auto& [key, value] : metadata.items()) {
    out += "- **" + key + "**: " + (value.is_string() ? value.get<std::string>() : value.dump()) + "\n";
  }
  if (!metadata.empty()) out += "\n";
  out += "| Failure | Mean sim | Std | Success rate | Relevance rate | k |\n";
  out += "|---|---|---|---|---|---|\n";
  for (const auto& e : rows) {
    out += "| " + e.name + " | " + fixed(e.mean_sim, 3) + " | " + fixed(e.std_sim, 3) + " | " +
           fixed(100.0 * e.success_rate, 1) + "% | " +
           (e.relevance_rate ? fixed(100.0 * *e.relevance_rate, 1) + "%" : std::string("-")) + " | " +
           std::to_string(e.k_evaluated) + " |\n";
  }
  return out;
}

}  // namespace erragree
