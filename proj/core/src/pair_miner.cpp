#include "erragree/pair_miner.hpp"

#include <algorithm>
#include <atomic>
#include <cfloat>
#include <cmath>
#include <limits>
#include <thread>

#include <Eigen/Core>

#include "erragree/error.hpp"
#include "erragree/llm_gateway.hpp"
#include "erragree/prompts.hpp"
#include "erragree/verdict.hpp"

namespace erragree {
namespace {

using RowMajor = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMajor>;

void check_shapes(const EmbeddingMatrix& gen, const EmbeddingMatrix& ref) {
  if (gen.rows() != ref.rows()) {
    throw RowCountMismatch("generation matrix has " + std::to_string(gen.rows()) +
                           " rows, reference matrix has " + std::to_string(ref.rows()));
  }
}

EmbeddingMatrix normalized_copy(const EmbeddingMatrix& m) {
  std::vector<float> data;
  data.reserve(m.data().size());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto v = normalize_vector(m.row(i));
    data.insert(data.end(), v.begin(), v.end());
  }
  return EmbeddingMatrix(m.model_id(), m.rows(), m.dims(), std::move(data), true);
}

// Bounded best-n set; the heap top is the worst retained pair.
class TopN {
 public:
  explicit TopN(std::size_t n) : n_(n) { heap_.reserve(n); }

  bool full() const noexcept { return heap_.size() == n_; }
  double worst_gen() const noexcept { return heap_.front().gen_sim; }

  void offer(const CandidatePair& p) {
    if (heap_.size() < n_) {
      heap_.push_back(p);
      std::push_heap(heap_.begin(), heap_.end(), ranks_before);
    } else if (ranks_before(p, heap_.front())) {
      std::pop_heap(heap_.begin(), heap_.end(), ranks_before);
      heap_.back() = p;
      std::push_heap(heap_.begin(), heap_.end(), ranks_before);
    }
  }

  std::vector<CandidatePair> take() && { return std::move(heap_); }

 private:
  std::size_t n_;
  std::vector<CandidatePair> heap_;
};

struct Tile {
  std::size_t row0, rows, col0, cols;
  bool diagonal;
};

// `gen_unit` (unit rows) drives the float tile products; admitted pairs are
// rescored canonically from `gen` and `ref` as given.
std::vector<CandidatePair> mine_unsteered(const EmbeddingMatrix& gen, const EmbeddingMatrix& ref,
                                          const EmbeddingMatrix& gen_unit, const MinerConfig& cfg) {
  const std::size_t n_rows = gen.rows();
  const std::size_t dims = gen.dims();
  if (n_rows < 2) return {};

  const std::size_t block = std::max<std::size_t>(1, cfg.block_size);
  std::vector<Tile> tiles;
  for (std::size_t r0 = 0; r0 < n_rows; r0 += block) {
    for (std::size_t c0 = r0; c0 < n_rows; c0 += block) {
      tiles.push_back({r0, std::min(block, n_rows - r0), c0, std::min(block, n_rows - c0), r0 == c0});
    }
  }

  // Float tile products of unit vectors are within dims * FLT_EPSILON of the
  // exact inner product; the extra slack covers the canonical division by
  // norms that are 1 to within float rounding.
  const double margin = static_cast<double>(dims) * FLT_EPSILON + 1e-6;

  const ConstRowMap g(gen_unit.data().data(), static_cast<Eigen::Index>(n_rows), static_cast<Eigen::Index>(dims));

  std::size_t workers = cfg.workers ? cfg.workers : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, tiles.size());

  std::atomic<std::size_t> next{0};
  std::vector<std::vector<CandidatePair>> partial(workers);
  std::vector<std::exception_ptr> errors(workers);

  auto work = [&](std::size_t w) {
    try {
      TopN top(cfg.n);
      RowMajor prod;
      double gate = -std::numeric_limits<double>::infinity();
      for (std::size_t t = next++; t < tiles.size(); t = next++) {
        const Tile& tile = tiles[t];
        const auto a = g.middleRows(static_cast<Eigen::Index>(tile.row0), static_cast<Eigen::Index>(tile.rows));
        const auto b = g.middleRows(static_cast<Eigen::Index>(tile.col0), static_cast<Eigen::Index>(tile.cols));
        prod.resize(static_cast<Eigen::Index>(tile.rows), static_cast<Eigen::Index>(tile.cols));
        prod.noalias() = a * b.transpose();
        for (std::size_t r = 0; r < tile.rows; ++r) {
          const float* row = prod.data() + r * tile.cols;
          const std::size_t c_begin = tile.diagonal ? r + 1 : 0;
          const auto gate_f = static_cast<float>(gate);
          for (std::size_t c = c_begin; c < tile.cols; ++c) {
            if (row[c] < gate_f) continue;
            const std::size_t i = tile.row0 + r;
            const std::size_t j = tile.col0 + c;
            const double ref_sim = cosine_sim(ref.row(i), ref.row(j));
            if (!(ref_sim < cfg.tau)) continue;
            top.offer({static_cast<SentenceId>(i), static_cast<SentenceId>(j),
                       cosine_sim(gen.row(i), gen.row(j)), ref_sim});
            if (top.full()) {
              gate = top.worst_gen() - margin;
              // Round the float gate down so the float comparison never admits less.
              const auto next_gate = static_cast<float>(gate);
              gate = static_cast<double>(next_gate) > gate
                         ? static_cast<double>(std::nextafter(next_gate, -INFINITY))
                         : static_cast<double>(next_gate);
            }
          }
        }
      }
      partial[w] = std::move(top).take();
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };

  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::jthread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(work, w);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::vector<CandidatePair> merged;
  for (auto& p : partial) merged.insert(merged.end(), p.begin(), p.end());
  std::sort(merged.begin(), merged.end(), ranks_before);
  if (merged.size() > cfg.n) merged.resize(cfg.n);
  return merged;
}

}  // namespace

bool ranks_before(const CandidatePair& a, const CandidatePair& b) noexcept {
  if (a.gen_sim != b.gen_sim) return a.gen_sim > b.gen_sim;
  if (a.i != b.i) return a.i < b.i;
  return a.j < b.j;
}

void MinerConfig::validate() const {
  if (n < 1) throw ConfigError("miner.n must be >= 1");
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("miner.tau must be in (0, 1]");
  if (block_size < 1) throw ConfigError("miner.block_size must be >= 1");
  if (steer) {
    if (steer->subdomain.empty()) throw ConfigError("steer.subdomain must be non-empty");
    if (steer->oversample_factor < 1) throw ConfigError("steer.oversample_factor must be >= 1");
  }
}

double cosine_sim(std::span<const float> u, std::span<const float> v) {
  if (u.size() != v.size()) {
    throw DimensionMismatch("cosine_sim of " + std::to_string(u.size()) + " and " + std::to_string(v.size()) +
                            " dims");
  }
  double dot = 0.0;
  double uu = 0.0;
  double vv = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    const double a = u[k];
    const double b = v[k];
    dot += a * b;
    uu += a * a;
    vv += b * b;
  }
  if (uu == 0.0 || vv == 0.0) throw ZeroVector("cosine_sim of a zero vector");
  return dot / (std::sqrt(uu) * std::sqrt(vv));
}

std::vector<CandidatePair> brute_force_mine(const EmbeddingMatrix& gen, const EmbeddingMatrix& ref,
                                            const MinerConfig& cfg) {
  cfg.validate();
  check_shapes(gen, ref);
  // Sorted best-so-far list, at most n long.
  std::vector<CandidatePair> best;
  for (std::size_t i = 0; i < gen.rows(); ++i) {
    for (std::size_t j = i + 1; j < gen.rows(); ++j) {
      const double ref_sim = cosine_sim(ref.row(i), ref.row(j));
      if (!(ref_sim < cfg.tau)) continue;
      const CandidatePair p{static_cast<SentenceId>(i), static_cast<SentenceId>(j),
                            cosine_sim(gen.row(i), gen.row(j)), ref_sim};
      if (best.size() == cfg.n && !ranks_before(p, best.back())) continue;
      best.insert(std::upper_bound(best.begin(), best.end(), p, ranks_before), p);
      if (best.size() > cfg.n) best.pop_back();
    }
  }
  return best;
}

std::vector<CandidatePair> mine_pairs(const EmbeddingMatrix& gen, const EmbeddingMatrix& ref,
                                      const MinerConfig& cfg, const SteerContext* steering) {
  cfg.validate();
  check_shapes(gen, ref);
  if (gen.rows() > std::numeric_limits<SentenceId>::max()) {
    throw RowCountMismatch("too many rows for 32-bit sentence ids");
  }
  if (cfg.steer && !steering) {
    throw ConfigError("steered mining needs an LLM gateway and the corpus texts");
  }

  std::vector<CandidatePair> unsteered;
  {
    MinerConfig base = cfg;
    base.steer.reset();
    if (cfg.steer) base.n = cfg.n * cfg.steer->oversample_factor;
    if (gen.normalized()) {
      unsteered = mine_unsteered(gen, ref, gen, base);
    } else {
      unsteered = mine_unsteered(gen, ref, normalized_copy(gen), base);
    }
  }
  if (!cfg.steer) return unsteered;

  if (steering->corpus.size() != gen.rows()) {
    throw RowCountMismatch("steering corpus has " + std::to_string(steering->corpus.size()) +
                           " sentences, matrices have " + std::to_string(gen.rows()) + " rows");
  }
  std::vector<CandidatePair> kept;
  for (const auto& p : unsteered) {
    bool relevant = false;
    try {
      relevant = classify_pair_relevance(steering->corpus.text(p.i), steering->corpus.text(p.j),
                                         cfg.steer->subdomain, steering->llm, cfg.steer->classifier_model,
                                         steering->templates);
    } catch (const UnparseableVerdict&) {
      relevant = false;
    } catch (const Error& e) {
      throw SteeringClassifierError("relevance classifier failed on pair (" + std::to_string(p.i) + ", " +
                                    std::to_string(p.j) + "): " + e.kind() + ": " + e.what());
    }
    if (relevant) {
      kept.push_back(p);
      if (kept.size() == cfg.n) break;
    }
  }
  return kept;
}

bool classify_pair_relevance(const std::string& text_a, const std::string& text_b,
                             const std::string& subdomain, LlmGateway& llm, const std::string& model_id,
                             const PromptTemplates& templates) {
  auto session = llm.new_session(model_id, SessionParams{.temperature = 0.0, .max_tokens = 8, .sample = 0});
  const auto prompt = fill_template(templates.get("classify_pair"),
                                    {{"TEXT_A", text_a}, {"TEXT_B", text_b}, {"SUBDOMAIN", subdomain}});
  return parse_verdict(llm.chat(session, prompt));
}

nlohmann::json pairs_to_json(const std::vector<CandidatePair>& pairs, const Corpus& corpus) {
  auto out = nlohmann::json::array();
  for (const auto& p : pairs) {
    out.push_back({{"i", p.i},
                   {"j", p.j},
                   {"text_i", corpus.text(p.i)},
                   {"text_j", corpus.text(p.j)},
                   {"gen_sim", p.gen_sim},
                   {"ref_sim", p.ref_sim}});
  }
  return out;
}

std::vector<PairWithText> pairs_from_json(const nlohmann::json& j) {
  std::vector<PairWithText> out;
  try {
    for (const auto& rec : j) {
      out.push_back({{rec.at("i").get<SentenceId>(), rec.at("j").get<SentenceId>(),
                      rec.at("gen_sim").get<double>(), rec.at("ref_sim").get<double>()},
                     rec.at("text_i").get<std::string>(),
                     rec.at("text_j").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed pairs artifact: ") + e.what());
  }
  return out;
}

}  // namespace erragree
