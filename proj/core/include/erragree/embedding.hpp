#pragma once

#include <atomic>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "erragree/corpus.hpp"

namespace erragree {

// Row-major float matrix; row i embeds sentence i of the corpus it was built for.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  // Validates shape and finiteness; when `normalized` is set every row must
  // have norm 1 within 1e-4.
  EmbeddingMatrix(std::string model_id, std::size_t rows, std::size_t dims,
                  std::vector<float> data, bool normalized);

  const std::string& model_id() const noexcept { return model_id_; }
  std::size_t rows() const noexcept { return rows_; }
  std::size_t dims() const noexcept { return dims_; }
  bool normalized() const noexcept { return normalized_; }
  const std::vector<float>& data() const noexcept { return data_; }

  std::span<const float> row(std::size_t i) const {
    return {data_.data() + i * dims_, dims_};
  }

  const std::string& corpus_digest() const noexcept { return corpus_digest_; }
  void set_corpus_digest(std::string digest) { corpus_digest_ = std::move(digest); }

  friend bool operator==(const EmbeddingMatrix&, const EmbeddingMatrix&) = default;

 private:
  std::string model_id_;
  std::size_t rows_ = 0;
  std::size_t dims_ = 0;
  std::vector<float> data_;
  bool normalized_ = false;
  std::string corpus_digest_;
};

// L2-normalizes in double precision. Throws NonFiniteEmbedding for zero,
// NaN or Inf input.
std::vector<float> normalize_vector(std::span<const float> v);

// Binary layout: "EMB1", u32 rows, u32 dims (little-endian), then rows*dims
// little-endian f32 row-major. Metadata lives in `<path>.json`.
void save_matrix(const EmbeddingMatrix& m, const std::filesystem::path& path);
EmbeddingMatrix load_matrix(const std::filesystem::path& path);

struct EmbeddingRequest {
  std::string model_id;
  std::vector<std::string> texts;

  void validate() const;  // throws FormatError
};

class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;

  virtual std::string describe() const = 0;

  // One (not necessarily normalized) vector per text, in order.
  virtual std::vector<std::vector<float>> embed_batch(const std::string& model_id,
                                                      std::span<const std::string> texts) = 0;

  // Backends that hold a precomputed matrix for a whole corpus return it here.
  virtual std::optional<EmbeddingMatrix> embed_corpus(const Corpus& corpus,
                                                      const std::string& model_id);
};

// Thread-safe (model_id, sha256(text)) -> vector store. Concurrent requests for
// the same key are coalesced so the backend sees each key at most once.
// Optionally persisted as JSON lines {model, digest, vector}.
class EmbeddingCache {
 public:
  EmbeddingCache() = default;
  explicit EmbeddingCache(std::filesystem::path persist_path);

  using Fetch = std::function<std::vector<std::vector<float>>(std::span<const std::string>)>;

  // Returns one normalized vector per text. Missing keys are fetched with
  // `fetch` (which receives only the texts this caller owns) and normalized.
  std::vector<std::vector<float>> resolve(const std::string& model_id,
                                          std::span<const std::string> texts, const Fetch& fetch);

  void insert(const std::string& model_id, const std::string& text, std::vector<float> v);
  std::optional<std::vector<float>> lookup(const std::string& model_id,
                                           const std::string& text) const;
  std::size_t size() const;

 private:
  using Key = std::string;
  static Key make_key(const std::string& model_id, const std::string& text);
  void append_persisted(const std::string& model_id, const std::string& digest,
                        const std::vector<float>& v);

  mutable std::mutex mu_;
  std::unordered_map<Key, std::vector<float>> store_;
  std::unordered_map<Key, std::shared_future<std::vector<float>>> inflight_;
  std::optional<std::filesystem::path> persist_path_;
};

struct ProviderOptions {
  std::size_t batch_size = 256;
  std::size_t max_parallel = 1;
};

class EmbeddingProvider {
 public:
  explicit EmbeddingProvider(std::shared_ptr<EmbeddingBackend> backend,
                             std::shared_ptr<EmbeddingCache> cache = nullptr,
                             ProviderOptions options = {});

  // Rows aligned with `texts`, normalized.
  EmbeddingMatrix embed_texts(const std::string& model_id, std::span<const std::string> texts);
  EmbeddingMatrix embed_corpus(const Corpus& corpus, const std::string& model_id);

  EmbeddingBackend& backend() noexcept { return *backend_; }
  EmbeddingCache& cache() noexcept { return *cache_; }

 private:
  std::vector<std::vector<float>> fetch(const std::string& model_id,
                                        std::span<const std::string> texts);

  std::shared_ptr<EmbeddingBackend> backend_;
  std::shared_ptr<EmbeddingCache> cache_;
  ProviderOptions options_;
};

EmbeddingMatrix embed(const Corpus& corpus, const std::string& model_id,
                      EmbeddingProvider& provider);

// ---------------------------------------------------------------------------
// Backends

enum class SyntheticScheme {
  kOrthogonalBasis,  // each distinct text gets the next basis vector
  kHashedBagOfWords, // signed feature hashing of lowercased word unigrams
  kHashedNgrams,     // unigrams plus order-sensitive bigrams, negations boosted
};

SyntheticScheme parse_synthetic_scheme(std::string_view name);
std::string_view to_string(SyntheticScheme scheme);

struct SyntheticModel {
  SyntheticScheme scheme = SyntheticScheme::kHashedBagOfWords;
  std::size_t dims = 64;
};

class SyntheticBackend final : public EmbeddingBackend {
 public:
  explicit SyntheticBackend(std::map<std::string, SyntheticModel> models);

  std::string describe() const override;
  std::vector<std::vector<float>> embed_batch(const std::string& model_id,
                                              std::span<const std::string> texts) override;

 private:
  std::map<std::string, SyntheticModel> models_;
  std::mutex mu_;
  std::map<std::string, std::unordered_map<std::string, std::size_t>> basis_index_;
};

// Serves precomputed matrices (model_id -> file). Per-text requests go to the
// optional fallback backend.
class FileBackend final : public EmbeddingBackend {
 public:
  FileBackend(std::map<std::string, std::filesystem::path> matrices,
              std::shared_ptr<EmbeddingBackend> fallback = nullptr);

  std::string describe() const override;
  std::vector<std::vector<float>> embed_batch(const std::string& model_id,
                                              std::span<const std::string> texts) override;
  std::optional<EmbeddingMatrix> embed_corpus(const Corpus& corpus,
                                              const std::string& model_id) override;

 private:
  std::map<std::string, std::filesystem::path> matrices_;
  std::shared_ptr<EmbeddingBackend> fallback_;
};

struct HttpModelInfo {
  std::string id;
  std::size_t dims = 0;
};

// Client for the embedding sidecar: POST /embed, GET /models, GET /healthz.
class HttpBackend final : public EmbeddingBackend {
 public:
  struct Options {
    int timeout_ms = 30000;
  };

  explicit HttpBackend(std::string base_url);
  HttpBackend(std::string base_url, Options options);

  std::string describe() const override;
  std::vector<std::vector<float>> embed_batch(const std::string& model_id,
                                              std::span<const std::string> texts) override;

  std::vector<HttpModelInfo> models();
  bool healthy();

 private:
  std::size_t dims_for(const std::string& model_id);

  std::string base_url_;
  Options options_;
  std::mutex mu_;
  std::optional<std::vector<HttpModelInfo>> models_;
};

// Decorator that counts backend traffic; used to check cache contracts.
class CountingBackend final : public EmbeddingBackend {
 public:
  explicit CountingBackend(std::shared_ptr<EmbeddingBackend> inner);

  std::string describe() const override { return inner_->describe(); }
  std::vector<std::vector<float>> embed_batch(const std::string& model_id,
                                              std::span<const std::string> texts) override;
  std::optional<EmbeddingMatrix> embed_corpus(const Corpus& corpus,
                                              const std::string& model_id) override;

  std::size_t calls() const noexcept { return calls_.load(); }
  std::size_t texts() const noexcept { return texts_.load(); }

 private:
  std::shared_ptr<EmbeddingBackend> inner_;
  std::atomic<std::size_t> calls_{0};
  std::atomic<std::size_t> texts_{0};
};

}  // namespace erragree
