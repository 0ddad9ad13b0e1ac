#include "erragree/embedding.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "erragree/digest.hpp"
#include "erragree/error.hpp"
#include "erragree/fileio.hpp"

namespace erragree {
namespace {

constexpr char kMagic[4] = {'E', 'M', 'B', '1'};

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xFF) << 24) | ((v & 0xFF00) << 8) | ((v >> 8) & 0xFF00) | (v >> 24);
  }
  return v;
}

void put_u32(std::string& out, std::uint32_t v) {
  v = to_le(v);
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

std::uint32_t get_u32(const char* p) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  return to_le(v);
}

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  auto p = path;
  p += ".json";
  return p;
}

double row_norm(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * static_cast<double>(x);
  return std::sqrt(s);
}

}  // namespace

EmbeddingMatrix::EmbeddingMatrix(std::string model_id, std::size_t rows, std::size_t dims,
                                 std::vector<float> data, bool normalized)
    : model_id_(std::move(model_id)), rows_(rows), dims_(dims), data_(std::move(data)),
      normalized_(normalized) {
  if (dims_ == 0 && rows_ > 0) throw DimensionMismatch("embedding matrix with zero dims");
  if (data_.size() != rows_ * dims_) {
    throw DimensionMismatch("matrix data holds " + std::to_string(data_.size()) + " floats, expected " +
                            std::to_string(rows_ * dims_));
  }
  for (float x : data_) {
    if (!std::isfinite(x)) throw NonFiniteEmbedding("matrix '" + model_id_ + "' contains NaN/Inf");
  }
  if (normalized_) {
    for (std::size_t i = 0; i < rows_; ++i) {
      if (std::abs(row_norm(row(i)) - 1.0) > 1e-4) {
        throw FormatError("row " + std::to_string(i) + " of '" + model_id_ +
                          "' is flagged normalized but has norm " +
                          std::to_string(row_norm(row(i))));
      }
    }
  }
}

std::vector<float> normalize_vector(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) {
    if (!std::isfinite(x)) throw NonFiniteEmbedding("vector contains NaN/Inf");
    s += static_cast<double>(x) * static_cast<double>(x);
  }
  const double norm = std::sqrt(s);
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw NonFiniteEmbedding("cannot normalize a zero vector");
  }
  std::vector<float> out(v.size());
  for (std::size_t k = 0; k < v.size(); ++k) {
    out[k] = static_cast<float>(static_cast<double>(v[k]) / norm);
  }
  return out;
}

void save_matrix(const EmbeddingMatrix& m, const std::filesystem::path& path) {
  std::string bytes;
  bytes.reserve(12 + m.data().size() * 4);
  bytes.append(kMagic, 4);
  put_u32(bytes, static_cast<std::uint32_t>(m.rows()));
  put_u32(bytes, static_cast<std::uint32_t>(m.dims()));
  for (float f : m.data()) put_u32(bytes, std::bit_cast<std::uint32_t>(f));
  write_file_atomic(path, bytes);
  nlohmann::json meta = {{"model_id", m.model_id()},
                         {"normalized", m.normalized()},
                         {"corpus_digest", m.corpus_digest()}};
  write_file_atomic(sidecar_path(path), meta.dump(2) + "\n");
}

EmbeddingMatrix load_matrix(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw BadMagic(path.string() + ": not an EMB1 matrix file");
  }
  if (bytes.size() < 12) throw TruncatedFile(path.string() + ": header truncated");
  const std::uint32_t rows = get_u32(bytes.data() + 4);
  const std::uint32_t dims = get_u32(bytes.data() + 8);
  const std::size_t expected = 12 + static_cast<std::size_t>(rows) * dims * 4;
  if (bytes.size() < expected) {
    throw TruncatedFile(path.string() + ": header declares " + std::to_string(rows) + "x" +
                        std::to_string(dims) + " but file holds " + std::to_string(bytes.size()) +
                        " bytes");
  }
  if (bytes.size() > expected) {
    throw FormatError(path.string() + ": trailing bytes after matrix payload");
  }
  std::vector<float> data(static_cast<std::size_t>(rows) * dims);
  for (std::size_t k = 0; k < data.size(); ++k) {
    data[k] = std::bit_cast<float>(get_u32(bytes.data() + 12 + 4 * k));
  }

  std::string model_id;
  bool normalized = false;
  std::string corpus_digest;
  const auto side = sidecar_path(path);
  if (std::filesystem::exists(side)) {
    try {
      const auto meta = nlohmann::json::parse(read_file(side));
      model_id = meta.value("model_id", "");
      normalized = meta.value("normalized", false);
      corpus_digest = meta.value("corpus_digest", "");
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(side.string() + ": " + e.what());
    }
  }
  EmbeddingMatrix m(std::move(model_id), rows, dims, std::move(data), normalized);
  m.set_corpus_digest(std::move(corpus_digest));
  return m;
}

void EmbeddingRequest::validate() const {
  if (model_id.empty()) throw FormatError("embedding request without model id");
  if (texts.empty()) throw FormatError("embedding request without texts");
  for (const auto& t : texts) {
    if (t.empty()) throw FormatError("embedding request contains an empty text");
  }
}

std::optional<EmbeddingMatrix> EmbeddingBackend::embed_corpus(const Corpus&, const std::string&) {
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// EmbeddingCache

EmbeddingCache::EmbeddingCache(std::filesystem::path persist_path) : persist_path_(std::move(persist_path)) {
  if (!std::filesystem::exists(*persist_path_)) return;
  std::ifstream in(*persist_path_);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto rec = nlohmann::json::parse(line);
      store_[rec.at("model").get<std::string>() + '\n' + rec.at("digest").get<std::string>()] =
          rec.at("vector").get<std::vector<float>>();
    } catch (const nlohmann::json::exception&) {
      // A torn final line from an interrupted run is dropped; anything else is corruption.
      if (in.peek() != EOF) {
        throw FormatError(persist_path_->string() + ":" + std::to_string(line_no) +
                          ": corrupt embedding cache record");
      }
    }
  }
}

EmbeddingCache::Key EmbeddingCache::make_key(const std::string& model_id, const std::string& text) {
  return model_id + '\n' + sha256_hex(text);
}

void EmbeddingCache::append_persisted(const std::string& model_id, const std::string& digest,
                                      const std::vector<float>& v) {
  if (!persist_path_) return;
  if (persist_path_->has_parent_path()) std::filesystem::create_directories(persist_path_->parent_path());
  std::ofstream out(*persist_path_, std::ios::app);
  out << nlohmann::json{{"model", model_id}, {"digest", digest}, {"vector", v}}.dump() << '\n';
}

void EmbeddingCache::insert(const std::string& model_id, const std::string& text, std::vector<float> v) {
  const auto key = make_key(model_id, text);
  std::lock_guard lock(mu_);
  auto [it, inserted] = store_.try_emplace(key, std::move(v));
  if (inserted) append_persisted(model_id, key.substr(model_id.size() + 1), it->second);
}

std::optional<std::vector<float>> EmbeddingCache::lookup(const std::string& model_id,
                                                         const std::string& text) const {
  const auto key = make_key(model_id, text);
  std::lock_guard lock(mu_);
  if (auto it = store_.find(key); it != store_.end()) return it->second;
  return std::nullopt;
}

std::size_t EmbeddingCache::size() const {
  std::lock_guard lock(mu_);
  return store_.size();
}

std::vector<std::vector<float>> EmbeddingCache::resolve(const std::string& model_id,
                                                        std::span<const std::string> texts,
                                                        const Fetch& fetch) {
  std::vector<std::vector<float>> out(texts.size());
  std::vector<Key> owned_keys;
  std::vector<std::string> owned_texts;
  std::vector<std::promise<std::vector<float>>> promises;
  std::vector<std::pair<std::size_t, std::shared_future<std::vector<float>>>> waits;

  {
    std::lock_guard lock(mu_);
    for (std::size_t i = 0; i < texts.size(); ++i) {
      auto key = make_key(model_id, texts[i]);
      if (auto it = store_.find(key); it != store_.end()) {
        out[i] = it->second;
      } else if (auto f = inflight_.find(key); f != inflight_.end()) {
        waits.emplace_back(i, f->second);
      } else {
        auto& p = promises.emplace_back();
        auto fut = p.get_future().share();
        inflight_.emplace(key, fut);
        waits.emplace_back(i, fut);
        owned_keys.push_back(std::move(key));
        owned_texts.push_back(texts[i]);
      }
    }
  }

  if (!owned_texts.empty()) {
    std::vector<std::vector<float>> fetched;
    try {
      fetched = fetch(owned_texts);
      if (fetched.size() != owned_texts.size()) {
        throw DimensionMismatch("backend returned " + std::to_string(fetched.size()) + " vectors for " +
                                std::to_string(owned_texts.size()) + " texts");
      }
      for (auto& v : fetched) v = normalize_vector(v);
    } catch (...) {
      std::lock_guard lock(mu_);
      for (std::size_t k = 0; k < owned_keys.size(); ++k) {
        promises[k].set_exception(std::current_exception());
        inflight_.erase(owned_keys[k]);
      }
      throw;
    }
    std::lock_guard lock(mu_);
    for (std::size_t k = 0; k < owned_keys.size(); ++k) {
      store_[owned_keys[k]] = fetched[k];
      append_persisted(model_id, owned_keys[k].substr(model_id.size() + 1), fetched[k]);
      promises[k].set_value(std::move(fetched[k]));
      inflight_.erase(owned_keys[k]);
    }
  }

  for (auto& [i, fut] : waits) out[i] = fut.get();
  return out;
}

// ---------------------------------------------------------------------------
// EmbeddingProvider

EmbeddingProvider::EmbeddingProvider(std::shared_ptr<EmbeddingBackend> backend,
                                     std::shared_ptr<EmbeddingCache> cache, ProviderOptions options)
    : backend_(std::move(backend)),
      cache_(cache ? std::move(cache) : std::make_shared<EmbeddingCache>()),
      options_(options) {
  if (!backend_) throw BackendUnavailable("no embedding backend configured");
  if (options_.batch_size == 0) options_.batch_size = 1;
  if (options_.max_parallel == 0) options_.max_parallel = 1;
}

std::vector<std::vector<float>> EmbeddingProvider::fetch(const std::string& model_id,
                                                         std::span<const std::string> texts) {
  std::vector<std::span<const std::string>> batches;
  for (std::size_t off = 0; off < texts.size(); off += options_.batch_size) {
    batches.push_back(texts.subspan(off, std::min(options_.batch_size, texts.size() - off)));
  }
  std::vector<std::vector<std::vector<float>>> results(batches.size());
  for (std::size_t wave = 0; wave < batches.size(); wave += options_.max_parallel) {
    const std::size_t end = std::min(batches.size(), wave + options_.max_parallel);
    if (end - wave == 1) {
      results[wave] = backend_->embed_batch(model_id, batches[wave]);
      continue;
    }
    std::vector<std::future<std::vector<std::vector<float>>>> futures;
    for (std::size_t b = wave; b < end; ++b) {
      futures.push_back(std::async(std::launch::async,
                                   [this, &model_id, batch = batches[b]] {
                                     return backend_->embed_batch(model_id, batch);
                                   }));
    }
    for (std::size_t b = wave; b < end; ++b) results[b] = futures[b - wave].get();
  }
  std::vector<std::vector<float>> out;
  out.reserve(texts.size());
  for (std::size_t b = 0; b < batches.size(); ++b) {
    if (results[b].size() != batches[b].size()) {
      throw DimensionMismatch("backend returned " + std::to_string(results[b].size()) +
                              " vectors for a batch of " + std::to_string(batches[b].size()));
    }
    for (auto& v : results[b]) out.push_back(std::move(v));
  }
  return out;
}

EmbeddingMatrix EmbeddingProvider::embed_texts(const std::string& model_id,
                                               std::span<const std::string> texts) {
  auto rows = cache_->resolve(model_id, texts, [&](std::span<const std::string> missing) {
    return fetch(model_id, missing);
  });
  const std::size_t dims = rows.empty() ? 0 : rows.front().size();
  std::vector<float> data;
  data.reserve(rows.size() * dims);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != dims) {
      throw DimensionMismatch("model '" + model_id + "' returned " + std::to_string(rows[i].size()) +
                              " dims for text " + std::to_string(i) + ", expected " + std::to_string(dims));
    }
    data.insert(data.end(), rows[i].begin(), rows[i].end());
  }
  return EmbeddingMatrix(model_id, rows.size(), dims, std::move(data), true);
}

EmbeddingMatrix EmbeddingProvider::embed_corpus(const Corpus& corpus, const std::string& model_id) {
  if (auto pre = backend_->embed_corpus(corpus, model_id)) {
    if (pre->rows() != corpus.size()) {
      throw RowCountMismatch("precomputed matrix for '" + model_id + "' has " + std::to_string(pre->rows()) +
                             " rows, corpus has " + std::to_string(corpus.size()));
    }
    if (!pre->normalized()) {
      std::vector<float> data;
      data.reserve(pre->data().size());
      for (std::size_t i = 0; i < pre->rows(); ++i) {
        auto v = normalize_vector(pre->row(i));
        data.insert(data.end(), v.begin(), v.end());
      }
      EmbeddingMatrix m(model_id, pre->rows(), pre->dims(), std::move(data), true);
      m.set_corpus_digest(corpus.source_digest());
      return m;
    }
    return std::move(*pre);
  }
  const auto texts = corpus.texts();
  auto m = embed_texts(model_id, texts);
  m.set_corpus_digest(corpus.source_digest());
  return m;
}

EmbeddingMatrix embed(const Corpus& corpus, const std::string& model_id, EmbeddingProvider& provider) {
  return provider.embed_corpus(corpus, model_id);
}

}  // namespace erragree
