#include <cctype>
#include <cmath>

#include <httplib.h>

#include "erragree/embedding.hpp"
#include "erragree/error.hpp"

namespace erragree {
namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::vector<std::string> word_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c) || c == '\'' || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

void add_feature(std::vector<float>& v, std::string_view feature, float weight) {
  const auto h = fnv1a(feature);
  const float sign = (h >> 63) ? -1.0f : 1.0f;
  v[h % v.size()] += sign * weight;
}

bool is_negation(std::string_view t) {
  static constexpr std::string_view kWords[] = {"no",      "not",    "without", "none",  "never",
                                                "nobody",  "nothing", "cannot", "isn't", "aren't",
                                                "doesn't", "don't",  "won't",   "absent"};
  for (auto w : kWords) {
    if (t == w) return true;
  }
  return false;
}

bool is_quantity(std::string_view t) {
  static constexpr std::string_view kWords[] = {"one",  "two",  "three", "four",    "five",
                                                "six",  "few",  "many",  "several", "some",
                                                "all",  "most", "both",  "single",  "numerous"};
  for (auto w : kWords) {
    if (t == w) return true;
  }
  return !t.empty() && std::isdigit(static_cast<unsigned char>(t.front()));
}

}  // namespace

SyntheticScheme parse_synthetic_scheme(std::string_view name) {
  if (name == "orthogonal-basis") return SyntheticScheme::kOrthogonalBasis;
  if (name == "hashed-bow") return SyntheticScheme::kHashedBagOfWords;
  if (name == "hashed-ngram") return SyntheticScheme::kHashedNgrams;
  throw ConfigError("unknown synthetic embedding scheme '" + std::string(name) + "'");
}

std::string_view to_string(SyntheticScheme scheme) {
  switch (scheme) {
    case SyntheticScheme::kOrthogonalBasis: return "orthogonal-basis";
    case SyntheticScheme::kHashedBagOfWords: return "hashed-bow";
    case SyntheticScheme::kHashedNgrams: return "hashed-ngram";
  }
  return "?";
}

// ---------------------------------------------------------------------------

SyntheticBackend::SyntheticBackend(std::map<std::string, SyntheticModel> models) : models_(std::move(models)) {
  for (const auto& [id, m] : models_) {
    if (m.dims == 0) throw ConfigError("synthetic model '" + id + "' needs dims > 0");
  }
}

std::string SyntheticBackend::describe() const {
  std::string out = "synthetic(";
  bool first = true;
  for (const auto& [id, m] : models_) {
    if (!first) out += ", ";
    first = false;
    out += id + "=" + std::string(to_string(m.scheme)) + "/" + std::to_string(m.dims);
  }
  return out + ")";
}

std::vector<std::vector<float>> SyntheticBackend::embed_batch(const std::string& model_id,
                                                              std::span<const std::string> texts) {
  auto it = models_.find(model_id);
  if (it == models_.end()) throw BackendUnavailable("synthetic backend has no model '" + model_id + "'");
  const auto& model = it->second;
  std::vector<std::vector<float>> out;
  out.reserve(texts.size());
  for (const auto& text : texts) {
    std::vector<float> v(model.dims, 0.0f);
    switch (model.scheme) {
      case SyntheticScheme::kOrthogonalBasis: {
        std::lock_guard lock(mu_);
        auto& index = basis_index_[model_id];
        auto [pos, _] = index.try_emplace(text, index.size());
        v[pos->second % model.dims] = 1.0f;
        break;
      }
      case SyntheticScheme::kHashedBagOfWords:
        for (const auto& tok : word_tokens(text)) add_feature(v, tok, 1.0f);
        break;
      case SyntheticScheme::kHashedNgrams: {
        const auto toks = word_tokens(text);
        std::string prev = "<s>";
        for (const auto& tok : toks) {
          float w = 1.0f;
          if (is_negation(tok)) w = 3.0f;
          else if (is_quantity(tok)) w = 2.0f;
          add_feature(v, tok, w);
          add_feature(v, prev + '\x1f' + tok, 1.5f);
          prev = tok;
        }
        add_feature(v, prev + "\x1f</s>", 1.5f);
        break;
      }
    }
    out.push_back(std::move(v));
  }
  return out;
}

// ---------------------------------------------------------------------------

FileBackend::FileBackend(std::map<std::string, std::filesystem::path> matrices,
                         std::shared_ptr<EmbeddingBackend> fallback)
    : matrices_(std::move(matrices)), fallback_(std::move(fallback)) {}

std::string FileBackend::describe() const {
  std::string out = "file(";
  bool first = true;
  for (const auto& [id, p] : matrices_) {
    if (!first) out += ", ";
    first = false;
    out += id + "=" + p.filename().string();
  }
  out += ")";
  if (fallback_) out += " -> " + fallback_->describe();
  return out;
}

std::vector<std::vector<float>> FileBackend::embed_batch(const std::string& model_id,
                                                         std::span<const std::string> texts) {
  if (!fallback_) {
    throw BackendUnavailable("file backend cannot embed new texts for '" + model_id +
                             "' (no fallback backend configured)");
  }
  return fallback_->embed_batch(model_id, texts);
}

std::optional<EmbeddingMatrix> FileBackend::embed_corpus(const Corpus& corpus, const std::string& model_id) {
  auto it = matrices_.find(model_id);
  if (it == matrices_.end()) return std::nullopt;
  std::error_code ec;
  if (!std::filesystem::is_regular_file(it->second, ec)) {
    throw BackendUnavailable("matrix file missing for '" + model_id + "': " + it->second.string());
  }
  auto m = load_matrix(it->second);
  if (!m.model_id().empty() && m.model_id() != model_id) {
    throw BackendUnavailable(it->second.string() + " holds model '" + m.model_id() + "', not '" +
                             model_id + "'");
  }
  if (!m.corpus_digest().empty() && m.corpus_digest() != corpus.source_digest()) {
    throw BackendUnavailable(it->second.string() + " was computed for a different corpus (digest " +
                             m.corpus_digest().substr(0, 12) + ")");
  }
  return m;
}

// ---------------------------------------------------------------------------

HttpBackend::HttpBackend(std::string base_url) : HttpBackend(std::move(base_url), Options{}) {}

HttpBackend::HttpBackend(std::string base_url, Options options)
    : base_url_(std::move(base_url)), options_(options) {}

std::string HttpBackend::describe() const { return "http(" + base_url_ + ")"; }

namespace {

httplib::Client make_client(const std::string& base_url, int timeout_ms) {
  httplib::Client cli(base_url);
  const auto sec = timeout_ms / 1000;
  const auto usec = (timeout_ms % 1000) * 1000;
  cli.set_connection_timeout(sec, usec);
  cli.set_read_timeout(sec, usec);
  cli.set_write_timeout(sec, usec);
  return cli;
}

}  // namespace

std::vector<HttpModelInfo> HttpBackend::models() {
  {
    std::lock_guard lock(mu_);
    if (models_) return *models_;
  }
  auto cli = make_client(base_url_, options_.timeout_ms);
  auto res = cli.Get("/models");
  if (!res) {
    throw BackendUnavailable(base_url_ + "/models: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw BackendUnavailable(base_url_ + "/models returned HTTP " + std::to_string(res->status));
  }
  std::vector<HttpModelInfo> out;
  try {
    const auto body = nlohmann::json::parse(res->body);
    for (const auto& m : body.at("models")) {
      out.push_back({m.at("id").get<std::string>(), m.at("dims").get<std::size_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw BackendUnavailable(base_url_ + "/models: malformed response: " + e.what());
  }
  std::lock_guard lock(mu_);
  models_ = out;
  return out;
}

bool HttpBackend::healthy() {
  auto cli = make_client(base_url_, options_.timeout_ms);
  auto res = cli.Get("/healthz");
  return res && res->status == 200;
}

std::size_t HttpBackend::dims_for(const std::string& model_id) {
  for (const auto& m : models()) {
    if (m.id == model_id) return m.dims;
  }
  throw BackendUnavailable(base_url_ + " does not serve model '" + model_id + "'");
}

std::vector<std::vector<float>> HttpBackend::embed_batch(const std::string& model_id,
                                                         std::span<const std::string> texts) {
  EmbeddingRequest request{model_id, {texts.begin(), texts.end()}};
  request.validate();
  const std::size_t dims = dims_for(model_id);

  auto cli = make_client(base_url_, options_.timeout_ms);
  const nlohmann::json body = {{"model", model_id}, {"texts", request.texts}};
  auto res = cli.Post("/embed", body.dump(), "application/json");
  if (!res) throw BackendUnavailable(base_url_ + "/embed: " + httplib::to_string(res.error()));
  if (res->status == 404) throw BackendUnavailable(base_url_ + " does not serve model '" + model_id + "'");
  if (res->status != 200) {
    throw BackendUnavailable(base_url_ + "/embed returned HTTP " + std::to_string(res->status) + ": " +
                             res->body.substr(0, 200));
  }
  std::vector<std::vector<float>> vectors;
  std::size_t reported = 0;
  try {
    const auto reply = nlohmann::json::parse(res->body);
    reported = reply.at("dims").get<std::size_t>();
    vectors = reply.at("vectors").get<std::vector<std::vector<float>>>();
  } catch (const nlohmann::json::exception& e) {
    throw BackendUnavailable(base_url_ + "/embed: malformed response: " + e.what());
  }
  if (reported != dims) {
    throw DimensionMismatch("/embed reported " + std::to_string(reported) + " dims for '" + model_id +
                            "', /models says " + std::to_string(dims));
  }
  if (vectors.size() != texts.size()) {
    throw DimensionMismatch("/embed returned " + std::to_string(vectors.size()) + " vectors for " +
                            std::to_string(texts.size()) + " texts");
  }
  for (const auto& v : vectors) {
    if (v.size() != dims) {
      throw DimensionMismatch("/embed returned a vector of " + std::to_string(v.size()) + " dims, expected " +
                              std::to_string(dims));
    }
  }
  return vectors;
}

// ---------------------------------------------------------------------------

CountingBackend::CountingBackend(std::shared_ptr<EmbeddingBackend> inner) : inner_(std::move(inner)) {}

std::vector<std::vector<float>> CountingBackend::embed_batch(const std::string& model_id,
                                                             std::span<const std::string> texts) {
  ++calls_;
  texts_ += texts.size();
  return inner_->embed_batch(model_id, texts);
}

std::optional<EmbeddingMatrix> CountingBackend::embed_corpus(const Corpus& corpus,
                                                             const std::string& model_id) {
  return inner_->embed_corpus(corpus, model_id);
}

}  // namespace erragree
