#include "erragree/run_config.hpp"

#include <set>

#include "erragree/digest.hpp"
#include "erragree/error.hpp"
#include "erragree/fileio.hpp"

namespace erragree {
namespace {

using nlohmann::json;

// Walks one JSON object, remembering which keys were consumed so leftovers
// can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string pointer) : j_(j), ptr_(std::move(pointer)) {
    if (!j_.is_object()) fail(ptr_.empty() ? "/" : ptr_, "expected an object");
  }

  [[noreturn]] static void fail(const std::string& ptr, const std::string& msg) {
    throw ConfigError(ptr + ": " + msg);
  }

  std::string at(const std::string& key) const { return ptr_ + "/" + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void str(const std::string& key, std::string& out) {
    if (auto v = find(key)) {
      if (!v->is_string()) fail(at(key), "expected a string");
      out = v->get<std::string>();
    }
  }

  void opt_str(const std::string& key, std::optional<std::string>& out) {
    if (auto v = find(key)) {
      if (v->is_null()) { out.reset(); return; }
      if (!v->is_string()) fail(at(key), "expected a string or null");
      out = v->get<std::string>();
    }
  }

  void path(const std::string& key, std::filesystem::path& out) {
    std::string s = out.generic_string();
    str(key, s);
    out = s;
  }

  void opt_path(const std::string& key, std::optional<std::filesystem::path>& out) {
    std::optional<std::string> s;
    if (out) s = out->generic_string();
    opt_str(key, s);
    if (s) out = *s; else out.reset();
  }

  void boolean(const std::string& key, bool& out) {
    if (auto v = find(key)) {
      if (!v->is_boolean()) fail(at(key), "expected a boolean");
      out = v->get<bool>();
    }
  }

  void number(const std::string& key, double& out) {
    if (auto v = find(key)) {
      if (!v->is_number()) fail(at(key), "expected a number");
      out = v->get<double>();
    }
  }

  template <typename Int>
  void integer(const std::string& key, Int& out, long long min_value) {
    if (auto v = find(key)) {
      if (!v->is_number_integer()) fail(at(key), "expected an integer");
      const auto x = v->get<long long>();
      if (x < min_value) fail(at(key), "must be >= " + std::to_string(min_value));
      out = static_cast<Int>(x);
    }
  }

  template <typename Int>
  void opt_integer(const std::string& key, std::optional<Int>& out, long long min_value) {
    if (auto v = find(key)) {
      if (v->is_null()) { out.reset(); return; }
      Int x{};
      integer(key, x, min_value);
      out = x;
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) fail(at(it.key()), "unknown key");
    }
  }

  const json& raw() const { return j_; }

 private:
  const json& j_;
  std::string ptr_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& ptr, const std::string& msg) {
  if (!ok) Section::fail(ptr, msg);
}

template <typename F>
void sub(Section& parent, const std::string& key, F&& body) {
  if (auto v = parent.find(key)) {
    Section s(*v, parent.at(key));
    body(s);
    s.finish();
  }
}

}  // namespace

SteerMode parse_steer_mode(std::string_view name) {
  if (name == "none") return SteerMode::kNone;
  if (name == "scrape") return SteerMode::kScrape;
  if (name == "generate") return SteerMode::kGenerate;
  throw ConfigError("unknown steer mode '" + std::string(name) + "'");
}

std::string_view to_string(SteerMode mode) {
  switch (mode) {
    case SteerMode::kNone: return "none";
    case SteerMode::kScrape: return "scrape";
    case SteerMode::kGenerate: return "generate";
  }
  return "none";
}

std::filesystem::path RunConfig::resolve_input(const std::filesystem::path& p) const {
  if (p.empty() || p.is_absolute()) return p;
  return (base_dir / p).lexically_normal();
}

RunConfig parse_run_config(const nlohmann::json& j, std::filesystem::path base_dir) {
  RunConfig c;
  c.base_dir = std::move(base_dir);
  Section root(j, "");

  sub(root, "corpus", [&](Section& s) {
    s.path("path", c.corpus.path);
    std::string fmt(to_string(c.corpus.format));
    s.str("format", fmt);
    try {
      c.corpus.format = parse_corpus_format(fmt);
    } catch (const Error&) {
      Section::fail(s.at("format"), "expected \"jsonl\" or \"plain-lines\"");
    }
    s.str("name", c.corpus.name);
  });
  root.str("gen_model_id", c.gen_model_id);
  root.str("ref_model_id", c.ref_model_id);
  require(!c.gen_model_id.empty(), "/gen_model_id", "must not be empty");
  require(!c.ref_model_id.empty(), "/ref_model_id", "must not be empty");

  sub(root, "miner", [&](Section& s) {
    s.integer("n", c.miner.n, 1);
    s.number("tau", c.miner.tau);
    require(c.miner.tau > 0.0 && c.miner.tau <= 1.0, s.at("tau"), "must be in (0, 1]");
    s.integer("block_size", c.miner.block_size, 1);
    s.integer("workers", c.miner.workers, 0);
  });

  sub(root, "categorizer", [&](Section& s) {
    s.str("model_id", c.categorizer.model_id);
    s.integer("sessions", c.categorizer.sessions, 1);
    s.number("temperature", c.categorizer.temperature);
    require(c.categorizer.temperature >= 0.0 && c.categorizer.temperature <= 2.0, s.at("temperature"),
            "must be in [0, 2]");
    s.integer("max_tokens", c.categorizer.max_tokens, 1);
    s.integer("max_chars", c.categorizer.max_chars, 1);
    s.opt_integer("max_pairs", c.categorizer.max_pairs, 1);
    s.boolean("include_corpus", c.categorizer.include_corpus);
  });

  sub(root, "generator", [&](Section& s) {
    s.str("model_id", c.generator.model_id);
    s.integer("k", c.generator.k, 1);
    s.integer("m_per_turn", c.generator.m_per_turn, 1);
    s.integer("turn_budget", c.generator.turn_budget, 0);
    s.number("temperature", c.generator.temperature);
    require(c.generator.temperature >= 0.0 && c.generator.temperature <= 2.0, s.at("temperature"),
            "must be in [0, 2]");
    s.integer("max_tokens", c.generator.max_tokens, 1);
  });

  sub(root, "evaluator", [&](Section& s) {
    s.number("t", c.evaluator.t);
    require(c.evaluator.t >= -1.0 && c.evaluator.t <= 1.0, s.at("t"), "must be in [-1, 1]");
    s.number("bin_width", c.evaluator.bin_width);
    require(c.evaluator.bin_width > 0.0 && c.evaluator.bin_width < 1.0, s.at("bin_width"), "must be in (0, 1)");
    s.number("target_ratio", c.evaluator.target_ratio);
    require(c.evaluator.target_ratio >= 0.0 && c.evaluator.target_ratio <= 1.0, s.at("target_ratio"),
            "must be in [0, 1]");
    s.str("relevance_model_id", c.evaluator.relevance_model_id);
    s.opt_path("labels", c.evaluator.labels);
  });

  sub(root, "steer", [&](Section& s) {
    s.opt_str("subdomain", c.steer.subdomain);
    std::string mode(to_string(c.steer.mode));
    s.str("mode", mode);
    try {
      c.steer.mode = parse_steer_mode(mode);
    } catch (const ConfigError&) {
      Section::fail(s.at("mode"), "expected \"none\", \"scrape\" or \"generate\"");
    }
    s.str("classifier_model", c.steer.classifier_model);
    s.integer("oversample_factor", c.steer.oversample_factor, 1);
    if (c.steer.subdomain && c.steer.subdomain->empty()) Section::fail(s.at("subdomain"), "must not be empty");
  });
  if (c.steer.mode != SteerMode::kNone && !c.steer.subdomain) {
    Section::fail("/steer/subdomain", "required when steer.mode is not \"none\"");
  }

  sub(root, "embedding_provider", [&](Section& s) {
    auto& e = c.embedding_provider;
    s.str("kind", e.kind);
    require(e.kind == "synthetic" || e.kind == "file" || e.kind == "http", s.at("kind"),
            "expected \"synthetic\", \"file\" or \"http\"");
    sub(s, "synthetic", [&](Section& models) {
      for (auto it = models.raw().begin(); it != models.raw().end(); ++it) {
        const std::string id = it.key();
        Section m(*models.find(id), models.at(id));
        std::string scheme(to_string(SyntheticModel{}.scheme));
        SyntheticModel model;
        m.str("scheme", scheme);
        try {
          model.scheme = parse_synthetic_scheme(scheme);
        } catch (const Error&) {
          Section::fail(m.at("scheme"), "unknown synthetic scheme '" + scheme + "'");
        }
        m.integer("dims", model.dims, 1);
        m.finish();
        e.synthetic[id] = model;
      }
    });
    sub(s, "matrices", [&](Section& mats) {
      for (auto it = mats.raw().begin(); it != mats.raw().end(); ++it) {
        std::filesystem::path p;
        mats.path(it.key(), p);
        e.matrices[it.key()] = p;
      }
    });
    s.str("base_url", e.base_url);
    s.integer("batch_size", e.batch_size, 1);
    s.integer("max_parallel", e.max_parallel, 1);
    s.integer("timeout_ms", e.timeout_ms, 1);
    s.str("fallback", e.fallback);
    require(e.fallback == "none" || e.fallback == "synthetic" || e.fallback == "http", s.at("fallback"),
            "expected \"none\", \"synthetic\" or \"http\"");
  });
  {
    auto& e = c.embedding_provider;
    const bool wants_synthetic = e.kind == "synthetic" || e.fallback == "synthetic";
    if (wants_synthetic && e.synthetic.empty()) {
      // Bag-of-words on the generation side mimics an order-blind encoder;
      // the reference side sees word order and negation.
      e.synthetic[c.gen_model_id] = {SyntheticScheme::kHashedBagOfWords, 256};
      e.synthetic[c.ref_model_id] = {SyntheticScheme::kHashedNgrams, 256};
    }
    if (e.kind == "http" || e.fallback == "http") {
      require(!e.base_url.empty(), "/embedding_provider/base_url", "required for the http provider");
    }
  }

  sub(root, "llm_provider", [&](Section& s) {
    auto& l = c.llm_provider;
    s.str("kind", l.kind);
    require(l.kind == "mock" || l.kind == "replay" || l.kind == "openai" || l.kind == "anthropic", s.at("kind"),
            "expected \"mock\", \"replay\", \"openai\" or \"anthropic\"");
    s.opt_path("script", l.script);
    s.opt_path("replay_from", l.replay_from);
    s.str("base_url", l.base_url);
    s.str("auth_env", l.auth_env);
    sub(s, "model_map", [&](Section& mm) {
      for (auto it = mm.raw().begin(); it != mm.raw().end(); ++it) {
        std::string v;
        mm.str(it.key(), v);
        l.model_map[it.key()] = v;
      }
    });
    s.integer("max_in_flight", l.max_in_flight, 1);
    s.integer("max_attempts", l.max_attempts, 1);
    s.integer("base_delay_ms", l.base_delay_ms, 0);
    s.integer("timeout_ms", l.timeout_ms, 1);
  });
  {
    auto& l = c.llm_provider;
    if (l.auth_env.empty()) {
      if (l.kind == "openai") l.auth_env = "OPENAI_API_KEY";
      if (l.kind == "anthropic") l.auth_env = "ANTHROPIC_API_KEY";
    }
    if (l.base_url.empty()) {
      if (l.kind == "openai") l.base_url = "https://api.openai.com";
      if (l.kind == "anthropic") l.base_url = "https://api.anthropic.com";
    }
    if (l.kind == "replay") require(l.replay_from.has_value(), "/llm_provider/replay_from", "required for replay");
  }

  sub(root, "cache", [&](Section& s) {
    s.boolean("enabled", c.cache.enabled);
    s.path("embedding_path", c.cache.embedding_path);
    s.path("llm_path", c.cache.llm_path);
    s.path("replay_log", c.cache.replay_log);
  });
  root.opt_path("templates_dir", c.templates_dir);
  if (auto v = root.find("$schema"); v && !v->is_string()) Section::fail("/$schema", "expected a string");
  root.finish();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const IoError& e) {
    throw ConfigError(std::string("cannot read config: ") + e.what());
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
  auto base = path.parent_path();
  if (base.empty()) base = ".";
  return parse_run_config(j, base);
}

nlohmann::json to_json(const RunConfig& c) {
  auto opt_path = [](const std::optional<std::filesystem::path>& p) {
    return p ? json(p->generic_string()) : json(nullptr);
  };
  json synthetic = json::object();
  for (const auto& [id, m] : c.embedding_provider.synthetic) {
    synthetic[id] = {{"scheme", std::string(to_string(m.scheme))}, {"dims", m.dims}};
  }
  json matrices = json::object();
  for (const auto& [id, p] : c.embedding_provider.matrices) matrices[id] = p.generic_string();

  return {
      {"corpus",
       {{"path", c.corpus.path.generic_string()},
        {"format", std::string(to_string(c.corpus.format))},
        {"name", c.corpus.name}}},
      {"gen_model_id", c.gen_model_id},
      {"ref_model_id", c.ref_model_id},
      {"miner",
       {{"n", c.miner.n}, {"tau", c.miner.tau}, {"block_size", c.miner.block_size}, {"workers", c.miner.workers}}},
      {"categorizer",
       {{"model_id", c.categorizer.model_id},
        {"sessions", c.categorizer.sessions},
        {"temperature", c.categorizer.temperature},
        {"max_tokens", c.categorizer.max_tokens},
        {"max_chars", c.categorizer.max_chars},
        {"max_pairs", c.categorizer.max_pairs ? json(*c.categorizer.max_pairs) : json(nullptr)},
        {"include_corpus", c.categorizer.include_corpus}}},
      {"generator",
       {{"model_id", c.generator.model_id},
        {"k", c.generator.k},
        {"m_per_turn", c.generator.m_per_turn},
        {"turn_budget", c.generator.turn_budget},
        {"temperature", c.generator.temperature},
        {"max_tokens", c.generator.max_tokens}}},
      {"evaluator",
       {{"t", c.evaluator.t},
        {"bin_width", c.evaluator.bin_width},
        {"target_ratio", c.evaluator.target_ratio},
        {"relevance_model_id", c.evaluator.relevance_model_id},
        {"labels", opt_path(c.evaluator.labels)}}},
      {"steer",
       {{"subdomain", c.steer.subdomain ? json(*c.steer.subdomain) : json(nullptr)},
        {"mode", std::string(to_string(c.steer.mode))},
        {"classifier_model", c.steer.classifier_model},
        {"oversample_factor", c.steer.oversample_factor}}},
      {"embedding_provider",
       {{"kind", c.embedding_provider.kind},
        {"synthetic", synthetic},
        {"matrices", matrices},
        {"base_url", c.embedding_provider.base_url},
        {"batch_size", c.embedding_provider.batch_size},
        {"max_parallel", c.embedding_provider.max_parallel},
        {"timeout_ms", c.embedding_provider.timeout_ms},
        {"fallback", c.embedding_provider.fallback}}},
      {"llm_provider",
       {{"kind", c.llm_provider.kind},
        {"script", opt_path(c.llm_provider.script)},
        {"replay_from", opt_path(c.llm_provider.replay_from)},
        {"base_url", c.llm_provider.base_url},
        {"auth_env", c.llm_provider.auth_env},
        {"model_map", c.llm_provider.model_map},
        {"max_in_flight", c.llm_provider.max_in_flight},
        {"max_attempts", c.llm_provider.max_attempts},
        {"base_delay_ms", c.llm_provider.base_delay_ms},
        {"timeout_ms", c.llm_provider.timeout_ms}}},
      {"cache",
       {{"enabled", c.cache.enabled},
        {"embedding_path", c.cache.embedding_path.generic_string()},
        {"llm_path", c.cache.llm_path.generic_string()},
        {"replay_log", c.cache.replay_log.generic_string()}}},
      {"templates_dir", opt_path(c.templates_dir)},
  };
}

std::string json_digest(const nlohmann::json& section) { return sha256_hex(section.dump()); }

}  // namespace erragree
