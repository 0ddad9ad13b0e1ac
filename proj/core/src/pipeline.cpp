#include "erragree/pipeline.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <future>
#include <map>

#include "erragree/categorizer.hpp"
#include "erragree/corpus.hpp"
#include "erragree/digest.hpp"
#include "erragree/error.hpp"
#include "erragree/evaluator.hpp"
#include "erragree/fileio.hpp"
#include "erragree/generator.hpp"
#include "erragree/pair_miner.hpp"
#include "erragree/prompts.hpp"

namespace erragree {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

class CountingLlm final : public LlmProvider {
 public:
  explicit CountingLlm(std::shared_ptr<LlmProvider> inner) : inner_(std::move(inner)) {}
  std::string describe() const override { return inner_->describe(); }
  std::string complete(const std::string& model_id, const SessionParams& params,
                       std::span<const ChatMessage> messages) override {
    ++calls_;
    return inner_->complete(model_id, params, messages);
  }
  std::size_t calls() const noexcept { return calls_.load(); }

 private:
  std::shared_ptr<LlmProvider> inner_;
  std::atomic<std::size_t> calls_{0};
};

constexpr const char* kTemplateNames[] = {"categorize_memorize", "categorize_question",
                                          "categorize_question_nocorpus", "generate",
                                          "steer_suffix", "classify_pair", "relevance"};

std::optional<Stage> parent_of(Stage s) {
  switch (s) {
    case Stage::kCategorize: return Stage::kScrape;
    case Stage::kGenerate: return Stage::kCategorize;
    case Stage::kEvaluate: return Stage::kGenerate;
    default: return std::nullopt;
  }
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct Output {
  std::string name;  // file name inside the out dir
  std::string bytes;
  std::string latest;  // optional stable-name copy, e.g. report.json
};

struct Produced {
  Output primary;
  std::vector<Output> extras;
  std::vector<std::string> warnings;
};

json output_record(const Output& o, const std::string& digest) {
  json rec = {{"artifact", o.name}, {"digest", digest}};
  if (!o.latest.empty()) rec["latest"] = o.latest;
  return rec;
}

}  // namespace

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::kScrape: return "scrape";
    case Stage::kCategorize: return "categorize";
    case Stage::kGenerate: return "generate";
    case Stage::kEvaluate: return "evaluate";
    case Stage::kCalibrate: return "calibrate";
  }
  return "unknown";
}

struct Pipeline::Impl {
  Impl(const RunConfig& c, RunOptions o, json& m) : cfg(c), opts(std::move(o)), manifest(m) {
    lock = std::make_unique<DirectoryLock>(opts.out_dir);
    templates = cfg.templates_dir ? PromptTemplates::from_directory(cfg.resolve_input(*cfg.templates_dir))
                                  : PromptTemplates::builtin();
    const auto path = opts.out_dir / "manifest.json";
    if (fs::exists(path)) {
      try {
        manifest = json::parse(read_file(path));
      } catch (const json::exception& e) {
        throw FormatError("unreadable manifest " + path.string() + ": " + e.what());
      }
    }
    if (!manifest.is_object()) manifest = json::object();
    if (!manifest.contains("stages")) manifest["stages"] = json::object();
  }

  const RunConfig& cfg;
  RunOptions opts;
  json& manifest;
  std::unique_ptr<DirectoryLock> lock;
  PromptTemplates templates;

  std::shared_ptr<CountingBackend> emb_backend;
  std::unique_ptr<EmbeddingProvider> embeddings;
  std::shared_ptr<CountingLlm> llm_provider;
  std::shared_ptr<LlmCache> llm_cache;
  std::optional<Corpus> corpus;

  fs::path out_path(const fs::path& p) const { return p.is_absolute() ? p : opts.out_dir / p; }

  // --- providers -----------------------------------------------------------

  std::shared_ptr<EmbeddingBackend> make_synthetic() const {
    return std::make_shared<SyntheticBackend>(cfg.embedding_provider.synthetic);
  }

  std::shared_ptr<EmbeddingBackend> make_http() const {
    return std::make_shared<HttpBackend>(cfg.embedding_provider.base_url,
                                         HttpBackend::Options{cfg.embedding_provider.timeout_ms});
  }

  EmbeddingProvider& embedding_provider() {
    if (embeddings) return *embeddings;
    std::shared_ptr<EmbeddingBackend> backend = opts.embedding_backend;
    const auto& e = cfg.embedding_provider;
    if (!backend) {
      if (e.kind == "synthetic") {
        backend = make_synthetic();
      } else if (e.kind == "http") {
        backend = make_http();
      } else {
        std::map<std::string, fs::path> mats;
        for (const auto& [id, p] : e.matrices) mats[id] = cfg.resolve_input(p);
        std::shared_ptr<EmbeddingBackend> fallback;
        if (e.fallback == "synthetic") fallback = make_synthetic();
        if (e.fallback == "http") fallback = make_http();
        backend = std::make_shared<FileBackend>(std::move(mats), fallback);
      }
    }
    emb_backend = std::make_shared<CountingBackend>(backend);
    auto cache = cfg.cache.enabled ? std::make_shared<EmbeddingCache>(out_path(cfg.cache.embedding_path))
                                   : std::make_shared<EmbeddingCache>();
    embeddings = std::make_unique<EmbeddingProvider>(emb_backend, cache,
                                                     ProviderOptions{e.batch_size, e.max_parallel});
    return *embeddings;
  }

  void ensure_llm() {
    if (llm_provider) return;
    std::shared_ptr<LlmProvider> inner = opts.llm_provider;
    const auto& l = cfg.llm_provider;
    if (!inner) {
      if (l.kind == "mock") {
        if (!l.script) throw ConfigError("/llm_provider/script: required for the mock provider");
        inner = std::make_shared<ScriptedProvider>(ScriptedProvider::from_file(cfg.resolve_input(*l.script)));
      } else if (l.kind == "replay") {
        inner = std::make_shared<ReplayProvider>(cfg.resolve_input(*l.replay_from));
      } else {
        const char* key = std::getenv(l.auth_env.c_str());
        if (!key || !*key) {
          throw ConfigError("/llm_provider/auth_env: environment variable " + l.auth_env + " is not set");
        }
        HttpChatOptions http{l.base_url, key, l.model_map, l.timeout_ms};
        if (l.kind == "openai") inner = std::make_shared<OpenAiChatProvider>(std::move(http));
        else inner = std::make_shared<AnthropicProvider>(std::move(http));
      }
    }
    llm_provider = std::make_shared<CountingLlm>(inner);
    llm_cache = cfg.cache.enabled ? std::make_shared<LlmCache>(out_path(cfg.cache.llm_path))
                                  : std::make_shared<LlmCache>();
  }

  std::unique_ptr<LlmGateway> gateway(Stage stage) {
    ensure_llm();
    GatewayOptions g;
    g.caching = cfg.cache.enabled;
    g.retry.max_attempts = cfg.llm_provider.max_attempts;
    g.retry.base_delay = std::chrono::milliseconds(cfg.llm_provider.base_delay_ms);
    g.max_in_flight = cfg.llm_provider.max_in_flight;
    g.replay_log = out_path(cfg.cache.replay_log);
    g.session_prefix = std::string(to_string(stage));
    return std::make_unique<LlmGateway>(llm_provider, llm_cache, std::move(g));
  }

  const Corpus& load() {
    if (!corpus) {
      if (cfg.corpus.path.empty()) throw ConfigError("/corpus/path: required");
      corpus = load_corpus(cfg.resolve_input(cfg.corpus.path), cfg.corpus.format);
      if (!cfg.corpus.name.empty()) corpus = Corpus(cfg.corpus.name, corpus->source_digest(), corpus->sentences());
      manifest["corpus"] = corpus->manifest();
    }
    return *corpus;
  }

  // --- identities that feed the stage keys ---------------------------------

  json llm_identity() const {
    if (opts.llm_provider) return {{"override", opts.llm_provider->describe()}};
    const auto& l = cfg.llm_provider;
    json id = {{"kind", l.kind}, {"model_map", l.model_map}};
    if (l.kind == "mock" && l.script) id["script"] = sha256_file(cfg.resolve_input(*l.script));
    if (l.kind == "replay" && l.replay_from) id["replay"] = sha256_file(cfg.resolve_input(*l.replay_from));
    if (l.kind == "openai" || l.kind == "anthropic") id["base_url"] = l.base_url;
    return id;
  }

  json embedding_identity() const {
    if (opts.embedding_backend) return {{"override", opts.embedding_backend->describe()}};
    const auto full = to_json(cfg)["embedding_provider"];
    json id = {{"kind", full["kind"]}, {"synthetic", full["synthetic"]}, {"fallback", full["fallback"]}};
    if (cfg.embedding_provider.kind == "file") {
      json mats = json::object();
      for (const auto& [mid, p] : cfg.embedding_provider.matrices) mats[mid] = sha256_file(cfg.resolve_input(p));
      id["matrices"] = mats;
    }
    if (cfg.embedding_provider.kind == "http" || cfg.embedding_provider.fallback == "http") {
      id["base_url"] = cfg.embedding_provider.base_url;
    }
    return id;
  }

  std::string templates_digest() const {
    std::string all;
    for (const char* name : kTemplateNames) {
      all += name;
      all.push_back('\0');
      all += templates.get(name);
      all.push_back('\0');
    }
    return sha256_hex(all);
  }

  bool relevance_enabled() const { return cfg.steer.mode != SteerMode::kNone && cfg.steer.subdomain; }

  std::optional<std::string> generation_steer() const {
    if (cfg.steer.mode == SteerMode::kGenerate) return cfg.steer.subdomain;
    return std::nullopt;
  }

  // --- staleness -------------------------------------------------------------

  json* record(Stage s) {
    auto& stages = manifest["stages"];
    const std::string name(to_string(s));
    return stages.contains(name) ? &stages[name] : nullptr;
  }

  bool artifact_intact(const json& rec) const {
    const auto path = opts.out_dir / rec.at("artifact").get<std::string>();
    return fs::exists(path) && sha256_file(path) == rec.at("digest").get<std::string>();
  }

  // Key material for running `s` now. Validates the parent chain.
  json stage_inputs(Stage s, const std::optional<fs::path>& labels = std::nullopt) {
    const auto full = to_json(cfg);
    json in = {{"stage", std::string(to_string(s))}};
    if (auto p = parent_of(s)) {
      const auto& rec = require_current(*p);
      in["parent"] = {{"key", rec.at("key")}, {"digest", rec.at("digest")}};
    }
    switch (s) {
      case Stage::kScrape: {
        const auto& c = load();
        in["corpus"] = {{"digest", c.source_digest()},
                        {"format", std::string(to_string(cfg.corpus.format))},
                        {"name", c.name()}};
        in["models"] = {cfg.gen_model_id, cfg.ref_model_id};
        in["miner"] = {{"n", cfg.miner.n}, {"tau", cfg.miner.tau}};
        in["embedding"] = embedding_identity();
        if (cfg.steer.mode == SteerMode::kScrape) {
          in["steer"] = {{"subdomain", *cfg.steer.subdomain},
                         {"classifier_model", cfg.steer.classifier_model},
                         {"oversample_factor", cfg.steer.oversample_factor},
                         {"llm", llm_identity()},
                         {"templates", templates_digest()}};
        }
        break;
      }
      case Stage::kCategorize:
        in["categorizer"] = full["categorizer"];
        in["llm"] = llm_identity();
        in["templates"] = templates_digest();
        break;
      case Stage::kGenerate:
        in["generator"] = full["generator"];
        in["steer"] = generation_steer() ? json(*generation_steer()) : json(nullptr);
        in["llm"] = llm_identity();
        in["templates"] = templates_digest();
        break;
      case Stage::kEvaluate:
        in["t"] = cfg.evaluator.t;
        in["gen_model_id"] = cfg.gen_model_id;
        in["embedding"] = embedding_identity();
        if (relevance_enabled()) {
          in["relevance"] = {{"subdomain", *cfg.steer.subdomain},
                             {"mode", std::string(to_string(cfg.steer.mode))},
                             {"model", cfg.evaluator.relevance_model_id},
                             {"llm", llm_identity()},
                             {"templates", templates_digest()}};
        }
        break;
      case Stage::kCalibrate:
        in["labels"] = labels ? json(sha256_file(*labels)) : json(nullptr);
        in["bin_width"] = cfg.evaluator.bin_width;
        in["target_ratio"] = cfg.evaluator.target_ratio;
        in["gen_model_id"] = cfg.gen_model_id;
        in["embedding"] = embedding_identity();
        break;
    }
    return in;
  }

  const json& require_current(Stage s) {
    const std::string name(to_string(s));
    const json* rec = record(s);
    if (!rec) {
      throw StaleArtifact("no " + name + " artifact in " + opts.out_dir.string() + "; run `erragree " + name +
                          "` first");
    }
    const auto expected = sha256_hex(stage_inputs(s).dump());
    if (rec->at("key").get<std::string>() != expected) {
      throw StaleArtifact(name + " artifact is out of date with the current config or inputs; rerun `erragree " +
                          name + "`");
    }
    if (!artifact_intact(*rec)) {
      throw StaleArtifact(name + " artifact " + rec->at("artifact").get<std::string>() +
                          " is missing or does not match its manifest digest; rerun `erragree " + name + "`");
    }
    return *record(s);
  }

  json read_artifact_json(Stage s) {
    const auto& rec = require_current(s);
    return json::parse(read_file(opts.out_dir / rec.at("artifact").get<std::string>()));
  }

  std::string read_artifact_text(Stage s) {
    const auto& rec = require_current(s);
    return read_file(opts.out_dir / rec.at("artifact").get<std::string>());
  }

  void save_manifest() {
    manifest["config_digest"] = json_digest(to_json(cfg));
    json providers = json::object();
    if (emb_backend) providers["embedding"] = emb_backend->describe();
    if (llm_provider) providers["llm"] = llm_provider->describe();
    if (!providers.empty()) manifest["providers"].update(providers);
    write_file_atomic(opts.out_dir / "manifest.json", manifest.dump(2) + "\n");
  }

  void refresh_latest(const json& rec) const {
    if (!rec.contains("latest")) return;
    const auto latest = opts.out_dir / rec.at("latest").get<std::string>();
    if (!fs::exists(latest) || sha256_file(latest) != rec.at("digest").get<std::string>()) {
      write_file_atomic(latest, read_file(opts.out_dir / rec.at("artifact").get<std::string>()));
    }
  }

  template <typename Compute>
  StageResult run(Stage s, Compute&& compute, const std::optional<fs::path>& labels = std::nullopt) {
    const std::string name(to_string(s));
    try {
      const auto t0 = std::chrono::steady_clock::now();
      const auto inputs = stage_inputs(s, labels);
      const auto key = sha256_hex(inputs.dump());
      StageResult result;
      result.stage = s;

      if (const json* rec = record(s); rec && !opts.force && rec->at("key") == key && artifact_intact(*rec)) {
        bool extras_ok = true;
        for (const auto& x : rec->value("extras", json::array())) extras_ok &= artifact_intact(x);
        if (extras_ok) {
          result.artifact = opts.out_dir / rec->at("artifact").get<std::string>();
          result.digest = rec->at("digest").get<std::string>();
          result.reused = true;
          result.warnings = rec->value("warnings", std::vector<std::string>{});
          refresh_latest(*rec);
          for (const auto& x : rec->value("extras", json::array())) refresh_latest(x);
          return result;
        }
      }

      Produced out = compute(key.substr(0, 12));
      auto emit = [&](const Output& o) {
        write_file_atomic(opts.out_dir / o.name, o.bytes);
        if (!o.latest.empty()) write_file_atomic(opts.out_dir / o.latest, o.bytes);
        return output_record(o, sha256_hex(o.bytes));
      };
      json rec = emit(out.primary);
      json extras = json::array();
      for (const auto& x : out.extras) extras.push_back(emit(x));

      result.artifact = opts.out_dir / out.primary.name;
      result.digest = sha256_hex(out.primary.bytes);
      result.warnings = out.warnings;
      const auto wall = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0);
      rec["key"] = key;
      rec["inputs"] = inputs;
      rec["extras"] = extras;
      rec["wall_ms"] = wall.count();
      rec["finished_at"] = utc_now();
      rec["warnings"] = out.warnings;
      manifest["stages"][name] = std::move(rec);
      save_manifest();
      return result;
    } catch (const Error& e) {
      const std::string prefix = name + ": ";
      if (std::string_view(e.what()).substr(0, prefix.size()) == prefix) throw;
      rethrow_with_context(e, name);
    }
  }

  // --- stages ----------------------------------------------------------------

  Produced do_scrape(const std::string& key12) {
    const auto& c = load();
    auto& provider = embedding_provider();
    const auto gen = provider.embed_corpus(c, cfg.gen_model_id);
    const auto ref = provider.embed_corpus(c, cfg.ref_model_id);

    MinerConfig mc;
    mc.n = cfg.miner.n;
    mc.tau = cfg.miner.tau;
    mc.block_size = cfg.miner.block_size;
    mc.workers = cfg.miner.workers;
    std::vector<CandidatePair> pairs;
    if (cfg.steer.mode == SteerMode::kScrape) {
      mc.steer = SteerSpec{*cfg.steer.subdomain, cfg.steer.classifier_model, cfg.steer.oversample_factor};
      auto llm = gateway(Stage::kScrape);
      SteerContext ctx{*llm, c, templates};
      pairs = mine_pairs(gen, ref, mc, &ctx);
    } else {
      pairs = mine_pairs(gen, ref, mc);
    }

    Produced p;
    if (pairs.size() < mc.n) {
      p.warnings.push_back("scrape: found " + std::to_string(pairs.size()) + " of n=" + std::to_string(mc.n) +
                           " pairs");
    }
    json doc = {{"corpus", c.manifest()},
                {"gen_model_id", cfg.gen_model_id},
                {"ref_model_id", cfg.ref_model_id},
                {"tau", mc.tau},
                {"steer", mc.steer ? json(mc.steer->subdomain) : json(nullptr)},
                {"pairs", pairs_to_json(pairs, c)}};
    p.primary = {std::string("pairs-") + key12 + ".json", doc.dump(2) + "\n", "pairs.json"};
    return p;
  }

  Produced do_categorize(const std::string& key12) {
    const auto doc = read_artifact_json(Stage::kScrape);
    const auto pairs = pairs_from_json(doc.at("pairs"));

    CategorizerOptions options;
    options.model_id = cfg.categorizer.model_id;
    options.sessions = cfg.categorizer.sessions;
    options.params.temperature = cfg.categorizer.temperature;
    options.params.max_tokens = cfg.categorizer.max_tokens;
    options.budget.max_chars = cfg.categorizer.max_chars;
    options.budget.max_pairs = cfg.categorizer.max_pairs;
    options.include_corpus = cfg.categorizer.include_corpus;

    auto llm = gateway(Stage::kCategorize);
    const auto result = erragree::categorize(pairs, *llm, options, templates);

    Produced p;
    json sessions = json::array();
    for (const auto& s : result.sessions) {
      sessions.push_back({{"session_id", s.session_id},
                          {"sample", s.sample},
                          {"parsed", s.parsed},
                          {"error", s.error ? json(*s.error) : json(nullptr)}});
      if (s.error) p.warnings.push_back("categorize: session " + s.session_id + ": " + *s.error);
    }
    if (options.include_corpus && result.included_pairs < pairs.size()) {
      p.warnings.push_back("categorize: prompt budget kept " + std::to_string(result.included_pairs) + " of " +
                           std::to_string(pairs.size()) + " pairs");
    }
    json out = {{"model_id", options.model_id},
                {"included_pairs", result.included_pairs},
                {"sessions", sessions},
                {"failures", failures_to_json(result.failures)}};
    p.primary = {std::string("failures-") + key12 + ".json", out.dump(2) + "\n", "failures.json"};
    return p;
  }

  Produced do_generate(const std::string& key12) {
    const auto failures = failures_from_json(read_artifact_json(Stage::kCategorize).at("failures"));
    if (failures.empty()) throw NoFailuresParsed("failures artifact is empty");

    GeneratorOptions options;
    options.model_id = cfg.generator.model_id;
    options.k = cfg.generator.k;
    options.m_per_turn = cfg.generator.m_per_turn;
    options.turn_budget = cfg.generator.turn_budget;
    options.params.temperature = cfg.generator.temperature;
    options.params.max_tokens = cfg.generator.max_tokens;
    const auto steer = generation_steer();

    auto llm = gateway(Stage::kGenerate);
    std::vector<Session> sessions;
    for (std::size_t i = 0; i < failures.size(); ++i) sessions.push_back(llm->new_session(options.model_id, options.params));
    std::vector<std::future<GenerationResult>> jobs;
    for (std::size_t i = 0; i < failures.size(); ++i) {
      jobs.push_back(std::async(std::launch::async, [&, i] {
        return generate_instances(failures[i], *llm, sessions[i], options, steer, templates);
      }));
    }
    std::vector<GenerationResult> results;
    std::exception_ptr first_error;
    for (auto& j : jobs) {
      try {
        results.push_back(j.get());
      } catch (...) {
        if (!first_error) first_error = std::current_exception();
      }
    }
    if (first_error) std::rethrow_exception(first_error);

    Produced p;
    std::string rows, rejects;
    for (std::size_t i = 0; i < failures.size(); ++i) {
      const auto& r = results[i];
      rows += generated_to_jsonl(r.pairs);
      for (const auto& rej : r.rejects) {
        rejects += json{{"failure_key", failures[i].canonical_key}, {"line", rej.line}, {"reason", rej.reason}}.dump();
        rejects.push_back('\n');
      }
      if (r.insufficient) {
        p.warnings.push_back("generate: " + failures[i].name + ": only " + std::to_string(r.pairs.size()) +
                             " of k=" + std::to_string(options.k) + " pairs after " + std::to_string(r.turns) +
                             " turns");
      }
    }
    p.primary = {std::string("generated-") + key12 + ".jsonl", rows, "generated.jsonl"};
    p.extras.push_back({std::string("generated-") + key12 + ".rejects.jsonl", rejects, ""});
    return p;
  }

  Produced do_evaluate(const std::string& key12) {
    auto generated = generated_from_jsonl(read_artifact_text(Stage::kGenerate));
    const auto fdoc = read_artifact_json(Stage::kCategorize);
    const auto failures = failures_from_json(fdoc.at("failures"));

    // Group in failure-list order; stray keys follow in first-seen order.
    std::vector<std::string> order;
    std::map<std::string, std::string> names;
    for (const auto& f : failures) {
      order.push_back(f.canonical_key);
      names[f.canonical_key] = f.name;
    }
    std::map<std::string, std::vector<GeneratedPair>> groups;
    for (auto& g : generated) {
      if (!names.count(g.failure_key)) {
        names[g.failure_key] = g.failure_key;
        order.push_back(g.failure_key);
      }
      groups[g.failure_key].push_back(std::move(g));
    }

    Produced p;
    auto& provider = embedding_provider();
    std::unique_ptr<LlmGateway> llm;
    if (relevance_enabled()) llm = gateway(Stage::kEvaluate);
    std::vector<FailureEvaluation> evals;
    std::string evaluated;
    for (const auto& key : order) {
      auto it = groups.find(key);
      if (it == groups.end() || it->second.empty()) {
        p.warnings.push_back("evaluate: no generated pairs for '" + names[key] + "'");
        continue;
      }
      auto e = success_rate(it->second, provider, cfg.gen_model_id, cfg.evaluator.t);
      e.name = names[key];
      if (llm) {
        const auto r = relevance_rate(it->second, *cfg.steer.subdomain, *llm, cfg.evaluator.relevance_model_id,
                                      templates);
        e.relevance_rate = r.rate;
        if (r.unparseable) {
          p.warnings.push_back("evaluate: " + std::to_string(r.unparseable) + " unparseable relevance verdicts for '" +
                               e.name + "'");
        }
      }
      evaluated += generated_to_jsonl(it->second);
      evals.push_back(std::move(e));
    }

    const auto& c = manifest.contains("corpus") ? manifest["corpus"] : json(nullptr);
    json meta = {{"corpus", c},
                 {"gen_model_id", cfg.gen_model_id},
                 {"ref_model_id", cfg.ref_model_id},
                 {"categorizer_model_id", cfg.categorizer.model_id},
                 {"generator_model_id", cfg.generator.model_id},
                 {"k", cfg.generator.k},
                 {"threshold_t", cfg.evaluator.t},
                 {"steer_mode", std::string(to_string(cfg.steer.mode))},
                 {"subdomain", cfg.steer.subdomain ? json(*cfg.steer.subdomain) : json(nullptr)}};
    const auto report = build_report(std::move(evals), meta);
    p.primary = {std::string("report-") + key12 + ".json", report.to_json_text(), "report.json"};
    p.extras.push_back({std::string("report-") + key12 + ".md", report.to_markdown(), "report.md"});
    p.extras.push_back({std::string("evaluated-") + key12 + ".jsonl", evaluated, ""});
    return p;
  }

  Produced do_calibrate(const std::string& key12, const fs::path& labels) {
    auto labeled = load_labeled_pairs(labels);
    fill_missing_sims(labeled, embedding_provider(), cfg.gen_model_id);
    const auto h = calibrate_threshold(labeled, cfg.evaluator.bin_width, cfg.evaluator.target_ratio);
    Produced p;
    if (!h.recommended_t) p.warnings.push_back("calibrate: no bin sustains the target failure ratio");
    p.primary = {std::string("calibration-") + key12 + ".json", to_json(h).dump(2) + "\n", "calibration.json"};
    return p;
  }
};

Pipeline::Pipeline(RunConfig config, RunOptions options) : config_(std::move(config)) {
  impl_ = std::make_unique<Impl>(config_, std::move(options), manifest_);
}

Pipeline::~Pipeline() = default;

std::filesystem::path Pipeline::manifest_path() const { return impl_->opts.out_dir / "manifest.json"; }

StageResult Pipeline::scrape() {
  return impl_->run(Stage::kScrape, [&](const std::string& k) { return impl_->do_scrape(k); });
}

StageResult Pipeline::categorize() {
  return impl_->run(Stage::kCategorize, [&](const std::string& k) { return impl_->do_categorize(k); });
}

StageResult Pipeline::generate() {
  return impl_->run(Stage::kGenerate, [&](const std::string& k) { return impl_->do_generate(k); });
}

StageResult Pipeline::evaluate() {
  return impl_->run(Stage::kEvaluate, [&](const std::string& k) { return impl_->do_evaluate(k); });
}

StageResult Pipeline::calibrate(const std::optional<std::filesystem::path>& labels) {
  std::filesystem::path path;
  if (labels) path = *labels;
  else if (config_.evaluator.labels) path = config_.resolve_input(*config_.evaluator.labels);
  else throw ConfigError("/evaluator/labels: no labeled pairs given (set it or pass --labels)");
  return impl_->run(
      Stage::kCalibrate, [&](const std::string& k) { return impl_->do_calibrate(k, path); }, path);
}

std::vector<StageResult> Pipeline::run_all() {
  std::vector<StageResult> out;
  out.push_back(scrape());
  out.push_back(categorize());
  out.push_back(generate());
  out.push_back(evaluate());
  return out;
}

std::size_t Pipeline::embedding_backend_calls() const {
  return impl_->emb_backend ? impl_->emb_backend->calls() : 0;
}

std::size_t Pipeline::llm_provider_calls() const {
  return impl_->llm_provider ? impl_->llm_provider->calls() : 0;
}

int exit_code_for(const std::exception& e) {
  const auto* err = dynamic_cast<const Error*>(&e);
  if (!err) return kExitFailure;
  const auto& k = err->kind();
  if (k == "ConfigError") return kExitConfigError;
  if (k == "ProviderTimeout" || k == "RateLimited" || k == "ProviderRejected" || k == "BackendUnavailable" ||
      k == "UnscriptedPrompt" || k == "SteeringClassifierError") {
    return kExitProviderFailure;
  }
  return kExitFailure;
}

}  // namespace erragree
