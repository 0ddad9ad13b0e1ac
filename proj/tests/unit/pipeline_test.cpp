#include <doctest.h>

#include <cstdlib>
#include <mutex>
#include <sys/wait.h>

#include "erragree/error.hpp"
#include "erragree/fileio.hpp"
#include "erragree/generator.hpp"
#include "erragree/pipeline.hpp"
#include "support.hpp"

using namespace erragree;
using erragree::testing::fixture;
using erragree::testing::TempDir;
using erragree::testing::write_text;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Copy of the e2e fixture directory so tests can edit inputs freely.
struct Workspace {
  TempDir dir;
  Workspace() {
    for (const char* f : {"corpus.txt", "run.json", "mock_script.json"}) {
      fs::copy_file(fixture("e2e") / f, dir / f);
    }
  }
  fs::path config_path() const { return dir / "run.json"; }
  fs::path out() const { return dir / "out"; }
  RunConfig config() const { return load_run_config(config_path()); }
  void edit_config(const std::function<void(json&)>& fn) const {
    auto j = json::parse(read_file(config_path()));
    fn(j);
    write_text(config_path(), j.dump(2));
  }
  void add_rules(const json& rules) const {
    auto j = json::parse(read_file(dir / "mock_script.json"));
    for (const auto& r : rules) j.insert(j.begin(), r);
    write_text(dir / "mock_script.json", j.dump(2));
  }
};

// Records every user prompt sent through it.
class RecordingProvider final : public LlmProvider {
 public:
  explicit RecordingProvider(std::shared_ptr<LlmProvider> inner) : inner_(std::move(inner)) {}
  std::string describe() const override { return inner_->describe(); }
  std::string complete(const std::string& model, const SessionParams& p, std::span<const ChatMessage> m) override {
    {
      std::lock_guard lock(mu_);
      prompts.push_back(m.back().content);
    }
    return inner_->complete(model, p, m);
  }
  std::vector<std::string> prompts;

 private:
  std::mutex mu_;
  std::shared_ptr<LlmProvider> inner_;
};

RunOptions options(fs::path out, bool force = false) {
  RunOptions o;
  o.out_dir = std::move(out);
  o.force = force;
  return o;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ERRAGREE_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::size_t count(std::string_view haystack, std::string_view needle) {
  std::size_t n = 0;
  for (auto at = haystack.find(needle); at != std::string_view::npos; at = haystack.find(needle, at + 1)) ++n;
  return n;
}

}  // namespace

TEST_CASE("end to end run matches the golden report") {
  Workspace ws;
  Pipeline p(ws.config(), options(ws.out()));
  const auto results = p.run_all();
  REQUIRE(results.size() == 4);
  for (const auto& r : results) {
    CAPTURE(to_string(r.stage));
    CHECK_FALSE(r.reused);
    CHECK(r.warnings.empty());
  }
  CHECK(read_file(ws.out() / "report.json") == read_file(fixture("e2e") / "golden_report.json"));
  CHECK(fs::exists(ws.out() / "report.md"));
  CHECK(fs::exists(ws.out() / "manifest.json"));

  const auto report = json::parse(read_file(ws.out() / "report.json"));
  CHECK(report.at("metadata").at("k") == 6);
  CHECK(report.at("rows").size() == 3);
}

TEST_CASE("warm rerun makes no provider calls") {
  Workspace ws;
  { Pipeline(ws.config(), options(ws.out())).run_all(); }
  const auto golden = read_file(ws.out() / "report.json");

  {
    Pipeline warm(ws.config(), options(ws.out()));
    for (const auto& r : warm.run_all()) CHECK(r.reused);
    CHECK(warm.llm_provider_calls() == 0);
    CHECK(warm.embedding_backend_calls() == 0);
  }
  Pipeline forced(ws.config(), options(ws.out(), true));
  for (const auto& r : forced.run_all()) CHECK_FALSE(r.reused);
  CHECK(forced.llm_provider_calls() == 0);  // served by the persistent caches
  CHECK(forced.embedding_backend_calls() == 0);
  CHECK(read_file(ws.out() / "report.json") == golden);
}

TEST_CASE("stages demand current parents") {
  Workspace ws;
  {
    Pipeline p(ws.config(), options(ws.out()));
    CHECK_THROWS_AS(p.categorize(), StaleArtifact);
    CHECK_THROWS_AS(p.evaluate(), StaleArtifact);
    p.scrape();
    p.categorize();
  }
  write_text(ws.dir / "corpus.txt", read_file(ws.dir / "corpus.txt") + "A brand new line\n");
  {
    Pipeline p(ws.config(), options(ws.out()));
    CHECK_THROWS_AS(p.generate(), StaleArtifact);
    CHECK_FALSE(p.scrape().reused);
    CHECK_THROWS_AS(p.generate(), StaleArtifact);  // categorize now stale
  }

  // A hand-edited artifact is detected by its digest.
  Workspace ws2;
  {
    Pipeline p(ws2.config(), options(ws2.out()));
    p.scrape();
    const auto pairs = p.manifest().at("stages").at("scrape").at("artifact").get<std::string>();
    write_text(ws2.out() / pairs, "{}");
    CHECK_THROWS_AS(p.categorize(), StaleArtifact);
  }
}

TEST_CASE("changing a downstream parameter keeps upstream artifacts") {
  Workspace ws;
  { Pipeline(ws.config(), options(ws.out())).run_all(); }
  ws.edit_config([](json& j) { j["evaluator"]["t"] = 0.5; });
  Pipeline p(ws.config(), options(ws.out()));
  const auto results = p.run_all();
  CHECK(results[0].reused);
  CHECK(results[1].reused);
  CHECK(results[2].reused);
  CHECK_FALSE(results[3].reused);
  CHECK(p.llm_provider_calls() == 0);
}

TEST_CASE("generate-time steering reaches prompts, pairs and report") {
  Workspace ws;
  ws.edit_config([](json& j) { j["steer"] = {{"mode", "generate"}, {"subdomain", "self-driving"}}; });
  ws.add_rules(json::parse(R"([{"contains": "salient to self-driving", "reply": "YES"}])"));
  auto cfg = ws.config();
  auto recorder = std::make_shared<RecordingProvider>(
      std::make_shared<ScriptedProvider>(ScriptedProvider::from_file(ws.dir / "mock_script.json")));
  auto opts = options(ws.out());
  opts.llm_provider = recorder;
  Pipeline p(cfg, opts);
  p.run_all();

  std::size_t generation_prompts = 0;
  for (const auto& prompt : recorder->prompts) {
    if (!prompt.starts_with("Write down")) continue;
    ++generation_prompts;
    CHECK(count(prompt, "Keep in mind, your examples should be relevant to self-driving") == 1);
  }
  CHECK(generation_prompts == 6);
  for (const auto& g : generated_from_jsonl(read_file(ws.out() / "generated.jsonl"))) {
    CHECK(g.steer == std::optional<std::string>("self-driving"));
  }
  const auto report = json::parse(read_file(ws.out() / "report.json"));
  CHECK(report.at("metadata").at("steer_mode") == "generate");
  CHECK(report.at("metadata").at("subdomain") == "self-driving");
  for (const auto& row : report.at("rows")) CHECK(row.at("relevance_rate") == 1.0);
}

TEST_CASE("scrape-time steering filters candidates") {
  Workspace ws;
  ws.edit_config([](json& j) { j["steer"] = {{"mode", "scrape"}, {"subdomain", "traffic"}}; });
  ws.add_rules(json::parse(R"([
    {"contains": "important for traffic", "reply": "no"}
  ])"));
  ws.add_rules(json::parse(R"([
    {"contains": "car parked", "reply": "yes"},
    {"contains": "bus leaves", "reply": "yes"}
  ])"));
  Pipeline p(ws.config(), options(ws.out()));
  p.scrape();
  const auto pairs = json::parse(read_file(ws.out() / "pairs.json"));
  CHECK(pairs.at("steer") == "traffic");
  REQUIRE_FALSE(pairs.at("pairs").empty());
  for (const auto& rec : pairs.at("pairs")) {
    const auto both = rec.at("text_i").get<std::string>() + rec.at("text_j").get<std::string>();
    CHECK((both.find("car parked") != std::string::npos || both.find("bus leaves") != std::string::npos));
  }
}

TEST_CASE("calibration stage") {
  Workspace ws;
  write_text(ws.dir / "labels.jsonl",
             "{\"text_a\": \"a\", \"text_b\": \"b\", \"gen_sim\": 0.91, \"downstream_failure\": true}\n"
             "{\"text_a\": \"c\", \"text_b\": \"d\", \"gen_sim\": 0.80, \"downstream_failure\": false}\n"
             "{\"text_a\": \"a dog runs\", \"text_b\": \"runs a dog\", \"downstream_failure\": true}\n");
  Pipeline p(ws.config(), options(ws.out()));
  CHECK_THROWS_AS(p.calibrate(), ConfigError);
  const auto r = p.calibrate(ws.dir / "labels.jsonl");
  const auto h = json::parse(read_file(r.artifact));
  CHECK(h.at("recommended_t").get<double>() == doctest::Approx(0.90));
  CHECK(p.calibrate(ws.dir / "labels.jsonl").reused);
}

TEST_CASE("output directory is single-owner") {
  Workspace ws;
  Pipeline p(ws.config(), options(ws.out()));
  CHECK_THROWS_AS(Pipeline(ws.config(), options(ws.out())), IoError);
}

TEST_CASE("CLI exit codes") {
  Workspace ws;
  const std::string common = "-c " + ws.config_path().string() + " -o " + ws.out().string();
  CHECK(run_cli("pipeline " + common + " -q") == kExitOk);
  CHECK(run_cli("pipeline " + common + " -q") == kExitOk);
  CHECK(run_cli("show-config " + common) == kExitOk);
  CHECK(run_cli("scrape --bogus-flag") == kExitConfigError);

  write_text(ws.dir / "bad.json", R"({"miner": {"tau": 7}})");
  CHECK(run_cli("scrape -c " + (ws.dir / "bad.json").string() + " -o " + (ws.dir / "o2").string()) ==
        kExitConfigError);

  write_text(ws.dir / "empty_script.json", "[]");
  CHECK(run_cli("pipeline " + common + " --force --mock-script " + (ws.dir / "nothing.json").string()) ==
        kExitConfigError);
  ws.edit_config([](json& j) { j["cache"]["enabled"] = false; });
  CHECK(run_cli("categorize " + common + " --force --mock-script " + (ws.dir / "empty_script.json").string()) ==
        kExitProviderFailure);

  ws.edit_config([](json& j) {
    j["generator"]["k"] = 50;
    j["generator"]["turn_budget"] = 2;
  });
  CHECK(run_cli("pipeline " + common + " -q") == kExitPartial);  // too few distinct pairs
}

TEST_CASE("exit code mapping") {
  CHECK(exit_code_for(ConfigError("x")) == kExitConfigError);
  CHECK(exit_code_for(RateLimited("x")) == kExitProviderFailure);
  CHECK(exit_code_for(UnscriptedPrompt("x")) == kExitProviderFailure);
  CHECK(exit_code_for(StaleArtifact("x")) == kExitFailure);
  CHECK(exit_code_for(std::runtime_error("x")) == kExitFailure);
}
