#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "erragree/error.hpp"
#include "erragree/pipeline.hpp"
#include "erragree/run_config.hpp"

namespace {

namespace fs = std::filesystem;
using namespace erragree;

struct Args {
  std::string config;
  std::string out = "out";
  std::optional<std::string> steer;
  std::optional<std::string> mock_script;
  std::optional<std::string> labels;
  bool force = false;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Args& a) {
  cmd->add_option("-c,--config", a.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("-o,--out", a.out, "Artifact directory")->capture_default_str();
  cmd->add_option("--steer", a.steer, "Subdomain to steer towards");
  cmd->add_option("--mock-script", a.mock_script, "Use the scripted LLM with this script")->check(CLI::ExistingFile);
  cmd->add_flag("--force", a.force, "Recompute stages even when up to date");
  cmd->add_flag("-q,--quiet", a.quiet, "Only print warnings and errors");
}

RunConfig configure(const Args& a, const std::string& command) {
  auto cfg = load_run_config(a.config);
  if (a.mock_script) {
    cfg.llm_provider.kind = "mock";
    cfg.llm_provider.script = fs::absolute(*a.mock_script);
  }
  if (a.steer) {
    if (a.steer->empty()) throw ConfigError("--steer: subdomain must not be empty");
    cfg.steer.subdomain = *a.steer;
    if (cfg.steer.mode == SteerMode::kNone) {
      cfg.steer.mode = command == "scrape" ? SteerMode::kScrape : SteerMode::kGenerate;
    }
  }
  return cfg;
}

void report(const StageResult& r, const Args& a, bool& warned) {
  if (!a.quiet) {
    std::cout << to_string(r.stage) << ": " << (r.reused ? "up to date " : "wrote ") << r.artifact.string() << " ("
              << r.digest.substr(0, 12) << ")\n";
  }
  for (const auto& w : r.warnings) {
    std::cerr << "warning: " << w << "\n";
    warned = true;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mine, categorize, generate and evaluate erroneous-agreement failures of text embeddings"};
  app.set_version_flag("--version", "erragree 0.1.0");
  app.require_subcommand(1);

  Args args;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"scrape", "Mine individual failures from the corpus"},
      {"categorize", "Summarize mined pairs into systematic failures"},
      {"generate", "Generate new pairs for every systematic failure"},
      {"evaluate", "Score generated pairs and write the report"},
      {"calibrate", "Recommend a success threshold from labeled pairs"},
      {"pipeline", "Run scrape, categorize, generate and evaluate"},
      {"show-config", "Print the configuration with all defaults filled in"},
  };
  for (const auto& [name, help] : commands) {
    auto* cmd = app.add_subcommand(name, help);
    add_common(cmd, args);
    if (name == "calibrate") {
      cmd->add_option("--labels", args.labels, "Labeled pairs (JSON lines)")->check(CLI::ExistingFile);
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfigError;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    auto cfg = configure(args, command);
    if (command == "show-config") {
      std::cout << to_json(cfg).dump(2) << "\n";
      return kExitOk;
    }
    RunOptions options;
    options.out_dir = args.out;
    options.force = args.force;
    Pipeline pipeline(std::move(cfg), std::move(options));

    std::vector<StageResult> results;
    if (command == "scrape") results.push_back(pipeline.scrape());
    else if (command == "categorize") results.push_back(pipeline.categorize());
    else if (command == "generate") results.push_back(pipeline.generate());
    else if (command == "evaluate") results.push_back(pipeline.evaluate());
    else if (command == "calibrate") {
      std::optional<fs::path> labels;
      if (args.labels) labels = fs::path(*args.labels);
      results.push_back(pipeline.calibrate(labels));
    } else {
      results = pipeline.run_all();
    }

    bool warned = false;
    for (const auto& r : results) report(r, args, warned);
    if (!args.quiet) {
      std::cout << "provider calls: embedding " << pipeline.embedding_backend_calls() << ", llm "
                << pipeline.llm_provider_calls() << "\n";
    }
    return warned ? kExitPartial : kExitOk;
  } catch (const Error& e) {
    std::cerr << "error: " << e.kind() << ": " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}
