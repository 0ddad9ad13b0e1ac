#include <doctest.h>

#include <random>

#include "erragree/corpus.hpp"
#include "erragree/error.hpp"
#include "erragree/fileio.hpp"
#include "erragree/generator.hpp"
#include "support.hpp"

using namespace erragree;
using erragree::testing::fixture;

namespace {

const SystematicFailure kTemporal{"Temporal differences",
                                  "Embedding models might not differentiate between events happening in the "
                                  "past, present, or future.",
                                  "temporal differences", {}, {}};

std::string numbered_lines(std::size_t from, std::size_t count) {
  std::string out;
  for (std::size_t k = from; k < from + count; ++k) {
    out += "(\"A dog that ran " + std::to_string(k) + "\", \"A dog that will run " + std::to_string(k) + "\"),\n\n";
  }
  return out;
}

std::shared_ptr<ScriptedProvider> provider_with(std::vector<ScriptedProvider::Rule> rules) {
  return std::make_shared<ScriptedProvider>(std::move(rules));
}

ScriptedProvider::Rule on_turn(std::size_t turn, std::string reply) {
  ScriptedProvider::Rule r;
  r.turn = turn;
  r.replies = {std::move(reply)};
  return r;
}

}  // namespace

TEST_CASE("generation prompt") {
  const auto first = build_generate_prompt(kTemporal, 41, std::nullopt);
  CHECK(first.starts_with("Write down 41 pairs of prompts"));
  CHECK(first.ends_with("Failure Mode:\n\nTemporal differences: Embedding models might not differentiate "
                        "between events happening in the past, present, or future."));
  CHECK(first.find("(\"prompt1\", \"prompt2\"),") != std::string::npos);

  const auto more = build_generate_prompt(kTemporal, 41, std::nullopt, true);
  CHECK(more.starts_with("Write down 41 additional pairs"));

  const auto steered = build_generate_prompt(kTemporal, 10, std::string("self-driving"));
  CHECK(steered.ends_with("\n\nKeep in mind, your examples should be relevant to self-driving"));
  std::size_t hits = 0;
  for (auto at = steered.find("self-driving"); at != std::string::npos; at = steered.find("self-driving", at + 1)) {
    ++hits;
  }
  CHECK(hits == 1);
  CHECK_THROWS_AS(build_generate_prompt(kTemporal, 0, std::nullopt), ConfigError);
}

TEST_CASE("pair lines: accepted and rejected forms") {
  const auto parsed = parse_pairs(
      "Here are the pairs:\n"
      "\n"
      "(\"A cat on a mat\", \"A mat on a cat\"),\n"
      "1. (\"one\", \"two\")\n"
      "- (“curly left”, “curly right”);\n"
      "\\item (\"latex\", \"item\")\n"
      "(\"with, comma\", \"and \\\"quote\\\"\")\n"
      "(\"same\", \"same\"),\n"
      "(\"\", \"empty\"),\n"
      "(\"unterminated\", \"tuple\"\n");
  REQUIRE(parsed.pairs.size() == 5);
  CHECK(parsed.pairs[0].text_a == "A cat on a mat");
  CHECK(parsed.pairs[0].text_b == "A mat on a cat");
  CHECK(parsed.pairs[2].text_a == "curly left");
  CHECK(parsed.pairs[3].text_b == "item");
  CHECK(parsed.pairs[4].text_a == "with, comma");
  REQUIRE(parsed.rejects.size() == 4);
  CHECK(parsed.rejects[0].line == "Here are the pairs:");
  CHECK(parsed.rejects[1].reason == "identical texts");
  CHECK(parsed.rejects[2].reason == "empty text");
  CHECK(parsed.rejects[3].line == "(\"unterminated\", \"tuple\"");
}

TEST_CASE("appendix example pairs all parse") {
  const auto parsed = parse_pairs(read_file(fixture("appendix_pairs.tex")));
  CHECK(parsed.pairs.size() == 45);
  REQUIRE(parsed.rejects.size() == 3);  // two preamble lines and \end{itemize}
  CHECK(parsed.pairs[0].text_a == "A child opening a birthday present");
  CHECK(parsed.pairs[0].text_b == "A child about to open a birthday present");
}

TEST_CASE("render and parse round-trip") {
  std::mt19937_64 rng(11);
  const std::string alphabet = "abc XYZ,.'()-0123456789";
  for (int trial = 0; trial < 500; ++trial) {
    auto text = [&] {
      std::string s = "w";
      const std::size_t n = 1 + rng() % 30;
      for (std::size_t c = 0; c < n; ++c) s.push_back(alphabet[rng() % alphabet.size()]);
      return s + "z";
    };
    GeneratedPair p{text(), text(), "", std::nullopt, std::nullopt, ""};
    if (normalize_text(p.text_a) == normalize_text(p.text_b)) continue;
    const auto back = parse_pairs(render_pair_line(p));
    REQUIRE(back.pairs.size() == 1);
    CHECK(back.pairs[0].text_a == normalize_text(p.text_a));
    CHECK(back.pairs[0].text_b == normalize_text(p.text_b));
  }
}

TEST_CASE("two turns of 41 give 82 pairs") {
  LlmGateway llm(provider_with({on_turn(0, numbered_lines(0, 41)), on_turn(1, numbered_lines(41, 41))}));
  const auto r = generate_instances(kTemporal, llm, GeneratorOptions{});
  CHECK(r.pairs.size() == 82);
  CHECK(r.turns == 2);
  CHECK_FALSE(r.insufficient);
  CHECK(r.pairs[81].text_a == "A dog that ran 81");
  CHECK(r.pairs[0].failure_key == "temporal differences");
  CHECK(llm.provider_calls() == 2);
}

TEST_CASE("duplicates and malformed lines cost extra turns") {
  // Turn 1 repeats half of turn 0 (one of them swapped); turn 2 completes.
  std::string swapped = "(\"A dog that will run 3\", \"A dog that ran 3\"),\n";
  LlmGateway llm(provider_with({on_turn(0, numbered_lines(0, 6) + "garbage\n"),
                                on_turn(1, numbered_lines(0, 2) + swapped + numbered_lines(6, 2)),
                                on_turn(2, numbered_lines(8, 6))}));
  GeneratorOptions o;
  o.k = 10;
  o.m_per_turn = 6;
  const auto r = generate_instances(kTemporal, llm, o);
  CHECK(r.pairs.size() == 10);
  CHECK(r.turns == 3);
  CHECK(r.duplicates_dropped == 3);
  CHECK(r.rejects.size() == 1);
  CHECK_FALSE(r.insufficient);
}

TEST_CASE("turn budget and truncation") {
  GeneratorOptions o;
  o.k = 5;
  o.m_per_turn = 41;
  LlmGateway plenty(provider_with({on_turn(0, numbered_lines(0, 41))}));
  const auto r = generate_instances(kTemporal, plenty, o);
  CHECK(r.pairs.size() == 5);
  CHECK(r.turns == 1);

  ScriptedProvider::Rule stuck;
  stuck.replies = {numbered_lines(0, 3)};
  LlmGateway repeating(provider_with({stuck}));
  o.k = 10;
  o.m_per_turn = 5;
  const auto short_run = generate_instances(kTemporal, repeating, o);
  CHECK(short_run.insufficient);
  CHECK(short_run.turns == 4);  // 2 * ceil(10 / 5)
  CHECK(short_run.pairs.size() == 3);
}

TEST_CASE("steer is recorded on every pair and JSONL round-trips") {
  LlmGateway llm(provider_with({on_turn(0, numbered_lines(0, 3))}));
  GeneratorOptions o;
  o.k = 3;
  o.m_per_turn = 3;
  auto r = generate_instances(kTemporal, llm, o, std::string("cars"));
  for (const auto& p : r.pairs) CHECK(p.steer == std::optional<std::string>("cars"));
  r.pairs[0].gen_sim = 0.5;
  CHECK(generated_from_jsonl(generated_to_jsonl(r.pairs)) == r.pairs);
}
