#include "erragree/generator.hpp"

#include <regex>
#include <set>

#include "erragree/corpus.hpp"
#include "erragree/error.hpp"

namespace erragree {
namespace {

std::string straighten_quotes(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    // U+201C / U+201D
    if (i + 2 < s.size() && static_cast<unsigned char>(s[i]) == 0xE2 &&
        static_cast<unsigned char>(s[i + 1]) == 0x80 &&
        (static_cast<unsigned char>(s[i + 2]) == 0x9C || static_cast<unsigned char>(s[i + 2]) == 0x9D)) {
      out.push_back('"');
      i += 2;
      continue;
    }
    out.push_back(s[i]);
  }
  return out;
}

const std::regex& list_prefix() {
  static const std::regex re(R"re(^\s*(?:\\item\s*|[-*+]\s+|•\s*|\d{1,4}[.)]\s*|\(\d{1,4}\)\s*)?)re");
  return re;
}

const std::regex& tuple_line() {
  static const std::regex re(R"re(^\(\s*"(.*?)"\s*,\s*"(.*)"\s*\)\s*[,;.]?\s*$)re");
  return re;
}

}  // namespace

std::string build_generate_prompt(const SystematicFailure& failure, std::size_t m,
                                  const std::optional<std::string>& steer, bool additional,
                                  const PromptTemplates& templates) {
  if (m < 1) throw ConfigError("pairs per turn must be >= 1");
  std::string count = std::to_string(m);
  if (additional) count += " additional";
  auto prompt = fill_template(templates.get("generate"),
                              {{"M", count}, {"FAILURE", failure.name + ": " + failure.description}});
  if (steer) {
    prompt += "\n\n";
    prompt += fill_template(templates.get("steer_suffix"), {{"SUBDOMAIN", *steer}});
  }
  return prompt;
}

ParsedPairs parse_pairs(std::string_view reply) {
  ParsedPairs out;
  std::size_t start = 0;
  while (start <= reply.size()) {
    auto end = reply.find('\n', start);
    if (end == std::string_view::npos) end = reply.size();
    std::string raw(reply.substr(start, end - start));
    start = end + 1;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    if (normalize_text(raw).empty()) continue;

    std::string line = straighten_quotes(raw);
    line = std::regex_replace(line, list_prefix(), "", std::regex_constants::format_first_only);
    // Markdown emphasis around the tuple.
    while (!line.empty() && (line.front() == '*' || line.front() == '_')) line.erase(0, 1);
    while (!line.empty() && (line.back() == '*' || line.back() == '_' || line.back() == ' ')) line.pop_back();

    std::smatch m;
    if (line.empty() || line.front() != '(') {
      out.rejects.push_back({raw, "not a (\"...\", \"...\") tuple"});
      continue;
    }
    if (!std::regex_match(line, m, tuple_line())) {
      out.rejects.push_back({raw, "malformed tuple"});
      continue;
    }
    auto a = normalize_text(m[1].str());
    auto b = normalize_text(m[2].str());
    if (a.empty() || b.empty()) {
      out.rejects.push_back({raw, "empty text"});
      continue;
    }
    if (a == b) {
      out.rejects.push_back({raw, "identical texts"});
      continue;
    }
    out.pairs.push_back({std::move(a), std::move(b), {}, std::nullopt, std::nullopt, raw});
  }
  return out;
}

std::string render_pair_line(const GeneratedPair& pair) {
  return "(\"" + pair.text_a + "\", \"" + pair.text_b + "\"),";
}

GenerationResult generate_instances(const SystematicFailure& failure, LlmGateway& llm,
                                    const GeneratorOptions& options, const std::optional<std::string>& steer,
                                    const PromptTemplates& templates) {
  auto session = llm.new_session(options.model_id, options.params);
  return generate_instances(failure, llm, session, options, steer, templates);
}

GenerationResult generate_instances(const SystematicFailure& failure, LlmGateway& llm, Session& session,
                                    const GeneratorOptions& options, const std::optional<std::string>& steer,
                                    const PromptTemplates& templates) {
  if (options.k < 1) throw ConfigError("generator.k must be >= 1");
  if (options.m_per_turn < 1) throw ConfigError("generator.m_per_turn must be >= 1");
  const std::size_t expected = (options.k + options.m_per_turn - 1) / options.m_per_turn;
  const std::size_t budget = options.turn_budget ? options.turn_budget : 2 * expected;

  GenerationResult result;
  result.session_id = session.session_id;
  std::set<std::pair<std::string, std::string>> seen;
  while (result.turns < budget && result.pairs.size() < options.k) {
    const auto prompt = build_generate_prompt(failure, options.m_per_turn, steer, result.turns > 0, templates);
    const auto reply = llm.chat(session, prompt);
    ++result.turns;
    auto parsed = parse_pairs(reply);
    for (auto& r : parsed.rejects) result.rejects.push_back(std::move(r));
    for (auto& p : parsed.pairs) {
      auto key = p.text_a < p.text_b ? std::pair{p.text_a, p.text_b} : std::pair{p.text_b, p.text_a};
      if (!seen.insert(std::move(key)).second) {
        ++result.duplicates_dropped;
        continue;
      }
      p.failure_key = failure.canonical_key;
      p.steer = steer;
      result.pairs.push_back(std::move(p));
    }
  }
  if (result.pairs.size() > options.k) result.pairs.resize(options.k);
  result.insufficient = result.pairs.size() < options.k;
  return result;
}

nlohmann::json to_json(const GeneratedPair& p) {
  return {{"text_a", p.text_a},
          {"text_b", p.text_b},
          {"failure_key", p.failure_key},
          {"steer", p.steer ? nlohmann::json(*p.steer) : nlohmann::json(nullptr)},
          {"gen_sim", p.gen_sim ? nlohmann::json(*p.gen_sim) : nlohmann::json(nullptr)},
          {"raw_line", p.raw_line}};
}

GeneratedPair generated_pair_from_json(const nlohmann::json& j) {
  GeneratedPair p;
  p.text_a = j.at("text_a").get<std::string>();
  p.text_b = j.at("text_b").get<std::string>();
  p.failure_key = j.at("failure_key").get<std::string>();
  if (j.contains("steer") && !j.at("steer").is_null()) p.steer = j.at("steer").get<std::string>();
  if (j.contains("gen_sim") && !j.at("gen_sim").is_null()) p.gen_sim = j.at("gen_sim").get<double>();
  p.raw_line = j.value("raw_line", std::string{});
  if (p.text_a.empty() || p.text_b.empty() || p.text_a == p.text_b) {
    throw FormatError("generated pair with empty or identical texts");
  }
  return p;
}

std::string generated_to_jsonl(const std::vector<GeneratedPair>& pairs) {
  std::string out;
  for (const auto& p : pairs) {
    out += to_json(p).dump();
    out.push_back('\n');
  }
  return out;
}

std::vector<GeneratedPair> generated_from_jsonl(std::string_view text) {
  std::vector<GeneratedPair> out;
  std::size_t start = 0, line_no = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const auto line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (normalize_text(line).empty()) continue;
    try {
      out.push_back(generated_pair_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("generated pairs line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace erragree
