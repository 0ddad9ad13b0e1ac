#include "erragree/categorizer.hpp"

#include <cctype>
#include <future>
#include <map>

#include "erragree/corpus.hpp"
#include "erragree/error.hpp"

namespace erragree {
namespace {

bool is_markup(char c) { return c == '*' || c == '_' || c == '`' || c == '#' || c == '>'; }

std::size_t indentation(std::string_view line) {
  std::size_t n = 0;
  while (n < line.size() && (line[n] == ' ' || line[n] == '\t')) ++n;
  return n;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string strip_markup(std::string_view s) {
  std::string text(s);
  bool braced = false;
  for (std::string_view cmd : {"\\textbf{", "\\textit{", "\\emph{"}) {
    for (auto at = text.find(cmd); at != std::string::npos; at = text.find(cmd)) {
      text.erase(at, cmd.size());
      braced = true;
    }
  }
  std::string out;
  for (char c : text) {
    if (is_markup(c) || (braced && (c == '{' || c == '}'))) continue;
    out.push_back(c);
  }
  return normalize_text(out);
}

bool closes_entry(std::string_view line) {
  const auto t = trim(line);
  return t.starts_with("\\begin{") || t.starts_with("\\end{") || t.starts_with("```");
}

struct EntryStart {
  std::string name;
  std::string description;
};

// "<number>. <Name>: <description>" or "\item <Name>: <description>", with
// optional markdown or \textbf emphasis around the number or the name.
std::optional<EntryStart> match_entry(std::string_view line) {
  auto s = trim(line);
  while (!s.empty() && (is_markup(s.front()) || s.front() == ' ')) s.remove_prefix(1);
  if (s.starts_with("\\item")) {
    s.remove_prefix(5);
    if (s.empty() || (!std::isspace(static_cast<unsigned char>(s.front())) && s.front() != '\\')) {
      return std::nullopt;
    }
  } else {
    std::size_t k = 0;
    while (k < s.size() && std::isdigit(static_cast<unsigned char>(s[k]))) ++k;
    if (k == 0 || k > 3 || k >= s.size() || (s[k] != '.' && s[k] != ')')) return std::nullopt;
    s.remove_prefix(k + 1);
    if (s.empty() || !std::isspace(static_cast<unsigned char>(s.front()))) return std::nullopt;
  }
  const auto colon = s.find(':');
  if (colon == std::string_view::npos) return std::nullopt;
  auto name = strip_markup(s.substr(0, colon));
  if (name.empty() || name.size() > 120) return std::nullopt;
  bool has_alpha = false;
  for (unsigned char c : name) has_alpha |= std::isalpha(c) != 0;
  if (!has_alpha) return std::nullopt;

  auto rest = s.substr(colon + 1);
  while (!rest.empty() && (is_markup(rest.front()) || rest.front() == ':' ||
                           std::isspace(static_cast<unsigned char>(rest.front())))) {
    rest.remove_prefix(1);
  }
  return EntryStart{std::move(name), std::string(rest)};
}

}  // namespace

std::string canonical_failure_key(std::string_view name) {
  std::string out;
  for (unsigned char c : name) {
    if (c < 0x80 && std::ispunct(c)) continue;
    out.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
  }
  return normalize_text(out);
}

CategorizePrompt build_categorize_prompt(const std::vector<PairWithText>& pairs, const PromptBudget& budget,
                                         const PromptTemplates& templates) {
  if (pairs.empty()) throw EmptyPairList("cannot build a categorization prompt from zero pairs");
  std::string block;
  std::size_t included = 0;
  for (const auto& p : pairs) {
    if (budget.max_pairs && included >= *budget.max_pairs) break;
    std::string line = p.text_i + ", " + p.text_j;
    const std::size_t added = line.size() + (included ? 1 : 0);
    if (block.size() + added > budget.max_chars) break;
    if (included) block.push_back('\n');
    block += line;
    ++included;
  }
  if (included == 0) {
    throw EmptyPairList("prompt budget admits none of the " + std::to_string(pairs.size()) + " pairs");
  }
  return {fill_template(templates.get("categorize_memorize"), {{"PAIRS", block}}),
          templates.get("categorize_question"), included};
}

CategorizePrompt build_categorize_prompt_without_corpus(const PromptTemplates& templates) {
  return {std::nullopt, templates.get("categorize_question_nocorpus"), 0};
}

std::vector<SystematicFailure> parse_failure_list(std::string_view reply) {
  std::vector<SystematicFailure> out;
  std::optional<std::size_t> list_indent;
  bool open = false;       // appending continuation lines to out.back()
  bool blank_seen = false;

  std::size_t start = 0;
  while (start <= reply.size()) {
    auto end = reply.find('\n', start);
    if (end == std::string_view::npos) end = reply.size();
    const auto line = reply.substr(start, end - start);
    start = end + 1;

    const auto indent = indentation(line);
    auto entry = match_entry(line);
    if (entry && (!list_indent || indent <= *list_indent)) {
      if (!list_indent) list_indent = indent;
      out.push_back({entry->name, entry->description, canonical_failure_key(entry->name), {}, {}});
      open = true;
      blank_seen = false;
      continue;
    }
    if (!open) continue;
    if (closes_entry(line)) {
      open = false;
      continue;
    }
    if (trim(line).empty()) {
      blank_seen = true;
      continue;
    }
    if (blank_seen && indent <= list_indent.value_or(0)) {
      // Unindented prose after a blank line closes the list item.
      open = false;
      continue;
    }
    auto& desc = out.back().description;
    desc.push_back(' ');
    desc += trim(line);
  }

  std::vector<SystematicFailure> kept;
  for (auto& f : out) {
    f.description = normalize_text(f.description);
    if (!f.description.empty()) kept.push_back(std::move(f));
  }
  if (kept.empty()) throw NoFailuresParsed("no numbered 'Name: description' entries in reply");
  return kept;
}

std::string render_failure_list(const std::vector<SystematicFailure>& failures) {
  std::string out;
  for (std::size_t k = 0; k < failures.size(); ++k) {
    out += std::to_string(k + 1) + ". " + failures[k].name + ": " + failures[k].description + "\n";
  }
  return out;
}

std::vector<SystematicFailure> aggregate_failures(const std::vector<std::vector<SystematicFailure>>& lists) {
  std::vector<SystematicFailure> out;
  std::map<std::string, std::size_t> index;
  for (const auto& list : lists) {
    for (const auto& f : list) {
      auto [it, fresh] = index.try_emplace(f.canonical_key, out.size());
      if (fresh) {
        out.push_back(f);
        continue;
      }
      auto& merged = out[it->second];
      merged.sources.insert(merged.sources.end(), f.sources.begin(), f.sources.end());
      auto add_alternate = [&](const std::string& d) {
        if (d == merged.description) return;
        for (const auto& a : merged.alternate_descriptions) {
          if (a == d) return;
        }
        merged.alternate_descriptions.push_back(d);
      };
      add_alternate(f.description);
      for (const auto& a : f.alternate_descriptions) add_alternate(a);
    }
  }
  return out;
}

CategorizeResult categorize(const std::vector<PairWithText>& pairs, LlmGateway& llm,
                            const CategorizerOptions& options, const PromptTemplates& templates) {
  if (options.sessions < 1) throw ConfigError("categorizer.sessions must be >= 1");
  const auto prompt = options.include_corpus ? build_categorize_prompt(pairs, options.budget, templates)
                                             : build_categorize_prompt_without_corpus(templates);

  // Sessions are opened up front so ids follow session order.
  std::vector<Session> sessions;
  for (std::size_t s = 0; s < options.sessions; ++s) {
    auto params = options.params;
    params.sample = static_cast<int>(s);
    sessions.push_back(llm.new_session(options.model_id, params));
  }

  auto run = [&](Session& session) {
    if (prompt.memorize) llm.chat(session, *prompt.memorize);
    return llm.chat(session, prompt.question);
  };
  std::vector<std::future<std::string>> replies;
  for (auto& session : sessions) replies.push_back(std::async(std::launch::async, run, std::ref(session)));

  CategorizeResult result;
  result.included_pairs = prompt.included_pairs;
  std::vector<std::vector<SystematicFailure>> lists;
  std::exception_ptr gateway_error;
  for (std::size_t s = 0; s < sessions.size(); ++s) {
    SessionOutcome outcome{sessions[s].session_id, sessions[s].params.sample, {}, 0, std::nullopt};
    try {
      outcome.raw_reply = replies[s].get();
    } catch (...) {
      if (!gateway_error) gateway_error = std::current_exception();
      continue;
    }
    try {
      auto parsed = parse_failure_list(outcome.raw_reply);
      for (std::size_t k = 0; k < parsed.size(); ++k) {
        parsed[k].sources.push_back({options.model_id, sessions[s].session_id, k + 1});
      }
      outcome.parsed = parsed.size();
      lists.push_back(std::move(parsed));
    } catch (const NoFailuresParsed& e) {
      outcome.error = e.what();
    }
    result.sessions.push_back(std::move(outcome));
  }
  if (gateway_error) std::rethrow_exception(gateway_error);
  if (lists.empty()) {
    throw AllSessionsFailed("none of the " + std::to_string(sessions.size()) +
                            " categorization sessions produced a parseable failure list");
  }
  result.failures = aggregate_failures(lists);
  return result;
}

nlohmann::json failures_to_json(const std::vector<SystematicFailure>& failures) {
  auto out = nlohmann::json::array();
  for (const auto& f : failures) {
    auto sources = nlohmann::json::array();
    for (const auto& s : f.sources) {
      sources.push_back({{"model_id", s.model_id}, {"session_id", s.session_id}, {"ordinal", s.ordinal}});
    }
    out.push_back({{"name", f.name},
                   {"description", f.description},
                   {"canonical_key", f.canonical_key},
                   {"sources", sources},
                   {"alternate_descriptions", f.alternate_descriptions}});
  }
  return out;
}

std::vector<SystematicFailure> failures_from_json(const nlohmann::json& j) {
  std::vector<SystematicFailure> out;
  try {
    for (const auto& rec : j) {
      SystematicFailure f;
      f.name = rec.at("name").get<std::string>();
      f.description = rec.at("description").get<std::string>();
      f.canonical_key = rec.value("canonical_key", canonical_failure_key(f.name));
      if (rec.contains("sources")) {
        for (const auto& s : rec.at("sources")) {
          f.sources.push_back({s.at("model_id").get<std::string>(), s.at("session_id").get<std::string>(),
                               s.at("ordinal").get<std::size_t>()});
        }
      }
      f.alternate_descriptions = rec.value("alternate_descriptions", std::vector<std::string>{});
      if (f.name.empty() || f.description.empty()) throw FormatError("failure with empty name or description");
      out.push_back(std::move(f));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed failures artifact: ") + e.what());
  }
  return out;
}

}  // namespace erragree
