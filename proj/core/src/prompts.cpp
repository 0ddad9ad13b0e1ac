#include "erragree/prompts.hpp"

#include "erragree/error.hpp"
#include "erragree/fileio.hpp"

namespace erragree {
namespace {

struct BuiltinTemplate {
  const char* name;
  const char* text;
};

constexpr BuiltinTemplate kBuiltin[] = {
#include "templates_builtin.inc"
};

std::string strip_trailing_space(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) {
    s.pop_back();
  }
  return s;
}

}  // namespace

const PromptTemplates& PromptTemplates::builtin() {
  static const PromptTemplates instance = [] {
    PromptTemplates t;
    for (const auto& b : kBuiltin) t.set(b.name, b.text);
    return t;
  }();
  return instance;
}

PromptTemplates PromptTemplates::from_directory(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("template directory not found: " + dir.string());
  PromptTemplates t = builtin();
  for (const auto& b : kBuiltin) {
    const auto file = dir / (std::string(b.name) + ".txt");
    if (std::filesystem::exists(file)) t.set(b.name, read_file(file));
  }
  return t;
}

const std::string& PromptTemplates::get(std::string_view name) const {
  auto it = templates_.find(name);
  if (it == templates_.end()) throw ConfigError("unknown prompt template '" + std::string(name) + "'");
  return it->second;
}

void PromptTemplates::set(std::string name, std::string text) {
  templates_[std::move(name)] = strip_trailing_space(std::move(text));
}

std::string fill_template(std::string_view tpl, const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(tpl.size());
  std::size_t pos = 0;
  while (pos < tpl.size()) {
    const auto open = tpl.find('{', pos);
    if (open == std::string_view::npos) {
      out.append(tpl.substr(pos));
      break;
    }
    out.append(tpl.substr(pos, open - pos));
    const auto close = tpl.find('}', open + 1);
    if (close == std::string_view::npos) {
      out.append(tpl.substr(open));
      break;
    }
    const std::string key(tpl.substr(open + 1, close - open - 1));
    if (auto it = values.find(key); it != values.end()) {
      out.append(it->second);
      pos = close + 1;
    } else {
      out.push_back('{');
      pos = open + 1;
    }
  }
  return out;
}

}  // namespace erragree
