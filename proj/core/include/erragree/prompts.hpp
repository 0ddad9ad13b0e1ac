#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace erragree {

// Named prompt templates. Built-in copies are compiled from core/templates;
// a directory of `<name>.txt` files can override any of them.
//
// Names: categorize_memorize, categorize_question, categorize_question_nocorpus,
// generate, steer_suffix, classify_pair, relevance.
class PromptTemplates {
 public:
  static const PromptTemplates& builtin();
  static PromptTemplates from_directory(const std::filesystem::path& dir);

  const std::string& get(std::string_view name) const;
  void set(std::string name, std::string text);

 private:
  std::map<std::string, std::string, std::less<>> templates_;
};

// Replaces each {KEY} placeholder in one left-to-right pass; substituted text
// is never rescanned. Unknown placeholders are left untouched.
std::string fill_template(std::string_view tpl, const std::map<std::string, std::string>& values);

}  // namespace erragree
