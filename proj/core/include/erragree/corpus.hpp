#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace erragree {

using SentenceId = std::uint32_t;

struct Sentence {
  SentenceId id = 0;
  std::string text;

  friend bool operator==(const Sentence&, const Sentence&) = default;
};

enum class CorpusFormat { kJsonl, kPlainLines };

CorpusFormat parse_corpus_format(std::string_view name);
std::string_view to_string(CorpusFormat format);

// Trim and collapse every run of whitespace to a single space. Case is kept.
std::string normalize_text(std::string_view text);

class Corpus {
 public:
  Corpus() = default;
  Corpus(std::string name, std::string source_digest, std::vector<Sentence> sentences);

  // Builds a corpus from raw records: normalizes, drops empties and exact
  // duplicates, assigns dense ids in first-occurrence order.
  static Corpus from_texts(std::string name, std::string source_digest,
                           const std::vector<std::string>& raw_texts);

  const std::string& name() const noexcept { return name_; }
  const std::string& source_digest() const noexcept { return source_digest_; }
  const std::vector<Sentence>& sentences() const noexcept { return sentences_; }
  std::size_t size() const noexcept { return sentences_.size(); }
  const std::string& text(SentenceId id) const { return sentences_.at(id).text; }

  std::vector<std::string> texts() const;

  // {name, source_digest, count}
  nlohmann::json manifest() const;

  friend bool operator==(const Corpus&, const Corpus&) = default;

 private:
  std::string name_;
  std::string source_digest_;
  std::vector<Sentence> sentences_;
};

// Throws IoError, FormatError (with 1-based line number) or EmptyCorpus.
Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format);

}  // namespace erragree
