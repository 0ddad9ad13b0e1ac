#include "erragree/corpus.hpp"

#include <unordered_set>

#include "erragree/digest.hpp"
#include "erragree/error.hpp"
#include "erragree/fileio.hpp"

namespace erragree {
namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

// Minimal structural UTF-8 check: lead/continuation byte patterns only.
bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t extra = 0;
    if (c < 0x80) extra = 0;
    else if ((c >> 5) == 0x6) extra = 1;
    else if ((c >> 4) == 0xE) extra = 2;
    else if ((c >> 3) == 0x1E) extra = 3;
    else return false;
    if (i + extra >= s.size() && extra > 0) return false;
    for (std::size_t k = 1; k <= extra; ++k) {
      if ((static_cast<unsigned char>(s[i + k]) >> 6) != 0x2) return false;
    }
    i += extra + 1;
  }
  return true;
}

}  // namespace

CorpusFormat parse_corpus_format(std::string_view name) {
  if (name == "jsonl") return CorpusFormat::kJsonl;
  if (name == "plain-lines") return CorpusFormat::kPlainLines;
  throw FormatError("unknown corpus format '" + std::string(name) + "'");
}

std::string_view to_string(CorpusFormat format) {
  return format == CorpusFormat::kJsonl ? "jsonl" : "plain-lines";
}

std::string normalize_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

Corpus::Corpus(std::string name, std::string source_digest, std::vector<Sentence> sentences)
    : name_(std::move(name)), source_digest_(std::move(source_digest)), sentences_(std::move(sentences)) {}

Corpus Corpus::from_texts(std::string name, std::string source_digest,
                          const std::vector<std::string>& raw_texts) {
  std::vector<Sentence> sentences;
  std::unordered_set<std::string> seen;
  for (const auto& raw : raw_texts) {
    auto text = normalize_text(raw);
    if (text.empty() || !seen.insert(text).second) continue;
    sentences.push_back({static_cast<SentenceId>(sentences.size()), std::move(text)});
  }
  return Corpus(std::move(name), std::move(source_digest), std::move(sentences));
}

std::vector<std::string> Corpus::texts() const {
  std::vector<std::string> out;
  out.reserve(sentences_.size());
  for (const auto& s : sentences_) out.push_back(s.text);
  return out;
}

nlohmann::json Corpus::manifest() const {
  return {{"name", name_}, {"source_digest", source_digest_}, {"count", sentences_.size()}};
}

Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    throw IoError("corpus file not found: " + path.string());
  }
  const std::string bytes = read_file(path);
  if (!valid_utf8(bytes)) throw FormatError(path.string() + ": not valid UTF-8");

  std::vector<std::string> records;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= bytes.size()) {
    auto end = bytes.find('\n', start);
    if (end == std::string::npos) end = bytes.size();
    std::string_view line(bytes.data() + start, end - start);
    ++line_no;
    start = end + 1;
    if (format == CorpusFormat::kPlainLines) {
      records.emplace_back(line);
      continue;
    }
    if (normalize_text(line).empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": malformed JSON record");
    }
    if (!rec.is_object() || !rec.contains("text") || !rec["text"].is_string()) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) +
                        ": record lacks a string \"text\" field");
    }
    records.push_back(rec["text"].get<std::string>());
  }

  auto corpus = Corpus::from_texts(path.stem().string(), sha256_hex(bytes), records);
  if (corpus.size() == 0) throw EmptyCorpus(path.string() + ": no sentences after normalization");
  return corpus;
}

}  // namespace erragree
