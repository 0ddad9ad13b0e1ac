#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace erragree {

// Every failure the library reports derives from Error. The kind string is
// stable and is what the CLI prints in front of the message.
class Error : public std::runtime_error {
 public:
  Error(std::string_view kind, const std::string& message);

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define ERRAGREE_DECLARE_ERROR(Name)                                   \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& message) : Error(#Name, message) {} \
  }

// corpus_store
ERRAGREE_DECLARE_ERROR(IoError);
ERRAGREE_DECLARE_ERROR(FormatError);
ERRAGREE_DECLARE_ERROR(EmptyCorpus);

// embedding_provider
ERRAGREE_DECLARE_ERROR(BackendUnavailable);
ERRAGREE_DECLARE_ERROR(DimensionMismatch);
ERRAGREE_DECLARE_ERROR(NonFiniteEmbedding);
ERRAGREE_DECLARE_ERROR(BadMagic);
ERRAGREE_DECLARE_ERROR(TruncatedFile);

// pair_miner
ERRAGREE_DECLARE_ERROR(ZeroVector);
ERRAGREE_DECLARE_ERROR(RowCountMismatch);
ERRAGREE_DECLARE_ERROR(SteeringClassifierError);
ERRAGREE_DECLARE_ERROR(UnparseableVerdict);

// llm_gateway
ERRAGREE_DECLARE_ERROR(ProviderTimeout);
ERRAGREE_DECLARE_ERROR(RateLimited);
ERRAGREE_DECLARE_ERROR(ProviderRejected);
ERRAGREE_DECLARE_ERROR(UnscriptedPrompt);

// categorizer / generator / evaluator
ERRAGREE_DECLARE_ERROR(EmptyPairList);
ERRAGREE_DECLARE_ERROR(NoFailuresParsed);
ERRAGREE_DECLARE_ERROR(AllSessionsFailed);
ERRAGREE_DECLARE_ERROR(EmptyLabelSet);

// pipeline
ERRAGREE_DECLARE_ERROR(ConfigError);
ERRAGREE_DECLARE_ERROR(StaleArtifact);

#undef ERRAGREE_DECLARE_ERROR

// True for the provider errors the gateway may retry.
bool is_retryable(const Error& e) noexcept;

// Rethrows `e` as its own type with "<context>: " in front of the message.
[[noreturn]] void rethrow_with_context(const Error& e, const std::string& context);

}  // namespace erragree
