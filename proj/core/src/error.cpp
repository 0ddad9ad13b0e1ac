#include "erragree/error.hpp"

namespace erragree {

Error::Error(std::string_view kind, const std::string& message)
    : std::runtime_error(message), kind_(kind) {}

bool is_retryable(const Error& e) noexcept {
  return dynamic_cast<const ProviderTimeout*>(&e) != nullptr ||
         dynamic_cast<const RateLimited*>(&e) != nullptr;
}

void rethrow_with_context(const Error& e, const std::string& context) {
  const std::string msg = context + ": " + e.what();
#define ERRAGREE_RETHROW(Name) \
  if (dynamic_cast<const Name*>(&e)) throw Name(msg);
  ERRAGREE_RETHROW(IoError)
  ERRAGREE_RETHROW(FormatError)
  ERRAGREE_RETHROW(EmptyCorpus)
  ERRAGREE_RETHROW(BackendUnavailable)
  ERRAGREE_RETHROW(DimensionMismatch)
  ERRAGREE_RETHROW(NonFiniteEmbedding)
  ERRAGREE_RETHROW(BadMagic)
  ERRAGREE_RETHROW(TruncatedFile)
  ERRAGREE_RETHROW(ZeroVector)
  ERRAGREE_RETHROW(RowCountMismatch)
  ERRAGREE_RETHROW(SteeringClassifierError)
  ERRAGREE_RETHROW(UnparseableVerdict)
  ERRAGREE_RETHROW(ProviderTimeout)
  ERRAGREE_RETHROW(RateLimited)
  ERRAGREE_RETHROW(ProviderRejected)
  ERRAGREE_RETHROW(UnscriptedPrompt)
  ERRAGREE_RETHROW(EmptyPairList)
  ERRAGREE_RETHROW(NoFailuresParsed)
  ERRAGREE_RETHROW(AllSessionsFailed)
  ERRAGREE_RETHROW(EmptyLabelSet)
  ERRAGREE_RETHROW(ConfigError)
  ERRAGREE_RETHROW(StaleArtifact)
#undef ERRAGREE_RETHROW
  throw Error(e.kind(), msg);
}

}  // namespace erragree
