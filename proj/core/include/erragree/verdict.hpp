#pragma once

#include <string_view>

namespace erragree {

// Yes/no classifier replies: the first token, lowercased and stripped of
// punctuation, must be "yes" or "no". Anything else throws UnparseableVerdict.
bool parse_verdict(std::string_view reply);

}  // namespace erragree
