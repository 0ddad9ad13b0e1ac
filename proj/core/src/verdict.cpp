#include "erragree/verdict.hpp"

#include <cctype>
#include <string>

#include "erragree/error.hpp"

namespace erragree {

bool parse_verdict(std::string_view reply) {
  std::size_t pos = 0;
  while (pos < reply.size() && std::isspace(static_cast<unsigned char>(reply[pos]))) ++pos;
  std::string token;
  for (; pos < reply.size() && !std::isspace(static_cast<unsigned char>(reply[pos])); ++pos) {
    const auto c = static_cast<unsigned char>(reply[pos]);
    if (std::ispunct(c)) continue;
    token.push_back(static_cast<char>(std::tolower(c)));
  }
  if (token == "yes") return true;
  if (token == "no") return false;
  throw UnparseableVerdict("expected a yes/no verdict, got: " + std::string(reply.substr(0, 80)));
}

}  // namespace erragree
