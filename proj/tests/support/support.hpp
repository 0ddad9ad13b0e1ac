#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>

#include "erragree/embedding.hpp"

namespace erragree::testing {

std::filesystem::path fixture(std::string_view name);

void write_text(const std::filesystem::path& path, std::string_view text);

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(std::string_view name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

struct SplitMix64 {
  std::uint64_t state;
  std::uint64_t next();
  // ((x >> 40) / 2^24) * 2 - 1, exact in float.
  float next_unit_interval();
};

// Same construction as tests/oracles/brute_force_miner.py.
EmbeddingMatrix splitmix_matrix(std::uint64_t seed, std::size_t rows, std::size_t dims,
                                std::string model_id = "fixture");

EmbeddingMatrix random_unit_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t dims,
                                   std::string model_id = "random");

}  // namespace erragree::testing
