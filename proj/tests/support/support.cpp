#include "support.hpp"

#include <stdlib.h>

#include <fstream>
#include <stdexcept>

namespace erragree::testing {

std::filesystem::path fixture(std::string_view name) { return std::filesystem::path(ERRAGREE_FIXTURES) / name; }

void write_text(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

TempDir::TempDir() {
  auto tmpl = (std::filesystem::temp_directory_path() / "erragree-test-XXXXXX").string();
  if (!::mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
  path_ = tmpl;
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

std::uint64_t SplitMix64::next() {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

float SplitMix64::next_unit_interval() {
  return static_cast<float>((static_cast<double>(next() >> 40) / static_cast<double>(1 << 24)) * 2.0 - 1.0);
}

EmbeddingMatrix splitmix_matrix(std::uint64_t seed, std::size_t rows, std::size_t dims, std::string model_id) {
  SplitMix64 g{seed};
  std::vector<float> data(rows * dims);
  for (auto& x : data) x = g.next_unit_interval();
  return EmbeddingMatrix(std::move(model_id), rows, dims, std::move(data), false);
}

EmbeddingMatrix random_unit_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t dims, std::string model_id) {
  std::normal_distribution<float> dist(0.0f, 1.0f);
  std::vector<float> data;
  data.reserve(rows * dims);
  for (std::size_t i = 0; i < rows; ++i) {
    std::vector<float> v(dims);
    for (auto& x : v) x = dist(rng);
    auto u = normalize_vector(v);
    data.insert(data.end(), u.begin(), u.end());
  }
  return EmbeddingMatrix(std::move(model_id), rows, dims, std::move(data), true);
}

}  // namespace erragree::testing
