#pragma once

#include "esr/graph.hpp"
#include "esr/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

namespace esr::test {

// Seeded generator for property tests; separate from the library's own RNG so
// inputs do not share a stream with weight initialisation.
class Gen {
 public:
  explicit Gen(uint64_t seed) : eng_(seed) {}

  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(eng_); }
  float real(float lo = -1.0f, float hi = 1.0f) { return std::uniform_real_distribution<float>(lo, hi)(eng_); }

  Tensor tensor(Shape s, float lo = -1.0f, float hi = 1.0f) {
    Tensor t(s);
    for (float& v : t.data()) v = real(lo, hi);
    return t;
  }

  ConvSpec conv(int in, int out, int k, int groups = 1, bool bias = true, float range = 0.5f) {
    ConvSpec s = ConvSpec::make(in, out, k, groups, bias);
    for (float& v : s.weight) v = real(-range, range);
    for (float& v : s.bias) v = real(-range, range);
    return s;
  }

  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

inline std::filesystem::path temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "esr_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace esr::test
