#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace esr {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

// Every closed-form and brute-force oracle check, run against the library.
std::vector<CheckResult> run_selftest(uint64_t seed = 20250);

}  // namespace esr
