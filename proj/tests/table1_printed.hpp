#pragma once

// Published score cells, transcribed as printed. Rank 0 marks an unranked row.

#include <string>
#include <vector>

namespace esr::test {

struct PrintedRow {
  std::string name;
  std::string runtime, params, flops, overall;
  int rank, runtime_rank, params_rank, flops_rank;
};

inline const std::vector<PrintedRow>& printed_table1() {
  static const std::vector<PrintedRow> rows = {
      {"XiaomiMM", "3.95", "6.30", "6.38", "4.43", 1, 1, 5, 6},
      {"BOE_AIoT", "5.80", "6.56", "6.57", "5.95", 2, 3, 6, 7},
      {"PKDSR", "5.85", "6.73", "6.77", "6.03", 3, 4, 7, 8},
      {"DISP", "5.39", "8.78", "8.80", "6.07", 4, 2, 9, 9},
      {"VARH-AI", "7.87", "5.31", "5.33", "7.36", 5, 5, 4, 4},
      {"Just Try", "11.64", "26.00", "26.25", "14.54", 6, 6, 10, 10},
      {"IN2GM", "77.50", "97.79", "99.30", "81.71", 7, 7, 11, 12},
      {"XSR", "121.13", "3.12", "2.90", "97.51", 8, 8, 3, 3},
      {"Sunflower", "6.76e3", "6.73", "6.13", "5.41e3", 9, 9, 7, 5},
      {"ZenoSR", "2.93e5", "1.65", "1.73", "2.34e5", 10, 11, 1, 1},
      {"CUIT_HTT", "2.46e4", "2.30e6", "893.84", "2.50e5", 11, 10, 14, 14},
      {"XuptSR", "7.02e5", "1.97", "1.96", "5.62e5", 12, 12, 2, 2},
      {"HAESR", "6.02e9", "107.29", "224.54", "4.82e9", 13, 13, 12, 13},
      {"WMESR", "2.22e12", "7.53e3", "51.16", "1.78e12", 14, 14, 13, 11},
      {"MDAP", "5.33e14", "7.20", "7.08", "4.26e14", 0, 0, 0, 0},
  };
  return rows;
}

inline constexpr const char* kPrintedBaselineScore = "7.39";

}  // namespace esr::test
