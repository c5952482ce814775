#pragma once

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace esr {

struct TeamMetrics {
  std::string name;
  double runtime_ms_ave = 0.0;
  double params_m = 0.0;
  double flops_g = 0.0;
  std::optional<double> psnr_valid;
  std::optional<double> psnr_test;
};

struct ScoreWeights {
  double runtime = 0.8;
  double flops = 0.1;
  double params = 0.1;
};

// A team passes when psnr >= threshold - tolerance. Reported PSNRs carry two
// decimals, and a ranked team is listed at 26.98 dB against the 26.99 dB test
// threshold, so one unit in the last place is tolerated.
struct PsnrGate {
  double valid = 26.90;
  double test = 26.99;
  double tolerance = 0.01;

  bool passes(const std::optional<double>& psnr, double threshold) const {
    return !psnr || *psnr >= threshold - tolerance - 1e-9;
  }
};

// exp(2 * team / baseline); lower is better, the baseline scores e^2.
double score_metric(double team_value, double baseline_value);

double score_final(double runtime_score, double flops_score, double params_score, const ScoreWeights& w = {});

struct TeamScore {
  std::string name;
  double runtime = 0.0;
  double params = 0.0;
  double flops = 0.0;
  double overall = 0.0;
  bool ranked = false;
  std::optional<int> rank;  // main track
  std::optional<int> runtime_rank;
  std::optional<int> params_rank;
  std::optional<int> flops_rank;
};

struct ScoreTable {
  TeamMetrics baseline;
  TeamScore baseline_score;
  std::vector<TeamMetrics> inputs;  // same order as `teams`
  std::vector<TeamScore> teams;     // ranked ascending by overall, then unranked in input order

  const TeamScore* find(const std::string& name) const;
  nlohmann::json to_json() const;
  std::string to_text() const;
};

// Scores every team; teams below either PSNR threshold (when reported) are
// scored but not ranked. Sub-track ranks use competition ranking (ties share).
ScoreTable rank_table(const std::vector<TeamMetrics>& teams, const TeamMetrics& baseline, const PsnrGate& gate = {},
                      const ScoreWeights& weights = {});

struct ScoreInput {
  TeamMetrics baseline;
  std::vector<TeamMetrics> teams;
  PsnrGate gate;
};

// JSON: {"baseline": {...}, "teams": [{...}], "psnr_gate": {"valid", "test"}}.
ScoreInput parse_score_json(const nlohmann::json& j);
// CSV header: role,name,runtime_ms_ave,params_m,flops_g[,psnr_valid,psnr_test];
// exactly one row has role "baseline".
ScoreInput parse_score_csv(const std::string& text);

// Two decimals below 1000 ("4.43"), otherwise mantissa-exponent ("6.76e3").
std::string format_score(double v);

}  // namespace esr
