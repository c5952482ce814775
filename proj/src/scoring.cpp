#include "esr/scoring.hpp"

#include "esr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>

namespace esr {

namespace {

void require_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) throw Error(std::string("score: ") + what + " must be a positive finite value");
}

// Competition ranking (1, 2, 2, 4) ascending by score among the given indices.
std::map<size_t, int> competition_rank(const std::vector<size_t>& idx, const std::function<double(size_t)>& key) {
  std::vector<size_t> order = idx;
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return key(a) < key(b); });
  std::map<size_t, int> rank;
  for (size_t i = 0; i < order.size(); ++i)
    rank[order[i]] = (i > 0 && key(order[i]) == key(order[i - 1])) ? rank[order[i - 1]] : static_cast<int>(i) + 1;
  return rank;
}

TeamMetrics team_from_json(const nlohmann::json& j) {
  TeamMetrics t;
  t.name = j.at("name").get<std::string>();
  t.runtime_ms_ave = j.at("runtime_ms_ave").get<double>();
  t.params_m = j.at("params_m").get<double>();
  t.flops_g = j.at("flops_g").get<double>();
  if (j.contains("psnr_valid") && !j["psnr_valid"].is_null()) t.psnr_valid = j["psnr_valid"].get<double>();
  if (j.contains("psnr_test") && !j["psnr_test"].is_null()) t.psnr_test = j["psnr_test"].get<double>();
  return t;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
  }
  return out;
}

std::string with_rank(double v, const std::optional<int>& r) {
  return r ? format_score(v) + "(" + std::to_string(*r) + ")" : format_score(v);
}

}  // namespace

double score_metric(double team_value, double baseline_value) {
  require_positive(team_value, "team metric");
  require_positive(baseline_value, "baseline metric");
  return std::exp(2.0 * team_value / baseline_value);
}

double score_final(double runtime_score, double flops_score, double params_score, const ScoreWeights& w) {
  return w.runtime * runtime_score + w.flops * flops_score + w.params * params_score;
}

const TeamScore* ScoreTable::find(const std::string& name) const {
  for (const TeamScore& t : teams)
    if (t.name == name) return &t;
  return nullptr;
}

ScoreTable rank_table(const std::vector<TeamMetrics>& teams, const TeamMetrics& baseline, const PsnrGate& gate,
                      const ScoreWeights& weights) {
  auto score = [&](const TeamMetrics& t) {
    TeamScore s;
    s.name = t.name;
    s.runtime = score_metric(t.runtime_ms_ave, baseline.runtime_ms_ave);
    s.params = score_metric(t.params_m, baseline.params_m);
    s.flops = score_metric(t.flops_g, baseline.flops_g);
    s.overall = score_final(s.runtime, s.flops, s.params, weights);
    return s;
  };

  ScoreTable table;
  table.baseline = baseline;
  table.baseline_score = score(baseline);

  std::vector<TeamScore> scored;
  std::vector<size_t> ranked;
  for (size_t i = 0; i < teams.size(); ++i) {
    TeamScore s = score(teams[i]);
    s.ranked = gate.passes(teams[i].psnr_valid, gate.valid) && gate.passes(teams[i].psnr_test, gate.test);
    if (s.ranked) ranked.push_back(i);
    scored.push_back(std::move(s));
  }

  const auto main = competition_rank(ranked, [&](size_t i) { return scored[i].overall; });
  const auto rt = competition_rank(ranked, [&](size_t i) { return scored[i].runtime; });
  const auto pr = competition_rank(ranked, [&](size_t i) { return scored[i].params; });
  const auto fl = competition_rank(ranked, [&](size_t i) { return scored[i].flops; });
  for (size_t i : ranked) {
    scored[i].rank = main.at(i);
    scored[i].runtime_rank = rt.at(i);
    scored[i].params_rank = pr.at(i);
    scored[i].flops_rank = fl.at(i);
  }

  std::vector<size_t> order(teams.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (scored[a].ranked != scored[b].ranked) return scored[a].ranked;
    if (!scored[a].ranked) return false;
    return scored[a].overall < scored[b].overall;
  });
  for (size_t i : order) {
    table.teams.push_back(scored[i]);
    table.inputs.push_back(teams[i]);
  }
  return table;
}

nlohmann::json ScoreTable::to_json() const {
  auto row = [](const TeamMetrics& m, const TeamScore& s) {
    nlohmann::json j{{"name", s.name},
                     {"runtime_ms_ave", m.runtime_ms_ave},
                     {"params_m", m.params_m},
                     {"flops_g", m.flops_g},
                     {"score_runtime", s.runtime},
                     {"score_params", s.params},
                     {"score_flops", s.flops},
                     {"score_overall", s.overall},
                     {"ranked", s.ranked}};
    j["rank"] = s.rank ? nlohmann::json(*s.rank) : nlohmann::json(nullptr);
    j["rank_runtime"] = s.runtime_rank ? nlohmann::json(*s.runtime_rank) : nlohmann::json(nullptr);
    j["rank_params"] = s.params_rank ? nlohmann::json(*s.params_rank) : nlohmann::json(nullptr);
    j["rank_flops"] = s.flops_rank ? nlohmann::json(*s.flops_rank) : nlohmann::json(nullptr);
    if (m.psnr_valid) j["psnr_valid"] = *m.psnr_valid;
    if (m.psnr_test) j["psnr_test"] = *m.psnr_test;
    return j;
  };
  nlohmann::json j;
  j["baseline"] = row(baseline, baseline_score);
  j["teams"] = nlohmann::json::array();
  for (size_t i = 0; i < teams.size(); ++i) j["teams"].push_back(row(inputs[i], teams[i]));
  return j;
}

std::string ScoreTable::to_text() const {
  std::ostringstream os;
  auto line = [&os](const std::vector<std::string>& cells) {
    static const int widths[] = {24, 8, 8, 10, 8, 8, 14, 14, 14, 12, 7};
    for (size_t i = 0; i < cells.size(); ++i) os << std::left << std::setw(widths[i]) << cells[i];
    os << "\n";
  };
  auto fixed = [](double v, int prec) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(prec) << v;
    return s.str();
  };
  auto psnr = [&](const std::optional<double>& v) { return v ? fixed(*v, 2) : std::string("-"); };
  auto row = [&](const TeamMetrics& m, const TeamScore& s) {
    line({m.name, psnr(m.psnr_valid), psnr(m.psnr_test), fixed(m.runtime_ms_ave, 3), fixed(m.params_m, 3),
          fixed(m.flops_g, 2), with_rank(s.runtime, s.runtime_rank), with_rank(s.params, s.params_rank),
          with_rank(s.flops, s.flops_rank), format_score(s.overall), s.rank ? std::to_string(*s.rank) : "-"});
  };
  line({"Team", "PSNR-V", "PSNR-T", "Runtime", "Params", "FLOPs", "Score-Runtime", "Score-Params", "Score-FLOPs",
        "Overall", "Rank"});
  bool separator = false;
  for (size_t i = 0; i < teams.size(); ++i) {
    if (!teams[i].ranked && !separator) {
      os << "-- not ranked (PSNR below threshold) --\n";
      separator = true;
    }
    row(inputs[i], teams[i]);
  }
  row(baseline, baseline_score);
  return os.str();
}

ScoreInput parse_score_json(const nlohmann::json& j) {
  ScoreInput in;
  in.baseline = team_from_json(j.at("baseline"));
  for (const auto& t : j.at("teams")) in.teams.push_back(team_from_json(t));
  if (j.contains("psnr_gate")) {
    in.gate.valid = j["psnr_gate"].value("valid", in.gate.valid);
    in.gate.test = j["psnr_gate"].value("test", in.gate.test);
    in.gate.tolerance = j["psnr_gate"].value("tolerance", in.gate.tolerance);
  }
  return in;
}

ScoreInput parse_score_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::vector<std::string> header;
  while (header.empty() && std::getline(is, line))
    if (line.find_first_not_of(" \t\r") != std::string::npos) header = split_csv_line(line);
  auto column = [&](const std::string& name) -> std::optional<size_t> {
    for (size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    return std::nullopt;
  };
  const auto role = column("role"), name = column("name"), rt = column("runtime_ms_ave"), pm = column("params_m"),
             fg = column("flops_g"), pv = column("psnr_valid"), pt = column("psnr_test");
  if (!role || !name || !rt || !pm || !fg)
    throw Error("score csv: header must contain role,name,runtime_ms_ave,params_m,flops_g");

  ScoreInput in;
  int baselines = 0;
  while (std::getline(is, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv_line(line);
    auto get = [&](std::optional<size_t> c) -> std::string { return c && *c < cells.size() ? cells[*c] : ""; };
    TeamMetrics t;
    t.name = get(name);
    try {
      t.runtime_ms_ave = std::stod(get(rt));
      t.params_m = std::stod(get(pm));
      t.flops_g = std::stod(get(fg));
      if (!get(pv).empty()) t.psnr_valid = std::stod(get(pv));
      if (!get(pt).empty()) t.psnr_test = std::stod(get(pt));
    } catch (const std::exception&) {
      throw Error("score csv: malformed number in row '" + line + "'");
    }
    if (get(role) == "baseline") {
      in.baseline = t;
      ++baselines;
    } else {
      in.teams.push_back(t);
    }
  }
  if (baselines != 1) throw Error("score csv: expected exactly one baseline row");
  return in;
}

std::string format_score(double v) {
  char buf[64];
  if (std::abs(v) < 1000.0) {
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
  }
  std::snprintf(buf, sizeof buf, "%.2e", v);
  // "6.76e+03" -> "6.76e3"
  std::string s = buf;
  const auto e = s.find('e');
  std::string exp = s.substr(e + 1);
  const bool neg = exp[0] == '-';
  exp = exp.substr(1);
  exp.erase(0, std::min(exp.find_first_not_of('0'), exp.size() - 1));
  return s.substr(0, e + 1) + (neg ? "-" : "") + exp;
}

}  // namespace esr
