#pragma once

#include "esr/graph.hpp"

#include <string>
#include <vector>

namespace esr {

// One applied rewrite with its measured equivalence on a probe input.
struct RewriteRecord {
  std::string layer;
  std::string kind;  // "lora_merge", "collapse_branches", "compose_convs"
  Discrepancy error;
  bool interior_only = false;  // compose: error measured away from the border
  int64_t params_before = 0;
  int64_t params_after = 0;
};

struct RewriteOptions {
  bool merge_lora = true;
  bool collapse = true;
  // Folds conv -> conv chains (no activation between, groups = 1). Changes
  // border pixels, so it is opt-in.
  bool compose = false;
  uint64_t probe_seed = 7;
  int probe_size = 12;
};

struct RewriteResult {
  ModelGraph graph;
  std::vector<RewriteRecord> records;
};

// Applies the requested rewrites layer by layer, checking each against the
// unrewritten layer on a seeded probe tensor.
RewriteResult apply_rewrites(const ModelGraph& graph, const RewriteOptions& options = {});

// Parameters held by a layer including any unmerged adapters.
int64_t layer_param_count(const LayerSpec& layer);

}  // namespace esr
