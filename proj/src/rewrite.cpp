#include "esr/rewrite.hpp"

#include <algorithm>

namespace esr {

namespace {

Tensor crop(const Tensor& t, const Margin& m) {
  const int64_t h = t.h() - m.top - m.bottom;
  const int64_t w = t.w() - m.left - m.right;
  if (h < 1 || w < 1) throw ShapeError("crop: margin leaves no interior");
  Tensor out({t.n(), t.c(), h, w});
  for (int64_t n = 0; n < t.n(); ++n)
    for (int64_t c = 0; c < t.c(); ++c)
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) out.at(n, c, y, x) = t.at(n, c, y + m.top, x + m.left);
  return out;
}

bool plain_conv(const LayerSpec& l) { return l.kind == OpKind::Conv && l.conv.groups == 1 && !l.has_adapters(); }

size_t consumers(const ModelGraph& g, const std::string& name) {
  size_t n = 0;
  for (const LayerSpec& l : g.layers)
    n += static_cast<size_t>(std::count(l.inputs.begin(), l.inputs.end(), name));
  return n + (g.output == name ? 1 : 0);
}

}  // namespace

int64_t layer_param_count(const LayerSpec& layer) {
  if (!layer.has_params()) return 0;
  int64_t n = layer.conv.param_count();
  for (const ConvSpec& b : layer.branches) n += b.param_count();
  if (layer.lora) n += static_cast<int64_t>(layer.lora->a.size() + layer.lora->b.size());
  return n;
}

RewriteResult apply_rewrites(const ModelGraph& graph, const RewriteOptions& opt) {
  graph.validate();
  RewriteResult result{graph, {}};
  ModelGraph& g = result.graph;
  SeededUniform rng(opt.probe_seed);

  for (LayerSpec& l : g.layers) {
    if (l.kind != OpKind::Conv || !l.has_adapters()) continue;
    const Tensor probe = rng.tensor({1, l.conv.in_channels, opt.probe_size, opt.probe_size});

    if (opt.merge_lora && l.lora) {
      const Tensor before = run_conv_layer(l, probe);
      const int64_t params_before = layer_param_count(l);
      l.conv = lora_merge(l.conv, *l.lora);
      l.lora.reset();
      result.records.push_back(
          {l.name, "lora_merge", compare(run_conv_layer(l, probe), before), false, params_before, layer_param_count(l)});
    }
    if (opt.collapse && (!l.branches.empty() || l.identity_branch)) {
      if (l.lora) throw Error("rewrite: '" + l.name + "' must have its LoRA merged before branches are collapsed");
      const Tensor before = run_conv_layer(l, probe);
      const int64_t params_before = layer_param_count(l);
      std::vector<ConvSpec> parts{l.conv};
      parts.insert(parts.end(), l.branches.begin(), l.branches.end());
      l.conv = collapse_branches(parts, l.identity_branch);
      l.branches.clear();
      l.identity_branch = false;
      result.records.push_back({l.name, "collapse_branches", compare(run_conv_layer(l, probe), before), false,
                                params_before, layer_param_count(l)});
    }
  }

  if (opt.compose) {
    for (size_t i = 0; i < g.layers.size(); ++i) {
      LayerSpec& second = g.layers[i];
      if (!plain_conv(second)) continue;
      LayerSpec* first = g.find(second.inputs[0]);
      if (!first || !plain_conv(*first)) continue;

      const bool drop_first = consumers(g, first->name) == 1;
      const ConvSpec composed = compose_convs(first->conv, second.conv);
      const int64_t before_params = second.conv.param_count() + (drop_first ? first->conv.param_count() : 0);
      if (composed.param_count() >= before_params) continue;

      const int size = std::max(opt.probe_size, 2 * (composed.kernel.h + composed.kernel.w));
      const Tensor probe = rng.tensor({1, first->conv.in_channels, size, size});
      const Tensor sequential = conv2d(conv2d(probe, first->conv), second.conv);
      const Tensor fused = conv2d(probe, composed);
      const Margin margin = interior_margin(second.conv);

      const std::string first_name = first->name;
      second.inputs = first->inputs;
      second.conv = composed;
      result.records.push_back({second.name, "compose_convs", compare(crop(fused, margin), crop(sequential, margin)),
                                true, before_params, composed.param_count()});
      if (drop_first) {
        g.layers.erase(g.layers.begin() + static_cast<std::ptrdiff_t>(g.find(first_name) - g.layers.data()));
        --i;
      }
    }
  }
  g.validate();
  return result;
}

}  // namespace esr
