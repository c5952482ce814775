#pragma once

#include "esr/graph.hpp"

#include <cstdint>
#include <string>

namespace esr {

// Three 3x3 convs and the 1x1 attention projection of one SPABV2 block.
struct BlockSpec {
  ConvSpec conv_a;
  ConvSpec conv_b;
  ConvSpec conv_c;
  ConvSpec attn;

  void validate() const;
};

// f1 = relu(conv_a x), f2 = relu(conv_b f1), f3 = conv_c f2, m = attn f3,
// y = (r + f3) * m where r = x, or f1 when the block changes width.
Tensor spabv2_forward(const Tensor& x, const BlockSpec& block, ExecMode mode, TrafficCounter* traffic = nullptr);

// SPAN's parameter-free gate: elementwise product of two same-shape features.
Tensor span_baseline_attention(const Tensor& f1, const Tensor& f3);

// Centre tap of each of the s^2 sub-channels per colour set to 1, everything
// else (bias included) zero. Expects a 3 -> 3*s^2 depthwise 3x3 conv.
ConvSpec near_pixel_init(const ConvSpec& spec, int scale);

struct SpanV2Config {
  int channels = 32;
  int blocks = 5;
  int scale = 4;
  int in_channels = 3;
};

// Near-pixel branch, `blocks` SPABV2 blocks, concat, depthwise + pointwise
// fusion head, pixel shuffle. Weights are zero until initialised.
ModelGraph build_spanv2(const SpanV2Config& config = {});
inline ModelGraph build_spanv2(int channels, int scale) { return build_spanv2({channels, 5, scale, 3}); }

struct SpanConfig {
  int channels = 28;
  int blocks = 6;
  int scale = 4;
  int in_channels = 3;
};

// The SPAN baseline: head conv, SPAB blocks with SiLU and the centred-sigmoid
// gate, skip concatenation, 1x1 aggregation, 3x3 tail, conv + pixel shuffle.
ModelGraph build_span_baseline(const SpanConfig& config = {});

// Layers of SPABV2 block `index` (1-based).
BlockSpec block_of(const ModelGraph& graph, int index);

// Default widths for "spanv2" or "span"; throws for other names.
GraphMeta default_meta(const std::string& model);

// Builds "spanv2" or "span" from a GraphMeta (model name + widths).
ModelGraph build_model(const GraphMeta& meta);

// Seeded random weights; for SPANV2 the near-pixel branch gets near_pixel_init.
void initialize(ModelGraph& graph, uint64_t seed);

struct AdapterConfig {
  int lora_rank = 2;
  float lora_alpha = 4.0f;
  bool parallel_1x1 = true;
  bool identity = true;
};

// Attaches training-time structure (1x1 branch, identity, LoRA) to every
// groups = 1 3x3 conv; the result is foldable back to the plain topology.
void attach_adapters(ModelGraph& graph, const AdapterConfig& config, uint64_t seed);

}  // namespace esr
