#pragma once

#include "esr/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace esr {

// Logical element traffic of one execution plan. One unit is one 32-bit
// element loaded from or stored to a tensor buffer; parameters are not counted.
struct TrafficCounter {
  uint64_t element_reads = 0;
  uint64_t element_writes = 0;

  uint64_t total() const { return element_reads + element_writes; }
  void reset() { *this = {}; }
};

// y = (x + f3) * (b + W f3), one pass over the spatial grid. For each pixel the
// C-vectors of x and f3 are loaded once and the C outputs stored once, so the
// counter advances by 2N reads and N writes for N = C*H*W per sample.
Tensor fused_attention(const Tensor& x, const Tensor& f3, const ConvSpec& attn, TrafficCounter* counter = nullptr);

// The unfused plan: m = conv1x1(f3); s = x + f3; y = s * m. Every intermediate is
// materialised, giving 5N reads and 3N writes.
Tensor reference_attention(const Tensor& x, const Tensor& f3, const ConvSpec& attn, TrafficCounter* counter = nullptr);

// Low-rank update of a k x k kernel: A is (r*k) x (c_in*k), B is (c_out*k) x (r*k),
// delta W = (alpha / r) * B A viewed as (c_out, c_in, k, k) in row-major order.
struct LoraFactors {
  int rank = 1;
  int kernel = 1;
  float alpha = 1.0f;
  std::vector<float> a;
  std::vector<float> b;

  float scale() const { return alpha / static_cast<float>(rank); }
  void validate(const ConvSpec& base) const;
};

// (alpha / r) * reshape(B A), laid out like base.weight.
std::vector<float> lora_delta(const ConvSpec& base, const LoraFactors& lora);

ConvSpec lora_merge(const ConvSpec& base, const LoraFactors& lora);

// Single conv equal to running `first` then `second` (no nonlinearity between).
// Exact away from the border; see interior_margin.
ConvSpec compose_convs(const ConvSpec& first, const ConvSpec& second);

// Rows/cols at the top-left and bottom-right where a composed conv may differ
// from sequential execution because the intermediate's halo was zero-filled.
struct Margin {
  int top = 0, left = 0, bottom = 0, right = 0;
};
Margin interior_margin(const ConvSpec& second);

// Sequential execution on the zero-extended domain: the intermediate is computed
// on an input padded by second's padding, so its halo holds true values. Matches
// compose_convs over the full plane.
Tensor sequential_extended(const Tensor& input, const ConvSpec& first, const ConvSpec& second);

// Sum of parallel branches (kernels up to 3x3, "same" padding) as one 3x3 conv,
// optionally with an identity branch.
ConvSpec collapse_branches(std::span<const ConvSpec> branches, bool include_identity);

// Zero-pads a kernel with same padding to a larger odd kernel, centred.
ConvSpec pad_kernel_to(const ConvSpec& spec, int kernel);

}  // namespace esr
