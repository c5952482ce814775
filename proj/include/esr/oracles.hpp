#pragma once

// Slow, direct reference implementations. Each one is written from the
// defining formula with double accumulation and explicit bounds checks, and
// shares no code with the optimised paths it is used to check.

#include "esr/fusion.hpp"
#include "esr/kernels.hpp"
#include "esr/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace esr::oracle {

// y[n,o,y,x] = b[o] + sum over the group's inputs and taps of w * in, with
// out-of-range taps contributing zero.
Tensor conv2d(const Tensor& input, const ConvSpec& spec);

// (x + f3) * (b + W f3) evaluated element by element.
Tensor attention(const Tensor& x, const Tensor& f3, const ConvSpec& attn);

// Element accesses implied by listing each plan's reads and writes.
struct PlanTraffic {
  uint64_t reads = 0;
  uint64_t writes = 0;
  uint64_t total() const { return reads + writes; }
};
PlanTraffic fused_plan_traffic(int64_t numel);
PlanTraffic reference_plan_traffic(int64_t numel);

Tensor nearest_upsample(const Tensor& input, int scale);
Tensor pixel_shuffle(const Tensor& input, int scale);

// second(first(x)) with each conv evaluated by oracle::conv2d.
Tensor sequential(const Tensor& input, const ConvSpec& first, const ConvSpec& second);

// Sum of every branch's output, plus x itself when `identity` is set.
Tensor branch_sum(const Tensor& input, std::span<const ConvSpec> branches, bool identity);

// delta[f] = scale * sum_j B[f / cols, j] A[j, f % cols] for the flat index f
// of the base weight, cols = c_in * k.
std::vector<float> lora_delta(const ConvSpec& base, const LoraFactors& lora);

// base(x) + conv(x, delta) with no bias on the delta conv.
Tensor lora_output(const Tensor& input, const ConvSpec& base, const LoraFactors& lora);

// Haar analysis of one 2x2 block written out per subband.
WaveletSubbands haar_dwt(const Tensor& x);

// 0.5 ln(2 pi max(var, eps)) with the two-pass unbiased variance.
Tensor entropy(const Tensor& x, double eps);

// Singular values after `steps` applications of the scalar quintic to each
// singular value of a Frobenius-normalised matrix.
double scalar_iterate(double s, int steps, const QuinticCoefficients& k = {});

// A[i, j] = <f_i, f_j> / (|f_i| |f_j|) over the C-vectors at positions i and j.
std::vector<double> affinity(const Tensor& f, int64_t sample);

double affinity_loss(std::span<const Tensor> student, std::span<const Tensor> teacher);

}  // namespace esr::oracle
