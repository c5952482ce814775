#include "esr/fusion.hpp"

#include <algorithm>
#include <sstream>

namespace esr {

namespace {

void check_attention_operands(const Tensor& x, const Tensor& f3, const ConvSpec& attn, const char* op) {
  if (x.shape() != f3.shape())
    throw ShapeError(std::string(op) + ": x/f3 shape mismatch (" + x.shape().str() + " vs " + f3.shape().str() + ")");
  attn.validate();
  if (attn.kernel != Extent2{1, 1} || attn.groups != 1)
    throw ShapeError(std::string(op) + ": attention conv must be 1x1 with groups = 1");
  if (attn.in_channels != x.c() || attn.out_channels != x.c()) {
    std::ostringstream os;
    os << op << ": attention channels " << attn.in_channels << "->" << attn.out_channels
       << " do not match feature channels " << x.c();
    throw ShapeError(os.str());
  }
  if (static_cast<int64_t>(attn.weight.size()) != attn.weight_count())
    throw ShapeError(std::string(op) + ": attention weight length mismatch");
}

void check_odd_same(const ConvSpec& s, const char* op) {
  if (s.kernel.h % 2 == 0 || s.kernel.w % 2 == 0 || s.padding.h != s.kernel.h / 2 || s.padding.w != s.kernel.w / 2)
    throw ShapeError(std::string(op) + ": branch kernels must be odd with same padding");
}

}  // namespace

Tensor fused_attention(const Tensor& x, const Tensor& f3, const ConvSpec& attn, TrafficCounter* counter) {
  check_attention_operands(x, f3, attn, "fused_attention");
  const int64_t C = x.c();
  const int64_t HW = x.shape().plane();
  Tensor y(x.shape());
  std::vector<float> xv(static_cast<size_t>(C)), fv(static_cast<size_t>(C));
  uint64_t reads = 0, writes = 0;

  for (int64_t n = 0; n < x.n(); ++n) {
    const float* xb = x.plane(n, 0);
    const float* fb = f3.plane(n, 0);
    float* yb = y.plane(n, 0);
    for (int64_t p = 0; p < HW; ++p) {
      for (int64_t c = 0; c < C; ++c) {
        xv[c] = xb[c * HW + p];
        fv[c] = fb[c * HW + p];
      }
      reads += 2 * static_cast<uint64_t>(C);
      for (int64_t c = 0; c < C; ++c) {
        // same accumulation as conv2d: double, bias first, input channels ascending
        double m = attn.has_bias() ? double{attn.bias[c]} : 0.0;
        const float* wrow = attn.weight.data() + c * C;
        for (int64_t i = 0; i < C; ++i) m += double{wrow[i]} * fv[i];
        yb[c * HW + p] = (xv[c] + fv[c]) * static_cast<float>(m);
      }
      writes += static_cast<uint64_t>(C);
    }
  }
  if (counter) {
    counter->element_reads += reads;
    counter->element_writes += writes;
  }
  return y;
}

Tensor reference_attention(const Tensor& x, const Tensor& f3, const ConvSpec& attn, TrafficCounter* counter) {
  check_attention_operands(x, f3, attn, "reference_attention");
  const auto N = static_cast<uint64_t>(x.numel());
  Tensor m = conv2d(f3, attn);  // reads f3, writes m
  Tensor s = add(x, f3);        // reads x, f3, writes s
  Tensor y = mul(s, m);         // reads s, m, writes y
  if (counter) {
    counter->element_reads += 5 * N;
    counter->element_writes += 3 * N;
  }
  return y;
}

void LoraFactors::validate(const ConvSpec& base) const {
  if (rank < 1) throw ShapeError("lora: rank must be >= 1");
  if (base.kernel.h != base.kernel.w) throw ShapeError("lora: base kernel must be square");
  if (kernel != base.kernel.h) {
    std::ostringstream os;
    os << "lora: kernel size " << kernel << " does not match base kernel " << base.kernel.h;
    throw ShapeError(os.str());
  }
  const size_t rk = static_cast<size_t>(rank) * kernel;
  const size_t a_len = rk * static_cast<size_t>(base.in_channels) * kernel;
  const size_t b_len = static_cast<size_t>(base.out_channels / base.groups) * kernel * rk;
  if (a.size() != a_len) {
    std::ostringstream os;
    os << "lora: A has " << a.size() << " values, expected " << a_len;
    throw ShapeError(os.str());
  }
  if (b.size() != b_len) {
    std::ostringstream os;
    os << "lora: B has " << b.size() << " values, expected " << b_len;
    throw ShapeError(os.str());
  }
}

std::vector<float> lora_delta(const ConvSpec& base, const LoraFactors& lora) {
  base.validate();
  lora.validate(base);
  const size_t rk = static_cast<size_t>(lora.rank) * lora.kernel;
  const size_t rows = static_cast<size_t>(base.out_channels / base.groups) * lora.kernel;
  const size_t cols = static_cast<size_t>(base.in_channels) * lora.kernel;
  // accumulated in double and rounded once, so merged weights carry one rounding
  std::vector<double> acc(rows * cols, 0.0);
  for (size_t r = 0; r < rows; ++r)
    for (size_t j = 0; j < rk; ++j) {
      const double bv = lora.b[r * rk + j];
      if (bv == 0.0) continue;
      const float* arow = lora.a.data() + j * cols;
      double* drow = acc.data() + r * cols;
      for (size_t c = 0; c < cols; ++c) drow[c] += bv * arow[c];
    }
  const double scale = double{lora.alpha} / lora.rank;
  std::vector<float> delta(acc.size());
  for (size_t i = 0; i < acc.size(); ++i) delta[i] = static_cast<float>(acc[i] * scale);
  return delta;
}

ConvSpec lora_merge(const ConvSpec& base, const LoraFactors& lora) {
  const std::vector<float> delta = lora_delta(base, lora);
  if (delta.size() != base.weight.size()) throw ShapeError("lora_merge: base weight length mismatch");
  ConvSpec merged = base;
  for (size_t i = 0; i < delta.size(); ++i) merged.weight[i] += delta[i];
  return merged;
}

ConvSpec compose_convs(const ConvSpec& first, const ConvSpec& second) {
  first.validate();
  second.validate();
  if (first.groups != 1 || second.groups != 1) throw ShapeError("compose_convs: grouped convolutions are not supported");
  if (first.out_channels != second.in_channels) {
    std::ostringstream os;
    os << "compose_convs: channel mismatch (first.out_channels " << first.out_channels << " vs second.in_channels "
       << second.in_channels << ")";
    throw ShapeError(os.str());
  }
  ConvSpec out;
  out.in_channels = first.in_channels;
  out.out_channels = second.out_channels;
  out.kernel = {first.kernel.h + second.kernel.h - 1, first.kernel.w + second.kernel.w - 1};
  out.padding = {first.padding.h + second.padding.h, first.padding.w + second.padding.w};
  out.groups = 1;
  std::vector<double> acc(static_cast<size_t>(out.weight_count()), 0.0);
  auto at = [&](int o, int i, int y, int x) -> double& {
    return acc[((static_cast<size_t>(o) * out.in_channels + i) * out.kernel.h + y) * out.kernel.w + x];
  };

  const int mid = first.out_channels;
  for (int o = 0; o < out.out_channels; ++o)
    for (int m = 0; m < mid; ++m)
      for (int a = 0; a < second.kernel.h; ++a)
        for (int b = 0; b < second.kernel.w; ++b) {
          const double s = second.w(o, m, a, b);
          if (s == 0.0) continue;
          for (int i = 0; i < out.in_channels; ++i)
            for (int c = 0; c < first.kernel.h; ++c)
              for (int d = 0; d < first.kernel.w; ++d) at(o, i, a + c, b + d) += s * first.w(m, i, c, d);
        }
  out.weight.assign(acc.begin(), acc.end());

  if (first.has_bias() || second.has_bias()) {
    out.bias.assign(static_cast<size_t>(out.out_channels), 0.0f);
    for (int o = 0; o < out.out_channels; ++o) {
      double acc = second.has_bias() ? second.bias[o] : 0.0;
      if (first.has_bias())
        for (int m = 0; m < mid; ++m) {
          double taps = 0.0;
          for (int a = 0; a < second.kernel.h; ++a)
            for (int b = 0; b < second.kernel.w; ++b) taps += second.w(o, m, a, b);
          acc += double{first.bias[m]} * taps;
        }
      out.bias[o] = static_cast<float>(acc);
    }
  }
  return out;
}

Margin interior_margin(const ConvSpec& second) {
  return {second.padding.h, second.padding.w, second.kernel.h - 1 - second.padding.h,
          second.kernel.w - 1 - second.padding.w};
}

Tensor sequential_extended(const Tensor& input, const ConvSpec& first, const ConvSpec& second) {
  ConvSpec wide = first;
  wide.padding = {first.padding.h + second.padding.h, first.padding.w + second.padding.w};
  ConvSpec tail = second;
  tail.padding = {0, 0};
  return conv2d(conv2d(input, wide), tail);
}

ConvSpec pad_kernel_to(const ConvSpec& spec, int kernel) {
  check_odd_same(spec, "pad_kernel_to");
  if (kernel % 2 == 0 || kernel < spec.kernel.h || kernel < spec.kernel.w)
    throw ShapeError("pad_kernel_to: target kernel must be odd and no smaller than the source");
  ConvSpec out = spec;
  out.kernel = {kernel, kernel};
  out.padding = {kernel / 2, kernel / 2};
  out.weight.assign(static_cast<size_t>(out.weight_count()), 0.0f);
  const int oy = (kernel - spec.kernel.h) / 2;
  const int ox = (kernel - spec.kernel.w) / 2;
  for (int o = 0; o < spec.out_channels; ++o)
    for (int i = 0; i < spec.in_per_group(); ++i)
      for (int ky = 0; ky < spec.kernel.h; ++ky)
        for (int kx = 0; kx < spec.kernel.w; ++kx) out.w(o, i, ky + oy, kx + ox) = spec.w(o, i, ky, kx);
  return out;
}

ConvSpec collapse_branches(std::span<const ConvSpec> branches, bool include_identity) {
  if (branches.empty()) throw ShapeError("collapse_branches: no branches");
  const ConvSpec& ref = branches.front();
  for (const ConvSpec& b : branches) {
    b.validate();
    check_odd_same(b, "collapse_branches");
    if (b.in_channels != ref.in_channels || b.out_channels != ref.out_channels || b.groups != ref.groups) {
      std::ostringstream os;
      os << "collapse_branches: incompatible widths (" << b.in_channels << "->" << b.out_channels << "/g" << b.groups
         << " vs " << ref.in_channels << "->" << ref.out_channels << "/g" << ref.groups << ")";
      throw ShapeError(os.str());
    }
    if (b.kernel.h > 3 || b.kernel.w > 3) throw ShapeError("collapse_branches: branch kernels must be at most 3x3");
  }
  if (include_identity && ref.in_channels != ref.out_channels)
    throw ShapeError("collapse_branches: identity branch requires in_channels == out_channels");

  ConvSpec out = ConvSpec::make(ref.in_channels, ref.out_channels, 3, ref.groups, false);
  bool any_bias = false;
  for (const ConvSpec& b : branches) {
    const ConvSpec padded = pad_kernel_to(b, 3);
    for (size_t i = 0; i < out.weight.size(); ++i) out.weight[i] += padded.weight[i];
    any_bias = any_bias || b.has_bias();
  }
  if (include_identity) {
    const int per_group = out.in_per_group();
    for (int o = 0; o < out.out_channels; ++o) out.w(o, o % per_group, 1, 1) += 1.0f;
  }
  if (any_bias) {
    out.bias.assign(static_cast<size_t>(out.out_channels), 0.0f);
    for (const ConvSpec& b : branches)
      if (b.has_bias())
        for (int o = 0; o < out.out_channels; ++o) out.bias[o] += b.bias[o];
  }
  return out;
}

}  // namespace esr
