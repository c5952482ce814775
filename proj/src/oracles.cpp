#include "esr/oracles.hpp"

#include <cmath>
#include <numbers>

namespace esr::oracle {

namespace {

double at_or_zero(const Tensor& t, int64_t n, int64_t c, int64_t y, int64_t x) {
  if (y < 0 || x < 0 || y >= t.h() || x >= t.w()) return 0.0;
  return t.at(n, c, y, x);
}

void require(bool ok, const char* what) {
  if (!ok) throw ShapeError(std::string("oracle: ") + what);
}

}  // namespace

Tensor conv2d(const Tensor& in, const ConvSpec& s) {
  require(in.c() == s.in_channels, "conv input channels");
  require(s.groups >= 1 && s.in_channels % s.groups == 0 && s.out_channels % s.groups == 0, "conv groups");
  const int64_t ho = in.h() + 2 * s.padding.h - s.kernel.h + 1;
  const int64_t wo = in.w() + 2 * s.padding.w - s.kernel.w + 1;
  require(ho > 0 && wo > 0, "conv output extent");
  const int cin_g = s.in_channels / s.groups;
  const int cout_g = s.out_channels / s.groups;
  Tensor out({in.n(), s.out_channels, ho, wo});
  for (int64_t n = 0; n < in.n(); ++n)
    for (int o = 0; o < s.out_channels; ++o) {
      const int g = o / cout_g;
      for (int64_t y = 0; y < ho; ++y)
        for (int64_t x = 0; x < wo; ++x) {
          double acc = s.has_bias() ? s.bias.at(o) : 0.0;
          for (int i = 0; i < cin_g; ++i)
            for (int ky = 0; ky < s.kernel.h; ++ky)
              for (int kx = 0; kx < s.kernel.w; ++kx) {
                const size_t widx = ((static_cast<size_t>(o) * cin_g + i) * s.kernel.h + ky) * s.kernel.w + kx;
                acc += double{s.weight.at(widx)} *
                       at_or_zero(in, n, g * cin_g + i, y + ky - s.padding.h, x + kx - s.padding.w);
              }
          out.at(n, o, y, x) = static_cast<float>(acc);
        }
    }
  return out;
}

Tensor attention(const Tensor& x, const Tensor& f3, const ConvSpec& attn) {
  require(x.shape() == f3.shape(), "attention operand shapes");
  require(attn.in_channels == f3.c() && attn.out_channels == f3.c(), "attention widths");
  require(attn.kernel == Extent2{1, 1} && attn.groups == 1, "attention must be a dense 1x1 conv");
  Tensor out(x.shape());
  const int64_t C = x.c();
  for (int64_t n = 0; n < x.n(); ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t y = 0; y < x.h(); ++y)
        for (int64_t v = 0; v < x.w(); ++v) {
          double m = attn.has_bias() ? attn.bias[c] : 0.0;
          for (int64_t k = 0; k < C; ++k) m += double{attn.weight[c * C + k]} * f3.at(n, k, y, v);
          out.at(n, c, y, v) = static_cast<float>((double{x.at(n, c, y, v)} + f3.at(n, c, y, v)) * m);
        }
  return out;
}

PlanTraffic fused_plan_traffic(int64_t numel) {
  const auto N = static_cast<uint64_t>(numel);
  // one kernel: read x, read f3, write y
  return {2 * N, N};
}

PlanTraffic reference_plan_traffic(int64_t numel) {
  const auto N = static_cast<uint64_t>(numel);
  struct Step {
    int reads, writes;
  };
  // m = conv1x1(f3); s = x + f3; y = s * m
  const Step steps[] = {{1, 1}, {2, 1}, {2, 1}};
  PlanTraffic t;
  for (const Step& s : steps) {
    t.reads += s.reads * N;
    t.writes += s.writes * N;
  }
  return t;
}

Tensor nearest_upsample(const Tensor& in, int s) {
  require(s >= 1, "scale");
  Tensor out({in.n(), in.c(), in.h() * s, in.w() * s});
  for (int64_t n = 0; n < out.n(); ++n)
    for (int64_t c = 0; c < out.c(); ++c)
      for (int64_t y = 0; y < out.h(); ++y)
        for (int64_t x = 0; x < out.w(); ++x) out.at(n, c, y, x) = in.at(n, c, y / s, x / s);
  return out;
}

Tensor pixel_shuffle(const Tensor& in, int s) {
  require(s >= 1 && in.c() % (s * s) == 0, "pixel_shuffle channels");
  Tensor out({in.n(), in.c() / (s * s), in.h() * s, in.w() * s});
  for (int64_t n = 0; n < out.n(); ++n)
    for (int64_t c = 0; c < out.c(); ++c)
      for (int64_t y = 0; y < out.h(); ++y)
        for (int64_t x = 0; x < out.w(); ++x)
          out.at(n, c, y, x) = in.at(n, c * s * s + (y % s) * s + (x % s), y / s, x / s);
  return out;
}

Tensor sequential(const Tensor& input, const ConvSpec& first, const ConvSpec& second) {
  return oracle::conv2d(oracle::conv2d(input, first), second);
}

Tensor branch_sum(const Tensor& input, std::span<const ConvSpec> branches, bool identity) {
  require(!branches.empty(), "branch_sum needs a branch");
  Tensor acc = oracle::conv2d(input, branches.front());
  for (size_t b = 1; b < branches.size(); ++b) {
    const Tensor y = oracle::conv2d(input, branches[b]);
    require(y.shape() == acc.shape(), "branch output shapes");
    for (int64_t i = 0; i < acc.numel(); ++i) acc.data()[i] = static_cast<float>(double{acc.data()[i]} + y.data()[i]);
  }
  if (identity) {
    require(input.shape() == acc.shape(), "identity branch shape");
    for (int64_t i = 0; i < acc.numel(); ++i)
      acc.data()[i] = static_cast<float>(double{acc.data()[i]} + input.data()[i]);
  }
  return acc;
}

std::vector<float> lora_delta(const ConvSpec& base, const LoraFactors& lora) {
  const int64_t k = lora.kernel;
  const int64_t r = lora.rank;
  const int64_t cols = base.in_channels * k;
  const int64_t rk = r * k;
  std::vector<float> delta(base.weight.size());
  for (int64_t f = 0; f < static_cast<int64_t>(delta.size()); ++f) {
    const int64_t row = f / cols, col = f % cols;
    double acc = 0.0;
    for (int64_t j = 0; j < rk; ++j) acc += double{lora.b.at(row * rk + j)} * lora.a.at(j * cols + col);
    delta[f] = static_cast<float>(acc * lora.alpha / static_cast<double>(r));
  }
  return delta;
}

Tensor lora_output(const Tensor& input, const ConvSpec& base, const LoraFactors& lora) {
  ConvSpec d = base;
  d.weight = oracle::lora_delta(base, lora);
  d.bias.clear();
  Tensor y = oracle::conv2d(input, base);
  const Tensor dy = oracle::conv2d(input, d);
  for (int64_t i = 0; i < y.numel(); ++i) y.data()[i] = static_cast<float>(double{y.data()[i]} + dy.data()[i]);
  return y;
}

WaveletSubbands haar_dwt(const Tensor& x) {
  require(x.h() % 2 == 0 && x.w() % 2 == 0, "haar needs even extents");
  const Shape half{x.n(), x.c(), x.h() / 2, x.w() / 2};
  WaveletSubbands sb{Tensor(half), Tensor(half), Tensor(half), Tensor(half)};
  // signs of (a, b, c, d) for each subband
  const int sign[4][4] = {{1, 1, 1, 1}, {1, -1, 1, -1}, {1, 1, -1, -1}, {1, -1, -1, 1}};
  Tensor* bands[4] = {&sb.ll, &sb.hl, &sb.lh, &sb.hh};
  for (int64_t n = 0; n < x.n(); ++n)
    for (int64_t c = 0; c < x.c(); ++c)
      for (int64_t y = 0; y < half.h; ++y)
        for (int64_t v = 0; v < half.w; ++v) {
          const double px[4] = {x.at(n, c, 2 * y, 2 * v), x.at(n, c, 2 * y, 2 * v + 1), x.at(n, c, 2 * y + 1, 2 * v),
                                x.at(n, c, 2 * y + 1, 2 * v + 1)};
          for (int b = 0; b < 4; ++b) {
            double acc = 0.0;
            for (int j = 0; j < 4; ++j) acc += sign[b][j] * px[j];
            bands[b]->at(n, c, y, v) = static_cast<float>(acc / 2.0);
          }
        }
  return sb;
}

Tensor entropy(const Tensor& x, double eps) {
  const int64_t hw = x.h() * x.w();
  require(hw >= 2, "entropy needs two positions");
  Tensor out({x.n(), x.c(), 1, 1});
  for (int64_t n = 0; n < x.n(); ++n)
    for (int64_t c = 0; c < x.c(); ++c) {
      double sum = 0.0;
      for (int64_t y = 0; y < x.h(); ++y)
        for (int64_t v = 0; v < x.w(); ++v) sum += x.at(n, c, y, v);
      const double mean = sum / static_cast<double>(hw);
      double ss = 0.0;
      for (int64_t y = 0; y < x.h(); ++y)
        for (int64_t v = 0; v < x.w(); ++v) ss += std::pow(x.at(n, c, y, v) - mean, 2);
      const double var = std::max(ss / static_cast<double>(hw - 1), eps);
      out.at(n, c, 0, 0) = static_cast<float>(0.5 * std::log(2.0 * std::numbers::pi * var));
    }
  return out;
}

double scalar_iterate(double s, int steps, const QuinticCoefficients& k) {
  for (int i = 0; i < steps; ++i) s = k.a * s + k.b * s * s * s + k.c * s * s * s * s * s;
  return s;
}

std::vector<double> affinity(const Tensor& f, int64_t sample) {
  const int64_t hw = f.h() * f.w();
  auto value = [&](int64_t pos, int64_t c) -> double { return f.at(sample, c, pos / f.w(), pos % f.w()); };
  std::vector<double> norms(static_cast<size_t>(hw));
  for (int64_t p = 0; p < hw; ++p) {
    double s = 0.0;
    for (int64_t c = 0; c < f.c(); ++c) s += value(p, c) * value(p, c);
    norms[p] = std::sqrt(s);
  }
  std::vector<double> a(static_cast<size_t>(hw * hw), 0.0);
  for (int64_t i = 0; i < hw; ++i)
    for (int64_t j = 0; j < hw; ++j) {
      if (norms[i] == 0.0 || norms[j] == 0.0) continue;
      double dot = 0.0;
      for (int64_t c = 0; c < f.c(); ++c) dot += value(i, c) * value(j, c);
      a[i * hw + j] = dot / (norms[i] * norms[j]);
    }
  return a;
}

double affinity_loss(std::span<const Tensor> student, std::span<const Tensor> teacher) {
  require(student.size() == teacher.size() && !student.empty(), "affinity layer lists");
  double total = 0.0;
  for (size_t l = 0; l < student.size(); ++l) {
    double layer = 0.0;
    for (int64_t n = 0; n < student[l].n(); ++n) {
      const auto as = oracle::affinity(student[l], n);
      const auto at = oracle::affinity(teacher[l], n);
      double sum = 0.0;
      for (size_t i = 0; i < as.size(); ++i) sum += std::abs(as[i] - at[i]);
      layer += sum / static_cast<double>(as.size());
    }
    total += layer / static_cast<double>(student[l].n());
  }
  return total / static_cast<double>(student.size());
}

}  // namespace esr::oracle
