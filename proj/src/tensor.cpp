#include "esr/tensor.hpp"

#include "esr/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace esr {

namespace {

std::string dims(const char* op, const char* what, int64_t got, int64_t want) {
  std::ostringstream os;
  os << op << ": " << what << " mismatch (" << got << " vs " << want << ")";
  return os.str();
}

void require_positive(const Shape& s) {
  if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1)
    throw ShapeError("tensor: all extents must be >= 1, got " + s.str());
}

template <typename F>
Tensor map_unary(const Tensor& input, F f) {
  Tensor out(input.shape());
  const float* src = input.ptr();
  float* dst = out.ptr();
  const int64_t n = input.numel();
  for (int64_t i = 0; i < n; ++i) dst[i] = f(src[i]);
  return out;
}

bool is_channel_vector(const Shape& s, int64_t c) {
  return s.n == 1 && s.c == c && s.h == 1 && s.w == 1;
}

}  // namespace

std::string Shape::str() const {
  std::ostringstream os;
  os << n << "x" << c << "x" << h << "x" << w;
  return os.str();
}

Tensor::Tensor(Shape shape, float fill) : shape_(shape) {
  require_positive(shape_);
  data_.assign(static_cast<size_t>(shape_.numel()), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(shape), data_(std::move(data)) {
  require_positive(shape_);
  if (static_cast<int64_t>(data_.size()) != shape_.numel())
    throw ShapeError(dims("tensor", "data length", static_cast<int64_t>(data_.size()), shape_.numel()));
}

ConvSpec ConvSpec::make(int in, int out, int k, int groups, bool bias) {
  ConvSpec s;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel = {k, k};
  s.padding = {k / 2, k / 2};
  s.groups = groups;
  s.validate();
  s.weight.assign(static_cast<size_t>(s.weight_count()), 0.0f);
  if (bias) s.bias.assign(static_cast<size_t>(out), 0.0f);
  return s;
}

void ConvSpec::validate() const {
  if (in_channels < 1 || out_channels < 1 || groups < 1)
    throw ShapeError("conv: channel and group counts must be >= 1");
  if (kernel.h < 1 || kernel.w < 1) throw ShapeError("conv: kernel extents must be >= 1");
  if (padding.h < 0 || padding.w < 0) throw ShapeError("conv: padding must be >= 0");
  if (in_channels % groups != 0)
    throw ShapeError(dims("conv", "in_channels % groups", in_channels % groups, 0));
  if (out_channels % groups != 0)
    throw ShapeError(dims("conv", "out_channels % groups", out_channels % groups, 0));
  if (!weight.empty() && static_cast<int64_t>(weight.size()) != weight_count())
    throw ShapeError(dims("conv", "weight length", static_cast<int64_t>(weight.size()), weight_count()));
  if (!bias.empty() && static_cast<int>(bias.size()) != out_channels)
    throw ShapeError(dims("conv", "bias length", static_cast<int64_t>(bias.size()), out_channels));
}

Shape conv_output_shape(const Shape& input, const ConvSpec& spec) {
  if (input.c != spec.in_channels)
    throw ShapeError(dims("conv2d", "input channels", input.c, spec.in_channels));
  const int64_t ho = input.h + 2 * spec.padding.h - spec.kernel.h + 1;
  const int64_t wo = input.w + 2 * spec.padding.w - spec.kernel.w + 1;
  if (ho < 1) throw ShapeError(dims("conv2d", "output height", ho, 1));
  if (wo < 1) throw ShapeError(dims("conv2d", "output width", wo, 1));
  return {input.n, spec.out_channels, ho, wo};
}

Tensor conv2d(const Tensor& input, const ConvSpec& spec, int threads) {
  spec.validate();
  if (static_cast<int64_t>(spec.weight.size()) != spec.weight_count())
    throw ShapeError(dims("conv2d", "weight length", static_cast<int64_t>(spec.weight.size()), spec.weight_count()));
  const Shape os = conv_output_shape(input.shape(), spec);
  Tensor out(os);

  const int64_t H = input.h(), W = input.w();
  const int64_t Ho = os.h, Wo = os.w;
  const int kh = spec.kernel.h, kw = spec.kernel.w;
  const int ph = spec.padding.h, pw = spec.padding.w;
  const int cin_g = spec.in_per_group();
  const int cout_g = spec.out_channels / spec.groups;

  parallel_for(os.n * os.c, threads, [&](int64_t begin, int64_t end) {
    // double accumulator per output plane, rounded once at the end
    std::vector<double> acc(static_cast<size_t>(Ho * Wo));
    for (int64_t job = begin; job < end; ++job) {
      const int64_t n = job / os.c;
      const int o = static_cast<int>(job % os.c);
      const int g = o / cout_g;
      double* dst = acc.data();
      std::fill(acc.begin(), acc.end(), spec.has_bias() ? double{spec.bias[o]} : 0.0);
      for (int i = 0; i < cin_g; ++i) {
        const float* src = input.plane(n, static_cast<int64_t>(g) * cin_g + i);
        for (int ky = 0; ky < kh; ++ky) {
          // output rows whose tap ky lands inside the input
          const int64_t y0 = std::max<int64_t>(0, ph - ky);
          const int64_t y1 = std::min<int64_t>(Ho, H + ph - ky);
          for (int kx = 0; kx < kw; ++kx) {
            const double wv = spec.w(o, i, ky, kx);
            if (wv == 0.0) continue;
            const int64_t x0 = std::max<int64_t>(0, pw - kx);
            const int64_t x1 = std::min<int64_t>(Wo, W + pw - kx);
            const int64_t shift = kx - pw;
            for (int64_t y = y0; y < y1; ++y) {
              double* drow = dst + y * Wo;
              const float* srow = src + (y + ky - ph) * W + shift;
              for (int64_t x = x0; x < x1; ++x) drow[x] += wv * srow[x];
            }
          }
        }
      }
      float* plane = out.plane(n, o);
      for (int64_t p = 0; p < Ho * Wo; ++p) plane[p] = static_cast<float>(acc[p]);
    }
  });
  return out;
}

Tensor relu(const Tensor& input) {
  return map_unary(input, [](float v) { return v > 0.0f ? v : 0.0f; });
}

Tensor silu(const Tensor& input) {
  return map_unary(input, [](float v) { return v / (1.0f + std::exp(-v)); });
}

Tensor sigmoid(const Tensor& input) {
  return map_unary(input, [](float v) { return 1.0f / (1.0f + std::exp(-v)); });
}

Tensor centered_sigmoid(const Tensor& input) {
  return map_unary(input, [](float v) { return 1.0f / (1.0f + std::exp(-v)) - 0.5f; });
}

Tensor pixel_shuffle(const Tensor& input, int scale) {
  if (scale < 1) throw ShapeError("pixel_shuffle: scale must be >= 1");
  const int64_t s2 = int64_t{scale} * scale;
  if (input.c() % s2 != 0) throw ShapeError(dims("pixel_shuffle", "channels % scale^2", input.c() % s2, 0));
  const Shape is = input.shape();
  Tensor out({is.n, is.c / s2, is.h * scale, is.w * scale});
  for (int64_t n = 0; n < is.n; ++n)
    for (int64_t c = 0; c < is.c; ++c) {
      const int64_t oc = c / s2;
      const int64_t k = c % s2;
      const int64_t dy = k / scale, dx = k % scale;
      const float* src = input.plane(n, c);
      for (int64_t y = 0; y < is.h; ++y)
        for (int64_t x = 0; x < is.w; ++x)
          out.at(n, oc, y * scale + dy, x * scale + dx) = src[y * is.w + x];
    }
  return out;
}

Tensor pixel_unshuffle(const Tensor& input, int scale) {
  if (scale < 1) throw ShapeError("pixel_unshuffle: scale must be >= 1");
  const Shape is = input.shape();
  if (is.h % scale != 0) throw ShapeError(dims("pixel_unshuffle", "height % scale", is.h % scale, 0));
  if (is.w % scale != 0) throw ShapeError(dims("pixel_unshuffle", "width % scale", is.w % scale, 0));
  const int64_t s2 = int64_t{scale} * scale;
  Tensor out({is.n, is.c * s2, is.h / scale, is.w / scale});
  for (int64_t n = 0; n < is.n; ++n)
    for (int64_t oc = 0; oc < out.c(); ++oc) {
      const int64_t c = oc / s2;
      const int64_t k = oc % s2;
      const int64_t dy = k / scale, dx = k % scale;
      for (int64_t y = 0; y < out.h(); ++y)
        for (int64_t x = 0; x < out.w(); ++x)
          out.at(n, oc, y, x) = input.at(n, c, y * scale + dy, x * scale + dx);
    }
  return out;
}

Tensor nearest_upsample(const Tensor& input, int scale) {
  if (scale < 1) throw ShapeError("nearest_upsample: scale must be >= 1");
  const Shape is = input.shape();
  Tensor out({is.n, is.c, is.h * scale, is.w * scale});
  for (int64_t n = 0; n < is.n; ++n)
    for (int64_t c = 0; c < is.c; ++c)
      for (int64_t y = 0; y < out.h(); ++y)
        for (int64_t x = 0; x < out.w(); ++x) out.at(n, c, y, x) = input.at(n, c, y / scale, x / scale);
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("add: shape mismatch (" + a.shape().str() + " vs " + b.shape().str() + ")");
  Tensor out(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.ptr()[i] = a.ptr()[i] + b.ptr()[i];
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) {
    Tensor out(a.shape());
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) out.ptr()[i] = a.ptr()[i] * b.ptr()[i];
    return out;
  }
  const bool b_vec = is_channel_vector(b.shape(), a.c());
  const bool a_vec = is_channel_vector(a.shape(), b.c());
  if (!b_vec && !a_vec)
    throw ShapeError("mul: shape mismatch (" + a.shape().str() + " vs " + b.shape().str() + ")");
  const Tensor& full = b_vec ? a : b;
  const Tensor& vec = b_vec ? b : a;
  Tensor out(full.shape());
  for (int64_t n = 0; n < full.n(); ++n)
    for (int64_t c = 0; c < full.c(); ++c) {
      const float f = vec.ptr()[c];
      const float* src = full.plane(n, c);
      float* dst = out.plane(n, c);
      for (int64_t i = 0; i < full.shape().plane(); ++i) dst[i] = src[i] * f;
    }
  return out;
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape first = parts.front().shape();
  int64_t channels = 0;
  for (const Tensor& p : parts) {
    if (p.n() != first.n) throw ShapeError(dims("concat_channels", "batch", p.n(), first.n));
    if (p.h() != first.h) throw ShapeError(dims("concat_channels", "height", p.h(), first.h));
    if (p.w() != first.w) throw ShapeError(dims("concat_channels", "width", p.w(), first.w));
    channels += p.c();
  }
  Tensor out({first.n, channels, first.h, first.w});
  const int64_t plane = first.h * first.w;
  for (int64_t n = 0; n < first.n; ++n) {
    int64_t c0 = 0;
    for (const Tensor& p : parts) {
      std::memcpy(out.plane(n, c0), p.plane(n, 0), static_cast<size_t>(p.c() * plane) * sizeof(float));
      c0 += p.c();
    }
  }
  return out;
}

Tensor slice_channels(const Tensor& input, int64_t begin, int64_t count) {
  if (begin < 0 || count < 1 || begin + count > input.c())
    throw ShapeError(dims("slice_channels", "channel range end", begin + count, input.c()));
  Tensor out({input.n(), count, input.h(), input.w()});
  const int64_t plane = input.shape().plane();
  for (int64_t n = 0; n < input.n(); ++n)
    std::memcpy(out.plane(n, 0), input.plane(n, begin), static_cast<size_t>(count * plane) * sizeof(float));
  return out;
}

Discrepancy compare(std::span<const float> got, std::span<const float> want) {
  if (got.size() != want.size())
    throw ShapeError(dims("compare", "length", static_cast<int64_t>(got.size()), static_cast<int64_t>(want.size())));
  constexpr double floor = kAbsTol / kRelTol;
  Discrepancy d;
  for (size_t i = 0; i < got.size(); ++i) {
    const double diff = std::abs(double{got[i]} - double{want[i]});
    if (std::isnan(diff)) return {INFINITY, INFINITY};
    d.max_abs = std::max(d.max_abs, diff);
    d.max_rel = std::max(d.max_rel, diff / std::max(std::abs(double{want[i]}), floor));
  }
  return d;
}

Discrepancy compare(const Tensor& got, const Tensor& want) {
  if (got.shape() != want.shape())
    throw ShapeError("compare: shape mismatch (" + got.shape().str() + " vs " + want.shape().str() + ")");
  return compare(got.data(), want.data());
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.ptr(), b.ptr(), static_cast<size_t>(a.numel()) * sizeof(float)) == 0;
}

}  // namespace esr
