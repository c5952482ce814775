#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace esr {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Thrown when operand extents disagree; the message names the offending dimension.
class ShapeError : public Error {
 public:
  using Error::Error;
};

struct Shape {
  int64_t n = 1;
  int64_t c = 1;
  int64_t h = 1;
  int64_t w = 1;

  int64_t numel() const { return n * c * h * w; }
  int64_t plane() const { return h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

// Dense NCHW float32 tensor with value semantics.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  const Shape& shape() const { return shape_; }
  int64_t n() const { return shape_.n; }
  int64_t c() const { return shape_.c; }
  int64_t h() const { return shape_.h; }
  int64_t w() const { return shape_.w; }
  int64_t numel() const { return shape_.numel(); }
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  float* ptr() { return data_.data(); }
  const float* ptr() const { return data_.data(); }

  int64_t offset(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  float& at(int64_t n, int64_t c, int64_t h, int64_t w) { return data_[offset(n, c, h, w)]; }
  float at(int64_t n, int64_t c, int64_t h, int64_t w) const { return data_[offset(n, c, h, w)]; }

  // Pointer to the h*w plane of (n, c).
  float* plane(int64_t n, int64_t c) { return data_.data() + offset(n, c, 0, 0); }
  const float* plane(int64_t n, int64_t c) const { return data_.data() + offset(n, c, 0, 0); }

 private:
  Shape shape_{};
  std::vector<float> data_;
};

struct Extent2 {
  int h = 1;
  int w = 1;
  bool operator==(const Extent2&) const = default;
};

// One convolution layer: stride 1, zero padding, optional grouping.
struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  Extent2 kernel{1, 1};
  Extent2 padding{0, 0};
  int groups = 1;
  std::vector<float> weight;  // out x (in/groups) x kh x kw
  std::vector<float> bias;    // empty or out

  int in_per_group() const { return in_channels / groups; }
  int64_t weight_count() const {
    return int64_t{out_channels} * in_per_group() * kernel.h * kernel.w;
  }
  bool has_bias() const { return !bias.empty(); }
  int64_t param_count() const { return weight_count() + static_cast<int64_t>(bias.size()); }

  float& w(int o, int i, int ky, int kx) {
    return weight[((static_cast<size_t>(o) * in_per_group() + i) * kernel.h + ky) * kernel.w + kx];
  }
  float w(int o, int i, int ky, int kx) const {
    return weight[((static_cast<size_t>(o) * in_per_group() + i) * kernel.h + ky) * kernel.w + kx];
  }

  // Zero-initialised spec with "same" padding for odd kernels.
  static ConvSpec make(int in, int out, int k, int groups = 1, bool bias = true);

  // Throws ShapeError when the invariants do not hold.
  void validate() const;
};

Shape conv_output_shape(const Shape& input, const ConvSpec& spec);

// Cross-correlation, stride 1, zero padding. `threads` > 1 splits work over output channels.
Tensor conv2d(const Tensor& input, const ConvSpec& spec, int threads = 1);

Tensor relu(const Tensor& input);
Tensor silu(const Tensor& input);
Tensor sigmoid(const Tensor& input);
// sigmoid(x) - 0.5, the odd-symmetric gate used by the SPAN baseline.
Tensor centered_sigmoid(const Tensor& input);

Tensor pixel_shuffle(const Tensor& input, int scale);
Tensor pixel_unshuffle(const Tensor& input, int scale);
Tensor nearest_upsample(const Tensor& input, int scale);

Tensor add(const Tensor& a, const Tensor& b);
// Either operand may be a 1 x c x 1 x 1 per-channel factor.
Tensor mul(const Tensor& a, const Tensor& b);

Tensor concat_channels(std::span<const Tensor> parts);
Tensor slice_channels(const Tensor& input, int64_t begin, int64_t count);

// |a - b| <= max(abs_tol, rel_tol * |b|) elementwise. The error returned by
// max_rel_error is |a - b| / max(|b|, abs_tol / rel_tol), so a value <= rel_tol
// is the same acceptance test.
inline constexpr double kRelTol = 1e-5;
inline constexpr double kAbsTol = 1e-6;

struct Discrepancy {
  double max_abs = 0.0;
  double max_rel = 0.0;
};

Discrepancy compare(std::span<const float> got, std::span<const float> want);
Discrepancy compare(const Tensor& got, const Tensor& want);
bool bit_equal(const Tensor& a, const Tensor& b);

}  // namespace esr
