#pragma once

#include "esr/tensor.hpp"

#include <span>
#include <vector>

namespace esr {

struct WaveletSubbands {
  Tensor ll, hl, lh, hh;
};

// Orthonormal one-level 2-D Haar analysis over 2x2 blocks [[a, b], [c, d]]:
// ll = (a+b+c+d)/2, hl = (a-b+c-d)/2, lh = (a+b-c-d)/2, hh = (a-b-c+d)/2.
WaveletSubbands haar_dwt(const Tensor& x);
Tensor haar_idwt(const WaveletSubbands& sb);

inline constexpr float kEntropyFloor = 1e-8f;

// Gaussian differential entropy per (n, c): 0.5 * ln(2 pi max(var, eps)), with
// var the unbiased spatial variance. Returned as n x c x 1 x 1.
Tensor entropy_attention(const Tensor& x, float eps = kEntropyFloor);

// Row-major float32 matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols, float fill = 0.0f);
  Matrix(int rows, int cols, std::vector<float> data);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  float& operator()(int r, int c) { return data_[static_cast<size_t>(r) * cols_ + c]; }
  float operator()(int r, int c) const { return data_[static_cast<size_t>(r) * cols_ + c]; }

  Matrix transposed() const;
  double frobenius() const;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<float> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);

struct QuinticCoefficients {
  double a = 3.4445;
  double b = -4.7750;
  double c = 2.0315;
};

// The map each singular value undergoes per iteration: a s + b s^3 + c s^5.
double newton_schulz_scalar(double s, const QuinticCoefficients& k = {});

// X / (||X||_F + eps), bringing the spectral norm to at most 1.
Matrix frobenius_normalize(const Matrix& x, float eps = 1e-7f);

// X_{k+1} = a X_k + (b A + c A^2) X_k with A = X_k X_k^T. Expects a
// pre-normalised input; throws on non-finite values.
Matrix newton_schulz(const Matrix& x, int steps = 5, const QuinticCoefficients& k = {});

// Spatial affinity of one sample: features reshaped to c x (h w), each spatial
// column L2-normalised, A = F^T F.
Matrix spatial_affinity(const Tensor& feature, int64_t sample);

// Mean over layers of the mean absolute difference between student and teacher
// affinity matrices (averaged over the batch).
double affinity_loss(std::span<const Tensor> student, std::span<const Tensor> teacher);

}  // namespace esr
