#include "esr/kernels.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace esr {

WaveletSubbands haar_dwt(const Tensor& x) {
  if (x.h() % 2 != 0) throw ShapeError("haar_dwt: height must be even, got " + std::to_string(x.h()));
  if (x.w() % 2 != 0) throw ShapeError("haar_dwt: width must be even, got " + std::to_string(x.w()));
  const Shape half{x.n(), x.c(), x.h() / 2, x.w() / 2};
  WaveletSubbands sb{Tensor(half), Tensor(half), Tensor(half), Tensor(half)};
  for (int64_t n = 0; n < x.n(); ++n)
    for (int64_t c = 0; c < x.c(); ++c)
      for (int64_t y = 0; y < half.h; ++y)
        for (int64_t v = 0; v < half.w; ++v) {
          const float a = x.at(n, c, 2 * y, 2 * v), b = x.at(n, c, 2 * y, 2 * v + 1);
          const float cc = x.at(n, c, 2 * y + 1, 2 * v), d = x.at(n, c, 2 * y + 1, 2 * v + 1);
          sb.ll.at(n, c, y, v) = 0.5f * (a + b + cc + d);
          sb.hl.at(n, c, y, v) = 0.5f * (a - b + cc - d);
          sb.lh.at(n, c, y, v) = 0.5f * (a + b - cc - d);
          sb.hh.at(n, c, y, v) = 0.5f * (a - b - cc + d);
        }
  return sb;
}

Tensor haar_idwt(const WaveletSubbands& sb) {
  const Shape s = sb.ll.shape();
  if (sb.hl.shape() != s || sb.lh.shape() != s || sb.hh.shape() != s)
    throw ShapeError("haar_idwt: subband shapes differ");
  Tensor x({s.n, s.c, s.h * 2, s.w * 2});
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c)
      for (int64_t y = 0; y < s.h; ++y)
        for (int64_t v = 0; v < s.w; ++v) {
          const float ll = sb.ll.at(n, c, y, v), hl = sb.hl.at(n, c, y, v);
          const float lh = sb.lh.at(n, c, y, v), hh = sb.hh.at(n, c, y, v);
          x.at(n, c, 2 * y, 2 * v) = 0.5f * (ll + hl + lh + hh);
          x.at(n, c, 2 * y, 2 * v + 1) = 0.5f * (ll - hl + lh - hh);
          x.at(n, c, 2 * y + 1, 2 * v) = 0.5f * (ll + hl - lh - hh);
          x.at(n, c, 2 * y + 1, 2 * v + 1) = 0.5f * (ll - hl - lh + hh);
        }
  return x;
}

Tensor entropy_attention(const Tensor& x, float eps) {
  const int64_t hw = x.shape().plane();
  if (hw < 2) throw ShapeError("entropy_attention: need at least 2 spatial positions");
  Tensor out({x.n(), x.c(), 1, 1});
  for (int64_t n = 0; n < x.n(); ++n)
    for (int64_t c = 0; c < x.c(); ++c) {
      const float* p = x.plane(n, c);
      double mean = 0.0;
      for (int64_t i = 0; i < hw; ++i) mean += p[i];
      mean /= static_cast<double>(hw);
      double ss = 0.0;
      for (int64_t i = 0; i < hw; ++i) ss += (p[i] - mean) * (p[i] - mean);
      const double var = std::max(ss / static_cast<double>(hw - 1), static_cast<double>(eps));
      out.at(n, c, 0, 0) = static_cast<float>(0.5 * std::log(2.0 * std::numbers::pi * var));
    }
  return out;
}

Matrix::Matrix(int rows, int cols, float fill) : rows_(rows), cols_(cols) {
  if (rows < 1 || cols < 1) throw ShapeError("matrix: extents must be >= 1");
  data_.assign(static_cast<size_t>(rows) * cols, fill);
}

Matrix::Matrix(int rows, int cols, std::vector<float> data) : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (rows < 1 || cols < 1) throw ShapeError("matrix: extents must be >= 1");
  if (data_.size() != static_cast<size_t>(rows) * cols) throw ShapeError("matrix: data length does not match rows*cols");
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (int r = 0; r < rows_; ++r)
    for (int c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

double Matrix::frobenius() const {
  double s = 0.0;
  for (float v : data_) s += double{v} * v;
  return std::sqrt(s);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    std::ostringstream os;
    os << "matmul: inner extent mismatch (" << a.cols() << " vs " << b.rows() << ")";
    throw ShapeError(os.str());
  }
  Matrix out(a.rows(), b.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int k = 0; k < a.cols(); ++k) {
      const float av = a(i, k);
      for (int j = 0; j < b.cols(); ++j) out(i, j) += av * b(k, j);
    }
  return out;
}

double newton_schulz_scalar(double s, const QuinticCoefficients& k) {
  const double s2 = s * s;
  return s * (k.a + s2 * (k.b + s2 * k.c));
}

Matrix frobenius_normalize(const Matrix& x, float eps) {
  const float scale = static_cast<float>(1.0 / (x.frobenius() + eps));
  Matrix out = x;
  for (float& v : out.data()) v *= scale;
  return out;
}

Matrix newton_schulz(const Matrix& x, int steps, const QuinticCoefficients& k) {
  for (float v : x.data())
    if (!std::isfinite(v)) throw Error("newton_schulz: input contains non-finite values");
  if (steps < 0) throw Error("newton_schulz: steps must be >= 0");
  const auto a = static_cast<float>(k.a), b = static_cast<float>(k.b), c = static_cast<float>(k.c);
  Matrix cur = x;
  for (int step = 0; step < steps; ++step) {
    const Matrix gram = matmul(cur, cur.transposed());
    const Matrix gram2 = matmul(gram, gram);
    Matrix poly(gram.rows(), gram.cols());
    for (size_t i = 0; i < poly.data().size(); ++i) poly.data()[i] = b * gram.data()[i] + c * gram2.data()[i];
    Matrix next = matmul(poly, cur);
    for (size_t i = 0; i < next.data().size(); ++i) next.data()[i] += a * cur.data()[i];
    cur = std::move(next);
  }
  return cur;
}

Matrix spatial_affinity(const Tensor& f, int64_t sample) {
  const int64_t hw = f.shape().plane();
  const int64_t C = f.c();
  // column-normalised features, (hw) x C
  std::vector<double> cols(static_cast<size_t>(hw * C));
  for (int64_t p = 0; p < hw; ++p) {
    double norm = 0.0;
    for (int64_t c = 0; c < C; ++c) {
      const double v = f.plane(sample, c)[p];
      norm += v * v;
    }
    norm = std::sqrt(norm) + 1e-12;
    for (int64_t c = 0; c < C; ++c) cols[static_cast<size_t>(p * C + c)] = f.plane(sample, c)[p] / norm;
  }
  Matrix a(static_cast<int>(hw), static_cast<int>(hw));
  for (int64_t i = 0; i < hw; ++i)
    for (int64_t j = i; j < hw; ++j) {
      double dot = 0.0;
      for (int64_t c = 0; c < C; ++c) dot += cols[static_cast<size_t>(i * C + c)] * cols[static_cast<size_t>(j * C + c)];
      a(static_cast<int>(i), static_cast<int>(j)) = static_cast<float>(dot);
      a(static_cast<int>(j), static_cast<int>(i)) = static_cast<float>(dot);
    }
  return a;
}

double affinity_loss(std::span<const Tensor> student, std::span<const Tensor> teacher) {
  if (student.size() != teacher.size()) {
    std::ostringstream os;
    os << "affinity_loss: list length mismatch (" << student.size() << " vs " << teacher.size() << ")";
    throw ShapeError(os.str());
  }
  if (student.empty()) throw ShapeError("affinity_loss: empty feature lists");
  double total = 0.0;
  for (size_t l = 0; l < student.size(); ++l) {
    const Tensor& s = student[l];
    const Tensor& t = teacher[l];
    if (s.n() != t.n() || s.h() != t.h() || s.w() != t.w())
      throw ShapeError("affinity_loss: layer " + std::to_string(l) + " spatial/batch mismatch (" + s.shape().str() +
                       " vs " + t.shape().str() + ")");
    double layer = 0.0;
    for (int64_t n = 0; n < s.n(); ++n) {
      const Matrix as = spatial_affinity(s, n);
      const Matrix at = spatial_affinity(t, n);
      double sum = 0.0;
      for (size_t i = 0; i < as.data().size(); ++i) sum += std::abs(double{as.data()[i]} - at.data()[i]);
      layer += sum / static_cast<double>(as.data().size());
    }
    total += layer / static_cast<double>(s.n());
  }
  return total / static_cast<double>(student.size());
}

}  // namespace esr
