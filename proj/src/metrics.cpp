#include "esr/metrics.hpp"

#include "esr/rewrite.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

namespace esr {

double psnr_from_mse(double mse) {
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

double psnr(const RgbImage& pred, const RgbImage& gt, int border) {
  if (pred.width != gt.width || pred.height != gt.height) {
    std::ostringstream os;
    os << "psnr: size mismatch (" << pred.width << "x" << pred.height << " vs " << gt.width << "x" << gt.height << ")";
    throw ShapeError(os.str());
  }
  if (border < 0) throw Error("psnr: border must be >= 0");
  if (pred.width < 2 * border + 1 || pred.height < 2 * border + 1) {
    std::ostringstream os;
    os << "psnr: image " << pred.width << "x" << pred.height << " is too small for a " << border << "-pixel border";
    throw ShapeError(os.str());
  }
  double sse = 0.0;
  int64_t count = 0;
  for (int y = border; y < pred.height - border; ++y)
    for (int x = border; x < pred.width - border; ++x)
      for (int c = 0; c < 3; ++c) {
        const double d = static_cast<double>(pred.at(y, x, c)) - static_cast<double>(gt.at(y, x, c));
        sse += d * d;
        ++count;
      }
  return psnr_from_mse(sse / static_cast<double>(count));
}

int64_t count_params(const ModelGraph& graph) {
  int64_t total = 0;
  for (const LayerSpec& l : graph.layers) total += layer_param_count(l);
  return total;
}

namespace {

int64_t conv_flops(const ConvSpec& c, const Shape& out) {
  const int64_t plane = out.h * out.w;
  int64_t f = int64_t{c.out_channels} * c.in_per_group() * c.kernel.h * c.kernel.w * plane;
  if (c.has_bias()) f += int64_t{c.out_channels} * plane;
  return f * out.n;
}

}  // namespace

int64_t count_flops(const ModelGraph& graph, int height, int width) {
  const auto shapes = graph.infer_shapes({1, graph.meta.in_channels, height, width});
  int64_t total = 0;
  for (const LayerSpec& l : graph.layers) {
    const Shape& out = shapes.at(l.name);
    switch (l.kind) {
      case OpKind::Conv: {
        total += conv_flops(l.conv, out);
        for (const ConvSpec& b : l.branches) total += conv_flops(b, out) + out.numel();
        if (l.identity_branch) total += out.numel();
        if (l.lora) {
          ConvSpec delta = l.conv;
          delta.bias.clear();
          total += conv_flops(delta, out) + out.numel();
        }
        break;
      }
      case OpKind::AttentionGate:
        total += conv_flops(l.conv, out) + 2 * out.numel();
        break;
      case OpKind::ReLU:
      case OpKind::SiLU:
      case OpKind::CenteredSigmoid:
      case OpKind::Add:
      case OpKind::Mul:
        total += out.numel();
        break;
      case OpKind::Concat:
      case OpKind::PixelShuffle:
        break;
    }
  }
  return total;
}

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const size_t mid = values.size() / 2;
  return values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

RuntimeStats bench_runtime(const ModelGraph& graph, std::span<const Tensor> images, int warmup, int reps,
                           const ExecOptions& options) {
  if (images.empty()) throw Error("bench_runtime: empty image list");
  if (reps < 1) throw Error("bench_runtime: reps must be >= 1");
  if (warmup < 0) throw Error("bench_runtime: warmup must be >= 0");
  using clock = std::chrono::steady_clock;
  RuntimeStats stats;
  for (const Tensor& img : images) {
    for (int i = 0; i < warmup; ++i) graph.run(img, options);
    double total_ms = 0.0;
    for (int i = 0; i < reps; ++i) {
      const auto t0 = clock::now();
      const Tensor out = graph.run(img, options);
      const auto t1 = clock::now();
      total_ms += std::chrono::duration<double, std::milli>(t1 - t0).count();
    }
    stats.per_image_ms.push_back(total_ms / reps);
  }
  stats.mean_ms = std::accumulate(stats.per_image_ms.begin(), stats.per_image_ms.end(), 0.0) /
                  static_cast<double>(stats.per_image_ms.size());
  stats.median_ms = median(stats.per_image_ms);
  return stats;
}

double average_of_sets(double first_set_mean, double second_set_mean) {
  return 0.5 * (first_set_mean + second_set_mean);
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j;
  j["psnr_db"] = psnr_db;
  j["psnr_mean_db"] = psnr_mean_db;
  j["params"] = params;
  j["flops"] = flops;
  j["runtime_ms"] = {{"per_image", runtime.per_image_ms}, {"mean", runtime.mean_ms}, {"median", runtime.median_ms}};
  if (traffic) j["traffic"] = {{"element_reads", traffic->element_reads}, {"element_writes", traffic->element_writes}};
  return j;
}

}  // namespace esr
