#pragma once

#include "esr/fusion.hpp"
#include "esr/graph.hpp"
#include "esr/image.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace esr {

inline constexpr double kPsnrCap = 100.0;
inline constexpr int kChallengeBorder = 4;
inline constexpr int kFlopsInputSize = 256;

// PSNR over all RGB values after discarding `border` pixels on each side;
// 10 log10(255^2 / MSE), capped at 100 dB for identical crops.
double psnr(const RgbImage& pred, const RgbImage& gt, int border = kChallengeBorder);
double psnr_from_mse(double mse);

// Weights plus biases of every conv and attention layer, adapters included.
int64_t count_params(const ModelGraph& graph);

// One FLOP per multiply-accumulate, plus one per bias add and per element of
// every elementwise op (activations, add, mul, attention gate add/mul).
int64_t count_flops(const ModelGraph& graph, int height = kFlopsInputSize, int width = kFlopsInputSize);

struct RuntimeStats {
  std::vector<double> per_image_ms;  // mean over reps per image
  double mean_ms = 0.0;
  double median_ms = 0.0;
};

// Times graph.run on each image after `warmup` discarded runs.
RuntimeStats bench_runtime(const ModelGraph& graph, std::span<const Tensor> images, int warmup, int reps,
                           const ExecOptions& options = {});

// "Ave." over two evaluation sets: the mean of the two set means.
double average_of_sets(double first_set_mean, double second_set_mean);

double median(std::vector<double> values);

struct MetricsReport {
  std::vector<double> psnr_db;
  double psnr_mean_db = 0.0;
  int64_t params = 0;
  int64_t flops = 0;
  RuntimeStats runtime;
  std::optional<TrafficCounter> traffic;

  nlohmann::json to_json() const;
};

}  // namespace esr
