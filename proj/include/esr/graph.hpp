#pragma once

#include "esr/fusion.hpp"
#include "esr/tensor.hpp"

#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace esr {

enum class OpKind {
  Conv,
  ReLU,
  SiLU,
  CenteredSigmoid,
  Add,
  Mul,
  Concat,
  PixelShuffle,
  // y = (inputs[0] + inputs[1]) * conv1x1(inputs[1]); see fused_attention.
  AttentionGate,
};

const char* op_name(OpKind kind);

enum class ExecMode { Fused, Unfused };

// One node of a model graph. The node's output is addressed by its name; the
// graph input is addressed as "input".
struct LayerSpec {
  std::string name;
  OpKind kind = OpKind::Conv;
  std::vector<std::string> inputs;
  ConvSpec conv;  // Conv, AttentionGate
  int scale = 1;  // PixelShuffle

  // Training-time structure that the rewrite pass folds into `conv`.
  std::vector<ConvSpec> branches;
  bool identity_branch = false;
  std::optional<LoraFactors> lora;

  bool has_params() const { return kind == OpKind::Conv || kind == OpKind::AttentionGate; }
  bool has_adapters() const { return !branches.empty() || identity_branch || lora.has_value(); }
};

struct GraphMeta {
  std::string model;
  int in_channels = 3;
  int channels = 32;
  int blocks = 5;
  int scale = 4;
};

struct ExecOptions {
  ExecMode mode = ExecMode::Fused;
  int threads = 1;
  TrafficCounter* attention_traffic = nullptr;
};

inline constexpr const char* kGraphInput = "input";

class ModelGraph {
 public:
  GraphMeta meta;
  std::vector<LayerSpec> layers;  // topological order
  std::string output;

  // DAG check: inputs refer to "input" or earlier layers, names are unique,
  // every layer reaches the output, concat/conv channel counts agree.
  void validate() const;

  const LayerSpec* find(const std::string& name) const;
  LayerSpec* find(const std::string& name);

  // Output shape of every layer for the given input shape.
  std::map<std::string, Shape> infer_shapes(const Shape& input) const;

  Tensor run(const Tensor& input, const ExecOptions& options = {}) const;
};

// Evaluates one Conv layer including any unmerged adapters.
Tensor run_conv_layer(const LayerSpec& layer, const Tensor& input, int threads = 1);

// Fills every conv weight/bias with uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) from
// a seeded mt19937; adapters receive small values of the same family.
void init_random(ModelGraph& graph, uint64_t seed);

// Deterministic uniform values in [lo, hi) built from raw mt19937 output so
// results do not depend on the standard library's distributions.
class SeededUniform {
 public:
  explicit SeededUniform(uint64_t seed);
  float next(float lo, float hi);
  void fill(std::span<float> out, float lo, float hi);
  Tensor tensor(Shape shape, float lo = -1.0f, float hi = 1.0f);

 private:
  std::mt19937 gen_;
};

}  // namespace esr
