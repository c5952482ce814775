#include "esr/graph.hpp"

#include <cmath>
#include <set>
#include <sstream>

namespace esr {

namespace {

size_t expected_arity(OpKind kind) {
  switch (kind) {
    case OpKind::Add:
    case OpKind::Mul:
    case OpKind::AttentionGate:
      return 2;
    case OpKind::Concat:
      return 0;  // any positive count
    default:
      return 1;
  }
}

Tensor lora_branch(const LayerSpec& layer, const Tensor& input, int threads) {
  ConvSpec delta = layer.conv;
  delta.weight = lora_delta(layer.conv, *layer.lora);
  delta.bias.clear();
  return conv2d(input, delta, threads);
}

}  // namespace

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Conv: return "conv";
    case OpKind::ReLU: return "relu";
    case OpKind::SiLU: return "silu";
    case OpKind::CenteredSigmoid: return "centered_sigmoid";
    case OpKind::Add: return "add";
    case OpKind::Mul: return "mul";
    case OpKind::Concat: return "concat";
    case OpKind::PixelShuffle: return "pixel_shuffle";
    case OpKind::AttentionGate: return "attention_gate";
  }
  return "?";
}

const LayerSpec* ModelGraph::find(const std::string& name) const {
  for (const LayerSpec& l : layers)
    if (l.name == name) return &l;
  return nullptr;
}

LayerSpec* ModelGraph::find(const std::string& name) {
  for (LayerSpec& l : layers)
    if (l.name == name) return &l;
  return nullptr;
}

void ModelGraph::validate() const {
  std::set<std::string> seen{kGraphInput};
  for (const LayerSpec& l : layers) {
    if (l.name.empty() || l.name == kGraphInput) throw Error("graph: invalid layer name '" + l.name + "'");
    if (seen.count(l.name)) throw Error("graph: duplicate layer name '" + l.name + "'");
    const size_t arity = expected_arity(l.kind);
    if ((arity && l.inputs.size() != arity) || l.inputs.empty())
      throw Error("graph: layer '" + l.name + "' has the wrong number of inputs");
    for (const std::string& in : l.inputs)
      if (!seen.count(in)) throw Error("graph: layer '" + l.name + "' reads '" + in + "' before it is produced");
    if (l.has_params()) l.conv.validate();
    for (const ConvSpec& b : l.branches) b.validate();
    if (l.lora) l.lora->validate(l.conv);
    seen.insert(l.name);
  }
  if (!find(output)) throw Error("graph: output '" + output + "' is not a layer");

  // single sink: every layer must feed the output
  std::set<std::string> live{output};
  for (auto it = layers.rbegin(); it != layers.rend(); ++it)
    if (live.count(it->name))
      for (const std::string& in : it->inputs) live.insert(in);
  for (const LayerSpec& l : layers)
    if (!live.count(l.name)) throw Error("graph: layer '" + l.name + "' does not reach the output");
  if (!live.count(kGraphInput)) throw Error("graph: output does not depend on the input");

  const int probe = 4 * std::max(1, meta.scale) + 8;
  infer_shapes({1, meta.in_channels, probe, probe});
}

std::map<std::string, Shape> ModelGraph::infer_shapes(const Shape& input) const {
  std::map<std::string, Shape> shapes{{kGraphInput, input}};
  for (const LayerSpec& l : layers) {
    std::vector<Shape> in;
    for (const std::string& name : l.inputs) {
      auto it = shapes.find(name);
      if (it == shapes.end()) throw Error("graph: unknown input '" + name + "' for layer '" + l.name + "'");
      in.push_back(it->second);
    }
    Shape out = in.front();
    switch (l.kind) {
      case OpKind::Conv:
        out = conv_output_shape(in[0], l.conv);
        for (const ConvSpec& b : l.branches)
          if (conv_output_shape(in[0], b) != out) throw ShapeError("graph: branch output shape differs in '" + l.name + "'");
        if (l.identity_branch && in[0] != out) throw ShapeError("graph: identity branch shape differs in '" + l.name + "'");
        break;
      case OpKind::Add:
      case OpKind::Mul:
        if (in[0] != in[1])
          throw ShapeError("graph: '" + l.name + "' operand shapes differ (" + in[0].str() + " vs " + in[1].str() + ")");
        break;
      case OpKind::AttentionGate:
        if (in[0] != in[1])
          throw ShapeError("graph: '" + l.name + "' operand shapes differ (" + in[0].str() + " vs " + in[1].str() + ")");
        if (conv_output_shape(in[1], l.conv) != in[1])
          throw ShapeError("graph: '" + l.name + "' attention conv must map C->C at the same resolution");
        break;
      case OpKind::Concat: {
        int64_t c = 0;
        for (const Shape& s : in) {
          if (s.n != out.n || s.h != out.h || s.w != out.w)
            throw ShapeError("graph: concat '" + l.name + "' spatial mismatch (" + s.str() + " vs " + out.str() + ")");
          c += s.c;
        }
        out.c = c;
        break;
      }
      case OpKind::PixelShuffle: {
        const int64_t s2 = int64_t{l.scale} * l.scale;
        if (l.scale < 1 || out.c % s2 != 0) throw ShapeError("graph: pixel_shuffle '" + l.name + "' channels not divisible");
        out = {out.n, out.c / s2, out.h * l.scale, out.w * l.scale};
        break;
      }
      default:
        break;
    }
    shapes[l.name] = out;
  }
  return shapes;
}

Tensor run_conv_layer(const LayerSpec& layer, const Tensor& input, int threads) {
  Tensor out = conv2d(input, layer.conv, threads);
  for (const ConvSpec& b : layer.branches) out = add(out, conv2d(input, b, threads));
  if (layer.identity_branch) out = add(out, input);
  if (layer.lora) out = add(out, lora_branch(layer, input, threads));
  return out;
}

Tensor ModelGraph::run(const Tensor& input, const ExecOptions& options) const {
  if (input.c() != meta.in_channels) {
    std::ostringstream os;
    os << "graph: input has " << input.c() << " channels, model expects " << meta.in_channels;
    throw ShapeError(os.str());
  }
  // drop intermediates after their last reader
  std::map<std::string, size_t> last_use;
  for (size_t i = 0; i < layers.size(); ++i)
    for (const std::string& in : layers[i].inputs) last_use[in] = i;

  std::map<std::string, Tensor> values{{kGraphInput, input}};
  auto get = [&](const std::string& name) -> const Tensor& {
    auto it = values.find(name);
    if (it == values.end()) throw Error("graph: value '" + name + "' is not available");
    return it->second;
  };

  for (size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    Tensor out;
    switch (l.kind) {
      case OpKind::Conv: out = run_conv_layer(l, get(l.inputs[0]), options.threads); break;
      case OpKind::ReLU: out = relu(get(l.inputs[0])); break;
      case OpKind::SiLU: out = silu(get(l.inputs[0])); break;
      case OpKind::CenteredSigmoid: out = centered_sigmoid(get(l.inputs[0])); break;
      case OpKind::Add: out = add(get(l.inputs[0]), get(l.inputs[1])); break;
      case OpKind::Mul: out = mul(get(l.inputs[0]), get(l.inputs[1])); break;
      case OpKind::Concat: {
        std::vector<Tensor> parts;
        for (const std::string& in : l.inputs) parts.push_back(get(in));
        out = concat_channels(parts);
        break;
      }
      case OpKind::PixelShuffle: out = pixel_shuffle(get(l.inputs[0]), l.scale); break;
      case OpKind::AttentionGate:
        out = options.mode == ExecMode::Fused
                  ? fused_attention(get(l.inputs[0]), get(l.inputs[1]), l.conv, options.attention_traffic)
                  : reference_attention(get(l.inputs[0]), get(l.inputs[1]), l.conv, options.attention_traffic);
        break;
    }
    for (const std::string& in : l.inputs)
      if (last_use[in] == i && in != output) values.erase(in);
    values[l.name] = std::move(out);
  }
  return get(output);
}

SeededUniform::SeededUniform(uint64_t seed) : gen_(static_cast<std::mt19937::result_type>(seed ^ (seed >> 32))) {}

float SeededUniform::next(float lo, float hi) {
  // 24 random bits -> [0, 1) exactly representable in float
  const float u = static_cast<float>(gen_() >> 8) * (1.0f / 16777216.0f);
  return lo + (hi - lo) * u;
}

void SeededUniform::fill(std::span<float> out, float lo, float hi) {
  for (float& v : out) v = next(lo, hi);
}

Tensor SeededUniform::tensor(Shape shape, float lo, float hi) {
  Tensor t(shape);
  fill(t.data(), lo, hi);
  return t;
}

void init_random(ModelGraph& graph, uint64_t seed) {
  SeededUniform rng(seed);
  auto init_conv = [&rng](ConvSpec& c) {
    const float bound = 1.0f / std::sqrt(static_cast<float>(c.in_per_group() * c.kernel.h * c.kernel.w));
    c.weight.resize(static_cast<size_t>(c.weight_count()));
    rng.fill(c.weight, -bound, bound);
    rng.fill(c.bias, -bound, bound);
  };
  for (LayerSpec& l : graph.layers) {
    if (!l.has_params()) continue;
    init_conv(l.conv);
    for (ConvSpec& b : l.branches) init_conv(b);
    if (l.lora) {
      const float bound = 1.0f / std::sqrt(static_cast<float>(l.conv.in_channels * l.lora->kernel));
      rng.fill(l.lora->a, -bound, bound);
      rng.fill(l.lora->b, -0.5f * bound, 0.5f * bound);
    }
  }
}

}  // namespace esr
