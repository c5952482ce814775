#include "esr/model_zoo.hpp"

#include <cmath>
#include <sstream>

namespace esr {

namespace {

LayerSpec conv_layer(std::string name, std::string input, ConvSpec spec) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = OpKind::Conv;
  l.inputs = {std::move(input)};
  l.conv = std::move(spec);
  return l;
}

LayerSpec op_layer(std::string name, OpKind kind, std::vector<std::string> inputs) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = kind;
  l.inputs = std::move(inputs);
  return l;
}

std::string block_prefix(int index) { return "block" + std::to_string(index); }

const ConvSpec& conv_named(const ModelGraph& g, const std::string& name) {
  const LayerSpec* l = g.find(name);
  if (!l || !l->has_params()) throw Error("model: no conv layer named '" + name + "'");
  return l->conv;
}

}  // namespace

void BlockSpec::validate() const {
  conv_a.validate();
  conv_b.validate();
  conv_c.validate();
  attn.validate();
  if (conv_b.in_channels != conv_a.out_channels || conv_c.in_channels != conv_b.out_channels)
    throw ShapeError("spabv2: conv chain widths do not line up");
  if (attn.in_channels != conv_c.out_channels || attn.out_channels != conv_c.out_channels)
    throw ShapeError("spabv2: attention conv must map conv_c.out_channels to itself");
  if (conv_a.in_channels != conv_c.out_channels && conv_a.out_channels != conv_c.out_channels)
    throw ShapeError("spabv2: no residual operand matches the block output width");
}

Tensor spabv2_forward(const Tensor& x, const BlockSpec& block, ExecMode mode, TrafficCounter* traffic) {
  block.validate();
  if (x.c() != block.conv_a.in_channels) {
    std::ostringstream os;
    os << "spabv2: input channels " << x.c() << " vs conv_a.in_channels " << block.conv_a.in_channels;
    throw ShapeError(os.str());
  }
  const Tensor f1 = relu(conv2d(x, block.conv_a));
  const Tensor f2 = relu(conv2d(f1, block.conv_b));
  const Tensor f3 = conv2d(f2, block.conv_c);
  const Tensor& residual = x.c() == f3.c() ? x : f1;
  return mode == ExecMode::Fused ? fused_attention(residual, f3, block.attn, traffic)
                                 : reference_attention(residual, f3, block.attn, traffic);
}

Tensor span_baseline_attention(const Tensor& f1, const Tensor& f3) {
  if (f1.shape() != f3.shape())
    throw ShapeError("span_baseline_attention: shape mismatch (" + f1.shape().str() + " vs " + f3.shape().str() + ")");
  return mul(f1, f3);
}

ConvSpec near_pixel_init(const ConvSpec& spec, int scale) {
  spec.validate();
  const int s2 = scale * scale;
  if (scale < 1 || spec.in_channels != 3 || spec.out_channels != 3 * s2 || spec.groups != 3 ||
      spec.kernel != Extent2{3, 3}) {
    std::ostringstream os;
    os << "near_pixel_init: expected a 3->" << 3 * s2 << " depthwise 3x3 conv with groups=3, got " << spec.in_channels
       << "->" << spec.out_channels << " k" << spec.kernel.h << "x" << spec.kernel.w << " groups=" << spec.groups;
    throw ShapeError(os.str());
  }
  ConvSpec out = spec;
  out.weight.assign(static_cast<size_t>(out.weight_count()), 0.0f);
  for (int c = 0; c < 3; ++c)
    for (int k = 0; k < s2; ++k) out.w(c * s2 + k, 0, 1, 1) = 1.0f;
  if (out.has_bias()) out.bias.assign(out.bias.size(), 0.0f);
  return out;
}

ModelGraph build_spanv2(const SpanV2Config& cfg) {
  if (cfg.channels < 1 || cfg.blocks < 1 || cfg.scale < 1 || cfg.in_channels < 1)
    throw Error("build_spanv2: invalid configuration");
  const int C = cfg.channels;
  const int up = cfg.in_channels * cfg.scale * cfg.scale;

  ModelGraph g;
  g.meta = {"spanv2", cfg.in_channels, C, cfg.blocks, cfg.scale};
  g.layers.push_back(conv_layer("conv_near", kGraphInput, ConvSpec::make(cfg.in_channels, up, 3, cfg.in_channels)));

  std::string x = kGraphInput;
  int width = cfg.in_channels;
  for (int b = 1; b <= cfg.blocks; ++b) {
    const std::string p = block_prefix(b);
    g.layers.push_back(conv_layer(p + ".conv_a", x, ConvSpec::make(width, C, 3)));
    g.layers.push_back(op_layer(p + ".relu_a", OpKind::ReLU, {p + ".conv_a"}));
    g.layers.push_back(conv_layer(p + ".conv_b", p + ".relu_a", ConvSpec::make(C, C, 3)));
    g.layers.push_back(op_layer(p + ".relu_b", OpKind::ReLU, {p + ".conv_b"}));
    g.layers.push_back(conv_layer(p + ".conv_c", p + ".relu_b", ConvSpec::make(C, C, 3)));
    LayerSpec gate = op_layer(p + ".attn", OpKind::AttentionGate, {width == C ? x : p + ".relu_a", p + ".conv_c"});
    gate.conv = ConvSpec::make(C, C, 1);
    g.layers.push_back(std::move(gate));
    x = p + ".attn";
    width = C;
  }

  const int cat = up + C;
  g.layers.push_back(op_layer("concat", OpKind::Concat, {"conv_near", x}));
  g.layers.push_back(conv_layer("fuse_dw", "concat", ConvSpec::make(cat, cat, 3, cat)));
  g.layers.push_back(conv_layer("fuse_pw", "fuse_dw", ConvSpec::make(cat, up, 1)));
  LayerSpec shuffle = op_layer("shuffle", OpKind::PixelShuffle, {"fuse_pw"});
  shuffle.scale = cfg.scale;
  g.layers.push_back(std::move(shuffle));
  g.output = "shuffle";
  g.validate();
  return g;
}

ModelGraph build_span_baseline(const SpanConfig& cfg) {
  if (cfg.channels < 1 || cfg.blocks < 2 || cfg.scale < 1 || cfg.in_channels < 1)
    throw Error("build_span_baseline: invalid configuration");
  const int C = cfg.channels;
  const int up = cfg.in_channels * cfg.scale * cfg.scale;

  ModelGraph g;
  g.meta = {"span", cfg.in_channels, C, cfg.blocks, cfg.scale};
  g.layers.push_back(conv_layer("conv_1", kGraphInput, ConvSpec::make(cfg.in_channels, C, 3)));

  std::string x = "conv_1";
  for (int b = 1; b <= cfg.blocks; ++b) {
    const std::string p = block_prefix(b);
    g.layers.push_back(conv_layer(p + ".c1", x, ConvSpec::make(C, C, 3)));
    g.layers.push_back(op_layer(p + ".act1", OpKind::SiLU, {p + ".c1"}));
    g.layers.push_back(conv_layer(p + ".c2", p + ".act1", ConvSpec::make(C, C, 3)));
    g.layers.push_back(op_layer(p + ".act2", OpKind::SiLU, {p + ".c2"}));
    g.layers.push_back(conv_layer(p + ".c3", p + ".act2", ConvSpec::make(C, C, 3)));
    g.layers.push_back(op_layer(p + ".sim_att", OpKind::CenteredSigmoid, {p + ".c3"}));
    g.layers.push_back(op_layer(p + ".residual", OpKind::Add, {x, p + ".c3"}));
    g.layers.push_back(op_layer(p + ".out", OpKind::Mul, {p + ".residual", p + ".sim_att"}));
    x = p + ".out";
  }

  // head, tail, first block, and the pre-activation of the last block's first conv
  const std::string last = block_prefix(cfg.blocks);
  g.layers.push_back(conv_layer("conv_2", x, ConvSpec::make(C, C, 3)));
  g.layers.push_back(op_layer("concat", OpKind::Concat, {"conv_1", "conv_2", block_prefix(1) + ".out", last + ".c1"}));
  g.layers.push_back(conv_layer("conv_cat", "concat", ConvSpec::make(4 * C, C, 1)));
  g.layers.push_back(conv_layer("upsampler", "conv_cat", ConvSpec::make(C, up, 3)));
  LayerSpec shuffle = op_layer("shuffle", OpKind::PixelShuffle, {"upsampler"});
  shuffle.scale = cfg.scale;
  g.layers.push_back(std::move(shuffle));
  g.output = "shuffle";
  g.validate();
  return g;
}

BlockSpec block_of(const ModelGraph& graph, int index) {
  const std::string p = block_prefix(index);
  BlockSpec b{conv_named(graph, p + ".conv_a"), conv_named(graph, p + ".conv_b"), conv_named(graph, p + ".conv_c"),
              conv_named(graph, p + ".attn")};
  b.validate();
  return b;
}

GraphMeta default_meta(const std::string& model) {
  if (model == "spanv2") {
    const SpanV2Config c;
    return {model, c.in_channels, c.channels, c.blocks, c.scale};
  }
  if (model == "span") {
    const SpanConfig c;
    return {model, c.in_channels, c.channels, c.blocks, c.scale};
  }
  throw Error("unknown model '" + model + "' (expected spanv2 or span)");
}

ModelGraph build_model(const GraphMeta& meta) {
  if (meta.model == "spanv2") return build_spanv2({meta.channels, meta.blocks, meta.scale, meta.in_channels});
  if (meta.model == "span") return build_span_baseline({meta.channels, meta.blocks, meta.scale, meta.in_channels});
  throw Error("unknown model '" + meta.model + "' (expected spanv2 or span)");
}

void initialize(ModelGraph& graph, uint64_t seed) {
  init_random(graph, seed);
  if (graph.meta.model == "spanv2")
    if (LayerSpec* near = graph.find("conv_near")) near->conv = near_pixel_init(near->conv, graph.meta.scale);
}

void attach_adapters(ModelGraph& graph, const AdapterConfig& cfg, uint64_t seed) {
  SeededUniform rng(seed);
  for (LayerSpec& l : graph.layers) {
    if (l.kind != OpKind::Conv || l.conv.groups != 1 || l.conv.kernel != Extent2{3, 3}) continue;
    const ConvSpec& base = l.conv;
    const float bound = 1.0f / std::sqrt(static_cast<float>(base.in_channels * 9));
    if (cfg.parallel_1x1) {
      ConvSpec b = ConvSpec::make(base.in_channels, base.out_channels, 1);
      rng.fill(b.weight, -bound, bound);
      rng.fill(b.bias, -bound, bound);
      l.branches.push_back(std::move(b));
    }
    l.identity_branch = cfg.identity && base.in_channels == base.out_channels;
    if (cfg.lora_rank > 0) {
      LoraFactors f;
      f.rank = cfg.lora_rank;
      f.kernel = 3;
      f.alpha = cfg.lora_alpha;
      f.a.resize(static_cast<size_t>(f.rank) * 3 * base.in_channels * 3);
      f.b.resize(static_cast<size_t>(base.out_channels) * 3 * f.rank * 3);
      rng.fill(f.a, -bound, bound);
      rng.fill(f.b, -0.25f * bound, 0.25f * bound);
      l.lora = std::move(f);
    }
  }
  graph.validate();
}

}  // namespace esr
