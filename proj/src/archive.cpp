#include "esr/archive.hpp"

#include "esr/model_zoo.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

namespace esr {

namespace {

using Kind = ArchiveError::Kind;

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xff));
  out.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

uint32_t get_u32(const uint8_t* p) {
  return uint32_t{p[0]} | (uint32_t{p[1]} << 8) | (uint32_t{p[2]} << 16) | (uint32_t{p[3]} << 24);
}

int64_t element_count(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 1) return -1;
    n *= d;
  }
  return n;
}

std::vector<int64_t> conv_shape(const ConvSpec& c) {
  return {c.out_channels, c.in_per_group(), c.kernel.h, c.kernel.w};
}

std::string shape_str(const std::vector<int64_t>& s) {
  std::ostringstream os;
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  return os.str();
}

void expect_shape(const ArchiveTensor& t, const std::vector<int64_t>& want) {
  if (t.shape != want)
    throw ArchiveError(Kind::ShapeMismatch,
                       "archive: tensor '" + t.name + "' has shape " + shape_str(t.shape) + ", expected " + shape_str(want));
}

OpKind op_from_name(const std::string& name) {
  for (OpKind k : {OpKind::Conv, OpKind::ReLU, OpKind::SiLU, OpKind::CenteredSigmoid, OpKind::Add, OpKind::Mul,
                   OpKind::Concat, OpKind::PixelShuffle, OpKind::AttentionGate})
    if (name == op_name(k)) return k;
  throw ArchiveError(Kind::MalformedHeader, "archive: unknown op '" + name + "' in graph description");
}

nlohmann::json topology_to_json(const ModelGraph& g) {
  nlohmann::json layers = nlohmann::json::array();
  for (const LayerSpec& l : g.layers) {
    nlohmann::json j{{"name", l.name}, {"op", op_name(l.kind)}, {"inputs", l.inputs}};
    if (l.has_params())
      j["conv"] = {{"in", l.conv.in_channels},
                   {"out", l.conv.out_channels},
                   {"kernel", {l.conv.kernel.h, l.conv.kernel.w}},
                   {"padding", {l.conv.padding.h, l.conv.padding.w}},
                   {"groups", l.conv.groups},
                   {"bias", l.conv.has_bias()}};
    if (l.kind == OpKind::PixelShuffle) j["scale"] = l.scale;
    layers.push_back(std::move(j));
  }
  return {{"layers", layers}, {"output", g.output}};
}

ModelGraph graph_from_topology(const nlohmann::json& topo, const GraphMeta& meta) {
  ModelGraph g;
  g.meta = meta;
  for (const auto& j : topo.at("layers")) {
    LayerSpec l;
    l.name = j.at("name").get<std::string>();
    l.kind = op_from_name(j.at("op").get<std::string>());
    l.inputs = j.at("inputs").get<std::vector<std::string>>();
    if (l.has_params()) {
      const auto& c = j.at("conv");
      l.conv.in_channels = c.at("in").get<int>();
      l.conv.out_channels = c.at("out").get<int>();
      l.conv.kernel = {c.at("kernel").at(0).get<int>(), c.at("kernel").at(1).get<int>()};
      l.conv.padding = {c.at("padding").at(0).get<int>(), c.at("padding").at(1).get<int>()};
      l.conv.groups = c.at("groups").get<int>();
      l.conv.validate();
      l.conv.weight.assign(static_cast<size_t>(l.conv.weight_count()), 0.0f);
      if (c.at("bias").get<bool>()) l.conv.bias.assign(static_cast<size_t>(l.conv.out_channels), 0.0f);
    }
    if (l.kind == OpKind::PixelShuffle) l.scale = j.at("scale").get<int>();
    g.layers.push_back(std::move(l));
  }
  g.output = topo.at("output").get<std::string>();
  return g;
}

}  // namespace

const ArchiveTensor* WeightArchive::find(const std::string& name) const {
  for (const ArchiveTensor& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

std::vector<uint8_t> encode_archive(const WeightArchive& a) {
  nlohmann::json header;
  header["model"] = a.model;
  if (a.seed) header["seed"] = *a.seed;
  header["config"] = a.config;
  header["tensors"] = nlohmann::json::array();
  uint64_t offset = 0;
  for (const ArchiveTensor& t : a.tensors) {
    if (element_count(t.shape) != static_cast<int64_t>(t.values.size()))
      throw ArchiveError(Kind::ShapeMismatch, "archive: tensor '" + t.name + "' value count does not match its shape");
    const uint64_t nbytes = t.values.size() * 4;
    header["tensors"].push_back({{"name", t.name}, {"shape", t.shape}, {"dtype", "f32"}, {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
  }
  if (!a.graph.is_null()) header["graph"] = a.graph;
  const std::string text = header.dump();

  std::vector<uint8_t> out(kArchiveMagic, kArchiveMagic + 4);
  put_u16(out, kArchiveVersion);
  put_u32(out, static_cast<uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + offset);
  for (const ArchiveTensor& t : a.tensors)
    for (float v : t.values) {
      uint32_t bits;
      std::memcpy(&bits, &v, 4);
      put_u32(out, bits);
    }
  return out;
}

WeightArchive decode_archive(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kArchiveMagic, 4) != 0)
    throw ArchiveError(Kind::BadMagic, "archive: bad magic (expected SRWT)");
  if (bytes.size() < 10) throw ArchiveError(Kind::Truncated, "archive: truncated preamble");
  const uint16_t version = static_cast<uint16_t>(bytes[4] | (bytes[5] << 8));
  if (version != kArchiveVersion)
    throw ArchiveError(Kind::UnsupportedVersion, "archive: unsupported format version " + std::to_string(version));
  const uint32_t header_len = get_u32(bytes.data() + 6);
  if (bytes.size() - 10 < header_len) throw ArchiveError(Kind::Truncated, "archive: truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 10, bytes.begin() + 10 + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw ArchiveError(Kind::MalformedHeader, std::string("archive: header is not valid JSON: ") + e.what());
  }

  WeightArchive a;
  const uint8_t* payload = bytes.data() + 10 + header_len;
  const uint64_t payload_size = bytes.size() - 10 - header_len;
  try {
    a.model = header.at("model").get<std::string>();
    if (header.contains("seed") && !header["seed"].is_null()) a.seed = header["seed"].get<uint64_t>();
    if (header.contains("config")) a.config = header["config"];
    if (header.contains("graph")) a.graph = header["graph"];
    uint64_t expected_offset = 0;
    for (const auto& entry : header.at("tensors")) {
      ArchiveTensor t;
      t.name = entry.at("name").get<std::string>();
      t.shape = entry.at("shape").get<std::vector<int64_t>>();
      const auto offset = entry.at("offset").get<uint64_t>();
      const auto nbytes = entry.at("nbytes").get<uint64_t>();
      if (entry.at("dtype").get<std::string>() != "f32")
        throw ArchiveError(Kind::MalformedHeader, "archive: tensor '" + t.name + "' has unsupported dtype");
      const int64_t count = element_count(t.shape);
      if (count < 0 || static_cast<uint64_t>(count) * 4 != nbytes)
        throw ArchiveError(Kind::MalformedHeader, "archive: tensor '" + t.name + "' nbytes does not match its shape");
      if (offset < expected_offset)
        throw ArchiveError(Kind::OverlappingTensors, "archive: tensor '" + t.name + "' overlaps the previous tensor");
      if (offset > expected_offset)
        throw ArchiveError(Kind::PayloadNotCovered, "archive: gap in payload before tensor '" + t.name + "'");
      if (offset + nbytes > payload_size) throw ArchiveError(Kind::Truncated, "archive: truncated payload at '" + t.name + "'");
      if (a.find(t.name)) throw ArchiveError(Kind::MalformedHeader, "archive: duplicate tensor '" + t.name + "'");
      t.values.resize(static_cast<size_t>(count));
      for (int64_t i = 0; i < count; ++i) {
        const uint32_t bits = get_u32(payload + offset + 4 * i);
        std::memcpy(&t.values[static_cast<size_t>(i)], &bits, 4);
      }
      expected_offset = offset + nbytes;
      a.tensors.push_back(std::move(t));
    }
    if (expected_offset != payload_size)
      throw ArchiveError(Kind::PayloadNotCovered, "archive: " + std::to_string(payload_size - expected_offset) +
                                                      " trailing payload bytes not covered by any tensor");
  } catch (const nlohmann::json::exception& e) {
    throw ArchiveError(Kind::MalformedHeader, std::string("archive: malformed header: ") + e.what());
  }
  return a;
}

WeightArchive archive_from_graph(const ModelGraph& g, std::optional<uint64_t> seed) {
  WeightArchive a;
  a.model = g.meta.model;
  a.seed = seed;
  a.config = {{"in_channels", g.meta.in_channels},
              {"channels", g.meta.channels},
              {"blocks", g.meta.blocks},
              {"scale", g.meta.scale}};
  a.graph = topology_to_json(g);
  for (const LayerSpec& l : g.layers) {
    if (!l.has_params()) continue;
    a.tensors.push_back({l.name + ".weight", conv_shape(l.conv), l.conv.weight});
    if (l.conv.has_bias()) a.tensors.push_back({l.name + ".bias", {l.conv.out_channels}, l.conv.bias});
    for (size_t j = 0; j < l.branches.size(); ++j) {
      const std::string p = l.name + ".branch" + std::to_string(j);
      a.tensors.push_back({p + ".weight", conv_shape(l.branches[j]), l.branches[j].weight});
      if (l.branches[j].has_bias()) a.tensors.push_back({p + ".bias", {l.branches[j].out_channels}, l.branches[j].bias});
    }
    if (l.identity_branch) a.tensors.push_back({l.name + ".identity", {1}, {1.0f}});
    if (l.lora) {
      const int64_t rk = int64_t{l.lora->rank} * l.lora->kernel;
      a.tensors.push_back({l.name + ".lora_A", {rk, int64_t{l.conv.in_channels} * l.lora->kernel}, l.lora->a});
      a.tensors.push_back(
          {l.name + ".lora_B", {int64_t{l.conv.out_channels / l.conv.groups} * l.lora->kernel, rk}, l.lora->b});
      a.tensors.push_back({l.name + ".lora_alpha", {1}, {l.lora->alpha}});
    }
  }
  return a;
}

ModelGraph graph_from_archive(const WeightArchive& a) {
  GraphMeta meta;
  meta.model = a.model;
  if (a.graph.is_null()) meta = default_meta(a.model);
  try {
    meta.in_channels = a.config.value("in_channels", meta.in_channels);
    meta.channels = a.config.value("channels", meta.channels);
    meta.blocks = a.config.value("blocks", meta.blocks);
    meta.scale = a.config.value("scale", meta.scale);
  } catch (const nlohmann::json::exception& e) {
    throw ArchiveError(Kind::MalformedHeader, std::string("archive: malformed config: ") + e.what());
  }
  ModelGraph g;
  try {
    g = a.graph.is_null() ? build_model(meta) : graph_from_topology(a.graph, meta);
  } catch (const nlohmann::json::exception& e) {
    throw ArchiveError(Kind::MalformedHeader, std::string("archive: malformed graph description: ") + e.what());
  } catch (const ShapeError& e) {
    throw ArchiveError(Kind::MalformedHeader, std::string("archive: invalid graph description: ") + e.what());
  }

  std::map<std::string, bool> weight_seen, bias_seen;
  std::map<std::string, const ArchiveTensor*> lora_a, lora_b, lora_alpha;
  std::map<std::string, std::map<int, std::pair<const ArchiveTensor*, const ArchiveTensor*>>> branches;
  auto param_layer = [&g](const std::string& name) -> LayerSpec* {
    LayerSpec* l = g.find(name);
    return l && l->has_params() ? l : nullptr;
  };
  auto unresolved = [](const std::string& name) {
    return ArchiveError(Kind::UnresolvedTensor, "archive: tensor '" + name + "' does not resolve to any layer");
  };

  for (const ArchiveTensor& t : a.tensors) {
    const auto dot = t.name.rfind('.');
    if (dot == std::string::npos) throw unresolved(t.name);
    const std::string prefix = t.name.substr(0, dot);
    const std::string suffix = t.name.substr(dot + 1);

    if (LayerSpec* l = param_layer(prefix)) {
      if (suffix == "weight") {
        expect_shape(t, conv_shape(l->conv));
        l->conv.weight = t.values;
        weight_seen[prefix] = true;
      } else if (suffix == "bias") {
        expect_shape(t, {l->conv.out_channels});
        l->conv.bias = t.values;
        bias_seen[prefix] = true;
      } else if (suffix == "identity") {
        l->identity_branch = !t.values.empty() && t.values[0] != 0.0f;
      } else if (suffix == "lora_A") {
        lora_a[prefix] = &t;
      } else if (suffix == "lora_B") {
        lora_b[prefix] = &t;
      } else if (suffix == "lora_alpha") {
        lora_alpha[prefix] = &t;
      } else {
        throw unresolved(t.name);
      }
      continue;
    }
    // <layer>.branch<j>.weight|bias
    const auto dot2 = prefix.rfind('.');
    if (dot2 == std::string::npos || (suffix != "weight" && suffix != "bias")) throw unresolved(t.name);
    const std::string layer = prefix.substr(0, dot2);
    const std::string tag = prefix.substr(dot2 + 1);
    if (!param_layer(layer) || tag.rfind("branch", 0) != 0 || tag.size() == 6 ||
        tag.find_first_not_of("0123456789", 6) != std::string::npos)
      throw unresolved(t.name);
    auto& slot = branches[layer][std::stoi(tag.substr(6))];
    (suffix == "weight" ? slot.first : slot.second) = &t;
  }

  for (const LayerSpec& l : g.layers)
    if (l.has_params() && !weight_seen.count(l.name))
      throw ArchiveError(Kind::MissingTensor, "archive: missing tensor '" + l.name + ".weight'");
    else if (l.has_params() && l.conv.has_bias() && !bias_seen.count(l.name))
      throw ArchiveError(Kind::MissingTensor, "archive: missing tensor '" + l.name + ".bias'");

  for (auto& [name, slots] : branches) {
    LayerSpec& l = *param_layer(name);
    int expected = 0;
    for (auto& [index, pair] : slots) {
      if (index != expected++ || !pair.first)
        throw ArchiveError(Kind::MissingTensor, "archive: branches of '" + name + "' are not numbered 0..n-1 with weights");
      const ArchiveTensor& w = *pair.first;
      if (w.shape.size() != 4 || w.shape[2] != w.shape[3] || w.shape[2] % 2 == 0)
        throw ArchiveError(Kind::ShapeMismatch, "archive: branch '" + w.name + "' must be an odd square kernel");
      ConvSpec b = ConvSpec::make(l.conv.in_channels, l.conv.out_channels, static_cast<int>(w.shape[2]), l.conv.groups,
                                  pair.second != nullptr);
      expect_shape(w, conv_shape(b));
      b.weight = w.values;
      if (pair.second) {
        expect_shape(*pair.second, {b.out_channels});
        b.bias = pair.second->values;
      }
      l.branches.push_back(std::move(b));
    }
  }

  for (auto& [name, at] : lora_a) {
    LayerSpec& l = *param_layer(name);
    if (!lora_b.count(name) || !lora_alpha.count(name))
      throw ArchiveError(Kind::MissingTensor, "archive: incomplete LoRA factors for '" + name + "'");
    const int k = l.conv.kernel.h;
    if (at->shape.size() != 2 || at->shape[0] % k != 0)
      throw ArchiveError(Kind::ShapeMismatch, "archive: '" + at->name + "' rows must be a multiple of the kernel size");
    LoraFactors f;
    f.kernel = k;
    f.rank = static_cast<int>(at->shape[0] / k);
    f.alpha = lora_alpha[name]->values.at(0);
    expect_shape(*at, {int64_t{f.rank} * k, int64_t{l.conv.in_channels} * k});
    expect_shape(*lora_b[name], {int64_t{l.conv.out_channels / l.conv.groups} * k, int64_t{f.rank} * k});
    f.a = at->values;
    f.b = lora_b[name]->values;
    l.lora = std::move(f);
  }
  for (const auto& [name, t] : lora_b)
    if (!lora_a.count(name)) throw ArchiveError(Kind::MissingTensor, "archive: incomplete LoRA factors for '" + name + "'");

  try {
    g.validate();
  } catch (const Error& e) {
    throw ArchiveError(Kind::MalformedHeader, std::string("archive: ") + e.what());
  }
  return g;
}

std::vector<uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArchiveError(Kind::Io, "cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArchiveError(Kind::Io, "cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ArchiveError(Kind::Io, "write failed for '" + path.string() + "'");
}

void save_archive(const ModelGraph& graph, const std::filesystem::path& path, std::optional<uint64_t> seed) {
  write_file(path, encode_archive(archive_from_graph(graph, seed)));
}

LoadedModel load_archive(const std::filesystem::path& path) {
  const WeightArchive a = decode_archive(read_file(path));
  return {graph_from_archive(a), a.seed};
}

}  // namespace esr
