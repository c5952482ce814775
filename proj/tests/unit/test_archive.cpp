#include "esr/archive.hpp"
#include "esr/model_zoo.hpp"
#include "esr/rewrite.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cstring>

using namespace esr;

namespace {

ArchiveError::Kind decode_kind(const std::vector<uint8_t>& bytes) {
  try {
    graph_from_archive(decode_archive(bytes));
  } catch (const ArchiveError& e) {
    return e.kind();
  }
  FAIL("archive was accepted");
  return ArchiveError::Kind::Io;
}

std::vector<uint8_t> raw_archive(const std::string& header, size_t payload_bytes) {
  std::vector<uint8_t> b = {'S', 'R', 'W', 'T', 1, 0};
  const auto len = static_cast<uint32_t>(header.size());
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<uint8_t>(len >> (8 * i)));
  b.insert(b.end(), header.begin(), header.end());
  b.resize(b.size() + payload_bytes, 0);
  return b;
}

bool same_weights(const ModelGraph& a, const ModelGraph& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (size_t i = 0; i < a.layers.size(); ++i) {
    const LayerSpec &x = a.layers[i], &y = b.layers[i];
    if (x.name != y.name || x.inputs != y.inputs || x.kind != y.kind) return false;
    if (x.conv.weight.size() != y.conv.weight.size() ||
        std::memcmp(x.conv.weight.data(), y.conv.weight.data(), x.conv.weight.size() * 4) != 0)
      return false;
    if (x.conv.bias != y.conv.bias || x.branches.size() != y.branches.size()) return false;
    if (x.identity_branch != y.identity_branch || x.lora.has_value() != y.lora.has_value()) return false;
    if (x.lora && (x.lora->a != y.lora->a || x.lora->b != y.lora->b || x.lora->alpha != y.lora->alpha)) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("archive") {
  TEST_CASE("roundtrip is bit-exact") {
    for (const char* model : {"spanv2", "span"}) {
      ModelGraph g = build_model(default_meta(model));
      initialize(g, 77);
      const std::vector<uint8_t> bytes = encode_archive(archive_from_graph(g, 77));
      const WeightArchive a = decode_archive(bytes);
      CHECK(a.seed == 77u);
      CHECK(a.model == model);
      CHECK(same_weights(graph_from_archive(a), g));
      CHECK(encode_archive(a) == bytes);
    }
  }

  TEST_CASE("little-endian payload layout") {
    WeightArchive a;
    a.model = "spanv2";
    a.tensors.push_back({"t", {1}, {1.0f}});
    const std::vector<uint8_t> b = encode_archive(a);
    CHECK(b[4] == 1);
    CHECK(b[5] == 0);
    // 1.0f = 0x3f800000
    CHECK(std::vector<uint8_t>(b.end() - 4, b.end()) == std::vector<uint8_t>{0x00, 0x00, 0x80, 0x3f});
  }

  TEST_CASE("adapters and custom configs survive the roundtrip") {
    ModelGraph g = build_spanv2({12, 2, 2, 3});
    initialize(g, 5);
    attach_adapters(g, {}, 6);
    const auto path = test::temp_path("adapters.srwt");
    save_archive(g, path, 5);
    const LoadedModel m = load_archive(path);
    CHECK(same_weights(m.graph, g));
    CHECK(m.graph.meta.channels == 12);
    CHECK(m.graph.meta.scale == 2);
  }

  TEST_CASE("composed graphs carry their own topology") {
    ModelGraph g;
    g.meta.model = "probe";
    LayerSpec head;
    head.name = "head";
    head.inputs = {kGraphInput};
    head.conv = ConvSpec::make(3, 8, 3);
    LayerSpec body = head;
    body.name = "body";
    body.inputs = {"head"};
    body.conv = ConvSpec::make(8, 8, 3);
    g.layers = {head, body};
    g.output = "body";
    init_random(g, 1);
    const ModelGraph c = apply_rewrites(g, {.compose = true}).graph;
    REQUIRE(c.layers.size() == 1);
    const ModelGraph back = graph_from_archive(decode_archive(encode_archive(archive_from_graph(c, {}))));
    CHECK(same_weights(back, c));
    CHECK(back.layers[0].conv.kernel == Extent2{5, 5});
  }

  TEST_CASE("distinct diagnostics for malformed archives") {
    ModelGraph g = build_spanv2();
    initialize(g, 1);
    std::vector<uint8_t> good = encode_archive(archive_from_graph(g, 1));

    std::vector<uint8_t> magic = good;
    magic[0] = 'X';
    CHECK(decode_kind(magic) == ArchiveError::Kind::BadMagic);

    std::vector<uint8_t> version = good;
    version[4] = 9;
    CHECK(decode_kind(version) == ArchiveError::Kind::UnsupportedVersion);

    std::vector<uint8_t> truncated(good.begin(), good.end() - 8);
    CHECK(decode_kind(truncated) == ArchiveError::Kind::Truncated);

    std::vector<uint8_t> trailing = good;
    trailing.push_back(0);
    CHECK(decode_kind(trailing) == ArchiveError::Kind::PayloadNotCovered);

    WeightArchive extra = decode_archive(good);
    extra.tensors.push_back({"nonexistent.weight", {1}, {0.0f}});
    CHECK(decode_kind(encode_archive(extra)) == ArchiveError::Kind::UnresolvedTensor);

    WeightArchive missing = decode_archive(good);
    missing.tensors.erase(missing.tensors.begin());
    CHECK(decode_kind(encode_archive(missing)) == ArchiveError::Kind::MissingTensor);

    WeightArchive no_bias = decode_archive(good);
    for (auto it = no_bias.tensors.begin(); it != no_bias.tensors.end(); ++it)
      if (it->name == "fuse_pw.bias") {
        no_bias.tensors.erase(it);
        break;
      }
    CHECK(decode_kind(encode_archive(no_bias)) == ArchiveError::Kind::MissingTensor);

    WeightArchive shape = decode_archive(good);
    shape.tensors[0].shape = {static_cast<int64_t>(shape.tensors[0].values.size())};
    CHECK(decode_kind(encode_archive(shape)) == ArchiveError::Kind::ShapeMismatch);
  }

  TEST_CASE("hand-built overlapping and gapped offsets") {
    const std::string overlap =
        R"({"model":"spanv2","tensors":[{"name":"a","shape":[2],"dtype":"f32","offset":0,"nbytes":8},)"
        R"({"name":"b","shape":[2],"dtype":"f32","offset":4,"nbytes":8}]})";
    CHECK(decode_kind(raw_archive(overlap, 12)) == ArchiveError::Kind::OverlappingTensors);
    const std::string gap =
        R"({"model":"spanv2","tensors":[{"name":"a","shape":[1],"dtype":"f32","offset":4,"nbytes":4}]})";
    CHECK(decode_kind(raw_archive(gap, 8)) == ArchiveError::Kind::PayloadNotCovered);
    CHECK(decode_kind(raw_archive("{not json", 0)) == ArchiveError::Kind::MalformedHeader);
  }

  TEST_CASE("missing file is an io error") {
    try {
      load_archive(test::temp_path("does-not-exist.srwt"));
      FAIL("expected ArchiveError");
    } catch (const ArchiveError& e) {
      CHECK(e.kind() == ArchiveError::Kind::Io);
    }
  }
}
