#pragma once

#include "esr/graph.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace esr {

// Binary layout, all integers little-endian:
//   "SRWT" | u16 version | u32 header length | header JSON | payload
// header: {"model", "seed"?, "config", "graph"?, "tensors": [{name, shape, dtype: "f32", offset, nbytes}]}
// with offsets relative to the payload start. Tensors are contiguous, in
// increasing offset order, and cover the payload exactly.
inline constexpr char kArchiveMagic[4] = {'S', 'R', 'W', 'T'};
inline constexpr uint16_t kArchiveVersion = 1;

class ArchiveError : public Error {
 public:
  enum class Kind {
    BadMagic,
    UnsupportedVersion,
    Truncated,
    MalformedHeader,
    OverlappingTensors,
    PayloadNotCovered,
    UnresolvedTensor,
    MissingTensor,
    ShapeMismatch,
    Io,
  };
  ArchiveError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct ArchiveTensor {
  std::string name;
  std::vector<int64_t> shape;
  std::vector<float> values;
};

struct WeightArchive {
  std::string model;
  std::optional<uint64_t> seed;
  nlohmann::json config = nlohmann::json::object();
  // Optional layer list; when absent the topology comes from the model builder.
  nlohmann::json graph;
  std::vector<ArchiveTensor> tensors;

  const ArchiveTensor* find(const std::string& name) const;
};

std::vector<uint8_t> encode_archive(const WeightArchive& archive);
WeightArchive decode_archive(const std::vector<uint8_t>& bytes);

WeightArchive archive_from_graph(const ModelGraph& graph, std::optional<uint64_t> seed);
// Rebuilds the stored layer list (or the named built-in model when the header
// has none) and binds every tensor to a layer.
ModelGraph graph_from_archive(const WeightArchive& archive);

struct LoadedModel {
  ModelGraph graph;
  std::optional<uint64_t> seed;
};

void save_archive(const ModelGraph& graph, const std::filesystem::path& path, std::optional<uint64_t> seed = std::nullopt);
LoadedModel load_archive(const std::filesystem::path& path);

std::vector<uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<uint8_t>& bytes);

}  // namespace esr
