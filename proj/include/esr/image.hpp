#pragma once

#include "esr/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace esr {

// 8-bit interleaved RGB.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;  // height * width * 3

  RgbImage() = default;
  RgbImage(int width, int height, uint8_t fill = 0);

  uint8_t& at(int y, int x, int ch) { return pixels[(static_cast<size_t>(y) * width + x) * 3 + ch]; }
  uint8_t at(int y, int x, int ch) const { return pixels[(static_cast<size_t>(y) * width + x) * 3 + ch]; }
  bool operator==(const RgbImage&) const = default;
};

// Binary PPM, P6, maxval 255.
RgbImage read_ppm(const std::filesystem::path& path);
void write_ppm(const RgbImage& image, const std::filesystem::path& path);
RgbImage decode_ppm(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> encode_ppm(const RgbImage& image);

// 1 x 3 x h x w tensor with values v / 255.
Tensor image_to_tensor(const RgbImage& image);
// Clamps to [0, 1], scales by 255 and rounds to nearest. Uses sample `n`.
RgbImage tensor_to_image(const Tensor& t, int64_t n = 0);

}  // namespace esr
