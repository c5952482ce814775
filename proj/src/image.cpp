#include "esr/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

namespace esr {

RgbImage::RgbImage(int w, int h, uint8_t fill) : width(w), height(h) {
  if (w < 1 || h < 1) throw ShapeError("image: extents must be >= 1");
  pixels.assign(static_cast<size_t>(w) * h * 3, fill);
}

RgbImage decode_ppm(const std::vector<uint8_t>& bytes) {
  size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&](const char* what) {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw Error(std::string("ppm: missing ") + what);
    long v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      if (v > 1 << 24) throw Error(std::string("ppm: ") + what + " too large");
    }
    return static_cast<int>(v);
  };

  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw Error("ppm: not a binary P6 file");
  pos = 2;
  const int w = read_int("width");
  const int h = read_int("height");
  const int maxval = read_int("maxval");
  if (maxval != 255) throw Error("ppm: only maxval 255 is supported, got " + std::to_string(maxval));
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw Error("ppm: malformed header");
  ++pos;  // single whitespace before raster
  RgbImage img(w, h);
  if (bytes.size() - pos < img.pixels.size()) throw Error("ppm: truncated raster");
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), img.pixels.size(), img.pixels.begin());
  return img;
}

std::vector<uint8_t> encode_ppm(const RgbImage& image) {
  const std::string header = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  return out;
}

RgbImage read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("ppm: cannot open '" + path.string() + "'");
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_ppm(bytes);
}

void write_ppm(const RgbImage& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("ppm: cannot write '" + path.string() + "'");
  const auto bytes = encode_ppm(image);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("ppm: write failed for '" + path.string() + "'");
}

Tensor image_to_tensor(const RgbImage& image) {
  Tensor t({1, 3, image.height, image.width});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x) t.at(0, c, y, x) = static_cast<float>(image.at(y, x, c)) / 255.0f;
  return t;
}

RgbImage tensor_to_image(const Tensor& t, int64_t n) {
  if (t.c() != 3) throw ShapeError("tensor_to_image: expected 3 channels, got " + std::to_string(t.c()));
  RgbImage img(static_cast<int>(t.w()), static_cast<int>(t.h()));
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        const float raw = t.at(n, c, y, x);
        const float v = std::isnan(raw) ? 0.0f : std::clamp(raw, 0.0f, 1.0f);
        img.at(y, x, c) = static_cast<uint8_t>(std::lround(v * 255.0f));
      }
  return img;
}

}  // namespace esr
