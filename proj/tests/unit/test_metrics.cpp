#include "esr/graph.hpp"
#include "esr/image.hpp"
#include "esr/metrics.hpp"
#include "esr/model_zoo.hpp"
#include "esr/rewrite.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace esr;

namespace {

RgbImage random_image(test::Gen& g, int w, int h) {
  RgbImage img(w, h);
  for (auto& p : img.pixels) p = static_cast<uint8_t>(g.integer(0, 255));
  return img;
}

ModelGraph single_conv(int in, int out, int k) {
  ModelGraph g;
  g.meta = {"probe", in, out, 0, 1};
  LayerSpec l;
  l.name = "conv";
  l.inputs = {kGraphInput};
  l.conv = ConvSpec::make(in, out, k);
  g.layers = {l};
  g.output = "conv";
  return g;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("psnr anchors") {
    test::Gen g(1);
    RgbImage a = random_image(g, 20, 16);
    for (auto& p : a.pixels) p = std::min<uint8_t>(p, 254);
    CHECK(psnr(a, a) == kPsnrCap);
    RgbImage b = a;
    for (auto& p : b.pixels) ++p;
    CHECK(psnr(b, a) == doctest::Approx(48.1308).epsilon(1e-5));
    CHECK(psnr(b, a) == doctest::Approx(10 * std::log10(65025.0)));
  }

  TEST_CASE("border corruption is invisible") {
    test::Gen g(2);
    const RgbImage a = random_image(g, 24, 24);
    RgbImage b = a;
    for (int y = 0; y < 24; ++y)
      for (int x = 0; x < 24; ++x)
        if (y < 4 || x < 4 || y >= 20 || x >= 20) b.at(y, x, 1) = static_cast<uint8_t>(b.at(y, x, 1) ^ 0xff);
    CHECK(psnr(b, a, 4) == kPsnrCap);
    CHECK(psnr(b, a, 3) < kPsnrCap);
  }

  TEST_CASE("psnr errors") {
    CHECK_THROWS_AS(psnr(RgbImage(8, 8), RgbImage(8, 9)), ShapeError);
    CHECK_THROWS_AS(psnr(RgbImage(8, 8), RgbImage(8, 8), 4), ShapeError);
    CHECK(psnr(RgbImage(9, 9), RgbImage(9, 9), 4) == kPsnrCap);
  }

  TEST_CASE("property: psnr symmetric and decreasing in error") {
    test::Gen g(3);
    for (int t = 0; t < 10; ++t) {
      const RgbImage a = random_image(g, 16, 12), b = random_image(g, 16, 12);
      CHECK(psnr(a, b) == psnr(b, a));
      CHECK(psnr_from_mse(1.0 + t) > psnr_from_mse(2.0 + t));
    }
  }

  TEST_CASE("closed-form counts for one conv") {
    const ModelGraph g = single_conv(3, 32, 3);
    CHECK(count_params(g) == 896);
    CHECK(count_flops(g, 256, 256) == 56623104 + 2097152);
  }

  TEST_CASE("property: flops scale linearly with the pixel count") {
    const ModelGraph g = build_spanv2();
    const int64_t base = count_flops(g, 16, 16);
    CHECK(count_flops(g, 32, 16) == 2 * base);
    CHECK(count_flops(g, 64, 64) == 16 * base);
    CHECK(count_flops(g, 256, 256) == 256 * base);
  }

  TEST_CASE("merged graphs report plain-graph counts") {
    ModelGraph plain = build_span_baseline();
    initialize(plain, 1);
    ModelGraph adapted = plain;
    attach_adapters(adapted, {}, 2);
    const ModelGraph merged = apply_rewrites(adapted).graph;
    CHECK(count_params(merged) == count_params(plain));
    CHECK(count_flops(merged) == count_flops(plain));
  }

  TEST_CASE("bench contract") {
    ModelGraph g = build_spanv2({8, 1, 4, 3});
    initialize(g, 1);
    test::Gen r(4);
    const std::vector<Tensor> imgs{r.tensor({1, 3, 8, 8}), r.tensor({1, 3, 6, 6})};
    const RuntimeStats s = bench_runtime(g, imgs, 1, 3);
    REQUIRE(s.per_image_ms.size() == 2);
    for (double v : s.per_image_ms) CHECK(v > 0.0);
    CHECK(s.mean_ms > 0.0);
    CHECK_THROWS(bench_runtime(g, {}, 0, 1));
    CHECK_THROWS(bench_runtime(g, imgs, 0, 0));
  }

  TEST_CASE("set averaging and median") {
    CHECK(average_of_sets(5.700, 4.810) == doctest::Approx(5.255));
    CHECK(median({3.0, 1.0, 2.0}) == 2.0);
    CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
  }

  TEST_CASE("image conversion") {
    test::Gen g(5);
    const RgbImage a = random_image(g, 7, 5);
    CHECK(tensor_to_image(image_to_tensor(a)) == a);
    CHECK(decode_ppm(encode_ppm(a)) == a);
    Tensor wild({1, 3, 1, 1}, std::vector<float>{-1.0f, 2.0f, std::nanf("")});
    const RgbImage c = tensor_to_image(wild);
    CHECK(c.at(0, 0, 0) == 0);
    CHECK(c.at(0, 0, 1) == 255);
    CHECK(c.at(0, 0, 2) == 0);
    const std::string with_comment = "P6\n# note\n1 1\n255\n\x01\x02\x03";
    const RgbImage d = decode_ppm(std::vector<uint8_t>(with_comment.begin(), with_comment.end()));
    CHECK(d.at(0, 0, 2) == 3);
    const std::string truncated = "P6\n2 2\n255\n\x01";
    CHECK_THROWS(decode_ppm(std::vector<uint8_t>(truncated.begin(), truncated.end())));
  }

  TEST_CASE("report json") {
    MetricsReport r;
    r.params = 5;
    r.traffic = TrafficCounter{6, 3};
    const auto j = r.to_json();
    CHECK(j["params"] == 5);
    CHECK(j["traffic"]["element_reads"] == 6);
  }
}
