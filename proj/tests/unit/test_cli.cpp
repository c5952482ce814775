#include "esr/archive.hpp"
#include "esr/cli.hpp"
#include "esr/image.hpp"
#include "support.hpp"

#include <doctest.h>
#include <json.hpp>

#include <sstream>

using namespace esr;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli_dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

RgbImage noise_image(int w, int h, uint64_t seed) {
  test::Gen g(seed);
  RgbImage img(w, h);
  for (uint8_t& p : img.pixels) p = static_cast<uint8_t>(g.integer(0, 255));
  return img;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors") {
    const Run none = run({});
    CHECK(none.code == 2);
    const Run bad = run({"frobnicate"});
    CHECK(bad.code == 2);
    CHECK(bad.err.find("frobnicate") != std::string::npos);
    CHECK(bad.err.find("usage") != std::string::npos);
    CHECK(run({"psnr", test::temp_path("missing.ppm").string(), "x.ppm"}).code != 0);
  }

  TEST_CASE("psnr of identical images is capped") {
    const auto p = test::temp_path("cli_same.ppm");
    write_ppm(noise_image(20, 16, 1), p);
    const Run r = run({"psnr", "--border", "4", p.string(), p.string()});
    CHECK(r.code == 0);
    CHECK(r.out.find("100.000") != std::string::npos);
  }

  TEST_CASE("init then infer upscales by four") {
    const auto arch = test::temp_path("cli_model.srwt");
    const auto in = test::temp_path("cli_in.ppm");
    const auto out = test::temp_path("cli_out.ppm");
    REQUIRE(run({"init", "--seed", "3", "-o", arch.string()}).code == 0);
    write_ppm(noise_image(64, 64, 2), in);
    const Run r = run({"infer", arch.string(), in.string(), "-o", out.string(), "--threads", "2"});
    REQUIRE(r.code == 0);
    const RgbImage up = read_ppm(out);
    CHECK(up.width == 256);
    CHECK(up.height == 256);
  }

  TEST_CASE("fuse preserves outputs and drops adapters") {
    const auto arch = test::temp_path("cli_adapters.srwt");
    const auto fused = test::temp_path("cli_fused.srwt");
    REQUIRE(run({"init", "--adapters", "--channels", "12", "--blocks", "2", "--seed", "4", "-o", arch.string()}).code ==
            0);
    const Run r = run({"fuse", arch.string(), "-o", fused.string()});
    REQUIRE(r.code == 0);
    const auto report = nlohmann::json::parse(r.out);
    CHECK(report.at("passed").get<bool>());
    CHECK(report.at("end_to_end").at("max_rel").get<double>() <= 1e-5);
    CHECK(report.at("params_after").get<int64_t>() < report.at("params_before").get<int64_t>());
    for (const LayerSpec& l : load_archive(fused).graph.layers) CHECK_FALSE(l.has_adapters());
  }

  TEST_CASE("score reproduces the published table") {
    const Run r = run({"score", std::string(ESR_DATA_DIR) + "/table1.json"});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("XiaomiMM") != std::string::npos);
    CHECK(r.out.find("4.43") != std::string::npos);
  }

  TEST_CASE("params and flops of the default model") {
    CHECK(run({"params", "--model", "spanv2"}).out.find("140816") != std::string::npos);
    CHECK(run({"flops", "--model", "spanv2"}).out.find("9270460416") != std::string::npos);
  }

  TEST_CASE("selftest passes") {
    const Run r = run({"selftest"});
    CHECK(r.code == 0);
    CHECK(r.out.find("FAIL") == std::string::npos);
  }
}
