#include "esr/oracles.hpp"
#include "esr/tensor.hpp"
#include "support.hpp"

#include <doctest.h>

#include <algorithm>

using namespace esr;

TEST_SUITE("tensor") {
  TEST_CASE("shape invariants are enforced") {
    CHECK_THROWS_AS(Tensor({1, 0, 2, 2}), ShapeError);
    CHECK_THROWS_AS(Tensor({1, 1, 2, 2}, std::vector<float>(3)), ShapeError);
    CHECK(Tensor({2, 3, 4, 5}).numel() == 120);
  }

  TEST_CASE("conv2d scalar product") {
    ConvSpec s = ConvSpec::make(1, 1, 1, 1, false);
    s.weight = {3.0f};
    CHECK(conv2d(Tensor({1, 1, 1, 1}, 2.0f), s).at(0, 0, 0, 0) == 6.0f);
  }

  TEST_CASE("conv2d all-ones 3x3 kernel counts the in-bounds taps") {
    ConvSpec s = ConvSpec::make(1, 1, 3, 1, false);
    std::fill(s.weight.begin(), s.weight.end(), 1.0f);
    const Tensor y = conv2d(Tensor({1, 1, 3, 3}, 1.0f), s);
    CHECK(y.at(0, 0, 1, 1) == 9.0f);
    CHECK(y.at(0, 0, 0, 1) == 6.0f);
    CHECK(y.at(0, 0, 1, 0) == 6.0f);
    CHECK(y.at(0, 0, 0, 0) == 4.0f);
    CHECK(y.at(0, 0, 2, 2) == 4.0f);
  }

  TEST_CASE("depthwise conv keeps groups apart") {
    ConvSpec s = ConvSpec::make(2, 2, 1, 2, false);
    s.weight = {2.0f, 3.0f};
    const Tensor y = conv2d(Tensor({1, 2, 1, 1}, std::vector<float>{1.0f, 10.0f}), s);
    CHECK(y.at(0, 0, 0, 0) == 2.0f);
    CHECK(y.at(0, 1, 0, 0) == 30.0f);
  }

  TEST_CASE("conv2d errors name the offending dimension") {
    const ConvSpec s = ConvSpec::make(3, 4, 3);
    try {
      conv2d(Tensor({1, 2, 5, 5}), s);
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      CHECK(std::string(e.what()).find("input channels") != std::string::npos);
    }
    CHECK_THROWS_AS(ConvSpec::make(3, 4, 3, 2), ShapeError);
  }

  TEST_CASE("conv2d matches direct summation for random specs") {
    test::Gen g(11);
    for (int t = 0; t < 25; ++t) {
      const int groups = g.integer(1, 3);
      const int in = groups * g.integer(1, 3), out = groups * g.integer(1, 3);
      const int k = 2 * g.integer(0, 2) + 1;
      ConvSpec s = g.conv(in, out, k, groups, t % 2 == 0);
      s.padding = {g.integer(0, k), g.integer(0, k)};
      const Tensor x = g.tensor({g.integer(1, 2), in, g.integer(k, 9), g.integer(k, 9)});
      const Discrepancy d = compare(conv2d(x, s, g.integer(1, 4)), oracle::conv2d(x, s));
      CHECK(d.max_rel <= kRelTol);
    }
  }

  TEST_CASE("property: identity kernel is the identity map") {
    test::Gen g(12);
    ConvSpec s = ConvSpec::make(1, 1, 1, 1, false);
    s.weight = {1.0f};
    for (int t = 0; t < 10; ++t) {
      const Tensor x = g.tensor({1, 1, g.integer(1, 12), g.integer(1, 12)}, -100, 100);
      CHECK(bit_equal(conv2d(x, s), x));
    }
  }

  TEST_CASE("property: conv2d is linear without bias") {
    test::Gen g(13);
    for (int t = 0; t < 20; ++t) {
      const ConvSpec s = g.conv(3, 4, 3, 1, false);
      const Shape sh{1, 3, 6, 7};
      const Tensor x = g.tensor(sh), y = g.tensor(sh);
      const float a = g.real(-2, 2), b = g.real(-2, 2);
      Tensor mix(sh);
      for (int64_t i = 0; i < mix.numel(); ++i) mix.data()[i] = a * x.data()[i] + b * y.data()[i];
      const Tensor cx = conv2d(x, s), cy = conv2d(y, s);
      Tensor want(cx.shape());
      for (int64_t i = 0; i < want.numel(); ++i) want.data()[i] = a * cx.data()[i] + b * cy.data()[i];
      const Discrepancy d = compare(conv2d(mix, s), want);
      CHECK(d.max_abs <= std::max(kAbsTol * 10, kRelTol * 10));
    }
  }

  TEST_CASE("conv2d is deterministic across thread counts") {
    test::Gen g(14);
    const ConvSpec s = g.conv(8, 16, 3);
    const Tensor x = g.tensor({2, 8, 10, 10});
    const Tensor ref = conv2d(x, s, 1);
    for (int threads : {2, 3, 8}) CHECK(bit_equal(conv2d(x, s, threads), ref));
  }

  TEST_CASE("relu") {
    const Tensor y = relu(Tensor({1, 3, 1, 1}, std::vector<float>{-1, 0, 2}));
    CHECK(y.at(0, 0, 0, 0) == 0.0f);
    CHECK(y.at(0, 1, 0, 0) == 0.0f);
    CHECK(y.at(0, 2, 0, 0) == 2.0f);
    const Tensor neg = relu(Tensor({1, 2, 3, 3}, -4.0f));
    CHECK(std::all_of(neg.data().begin(), neg.data().end(), [](float v) { return v == 0.0f; }));
    test::Gen g(15);
    const Tensor x = g.tensor({1, 4, 5, 5});
    CHECK(bit_equal(relu(relu(x)), relu(x)));
  }

  TEST_CASE("pixel_shuffle layout and roundtrip") {
    const Tensor y = pixel_shuffle(Tensor({1, 4, 1, 1}, std::vector<float>{1, 2, 3, 4}), 2);
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    CHECK(y.at(0, 0, 0, 0) == 1.0f);
    CHECK(y.at(0, 0, 0, 1) == 2.0f);
    CHECK(y.at(0, 0, 1, 0) == 3.0f);
    CHECK(y.at(0, 0, 1, 1) == 4.0f);
    test::Gen g(16);
    const Tensor x = g.tensor({2, 5, 3, 4});
    CHECK(bit_equal(pixel_shuffle(x, 1), x));
    CHECK_THROWS_AS(pixel_shuffle(Tensor({1, 5, 2, 2}), 2), ShapeError);
    const Tensor z = g.tensor({1, 3, 8, 12});
    CHECK(bit_equal(pixel_shuffle(pixel_unshuffle(z, 4), 4), z));
    const Tensor w = g.tensor({1, 32, 3, 5});
    CHECK(bit_equal(pixel_shuffle(w, 4), oracle::pixel_shuffle(w, 4)));
  }

  TEST_CASE("property: pixel_shuffle preserves the multiset of values") {
    test::Gen g(17);
    for (int t = 0; t < 10; ++t) {
      const int s = g.integer(1, 4);
      const Tensor x = g.tensor({1, s * s * g.integer(1, 3), g.integer(1, 5), g.integer(1, 5)});
      std::vector<float> a(x.data().begin(), x.data().end());
      const Tensor y = pixel_shuffle(x, s);
      std::vector<float> b(y.data().begin(), y.data().end());
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      CHECK(a == b);
    }
  }

  TEST_CASE("add and mul") {
    const Tensor y = add(Tensor({1, 2, 1, 1}, std::vector<float>{1, 2}), Tensor({1, 2, 1, 1}, std::vector<float>{3, 4}));
    CHECK(y.at(0, 0, 0, 0) == 4.0f);
    CHECK(y.at(0, 1, 0, 0) == 6.0f);
    test::Gen g(18);
    const Tensor x = g.tensor({1, 3, 4, 4});
    CHECK(bit_equal(mul(x, Tensor(x.shape(), 1.0f)), x));
    const Tensor scale({1, 3, 1, 1}, std::vector<float>{1, 2, 3});
    const Tensor m = mul(x, scale);
    CHECK(m.at(0, 2, 1, 1) == x.at(0, 2, 1, 1) * 3.0f);
    CHECK(bit_equal(mul(scale, x), m));
    CHECK_THROWS_AS(add(x, Tensor({1, 3, 4, 5})), ShapeError);
  }

  TEST_CASE("concat and slice") {
    test::Gen g(19);
    const Tensor parts[] = {g.tensor({1, 48, 4, 4}), g.tensor({1, 32, 4, 4})};
    const Tensor cat = concat_channels(parts);
    CHECK(cat.c() == 80);
    CHECK(bit_equal(slice_channels(cat, 0, 48), parts[0]));
    CHECK(bit_equal(slice_channels(cat, 48, 32), parts[1]));
    const Tensor one[] = {parts[0]};
    CHECK(bit_equal(concat_channels(one), parts[0]));
    const Tensor bad[] = {parts[0], g.tensor({1, 2, 4, 5})};
    CHECK_THROWS_AS(concat_channels(bad), ShapeError);
  }

  TEST_CASE("compare uses max(|b|, abs/rel) as the relative denominator") {
    const Tensor a({1, 1, 1, 2}, std::vector<float>{1.0f, 0.0f});
    const Tensor b({1, 1, 1, 2}, std::vector<float>{1.00001f, 5e-7f});
    const Discrepancy d = compare(a, b);
    CHECK(d.max_rel == doctest::Approx(1e-5).epsilon(0.05));
  }
}
