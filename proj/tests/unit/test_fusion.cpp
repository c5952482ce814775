#include "esr/fusion.hpp"
#include "esr/metrics.hpp"
#include "esr/model_zoo.hpp"
#include "esr/oracles.hpp"
#include "esr/rewrite.hpp"
#include "support.hpp"

#include <doctest.h>

#include <algorithm>

using namespace esr;

namespace {

Tensor crop(const Tensor& t, const Margin& m) {
  Tensor out({t.n(), t.c(), t.h() - m.top - m.bottom, t.w() - m.left - m.right});
  for (int64_t n = 0; n < out.n(); ++n)
    for (int64_t c = 0; c < out.c(); ++c)
      for (int64_t y = 0; y < out.h(); ++y)
        for (int64_t x = 0; x < out.w(); ++x) out.at(n, c, y, x) = t.at(n, c, y + m.top, x + m.left);
  return out;
}

LoraFactors random_lora(test::Gen& g, const ConvSpec& base, int rank, float alpha) {
  const int k = base.kernel.h;
  LoraFactors f{rank, k, alpha, std::vector<float>(size_t(rank) * k * base.in_channels * k),
                std::vector<float>(size_t(base.out_channels / base.groups) * k * rank * k)};
  for (float& v : f.a) v = g.real();
  for (float& v : f.b) v = g.real();
  return f;
}

}  // namespace

TEST_SUITE("fusion") {
  TEST_CASE("fused attention scalar example") {
    ConvSpec attn = ConvSpec::make(1, 1, 1);
    attn.weight = {0.5f};
    attn.bias = {0.1f};
    const Tensor y = fused_attention(Tensor({1, 1, 1, 1}, 2.0f), Tensor({1, 1, 1, 1}, 3.0f), attn);
    CHECK(y.at(0, 0, 0, 0) == doctest::Approx(8.0));
  }

  TEST_CASE("unit gate gives x + f3") {
    test::Gen g(1);
    ConvSpec attn = ConvSpec::make(6, 6, 1);
    std::fill(attn.bias.begin(), attn.bias.end(), 1.0f);
    const Tensor x = g.tensor({1, 6, 4, 4}), f3 = g.tensor({1, 6, 4, 4});
    CHECK(bit_equal(fused_attention(x, f3, attn), add(x, f3)));
  }

  TEST_CASE("property: fused equals reference and the oracle for every width") {
    test::Gen g(2);
    for (int c : {1, 16, 28, 32, 48, 52}) {
      const ConvSpec attn = g.conv(c, c, 1);
      const Shape s{g.integer(1, 2), c, g.integer(1, 7), g.integer(1, 7)};
      const Tensor x = g.tensor(s), f3 = g.tensor(s);
      TrafficCounter fused, ref;
      const Tensor y = fused_attention(x, f3, attn, &fused);
      CHECK(compare(y, reference_attention(x, f3, attn, &ref)).max_rel <= kRelTol);
      CHECK(compare(y, oracle::attention(x, f3, attn)).max_rel <= kRelTol);
      const auto N = static_cast<uint64_t>(s.numel());
      CHECK(fused.element_reads == 2 * N);
      CHECK(fused.element_writes == N);
      CHECK(ref.element_reads == 5 * N);
      CHECK(ref.element_writes == 3 * N);
    }
  }

  TEST_CASE("traffic on a 32x16x16 tensor") {
    test::Gen g(3);
    const ConvSpec attn = g.conv(32, 32, 1);
    const Tensor x = g.tensor({1, 32, 16, 16}), f3 = g.tensor({1, 32, 16, 16});
    TrafficCounter fused, ref;
    fused_attention(x, f3, attn, &fused);
    reference_attention(x, f3, attn, &ref);
    CHECK(fused.total() == 24576);
    CHECK(ref.total() == 65536);
    fused.reset();
    CHECK(fused.total() == 0);
  }

  TEST_CASE("attention shape errors") {
    test::Gen g(4);
    const ConvSpec attn = g.conv(4, 4, 1);
    CHECK_THROWS_AS(fused_attention(g.tensor({1, 4, 3, 3}), g.tensor({1, 4, 3, 4}), attn), ShapeError);
    CHECK_THROWS_AS(fused_attention(g.tensor({1, 4, 3, 3}), g.tensor({1, 4, 3, 3}), g.conv(4, 4, 3)), ShapeError);
  }

  TEST_CASE("compose identities") {
    ConvSpec id1 = ConvSpec::make(1, 1, 1, 1, false);
    id1.weight = {1.0f};
    const ConvSpec c = compose_convs(id1, id1);
    CHECK(c.kernel == Extent2{1, 1});
    CHECK(c.weight == std::vector<float>{1.0f});
    ConvSpec delta = ConvSpec::make(1, 1, 3, 1, false);
    delta.w(0, 0, 1, 1) = 1.0f;
    const ConvSpec d = compose_convs(delta, delta);
    CHECK(d.kernel == Extent2{5, 5});
    CHECK(d.padding == Extent2{2, 2});
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 5; ++x) CHECK(d.w(0, 0, y, x) == (y == 2 && x == 2 ? 1.0f : 0.0f));
  }

  TEST_CASE("property: compose matches sequential on the interior and extended everywhere") {
    test::Gen g(5);
    for (int t = 0; t < 15; ++t) {
      const int k1 = 2 * g.integer(0, 1) + 1, k2 = 2 * g.integer(0, 1) + 1;
      const ConvSpec a = g.conv(g.integer(1, 4), g.integer(1, 4), k1);
      const ConvSpec b = g.conv(a.out_channels, g.integer(1, 4), k2);
      const Tensor x = g.tensor({1, a.in_channels, 12, 12});
      const ConvSpec c = compose_convs(a, b);
      const Tensor y = conv2d(x, c);
      const Margin m = interior_margin(b);
      CHECK(compare(crop(y, m), crop(oracle::sequential(x, a, b), m)).max_rel <= kRelTol);
      CHECK(compare(y, sequential_extended(x, a, b)).max_rel <= kRelTol);
    }
  }

  TEST_CASE("compose bias closed form on constant input") {
    test::Gen g(6);
    const ConvSpec a = g.conv(2, 3, 1), b = g.conv(3, 2, 3);
    const ConvSpec c = compose_convs(a, b);
    const Tensor zero({1, 2, 7, 7});
    const Tensor seq = oracle::sequential(zero, a, b);
    for (int o = 0; o < 2; ++o) CHECK(seq.at(0, o, 3, 3) == doctest::Approx(c.bias[o]).epsilon(1e-5));
  }

  TEST_CASE("compose rejects mismatched or grouped convs") {
    test::Gen g(7);
    CHECK_THROWS_AS(compose_convs(g.conv(3, 4, 3), g.conv(5, 4, 3)), ShapeError);
    CHECK_THROWS_AS(compose_convs(g.conv(4, 4, 3, 2), g.conv(4, 4, 3)), ShapeError);
  }

  TEST_CASE("lora basics") {
    ConvSpec base = ConvSpec::make(1, 1, 1, 1, false);
    base.weight = {2.0f};
    CHECK(lora_merge(base, {1, 1, 1.0f, {4.0f}, {3.0f}}).weight[0] == 14.0f);
    test::Gen g(8);
    const ConvSpec b3 = g.conv(4, 6, 3);
    LoraFactors f = random_lora(g, b3, 2, 3.0f);
    std::fill(f.b.begin(), f.b.end(), 0.0f);
    CHECK(lora_merge(b3, f).weight == b3.weight);
    f.a.pop_back();
    CHECK_THROWS_AS(lora_merge(b3, f), ShapeError);
  }

  TEST_CASE("property: lora merge is exact-linear and linear in alpha") {
    test::Gen g(9);
    for (int t = 0; t < 12; ++t) {
      const int k = 2 * g.integer(0, 1) + 1;
      const ConvSpec base = g.conv(g.integer(1, 5), g.integer(1, 5), k);
      LoraFactors f = random_lora(g, base, g.integer(1, 3), g.real(0.5f, 8.0f));
      const Tensor x = g.tensor({1, base.in_channels, 7, 7});
      CHECK(compare(conv2d(x, lora_merge(base, f)), oracle::lora_output(x, base, f)).max_rel <= kRelTol);
      CHECK(compare(lora_delta(base, f), oracle::lora_delta(base, f)).max_rel <= kRelTol);
      const std::vector<float> d1 = lora_delta(base, f);
      f.alpha *= 2.0f;
      const std::vector<float> d2 = lora_delta(base, f);
      for (size_t i = 0; i < d1.size(); ++i) CHECK(d2[i] == 2.0f * d1[i]);
    }
  }

  TEST_CASE("collapse_branches") {
    test::Gen g(10);
    const ConvSpec single[] = {g.conv(3, 3, 3)};
    const ConvSpec c = collapse_branches(single, false);
    CHECK(c.weight == single[0].weight);
    CHECK(c.bias == single[0].bias);
    const ConvSpec zero[] = {ConvSpec::make(2, 2, 3, 1, false)};
    const ConvSpec id = collapse_branches(zero, true);
    for (int o = 0; o < 2; ++o)
      for (int i = 0; i < 2; ++i)
        for (int y = 0; y < 3; ++y)
          for (int x = 0; x < 3; ++x) CHECK(id.w(o, i, y, x) == (o == i && y == 1 && x == 1 ? 1.0f : 0.0f));
    const ConvSpec bad[] = {g.conv(3, 3, 3), g.conv(3, 4, 1)};
    CHECK_THROWS_AS(collapse_branches(bad, false), ShapeError);
    const ConvSpec rect[] = {g.conv(3, 4, 3)};
    CHECK_THROWS_AS(collapse_branches(rect, true), ShapeError);
  }

  TEST_CASE("property: collapse equals the branch sum") {
    test::Gen g(11);
    for (int t = 0; t < 12; ++t) {
      const int c = g.integer(1, 6);
      std::vector<ConvSpec> br{g.conv(c, c, 3), g.conv(c, c, 1)};
      if (t % 3 == 0) br.push_back(g.conv(c, c, 3));
      const bool identity = t % 2 == 0;
      const Tensor x = g.tensor({1, c, 8, 8});
      CHECK(compare(conv2d(x, collapse_branches(br, identity)), oracle::branch_sum(x, br, identity)).max_rel <= kRelTol);
    }
  }

  TEST_CASE("rewrites fold adapters back to the plain topology") {
    ModelGraph plain = build_spanv2();
    initialize(plain, 3);
    ModelGraph adapted = plain;
    attach_adapters(adapted, {}, 4);
    CHECK(count_params(adapted) > count_params(plain));
    const RewriteResult r = apply_rewrites(adapted);
    for (const RewriteRecord& rec : r.records) CHECK(rec.error.max_rel <= kRelTol);
    CHECK(count_params(r.graph) == count_params(plain));
    CHECK(count_flops(r.graph) == count_flops(plain));
    for (const LayerSpec& l : r.graph.layers) CHECK_FALSE(l.has_adapters());
    test::Gen g(12);
    const Tensor x = g.tensor({1, 3, 10, 10}, 0, 1);
    CHECK(compare(r.graph.run(x), adapted.run(x)).max_rel <= kRelTol);
  }

  TEST_CASE("compose rewrite on a conv chain reduces parameters") {
    ModelGraph g;
    g.meta.model = "probe";
    LayerSpec head;
    head.name = "head";
    head.inputs = {kGraphInput};
    head.conv = ConvSpec::make(3, 26, 3);
    LayerSpec body = head;
    body.name = "body";
    body.inputs = {"head"};
    body.conv = ConvSpec::make(26, 26, 3);
    g.layers = {head, body};
    g.output = "body";
    init_random(g, 5);
    const RewriteResult r = apply_rewrites(g, {.compose = true});
    REQUIRE(r.records.size() == 1);
    CHECK(r.records[0].kind == "compose_convs");
    CHECK(r.records[0].interior_only);
    CHECK(r.records[0].error.max_rel <= kRelTol);
    CHECK(r.graph.layers.size() == 1);
    CHECK(count_params(g) - count_params(r.graph) == 728 + 6110 - 1976);
  }
}
