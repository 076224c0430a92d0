#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "common.hpp"
#include "mf/encoder.hpp"
#include "mf/gradcheck.hpp"

using namespace mf;
using T = Tensor<float>;

namespace {

// Counted layer by layer from the architecture description, independent of
// conv_param_count.
Index expected_encoder_params(const std::array<Index, 5>& st, Index a, Index rates) {
  Index n = 0;
  Index in = 3;
  for (Index c : st) {
    n += c * in * 9 + c;
    in = c;
  }
  n += st[4] * a + a;                  // 1x1 branch
  n += rates * (st[4] * a * 9 + a);    // dilated 3x3 branches
  n += st[4] * a + a;                  // pooled branch
  n += (rates + 2) * a * a + a;        // fuse
  return n;
}

}  // namespace

TEST_CASE("encode shapes at 64x64, base 8") {
  ParameterStore<float> store;
  ParamRng rng(1);
  EncoderConfig cfg;
  cfg.base_channels = 8;
  const auto p = make_encoder<float>(store, "encoder", cfg, rng);
  CHECK(cfg.resolved_stages() == std::array<Index, 5>{8, 16, 32, 64, 64});
  ParamRng irng(2);
  const auto f = encode(test::rand_tensor(irng, {3, 64, 64}, 0, 1), p);
  CHECK(f.low.shape() == Shape{16, 16, 16});
  CHECK(f.high.shape() == Shape{cfg.resolved_aspp_out(), 2, 2});
}

TEST_CASE("low is 8x the resolution of high for any valid size") {
  ParameterStore<float> store;
  ParamRng rng(3);
  EncoderConfig cfg;
  cfg.base_channels = 2;
  const auto p = make_encoder<float>(store, "encoder", cfg, rng);
  for (const auto& [h, w] : std::vector<std::pair<Index, Index>>{{32, 32}, {64, 32}, {32, 96}, {128, 64}}) {
    const auto f = encode(T({3, h, w}, 0.3f), p);
    CHECK(f.low.dim(1) == h / 4);
    CHECK(f.low.dim(2) == w / 4);
    CHECK(f.low.dim(1) == 8 * f.high.dim(1));
    CHECK(f.low.dim(2) == 8 * f.high.dim(2));
  }
  CHECK_THROWS_AS(encode(T({3, 48, 64}), p), ContractError);
  CHECK_THROWS_AS(encode(T({1, 64, 64}), p), ShapeError);
}

TEST_CASE("zero image with zero biases gives zero features") {
  ParameterStore<float> store;
  ParamRng rng(4);
  const auto p = make_encoder<float>(store, "encoder", EncoderConfig{}, rng);
  const auto f = encode(T({3, 64, 64}), p);
  for (float v : f.low.data()) CHECK(v == 0.0f);
  for (float v : f.high.data()) CHECK(v == 0.0f);
}

TEST_CASE("encode is deterministic") {
  ParameterStore<float> store;
  ParamRng rng(5);
  const auto p = make_encoder<float>(store, "encoder", EncoderConfig{}, rng);
  ParamRng irng(6);
  const T img = test::rand_tensor(irng, {3, 64, 64}, 0, 1);
  const auto a = encode(img, p), b = encode(img, p);
  CHECK(test::bitwise_equal(a.low, b.low));
  CHECK(test::bitwise_equal(a.high, b.high));
}

TEST_CASE("aspp pooled branch on a constant field") {
  ParameterStore<float> store;
  ParamRng rng(7);
  const auto p = make_aspp<float>(store, "aspp", 3, 4, {1}, rng);
  const T x = T::full({3, 5, 5}, 0.8f);
  const T pooled = upsample_bilinear(relu(p.pooled(global_avg_pool(x))), 5, 5);
  const T direct = relu(p.pooled(x));
  CHECK(test::max_abs_diff(pooled, direct) < 1e-6);
  // the fused output is constant away from the zero-padded border
  const T y = aspp(x, p);
  for (Index c = 0; c < 4; ++c) {
    for (Index i = 1; i < 4; ++i) {
      for (Index j = 1; j < 4; ++j) CHECK(y.at({c, i, j}) == doctest::Approx(y.at({c, 2, 2})).epsilon(1e-5));
    }
  }
}

TEST_CASE("aspp preserves spatial dims") {
  ParamRng rng(8);
  for (const auto& rates : std::vector<std::vector<Index>>{{1}, {1, 2, 4}, {2, 3}, {6}}) {
    ParameterStore<float> store;
    const auto p = make_aspp<float>(store, "aspp", 2, 3, rates, rng);
    for (Index s : {1, 2, 5, 8}) {
      const T y = aspp(test::rand_tensor(rng, {2, s, s + 1}), p);
      CHECK(y.shape() == Shape{3, s, s + 1});
    }
  }
  ParameterStore<float> store;
  CHECK_THROWS_AS(make_aspp<float>(store, "aspp", 2, 3, {}, rng), ConfigError);
}

TEST_CASE("parameter count is the closed form of the config") {
  for (Index base : {1, 2, 8, 16}) {
    for (const auto& rates : std::vector<std::vector<Index>>{{1, 2, 4}, {1}, {1, 2, 3, 6}}) {
      EncoderConfig cfg;
      cfg.base_channels = base;
      cfg.aspp_rates = rates;
      ParameterStore<float> store;
      ParamRng rng(9);
      (void)make_encoder<float>(store, "encoder", cfg, rng);
      CHECK(store.scalar_count() == expected_encoder_params({base, 2 * base, 4 * base, 8 * base, 8 * base}, 4 * base,
                                                            static_cast<Index>(rates.size())));
    }
  }
  EncoderConfig custom;
  custom.stage_channels = {3, 5, 7, 9, 11};
  custom.aspp_out_channels = 6;
  ParameterStore<float> store;
  ParamRng rng(10);
  (void)make_encoder<float>(store, "encoder", custom, rng);
  CHECK(store.scalar_count() == expected_encoder_params({3, 5, 7, 9, 11}, 6, 3));

  EncoderConfig bad;
  bad.stage_channels = {3, 5};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = EncoderConfig{};
  bad.base_channels = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("init is seeded uniform within the fan-in bound, biases zero") {
  auto build = [](std::uint64_t seed) {
    auto store = std::make_unique<ParameterStore<float>>();
    ParamRng rng(seed);
    (void)make_encoder<float>(*store, "encoder", EncoderConfig{}, rng);
    return store;
  };
  const auto a = build(11), b = build(11), c = build(12);
  bool any_diff = false;
  for (std::size_t i = 0; i < a->size(); ++i) {
    const auto& [name, t] = a->entries()[i];
    CHECK(test::bitwise_equal(t, b->entries()[i].second));
    any_diff = any_diff || !test::bitwise_equal(t, c->entries()[i].second);
    if (name.ends_with(".bias")) {
      for (float v : t.data()) CHECK(v == 0.0f);
    } else {
      const double bound = std::sqrt(1.0 / static_cast<double>(t.dim(1) * t.dim(2) * t.dim(3)));
      for (float v : t.data()) CHECK(std::abs(v) <= bound);
    }
  }
  CHECK(any_diff);
  CHECK(a->find("encoder.stage1.weight") != nullptr);
  CHECK(a->find("encoder.aspp.fuse.bias") != nullptr);
}

TEST_CASE("aspp and encoder gradients match finite differences") {
  for (const std::string name : {"aspp", "encode"}) {
    GradcheckSuiteOptions opt;
    opt.filter = name;
    opt.include_model = false;
    for (const auto& r : run_gradcheck_suite(opt)) {
      INFO(r.line());
      CHECK(r.passed);
    }
  }
}
