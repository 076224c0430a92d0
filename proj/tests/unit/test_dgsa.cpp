#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "common.hpp"
#include "mf/dgsa.hpp"
#include "mf/gradcheck.hpp"

using namespace mf;
using T = Tensor<float>;

namespace {

struct Setup {
  ParameterStore<float> store;
  DgsaParams<float> p;
  T f_a, f_b;
  AttentionOutput<float> sa;
  Setup(Index c, Index h, Index w, std::uint64_t seed, bool gates = true) {
    ParamRng rng(seed);
    p = make_dgsa_params<float>(store, "dgsa", c, gates, rng);
    p.sa.omega_a.mutable_data()[0] = 0.8f;
    p.sa.omega_b.mutable_data()[0] = 1.1f;
    f_a = test::rand_tensor(rng, {c, h, w});
    f_b = test::rand_tensor(rng, {c, h, w});
    sa = sa_block(f_a, f_b, p.sa);
  }
};

void force_gates_open(DgsaParams<float>& p) {
  // a huge bias saturates both sigmoids to exactly 1 in float
  p.spatial->conv.fill_zero();
  for (auto& v : p.spatial->conv.bias.mutable_data()) v = 100.0f;
  p.channel->expand.fill_zero();
  for (auto& v : p.channel->expand.bias.mutable_data()) v = 100.0f;
}

}  // namespace

TEST_CASE("gate values lie strictly inside (0, 1)") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Setup s(4, 5, 6, seed);
    const auto out = dgsa_forward(s.f_a, s.f_b, s.sa, s.p);
    REQUIRE(out.gates.has_value());
    for (const T* g : {&out.gates->s_a, &out.gates->s_b, &out.gates->c_a, &out.gates->c_b}) {
      for (float v : g->data()) {
        CHECK(v > 0.0f);
        CHECK(v < 1.0f);
      }
    }
    CHECK(out.gates->s_a.shape() == Shape{1, 5, 6});
    CHECK(out.gates->c_b.shape() == Shape{4, 1, 1});
  }
}

TEST_CASE("zero gate weights give one half everywhere") {
  Setup s(4, 3, 3, 2);
  s.p.spatial->conv.fill_zero();
  s.p.channel->expand.fill_zero();
  const auto out = dgsa_forward(s.f_a, s.f_b, s.sa, s.p);
  for (const T* g : {&out.gates->s_a, &out.gates->s_b, &out.gates->c_a, &out.gates->c_b}) {
    for (float v : g->data()) CHECK(v == 0.5f);
  }
  CHECK(test::max_abs_diff(out.d_a, mul(s.sa.r_a, 0.25f)) < 1e-7);
}

TEST_CASE("open gates pass the correspondence through") {
  Setup s(3, 4, 4, 3);
  force_gates_open(s.p);
  const auto out = dgsa_forward(s.f_a, s.f_b, s.sa, s.p);
  CHECK(test::bitwise_equal(out.d_a, s.sa.r_a));
  CHECK(test::bitwise_equal(out.d_b, s.sa.r_b));

  // and match the ungated configuration given the same fusion weights
  Setup u(3, 4, 4, 3, false);
  u.p.fuse_a = s.p.fuse_a;
  u.p.fuse_b = s.p.fuse_b;
  const auto ungated = dgsa_forward(s.f_a, s.f_b, s.sa, u.p);
  CHECK(!ungated.gates.has_value());
  CHECK(test::bitwise_equal(ungated.e_a, out.e_a));
  CHECK(test::bitwise_equal(ungated.e_b, out.e_b));
}

TEST_CASE("zero fusion leaves E equal to R") {
  Setup s(4, 4, 5, 4);
  s.p.fuse_a.fill_zero();
  s.p.fuse_b.fill_zero();
  const auto out = dgsa_forward(s.f_a, s.f_b, s.sa, s.p);
  CHECK(test::bitwise_equal(out.e_a, s.sa.r_a));
  CHECK(test::bitwise_equal(out.e_b, s.sa.r_b));
}

TEST_CASE("gating only damps: |D| <= |R| elementwise, same sign") {
  for (std::uint64_t seed = 10; seed < 30; ++seed) {
    Setup s(2, 4, 3, seed);
    const auto out = dgsa_forward(s.f_a, s.f_b, s.sa, s.p);
    for (Index i = 0; i < out.d_a.numel(); ++i) {
      CHECK(std::abs(out.d_a[i]) <= std::abs(s.sa.r_a[i]));
      CHECK(out.d_a[i] * s.sa.r_a[i] >= 0.0f);
      CHECK(std::abs(out.d_b[i]) <= std::abs(s.sa.r_b[i]));
    }
  }
}

TEST_CASE("E = R + Conv3x3(concat(F, D)) reassembled by hand") {
  Setup s(2, 3, 4, 5);
  const auto out = dgsa_forward(s.f_a, s.f_b, s.sa, s.p);
  const T d_a = mul(mul(s.sa.r_a, out.gates->s_a), out.gates->c_a);
  const T e_a = add(s.sa.r_a, s.p.fuse_a(concat<float>({s.f_a, d_a}, 0)));
  CHECK(test::bitwise_equal(e_a, out.e_a));
  CHECK(out.e_b.shape() == s.f_b.shape());
  CHECK(out.g_a.shape() == s.f_a.shape());
}

TEST_CASE("channel bottleneck width clamps at one") {
  CHECK(channel_gate_hidden(1) == 1);
  CHECK(channel_gate_hidden(2) == 1);
  CHECK(channel_gate_hidden(3) == 1);
  CHECK(channel_gate_hidden(4) == 2);
  CHECK(channel_gate_hidden(64) == 32);
  for (Index c : {1, 2, 3}) {
    Setup s(c, 3, 3, 6);
    CHECK(s.p.channel->reduce.out_channels() == 1);
    const auto out = dgsa_forward(s.f_a, s.f_b, s.sa, s.p);
    CHECK(out.gates->c_a.shape() == Shape{c, 1, 1});
  }
}

TEST_CASE("shape errors") {
  Setup s(2, 3, 3, 7);
  CHECK_THROWS_AS(dgsa_forward(T({2, 3, 4}), s.f_b, s.sa, s.p), ShapeError);
  CHECK_THROWS_AS(spatial_gate(T({3, 3, 3}), *s.p.spatial), ShapeError);
  CHECK_THROWS_AS(channel_gate(T({2, 3, 3}), *s.p.channel), ShapeError);
}

TEST_CASE("gate and dgsa gradients match finite differences") {
  for (const std::string name : {"spatial_gate", "channel_gate", "dgsa_forward", "dgsa_mean_eb_wrt_fa"}) {
    GradcheckSuiteOptions opt;
    opt.filter = name;
    opt.include_model = false;
    const auto results = run_gradcheck_suite(opt);
    CHECK(!results.empty());
    for (const auto& r : results) {
      INFO(r.line());
      CHECK(r.passed);
    }
  }
}
