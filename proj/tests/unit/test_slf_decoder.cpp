#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "common.hpp"
#include "mf/gradcheck.hpp"
#include "mf/model.hpp"

using namespace mf;
using T = Tensor<float>;

namespace {

FrameTriple<float> random_triple(std::uint64_t seed, Index size = 32) {
  ParamRng rng(seed);
  FrameTriple<float> t;
  t.i_prev = test::rand_tensor(rng, {3, size, size}, 0, 1);
  t.i_t = test::rand_tensor(rng, {3, size, size}, 0, 1);
  t.i_n = test::rand_tensor(rng, {3, size, size}, 0, 1);
  T g({1, size, size});
  for (Index y = size / 4; y < size / 2; ++y) {
    for (Index x = size / 4; x < 3 * size / 4; ++x) g.set({0, y, x}, 1.0f);
  }
  t.g_prev = GroundTruthMask<float>(g);
  t.g_t = GroundTruthMask<float>(g);
  t.g_n = GroundTruthMask<float>(g);
  return t;
}

// Per-level gate sizes, counted from the block description.
Index gate_params(Index c) {
  const Index h = std::max<Index>(1, 2 * c / 4);
  return (2 * c * 2 * 9 + 2) + (2 * c * h + h) + (h * 2 * c + 2 * c);
}

}  // namespace

TEST_CASE("slf with a closed gate is the identity, fully open doubles") {
  ParameterStore<float> store;
  ParamRng rng(1);
  auto p = make_slf_params<float>(store, "slf", 3, rng);
  const T e = test::rand_tensor(rng, {3, 4, 4});
  const T r = test::rand_tensor(rng, {3, 4, 4});

  p.gate.fill_zero();
  CHECK(test::max_abs_diff(slf_fuse(e, r, p).e_fuse, mul(e, 1.5f)) < 1e-7);
  for (auto& v : p.gate.bias.mutable_data()) v = -100.0f;
  CHECK(test::bitwise_equal(slf_fuse(e, r, p).e_fuse, e));
  for (auto& v : p.gate.bias.mutable_data()) v = 100.0f;
  CHECK(test::bitwise_equal(slf_fuse(e, r, p).e_fuse, mul(e, 2.0f)));
}

TEST_CASE("slf of zero short-term features is zero") {
  ParameterStore<float> store;
  ParamRng rng(2);
  const auto p = make_slf_params<float>(store, "slf", 4, rng);
  const auto out = slf_fuse(T({4, 3, 5}), test::rand_tensor(rng, {4, 3, 5}), p);
  for (float v : out.e_fuse.data()) CHECK(v == 0.0f);
  CHECK_THROWS_AS(slf_fuse(T({4, 3, 5}), T({4, 3, 4}), p), ShapeError);
}

TEST_CASE("slf matches e * sigmoid(W r + b) + e pointwise") {
  ParameterStore<float> store;
  ParamRng rng(3);
  const auto p = make_slf_params<float>(store, "slf", 2, rng);
  const T e = test::rand_tensor(rng, {2, 3, 3}), r = test::rand_tensor(rng, {2, 3, 3});
  const T out = slf_fuse(e, r, p).e_fuse;
  for (Index c = 0; c < 2; ++c) {
    for (Index i = 0; i < 9; ++i) {
      double z = p.gate.bias[c];
      for (Index k = 0; k < 2; ++k) z += static_cast<double>(p.gate.weight[c * 2 + k]) * r[k * 9 + i];
      const double ev = e[c * 9 + i];
      CHECK(out[c * 9 + i] == doctest::Approx(ev / (1 + std::exp(-z)) + ev).epsilon(1e-5));
    }
  }
}

TEST_CASE("decode produces a probability map at image resolution") {
  ParameterStore<float> store;
  ParamRng rng(4);
  const auto p = make_decoder_params<float>(store, "decoder", 16, 32, 16, rng);
  const auto out = decode(test::rand_tensor(rng, {16, 16, 16}), test::rand_tensor(rng, {32, 2, 2}), p, 64, 64);
  CHECK(out.prob.shape() == Shape{1, 64, 64});
  CHECK(out.logits.shape() == Shape{1, 64, 64});
  for (Index i = 0; i < out.prob.numel(); ++i) {
    CHECK(out.prob[i] > 0.0f);
    CHECK(out.prob[i] < 1.0f);
  }
  CHECK_THROWS_AS(decode(T({16, 16, 16}), T({32, 4, 4}), p, 64, 64), ShapeError);
  CHECK_THROWS_AS(decode(T({16, 16, 16}), T({32, 2, 3}), p, 64, 64), ShapeError);
}

TEST_CASE("constant features decode to a constant interior") {
  ParameterStore<float> store;
  ParamRng rng(5);
  auto p = make_decoder_params<float>(store, "decoder", 4, 4, 6, rng);
  for (auto* layer : {&p.conv1, &p.conv2, &p.head}) {
    for (auto& v : layer->bias.mutable_data()) v = static_cast<float>(rng.uniform(0.0, 0.2));
  }
  const auto out = decode(T::full({4, 16, 16}, 0.7f), T::full({4, 2, 2}, -0.3f), p, 64, 64);
  const float centre = out.prob.at({0, 32, 32});
  for (Index y = 16; y < 48; ++y) {
    for (Index x = 16; x < 48; ++x) CHECK(out.prob.at({0, y, x}) == doctest::Approx(centre).epsilon(1e-5));
  }
}

TEST_CASE("model forward is deterministic and sized") {
  for (Preset preset : {Preset::baseline, Preset::cross_attention, Preset::dgsa, Preset::dgsa_slf}) {
    EncoderConfig enc;
    enc.base_channels = 4;
    const auto cfg = ModelConfig::from_preset(preset, enc);
    const MirrorNet<float> a(cfg, 9), b(cfg, 9);
    const auto triple = random_triple(10);
    const auto pa = model_forward(triple, a), pb = model_forward(triple, b);
    CHECK(pa.t.prob.shape() == Shape{1, 32, 32});
    CHECK(test::bitwise_equal(pa.t.prob, pb.t.prob));
    CHECK(test::bitwise_equal(pa.prev.prob, pb.prev.prob));
    CHECK(test::bitwise_equal(pa.n.prob, pb.n.prob));
  }
}

TEST_CASE("zero-fusion init predicts one half everywhere") {
  for (Preset preset : {Preset::cross_attention, Preset::dgsa, Preset::dgsa_slf}) {
    EncoderConfig enc;
    enc.base_channels = 4;
    const MirrorNet<float> m(ModelConfig::from_preset(preset, enc), 3, ModelInit::zero_fusion);
    const auto out = model_forward(random_triple(11), m);
    for (const T* p : {&out.prev.prob, &out.t.prob, &out.n.prob}) {
      for (float v : p->data()) CHECK(v == 0.5f);
    }
  }
}

TEST_CASE("preset toggles change the parameter count by the expected blocks") {
  EncoderConfig enc;
  enc.base_channels = 8;
  auto count = [&](Preset p) { return MirrorNet<float>(ModelConfig::from_preset(p, enc), 1).parameter_count(); };
  const Index base = count(Preset::baseline), ca = count(Preset::cross_attention), dg = count(Preset::dgsa),
              full = count(Preset::dgsa_slf);
  const Index c_low = 16, c_high = enc.resolved_aspp_out();
  CHECK(ca > base);
  CHECK(dg - ca == gate_params(c_low) + gate_params(c_high));
  CHECK(full - dg == (c_low * c_low + c_low) + (c_high * c_high + c_high));
}

TEST_CASE("slf and decoder gradients match finite differences") {
  for (const std::string name : {"slf_fuse", "decode"}) {
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
