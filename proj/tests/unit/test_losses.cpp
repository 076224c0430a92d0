#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "../oracles.hpp"
#include "common.hpp"
#include "mf/gradcheck.hpp"
#include "mf/losses.hpp"

using namespace mf;

namespace {

template <typename S>
Tensor<S> vec(const std::vector<double>& v) {
  Tensor<S> t({static_cast<Index>(v.size())});
  for (std::size_t i = 0; i < v.size(); ++i) t.mutable_data()[i] = static_cast<S>(v[i]);
  return t;
}

template <typename S>
GroundTruthMask<S> mask_of(const std::vector<int>& bits, Index h, Index w) {
  Tensor<S> t({1, h, w});
  for (std::size_t i = 0; i < bits.size(); ++i) t.mutable_data()[i] = static_cast<S>(bits[i]);
  return GroundTruthMask<S>(t);
}

DecodeOutput<double> head_from_logits(const std::vector<double>& z, Index h, Index w) {
  Tensor<double> l({1, h, w});
  for (std::size_t i = 0; i < z.size(); ++i) l.mutable_data()[i] = z[i];
  return DecodeOutput<double>{l, sigmoid(l)};
}

}  // namespace

TEST_CASE("lovasz hinge equals the Lovasz extension on every small label pattern") {
  ParamRng rng(1);
  int patterns = 0;
  double worst = 0;
  for (int n = 1; n <= 6; ++n) {
    for (int bits = 1; bits < (1 << n); ++bits) {
      ++patterns;
      std::vector<int> labels(static_cast<std::size_t>(n));
      std::vector<double> lab_d(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) {
        labels[static_cast<std::size_t>(i)] = (bits >> i) & 1;
        lab_d[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(i)];
      }
      for (int draw = 0; draw < 50; ++draw) {
        std::vector<double> z(static_cast<std::size_t>(n));
        for (auto& v : z) v = rng.uniform(-2.5, 2.5);
        const double got = lovasz_hinge(vec<double>(z), vec<double>(lab_d)).item();
        worst = std::max(worst, std::abs(got - oracle::lovasz_extension(z, labels)));
      }
    }
  }
  CHECK(patterns == 120);
  CHECK(worst <= 1e-6);
}

TEST_CASE("lovasz hinge in 32-bit tracks the oracle") {
  ParamRng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng.next() % 12);
    std::vector<int> labels(static_cast<std::size_t>(n));
    std::vector<double> lab_d(labels.size()), z(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      labels[i] = static_cast<int>(rng.next() % 2);
      lab_d[i] = labels[i];
      z[i] = static_cast<float>(rng.uniform(-3, 3));
    }
    CHECK(lovasz_hinge(vec<float>(z), vec<float>(lab_d)).item() ==
          doctest::Approx(oracle::lovasz_extension(z, labels)).epsilon(1e-5));
  }
}

TEST_CASE("lovasz hinge is zero exactly when every margin reaches one") {
  ParamRng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(rng.next() % 10);
    std::vector<double> z(static_cast<std::size_t>(n)), lab(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
      lab[i] = static_cast<double>(rng.next() % 2);
      z[i] = (lab[i] == 1 ? 1 : -1) * rng.uniform(1.0, 4.0);
    }
    CHECK(lovasz_hinge(vec<double>(z), vec<double>(lab)).item() == 0.0);
    // pulling one margin just under one makes the loss positive
    const std::size_t k = static_cast<std::size_t>(rng.next() % z.size());
    z[k] = (lab[k] == 1 ? 1 : -1) * 0.999;
    CHECK(lovasz_hinge(vec<double>(z), vec<double>(lab)).item() > 0.0);
  }
  // non-negative on arbitrary inputs
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> z(8), lab(8);
    for (std::size_t i = 0; i < 8; ++i) {
      z[i] = rng.uniform(-3, 3);
      lab[i] = static_cast<double>(rng.next() % 2);
    }
    CHECK(lovasz_hinge(vec<double>(z), vec<double>(lab)).item() >= 0.0);
  }
}

TEST_CASE("lovasz hinge small cases") {
  CHECK(lovasz_hinge(vec<double>({0.0}), vec<double>({1.0})).item() == doctest::Approx(1.0).epsilon(1e-12));
  // all background: zero errors give zero, otherwise the union is the false positives
  CHECK(lovasz_hinge(vec<double>({-2.0, -1.5, -1.0}), vec<double>({0, 0, 0})).item() == 0.0);
  const std::vector<double> z{0.5, -0.2, -3.0};
  CHECK(lovasz_hinge(vec<double>(z), vec<double>({0, 0, 0})).item() ==
        doctest::Approx(oracle::lovasz_extension(z, {0, 0, 0})).epsilon(1e-12));
  CHECK(oracle::lovasz_extension(z, {0, 0, 0}) == doctest::Approx(1.5));

  // weights telescope to the Jaccard loss of the full set
  for (const auto& labels : std::vector<std::vector<int>>{{1, 0, 1, 1, 0}, {0, 0, 1}, {1}, {0, 0}}) {
    const auto w = lovasz_jaccard_weights(labels);
    double s = 0;
    for (double v : w) s += v;
    CHECK(s == doctest::Approx(1.0));
  }
  CHECK_THROWS_AS(lovasz_hinge(vec<double>({0.1, 0.2}), vec<double>({1})), ShapeError);
  CHECK_THROWS_AS(lovasz_hinge(vec<double>({0.1}), vec<double>({0.5})), ContractError);
}

TEST_CASE("bce examples") {
  const auto g = mask_of<double>({1, 0, 1, 1, 0, 0}, 2, 3);
  CHECK(bce(Tensor<double>::full({1, 2, 3}, 0.5), g).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(bce(g.tensor(), g).item() <= 1e-6);
  const Tensor<double> flipped = add(mul(g.tensor(), -1.0), 1.0);
  const double worst = bce(flipped, g).item();
  CHECK(std::isfinite(worst));
  CHECK(worst == doctest::Approx(-std::log(kBceEpsilon)).epsilon(1e-6));

  const auto gf = mask_of<float>({1, 0, 1, 1, 0, 0}, 2, 3);
  CHECK(bce(gf.tensor(), gf).item() <= 1e-6f);
  CHECK(std::isfinite(bce(add(mul(gf.tensor(), -1.0f), 1.0f), gf).item()));
  CHECK_THROWS_AS(bce(Tensor<double>::full({1, 3, 2}, 0.5), g), ShapeError);
}

TEST_CASE("total loss examples") {
  const std::vector<int> bits{1, 1, 0, 0, 1, 0, 0, 0, 1};
  const auto g = mask_of<double>(bits, 3, 3);
  std::vector<double> confident(bits.size()), one_wrong;
  for (std::size_t i = 0; i < bits.size(); ++i) confident[i] = bits[i] ? 12.0 : -12.0;
  PredictionSet<double> perfect{head_from_logits(confident, 3, 3), head_from_logits(confident, 3, 3),
                                head_from_logits(confident, 3, 3)};
  CHECK(total_loss(perfect, g, g, g).item() < 1e-3);

  one_wrong = confident;
  one_wrong[4] = -0.7;
  PredictionSet<double> err_prev{head_from_logits(one_wrong, 3, 3), head_from_logits(confident, 3, 3),
                                 head_from_logits(confident, 3, 3)};
  PredictionSet<double> err_n{head_from_logits(confident, 3, 3), head_from_logits(confident, 3, 3),
                              head_from_logits(one_wrong, 3, 3)};
  CHECK(total_loss(err_prev, g, g, g).item() == doctest::Approx(total_loss(err_n, g, g, g).item()).epsilon(1e-14));

  // one pixel, three frames: label 1 with logit z, 0 with -z', 1 with 0
  const auto g1 = mask_of<double>({1}, 1, 1), g0 = mask_of<double>({0}, 1, 1);
  PredictionSet<double> px{head_from_logits({0.3}, 1, 1), head_from_logits({0.2}, 1, 1), head_from_logits({0.0}, 1, 1)};
  auto sig = [](double z) { return 1 / (1 + std::exp(-z)); };
  const double hand = (0.7 - std::log(sig(0.3))) + (1.2 - std::log(1 - sig(0.2))) + (1.0 - std::log(0.5));
  CHECK(total_loss(px, g1, g0, g1).item() == doctest::Approx(hand).epsilon(1e-12));

  CHECK_THROWS_AS(total_loss(perfect, g, g, g1), ShapeError);
}

TEST_CASE("ground-truth masks must be binary [1,H,W]") {
  CHECK_THROWS_AS(GroundTruthMask<float>(Tensor<float>({2, 3, 3})), ShapeError);
  CHECK_THROWS_AS(GroundTruthMask<float>(Tensor<float>({3, 3})), ShapeError);
  CHECK_THROWS_AS(GroundTruthMask<float>(Tensor<float>::full({1, 3, 3}, 0.5f)), ContractError);
  CHECK_NOTHROW(GroundTruthMask<float>(Tensor<float>({1, 3, 3})));
}

TEST_CASE("loss gradients match finite differences") {
  for (const std::string name : {"lovasz_hinge", "bce", "total_loss"}) {
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
