#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cstdio>
#include <random>
#include <set>
#include <sstream>

#include "../oracles.hpp"
#include "common.hpp"
#include "mf/metrics.hpp"

using namespace mf;
using T = Tensor<double>;

namespace {

T block(Index size, Index y0, Index x0, Index bh, Index bw, double v = 1.0) {
  T t({1, size, size});
  for (Index y = y0; y < y0 + bh; ++y) {
    for (Index x = x0; x < x0 + bw; ++x) t.set({0, y, x}, v);
  }
  return t;
}

GrayImage random_gray(std::mt19937_64& rng, Index h, Index w) {
  std::uniform_real_distribution<double> u(0, 255);
  GrayImage g(h, w);
  for (Index i = 0; i < h; ++i) {
    for (Index j = 0; j < w; ++j) g(i, j) = u(rng);
  }
  return g;
}

}  // namespace

TEST_CASE("two overlapping 2x2 blocks in an 8x8 frame") {
  const T gt = block(8, 2, 2, 2, 2), pred = block(8, 2, 3, 2, 2);
  const auto r = compute_metrics<double>({pred}, {GroundTruthMask<double>(gt)});
  CHECK(r.iou == 2.0 / 6.0);
  CHECK(r.accuracy == 60.0 / 64.0);
  CHECK(r.f_beta == doctest::Approx(0.5).epsilon(1e-15));  // P = R = 1/2
  CHECK(r.mae == 4.0 / 64.0);
  CHECK(r.frame_count == 1);

  const auto c = count_frame(std::vector<double>(pred.data().begin(), pred.data().end()),
                             std::vector<double>(gt.data().begin(), gt.data().end()), 0.5);
  CHECK(c.tp == 2);
  CHECK(c.fp == 2);
  CHECK(c.fn == 2);
  CHECK(c.tn == 58);
}

TEST_CASE("hand-counted F_beta with unequal precision and recall") {
  // gt 12 pixels, pred 6 pixels of which 4 hit: P = 4/6, R = 4/12
  const T gt = block(8, 0, 0, 3, 4), pred = block(8, 1, 2, 3, 2);
  const auto r = compute_metrics<double>({pred}, {GroundTruthMask<double>(gt)});
  const double p = 4.0 / 6.0, rc = 4.0 / 12.0;
  CHECK(r.iou == 4.0 / 14.0);
  CHECK(r.f_beta == doctest::Approx(1.3 * p * rc / (0.3 * p + rc)).epsilon(1e-15));
  CHECK(r.accuracy == 54.0 / 64.0);
}

TEST_CASE("perfect prediction and empty masks") {
  const T gt = block(8, 1, 1, 3, 3);
  const auto r = compute_metrics<double>({gt}, {GroundTruthMask<double>(gt)});
  CHECK(r.iou == 1.0);
  CHECK(r.f_beta == 1.0);
  CHECK(r.accuracy == 1.0);
  CHECK(r.mae == 0.0);

  const T empty({1, 8, 8});
  for (MetricMode mode : {MetricMode::pooled, MetricMode::per_frame}) {
    const auto e = compute_metrics<double>({empty}, {GroundTruthMask<double>(empty)}, 0.5, 0.3, mode);
    CHECK(e.iou == 1.0);
    CHECK(e.accuracy == 1.0);
    CHECK(e.mae == 0.0);
  }
  CHECK_THROWS_AS(compute_metrics<double>({}, {}), ContractError);
  CHECK_THROWS_AS(compute_metrics<double>({gt}, {}), ContractError);
  CHECK_THROWS_AS(compute_metrics<double>({T({1, 4, 4})}, {GroundTruthMask<double>(gt)}), ShapeError);
}

TEST_CASE("threshold is strict and MAE uses the raw probabilities") {
  T pred({1, 2, 2});
  pred.mutable_data()[0] = 0.5;  // not positive at threshold 0.5
  pred.mutable_data()[1] = 0.75;
  pred.mutable_data()[2] = 0.25;
  pred.mutable_data()[3] = 1.0;
  T gt({1, 2, 2});
  gt.mutable_data()[0] = 1;
  gt.mutable_data()[3] = 1;
  const auto r = compute_metrics<double>({pred}, {GroundTruthMask<double>(gt)});
  CHECK(r.iou == 1.0 / 3.0);
  CHECK(r.mae == (0.5 + 0.75 + 0.25 + 0.0) / 4.0);
}

TEST_CASE("frame order does not change the report") {
  ParamRng rng(1);
  std::vector<T> preds;
  std::vector<GroundTruthMask<double>> gts;
  for (int i = 0; i < 9; ++i) {
    preds.push_back(test::rand_tensor<double>(rng, {1, 6, 7}, 0, 1));
    T g({1, 6, 7});
    for (auto& v : g.mutable_data()) v = rng.uniform01() < 0.4 ? 1.0 : 0.0;
    gts.emplace_back(g);
  }
  for (MetricMode mode : {MetricMode::pooled, MetricMode::per_frame}) {
    const auto base = compute_metrics(preds, gts, 0.5, 0.3, mode);
    std::vector<std::size_t> perm(preds.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 g(2);
    for (int trial = 0; trial < 10; ++trial) {
      std::shuffle(perm.begin(), perm.end(), g);
      std::vector<T> p2;
      std::vector<GroundTruthMask<double>> g2;
      for (std::size_t i : perm) {
        p2.push_back(preds[i]);
        g2.push_back(gts[i]);
      }
      const auto r = compute_metrics(p2, g2, 0.5, 0.3, mode);
      CHECK(r.iou == doctest::Approx(base.iou).epsilon(1e-15));
      CHECK(r.f_beta == doctest::Approx(base.f_beta).epsilon(1e-15));
      CHECK(r.accuracy == doctest::Approx(base.accuracy).epsilon(1e-15));
      CHECK(r.mae == doctest::Approx(base.mae).epsilon(1e-15));
    }
  }
  // merging two halves equals one accumulator
  MetricsAccumulator all, a, b;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    all.add(preds[i], gts[i]);
    (i < 4 ? a : b).add(preds[i], gts[i]);
  }
  a.merge(b);
  CHECK(a.report() == all.report());
}

TEST_CASE("report formatting and key-value schema") {
  MetricsReport r;
  r.iou = 0.63431;
  r.f_beta = 0.81036;
  r.accuracy = 0.90044;
  r.mae = 0.09949;
  r.frame_count = 12;
  CHECK(r.summary() == "0.6343 / 0.8104 / 0.9004 / 0.0995");
  std::set<std::string> keys;
  std::istringstream in(r.key_values());
  for (std::string line; std::getline(in, line);) keys.insert(line.substr(0, line.find('=')));
  CHECK(keys == std::set<std::string>{"iou", "f_beta", "accuracy", "mae", "frames"});
  CHECK(MetricsReport::parse_key_values(r.key_values()) == r);
  CHECK(r.table().find("0.6343 / 0.8104 / 0.9004 / 0.0995") != std::string::npos);
  CHECK(parse_metric_mode("per_frame") == MetricMode::per_frame);
  CHECK_THROWS(parse_metric_mode("median"));
}

TEST_CASE("ssim: self, uniform closed form, symmetry") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 5; ++i) {
    const GrayImage a = random_gray(rng, 32, 32);
    CHECK(std::abs(ssim(a, a) - 1.0) <= 1e-9);
    const GrayImage b = random_gray(rng, 32, 32);
    CHECK(std::abs(ssim(a, b) - ssim(b, a)) <= 1e-9);
  }
  const double c1 = (0.01 * 255) * (0.01 * 255);
  for (const auto& [m1, m2] : std::vector<std::pair<double, double>>{{10, 200}, {0, 255}, {128, 128}, {37.5, 90.25}}) {
    const GrayImage a = GrayImage::Constant(24, 20, m1), b = GrayImage::Constant(24, 20, m2);
    CHECK(std::abs(ssim(a, b) - (2 * m1 * m2 + c1) / (m1 * m1 + m2 * m2 + c1)) <= 1e-9);
  }
  const auto taps = ssim_gaussian_taps();
  CHECK(taps.size() == 11);
  CHECK(std::accumulate(taps.begin(), taps.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(taps[5] > taps[4]);
  CHECK(taps[0] == doctest::Approx(taps[10]).epsilon(1e-15));
}

TEST_CASE("ssim agrees with the direct windowed formula") {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 20; ++i) {
    const GrayImage a = random_gray(rng, 32, 32);
    // correlated partner so the scores are not all near zero
    const GrayImage b = (0.6 * a + 0.4 * random_gray(rng, 32, 32)).eval();
    CHECK(std::abs(ssim(a, b) - oracle::ssim_direct(a, b)) <= 1e-6);
  }
  const GrayImage a = random_gray(rng, 40, 23);
  const GrayImage b = random_gray(rng, 40, 23);
  CHECK(std::abs(ssim(a, b) - oracle::ssim_direct(a, b)) <= 1e-6);
  // below the window size the global fallback still scores self as one
  const GrayImage tiny = random_gray(rng, 6, 9);
  CHECK(std::abs(ssim(tiny, tiny) - 1.0) <= 1e-9);
}

TEST_CASE("dataset similarity") {
  std::mt19937_64 rng(5);
  const GrayImage a = random_gray(rng, 32, 32);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", dataset_similarity({a, a, a, a}));
  CHECK(std::string(buf) == "100.00");
  const GrayImage b = random_gray(rng, 32, 32), c = random_gray(rng, 32, 32);
  CHECK(dataset_similarity({a, b}) == doctest::Approx(100 * ssim(a, b)).epsilon(1e-12));
  const double ab = ssim(a, b), ac = ssim(a, c), bc = ssim(b, c);
  CHECK(dataset_similarity({a, b, c}) == doctest::Approx(100 * (ab + ac + bc) / 3).epsilon(1e-12));
  CHECK(dataset_similarity({a, b, c}, SimilarityMode::per_video_max) ==
        doctest::Approx(100 * (std::max(ab, ac) + std::max(ab, bc) + std::max(ac, bc)) / 3).epsilon(1e-12));
  CHECK_THROWS_AS(dataset_similarity({a}), ContractError);
  CHECK(parse_similarity_mode("max") == SimilarityMode::per_video_max);
  CHECK(parse_similarity_mode("pairwise") == SimilarityMode::pairwise_mean);
}
