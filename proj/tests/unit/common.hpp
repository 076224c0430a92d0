#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "mf/nn.hpp"
#include "mf/ops.hpp"

namespace test {

using mf::Index;

template <typename S = float>
mf::Tensor<S> rand_tensor(mf::ParamRng& rng, mf::Shape shape, double lo = -1.0, double hi = 1.0) {
  mf::Tensor<S> t(std::move(shape));
  for (auto& v : t.mutable_data()) v = static_cast<S>(rng.uniform(lo, hi));
  return t;
}

template <typename S>
double max_abs_diff(const mf::Tensor<S>& a, const mf::Tensor<S>& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0.0;
  for (Index i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

template <typename S>
bool bitwise_equal(const mf::Tensor<S>& a, const mf::Tensor<S>& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("mf_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace test
