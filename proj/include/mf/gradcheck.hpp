#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mf/nn.hpp"

namespace mf {

struct GradcheckStats {
  double rel_error = 0.0;  // ||g_ad - g_fd|| / max(||g_ad||, ||g_fd||) over checked coordinates
  Index checked = 0;
  Index skipped = 0;  // coordinates whose one-sided differences disagree (kinks, sort ties)
};

enum class CoordSelection {
  all,
  random,        // up to max_coords uniformly chosen coordinates
  largest_grad,  // the max_coords coordinates with the largest |autodiff grad|
};

struct GradcheckSettings {
  double step = 1e-3;
  CoordSelection selection = CoordSelection::all;
  Index max_coords = 0;
  double kink_tolerance = 0.05;
  /// Replay the reference pass's relu/clamp masks and sort orders in the
  /// perturbed passes (see BranchLog).
  bool freeze_branches = true;
};

/// Compares the reverse-mode gradient of <u, f()> with central differences,
/// where u is a seeded random cotangent. `f` must read the current data of
/// `leaves`; coordinates are perturbed in place and restored.
template <typename Scalar>
GradcheckStats check_gradients(const std::function<Tensor<Scalar>()>& f, std::vector<Tensor<Scalar>> leaves,
                               std::uint64_t seed, const GradcheckSettings& settings);

/// Same comparison, but the central differences are taken on `f_ref` over
/// `ref_leaves`, a copy of the problem in precision Ref holding the same
/// values. Used when Scalar cannot resolve the objective finely enough for
/// a difference quotient (a float scalar loss over thousands of pixels).
template <typename Scalar, typename Ref>
GradcheckStats check_gradients_against(const std::function<Tensor<Scalar>()>& f, std::vector<Tensor<Scalar>> leaves,
                                       const std::function<Tensor<Ref>()>& f_ref, std::vector<Tensor<Ref>> ref_leaves,
                                       std::uint64_t seed, const GradcheckSettings& settings);

/// Default step per precision: 1e-3 in float, 1e-5 in double.
template <typename Scalar>
constexpr double default_fd_step() {
  return sizeof(Scalar) == sizeof(float) ? 1e-3 : 1e-5;
}
template <typename Scalar>
constexpr double default_fd_tolerance() {
  return sizeof(Scalar) == sizeof(float) ? 1e-3 : 1e-6;
}

struct GradcheckCaseResult {
  std::string name;
  std::string precision;  // "f32" or "f64"
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  int seeds = 0;
  Index checked = 0;
  Index skipped = 0;
  bool passed = false;

  std::string line() const;
};

struct GradcheckSuiteOptions {
  int seeds = 20;
  bool f32 = true;
  bool f64 = true;
  bool include_model = true;
  /// 32-bit cases difference the float build itself instead of its double
  /// twin. Diagnostic only: float rounding of scalar objectives limits it.
  bool f32_self_reference = false;
  /// Substring filter on case names; empty runs everything.
  std::string filter;
};

std::vector<std::string> gradcheck_case_names();
std::vector<GradcheckCaseResult> run_gradcheck_suite(const GradcheckSuiteOptions& opt = {});

}  // namespace mf
