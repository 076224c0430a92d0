#pragma once

#include <vector>

#include "mf/model.hpp"

namespace mf {

/// Jaccard-gradient weights for labels already sorted by decreasing hinge
/// error: w_k = J_k - J_{k-1} with J_k = 1 - |gt \ first k| / |gt U first k|.
std::vector<double> lovasz_jaccard_weights(const std::vector<int>& sorted_labels);

/// Per-image Lovasz hinge on flattened pre-sigmoid logits; labels in {0,1}
/// and of the same element count. Differentiable w.r.t. logits through the
/// (fixed) sort permutation.
template <typename Scalar>
Tensor<Scalar> lovasz_hinge(const Tensor<Scalar>& logits, const Tensor<Scalar>& labels);

inline constexpr double kBceEpsilon = 1e-7;

/// Mean binary cross-entropy with p clamped to [eps, 1 - eps].
template <typename Scalar>
Tensor<Scalar> bce(const Tensor<Scalar>& prob, const GroundTruthMask<Scalar>& gt);

/// Sum over the three frames of lovasz_hinge(logits) + bce(prob).
template <typename Scalar>
Tensor<Scalar> total_loss(const PredictionSet<Scalar>& preds, const GroundTruthMask<Scalar>& g_prev,
                          const GroundTruthMask<Scalar>& g_t, const GroundTruthMask<Scalar>& g_n);

template <typename Scalar>
Tensor<Scalar> total_loss(const PredictionSet<Scalar>& preds, const FrameTriple<Scalar>& triple) {
  return total_loss(preds, triple.g_prev, triple.g_t, triple.g_n);
}

}  // namespace mf
