#pragma once

#include "mf/tensor.hpp"

namespace mf {

/// Binary [1 x H x W] mirror mask (1 = mirror).
template <typename Scalar>
class GroundTruthMask {
 public:
  GroundTruthMask() = default;

  /// Throws ShapeError for a wrong shape and ContractError for non-binary values.
  explicit GroundTruthMask(Tensor<Scalar> mask) : mask_(std::move(mask)) {
    if (mask_.rank() != 3 || mask_.dim(0) != 1) {
      throw ShapeError("ground-truth mask must be [1,H,W], got " + shape_to_string(mask_.shape()));
    }
    for (Scalar v : mask_.data()) {
      if (v != Scalar(0) && v != Scalar(1)) throw ContractError("ground-truth mask is not binary");
    }
  }

  const Tensor<Scalar>& tensor() const { return mask_; }
  const Shape& shape() const { return mask_.shape(); }
  Index numel() const { return mask_.numel(); }

 private:
  Tensor<Scalar> mask_;
};

}  // namespace mf
