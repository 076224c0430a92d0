#pragma once

#include <optional>
#include <vector>

#include "mf/tensor.hpp"

// Differentiable tensor ops. Every op is a pure function of its inputs; when
// a tape is active on the calling thread and any input requires grad, the op
// records its gradient rule. Element-wise binary ops broadcast same-rank
// shapes where each dimension matches or is 1, and treat single-element
// tensors as scalars.

namespace mf {

enum class Unary { sigmoid, relu, exp, log };

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, Scalar b);
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, Scalar b);

template <typename Scalar>
Tensor<Scalar> unary(Unary kind, const Tensor<Scalar>& x);

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x) { return unary(Unary::sigmoid, x); }
template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) { return unary(Unary::relu, x); }
template <typename Scalar>
Tensor<Scalar> exp(const Tensor<Scalar>& x) { return unary(Unary::exp, x); }
template <typename Scalar>
Tensor<Scalar> log(const Tensor<Scalar>& x) { return unary(Unary::log, x); }

/// Gradient passes only where lo < x < hi.
template <typename Scalar>
Tensor<Scalar> clamp(const Tensor<Scalar>& x, Scalar lo, Scalar hi);

/// [M x K] . [K x N]
template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

struct Conv2dOptions {
  Index stride = 1;
  Index padding = 0;
  Index dilation = 1;
};

/// Output spatial size of a square-kernel convolution, or <= 0 when invalid.
Index conv_output_size(Index in, Index kernel, const Conv2dOptions& opt);

/// Cross-correlation with zero padding. input [C_in x H x W], weight
/// [C_out x C_in x k x k], optional bias [C_out].
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const std::optional<Tensor<Scalar>>& bias, const Conv2dOptions& opt = {});

/// Max-subtracted softmax along `axis`.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, Index axis);

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape);

template <typename Scalar>
Tensor<Scalar> concat(const std::vector<Tensor<Scalar>>& parts, Index axis);

/// `length` entries starting at `start` along `axis`.
template <typename Scalar>
Tensor<Scalar> slice(const Tensor<Scalar>& x, Index axis, Index start, Index length);

/// out[.., m, ..] = x[.., indices[m], ..] along `axis`; backward scatter-adds.
template <typename Scalar>
Tensor<Scalar> gather(const Tensor<Scalar>& x, Index axis, const std::vector<Index>& indices);

/// Sum of all elements, shape [1]. Accumulates in double.
template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x);
/// Sum over one axis; the axis is dropped unless keepdim.
template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x, Index axis, bool keepdim = false);

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& x);
template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& x, Index axis, bool keepdim = false);

/// Bilinear resize of [C x H x W] with half-pixel centers (align_corners = false).
template <typename Scalar>
Tensor<Scalar> upsample_bilinear(const Tensor<Scalar>& x, Index out_h, Index out_w);

/// [C x H x W] -> [C x 1 x 1]
template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& x);

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return sub(a, b); }
template <typename Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return mul(a, b); }

/// Discrete choices made by piecewise ops (relu and clamp masks, sort
/// orders). While a log is active on the calling thread, record mode stores
/// each op's choice in call order and replay mode makes the op reuse the
/// stored one instead. A perturbed replay then evaluates the same smooth
/// piece that reverse mode differentiates at the recorded point.
class BranchLog {
 public:
  enum class Mode { record, replay };

  void set_mode(Mode m) {
    mode_ = m;
    cursor_ = 0;
  }
  Mode mode() const { return mode_; }
  std::size_t size() const { return entries_.size(); }

  /// Record: stores `choice`. Replay: overwrites `choice` with the next
  /// stored entry; throws ContractError if the call sequence diverged.
  void visit(const char* op, std::vector<Index>& choice);

 private:
  Mode mode_ = Mode::record;
  std::size_t cursor_ = 0;
  std::vector<std::vector<Index>> entries_;
};

class BranchScope {
 public:
  explicit BranchScope(BranchLog& log);
  ~BranchScope();
  BranchScope(const BranchScope&) = delete;
  BranchScope& operator=(const BranchScope&) = delete;

 private:
  BranchLog* prev_;
};

BranchLog* active_branch_log();

/// True when MF_CHECK_NAN is set to a non-empty value other than "0".
bool nan_checks_enabled();

}  // namespace mf
