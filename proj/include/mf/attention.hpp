#pragma once

#include <vector>

#include "mf/nn.hpp"

namespace mf {

/// One key slot of a cross-frame criss-cross neighbourhood.
struct CrissCrossKey {
  enum class Frame { a, b };
  Frame frame;
  Index row;
  Index col;

  friend bool operator==(const CrissCrossKey&, const CrissCrossKey&) = default;
};

/// Key slots for the query at (row, col) of the current frame b, in order:
/// frame-b row left to right, frame-b column top to bottom skipping the
/// query itself (H+W-1 slots), then frame-a row left to right and frame-a
/// column top to bottom (H+W slots; the cell aligned with the query sits in
/// both). Always 2H+2W-1 slots.
std::vector<CrissCrossKey> criss_cross_keys(Index h, Index w, Index row, Index col);

/// Number of slots per query, 2H+2W-1.
constexpr Index criss_cross_key_count(Index h, Index w) { return 2 * h + 2 * w - 1; }

/// Flat table [H*W x (2H+2W-1)] of indices into the concatenated key
/// sequence [frame b positions | frame a positions] (length 2*H*W).
std::vector<Index> criss_cross_index_table(Index h, Index w);

template <typename Scalar>
struct AttentionOutput {
  Tensor<Scalar> r_a;   // [C x H x W], frame a share of the aggregation
  Tensor<Scalar> r_b;   // [C x H x W], frame b share
  Tensor<Scalar> attn;  // [H*W x (2H+2W-1)]
};

/// 1x1 projections and the two learnable output scales.
template <typename Scalar>
struct SAParams {
  Conv2dLayer<Scalar> query;  // applied to frame b
  Conv2dLayer<Scalar> key_a;
  Conv2dLayer<Scalar> key_b;
  Conv2dLayer<Scalar> value_a;
  Conv2dLayer<Scalar> value_b;
  Tensor<Scalar> omega_a;  // [1]
  Tensor<Scalar> omega_b;  // [1]
  int passes = 1;
};

/// omega_a and omega_b start at 0.
template <typename Scalar>
SAParams<Scalar> make_sa_params(ParameterStore<Scalar>& store, const std::string& prefix, Index channels,
                                ParamRng& rng, int passes = 1);

/// Cross-frame criss-cross attention. Queries come from f_b; each query
/// attends over its criss-cross slots in both frames with a single softmax
/// over all 2H+2W-1 slots of 1/sqrt(C)-scaled dot products. The attention
/// mass on frame-a slots aggregates V_a into r_a (scaled by omega_a), the
/// mass on frame-b slots aggregates V_b into r_b (scaled by omega_b).
///
/// With passes == 2 the block runs again on f_b + r_a + r_b with the same
/// parameters and returns the second pass.
template <typename Scalar>
AttentionOutput<Scalar> sa_block(const Tensor<Scalar>& f_a, const Tensor<Scalar>& f_b, const SAParams<Scalar>& params);

/// Long-term pair (t, n): r_b is R_t^long and r_a is R_n^long.
template <typename Scalar>
AttentionOutput<Scalar> la_block(const Tensor<Scalar>& f_t, const Tensor<Scalar>& f_n, const SAParams<Scalar>& params);

}  // namespace mf
