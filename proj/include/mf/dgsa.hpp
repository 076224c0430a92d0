#pragma once

#include <optional>

#include "mf/attention.hpp"

namespace mf {

template <typename Scalar>
struct GateMasks {
  Tensor<Scalar> s_a, s_b;  // [1 x H x W]
  Tensor<Scalar> c_a, c_b;  // [C x 1 x 1]
};

template <typename Scalar>
struct DgsaOutput {
  Tensor<Scalar> e_a, e_b;  // enhanced features, same shape as the inputs
  Tensor<Scalar> d_a, d_b;  // dual-gated correspondence features
  Tensor<Scalar> g_a, g_b;  // refined features Conv3x3(concat(F, D))
  std::optional<GateMasks<Scalar>> gates;
};

/// 3x3 conv from 2C channels to 2, then sigmoid.
template <typename Scalar>
struct SpatialGateParams {
  Conv2dLayer<Scalar> conv;
};

/// Pooled bottleneck 2C -> max(1, 2C/4) -> 2C.
template <typename Scalar>
struct ChannelGateParams {
  Conv2dLayer<Scalar> reduce;
  Conv2dLayer<Scalar> expand;
};

template <typename Scalar>
struct DgsaParams {
  SAParams<Scalar> sa;
  // Absent when the gates are ablated (the "+CA" configuration); D = R then.
  std::optional<SpatialGateParams<Scalar>> spatial;
  std::optional<ChannelGateParams<Scalar>> channel;
  Conv2dLayer<Scalar> fuse_a;  // 2C -> C, 3x3
  Conv2dLayer<Scalar> fuse_b;
};

constexpr Index channel_gate_hidden(Index channels) { return (2 * channels) / 4 > 0 ? (2 * channels) / 4 : 1; }

template <typename Scalar>
DgsaParams<Scalar> make_dgsa_params(ParameterStore<Scalar>& store, const std::string& prefix, Index channels,
                                    bool use_gates, ParamRng& rng, int attention_passes = 1);

/// Masks S_a, S_b from r_cat = concat(R_a, R_b).
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> spatial_gate(const Tensor<Scalar>& r_cat, const SpatialGateParams<Scalar>& p);

/// Masks C_a, C_b from r_cat = concat(R_a, R_b).
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> channel_gate(const Tensor<Scalar>& r_cat, const ChannelGateParams<Scalar>& p);

/// D_i = R_i * S_i * C_i, E_i = R_i + Conv3x3(concat(F_i, D_i)).
template <typename Scalar>
DgsaOutput<Scalar> dgsa_forward(const Tensor<Scalar>& f_a, const Tensor<Scalar>& f_b, const AttentionOutput<Scalar>& sa,
                                const DgsaParams<Scalar>& params);

}  // namespace mf
