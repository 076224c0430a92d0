#pragma once

#include <array>
#include <vector>

#include "mf/nn.hpp"

namespace mf {

/// Five strided stages; stage 2 is the low-level tap, ASPP(stage 5) the high-level tap.
struct EncoderConfig {
  Index base_channels = 8;
  /// Empty means derived from base_channels: b, 2b, 4b, 8b, 8b.
  std::vector<Index> stage_channels;
  std::vector<Index> aspp_rates{1, 2, 4};
  /// 0 means 4 * base_channels.
  Index aspp_out_channels = 0;

  std::array<Index, 5> resolved_stages() const;
  Index resolved_aspp_out() const;
  Index low_channels() const { return resolved_stages()[1]; }
  Index high_channels() const { return resolved_aspp_out(); }
  /// Throws ConfigError on an invalid configuration.
  void validate() const;
};

template <typename Scalar>
struct FeaturePair {
  Tensor<Scalar> low;   // [C_l x H/4 x W/4]
  Tensor<Scalar> high;  // [C_h x H/32 x W/32]
  int frame_id = 0;
};

template <typename Scalar>
struct AsppParams {
  Conv2dLayer<Scalar> pointwise;
  std::vector<Conv2dLayer<Scalar>> dilated;
  Conv2dLayer<Scalar> pooled;
  Conv2dLayer<Scalar> fuse;
};

template <typename Scalar>
struct EncoderParams {
  std::array<Conv2dLayer<Scalar>, 5> stages;
  AsppParams<Scalar> aspp;
};

template <typename Scalar>
AsppParams<Scalar> make_aspp(ParameterStore<Scalar>& store, const std::string& prefix, Index in_channels,
                             Index out_channels, const std::vector<Index>& rates, ParamRng& rng);

template <typename Scalar>
EncoderParams<Scalar> make_encoder(ParameterStore<Scalar>& store, const std::string& prefix,
                                   const EncoderConfig& cfg, ParamRng& rng);

/// Parallel 1x1, dilated 3x3 (one per rate) and pooled branches, each
/// followed by relu, concatenated and fused by a 1x1 conv + relu. Spatial
/// size is preserved.
template <typename Scalar>
Tensor<Scalar> aspp(const Tensor<Scalar>& x, const AsppParams<Scalar>& params);

/// image [3 x H x W], H and W divisible by 32.
template <typename Scalar>
FeaturePair<Scalar> encode(const Tensor<Scalar>& image, const EncoderParams<Scalar>& params, int frame_id = 0);

}  // namespace mf
