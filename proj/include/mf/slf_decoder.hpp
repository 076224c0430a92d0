#pragma once

#include "mf/nn.hpp"

namespace mf {

template <typename Scalar>
struct SlfParams {
  Conv2dLayer<Scalar> gate;  // 1x1, C -> C, applied to R_t^long
};

template <typename Scalar>
struct FusedFeatures {
  Tensor<Scalar> e_fuse;
};

template <typename Scalar>
SlfParams<Scalar> make_slf_params(ParameterStore<Scalar>& store, const std::string& prefix, Index channels,
                                  ParamRng& rng);

/// e_fuse = e_short * sigmoid(Conv1x1(r_long)) + e_short.
template <typename Scalar>
FusedFeatures<Scalar> slf_fuse(const Tensor<Scalar>& e_short, const Tensor<Scalar>& r_long, const SlfParams<Scalar>& p);

template <typename Scalar>
struct DecoderParams {
  Conv2dLayer<Scalar> conv1;  // 3x3, (C_l + C_h) -> D
  Conv2dLayer<Scalar> conv2;  // 3x3, D -> D
  Conv2dLayer<Scalar> head;   // 1x1, D -> 1
};

template <typename Scalar>
DecoderParams<Scalar> make_decoder_params(ParameterStore<Scalar>& store, const std::string& prefix, Index low_channels,
                                          Index high_channels, Index width, ParamRng& rng);

/// Pre-sigmoid map and probability map, both [1 x H_img x W_img].
template <typename Scalar>
struct DecodeOutput {
  Tensor<Scalar> logits;
  Tensor<Scalar> prob;
};

/// Upsample high to the low resolution, concat, two 3x3 conv + relu blocks,
/// 1x1 conv to one logit channel, bilinear upsample to the image size,
/// sigmoid. `high` must be exactly 8x coarser than `low`.
template <typename Scalar>
DecodeOutput<Scalar> decode(const Tensor<Scalar>& low, const Tensor<Scalar>& high, const DecoderParams<Scalar>& p,
                            Index image_h, Index image_w);

}  // namespace mf
