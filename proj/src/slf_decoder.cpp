#include "mf/slf_decoder.hpp"

namespace mf {

template <typename Scalar>
SlfParams<Scalar> make_slf_params(ParameterStore<Scalar>& store, const std::string& prefix, Index channels,
                                  ParamRng& rng) {
  return SlfParams<Scalar>{make_conv(store, prefix + ".gate", channels, channels, 1, rng)};
}

template <typename Scalar>
FusedFeatures<Scalar> slf_fuse(const Tensor<Scalar>& e_short, const Tensor<Scalar>& r_long, const SlfParams<Scalar>& p) {
  if (e_short.shape() != r_long.shape()) {
    throw ShapeError("slf_fuse: " + shape_to_string(e_short.shape()) + " vs " + shape_to_string(r_long.shape()));
  }
  const Tensor<Scalar> gate = sigmoid(p.gate(r_long));
  return FusedFeatures<Scalar>{add(mul(e_short, gate), e_short)};
}

template <typename Scalar>
DecoderParams<Scalar> make_decoder_params(ParameterStore<Scalar>& store, const std::string& prefix, Index low_channels,
                                          Index high_channels, Index width, ParamRng& rng) {
  DecoderParams<Scalar> p;
  const Conv2dOptions same{1, 1, 1};
  p.conv1 = make_conv(store, prefix + ".conv1", low_channels + high_channels, width, 3, rng, same);
  p.conv2 = make_conv(store, prefix + ".conv2", width, width, 3, rng, same);
  p.head = make_conv(store, prefix + ".head", width, 1, 1, rng);
  return p;
}

template <typename Scalar>
DecodeOutput<Scalar> decode(const Tensor<Scalar>& low, const Tensor<Scalar>& high, const DecoderParams<Scalar>& p,
                            Index image_h, Index image_w) {
  if (low.rank() != 3 || high.rank() != 3 || low.dim(1) != 8 * high.dim(1) || low.dim(2) != 8 * high.dim(2)) {
    throw ShapeError("decode: high-level map " + shape_to_string(high.shape()) + " is not 8x coarser than " +
                     shape_to_string(low.shape()));
  }
  const Tensor<Scalar> up = upsample_bilinear(high, low.dim(1), low.dim(2));
  Tensor<Scalar> x = relu(p.conv1(concat<Scalar>({low, up}, 0)));
  x = relu(p.conv2(x));
  DecodeOutput<Scalar> out;
  out.logits = upsample_bilinear(p.head(x), image_h, image_w);
  out.prob = sigmoid(out.logits);
  return out;
}

#define MF_INSTANTIATE_SLF(S)                                                                                   \
  template SlfParams<S> make_slf_params(ParameterStore<S>&, const std::string&, Index, ParamRng&);              \
  template FusedFeatures<S> slf_fuse(const Tensor<S>&, const Tensor<S>&, const SlfParams<S>&);                  \
  template DecoderParams<S> make_decoder_params(ParameterStore<S>&, const std::string&, Index, Index, Index,     \
                                                ParamRng&);                                                     \
  template DecodeOutput<S> decode(const Tensor<S>&, const Tensor<S>&, const DecoderParams<S>&, Index, Index);

MF_INSTANTIATE_SLF(float)
MF_INSTANTIATE_SLF(double)

}  // namespace mf
