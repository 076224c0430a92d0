#include "mf/encoder.hpp"

namespace mf {

std::array<Index, 5> EncoderConfig::resolved_stages() const {
  if (!stage_channels.empty()) {
    if (stage_channels.size() != 5) throw ConfigError("encoder needs exactly 5 stage channel counts");
    return {stage_channels[0], stage_channels[1], stage_channels[2], stage_channels[3], stage_channels[4]};
  }
  const Index b = base_channels;
  return {b, 2 * b, 4 * b, 8 * b, 8 * b};
}

Index EncoderConfig::resolved_aspp_out() const { return aspp_out_channels > 0 ? aspp_out_channels : 4 * base_channels; }

void EncoderConfig::validate() const {
  if (base_channels < 1) throw ConfigError("base_channels must be >= 1");
  for (Index c : resolved_stages()) {
    if (c < 1) throw ConfigError("stage channel counts must be >= 1");
  }
  if (resolved_aspp_out() < 1) throw ConfigError("aspp_out_channels must be >= 1");
  if (aspp_rates.empty()) throw ConfigError("aspp_rates must not be empty");
  for (Index r : aspp_rates) {
    if (r < 1) throw ConfigError("aspp rates must be >= 1");
  }
}

template <typename Scalar>
AsppParams<Scalar> make_aspp(ParameterStore<Scalar>& store, const std::string& prefix, Index in_channels,
                             Index out_channels, const std::vector<Index>& rates, ParamRng& rng) {
  if (rates.empty()) throw ConfigError("aspp: empty rate list");
  AsppParams<Scalar> p;
  p.pointwise = make_conv(store, prefix + ".pointwise", in_channels, out_channels, 1, rng);
  for (std::size_t i = 0; i < rates.size(); ++i) {
    // padding == dilation keeps a 3x3 output the size of its input.
    const Conv2dOptions opt{1, rates[i], rates[i]};
    p.dilated.push_back(make_conv(store, prefix + ".dilated" + std::to_string(i), in_channels, out_channels, 3, rng, opt));
  }
  p.pooled = make_conv(store, prefix + ".pooled", in_channels, out_channels, 1, rng);
  const Index branches = static_cast<Index>(rates.size()) + 2;
  p.fuse = make_conv(store, prefix + ".fuse", branches * out_channels, out_channels, 1, rng);
  return p;
}

template <typename Scalar>
EncoderParams<Scalar> make_encoder(ParameterStore<Scalar>& store, const std::string& prefix,
                                   const EncoderConfig& cfg, ParamRng& rng) {
  cfg.validate();
  EncoderParams<Scalar> p;
  const auto ch = cfg.resolved_stages();
  Index in = 3;
  for (std::size_t s = 0; s < 5; ++s) {
    p.stages[s] = make_conv(store, prefix + ".stage" + std::to_string(s + 1), in, ch[s], 3, rng, Conv2dOptions{2, 1, 1});
    in = ch[s];
  }
  p.aspp = make_aspp(store, prefix + ".aspp", ch[4], cfg.resolved_aspp_out(), cfg.aspp_rates, rng);
  return p;
}

template <typename Scalar>
Tensor<Scalar> aspp(const Tensor<Scalar>& x, const AsppParams<Scalar>& params) {
  if (params.dilated.empty()) throw ConfigError("aspp: empty rate list");
  const Index h = x.dim(1);
  const Index w = x.dim(2);
  std::vector<Tensor<Scalar>> branches;
  branches.push_back(relu(params.pointwise(x)));
  for (const auto& conv : params.dilated) {
    Tensor<Scalar> b = relu(conv(x));
    if (b.dim(1) != h || b.dim(2) != w) throw ShapeError("aspp: dilated branch changed spatial size");
    branches.push_back(b);
  }
  branches.push_back(upsample_bilinear(relu(params.pooled(global_avg_pool(x))), h, w));
  return relu(params.fuse(concat(branches, 0)));
}

template <typename Scalar>
FeaturePair<Scalar> encode(const Tensor<Scalar>& image, const EncoderParams<Scalar>& params, int frame_id) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("encode expects a [3,H,W] image, got " + shape_to_string(image.shape()));
  }
  if (image.dim(1) % 32 != 0 || image.dim(2) % 32 != 0 || image.dim(1) == 0 || image.dim(2) == 0) {
    throw ContractError("encode: image size " + shape_to_string(image.shape()) + " is not divisible by 32");
  }
  FeaturePair<Scalar> out;
  out.frame_id = frame_id;
  Tensor<Scalar> x = image;
  for (std::size_t s = 0; s < 5; ++s) {
    x = relu(params.stages[s](x));
    if (s == 1) out.low = x;
  }
  out.high = aspp(x, params.aspp);
  return out;
}

#define MF_INSTANTIATE_ENCODER(S)                                                                               \
  template AsppParams<S> make_aspp(ParameterStore<S>&, const std::string&, Index, Index, const std::vector<Index>&, \
                                   ParamRng&);                                                                  \
  template EncoderParams<S> make_encoder(ParameterStore<S>&, const std::string&, const EncoderConfig&, ParamRng&); \
  template Tensor<S> aspp(const Tensor<S>&, const AsppParams<S>&);                                              \
  template FeaturePair<S> encode(const Tensor<S>&, const EncoderParams<S>&, int);

MF_INSTANTIATE_ENCODER(float)
MF_INSTANTIATE_ENCODER(double)

}  // namespace mf
