#include "mf/dgsa.hpp"

namespace mf {

template <typename Scalar>
DgsaParams<Scalar> make_dgsa_params(ParameterStore<Scalar>& store, const std::string& prefix, Index channels,
                                    bool use_gates, ParamRng& rng, int attention_passes) {
  DgsaParams<Scalar> p;
  p.sa = make_sa_params(store, prefix + ".sa", channels, rng, attention_passes);
  if (use_gates) {
    p.spatial = SpatialGateParams<Scalar>{make_conv(store, prefix + ".sg", 2 * channels, 2, 3, rng, Conv2dOptions{1, 1, 1})};
    const Index hidden = channel_gate_hidden(channels);
    p.channel = ChannelGateParams<Scalar>{make_conv(store, prefix + ".cg.reduce", 2 * channels, hidden, 1, rng),
                                          make_conv(store, prefix + ".cg.expand", hidden, 2 * channels, 1, rng)};
  }
  p.fuse_a = make_conv(store, prefix + ".fuse_a", 2 * channels, channels, 3, rng, Conv2dOptions{1, 1, 1});
  p.fuse_b = make_conv(store, prefix + ".fuse_b", 2 * channels, channels, 3, rng, Conv2dOptions{1, 1, 1});
  return p;
}

template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> spatial_gate(const Tensor<Scalar>& r_cat, const SpatialGateParams<Scalar>& p) {
  if (r_cat.rank() != 3 || r_cat.dim(0) % 2 != 0 || r_cat.dim(0) != p.conv.in_channels()) {
    throw ShapeError("spatial_gate: unexpected input " + shape_to_string(r_cat.shape()));
  }
  const Tensor<Scalar> masks = sigmoid(p.conv(r_cat));
  return {slice(masks, 0, 0, 1), slice(masks, 0, 1, 1)};
}

template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> channel_gate(const Tensor<Scalar>& r_cat, const ChannelGateParams<Scalar>& p) {
  if (r_cat.rank() != 3 || r_cat.dim(0) % 2 != 0 || r_cat.dim(0) != p.reduce.in_channels()) {
    throw ShapeError("channel_gate: unexpected input " + shape_to_string(r_cat.shape()));
  }
  const Index c = r_cat.dim(0) / 2;
  const Tensor<Scalar> masks = sigmoid(p.expand(relu(p.reduce(global_avg_pool(r_cat)))));
  return {slice(masks, 0, 0, c), slice(masks, 0, c, c)};
}

template <typename Scalar>
DgsaOutput<Scalar> dgsa_forward(const Tensor<Scalar>& f_a, const Tensor<Scalar>& f_b, const AttentionOutput<Scalar>& sa,
                                const DgsaParams<Scalar>& params) {
  if (f_a.shape() != f_b.shape() || sa.r_a.shape() != f_a.shape() || sa.r_b.shape() != f_b.shape()) {
    throw ShapeError("dgsa_forward: feature/correspondence shapes disagree");
  }
  DgsaOutput<Scalar> out;
  if (params.spatial && params.channel) {
    const Tensor<Scalar> r_cat = concat<Scalar>({sa.r_a, sa.r_b}, 0);
    GateMasks<Scalar> g;
    std::tie(g.s_a, g.s_b) = spatial_gate(r_cat, *params.spatial);
    std::tie(g.c_a, g.c_b) = channel_gate(r_cat, *params.channel);
    out.d_a = mul(mul(sa.r_a, g.s_a), g.c_a);
    out.d_b = mul(mul(sa.r_b, g.s_b), g.c_b);
    out.gates = g;
  } else {
    out.d_a = sa.r_a;
    out.d_b = sa.r_b;
  }
  out.g_a = params.fuse_a(concat<Scalar>({f_a, out.d_a}, 0));
  out.g_b = params.fuse_b(concat<Scalar>({f_b, out.d_b}, 0));
  out.e_a = add(sa.r_a, out.g_a);
  out.e_b = add(sa.r_b, out.g_b);
  return out;
}

#define MF_INSTANTIATE_DGSA(S)                                                                                    \
  template DgsaParams<S> make_dgsa_params(ParameterStore<S>&, const std::string&, Index, bool, ParamRng&, int);   \
  template std::pair<Tensor<S>, Tensor<S>> spatial_gate(const Tensor<S>&, const SpatialGateParams<S>&);           \
  template std::pair<Tensor<S>, Tensor<S>> channel_gate(const Tensor<S>&, const ChannelGateParams<S>&);           \
  template DgsaOutput<S> dgsa_forward(const Tensor<S>&, const Tensor<S>&, const AttentionOutput<S>&,              \
                                      const DgsaParams<S>&);

MF_INSTANTIATE_DGSA(float)
MF_INSTANTIATE_DGSA(double)

}  // namespace mf
