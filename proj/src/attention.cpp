#include "mf/attention.hpp"

#include <cmath>

namespace mf {

std::vector<CrissCrossKey> criss_cross_keys(Index h, Index w, Index row, Index col) {
  if (h < 1 || w < 1) throw IndexError("criss_cross_keys: empty grid");
  if (row < 0 || row >= h || col < 0 || col >= w) {
    throw IndexError("criss_cross_keys: position (" + std::to_string(row) + ", " + std::to_string(col) +
                     ") outside " + std::to_string(h) + "x" + std::to_string(w) + " grid");
  }
  using F = CrissCrossKey::Frame;
  std::vector<CrissCrossKey> keys;
  keys.reserve(static_cast<std::size_t>(criss_cross_key_count(h, w)));
  for (Index c = 0; c < w; ++c) keys.push_back({F::b, row, c});
  for (Index r = 0; r < h; ++r) {
    if (r != row) keys.push_back({F::b, r, col});
  }
  for (Index c = 0; c < w; ++c) keys.push_back({F::a, row, c});
  for (Index r = 0; r < h; ++r) keys.push_back({F::a, r, col});
  return keys;
}

std::vector<Index> criss_cross_index_table(Index h, Index w) {
  const Index n = h * w;
  std::vector<Index> table;
  table.reserve(static_cast<std::size_t>(n * criss_cross_key_count(h, w)));
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      for (const auto& k : criss_cross_keys(h, w, r, c)) {
        const Index pos = k.row * w + k.col;
        table.push_back(k.frame == CrissCrossKey::Frame::b ? pos : n + pos);
      }
    }
  }
  return table;
}

template <typename Scalar>
SAParams<Scalar> make_sa_params(ParameterStore<Scalar>& store, const std::string& prefix, Index channels,
                                ParamRng& rng, int passes) {
  if (passes < 1 || passes > 2) throw ConfigError("attention passes must be 1 or 2");
  SAParams<Scalar> p;
  p.query = make_conv(store, prefix + ".query", channels, channels, 1, rng);
  p.key_a = make_conv(store, prefix + ".key_a", channels, channels, 1, rng);
  p.key_b = make_conv(store, prefix + ".key_b", channels, channels, 1, rng);
  p.value_a = make_conv(store, prefix + ".value_a", channels, channels, 1, rng);
  p.value_b = make_conv(store, prefix + ".value_b", channels, channels, 1, rng);
  p.omega_a = store.add(prefix + ".omega_a", Tensor<Scalar>::scalar(Scalar(0)));
  p.omega_b = store.add(prefix + ".omega_b", Tensor<Scalar>::scalar(Scalar(0)));
  p.passes = passes;
  return p;
}

namespace {

template <typename Scalar>
AttentionOutput<Scalar> single_pass(const Tensor<Scalar>& f_a, const Tensor<Scalar>& f_b, const SAParams<Scalar>& p) {
  const Index c = f_b.dim(0);
  const Index h = f_b.dim(1);
  const Index w = f_b.dim(2);
  const Index n = h * w;
  const Index slots = criss_cross_key_count(h, w);
  const Index b_slots = h + w - 1;
  const std::vector<Index> table = criss_cross_index_table(h, w);

  const Tensor<Scalar> q = reshape(p.query(f_b), {c, n, 1});
  const Tensor<Scalar> keys = concat<Scalar>({reshape(p.key_b(f_b), {c, n}), reshape(p.key_a(f_a), {c, n})}, 1);
  const Tensor<Scalar> gathered_keys = reshape(gather(keys, 1, table), {c, n, slots});
  const auto scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(c)));
  const Tensor<Scalar> energy = mul(sum(mul(q, gathered_keys), 0), scale);

  AttentionOutput<Scalar> out;
  out.attn = softmax(energy, 1);

  const Tensor<Scalar> values =
      concat<Scalar>({reshape(p.value_b(f_b), {c, n}), reshape(p.value_a(f_a), {c, n})}, 1);
  const Tensor<Scalar> gathered_values = reshape(gather(values, 1, table), {c, n, slots});
  const Tensor<Scalar> weighted = mul(reshape(out.attn, {1, n, slots}), gathered_values);
  const Tensor<Scalar> agg_b = sum(slice(weighted, 2, 0, b_slots), 2);
  const Tensor<Scalar> agg_a = sum(slice(weighted, 2, b_slots, slots - b_slots), 2);
  out.r_b = mul(reshape(agg_b, {c, h, w}), p.omega_b);
  out.r_a = mul(reshape(agg_a, {c, h, w}), p.omega_a);
  return out;
}

}  // namespace

template <typename Scalar>
AttentionOutput<Scalar> sa_block(const Tensor<Scalar>& f_a, const Tensor<Scalar>& f_b, const SAParams<Scalar>& params) {
  if (f_a.shape() != f_b.shape() || f_a.rank() != 3) {
    throw ShapeError("sa_block: frame shapes " + shape_to_string(f_a.shape()) + " and " +
                     shape_to_string(f_b.shape()) + " differ");
  }
  if (f_b.dim(1) < 1 || f_b.dim(2) < 1) throw ShapeError("sa_block: empty spatial grid");
  if (f_b.dim(0) != params.query.in_channels()) {
    throw ShapeError("sa_block: features have " + std::to_string(f_b.dim(0)) + " channels, projections expect " +
                     std::to_string(params.query.in_channels()));
  }
  AttentionOutput<Scalar> out = single_pass(f_a, f_b, params);
  for (int pass = 1; pass < params.passes; ++pass) {
    out = single_pass(f_a, add(f_b, add(out.r_a, out.r_b)), params);
  }
  return out;
}

template <typename Scalar>
AttentionOutput<Scalar> la_block(const Tensor<Scalar>& f_t, const Tensor<Scalar>& f_n, const SAParams<Scalar>& params) {
  return sa_block(f_n, f_t, params);
}

#define MF_INSTANTIATE_ATTENTION(S)                                                                        \
  template SAParams<S> make_sa_params(ParameterStore<S>&, const std::string&, Index, ParamRng&, int);      \
  template AttentionOutput<S> sa_block(const Tensor<S>&, const Tensor<S>&, const SAParams<S>&);            \
  template AttentionOutput<S> la_block(const Tensor<S>&, const Tensor<S>&, const SAParams<S>&);

MF_INSTANTIATE_ATTENTION(float)
MF_INSTANTIATE_ATTENTION(double)

}  // namespace mf
