#include "mf/losses.hpp"

#include <algorithm>
#include <numeric>

namespace mf {

std::vector<double> lovasz_jaccard_weights(const std::vector<int>& sorted_labels) {
  const std::size_t n = sorted_labels.size();
  const double positives = static_cast<double>(std::count(sorted_labels.begin(), sorted_labels.end(), 1));
  std::vector<double> weights(n);
  double cum_pos = 0.0;
  double cum_neg = 0.0;
  double prev = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (sorted_labels[k] == 1) {
      cum_pos += 1.0;
    } else {
      cum_neg += 1.0;
    }
    const double intersection = positives - cum_pos;
    const double uni = positives + cum_neg;
    const double jaccard = 1.0 - intersection / uni;
    weights[k] = jaccard - prev;
    prev = jaccard;
  }
  return weights;
}

template <typename Scalar>
Tensor<Scalar> lovasz_hinge(const Tensor<Scalar>& logits, const Tensor<Scalar>& labels) {
  const Index n = logits.numel();
  if (n < 1) throw ContractError("lovasz_hinge: empty input");
  if (labels.numel() != n) throw ShapeError("lovasz_hinge: logits and labels differ in size");

  std::vector<Scalar> signs(static_cast<std::size_t>(n));
  const auto lab = labels.data();
  for (Index i = 0; i < n; ++i) {
    const Scalar l = lab[static_cast<std::size_t>(i)];
    if (l != Scalar(0) && l != Scalar(1)) throw ContractError("lovasz_hinge: labels must be binary");
    signs[static_cast<std::size_t>(i)] = l == Scalar(1) ? Scalar(1) : Scalar(-1);
  }
  const Tensor<Scalar> flat = reshape(logits, {n});
  const Tensor<Scalar> errors = add(mul(mul(flat, Tensor<Scalar>({n}, signs)), Scalar(-1)), Scalar(1));

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index(0));
  const auto ev = errors.data();
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return ev[static_cast<std::size_t>(a)] > ev[static_cast<std::size_t>(b)];
  });
  if (BranchLog* blog = active_branch_log()) blog->visit("lovasz_sort", order);
  std::vector<int> sorted_labels(static_cast<std::size_t>(n));
  for (Index k = 0; k < n; ++k) {
    sorted_labels[static_cast<std::size_t>(k)] = lab[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] == Scalar(1) ? 1 : 0;
  }
  const std::vector<double> w = lovasz_jaccard_weights(sorted_labels);
  std::vector<Scalar> weights(w.begin(), w.end());

  const Tensor<Scalar> sorted_errors = relu(gather(errors, 0, order));
  return sum(mul(sorted_errors, Tensor<Scalar>({n}, std::move(weights))));
}

template <typename Scalar>
Tensor<Scalar> bce(const Tensor<Scalar>& prob, const GroundTruthMask<Scalar>& gt) {
  if (prob.shape() != gt.shape()) {
    throw ShapeError("bce: prediction " + shape_to_string(prob.shape()) + " vs mask " + shape_to_string(gt.shape()));
  }
  const auto eps = static_cast<Scalar>(kBceEpsilon);
  const Tensor<Scalar> p = clamp(prob, eps, Scalar(1) - eps);
  const Tensor<Scalar>& g = gt.tensor();
  std::vector<Scalar> inv(g.values());
  for (auto& v : inv) v = Scalar(1) - v;
  const Tensor<Scalar> not_g(g.shape(), std::move(inv));
  const Tensor<Scalar> one_minus_p = add(mul(p, Scalar(-1)), Scalar(1));
  const Tensor<Scalar> ll = add(mul(g, log(p)), mul(not_g, log(one_minus_p)));
  return mul(mean(ll), Scalar(-1));
}

template <typename Scalar>
Tensor<Scalar> total_loss(const PredictionSet<Scalar>& preds, const GroundTruthMask<Scalar>& g_prev,
                          const GroundTruthMask<Scalar>& g_t, const GroundTruthMask<Scalar>& g_n) {
  const std::pair<const DecodeOutput<Scalar>*, const GroundTruthMask<Scalar>*> frames[] = {
      {&preds.prev, &g_prev}, {&preds.t, &g_t}, {&preds.n, &g_n}};
  std::optional<Tensor<Scalar>> total;
  for (const auto& [pred, gt] : frames) {
    if (pred->logits.shape() != gt->shape()) throw ShapeError("total_loss: prediction/mask shape mismatch");
    const Tensor<Scalar> term = add(lovasz_hinge(pred->logits, gt->tensor()), bce(pred->prob, *gt));
    total = total ? add(*total, term) : term;
  }
  return *total;
}

#define MF_INSTANTIATE_LOSSES(S)                                                                        \
  template Tensor<S> lovasz_hinge(const Tensor<S>&, const Tensor<S>&);                                  \
  template Tensor<S> bce(const Tensor<S>&, const GroundTruthMask<S>&);                                  \
  template Tensor<S> total_loss(const PredictionSet<S>&, const GroundTruthMask<S>&, const GroundTruthMask<S>&, \
                                const GroundTruthMask<S>&);

MF_INSTANTIATE_LOSSES(float)
MF_INSTANTIATE_LOSSES(double)

}  // namespace mf
