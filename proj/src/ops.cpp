#include "mf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <numeric>
#include <string>

namespace mf {

Index numel_of(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

bool nan_checks_enabled() {
  static const bool enabled = [] {
    const char* v = std::getenv("MF_CHECK_NAN");
    return v != nullptr && *v != '\0' && std::string(v) != "0";
  }();
  return enabled;
}

namespace {
thread_local BranchLog* current_branch_log = nullptr;
}

void BranchLog::visit(const char* op, std::vector<Index>& choice) {
  if (mode_ == Mode::record) {
    entries_.push_back(choice);
    return;
  }
  if (cursor_ >= entries_.size() || entries_[cursor_].size() != choice.size()) {
    throw ContractError(std::string("branch replay diverged at ") + op);
  }
  choice = entries_[cursor_++];
}

BranchScope::BranchScope(BranchLog& log) : prev_(current_branch_log) { current_branch_log = &log; }
BranchScope::~BranchScope() { current_branch_log = prev_; }
BranchLog* active_branch_log() { return current_branch_log; }

Index conv_output_size(Index in, Index kernel, const Conv2dOptions& opt) {
  if (opt.stride < 1 || opt.dilation < 1 || opt.padding < 0) return 0;
  const Index span = in + 2 * opt.padding - opt.dilation * (kernel - 1) - 1;
  if (span < 0) return 0;
  return span / opt.stride + 1;
}

namespace {

template <typename Scalar>
using Vec = std::vector<Scalar>;
template <typename Scalar>
using NodePtr = std::shared_ptr<detail::TensorNode<Scalar>>;
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
bool wants_grad(std::initializer_list<const Tensor<Scalar>*> inputs) {
  if (active_tape<Scalar>() == nullptr) return false;
  for (const auto* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

template <typename Scalar>
bool wants_grad(const std::vector<Tensor<Scalar>>& inputs) {
  if (active_tape<Scalar>() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const auto& t) { return t.requires_grad(); });
}

template <typename Scalar>
void check_finite(const char* op, const Tensor<Scalar>& out) {
  if (!nan_checks_enabled()) return;
  for (Scalar v : out.data()) {
    if (!std::isfinite(v)) throw NumericalError(std::string("non-finite value produced by ") + op);
  }
}

// Marks `out` as a tape entry whose gradient rule is `fn(grad_out)`.
template <typename Scalar, typename Fn>
void record(const char* op, Tensor<Scalar>& out, bool needs_grad, Fn&& fn) {
  check_finite(op, out);
  if (!needs_grad) return;
  const auto& node = out.node();
  node->requires_grad = true;
  node->is_leaf = false;
  active_tape<Scalar>()->record(node, std::forward<Fn>(fn));
}

// Strides for broadcasting `shape` into `out`; 0 where the dim is expanded.
std::vector<Index> broadcast_strides(const Shape& shape, Index numel, const Shape& out) {
  std::vector<Index> strides(out.size(), 0);
  if (numel == 1) return strides;
  Index s = 1;
  for (std::size_t i = out.size(); i-- > 0;) {
    strides[i] = (shape[i] == 1 && out[i] != 1) ? 0 : s;
    s *= shape[i];
  }
  return strides;
}

Shape broadcast_shape(const Shape& a, Index na, const Shape& b, Index nb) {
  if (a == b) return a;
  if (nb == 1 && (na != 1 || a.size() >= b.size())) return a;
  if (na == 1) return b;
  if (a.size() != b.size()) {
    throw ShapeError("cannot broadcast " + shape_to_string(a) + " with " + shape_to_string(b));
  }
  Shape out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i] || b[i] == 1) {
      out[i] = a[i];
    } else if (a[i] == 1) {
      out[i] = b[i];
    } else {
      throw ShapeError("cannot broadcast " + shape_to_string(a) + " with " + shape_to_string(b));
    }
  }
  return out;
}

// Calls fn(out_index, a_index, b_index) for every output element, with the
// innermost dimension as a tight loop.
template <typename Fn>
void for_each_broadcast(const Shape& out, const std::vector<Index>& sa, const std::vector<Index>& sb, Fn&& fn) {
  const std::size_t rank = out.size();
  if (rank == 0) {
    fn(0, 0, 0);
    return;
  }
  const Index inner = out[rank - 1];
  const Index ia = sa[rank - 1];
  const Index ib = sb[rank - 1];
  const Index outer = numel_of(out) / std::max<Index>(inner, 1);
  std::vector<Index> counter(rank, 0);
  Index oa = 0;
  Index ob = 0;
  Index o = 0;
  for (Index r = 0; r < outer; ++r) {
    for (Index k = 0; k < inner; ++k) fn(o + k, oa + k * ia, ob + k * ib);
    o += inner;
    for (std::size_t d = rank - 1; d-- > 0;) {
      ++counter[d];
      oa += sa[d];
      ob += sb[d];
      if (counter[d] < out[d]) break;
      oa -= sa[d] * out[d];
      ob -= sb[d] * out[d];
      counter[d] = 0;
    }
  }
}

enum class Binary { add, sub, mul };

template <typename Scalar>
Tensor<Scalar> binary(Binary kind, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  const Shape out_shape = broadcast_shape(a.shape(), a.numel(), b.shape(), b.numel());
  const auto sa = broadcast_strides(a.shape(), a.numel(), out_shape);
  const auto sb = broadcast_strides(b.shape(), b.numel(), out_shape);
  Tensor<Scalar> out(out_shape);
  auto y = out.mutable_data();
  const auto x1 = a.data();
  const auto x2 = b.data();
  auto apply = [&](auto op) {
    if (a.shape() == b.shape()) {
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = op(x1[i], x2[i]);
    } else {
      for_each_broadcast(out_shape, sa, sb, [&](Index o, Index i, Index j) { y[o] = op(x1[i], x2[j]); });
    }
  };
  switch (kind) {
    case Binary::add: apply([](Scalar u, Scalar v) { return u + v; }); break;
    case Binary::sub: apply([](Scalar u, Scalar v) { return u - v; }); break;
    case Binary::mul: apply([](Scalar u, Scalar v) { return u * v; }); break;
  }
  const char* name = kind == Binary::add ? "add" : kind == Binary::sub ? "sub" : "mul";
  NodePtr<Scalar> na = a.node();
  NodePtr<Scalar> nb = b.node();
  record(name, out, wants_grad<Scalar>({&a, &b}), [kind, na, nb, out_shape, sa, sb](const Vec<Scalar>& g) {
    const bool ga_on = na->requires_grad;
    const bool gb_on = nb->requires_grad;
    Scalar* ga = ga_on ? na->grad_buffer().data() : nullptr;
    Scalar* gb = gb_on ? nb->grad_buffer().data() : nullptr;
    const Scalar* x1 = na->data.data();
    const Scalar* x2 = nb->data.data();
    for_each_broadcast(out_shape, sa, sb, [&](Index o, Index i, Index j) {
      const Scalar go = g[static_cast<std::size_t>(o)];
      switch (kind) {
        case Binary::add:
          if (ga) ga[i] += go;
          if (gb) gb[j] += go;
          break;
        case Binary::sub:
          if (ga) ga[i] += go;
          if (gb) gb[j] -= go;
          break;
        case Binary::mul:
          if (ga) ga[i] += go * x2[j];
          if (gb) gb[j] += go * x1[i];
          break;
      }
    });
  });
  return out;
}

template <typename Scalar>
Scalar stable_sigmoid(Scalar x) {
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

// outer x n x inner decomposition around `axis`.
struct AxisSplit {
  Index outer = 1;
  Index n = 1;
  Index inner = 1;
};

template <typename Scalar>
AxisSplit split_axis(const Tensor<Scalar>& x, Index& axis) {
  if (axis < 0) axis += x.rank();
  if (axis < 0 || axis >= x.rank()) {
    throw IndexError("axis " + std::to_string(axis) + " out of range for " + shape_to_string(x.shape()));
  }
  AxisSplit s;
  for (Index i = 0; i < axis; ++i) s.outer *= x.shape()[static_cast<std::size_t>(i)];
  s.n = x.shape()[static_cast<std::size_t>(axis)];
  for (Index i = axis + 1; i < x.rank(); ++i) s.inner *= x.shape()[static_cast<std::size_t>(i)];
  return s;
}

struct Lerp {
  Index i0;
  Index i1;
  double w;
};

std::vector<Lerp> lerp_table(Index in, Index out) {
  std::vector<Lerp> table(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (Index o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    Index i0 = std::min<Index>(static_cast<Index>(std::floor(src)), in - 1);
    Index i1 = std::min<Index>(i0 + 1, in - 1);
    table[static_cast<std::size_t>(o)] = Lerp{i0, i1, i0 == i1 ? 0.0 : src - static_cast<double>(i0)};
  }
  return table;
}

// Patch matrix [C_in*k*k x H_out*W_out] for the convolution.
template <typename Scalar>
void im2col(const Scalar* in, Index c_in, Index h, Index w, Index k, const Conv2dOptions& opt, Index ho, Index wo,
            Scalar* cols) {
  for (Index c = 0; c < c_in; ++c) {
    for (Index ki = 0; ki < k; ++ki) {
      for (Index kj = 0; kj < k; ++kj) {
        Scalar* row = cols + ((c * k + ki) * k + kj) * ho * wo;
        for (Index oy = 0; oy < ho; ++oy) {
          const Index iy = oy * opt.stride - opt.padding + ki * opt.dilation;
          Scalar* dst = row + oy * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, Scalar(0));
            continue;
          }
          const Scalar* src = in + (c * h + iy) * w;
          for (Index ox = 0; ox < wo; ++ox) {
            const Index ix = ox * opt.stride - opt.padding + kj * opt.dilation;
            dst[ox] = (ix < 0 || ix >= w) ? Scalar(0) : src[ix];
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im(const Scalar* cols, Index c_in, Index h, Index w, Index k, const Conv2dOptions& opt, Index ho, Index wo,
            Scalar* out) {
  for (Index c = 0; c < c_in; ++c) {
    for (Index ki = 0; ki < k; ++ki) {
      for (Index kj = 0; kj < k; ++kj) {
        const Scalar* row = cols + ((c * k + ki) * k + kj) * ho * wo;
        for (Index oy = 0; oy < ho; ++oy) {
          const Index iy = oy * opt.stride - opt.padding + ki * opt.dilation;
          if (iy < 0 || iy >= h) continue;
          Scalar* dst = out + (c * h + iy) * w;
          const Scalar* src = row + oy * wo;
          for (Index ox = 0; ox < wo; ++ox) {
            const Index ix = ox * opt.stride - opt.padding + kj * opt.dilation;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return binary(Binary::add, a, b);
}
template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return binary(Binary::sub, a, b);
}
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return binary(Binary::mul, a, b);
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, Scalar b) {
  Tensor<Scalar> out(a.shape());
  auto y = out.mutable_data();
  const auto x = a.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] + b;
  NodePtr<Scalar> na = a.node();
  record("add", out, wants_grad<Scalar>({&a}), [na](const Vec<Scalar>& g) {
    auto& ga = na->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, Scalar b) {
  Tensor<Scalar> out(a.shape());
  auto y = out.mutable_data();
  const auto x = a.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * b;
  NodePtr<Scalar> na = a.node();
  record("mul", out, wants_grad<Scalar>({&a}), [na, b](const Vec<Scalar>& g) {
    auto& ga = na->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b;
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> unary(Unary kind, const Tensor<Scalar>& x) {
  Tensor<Scalar> out(x.shape());
  auto y = out.mutable_data();
  const auto in = x.data();
  switch (kind) {
    case Unary::sigmoid:
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = stable_sigmoid(in[i]);
      break;
    case Unary::relu:
      if (BranchLog* blog = active_branch_log()) {
        std::vector<Index> on(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) on[i] = in[i] > Scalar(0);
        blog->visit("relu", on);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = on[i] ? in[i] : Scalar(0);
      } else {
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = in[i] > Scalar(0) ? in[i] : Scalar(0);
      }
      break;
    case Unary::exp:
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::exp(in[i]);
      break;
    case Unary::log:
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::log(in[i]);
      break;
  }
  static constexpr const char* names[] = {"sigmoid", "relu", "exp", "log"};
  NodePtr<Scalar> nx = x.node();
  NodePtr<Scalar> ny = out.node();
  // The closure keeps the output values through a weak reference to avoid a
  // node -> tape -> node cycle; the tape entry itself owns the output node.
  std::weak_ptr<detail::TensorNode<Scalar>> wy = ny;
  record(names[static_cast<int>(kind)], out, wants_grad<Scalar>({&x}), [kind, nx, wy](const Vec<Scalar>& g) {
    auto& gx = nx->grad_buffer();
    const auto& xv = nx->data;
    const auto yn = wy.lock();
    const auto& yv = yn->data;
    switch (kind) {
      case Unary::sigmoid:
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * yv[i] * (Scalar(1) - yv[i]);
        break;
      case Unary::relu:
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (xv[i] > Scalar(0)) gx[i] += g[i];
        }
        break;
      case Unary::exp:
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * yv[i];
        break;
      case Unary::log:
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / xv[i];
        break;
    }
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> clamp(const Tensor<Scalar>& x, Scalar lo, Scalar hi) {
  if (!(lo <= hi)) throw ContractError("clamp: lo > hi");
  Tensor<Scalar> out(x.shape());
  auto y = out.mutable_data();
  const auto in = x.data();
  if (BranchLog* blog = active_branch_log()) {
    // 0 passes through, 1 pinned low, 2 pinned high
    std::vector<Index> side(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) side[i] = in[i] > lo ? (in[i] < hi ? 0 : 2) : 1;
    blog->visit("clamp", side);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = side[i] == 0 ? in[i] : (side[i] == 1 ? lo : hi);
  } else {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::min(std::max(in[i], lo), hi);
  }
  NodePtr<Scalar> nx = x.node();
  record("clamp", out, wants_grad<Scalar>({&x}), [nx, lo, hi](const Vec<Scalar>& g) {
    auto& gx = nx->grad_buffer();
    const auto& xv = nx->data;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > lo && xv[i] < hi) gx[i] += g[i];
    }
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_to_string(a.shape()) + " and " +
                     shape_to_string(b.shape()));
  }
  const Index m = a.dim(0);
  const Index k = a.dim(1);
  const Index n = b.dim(1);
  Tensor<Scalar> out({m, n});
  typename Tensor<Scalar>::MatrixMap(out.mutable_data().data(), m, n).noalias() = a.matrix() * b.matrix();
  NodePtr<Scalar> na = a.node();
  NodePtr<Scalar> nb = b.node();
  record("matmul", out, wants_grad<Scalar>({&a, &b}), [na, nb, m, k, n](const Vec<Scalar>& g) {
    using CMap = Eigen::Map<const RowMatrix<Scalar>>;
    using MMap = Eigen::Map<RowMatrix<Scalar>>;
    CMap gm(g.data(), m, n);
    if (na->requires_grad) {
      MMap(na->grad_buffer().data(), m, k).noalias() += gm * CMap(nb->data.data(), k, n).transpose();
    }
    if (nb->requires_grad) {
      MMap(nb->grad_buffer().data(), k, n).noalias() += CMap(na->data.data(), m, k).transpose() * gm;
    }
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const std::optional<Tensor<Scalar>>& bias, const Conv2dOptions& opt) {
  if (input.rank() != 3 || weight.rank() != 4) {
    throw ShapeError("conv2d: expected [C,H,W] input and [O,C,k,k] weight, got " + shape_to_string(input.shape()) +
                     " and " + shape_to_string(weight.shape()));
  }
  const Index c_in = input.dim(0);
  const Index h = input.dim(1);
  const Index w = input.dim(2);
  const Index c_out = weight.dim(0);
  const Index k = weight.dim(2);
  if (weight.dim(1) != c_in || weight.dim(3) != k) {
    throw ShapeError("conv2d: weight " + shape_to_string(weight.shape()) + " does not fit input " +
                     shape_to_string(input.shape()));
  }
  if (k % 2 == 0) throw ShapeError("conv2d: kernel size must be odd");
  if (bias && (bias->numel() != c_out)) throw ShapeError("conv2d: bias size does not match output channels");
  const Index ho = conv_output_size(h, k, opt);
  const Index wo = conv_output_size(w, k, opt);
  if (ho <= 0 || wo <= 0) {
    throw ShapeError("conv2d: non-positive output size for input " + shape_to_string(input.shape()));
  }
  const Index patch = c_in * k * k;
  const Index positions = ho * wo;
  const bool pointwise = k == 1 && opt.stride == 1 && opt.padding == 0;

  auto cols = std::make_shared<Vec<Scalar>>();
  const Scalar* col_ptr = input.data().data();
  if (!pointwise) {
    cols->resize(static_cast<std::size_t>(patch * positions));
    im2col(input.data().data(), c_in, h, w, k, opt, ho, wo, cols->data());
    col_ptr = cols->data();
  }

  using CMap = Eigen::Map<const RowMatrix<Scalar>>;
  using MMap = Eigen::Map<RowMatrix<Scalar>>;
  Tensor<Scalar> out({c_out, ho, wo});
  MMap y(out.mutable_data().data(), c_out, positions);
  y.noalias() = CMap(weight.data().data(), c_out, patch) * CMap(col_ptr, patch, positions);
  if (bias) {
    const auto bv = bias->data();
    for (Index o = 0; o < c_out; ++o) y.row(o).array() += bv[static_cast<std::size_t>(o)];
  }

  NodePtr<Scalar> ni = input.node();
  NodePtr<Scalar> nw = weight.node();
  NodePtr<Scalar> nb = bias ? bias->node() : nullptr;
  const bool needs = wants_grad<Scalar>({&input, &weight}) || (bias && wants_grad<Scalar>({&*bias}));
  record("conv2d", out, needs, [=](const Vec<Scalar>& g) {
    CMap gm(g.data(), c_out, positions);
    const Scalar* cp = pointwise ? ni->data.data() : cols->data();
    if (nw->requires_grad) {
      MMap(nw->grad_buffer().data(), c_out, patch).noalias() += gm * CMap(cp, patch, positions).transpose();
    }
    if (nb && nb->requires_grad) {
      auto& gb = nb->grad_buffer();
      for (Index o = 0; o < c_out; ++o) gb[static_cast<std::size_t>(o)] += gm.row(o).sum();
    }
    if (ni->requires_grad) {
      CMap wm(nw->data.data(), c_out, patch);
      if (pointwise) {
        MMap(ni->grad_buffer().data(), patch, positions).noalias() += wm.transpose() * gm;
      } else {
        RowMatrix<Scalar> dcols = wm.transpose() * gm;
        col2im(dcols.data(), c_in, h, w, k, opt, ho, wo, ni->grad_buffer().data());
      }
    }
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, Index axis) {
  const AxisSplit s = split_axis(x, axis);
  Tensor<Scalar> out(x.shape());
  auto y = out.mutable_data();
  const auto in = x.data();
  for (Index o = 0; o < s.outer; ++o) {
    for (Index i = 0; i < s.inner; ++i) {
      const Index base = o * s.n * s.inner + i;
      Scalar mx = -std::numeric_limits<Scalar>::infinity();
      for (Index j = 0; j < s.n; ++j) mx = std::max(mx, in[static_cast<std::size_t>(base + j * s.inner)]);
      double total = 0.0;
      for (Index j = 0; j < s.n; ++j) {
        const auto idx = static_cast<std::size_t>(base + j * s.inner);
        y[idx] = std::exp(in[idx] - mx);
        total += static_cast<double>(y[idx]);
      }
      const Scalar inv = static_cast<Scalar>(1.0 / total);
      for (Index j = 0; j < s.n; ++j) y[static_cast<std::size_t>(base + j * s.inner)] *= inv;
    }
  }
  NodePtr<Scalar> nx = x.node();
  std::weak_ptr<detail::TensorNode<Scalar>> wy = out.node();
  record("softmax", out, wants_grad<Scalar>({&x}), [nx, wy, s](const Vec<Scalar>& g) {
    auto& gx = nx->grad_buffer();
    const auto yn = wy.lock();
    const auto& yv = yn->data;
    for (Index o = 0; o < s.outer; ++o) {
      for (Index i = 0; i < s.inner; ++i) {
        const Index base = o * s.n * s.inner + i;
        double dot = 0.0;
        for (Index j = 0; j < s.n; ++j) {
          const auto idx = static_cast<std::size_t>(base + j * s.inner);
          dot += static_cast<double>(g[idx]) * static_cast<double>(yv[idx]);
        }
        const auto d = static_cast<Scalar>(dot);
        for (Index j = 0; j < s.n; ++j) {
          const auto idx = static_cast<std::size_t>(base + j * s.inner);
          gx[idx] += yv[idx] * (g[idx] - d);
        }
      }
    }
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_to_string(x.shape()) + " -> " + shape_to_string(shape));
  }
  Tensor<Scalar> out(std::move(shape), x.values());
  NodePtr<Scalar> nx = x.node();
  record("reshape", out, wants_grad<Scalar>({&x}), [nx](const Vec<Scalar>& g) {
    auto& gx = nx->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> concat(const std::vector<Tensor<Scalar>>& parts, Index axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Tensor<Scalar>& first = parts.front();
  if (axis < 0) axis += first.rank();
  if (axis < 0 || axis >= first.rank()) throw IndexError("concat: axis out of range");
  Shape out_shape = first.shape();
  Index total = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.rank()) throw ShapeError("concat: rank mismatch");
    for (Index d = 0; d < first.rank(); ++d) {
      if (d != axis && p.shape()[static_cast<std::size_t>(d)] != first.shape()[static_cast<std::size_t>(d)]) {
        throw ShapeError("concat: " + shape_to_string(p.shape()) + " does not match " +
                         shape_to_string(first.shape()));
      }
    }
    total += p.shape()[static_cast<std::size_t>(axis)];
  }
  out_shape[static_cast<std::size_t>(axis)] = total;
  Index outer = 1;
  for (Index d = 0; d < axis; ++d) outer *= first.shape()[static_cast<std::size_t>(d)];
  Index inner = 1;
  for (Index d = axis + 1; d < first.rank(); ++d) inner *= first.shape()[static_cast<std::size_t>(d)];

  Tensor<Scalar> out(out_shape);
  auto y = out.mutable_data();
  std::vector<Index> chunk;
  std::vector<NodePtr<Scalar>> nodes;
  for (const auto& p : parts) {
    chunk.push_back(p.shape()[static_cast<std::size_t>(axis)] * inner);
    nodes.push_back(p.node());
  }
  const Index row = total * inner;
  Index off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto src = parts[k].data();
    for (Index o = 0; o < outer; ++o) {
      std::copy_n(src.begin() + o * chunk[k], chunk[k], y.begin() + o * row + off);
    }
    off += chunk[k];
  }
  record("concat", out, wants_grad(parts), [nodes, chunk, outer, row](const Vec<Scalar>& g) {
    Index off = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      if (nodes[k]->requires_grad) {
        auto& gk = nodes[k]->grad_buffer();
        for (Index o = 0; o < outer; ++o) {
          for (Index i = 0; i < chunk[k]; ++i) {
            gk[static_cast<std::size_t>(o * chunk[k] + i)] += g[static_cast<std::size_t>(o * row + off + i)];
          }
        }
      }
      off += chunk[k];
    }
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> slice(const Tensor<Scalar>& x, Index axis, Index start, Index length) {
  const AxisSplit s = split_axis(x, axis);
  if (start < 0 || length < 0 || start + length > s.n) {
    throw IndexError("slice: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of range for axis of size " + std::to_string(s.n));
  }
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(axis)] = length;
  Tensor<Scalar> out(out_shape);
  auto y = out.mutable_data();
  const auto in = x.data();
  const Index src_row = s.n * s.inner;
  const Index dst_row = length * s.inner;
  for (Index o = 0; o < s.outer; ++o) {
    std::copy_n(in.begin() + o * src_row + start * s.inner, dst_row, y.begin() + o * dst_row);
  }
  NodePtr<Scalar> nx = x.node();
  record("slice", out, wants_grad<Scalar>({&x}), [nx, s, start, src_row, dst_row](const Vec<Scalar>& g) {
    auto& gx = nx->grad_buffer();
    for (Index o = 0; o < s.outer; ++o) {
      for (Index i = 0; i < dst_row; ++i) {
        gx[static_cast<std::size_t>(o * src_row + start * s.inner + i)] += g[static_cast<std::size_t>(o * dst_row + i)];
      }
    }
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> gather(const Tensor<Scalar>& x, Index axis, const std::vector<Index>& indices) {
  const AxisSplit s = split_axis(x, axis);
  for (Index idx : indices) {
    if (idx < 0 || idx >= s.n) {
      throw IndexError("gather: index " + std::to_string(idx) + " out of range for axis of size " +
                       std::to_string(s.n));
    }
  }
  const Index m = static_cast<Index>(indices.size());
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(axis)] = m;
  Tensor<Scalar> out(out_shape);
  auto y = out.mutable_data();
  const auto in = x.data();
  for (Index o = 0; o < s.outer; ++o) {
    const Scalar* src = in.data() + o * s.n * s.inner;
    Scalar* dst = y.data() + o * m * s.inner;
    for (Index j = 0; j < m; ++j) {
      std::copy_n(src + indices[static_cast<std::size_t>(j)] * s.inner, s.inner, dst + j * s.inner);
    }
  }
  NodePtr<Scalar> nx = x.node();
  auto idx = std::make_shared<const std::vector<Index>>(indices);
  record("gather", out, wants_grad<Scalar>({&x}), [nx, idx, s, m](const Vec<Scalar>& g) {
    auto& gx = nx->grad_buffer();
    for (Index o = 0; o < s.outer; ++o) {
      Scalar* dst = gx.data() + o * s.n * s.inner;
      const Scalar* src = g.data() + o * m * s.inner;
      for (Index j = 0; j < m; ++j) {
        Scalar* d = dst + (*idx)[static_cast<std::size_t>(j)] * s.inner;
        for (Index i = 0; i < s.inner; ++i) d[i] += src[j * s.inner + i];
      }
    }
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
  double total = 0.0;
  for (Scalar v : x.data()) total += static_cast<double>(v);
  Tensor<Scalar> out(Shape{1}, static_cast<Scalar>(total));
  NodePtr<Scalar> nx = x.node();
  record("sum", out, wants_grad<Scalar>({&x}), [nx](const Vec<Scalar>& g) {
    auto& gx = nx->grad_buffer();
    for (auto& v : gx) v += g[0];
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x, Index axis, bool keepdim) {
  const AxisSplit s = split_axis(x, axis);
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[static_cast<std::size_t>(axis)] = 1;
  } else {
    out_shape.erase(out_shape.begin() + axis);
    if (out_shape.empty()) out_shape.push_back(1);
  }
  Tensor<Scalar> out(out_shape);
  auto y = out.mutable_data();
  const auto in = x.data();
  std::vector<double> acc(static_cast<std::size_t>(s.inner));
  for (Index o = 0; o < s.outer; ++o) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const Scalar* src = in.data() + o * s.n * s.inner;
    for (Index j = 0; j < s.n; ++j) {
      for (Index i = 0; i < s.inner; ++i) acc[static_cast<std::size_t>(i)] += static_cast<double>(src[j * s.inner + i]);
    }
    for (Index i = 0; i < s.inner; ++i) y[static_cast<std::size_t>(o * s.inner + i)] = static_cast<Scalar>(acc[static_cast<std::size_t>(i)]);
  }
  NodePtr<Scalar> nx = x.node();
  record("sum", out, wants_grad<Scalar>({&x}), [nx, s](const Vec<Scalar>& g) {
    auto& gx = nx->grad_buffer();
    for (Index o = 0; o < s.outer; ++o) {
      for (Index j = 0; j < s.n; ++j) {
        for (Index i = 0; i < s.inner; ++i) {
          gx[static_cast<std::size_t>((o * s.n + j) * s.inner + i)] += g[static_cast<std::size_t>(o * s.inner + i)];
        }
      }
    }
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& x) {
  if (x.numel() == 0) throw ShapeError("mean of empty tensor");
  double total = 0.0;
  for (Scalar v : x.data()) total += static_cast<double>(v);
  const double n = static_cast<double>(x.numel());
  Tensor<Scalar> out(Shape{1}, static_cast<Scalar>(total / n));
  NodePtr<Scalar> nx = x.node();
  record("mean", out, wants_grad<Scalar>({&x}), [nx, n](const Vec<Scalar>& g) {
    auto& gx = nx->grad_buffer();
    const auto share = static_cast<Scalar>(static_cast<double>(g[0]) / n);
    for (auto& v : gx) v += share;
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& x, Index axis, bool keepdim) {
  const Index n = x.dim(axis);
  if (n == 0) throw ShapeError("mean over empty axis");
  return mul(sum(x, axis, keepdim), static_cast<Scalar>(1.0 / static_cast<double>(n)));
}

template <typename Scalar>
Tensor<Scalar> upsample_bilinear(const Tensor<Scalar>& x, Index out_h, Index out_w) {
  if (x.rank() != 3) throw ShapeError("upsample_bilinear expects [C,H,W], got " + shape_to_string(x.shape()));
  if (out_h <= 0 || out_w <= 0) throw ShapeError("upsample_bilinear: non-positive output size");
  const Index c = x.dim(0);
  const Index h = x.dim(1);
  const Index w = x.dim(2);
  if (h == 0 || w == 0) throw ShapeError("upsample_bilinear: empty input");
  const auto ty = lerp_table(h, out_h);
  const auto tx = lerp_table(w, out_w);
  Tensor<Scalar> out({c, out_h, out_w});
  auto y = out.mutable_data();
  const auto in = x.data();
  for (Index ch = 0; ch < c; ++ch) {
    const Scalar* src = in.data() + ch * h * w;
    Scalar* dst = y.data() + ch * out_h * out_w;
    for (Index oy = 0; oy < out_h; ++oy) {
      const Lerp& ly = ty[static_cast<std::size_t>(oy)];
      const auto wy = static_cast<Scalar>(ly.w);
      for (Index ox = 0; ox < out_w; ++ox) {
        const Lerp& lx = tx[static_cast<std::size_t>(ox)];
        const auto wx = static_cast<Scalar>(lx.w);
        const Scalar v00 = src[ly.i0 * w + lx.i0];
        const Scalar v01 = src[ly.i0 * w + lx.i1];
        const Scalar v10 = src[ly.i1 * w + lx.i0];
        const Scalar v11 = src[ly.i1 * w + lx.i1];
        const Scalar top = v00 + wx * (v01 - v00);
        const Scalar bot = v10 + wx * (v11 - v10);
        dst[oy * out_w + ox] = top + wy * (bot - top);
      }
    }
  }
  NodePtr<Scalar> nx = x.node();
  record("upsample_bilinear", out, wants_grad<Scalar>({&x}), [nx, ty, tx, c, h, w, out_h, out_w](const Vec<Scalar>& g) {
    auto& gx = nx->grad_buffer();
    for (Index ch = 0; ch < c; ++ch) {
      Scalar* dst = gx.data() + ch * h * w;
      const Scalar* src = g.data() + ch * out_h * out_w;
      for (Index oy = 0; oy < out_h; ++oy) {
        const Lerp& ly = ty[static_cast<std::size_t>(oy)];
        const auto wy = static_cast<Scalar>(ly.w);
        for (Index ox = 0; ox < out_w; ++ox) {
          const Lerp& lx = tx[static_cast<std::size_t>(ox)];
          const auto wx = static_cast<Scalar>(lx.w);
          const Scalar go = src[oy * out_w + ox];
          dst[ly.i0 * w + lx.i0] += go * (Scalar(1) - wy) * (Scalar(1) - wx);
          dst[ly.i0 * w + lx.i1] += go * (Scalar(1) - wy) * wx;
          dst[ly.i1 * w + lx.i0] += go * wy * (Scalar(1) - wx);
          dst[ly.i1 * w + lx.i1] += go * wy * wx;
        }
      }
    }
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& x) {
  if (x.rank() != 3) throw ShapeError("global_avg_pool expects [C,H,W], got " + shape_to_string(x.shape()));
  const Index c = x.dim(0);
  const Index hw = x.dim(1) * x.dim(2);
  if (hw == 0) throw ShapeError("global_avg_pool: empty spatial extent");
  Tensor<Scalar> out({c, 1, 1});
  auto y = out.mutable_data();
  const auto in = x.data();
  for (Index ch = 0; ch < c; ++ch) {
    double total = 0.0;
    for (Index i = 0; i < hw; ++i) total += static_cast<double>(in[static_cast<std::size_t>(ch * hw + i)]);
    y[static_cast<std::size_t>(ch)] = static_cast<Scalar>(total / static_cast<double>(hw));
  }
  NodePtr<Scalar> nx = x.node();
  record("global_avg_pool", out, wants_grad<Scalar>({&x}), [nx, c, hw](const Vec<Scalar>& g) {
    auto& gx = nx->grad_buffer();
    for (Index ch = 0; ch < c; ++ch) {
      const auto share = static_cast<Scalar>(static_cast<double>(g[static_cast<std::size_t>(ch)]) / static_cast<double>(hw));
      for (Index i = 0; i < hw; ++i) gx[static_cast<std::size_t>(ch * hw + i)] += share;
    }
  });
  return out;
}

#define MF_INSTANTIATE_OPS(S)                                                                              \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                              \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                                              \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                              \
  template Tensor<S> add(const Tensor<S>&, S);                                                             \
  template Tensor<S> mul(const Tensor<S>&, S);                                                             \
  template Tensor<S> unary(Unary, const Tensor<S>&);                                                       \
  template Tensor<S> clamp(const Tensor<S>&, S, S);                                                        \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                                           \
  template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, const std::optional<Tensor<S>>&,           \
                            const Conv2dOptions&);                                                         \
  template Tensor<S> softmax(const Tensor<S>&, Index);                                                     \
  template Tensor<S> reshape(const Tensor<S>&, Shape);                                                     \
  template Tensor<S> concat(const std::vector<Tensor<S>>&, Index);                                         \
  template Tensor<S> slice(const Tensor<S>&, Index, Index, Index);                                         \
  template Tensor<S> gather(const Tensor<S>&, Index, const std::vector<Index>&);                           \
  template Tensor<S> sum(const Tensor<S>&);                                                                \
  template Tensor<S> sum(const Tensor<S>&, Index, bool);                                                   \
  template Tensor<S> mean(const Tensor<S>&);                                                               \
  template Tensor<S> mean(const Tensor<S>&, Index, bool);                                                  \
  template Tensor<S> upsample_bilinear(const Tensor<S>&, Index, Index);                                    \
  template Tensor<S> global_avg_pool(const Tensor<S>&);

MF_INSTANTIATE_OPS(float)
MF_INSTANTIATE_OPS(double)

}  // namespace mf
