#pragma once

// Reference implementations written from the definitions, sharing no code
// with the library beyond the tensor containers.

#include <algorithm>
#include <cmath>
#include <vector>

#include "mf/attention.hpp"
#include "mf/metrics.hpp"

namespace oracle {

using mf::Index;

// y[o, p] = b[o] + sum_i w[o, i] x[i, p] for a 1x1 conv layer, in double.
template <typename S>
std::vector<double> pointwise(const mf::Conv2dLayer<S>& layer, const mf::Tensor<S>& x) {
  const Index c_in = x.dim(0), n = x.dim(1) * x.dim(2), c_out = layer.out_channels();
  std::vector<double> y(static_cast<std::size_t>(c_out * n));
  for (Index o = 0; o < c_out; ++o) {
    for (Index p = 0; p < n; ++p) {
      double acc = layer.bias[o];
      for (Index i = 0; i < c_in; ++i) acc += static_cast<double>(layer.weight[o * c_in + i]) * x[i * n + p];
      y[static_cast<std::size_t>(o * n + p)] = acc;
    }
  }
  return y;
}

struct DenseAttention {
  std::vector<double> r_a, r_b;  // [C, H*W]
  std::vector<double> full;      // omega-free aggregation over every slot
  // prob[q][frame][pos]: attention mass of one slot on that cell (0 when the
  // cell is not a key of q). Frame 0 is b, 1 is a.
  std::vector<std::vector<std::vector<double>>> prob;
};

// Dense enumeration: for each query of frame b, every cell of both frames is
// visited and kept when it shares the query's row or column. A frame-a cell
// in both the row and the column (the aligned cell) fills two slots.
template <typename S>
DenseAttention dense_criss_cross(const mf::Tensor<S>& f_a, const mf::Tensor<S>& f_b, const mf::SAParams<S>& p) {
  const Index c = f_b.dim(0), h = f_b.dim(1), w = f_b.dim(2), n = h * w;
  const auto q = pointwise(p.query, f_b);
  const auto ka = pointwise(p.key_a, f_a), kb = pointwise(p.key_b, f_b);
  const auto va = pointwise(p.value_a, f_a), vb = pointwise(p.value_b, f_b);
  const double oa = p.omega_a[0], ob = p.omega_b[0];
  DenseAttention out;
  out.r_a.assign(static_cast<std::size_t>(c * n), 0.0);
  out.r_b = out.r_a;
  out.full = out.r_a;
  out.prob.assign(static_cast<std::size_t>(n), std::vector<std::vector<double>>(2, std::vector<double>(static_cast<std::size_t>(n), 0.0)));
  for (Index qr = 0; qr < h; ++qr) {
    for (Index qc = 0; qc < w; ++qc) {
      const Index qi = qr * w + qc;
      std::vector<double> energy[2], mult[2];
      double max_e = -INFINITY;
      for (int frame = 0; frame < 2; ++frame) {
        energy[frame].assign(static_cast<std::size_t>(n), 0.0);
        mult[frame].assign(static_cast<std::size_t>(n), 0.0);
        const auto& k = frame == 0 ? kb : ka;
        for (Index r = 0; r < h; ++r) {
          for (Index cc = 0; cc < w; ++cc) {
            const Index pi = r * w + cc;
            const bool in_row = r == qr, in_col = cc == qc;
            double m = 0;
            if (frame == 0) m = (in_row || in_col) ? 1 : 0;
            else m = (in_row ? 1 : 0) + (in_col ? 1 : 0);
            if (m == 0) continue;
            double e = 0;
            for (Index ch = 0; ch < c; ++ch) e += q[static_cast<std::size_t>(ch * n + qi)] * k[static_cast<std::size_t>(ch * n + pi)];
            e /= std::sqrt(static_cast<double>(c));
            energy[frame][static_cast<std::size_t>(pi)] = e;
            mult[frame][static_cast<std::size_t>(pi)] = m;
            max_e = std::max(max_e, e);
          }
        }
      }
      double z = 0;
      for (int frame = 0; frame < 2; ++frame) {
        for (Index pi = 0; pi < n; ++pi) z += mult[frame][static_cast<std::size_t>(pi)] * std::exp(energy[frame][static_cast<std::size_t>(pi)] - max_e);
      }
      for (int frame = 0; frame < 2; ++frame) {
        const auto& v = frame == 0 ? vb : va;
        for (Index pi = 0; pi < n; ++pi) {
          const double m = mult[frame][static_cast<std::size_t>(pi)];
          if (m == 0) continue;
          const double a = std::exp(energy[frame][static_cast<std::size_t>(pi)] - max_e) / z;
          out.prob[static_cast<std::size_t>(qi)][static_cast<std::size_t>(frame)][static_cast<std::size_t>(pi)] = a;
          for (Index ch = 0; ch < c; ++ch) {
            const double contrib = m * a * v[static_cast<std::size_t>(ch * n + pi)];
            auto& r = frame == 0 ? out.r_b : out.r_a;
            r[static_cast<std::size_t>(ch * n + qi)] += contrib * (frame == 0 ? ob : oa);
            out.full[static_cast<std::size_t>(ch * n + qi)] += contrib;
          }
        }
      }
    }
  }
  return out;
}

// Jaccard loss of a misprediction set M as a set function: |M| / |P u M|,
// P the positives. Counted directly.
inline double jaccard_set_loss(const std::vector<int>& labels, const std::vector<bool>& in_m) {
  double m = 0, uni = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (in_m[i]) ++m;
    if (in_m[i] || labels[i] == 1) ++uni;
  }
  return uni == 0 ? 0.0 : m / uni;
}

// Lovász extension of the Jaccard set loss evaluated as the Choquet integral
// over level sets of the hinge errors: sum over distinct thresholds of
// (theta_k - theta_{k+1}) * loss({i : e_i >= theta_k}).
inline double lovasz_extension(const std::vector<double>& logits, const std::vector<int>& labels) {
  const std::size_t n = logits.size();
  std::vector<double> e(n);
  for (std::size_t i = 0; i < n; ++i) e[i] = std::max(0.0, 1.0 - logits[i] * (labels[i] == 1 ? 1.0 : -1.0));
  std::vector<double> levels;
  for (double v : e) {
    if (v > 0) levels.push_back(v);
  }
  std::sort(levels.begin(), levels.end(), std::greater<>());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  double total = 0;
  for (std::size_t k = 0; k < levels.size(); ++k) {
    const double next = k + 1 < levels.size() ? levels[k + 1] : 0.0;
    std::vector<bool> in_m(n);
    for (std::size_t i = 0; i < n; ++i) in_m[i] = e[i] >= levels[k];
    total += (levels[k] - next) * jaccard_set_loss(labels, in_m);
  }
  return total;
}

// Windowed SSIM straight from the formula: 2-D Gaussian weights built here,
// every valid window summed explicitly.
inline double ssim_direct(const mf::GrayImage& a, const mf::GrayImage& b) {
  const double L = 255.0, c1 = (0.01 * L) * (0.01 * L), c2 = (0.03 * L) * (0.03 * L);
  const Index win = 11, h = a.rows(), w = a.cols();
  double g[11][11];
  double norm = 0;
  for (int i = 0; i < win; ++i) {
    for (int j = 0; j < win; ++j) {
      g[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 1.5 * 1.5));
      norm += g[i][j];
    }
  }
  double total = 0;
  Index count = 0;
  for (Index y = 0; y + win <= h; ++y) {
    for (Index x = 0; x + win <= w; ++x) {
      double ma = 0, mb = 0;
      for (int i = 0; i < win; ++i) {
        for (int j = 0; j < win; ++j) {
          ma += g[i][j] / norm * a(y + i, x + j);
          mb += g[i][j] / norm * b(y + i, x + j);
        }
      }
      double va = 0, vb = 0, cov = 0;
      for (int i = 0; i < win; ++i) {
        for (int j = 0; j < win; ++j) {
          const double da = a(y + i, x + j) - ma, db = b(y + i, x + j) - mb;
          va += g[i][j] / norm * da * da;
          vb += g[i][j] / norm * db * db;
          cov += g[i][j] / norm * da * db;
        }
      }
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

// Closed-form parameter counts for the default layout at base width b:
// stages b,2b,4b,8b,8b, ASPP to 4b, decoder width 2b, low level 2b channels,
// high level 4b. Written out block by block.
inline Index encoder_params(Index b, Index rates) {
  const Index st[5] = {b, 2 * b, 4 * b, 8 * b, 8 * b};
  const Index a = 4 * b;
  Index n = 0, in = 3;
  for (Index c : st) {
    n += c * in * 9 + c;
    in = c;
  }
  n += (st[4] * a + a) + rates * (st[4] * a * 9 + a) + (st[4] * a + a) + ((rates + 2) * a * a + a);
  return n;
}

inline Index level_params(Index c, bool gates, bool slf) {
  const Index pw = c * c + c;                // one 1x1 C -> C
  const Index sa = 5 * pw + 2;               // q, two keys, two values, two omegas
  const Index fuse = 2 * (2 * c * c * 9 + c);
  Index n = sa + fuse + sa /* la */ + (2 * c * c * 9 + c) /* n head */;
  if (gates) {
    const Index h = std::max<Index>(1, 2 * c / 4);
    n += (2 * c * 2 * 9 + 2) + (2 * c * h + h) + (h * 2 * c + 2 * c);
  }
  if (slf) n += pw;
  return n;
}

inline Index model_params(Index b, Index rates, bool attention, bool gates, bool slf) {
  const Index lo = 2 * b, hi = 4 * b, d = 2 * b;
  Index n = encoder_params(b, rates);
  n += ((lo + hi) * d * 9 + d) + (d * d * 9 + d) + (d + 1);
  if (attention) n += level_params(lo, gates, slf) + level_params(hi, gates, slf);
  return n;
}

}  // namespace oracle
