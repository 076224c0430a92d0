#include "mf/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <type_traits>

#include "mf/losses.hpp"

namespace mf {

template <typename Scalar, typename Ref>
GradcheckStats check_gradients_against(const std::function<Tensor<Scalar>()>& f, std::vector<Tensor<Scalar>> leaves,
                                       const std::function<Tensor<Ref>()>& f_ref, std::vector<Tensor<Ref>> ref_leaves,
                                       std::uint64_t seed, const GradcheckSettings& settings) {
  if (leaves.size() != ref_leaves.size()) throw ContractError("check_gradients_against: leaf lists differ");
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    if (leaves[l].shape() != ref_leaves[l].shape()) throw ContractError("check_gradients_against: leaf shapes differ");
    leaves[l].set_requires_grad(true);
    leaves[l].zero_grad();
  }
  ParamRng rng(seed ^ 0x5eedc0d1ULL);

  // Cotangent values are drawn on the float grid so both precisions use
  // exactly the same u.
  std::vector<double> u;
  {
    Tape<Scalar> tape;
    TapeScope<Scalar> scope(tape);
    const Tensor<Scalar> y = f();
    u.resize(static_cast<std::size_t>(y.numel()));
    for (auto& v : u) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    std::vector<Scalar> seed_grad(u.begin(), u.end());
    tape.backward(y, seed_grad);
  }

  // Branch choices of the reference pass are replayed by every perturbed
  // pass, so the differences never straddle a relu/clamp/sort switch.
  BranchLog branches;
  auto objective = [&]() {
    std::optional<BranchScope> bscope;
    if (settings.freeze_branches) bscope.emplace(branches);
    const Tensor<Ref> y = f_ref();
    if (static_cast<std::size_t>(y.numel()) != u.size()) throw ContractError("check_gradients_against: output sizes differ");
    double acc = 0.0;
    const auto d = y.data();
    for (std::size_t i = 0; i < d.size(); ++i) acc += u[i] * static_cast<double>(d[i]);
    return acc;
  };

  struct Coord {
    std::size_t leaf;
    std::size_t index;
    double ad;
  };
  std::vector<Coord> coords;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    const auto g = leaves[l].grad();
    for (std::size_t i = 0; i < static_cast<std::size_t>(leaves[l].numel()); ++i) {
      coords.push_back({l, i, g.empty() ? 0.0 : static_cast<double>(g[i])});
    }
  }
  const auto limit = static_cast<std::size_t>(settings.max_coords);
  if (settings.selection == CoordSelection::random && limit > 0 && coords.size() > limit) {
    for (std::size_t i = 0; i < limit; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.next() % (coords.size() - i));
      std::swap(coords[i], coords[j]);
    }
    coords.resize(limit);
  } else if (settings.selection == CoordSelection::largest_grad && limit > 0 && coords.size() > limit) {
    std::stable_sort(coords.begin(), coords.end(), [](const Coord& a, const Coord& b) { return std::abs(a.ad) > std::abs(b.ad); });
    coords.resize(limit);
  }

  branches.set_mode(BranchLog::Mode::record);
  const double phi0 = objective();
  GradcheckStats stats;
  double diff_sq = 0.0;
  double ad_sq = 0.0;
  double fd_sq = 0.0;
  for (const Coord& c : coords) {
    Ref& x = ref_leaves[c.leaf].mutable_data()[c.index];
    const Ref x0 = x;
    const auto xp = static_cast<Ref>(static_cast<double>(x0) + settings.step);
    const auto xm = static_cast<Ref>(static_cast<double>(x0) - settings.step);
    x = xp;
    branches.set_mode(BranchLog::Mode::replay);
    const double phi_p = objective();
    x = xm;
    branches.set_mode(BranchLog::Mode::replay);
    const double phi_m = objective();
    x = x0;
    const double hp = static_cast<double>(xp) - static_cast<double>(x0);
    const double hm = static_cast<double>(x0) - static_cast<double>(xm);
    const double fd = (phi_p - phi_m) / (hp + hm);
    const double right = (phi_p - phi0) / hp;
    const double left = (phi0 - phi_m) / hm;
    if (std::abs(right - left) > settings.kink_tolerance * (std::abs(right) + std::abs(left)) + 1e-9) {
      ++stats.skipped;
      continue;
    }
    ++stats.checked;
    diff_sq += (c.ad - fd) * (c.ad - fd);
    ad_sq += c.ad * c.ad;
    fd_sq += fd * fd;
  }
  const double denom = std::sqrt(std::max(ad_sq, fd_sq));
  stats.rel_error = denom > 0.0 ? std::sqrt(diff_sq) / denom : 0.0;
  return stats;
}

template <typename Scalar>
GradcheckStats check_gradients(const std::function<Tensor<Scalar>()>& f, std::vector<Tensor<Scalar>> leaves,
                               std::uint64_t seed, const GradcheckSettings& settings) {
  return check_gradients_against<Scalar, Scalar>(f, leaves, f, leaves, seed, settings);
}

template GradcheckStats check_gradients(const std::function<Tensor<float>()>&, std::vector<Tensor<float>>, std::uint64_t,
                                        const GradcheckSettings&);
template GradcheckStats check_gradients(const std::function<Tensor<double>()>&, std::vector<Tensor<double>>,
                                        std::uint64_t, const GradcheckSettings&);
template GradcheckStats check_gradients_against(const std::function<Tensor<float>()>&, std::vector<Tensor<float>>,
                                                const std::function<Tensor<double>()>&, std::vector<Tensor<double>>,
                                                std::uint64_t, const GradcheckSettings&);
template GradcheckStats check_gradients_against(const std::function<Tensor<double>()>&, std::vector<Tensor<double>>,
                                                const std::function<Tensor<double>()>&, std::vector<Tensor<double>>,
                                                std::uint64_t, const GradcheckSettings&);

std::string GradcheckCaseResult::line() const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s %-22s %s max_rel=%.3e tol=%.0e seeds=%d checked=%lld skipped=%lld",
                passed ? "PASS" : "FAIL", name.c_str(), precision.c_str(), max_rel_error, tolerance, seeds,
                static_cast<long long>(checked), static_cast<long long>(skipped));
  return buf;
}

namespace {

template <typename Scalar>
Tensor<Scalar> rand_tensor(ParamRng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor<Scalar> t(std::move(shape));
  for (auto& v : t.mutable_data()) v = static_cast<Scalar>(static_cast<float>(rng.uniform(lo, hi)));
  return t;
}

template <typename Scalar>
std::vector<Tensor<Scalar>> store_leaves(const ParameterStore<Scalar>& store) {
  std::vector<Tensor<Scalar>> out;
  for (const auto& e : store.entries()) out.push_back(e.second);
  return out;
}

// Random values for everything in the store, including the omega scalars
// and biases that start at zero.
template <typename Scalar>
void randomize(ParameterStore<Scalar>& store, ParamRng& rng, double scale = 0.5) {
  for (auto& e : store.entries()) {
    for (auto& v : e.second.mutable_data()) v = static_cast<Scalar>(static_cast<float>(rng.uniform(-scale, scale)));
  }
}

// Every draw goes through float, so the float and double builds of a case
// hold identical values and can be compared against each other.
template <typename Scalar>
struct Case {
  std::string name;
  std::function<std::pair<std::function<Tensor<Scalar>()>, std::vector<Tensor<Scalar>>>(std::uint64_t)> build;
  GradcheckSettings settings;
};

template <typename Scalar>
std::vector<Tensor<Scalar>> cat(std::vector<Tensor<Scalar>> a, const std::vector<Tensor<Scalar>>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

template <typename S>
std::pair<std::function<Tensor<S>()>, std::vector<Tensor<S>>> build_total_loss(std::uint64_t seed) {
  ParamRng r(seed);
  std::vector<Tensor<S>> logits;
  std::vector<GroundTruthMask<S>> gts;
  for (int i = 0; i < 3; ++i) {
    logits.push_back(rand_tensor<S>(r, {1, 3, 3}, -2, 2));
    Tensor<S> lab({1, 3, 3});
    for (auto& v : lab.mutable_data()) v = (r.next() & 1U) != 0 ? S(1) : S(0);
    gts.emplace_back(lab);
  }
  return {[=] {
            PredictionSet<S> ps{{logits[0], sigmoid(logits[0])}, {logits[1], sigmoid(logits[1])}, {logits[2], sigmoid(logits[2])}};
            return total_loss(ps, gts[0], gts[1], gts[2]);
          },
          logits};
}

// Full model on a 3x32x32 triple, width-8 encoder; the leaves are the
// encoder conv weights and the objective is the training loss.
template <typename S>
std::pair<std::function<Tensor<S>()>, std::vector<Tensor<S>>> build_model_problem(Preset preset, std::uint64_t seed) {
  ModelConfig cfg = ModelConfig::from_preset(preset);
  cfg.encoder.base_channels = 8;
  auto model = std::make_shared<MirrorNet<S>>(cfg, seed);
  ParamRng rng(seed ^ 0xabcdefULL);
  std::vector<Tensor<S>> leaves;
  for (auto& [name, t] : model->parameters().entries()) {
    // Move omega away from 0 so every attention path carries gradient.
    const bool omega = name.find("omega") != std::string::npos;
    for (auto& v : t.mutable_data()) v = omega ? static_cast<S>(static_cast<float>(rng.uniform(0.5, 1.0))) : static_cast<S>(static_cast<float>(v));
    if (name.rfind("encoder.", 0) == 0 && name.find(".weight") != std::string::npos) leaves.push_back(t);
  }
  auto frame = [&] { return rand_tensor<S>(rng, {3, 32, 32}, 0, 1); };
  Tensor<S> m({1, 32, 32});
  for (Index y = 4; y < 20; ++y) {
    for (Index x = 8; x < 24; ++x) m.set({0, y, x}, S(1));
  }
  const GroundTruthMask<S> mask(m);
  const FrameTriple<S> triple{frame(), frame(), frame(), mask, mask, mask, {0, 1, 2}};
  return {[model, triple] { return total_loss(model_forward(triple, *model), triple); }, leaves};
}

template <typename Scalar>
std::vector<Case<Scalar>> make_cases(bool include_model) {
  using T = Tensor<Scalar>;
  using Fn = std::function<T()>;
  GradcheckSettings base;
  base.step = default_fd_step<Scalar>();
  GradcheckSettings sampled = base;
  sampled.selection = CoordSelection::random;
  sampled.max_coords = 96;

  std::vector<Case<Scalar>> cases;
  auto simple = [&](std::string name, std::function<std::pair<Fn, std::vector<T>>(ParamRng&)> build,
                    GradcheckSettings s) {
    cases.push_back({std::move(name), [build](std::uint64_t seed) {
                       ParamRng rng(seed);
                       return build(rng);
                     }, s});
  };

  simple("add_broadcast", [](ParamRng& r) {
    T a = rand_tensor<Scalar>(r, {2, 3, 4}), b = rand_tensor<Scalar>(r, {1, 3, 1});
    return std::pair<Fn, std::vector<T>>{[=] { return add(a, b); }, {a, b}};
  }, base);
  simple("sub_broadcast", [](ParamRng& r) {
    T a = rand_tensor<Scalar>(r, {2, 3, 4}), b = rand_tensor<Scalar>(r, {2, 1, 4});
    return std::pair<Fn, std::vector<T>>{[=] { return sub(a, b); }, {a, b}};
  }, base);
  simple("mul_broadcast", [](ParamRng& r) {
    T a = rand_tensor<Scalar>(r, {3, 4, 4}), b = rand_tensor<Scalar>(r, {1, 4, 4});
    return std::pair<Fn, std::vector<T>>{[=] { return mul(a, b); }, {a, b}};
  }, base);
  simple("mul_scalar_tensor", [](ParamRng& r) {
    T a = rand_tensor<Scalar>(r, {2, 3, 3}), w = rand_tensor<Scalar>(r, {1});
    return std::pair<Fn, std::vector<T>>{[=] { return add(mul(a, w), Scalar(0.25)); }, {a, w}};
  }, base);
  simple("sigmoid", [](ParamRng& r) {
    T a = rand_tensor<Scalar>(r, {2, 5}, -4, 4);
    return std::pair<Fn, std::vector<T>>{[=] { return sigmoid(a); }, {a}};
  }, base);
  simple("relu", [](ParamRng& r) {
    T a = rand_tensor<Scalar>(r, {2, 6});
    return std::pair<Fn, std::vector<T>>{[=] { return relu(a); }, {a}};
  }, base);
  simple("exp", [](ParamRng& r) {
    T a = rand_tensor<Scalar>(r, {2, 5}, -2, 2);
    return std::pair<Fn, std::vector<T>>{[=] { return exp(a); }, {a}};
  }, base);
  simple("log", [](ParamRng& r) {
    T a = rand_tensor<Scalar>(r, {2, 5}, 0.5, 3.0);
    return std::pair<Fn, std::vector<T>>{[=] { return log(a); }, {a}};
  }, base);
  simple("clamp", [](ParamRng& r) {
    T a = rand_tensor<Scalar>(r, {3, 5}, -2, 2);
    return std::pair<Fn, std::vector<T>>{[=] { return clamp(a, Scalar(-1), Scalar(1)); }, {a}};
  }, base);
  simple("matmul", [](ParamRng& r) {
    T a = rand_tensor<Scalar>(r, {4, 5}), b = rand_tensor<Scalar>(r, {5, 3});
    return std::pair<Fn, std::vector<T>>{[=] { return matmul(a, b); }, {a, b}};
  }, base);
  simple("conv2d_pad1", [](ParamRng& r) {
    T x = rand_tensor<Scalar>(r, {2, 5, 5}), w = rand_tensor<Scalar>(r, {3, 2, 3, 3}), b = rand_tensor<Scalar>(r, {3});
    return std::pair<Fn, std::vector<T>>{[=] { return conv2d(x, w, std::optional(b), {1, 1, 1}); }, {x, w, b}};
  }, base);
  simple("conv2d_stride2", [](ParamRng& r) {
    T x = rand_tensor<Scalar>(r, {2, 6, 6}), w = rand_tensor<Scalar>(r, {2, 2, 3, 3}), b = rand_tensor<Scalar>(r, {2});
    return std::pair<Fn, std::vector<T>>{[=] { return conv2d(x, w, std::optional(b), {2, 1, 1}); }, {x, w, b}};
  }, base);
  simple("conv2d_dilation2", [](ParamRng& r) {
    T x = rand_tensor<Scalar>(r, {2, 5, 5}), w = rand_tensor<Scalar>(r, {2, 2, 3, 3});
    return std::pair<Fn, std::vector<T>>{[=] { return conv2d(x, w, std::optional<T>(), {1, 2, 2}); }, {x, w}};
  }, base);
  simple("conv2d_1x1", [](ParamRng& r) {
    T x = rand_tensor<Scalar>(r, {3, 4, 4}), w = rand_tensor<Scalar>(r, {2, 3, 1, 1}), b = rand_tensor<Scalar>(r, {2});
    return std::pair<Fn, std::vector<T>>{[=] { return conv2d(x, w, std::optional(b), {}); }, {x, w, b}};
  }, base);
  simple("softmax", [](ParamRng& r) {
    T x = rand_tensor<Scalar>(r, {3, 4}, -3, 3);
    return std::pair<Fn, std::vector<T>>{[=] { return add(softmax(x, 1), softmax(x, 0)); }, {x}};
  }, base);
  simple("reshape", [](ParamRng& r) {
    T x = rand_tensor<Scalar>(r, {2, 3, 4});
    return std::pair<Fn, std::vector<T>>{[=] { return mul(reshape(x, {6, 4}), reshape(x, {6, 4})); }, {x}};
  }, base);
  simple("concat", [](ParamRng& r) {
    T a = rand_tensor<Scalar>(r, {1, 2, 2}), b = rand_tensor<Scalar>(r, {3, 2, 2});
    return std::pair<Fn, std::vector<T>>{[=] { return concat<Scalar>({a, b, a}, 0); }, {a, b}};
  }, base);
  simple("slice", [](ParamRng& r) {
    T x = rand_tensor<Scalar>(r, {2, 5, 3});
    return std::pair<Fn, std::vector<T>>{[=] { return slice(x, 1, 1, 3); }, {x}};
  }, base);
  simple("gather", [](ParamRng& r) {
    T x = rand_tensor<Scalar>(r, {2, 5});
    return std::pair<Fn, std::vector<T>>{[=] { return gather(x, 1, {4, 0, 0, 2, 4, 4}); }, {x}};
  }, base);
  simple("sum_mean", [](ParamRng& r) {
    T x = rand_tensor<Scalar>(r, {2, 3, 4});
    return std::pair<Fn, std::vector<T>>{
        [=] { return concat<Scalar>({reshape(sum(x), {1}), reshape(mean(x), {1})}, 0); }, {x}};
  }, base);
  simple("sum_mean_axis", [](ParamRng& r) {
    T x = rand_tensor<Scalar>(r, {2, 3, 4});
    return std::pair<Fn, std::vector<T>>{[=] { return add(sum(x, 1, true), mean(x, 1, true)); }, {x}};
  }, base);
  simple("upsample_bilinear", [](ParamRng& r) {
    T x = rand_tensor<Scalar>(r, {2, 3, 3});
    return std::pair<Fn, std::vector<T>>{[=] { return upsample_bilinear(x, 5, 7); }, {x}};
  }, base);
  simple("global_avg_pool", [](ParamRng& r) {
    T x = rand_tensor<Scalar>(r, {3, 4, 5});
    return std::pair<Fn, std::vector<T>>{[=] { return global_avg_pool(x); }, {x}};
  }, base);
  simple("conv_sigmoid_mean", [](ParamRng& r) {
    T x = rand_tensor<Scalar>(r, {2, 4, 4}), w = rand_tensor<Scalar>(r, {2, 2, 3, 3}), b = rand_tensor<Scalar>(r, {2});
    return std::pair<Fn, std::vector<T>>{[=] { return mean(sigmoid(conv2d(x, w, std::optional(b), {1, 1, 1}))); },
                                         {x, w, b}};
  }, base);

  auto module_case = [&](std::string name, auto build, GradcheckSettings s) {
    cases.push_back({std::move(name), [build](std::uint64_t seed) {
                       ParamRng rng(seed);
                       auto store = std::make_shared<ParameterStore<Scalar>>();
                       auto [fn, inputs] = build(*store, rng);
                       randomize(*store, rng);
                       // the closure keeps the store alive with the parameters it reads
                       return std::pair<Fn, std::vector<T>>{[fn, store] { return fn(); }, cat(inputs, store_leaves(*store))};
                     }, s});
  };

  module_case("aspp", [](ParameterStore<Scalar>& st, ParamRng& r) {
    T x = rand_tensor<Scalar>(r, {3, 4, 4});
    auto p = make_aspp<Scalar>(st, "aspp", 3, 4, {1, 2}, r);
    return std::pair<Fn, std::vector<T>>{[=] { return aspp(x, p); }, {x}};
  }, sampled);
  module_case("sa_block", [](ParameterStore<Scalar>& st, ParamRng& r) {
    T fa = rand_tensor<Scalar>(r, {4, 3, 3}), fb = rand_tensor<Scalar>(r, {4, 3, 3});
    auto p = make_sa_params<Scalar>(st, "sa", 4, r);
    return std::pair<Fn, std::vector<T>>{[=] {
                                           auto o = sa_block(fa, fb, p);
                                           return concat<Scalar>({o.r_a, o.r_b}, 0);
                                         },
                                         {fa, fb}};
  }, sampled);
  module_case("sa_block_attn", [](ParameterStore<Scalar>& st, ParamRng& r) {
    T fa = rand_tensor<Scalar>(r, {4, 2, 3}), fb = rand_tensor<Scalar>(r, {4, 2, 3});
    auto p = make_sa_params<Scalar>(st, "sa", 4, r);
    return std::pair<Fn, std::vector<T>>{[=] { return sa_block(fa, fb, p).attn; }, {fa, fb}};
  }, sampled);
  module_case("sa_block_two_pass", [](ParameterStore<Scalar>& st, ParamRng& r) {
    T fa = rand_tensor<Scalar>(r, {2, 3, 2}), fb = rand_tensor<Scalar>(r, {2, 3, 2});
    auto p = make_sa_params<Scalar>(st, "sa", 2, r, 2);
    return std::pair<Fn, std::vector<T>>{[=] {
                                           auto o = sa_block(fa, fb, p);
                                           return concat<Scalar>({o.r_a, o.r_b}, 0);
                                         },
                                         {fa, fb}};
  }, sampled);
  module_case("la_block", [](ParameterStore<Scalar>& st, ParamRng& r) {
    T ft = rand_tensor<Scalar>(r, {4, 3, 3}), fn = rand_tensor<Scalar>(r, {4, 3, 3});
    auto p = make_sa_params<Scalar>(st, "la", 4, r);
    return std::pair<Fn, std::vector<T>>{[=] {
                                           auto o = la_block(ft, fn, p);
                                           return concat<Scalar>({o.r_a, o.r_b}, 0);
                                         },
                                         {ft, fn}};
  }, sampled);
  module_case("spatial_gate", [](ParameterStore<Scalar>& st, ParamRng& r) {
    T x = rand_tensor<Scalar>(r, {4, 4, 4});
    SpatialGateParams<Scalar> p{make_conv<Scalar>(st, "sg", 4, 2, 3, r, {1, 1, 1})};
    return std::pair<Fn, std::vector<T>>{[=] {
                                           auto [a, b] = spatial_gate(x, p);
                                           return concat<Scalar>({a, b}, 0);
                                         },
                                         {x}};
  }, sampled);
  module_case("channel_gate", [](ParameterStore<Scalar>& st, ParamRng& r) {
    T x = rand_tensor<Scalar>(r, {8, 3, 3});
    ChannelGateParams<Scalar> p{make_conv<Scalar>(st, "cg.reduce", 8, channel_gate_hidden(4), 1, r),
                                make_conv<Scalar>(st, "cg.expand", channel_gate_hidden(4), 8, 1, r)};
    return std::pair<Fn, std::vector<T>>{[=] {
                                           auto [a, b] = channel_gate(x, p);
                                           return concat<Scalar>({a, b}, 0);
                                         },
                                         {x}};
  }, sampled);
  module_case("dgsa_forward", [](ParameterStore<Scalar>& st, ParamRng& r) {
    T fa = rand_tensor<Scalar>(r, {4, 3, 3}), fb = rand_tensor<Scalar>(r, {4, 3, 3});
    auto p = make_dgsa_params<Scalar>(st, "dgsa", 4, true, r);
    return std::pair<Fn, std::vector<T>>{[=] {
                                           auto o = dgsa_forward(fa, fb, sa_block(fa, fb, p.sa), p);
                                           return concat<Scalar>({o.e_a, o.e_b, o.d_a, o.d_b}, 0);
                                         },
                                         {fa, fb}};
  }, sampled);
  module_case("dgsa_mean_eb_wrt_fa", [](ParameterStore<Scalar>& st, ParamRng& r) {
    T fa = rand_tensor<Scalar>(r, {4, 3, 3}), fb = rand_tensor<Scalar>(r, {4, 3, 3});
    auto p = make_dgsa_params<Scalar>(st, "dgsa", 4, true, r);
    return std::pair<Fn, std::vector<T>>{[=] { return mean(dgsa_forward(fa, fb, sa_block(fa, fb, p.sa), p).e_b); },
                                         {fa}};
  }, base);
  module_case("slf_fuse", [](ParameterStore<Scalar>& st, ParamRng& r) {
    T e = rand_tensor<Scalar>(r, {3, 4, 4}), rl = rand_tensor<Scalar>(r, {3, 4, 4});
    auto p = make_slf_params<Scalar>(st, "slf", 3, r);
    return std::pair<Fn, std::vector<T>>{[=] { return slf_fuse(e, rl, p).e_fuse; }, {e, rl}};
  }, sampled);
  module_case("decode", [](ParameterStore<Scalar>& st, ParamRng& r) {
    T low = rand_tensor<Scalar>(r, {3, 8, 8}), high = rand_tensor<Scalar>(r, {4, 1, 1});
    auto p = make_decoder_params<Scalar>(st, "dec", 3, 4, 4, r);
    return std::pair<Fn, std::vector<T>>{[=] {
                                           auto o = decode(low, high, p, 32, 32);
                                           return add(o.prob, o.logits);
                                         },
                                         {low, high}};
  }, sampled);
  module_case("encode", [](ParameterStore<Scalar>& st, ParamRng& r) {
    T img = rand_tensor<Scalar>(r, {3, 32, 32}, 0, 1);
    EncoderConfig cfg;
    cfg.base_channels = 2;
    auto p = make_encoder<Scalar>(st, "encoder", cfg, r);
    return std::pair<Fn, std::vector<T>>{[=] {
                                           auto f = encode(img, p);
                                           return concat<Scalar>({reshape(f.low, {f.low.numel()}), reshape(f.high, {f.high.numel()})}, 0);
                                         },
                                         {img}};
  }, sampled);

  auto labels_for = [](ParamRng& r, Index n) {
    std::vector<Scalar> lab(static_cast<std::size_t>(n));
    for (auto& v : lab) v = (r.next() & 1U) != 0 ? Scalar(1) : Scalar(0);
    return lab;
  };
  simple("lovasz_hinge", [labels_for](ParamRng& r) {
    T logits = rand_tensor<Scalar>(r, {12}, -2, 2);
    T labels({12}, labels_for(r, 12));
    return std::pair<Fn, std::vector<T>>{[=] { return lovasz_hinge(logits, labels); }, {logits}};
  }, base);
  simple("bce", [labels_for](ParamRng& r) {
    T p = rand_tensor<Scalar>(r, {1, 3, 4}, 0.05, 0.95);
    GroundTruthMask<Scalar> g(T({1, 3, 4}, labels_for(r, 12)));
    return std::pair<Fn, std::vector<T>>{[=] { return bce(p, g); }, {p}};
  }, base);
  cases.push_back({"total_loss", build_total_loss<Scalar>, base});
  if (include_model) {
    GradcheckSettings s = base;
    s.selection = CoordSelection::largest_grad;
    s.max_coords = 12;
    for (const Preset preset : {Preset::dgsa_slf, Preset::baseline}) {
      cases.push_back({std::string("model_") + to_string(preset),
                       [preset](std::uint64_t seed) { return build_model_problem<Scalar>(preset, seed); }, s});
    }
  }
  return cases;
}

// In 32-bit mode the float gradient is compared with central differences
// of the identical double build (same step); `f32_self_reference` differences
// the float build itself instead.
template <typename Scalar>
void run_cases(const GradcheckSuiteOptions& opt, const char* precision, std::vector<GradcheckCaseResult>& out) {
  const auto cases = make_cases<Scalar>(opt.include_model);
  const auto ref_cases = make_cases<double>(opt.include_model);
  for (std::size_t k = 0; k < cases.size(); ++k) {
    const Case<Scalar>& c = cases[k];
    if (!opt.filter.empty() && c.name.find(opt.filter) == std::string::npos) continue;
    GradcheckCaseResult r;
    r.name = c.name;
    r.precision = precision;
    r.tolerance = default_fd_tolerance<Scalar>();
    r.seeds = opt.seeds;
    for (int s = 0; s < opt.seeds; ++s) {
      const auto seed = 1000 + static_cast<std::uint64_t>(s);
      auto [fn, leaves] = c.build(seed);
      GradcheckStats st;
      if constexpr (std::is_same_v<Scalar, double>) {
        st = check_gradients<double>(fn, leaves, seed, c.settings);
      } else if (opt.f32_self_reference) {
        st = check_gradients<Scalar>(fn, leaves, seed, c.settings);
      } else {
        auto [ref_fn, ref_leaves] = ref_cases[k].build(seed);
        st = check_gradients_against<Scalar, double>(fn, leaves, ref_fn, ref_leaves, seed, c.settings);
      }
      r.max_rel_error = std::max(r.max_rel_error, st.rel_error);
      r.checked += st.checked;
      r.skipped += st.skipped;
    }
    r.passed = r.max_rel_error <= r.tolerance && r.checked > 0;
    out.push_back(r);
  }
}

}  // namespace

std::vector<std::string> gradcheck_case_names() {
  std::vector<std::string> names;
  for (const auto& c : make_cases<double>(true)) names.push_back(c.name);
  return names;
}

std::vector<GradcheckCaseResult> run_gradcheck_suite(const GradcheckSuiteOptions& opt) {
  std::vector<GradcheckCaseResult> out;
  if (opt.f32) run_cases<float>(opt, "f32", out);
  if (opt.f64) run_cases<double>(opt, "f64", out);
  return out;
}

}  // namespace mf
