#include "mf/model.hpp"

namespace mf {

std::string to_string(Preset p) {
  switch (p) {
    case Preset::baseline: return "baseline";
    case Preset::cross_attention: return "ca";
    case Preset::dgsa: return "dgsa";
    case Preset::dgsa_slf: return "dgsa_slf";
  }
  return "dgsa_slf";
}

Preset parse_preset(const std::string& s) {
  if (s == "baseline") return Preset::baseline;
  if (s == "ca") return Preset::cross_attention;
  if (s == "dgsa") return Preset::dgsa;
  if (s == "dgsa_slf") return Preset::dgsa_slf;
  throw ConfigError("unknown preset '" + s + "' (expected baseline, ca, dgsa, dgsa_slf)");
}

std::string to_string(SlfLevels l) {
  switch (l) {
    case SlfLevels::both: return "both";
    case SlfLevels::low: return "low";
    case SlfLevels::high: return "high";
  }
  return "both";
}

SlfLevels parse_slf_levels(const std::string& s) {
  if (s == "both") return SlfLevels::both;
  if (s == "low") return SlfLevels::low;
  if (s == "high") return SlfLevels::high;
  throw ConfigError("unknown slf_levels '" + s + "' (expected both, low, high)");
}

ModelConfig ModelConfig::from_preset(Preset p, EncoderConfig encoder) {
  ModelConfig cfg;
  cfg.encoder = std::move(encoder);
  cfg.apply_preset(p);
  return cfg;
}

void ModelConfig::apply_preset(Preset p) {
  use_attention = p != Preset::baseline;
  use_dgsa_gates = p == Preset::dgsa || p == Preset::dgsa_slf;
  use_slf = p == Preset::dgsa_slf;
}

Preset ModelConfig::preset() const {
  if (!use_attention) {
    if (use_dgsa_gates || use_slf) throw ConfigError("use_dgsa_gates/use_slf require use_attention");
    return Preset::baseline;
  }
  if (!use_dgsa_gates) {
    if (use_slf) throw ConfigError("use_slf without use_dgsa_gates is not one of the ablation configurations");
    return Preset::cross_attention;
  }
  return use_slf ? Preset::dgsa_slf : Preset::dgsa;
}

void ModelConfig::validate() const {
  encoder.validate();
  (void)preset();
  if (resolved_decoder_channels() < 1) throw ConfigError("decoder_channels must be >= 1");
  if (attention_passes < 1 || attention_passes > 2) throw ConfigError("attention_passes must be 1 or 2");
}

namespace {

bool slf_on_level(const ModelConfig& cfg, bool is_low) {
  if (!cfg.use_slf) return false;
  switch (cfg.slf_levels) {
    case SlfLevels::both: return true;
    case SlfLevels::low: return is_low;
    case SlfLevels::high: return !is_low;
  }
  return true;
}

template <typename Scalar>
LevelParams<Scalar> make_level(ParameterStore<Scalar>& store, const std::string& prefix, Index channels,
                               const ModelConfig& cfg, bool is_low, ParamRng& rng) {
  LevelParams<Scalar> p;
  p.dgsa = make_dgsa_params(store, prefix + ".dgsa", channels, cfg.use_dgsa_gates, rng, cfg.attention_passes);
  p.la = make_sa_params(store, prefix + ".la", channels, rng, cfg.attention_passes);
  if (slf_on_level(cfg, is_low)) p.slf = make_slf_params(store, prefix + ".slf", channels, rng);
  p.n_head = make_conv(store, prefix + ".n_head", 2 * channels, channels, 3, rng, Conv2dOptions{1, 1, 1});
  return p;
}

template <typename Scalar>
struct LevelFeatures {
  Tensor<Scalar> prev;
  Tensor<Scalar> t;
  Tensor<Scalar> n;
};

template <typename Scalar>
LevelFeatures<Scalar> run_level(const Tensor<Scalar>& f_prev, const Tensor<Scalar>& f_t, const Tensor<Scalar>& f_n,
                                const LevelParams<Scalar>& p) {
  const AttentionOutput<Scalar> short_term = sa_block(f_prev, f_t, p.dgsa.sa);
  const DgsaOutput<Scalar> enhanced = dgsa_forward(f_prev, f_t, short_term, p.dgsa);
  const AttentionOutput<Scalar> long_term = la_block(f_t, f_n, p.la);
  LevelFeatures<Scalar> out;
  out.prev = enhanced.e_a;
  out.t = p.slf ? slf_fuse(enhanced.e_b, long_term.r_b, *p.slf).e_fuse : enhanced.e_b;
  out.n = p.n_head(concat<Scalar>({f_n, long_term.r_a}, 0));
  return out;
}

}  // namespace

template <typename Scalar>
MirrorNet<Scalar>::MirrorNet(const ModelConfig& cfg, std::uint64_t seed, ModelInit init) : config_(cfg) {
  config_.validate();
  ParamRng rng(seed);
  encoder = make_encoder(store_, "encoder", config_.encoder, rng);
  const Index c_low = config_.encoder.low_channels();
  const Index c_high = config_.encoder.high_channels();
  if (config_.use_attention) {
    low = make_level(store_, "low", c_low, config_, true, rng);
    high = make_level(store_, "high", c_high, config_, false, rng);
  }
  decoder = make_decoder_params(store_, "decoder", c_low, c_high, config_.resolved_decoder_channels(), rng);
  if (init == ModelInit::zero_fusion && config_.use_attention) {
    for (auto* level : {&*low, &*high}) {
      level->dgsa.fuse_a.fill_zero();
      level->dgsa.fuse_b.fill_zero();
      level->n_head.fill_zero();
    }
  }
}

template <typename Scalar>
PredictionSet<Scalar> model_forward(const FrameTriple<Scalar>& triple, const MirrorNet<Scalar>& model) {
  const auto& img = triple.i_t;
  if (triple.i_prev.shape() != img.shape() || triple.i_n.shape() != img.shape()) {
    throw ShapeError("model_forward: the three frames must share one size");
  }
  const Index h = img.dim(1);
  const Index w = img.dim(2);
  const FeaturePair<Scalar> fp = encode(triple.i_prev, model.encoder, static_cast<int>(triple.indices[0]));
  const FeaturePair<Scalar> ft = encode(triple.i_t, model.encoder, static_cast<int>(triple.indices[1]));
  const FeaturePair<Scalar> fn = encode(triple.i_n, model.encoder, static_cast<int>(triple.indices[2]));

  PredictionSet<Scalar> out;
  if (!model.config().use_attention) {
    out.prev = decode(fp.low, fp.high, model.decoder, h, w);
    out.t = decode(ft.low, ft.high, model.decoder, h, w);
    out.n = decode(fn.low, fn.high, model.decoder, h, w);
    return out;
  }
  const LevelFeatures<Scalar> lo = run_level(fp.low, ft.low, fn.low, *model.low);
  const LevelFeatures<Scalar> hi = run_level(fp.high, ft.high, fn.high, *model.high);
  out.t = decode(lo.t, hi.t, model.decoder, h, w);
  out.prev = decode(lo.prev, hi.prev, model.decoder, h, w);
  out.n = decode(lo.n, hi.n, model.decoder, h, w);
  return out;
}

template class MirrorNet<float>;
template class MirrorNet<double>;
template PredictionSet<float> model_forward(const FrameTriple<float>&, const MirrorNet<float>&);
template PredictionSet<double> model_forward(const FrameTriple<double>&, const MirrorNet<double>&);

}  // namespace mf
