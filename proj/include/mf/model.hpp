#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>

#include "mf/dgsa.hpp"
#include "mf/encoder.hpp"
#include "mf/mask.hpp"
#include "mf/slf_decoder.hpp"

namespace mf {

/// The four configurations of the ablation table.
enum class Preset { baseline, cross_attention, dgsa, dgsa_slf };

enum class SlfLevels { both, low, high };

std::string to_string(Preset p);
Preset parse_preset(const std::string& s);
std::string to_string(SlfLevels l);
SlfLevels parse_slf_levels(const std::string& s);

struct ModelConfig {
  EncoderConfig encoder;
  /// 0 means 2 * base_channels.
  Index decoder_channels = 0;
  bool use_attention = true;
  bool use_dgsa_gates = true;
  bool use_slf = true;
  int attention_passes = 1;
  SlfLevels slf_levels = SlfLevels::both;

  static ModelConfig from_preset(Preset p, EncoderConfig encoder = {});
  void apply_preset(Preset p);
  /// Throws ConfigError when the toggles do not form one of the presets.
  Preset preset() const;
  Index resolved_decoder_channels() const {
    return decoder_channels > 0 ? decoder_channels : 2 * encoder.base_channels;
  }
  void validate() const;
};

enum class ModelInit {
  standard,
  /// Fusion and P_n-head convs start at zero: with omega = 0 every decoder
  /// input of the attention configurations is zero and P = sigmoid(0).
  zero_fusion,
};

template <typename Scalar>
struct LevelParams {
  DgsaParams<Scalar> dgsa;
  SAParams<Scalar> la;
  std::optional<SlfParams<Scalar>> slf;
  Conv2dLayer<Scalar> n_head;  // 3x3, concat(F_n, R_n^long) -> C
};

template <typename Scalar>
struct FrameTriple {
  Tensor<Scalar> i_prev, i_t, i_n;  // [3 x H x W] in [0, 1]
  GroundTruthMask<Scalar> g_prev, g_t, g_n;
  std::array<Index, 3> indices{0, 1, 2};  // (t-1, t, n)
};

template <typename Scalar>
struct PredictionSet {
  DecodeOutput<Scalar> prev;
  DecodeOutput<Scalar> t;
  DecodeOutput<Scalar> n;
};

/// Parameter names mirror module paths, e.g. "encoder.stage1.weight",
/// "low.dgsa.sa.omega_a", "decoder.head.bias".
template <typename Scalar>
class MirrorNet {
 public:
  MirrorNet(const ModelConfig& cfg, std::uint64_t seed, ModelInit init = ModelInit::standard);
  MirrorNet(const MirrorNet&) = delete;
  MirrorNet& operator=(const MirrorNet&) = delete;
  MirrorNet(MirrorNet&&) = default;
  MirrorNet& operator=(MirrorNet&&) = default;

  const ModelConfig& config() const { return config_; }
  ParameterStore<Scalar>& parameters() { return store_; }
  const ParameterStore<Scalar>& parameters() const { return store_; }
  Index parameter_count() const { return store_.scalar_count(); }

  EncoderParams<Scalar> encoder;
  std::optional<LevelParams<Scalar>> low;
  std::optional<LevelParams<Scalar>> high;
  DecoderParams<Scalar> decoder;

 private:
  ModelConfig config_;
  ParameterStore<Scalar> store_;
};

/// Three-frame forward pass.
///
/// Attention configurations: DGSA on (t-1, t) and LA on (t, n) at both
/// feature levels; P_t decodes the SLF-fused E_t (or E_t alone when SLF is
/// off for that level), P_{t-1} decodes E_{t-1}, and P_n decodes
/// Conv3x3(concat(F_n, R_n^long)). Baseline decodes every frame's raw
/// features.
template <typename Scalar>
PredictionSet<Scalar> model_forward(const FrameTriple<Scalar>& triple, const MirrorNet<Scalar>& model);

}  // namespace mf
