#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "mf/data.hpp"
#include "mf/losses.hpp"
#include "mf/metrics.hpp"

namespace mf {

/// Every field is addressable as `key = value` in a config file and as
/// `--key value` on the command line.
struct TrainConfig {
  double lr = 1e-5;
  Index batch_size = 5;
  Index epochs = 15;
  double weight_decay = 5e-4;
  Index image_size = 64;
  std::uint64_t seed = 0;
  /// 0 means no limit.
  Index max_steps = 0;

  bool use_attention = true;
  bool use_dgsa_gates = true;
  bool use_slf = true;
  int attention_passes = 1;
  SlfLevels slf_levels = SlfLevels::both;

  Index base_channels = 8;
  std::vector<Index> stage_channels;
  std::vector<Index> aspp_rates{1, 2, 4};
  Index aspp_out_channels = 0;
  Index decoder_channels = 0;

  ModelConfig model_config() const;
  void apply_preset(Preset p);
  void validate() const;

  /// Sets one field from its text form; throws ConfigError on unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  static std::vector<std::string> keys();
  std::string get(const std::string& key) const;

  std::string to_text() const;
  static TrainConfig from_text(const std::string& text);
  static TrainConfig load(const std::filesystem::path& path);
};

struct AdamWOptions {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-4;
};

/// Decoupled weight decay followed by the bias-corrected Adam update.
template <typename Scalar>
class AdamW {
 public:
  AdamW(ParameterStore<Scalar>& params, AdamWOptions opt);

  /// One update from the gradients currently stored on the parameters.
  /// Throws NumericalError naming the first parameter with a non-finite gradient.
  void step();

  std::int64_t step_count() const { return step_; }
  void set_step_count(std::int64_t s) { step_ = s; }
  const AdamWOptions& options() const { return opt_; }
  std::vector<Tensor<Scalar>>& first_moments() { return m_; }
  std::vector<Tensor<Scalar>>& second_moments() { return v_; }
  const std::vector<Tensor<Scalar>>& first_moments() const { return m_; }
  const std::vector<Tensor<Scalar>>& second_moments() const { return v_; }

 private:
  ParameterStore<Scalar>* params_;
  AdamWOptions opt_;
  std::int64_t step_ = 0;
  std::vector<Tensor<Scalar>> m_;
  std::vector<Tensor<Scalar>> v_;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  Shape shape;
  std::vector<float> values;
  friend bool operator==(const CheckpointTensor&, const CheckpointTensor&) = default;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::int64_t step = 0;
  std::string config_text;
  /// Model parameters under their own names, optimizer moments under
  /// "adam.m/<name>" and "adam.v/<name>".
  std::vector<std::pair<std::string, CheckpointTensor>> tensors;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint make_checkpoint(const TrainConfig& cfg, const MirrorNet<float>& model, const AdamW<float>* opt);
/// Copies parameters (and moments when opt is given) into place. Missing,
/// duplicate or mis-shaped tensors raise CheckpointError.
void restore_checkpoint(const Checkpoint& ckpt, MirrorNet<float>& model, AdamW<float>* opt);

struct TrainResult {
  std::int64_t steps = 0;
  std::vector<double> losses;  // one per optimizer step
  double final_loss = 0.0;
};

/// Runs the full training loop. Writes out_dir/loss.log, out_dir/epoch.ckpt
/// after every epoch and out_dir/final.ckpt at the end.
TrainResult train(const TrainConfig& cfg, const std::filesystem::path& data_root, const std::filesystem::path& out_dir,
                  std::ostream* progress = nullptr);

struct EvalOptions {
  bool score_all_frames = false;
  bool write_masks = true;
  double threshold = 0.5;
  double beta_sq = 0.3;
  MetricMode mode = MetricMode::pooled;
  std::uint64_t seed = 0;
  /// Restrict to one video id; empty means all.
  std::string video;
};

/// MF_THREADS when set and positive, else the hardware concurrency.
unsigned worker_threads();

/// Scores P_t (or all three heads) over every valid triple of every video.
/// Writes out_dir/<video>/NNNNNN.png, metrics.txt and metrics.kv when
/// out_dir is non-empty.
MetricsReport evaluate(const MirrorNet<float>& model, Index image_size, const std::filesystem::path& data_root,
                       const std::filesystem::path& out_dir, const EvalOptions& opt = {});

MetricsReport evaluate_checkpoint(const std::filesystem::path& checkpoint, const std::filesystem::path& data_root,
                                  const std::filesystem::path& out_dir, const EvalOptions& opt = {});

/// Writes one binary mask per frame of one video.
void predict(const std::filesystem::path& checkpoint, const std::filesystem::path& data_root, const std::string& video,
             const std::filesystem::path& out_dir, double threshold = 0.5);

/// Rebuilds the model stored in a checkpoint.
MirrorNet<float> model_from_checkpoint(const Checkpoint& ckpt, TrainConfig* cfg_out = nullptr);

}  // namespace mf
