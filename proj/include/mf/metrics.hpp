#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mf/mask.hpp"

namespace mf {

enum class MetricMode {
  pooled,     // confusion counts summed over every pixel of every frame
  per_frame,  // metrics computed per frame, then averaged
};

std::string to_string(MetricMode m);
MetricMode parse_metric_mode(const std::string& s);

struct MetricsReport {
  double iou = 0.0;
  double f_beta = 0.0;
  double accuracy = 0.0;
  double mae = 0.0;
  std::int64_t frame_count = 0;

  /// "IoU / F_beta / Acc / MAE" with four decimals, e.g. "0.6343 / 0.8104 / 0.9004 / 0.0995".
  std::string summary() const;
  /// Flat text table.
  std::string table() const;
  /// Lines "key=value" with keys iou, f_beta, accuracy, mae, frames.
  std::string key_values() const;
  static MetricsReport parse_key_values(const std::string& text);

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;
  double abs_error = 0.0;  // sum |p - g| over unthresholded p

  std::int64_t pixels() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o);
};

/// Counts one prediction/mask pair; positive when p > threshold.
ConfusionCounts count_frame(std::span<const double> prob, std::span<const double> gt, double threshold);

/// Accumulates frames in insertion order. Merging accumulators in a fixed
/// order gives a deterministic report.
class MetricsAccumulator {
 public:
  MetricsAccumulator(double threshold = 0.5, double beta_sq = 0.3) : threshold_(threshold), beta_sq_(beta_sq) {}

  template <typename Scalar>
  void add(const Tensor<Scalar>& prob, const GroundTruthMask<Scalar>& gt) {
    if (prob.shape() != gt.shape()) throw ShapeError("metrics: prediction and mask dims differ");
    std::vector<double> p(prob.data().begin(), prob.data().end());
    std::vector<double> g(gt.tensor().data().begin(), gt.tensor().data().end());
    frames_.push_back(count_frame(p, g, threshold_));
  }
  void add_counts(const ConfusionCounts& c) { frames_.push_back(c); }
  void merge(const MetricsAccumulator& other);

  std::size_t frame_count() const { return frames_.size(); }
  MetricsReport report(MetricMode mode = MetricMode::pooled) const;

 private:
  double threshold_;
  double beta_sq_;
  std::vector<ConfusionCounts> frames_;
};

/// IoU, F_beta, accuracy and MAE from one set of counts. Empty union gives IoU 1.
MetricsReport metrics_from_counts(const ConfusionCounts& c, double beta_sq);

template <typename Scalar>
MetricsReport compute_metrics(const std::vector<Tensor<Scalar>>& preds, const std::vector<GroundTruthMask<Scalar>>& gts,
                              double threshold = 0.5, double beta_sq = 0.3, MetricMode mode = MetricMode::pooled) {
  if (preds.empty()) throw ContractError("compute_metrics: empty prediction list");
  if (preds.size() != gts.size()) throw ContractError("compute_metrics: prediction and mask lists differ in length");
  MetricsAccumulator acc(threshold, beta_sq);
  for (std::size_t i = 0; i < preds.size(); ++i) acc.add(preds[i], gts[i]);
  return acc.report(mode);
}

/// Grayscale image, values in [0, 255], rows x cols.
using GrayImage = Eigen::MatrixXd;

inline constexpr double kSsimDynamicRange = 255.0;

/// Mean SSIM over all valid 11x11 Gaussian (sigma 1.5) windows. Images smaller
/// than the window fall back to one global-statistics evaluation.
double ssim(const GrayImage& a, const GrayImage& b);

/// Normalized 11-tap Gaussian, sigma 1.5.
std::vector<double> ssim_gaussian_taps();

enum class SimilarityMode {
  pairwise_mean,    // mean SSIM over unordered pairs
  per_video_max,    // mean over videos of the best match among the others
};

std::string to_string(SimilarityMode m);
SimilarityMode parse_similarity_mode(const std::string& s);

/// Dataset similarity in percent from the first frame of every video.
double dataset_similarity(const std::vector<GrayImage>& first_frames,
                          SimilarityMode mode = SimilarityMode::pairwise_mean);

}  // namespace mf
