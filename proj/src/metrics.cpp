#include "mf/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace mf {

std::string to_string(MetricMode m) { return m == MetricMode::pooled ? "pooled" : "per_frame"; }

MetricMode parse_metric_mode(const std::string& s) {
  if (s == "pooled") return MetricMode::pooled;
  if (s == "per_frame") return MetricMode::per_frame;
  throw ConfigError("unknown metric mode '" + s + "' (expected pooled or per_frame)");
}

std::string MetricsReport::summary() const {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.4f / %.4f / %.4f / %.4f", iou, f_beta, accuracy, mae);
  return buf;
}

std::string MetricsReport::table() const {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "%-10s %s\n%-10s %.4f\n%-10s %.4f\n%-10s %.4f\n%-10s %.4f\n%-10s %lld\n\nIoU / F_beta / Acc / MAE: %s\n",
                "metric", "value", "IoU", iou, "F_beta", f_beta, "Accuracy", accuracy, "MAE", mae, "frames",
                static_cast<long long>(frame_count), summary().c_str());
  return buf;
}

std::string MetricsReport::key_values() const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "iou=%.17g\nf_beta=%.17g\naccuracy=%.17g\nmae=%.17g\nframes=%lld\n", iou, f_beta,
                accuracy, mae, static_cast<long long>(frame_count));
  return buf;
}

MetricsReport MetricsReport::parse_key_values(const std::string& text) {
  MetricsReport r;
  std::istringstream in(text);
  std::string line;
  int seen = 0;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "iou") r.iou = std::stod(value);
    else if (key == "f_beta") r.f_beta = std::stod(value);
    else if (key == "accuracy") r.accuracy = std::stod(value);
    else if (key == "mae") r.mae = std::stod(value);
    else if (key == "frames") r.frame_count = std::stoll(value);
    else throw ConfigError("unknown metrics key '" + key + "'");
    ++seen;
  }
  if (seen != 5) throw ConfigError("metrics file must contain exactly 5 keys");
  return r;
}

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
  tn += o.tn;
  abs_error += o.abs_error;
  return *this;
}

ConfusionCounts count_frame(std::span<const double> prob, std::span<const double> gt, double threshold) {
  if (prob.size() != gt.size()) throw ShapeError("metrics: prediction and mask dims differ");
  ConfusionCounts c;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    const bool pred = prob[i] > threshold;
    const bool truth = gt[i] > 0.5;
    if (pred && truth) ++c.tp;
    else if (pred) ++c.fp;
    else if (truth) ++c.fn;
    else ++c.tn;
    c.abs_error += std::abs(prob[i] - gt[i]);
  }
  return c;
}

MetricsReport metrics_from_counts(const ConfusionCounts& c, double beta_sq) {
  MetricsReport r;
  const auto tp = static_cast<double>(c.tp);
  const auto fp = static_cast<double>(c.fp);
  const auto fn = static_cast<double>(c.fn);
  const auto total = static_cast<double>(c.pixels());
  const double uni = tp + fp + fn;
  r.iou = uni == 0.0 ? 1.0 : tp / uni;
  // An empty prediction of an empty mask is perfect on both axes.
  const double precision = (tp + fp) == 0.0 ? (c.fn == 0 ? 1.0 : 0.0) : tp / (tp + fp);
  const double recall = (tp + fn) == 0.0 ? (c.fp == 0 ? 1.0 : 0.0) : tp / (tp + fn);
  const double denom = beta_sq * precision + recall;
  r.f_beta = denom == 0.0 ? 0.0 : (1.0 + beta_sq) * precision * recall / denom;
  r.accuracy = total == 0.0 ? 1.0 : (tp + static_cast<double>(c.tn)) / total;
  r.mae = total == 0.0 ? 0.0 : c.abs_error / total;
  return r;
}

void MetricsAccumulator::merge(const MetricsAccumulator& other) {
  frames_.insert(frames_.end(), other.frames_.begin(), other.frames_.end());
}

MetricsReport MetricsAccumulator::report(MetricMode mode) const {
  if (frames_.empty()) throw ContractError("metrics: no frames accumulated");
  MetricsReport r;
  if (mode == MetricMode::pooled) {
    ConfusionCounts total;
    for (const auto& f : frames_) total += f;
    r = metrics_from_counts(total, beta_sq_);
  } else {
    for (const auto& f : frames_) {
      const MetricsReport one = metrics_from_counts(f, beta_sq_);
      r.iou += one.iou;
      r.f_beta += one.f_beta;
      r.accuracy += one.accuracy;
      r.mae += one.mae;
    }
    const auto n = static_cast<double>(frames_.size());
    r.iou /= n;
    r.f_beta /= n;
    r.accuracy /= n;
    r.mae /= n;
  }
  r.frame_count = static_cast<std::int64_t>(frames_.size());
  return r;
}

std::vector<double> ssim_gaussian_taps() {
  constexpr int size = 11;
  constexpr double sigma = 1.5;
  std::vector<double> taps(size);
  double total = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - size / 2;
    taps[static_cast<std::size_t>(i)] = std::exp(-(d * d) / (2.0 * sigma * sigma));
    total += taps[static_cast<std::size_t>(i)];
  }
  for (auto& t : taps) t /= total;
  return taps;
}

namespace {

// Valid-mode separable filtering with the SSIM window.
Eigen::MatrixXd filter_valid(const Eigen::MatrixXd& x, const std::vector<double>& taps) {
  const Eigen::Index k = static_cast<Eigen::Index>(taps.size());
  const Eigen::Index rows = x.rows() - k + 1;
  const Eigen::Index cols = x.cols() - k + 1;
  Eigen::MatrixXd horizontal = Eigen::MatrixXd::Zero(x.rows(), cols);
  for (Eigen::Index j = 0; j < k; ++j) horizontal += taps[static_cast<std::size_t>(j)] * x.middleCols(j, cols);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(rows, cols);
  for (Eigen::Index i = 0; i < k; ++i) out += taps[static_cast<std::size_t>(i)] * horizontal.middleRows(i, rows);
  return out;
}

}  // namespace

double ssim(const GrayImage& a, const GrayImage& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("ssim: image dims differ");
  if (a.size() == 0) throw ShapeError("ssim: empty image");
  const double c1 = (0.01 * kSsimDynamicRange) * (0.01 * kSsimDynamicRange);
  const double c2 = (0.03 * kSsimDynamicRange) * (0.03 * kSsimDynamicRange);
  const auto taps = ssim_gaussian_taps();
  const auto window = static_cast<Eigen::Index>(taps.size());

  if (a.rows() < window || a.cols() < window) {
    const double mx = a.mean();
    const double my = b.mean();
    const double vx = (a.array() - mx).square().mean();
    const double vy = (b.array() - my).square().mean();
    const double cov = ((a.array() - mx) * (b.array() - my)).mean();
    return ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
  }

  const Eigen::ArrayXXd mx = filter_valid(a, taps).array();
  const Eigen::ArrayXXd my = filter_valid(b, taps).array();
  const Eigen::ArrayXXd sxx = filter_valid(a.cwiseProduct(a), taps).array() - mx * mx;
  const Eigen::ArrayXXd syy = filter_valid(b.cwiseProduct(b), taps).array() - my * my;
  const Eigen::ArrayXXd sxy = filter_valid(a.cwiseProduct(b), taps).array() - mx * my;
  const Eigen::ArrayXXd map = ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
  return map.mean();
}

std::string to_string(SimilarityMode m) { return m == SimilarityMode::pairwise_mean ? "pairwise" : "max"; }

SimilarityMode parse_similarity_mode(const std::string& s) {
  if (s == "pairwise") return SimilarityMode::pairwise_mean;
  if (s == "max") return SimilarityMode::per_video_max;
  throw ConfigError("unknown similarity mode '" + s + "' (expected pairwise or max)");
}

double dataset_similarity(const std::vector<GrayImage>& first_frames, SimilarityMode mode) {
  const std::size_t n = first_frames.size();
  if (n < 2) throw ContractError("dataset_similarity needs at least 2 videos");
  std::vector<std::vector<double>> score(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) score[i][j] = score[j][i] = ssim(first_frames[i], first_frames[j]);
  }
  double total = 0.0;
  if (mode == SimilarityMode::pairwise_mean) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) total += score[i][j];
    }
    return 100.0 * total / (static_cast<double>(n * (n - 1)) / 2.0);
  }
  for (std::size_t i = 0; i < n; ++i) {
    double best = -1.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) best = std::max(best, score[i][j]);
    }
    total += best;
  }
  return 100.0 * total / static_cast<double>(n);
}

}  // namespace mf
