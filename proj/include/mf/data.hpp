#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mf/metrics.hpp"
#include "mf/model.hpp"

namespace mf {

namespace fs = std::filesystem;

/// 8-bit interleaved image, 1 (gray) or 3 (RGB) channels.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, int c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, fill) {}

  std::uint8_t& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  friend bool operator==(const Image&, const Image&) = default;
};

/// Reads any PNG as 8-bit gray or RGB (alpha dropped, palettes expanded).
Image read_png(const fs::path& path);
void write_png(const fs::path& path, const Image& img);

struct VideoRecord {
  std::string id;
  std::vector<fs::path> frame_paths;
  std::vector<fs::path> mask_paths;
  Index length = 0;
};

/// root/<id>/frames/*.png paired with root/<id>/masks/*.png, both sorted by
/// name. Videos shorter than 3 frames are skipped with a warning on stderr.
std::vector<VideoRecord> scan_dataset(const fs::path& root);

/// Uniform draw from {0..length-1} \ {t-1, t}.
Index sample_distant_index(Index length, Index t, std::uint64_t seed);

/// Stable 64-bit mixing of several integers into one seed.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0, std::uint64_t d = 0);

/// [3,H,W] in [0,1]; gray inputs are replicated to three channels.
template <typename Scalar>
Tensor<Scalar> image_to_tensor(const Image& img);

/// [1,H,W] binary, mirror where the (first channel) value is >= 128.
template <typename Scalar>
GroundTruthMask<Scalar> mask_to_tensor(const Image& img);

/// Bilinear resize of a [C,H,W] image tensor to target x target.
template <typename Scalar>
Tensor<Scalar> resize_image(const Tensor<Scalar>& img, Index target);

/// Nearest-neighbour resize, re-binarized.
template <typename Scalar>
GroundTruthMask<Scalar> resize_mask(const GroundTruthMask<Scalar>& mask, Index target);

/// Throws ConfigError unless target is a positive multiple of 32.
void check_target_size(Index target);

/// Loads and resizes frames on first use. Not thread-safe.
template <typename Scalar>
class FrameCache {
 public:
  explicit FrameCache(Index image_size) : size_(image_size) { check_target_size(image_size); }

  const Tensor<Scalar>& frame(const VideoRecord& v, Index i);
  const GroundTruthMask<Scalar>& mask(const VideoRecord& v, Index i);
  Index image_size() const { return size_; }

 private:
  Index size_;
  std::map<std::string, Tensor<Scalar>> frames_;
  std::map<std::string, GroundTruthMask<Scalar>> masks_;
};

/// Frames t-1, t and a random distant n, deterministic given seed.
template <typename Scalar>
FrameTriple<Scalar> sample_triple(const VideoRecord& video, Index t, std::uint64_t seed, FrameCache<Scalar>& cache);

/// Luminance 0.299 R + 0.587 G + 0.114 B on the 0..255 scale.
GrayImage to_gray(const Image& img);

struct SynthVideo {
  std::vector<Image> frames;
  std::vector<Image> masks;
  // Mirror rectangle and, per frame, the reflection layer whose flipped
  // patch fills the mirror.
  int mirror_x = 0, mirror_y = 0, mirror_w = 0, mirror_h = 0;
  std::vector<Image> reflections;
};

SynthVideo render_synth_video(std::uint64_t seed, int frames, int size);

/// Writes n_videos synthetic videos in the scan_dataset layout.
void synth_generate(std::uint64_t seed, int n_videos, int frames_per_video, int size, const fs::path& out);

}  // namespace mf
