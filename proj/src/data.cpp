#include "mf/data.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <iostream>

#include "mf/nn.hpp"

namespace mf {

Image read_png(const fs::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_file(&png, path.c_str()) == 0) {
    throw IoError("cannot read PNG " + path.string() + ": " + png.message);
  }
  const bool color = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
  png.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Image img(static_cast<int>(png.width), static_cast<int>(png.height), color ? 3 : 1);
  if (png_image_finish_read(&png, nullptr, img.pixels.data(), 0, nullptr) == 0) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw IoError("cannot decode PNG " + path.string() + ": " + msg);
  }
  return img;
}

void write_png(const fs::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw IoError("write_png: unsupported channel count");
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (png_image_write_to_file(&png, path.c_str(), 0, img.pixels.data(), 0, nullptr) == 0) {
    throw IoError("cannot write PNG " + path.string() + ": " + png.message);
  }
}

namespace {

std::vector<fs::path> sorted_pngs(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

std::vector<VideoRecord> scan_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw DatasetError("dataset root " + root.string() + " is not a directory");
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());

  std::vector<VideoRecord> videos;
  for (const auto& dir : dirs) {
    VideoRecord v;
    v.id = dir.filename().string();
    v.frame_paths = sorted_pngs(dir / "frames");
    for (const auto& f : v.frame_paths) {
      fs::path m = dir / "masks" / f.filename();
      if (!fs::is_regular_file(m)) throw DatasetError("missing mask " + m.string() + " for frame " + f.string());
      v.mask_paths.push_back(std::move(m));
    }
    v.length = static_cast<Index>(v.frame_paths.size());
    if (v.length < 3) {
      std::cerr << "warning: skipping video " << v.id << " with " << v.length << " frame(s)\n";
      continue;
    }
    videos.push_back(std::move(v));
  }
  return videos;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t d) {
  // splitmix64 steps folded over the inputs
  auto step = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  std::uint64_t h = step(a);
  h = step(h ^ b);
  h = step(h ^ c);
  return step(h ^ d);
}

Index sample_distant_index(Index length, Index t, std::uint64_t seed) {
  if (length < 3) throw ContractError("sample_triple needs a video of at least 3 frames");
  if (t < 1 || t >= length) throw ContractError("sample_triple: t out of range");
  const auto legal = static_cast<std::uint64_t>(length - 2);
  ParamRng rng(seed);
  // rejection keeps the draw exactly uniform
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % legal;
  std::uint64_t r = rng.next();
  while (r >= limit) r = rng.next();
  auto k = static_cast<Index>(r % legal);
  if (k >= t - 1) k += 2;
  return k;
}

void check_target_size(Index target) {
  if (target <= 0 || target % 32 != 0) {
    throw ConfigError("image size " + std::to_string(target) + " is not a positive multiple of 32");
  }
}

template <typename Scalar>
Tensor<Scalar> image_to_tensor(const Image& img) {
  const Index h = img.height;
  const Index w = img.width;
  Tensor<Scalar> t({3, h, w});
  auto d = t.mutable_data();
  for (Index c = 0; c < 3; ++c) {
    const int src_c = img.channels == 1 ? 0 : static_cast<int>(c);
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        d[static_cast<std::size_t>((c * h + y) * w + x)] =
            static_cast<Scalar>(img.at(static_cast<int>(x), static_cast<int>(y), src_c)) / Scalar(255);
      }
    }
  }
  return t;
}

template <typename Scalar>
GroundTruthMask<Scalar> mask_to_tensor(const Image& img) {
  const Index h = img.height;
  const Index w = img.width;
  Tensor<Scalar> t({1, h, w});
  auto d = t.mutable_data();
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      d[static_cast<std::size_t>(y * w + x)] =
          img.at(static_cast<int>(x), static_cast<int>(y), 0) >= 128 ? Scalar(1) : Scalar(0);
    }
  }
  return GroundTruthMask<Scalar>(std::move(t));
}

template <typename Scalar>
Tensor<Scalar> resize_image(const Tensor<Scalar>& img, Index target) {
  check_target_size(target);
  if (img.dim(1) == target && img.dim(2) == target) return img.detach();
  return upsample_bilinear(img.detach(), target, target);
}

template <typename Scalar>
GroundTruthMask<Scalar> resize_mask(const GroundTruthMask<Scalar>& mask, Index target) {
  check_target_size(target);
  const Index h = mask.shape()[1];
  const Index w = mask.shape()[2];
  Tensor<Scalar> out({1, target, target});
  auto d = out.mutable_data();
  const auto src = mask.tensor().data();
  for (Index y = 0; y < target; ++y) {
    const Index sy = std::min(h - 1, (2 * y + 1) * h / (2 * target));
    for (Index x = 0; x < target; ++x) {
      const Index sx = std::min(w - 1, (2 * x + 1) * w / (2 * target));
      d[static_cast<std::size_t>(y * target + x)] =
          src[static_cast<std::size_t>(sy * w + sx)] >= Scalar(0.5) ? Scalar(1) : Scalar(0);
    }
  }
  return GroundTruthMask<Scalar>(std::move(out));
}

template <typename Scalar>
const Tensor<Scalar>& FrameCache<Scalar>::frame(const VideoRecord& v, Index i) {
  const std::string key = v.frame_paths.at(static_cast<std::size_t>(i)).string();
  auto it = frames_.find(key);
  if (it == frames_.end()) {
    it = frames_.emplace(key, resize_image(image_to_tensor<Scalar>(read_png(key)), size_)).first;
  }
  return it->second;
}

template <typename Scalar>
const GroundTruthMask<Scalar>& FrameCache<Scalar>::mask(const VideoRecord& v, Index i) {
  const std::string key = v.mask_paths.at(static_cast<std::size_t>(i)).string();
  auto it = masks_.find(key);
  if (it == masks_.end()) {
    it = masks_.emplace(key, resize_mask(mask_to_tensor<Scalar>(read_png(key)), size_)).first;
  }
  return it->second;
}

template <typename Scalar>
FrameTriple<Scalar> sample_triple(const VideoRecord& video, Index t, std::uint64_t seed, FrameCache<Scalar>& cache) {
  const Index n = sample_distant_index(video.length, t, seed);
  FrameTriple<Scalar> tr;
  tr.i_prev = cache.frame(video, t - 1);
  tr.i_t = cache.frame(video, t);
  tr.i_n = cache.frame(video, n);
  tr.g_prev = cache.mask(video, t - 1);
  tr.g_t = cache.mask(video, t);
  tr.g_n = cache.mask(video, n);
  tr.indices = {t - 1, t, n};
  return tr;
}

GrayImage to_gray(const Image& img) {
  GrayImage g(img.height, img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (img.channels == 1) {
        g(y, x) = img.at(x, y, 0);
      } else {
        g(y, x) = 0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) + 0.114 * img.at(x, y, 2);
      }
    }
  }
  return g;
}

// ---- synthetic videos ----

namespace {

using Rgb = std::array<double, 3>;

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

struct Wave {
  double fx, fy, phase, amp;
};

struct Texture {
  Rgb base;
  std::array<Rgb, 3> tint;
  std::array<Wave, 3> waves;

  Rgb at(double x, double y) const {
    Rgb c = base;
    for (std::size_t i = 0; i < waves.size(); ++i) {
      const Wave& w = waves[i];
      const double s = w.amp * std::sin(w.fx * x + w.fy * y + w.phase);
      for (int k = 0; k < 3; ++k) c[static_cast<std::size_t>(k)] += s * tint[i][static_cast<std::size_t>(k)];
    }
    return c;
  }
};

Texture make_texture(ParamRng& rng, Rgb base, double freq, double amp) {
  Texture t;
  t.base = base;
  for (std::size_t i = 0; i < 3; ++i) {
    t.waves[i] = {rng.uniform(-freq, freq), rng.uniform(-freq, freq), rng.uniform(0.0, 6.283185307179586), amp};
    for (auto& v : t.tint[i]) v = rng.uniform(0.4, 1.0);
  }
  return t;
}

struct Rect {
  int x, y, w, h;
  bool contains(int px, int py) const { return px >= x && px < x + w && py >= y && py < y + h; }
  bool near(const Rect& o, int gap) const {
    return x - gap < o.x + o.w && o.x - gap < x + w && y - gap < o.y + o.h && o.y - gap < y + h;
  }
};

int grid_pick(ParamRng& rng, int lo, int hi) {
  // multiple of 8 in [lo, hi]
  const int n = (hi - lo) / 8 + 1;
  return lo + 8 * static_cast<int>(rng.next() % static_cast<std::uint64_t>(std::max(1, n)));
}

Rect place_rect(ParamRng& rng, int size, int lo_side, int hi_side) {
  const int w = grid_pick(rng, lo_side, hi_side);
  const int h = grid_pick(rng, lo_side, hi_side);
  const int x = grid_pick(rng, 0, size - w);
  const int y = grid_pick(rng, 0, size - h);
  return {x, y, w, h};
}

void put(Image& img, int x, int y, const Rgb& c) {
  for (int k = 0; k < 3; ++k) img.at(x, y, k) = to_byte(c[static_cast<std::size_t>(k)]);
}

}  // namespace

SynthVideo render_synth_video(std::uint64_t seed, int frames, int size) {
  check_target_size(size);
  if (frames < 3) throw ContractError("synthetic videos need at least 3 frames");
  ParamRng rng(seed);

  const int big = std::max(8, (3 * size / 8) / 8 * 8);
  const int small = std::max(8, (size / 4) / 8 * 8);
  const Rect mirror = place_rect(rng, size, big, std::max(big, size / 2));
  Rect picture = place_rect(rng, size, small, std::max(small, size / 2 - 8));
  for (int tries = 0; picture.near(mirror, 6) && tries < 1000; ++tries) {
    picture = place_rect(rng, size, small, std::max(small, size / 2 - 8));
  }
  if (picture.near(mirror, 6)) picture = {0, 0, 0, 0};

  const Texture room = make_texture(rng, {rng.uniform(120, 170), rng.uniform(100, 140), rng.uniform(70, 110)}, 0.25, 22);
  const Texture reflected =
      make_texture(rng, {rng.uniform(60, 100), rng.uniform(100, 140), rng.uniform(150, 200)}, 0.35, 28);
  const Texture painting = make_texture(rng, {rng.uniform(60, 200), rng.uniform(60, 200), rng.uniform(60, 200)}, 1.2, 70);

  const int sprite = std::max(4, size / 10);
  const Rgb sprite_a = {rng.uniform(200, 255), rng.uniform(0, 80), rng.uniform(0, 80)};
  const Rgb sprite_b = {rng.uniform(200, 255), rng.uniform(180, 255), rng.uniform(0, 60)};
  const int sprite_y = std::clamp(mirror.y + static_cast<int>(rng.next() % static_cast<std::uint64_t>(std::max(1, mirror.h - sprite + 1))),
                                  0, size - sprite);
  const int span = size - sprite;
  const int speed = 2 + static_cast<int>(rng.next() % 3);
  int pos = static_cast<int>(rng.next() % static_cast<std::uint64_t>(span + 1));
  int dir = (rng.next() & 1U) != 0 ? 1 : -1;

  SynthVideo v;
  v.mirror_x = mirror.x;
  v.mirror_y = mirror.y;
  v.mirror_w = mirror.w;
  v.mirror_h = mirror.h;

  Image mask(size, size, 1, 0);
  for (int y = mirror.y; y < mirror.y + mirror.h; ++y) {
    for (int x = mirror.x; x < mirror.x + mirror.w; ++x) mask.at(x, y, 0) = 255;
  }

  auto sprite_color = [&](int lx, int ly) { return ((lx / 2 + ly / 2) % 2 == 0) ? sprite_a : sprite_b; };

  for (int k = 0; k < frames; ++k) {
    Image refl(size, size, 3);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) put(refl, x, y, reflected.at(x, y));
    }
    for (int y = 0; y < sprite; ++y) {
      for (int x = 0; x < sprite; ++x) put(refl, pos + x, sprite_y + y, sprite_color(x, y));
    }

    Image img(size, size, 3);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) put(img, x, y, room.at(x, y));
    }
    for (int y = 0; y < sprite; ++y) {
      for (int x = 0; x < sprite; ++x) put(img, pos + x, sprite_y + y, sprite_color(x, y));
    }
    for (const Rect& r : {mirror, picture}) {
      if (r.w == 0) continue;
      for (int y = r.y - 2; y < r.y + r.h + 2; ++y) {
        for (int x = r.x - 2; x < r.x + r.w + 2; ++x) {
          if (x >= 0 && y >= 0 && x < size && y < size && !r.contains(x, y)) put(img, x, y, {28, 26, 24});
        }
      }
    }
    for (int y = picture.y; y < picture.y + picture.h; ++y) {
      for (int x = picture.x; x < picture.x + picture.w; ++x) put(img, x, y, painting.at(x, y));
    }
    for (int y = mirror.y; y < mirror.y + mirror.h; ++y) {
      for (int x = mirror.x; x < mirror.x + mirror.w; ++x) {
        const int src = 2 * mirror.x + mirror.w - 1 - x;
        for (int c = 0; c < 3; ++c) img.at(x, y, c) = refl.at(src, y, c);
      }
    }

    v.frames.push_back(std::move(img));
    v.masks.push_back(mask);
    v.reflections.push_back(std::move(refl));

    pos += dir * speed;
    if (pos < 0) {
      pos = -pos;
      dir = 1;
    } else if (pos > span) {
      pos = 2 * span - pos;
      dir = -1;
    }
  }
  return v;
}

void synth_generate(std::uint64_t seed, int n_videos, int frames_per_video, int size, const fs::path& out) {
  check_target_size(size);
  if (frames_per_video < 3) throw ConfigError("--frames must be at least 3");
  if (n_videos < 1) throw ConfigError("--videos must be at least 1");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
  for (int i = 0; i < n_videos; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "video_%03d", i);
    const fs::path dir = out / id;
    fs::create_directories(dir / "frames", ec);
    if (!ec) fs::create_directories(dir / "masks", ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    const SynthVideo v = render_synth_video(mix_seed(seed, static_cast<std::uint64_t>(i)), frames_per_video, size);
    for (int k = 0; k < frames_per_video; ++k) {
      char name[32];
      std::snprintf(name, sizeof name, "%06d.png", k);
      write_png(dir / "frames" / name, v.frames[static_cast<std::size_t>(k)]);
      write_png(dir / "masks" / name, v.masks[static_cast<std::size_t>(k)]);
    }
  }
}

#define MF_INSTANTIATE_DATA(S)                                                                      \
  template Tensor<S> image_to_tensor<S>(const Image&);                                              \
  template GroundTruthMask<S> mask_to_tensor<S>(const Image&);                                      \
  template Tensor<S> resize_image(const Tensor<S>&, Index);                                         \
  template GroundTruthMask<S> resize_mask(const GroundTruthMask<S>&, Index);                        \
  template class FrameCache<S>;                                                                     \
  template FrameTriple<S> sample_triple(const VideoRecord&, Index, std::uint64_t, FrameCache<S>&);

MF_INSTANTIATE_DATA(float)
MF_INSTANTIATE_DATA(double)

}  // namespace mf
