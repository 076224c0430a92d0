#include "mf/train.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

namespace mf {

// ---- config ----

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("bad boolean for " + key + ": '" + v + "'");
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("bad number for " + key + ": '" + v + "'");
  }
}

long long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long i = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ConfigError("bad integer for " + key + ": '" + v + "'");
  }
}

std::vector<Index> parse_list(const std::string& key, const std::string& v) {
  std::vector<Index> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_int(key, item));
  }
  return out;
}

std::string join(const std::vector<Index>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string fmt_double(double d) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", d);
  return buf;
}

}  // namespace

ModelConfig TrainConfig::model_config() const {
  ModelConfig m;
  m.encoder.base_channels = base_channels;
  m.encoder.stage_channels = stage_channels;
  m.encoder.aspp_rates = aspp_rates;
  m.encoder.aspp_out_channels = aspp_out_channels;
  m.decoder_channels = decoder_channels;
  m.use_attention = use_attention;
  m.use_dgsa_gates = use_dgsa_gates;
  m.use_slf = use_slf;
  m.attention_passes = attention_passes;
  m.slf_levels = slf_levels;
  return m;
}

void TrainConfig::apply_preset(Preset p) {
  ModelConfig m;
  m.apply_preset(p);
  use_attention = m.use_attention;
  use_dgsa_gates = m.use_dgsa_gates;
  use_slf = m.use_slf;
}

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be finite and non-negative");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (max_steps < 0) throw ConfigError("max_steps must be non-negative");
  check_target_size(image_size);
  model_config().validate();
}

std::vector<std::string> TrainConfig::keys() {
  return {"lr",           "batch_size",      "epochs",     "weight_decay",   "image_size",       "seed",
          "max_steps",    "use_attention",   "use_dgsa_gates", "use_slf",    "attention_passes", "slf_levels",
          "base_channels", "stage_channels", "aspp_rates", "aspp_out_channels", "decoder_channels"};
}

void TrainConfig::set(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (key == "lr") lr = parse_double(key, v);
  else if (key == "batch_size") batch_size = parse_int(key, v);
  else if (key == "epochs") epochs = parse_int(key, v);
  else if (key == "weight_decay") weight_decay = parse_double(key, v);
  else if (key == "image_size") image_size = parse_int(key, v);
  else if (key == "seed") seed = static_cast<std::uint64_t>(parse_int(key, v));
  else if (key == "max_steps") max_steps = parse_int(key, v);
  else if (key == "use_attention") use_attention = parse_bool(key, v);
  else if (key == "use_dgsa_gates") use_dgsa_gates = parse_bool(key, v);
  else if (key == "use_slf") use_slf = parse_bool(key, v);
  else if (key == "attention_passes") attention_passes = static_cast<int>(parse_int(key, v));
  else if (key == "slf_levels") slf_levels = parse_slf_levels(v);
  else if (key == "base_channels") base_channels = parse_int(key, v);
  else if (key == "stage_channels") stage_channels = parse_list(key, v);
  else if (key == "aspp_rates") aspp_rates = parse_list(key, v);
  else if (key == "aspp_out_channels") aspp_out_channels = parse_int(key, v);
  else if (key == "decoder_channels") decoder_channels = parse_int(key, v);
  else if (key == "preset") apply_preset(parse_preset(v));
  else throw ConfigError("unknown config key '" + key + "'");
}

std::string TrainConfig::get(const std::string& key) const {
  if (key == "lr") return fmt_double(lr);
  if (key == "batch_size") return std::to_string(batch_size);
  if (key == "epochs") return std::to_string(epochs);
  if (key == "weight_decay") return fmt_double(weight_decay);
  if (key == "image_size") return std::to_string(image_size);
  if (key == "seed") return std::to_string(seed);
  if (key == "max_steps") return std::to_string(max_steps);
  if (key == "use_attention") return use_attention ? "true" : "false";
  if (key == "use_dgsa_gates") return use_dgsa_gates ? "true" : "false";
  if (key == "use_slf") return use_slf ? "true" : "false";
  if (key == "attention_passes") return std::to_string(attention_passes);
  if (key == "slf_levels") return to_string(slf_levels);
  if (key == "base_channels") return std::to_string(base_channels);
  if (key == "stage_channels") return join(stage_channels);
  if (key == "aspp_rates") return join(aspp_rates);
  if (key == "aspp_out_channels") return std::to_string(aspp_out_channels);
  if (key == "decoder_channels") return std::to_string(decoder_channels);
  throw ConfigError("unknown config key '" + key + "'");
}

std::string TrainConfig::to_text() const {
  std::string out;
  for (const auto& k : keys()) out += k + " = " + get(k) + "\n";
  return out;
}

TrainConfig TrainConfig::from_text(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return cfg;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

// ---- optimizer ----

template <typename Scalar>
AdamW<Scalar>::AdamW(ParameterStore<Scalar>& params, AdamWOptions opt) : params_(&params), opt_(opt) {
  for (const auto& [name, t] : params.entries()) {
    m_.push_back(Tensor<Scalar>::zeros(t.shape()));
    v_.push_back(Tensor<Scalar>::zeros(t.shape()));
  }
}

template <typename Scalar>
void AdamW<Scalar>::step() {
  auto& entries = params_->entries();
  for (const auto& [name, t] : entries) {
    if (!t.has_grad()) continue;
    for (Scalar g : t.grad()) {
      if (!std::isfinite(g)) throw NumericalError("non-finite gradient in parameter " + name);
    }
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(step_));
  const auto decay = static_cast<Scalar>(1.0 - opt_.lr * opt_.weight_decay);
  for (std::size_t k = 0; k < entries.size(); ++k) {
    Tensor<Scalar>& p = entries[k].second;
    auto pd = p.mutable_data();
    auto md = m_[k].mutable_data();
    auto vd = v_[k].mutable_data();
    const bool has = p.has_grad();
    const auto gd = p.grad();
    for (std::size_t i = 0; i < pd.size(); ++i) {
      const double g = has ? static_cast<double>(gd[i]) : 0.0;
      const double m = opt_.beta1 * md[i] + (1.0 - opt_.beta1) * g;
      const double v = opt_.beta2 * vd[i] + (1.0 - opt_.beta2) * g * g;
      md[i] = static_cast<Scalar>(m);
      vd[i] = static_cast<Scalar>(v);
      const double update = opt_.lr * (m / bc1) / (std::sqrt(v / bc2) + opt_.eps);
      pd[i] = pd[i] * decay - static_cast<Scalar>(update);
    }
  }
}

template class AdamW<float>;
template class AdamW<double>;

// ---- checkpoints ----

namespace {

constexpr char kMagic[8] = {'M', 'F', 'C', 'K', 'P', 'T', '\r', '\n'};

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
  }
  void bytes(const std::string& s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
  const std::vector<char>& data() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(std::vector<char> data, std::string origin) : buf_(std::move(data)), origin_(std::move(origin)) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_++])) << (8 * i);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw CheckpointError("checkpoint " + origin_ + " is truncated");
  }
  std::vector<char> buf_;
  std::size_t pos_ = 0;
  std::string origin_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  Writer w;
  w.bytes(std::string(kMagic, sizeof kMagic));
  w.u32(ckpt.version);
  w.u64(static_cast<std::uint64_t>(ckpt.step));
  w.u32(static_cast<std::uint32_t>(ckpt.config_text.size()));
  w.bytes(ckpt.config_text);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (Index d : t.shape) w.u64(static_cast<std::uint64_t>(d));
    for (float f : t.values) w.f32(f);
  }
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
    if (!out) throw IoError("cannot write checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(data), path.string());
  if (r.bytes(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) {
    throw CheckpointError(path.string() + " is not a checkpoint file");
  }
  Checkpoint c;
  c.version = r.u32();
  if (c.version != kCheckpointVersion) {
    throw CheckpointError("checkpoint " + path.string() + " has format version " + std::to_string(c.version) +
                          ", this build reads version " + std::to_string(kCheckpointVersion));
  }
  c.step = static_cast<std::int64_t>(r.u64());
  c.config_text = r.bytes(r.u32());
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.bytes(r.u32());
    CheckpointTensor t;
    const std::uint32_t rank = r.u32();
    for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(static_cast<Index>(r.u64()));
    const Index n = numel_of(t.shape);
    t.values.resize(static_cast<std::size_t>(n));
    for (auto& f : t.values) f = r.f32();
    c.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (!r.done()) throw CheckpointError("checkpoint " + path.string() + " has trailing bytes");
  return c;
}

Checkpoint make_checkpoint(const TrainConfig& cfg, const MirrorNet<float>& model, const AdamW<float>* opt) {
  Checkpoint c;
  c.step = opt ? opt->step_count() : 0;
  c.config_text = cfg.to_text();
  const auto& entries = model.parameters().entries();
  for (const auto& [name, t] : entries) c.tensors.emplace_back(name, CheckpointTensor{t.shape(), t.values()});
  if (opt) {
    for (std::size_t k = 0; k < entries.size(); ++k) {
      c.tensors.emplace_back("adam.m/" + entries[k].first,
                             CheckpointTensor{opt->first_moments()[k].shape(), opt->first_moments()[k].values()});
      c.tensors.emplace_back("adam.v/" + entries[k].first,
                             CheckpointTensor{opt->second_moments()[k].shape(), opt->second_moments()[k].values()});
    }
  }
  return c;
}

void restore_checkpoint(const Checkpoint& ckpt, MirrorNet<float>& model, AdamW<float>* opt) {
  const std::string where = " (checkpoint format version " + std::to_string(ckpt.version) + ")";
  std::map<std::string, const CheckpointTensor*> by_name;
  for (const auto& [name, t] : ckpt.tensors) {
    if (!by_name.emplace(name, &t).second) throw CheckpointError("duplicate tensor " + name + where);
  }
  auto copy_into = [&](const std::string& name, Tensor<float>& dst) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("checkpoint lacks tensor " + name + where);
    if (it->second->shape != dst.shape()) {
      throw CheckpointError("tensor " + name + " has shape " + shape_to_string(it->second->shape) + ", model expects " +
                            shape_to_string(dst.shape()) + where);
    }
    std::copy(it->second->values.begin(), it->second->values.end(), dst.mutable_data().begin());
  };
  auto& entries = model.parameters().entries();
  for (std::size_t k = 0; k < entries.size(); ++k) copy_into(entries[k].first, entries[k].second);
  if (opt) {
    for (std::size_t k = 0; k < entries.size(); ++k) {
      copy_into("adam.m/" + entries[k].first, opt->first_moments()[k]);
      copy_into("adam.v/" + entries[k].first, opt->second_moments()[k]);
    }
    opt->set_step_count(ckpt.step);
  }
  std::size_t model_tensors = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.rfind("adam.", 0) != 0) ++model_tensors;
  }
  if (model_tensors != entries.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(model_tensors) + " parameter tensors, model has " +
                          std::to_string(entries.size()) + where);
  }
}

MirrorNet<float> model_from_checkpoint(const Checkpoint& ckpt, TrainConfig* cfg_out) {
  const TrainConfig cfg = TrainConfig::from_text(ckpt.config_text);
  cfg.validate();
  MirrorNet<float> model(cfg.model_config(), cfg.seed);
  restore_checkpoint(ckpt, model, nullptr);
  if (cfg_out) *cfg_out = cfg;
  return model;
}

// ---- training ----

TrainResult train(const TrainConfig& cfg, const std::filesystem::path& data_root, const std::filesystem::path& out_dir,
                  std::ostream* progress) {
  cfg.validate();
  const std::vector<VideoRecord> videos = scan_dataset(data_root);
  if (videos.empty()) throw DatasetError("no usable videos under " + data_root.string());
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  MirrorNet<float> model(cfg.model_config(), cfg.seed);
  AdamW<float> opt(model.parameters(), {cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
  FrameCache<float> cache(cfg.image_size);

  std::ofstream log(out_dir / "loss.log", std::ios::trunc);
  if (!log) throw IoError("cannot write " + (out_dir / "loss.log").string());

  std::vector<std::pair<std::size_t, Index>> sweep;
  for (std::size_t v = 0; v < videos.size(); ++v) {
    for (Index t = 1; t < videos[v].length; ++t) sweep.emplace_back(v, t);
  }

  TrainResult result;
  bool stop = false;
  for (Index epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    for (std::size_t start = 0; start < sweep.size() && !stop; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(sweep.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const auto count = static_cast<float>(end - start);
      model.parameters().zero_grad();
      double batch_loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        const auto [v, t] = sweep[i];
        const std::uint64_t seed =
            mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(v), static_cast<std::uint64_t>(t));
        FrameTriple<float> triple;
        try {
          triple = sample_triple(videos[v], t, seed, cache);
        } catch (const std::exception& e) {
          throw DatasetError("loading video " + videos[v].id + " frame " + std::to_string(t) + ": " + e.what());
        }
        Tape<float> tape;
        TapeScope<float> scope(tape);
        const Tensor<float> loss = total_loss(model_forward(triple, model), triple);
        if (!std::isfinite(loss.item())) {
          throw NumericalError("non-finite loss at step " + std::to_string(result.steps + 1));
        }
        batch_loss += static_cast<double>(loss.item());
        tape.backward(mul(loss, 1.0f / count));
      }
      opt.step();
      ++result.steps;
      batch_loss /= static_cast<double>(count);
      result.losses.push_back(batch_loss);
      char line[64];
      std::snprintf(line, sizeof line, "%lld %.17g\n", static_cast<long long>(result.steps), batch_loss);
      log << line;
      log.flush();
      if (progress) *progress << "epoch " << epoch + 1 << " step " << result.steps << " loss " << batch_loss << "\n";
      if (cfg.max_steps > 0 && result.steps >= cfg.max_steps) stop = true;
    }
    save_checkpoint(out_dir / "epoch.ckpt", make_checkpoint(cfg, model, &opt));
  }
  save_checkpoint(out_dir / "final.ckpt", make_checkpoint(cfg, model, &opt));
  result.final_loss = result.losses.empty() ? 0.0 : result.losses.back();
  return result;
}

// ---- evaluation ----

unsigned worker_threads() {
  if (const char* env = std::getenv("MF_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n > 0) return static_cast<unsigned>(n);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

namespace {

Image prob_to_mask(const Tensor<float>& prob, double threshold) {
  const int h = static_cast<int>(prob.dim(1));
  const int w = static_cast<int>(prob.dim(2));
  Image img(w, h, 1);
  const auto d = prob.data();
  for (std::size_t i = 0; i < d.size(); ++i) img.pixels[i] = d[i] > threshold ? 255 : 0;
  return img;
}

std::string frame_name(Index i) {
  char name[32];
  std::snprintf(name, sizeof name, "%06lld.png", static_cast<long long>(i));
  return name;
}

struct VideoEval {
  std::vector<ConfusionCounts> counts;
};

VideoEval run_video(const MirrorNet<float>& model, const VideoRecord& video, std::size_t vindex, Index image_size,
                    const std::filesystem::path& out_dir, const EvalOptions& opt) {
  FrameCache<float> cache(image_size);
  VideoEval res;
  const bool write = opt.write_masks && !out_dir.empty();
  if (write) std::filesystem::create_directories(out_dir / video.id);
  auto score = [&](const Tensor<float>& prob, const GroundTruthMask<float>& gt) {
    std::vector<double> p(prob.data().begin(), prob.data().end());
    std::vector<double> g(gt.tensor().data().begin(), gt.tensor().data().end());
    res.counts.push_back(count_frame(p, g, opt.threshold));
  };
  for (Index t = 1; t < video.length; ++t) {
    const std::uint64_t seed = mix_seed(opt.seed, 0x6576616cULL, static_cast<std::uint64_t>(vindex), static_cast<std::uint64_t>(t));
    const FrameTriple<float> triple = sample_triple(video, t, seed, cache);
    const PredictionSet<float> pred = model_forward(triple, model);
    score(pred.t.prob, triple.g_t);
    if (opt.score_all_frames) {
      score(pred.prev.prob, triple.g_prev);
      score(pred.n.prob, triple.g_n);
    }
    if (write) {
      if (t == 1) write_png(out_dir / video.id / frame_name(0), prob_to_mask(pred.prev.prob, opt.threshold));
      write_png(out_dir / video.id / frame_name(t), prob_to_mask(pred.t.prob, opt.threshold));
    }
  }
  return res;
}

}  // namespace

MetricsReport evaluate(const MirrorNet<float>& model, Index image_size, const std::filesystem::path& data_root,
                       const std::filesystem::path& out_dir, const EvalOptions& opt) {
  std::vector<VideoRecord> videos = scan_dataset(data_root);
  if (!opt.video.empty()) {
    std::erase_if(videos, [&](const VideoRecord& v) { return v.id != opt.video; });
    if (videos.empty()) throw DatasetError("no video named " + opt.video + " under " + data_root.string());
  }
  if (videos.empty()) throw DatasetError("no usable videos under " + data_root.string());
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

  std::vector<VideoEval> per_video(videos.size());
  const unsigned threads = std::min<unsigned>(worker_threads(), static_cast<unsigned>(videos.size()));
  if (threads <= 1) {
    for (std::size_t v = 0; v < videos.size(); ++v) {
      per_video[v] = run_video(model, videos[v], v, image_size, out_dir, opt);
    }
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (unsigned w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t v = w; v < videos.size(); v += threads) {
            per_video[v] = run_video(model, videos[v], v, image_size, out_dir, opt);
          }
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  MetricsAccumulator acc(opt.threshold, opt.beta_sq);
  for (const auto& pv : per_video) {
    for (const auto& c : pv.counts) acc.add_counts(c);
  }
  const MetricsReport report = acc.report(opt.mode);
  if (!out_dir.empty()) {
    std::ofstream(out_dir / "metrics.txt") << report.table();
    std::ofstream(out_dir / "metrics.kv") << report.key_values();
  }
  return report;
}

MetricsReport evaluate_checkpoint(const std::filesystem::path& checkpoint, const std::filesystem::path& data_root,
                                  const std::filesystem::path& out_dir, const EvalOptions& opt) {
  TrainConfig cfg;
  const MirrorNet<float> model = model_from_checkpoint(load_checkpoint(checkpoint), &cfg);
  return evaluate(model, cfg.image_size, data_root, out_dir, opt);
}

void predict(const std::filesystem::path& checkpoint, const std::filesystem::path& data_root, const std::string& video,
             const std::filesystem::path& out_dir, double threshold) {
  EvalOptions opt;
  opt.video = video;
  opt.threshold = threshold;
  TrainConfig cfg;
  const MirrorNet<float> model = model_from_checkpoint(load_checkpoint(checkpoint), &cfg);
  std::vector<VideoRecord> videos = scan_dataset(data_root);
  std::size_t index = videos.size();
  for (std::size_t i = 0; i < videos.size(); ++i) {
    if (videos[i].id == video) index = i;
  }
  if (index == videos.size()) throw DatasetError("no video named " + video + " under " + data_root.string());
  std::filesystem::create_directories(out_dir);
  run_video(model, videos[index], index, cfg.image_size, out_dir, opt);
}

}  // namespace mf
