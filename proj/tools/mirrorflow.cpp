#include <cstdio>
#include <exception>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "mf/data.hpp"
#include "mf/errors.hpp"
#include "mf/gradcheck.hpp"
#include "mf/metrics.hpp"
#include "mf/train.hpp"

namespace {

int cmd_train(const std::string& data, const std::string& out, const std::string& config_path,
              const std::string& preset, const std::map<std::string, std::string>& overrides) {
  mf::TrainConfig cfg = config_path.empty() ? mf::TrainConfig{} : mf::TrainConfig::load(config_path);
  if (!preset.empty()) cfg.set("preset", preset);
  for (const auto& [key, value] : overrides) cfg.set(key, value);
  cfg.validate();
  const mf::TrainResult r = mf::train(cfg, data, out, &std::cout);
  std::printf("trained %lld steps, final loss %.6f\n", static_cast<long long>(r.steps), r.final_loss);
  return 0;
}

int cmd_dataset_sim(const std::string& data, const std::string& mode) {
  std::vector<mf::GrayImage> firsts;
  for (const auto& v : mf::scan_dataset(data)) firsts.push_back(mf::to_gray(mf::read_png(v.frame_paths.front())));
  std::printf("%.2f\n", mf::dataset_similarity(firsts, mf::parse_similarity_mode(mode)));
  return 0;
}

int cmd_gradcheck(int seeds, const std::string& filter, bool no_model) {
  mf::GradcheckSuiteOptions opt;
  opt.seeds = seeds;
  opt.filter = filter;
  opt.include_model = !no_model;
  int failed = 0;
  const auto results = mf::run_gradcheck_suite(opt);
  for (const auto& r : results) {
    std::cout << r.line() << "\n";
    if (!r.passed) ++failed;
  }
  std::cout << results.size() - static_cast<std::size_t>(failed) << "/" << results.size() << " gradient checks passed\n";
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mirrorflow: video mirror segmentation"};
  app.require_subcommand(1);

  std::string data, out, config_path, preset;
  std::map<std::string, std::string> overrides;
  auto* train = app.add_subcommand("train", "train a model on a dataset directory");
  train->add_option("--data", data, "dataset root")->required();
  train->add_option("--out", out, "output directory")->required();
  train->add_option("--config", config_path, "key = value config file");
  train->add_option("--preset", preset, "baseline | cross_attention | dgsa | dgsa_slf");
  for (const auto& key : mf::TrainConfig::keys()) {
    train->add_option_function<std::string>("--" + key, [&overrides, key](const std::string& v) { overrides[key] = v; },
                                            "overrides the config file");
  }

  std::string checkpoint, mode = "pooled", video;
  bool all_frames = false;
  double threshold = 0.5;
  std::uint64_t eval_seed = 0;
  auto* eval = app.add_subcommand("eval", "score a checkpoint on a dataset");
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--data", data)->required();
  eval->add_option("--out", out, "where masks and metrics files go")->required();
  eval->add_flag("--all-frames", all_frames, "score P_{t-1} and P_n as well as P_t");
  eval->add_option("--mode", mode, "pooled | per_frame");
  eval->add_option("--threshold", threshold);
  eval->add_option("--seed", eval_seed, "seed for the distant-frame draws");

  auto* predict = app.add_subcommand("predict", "write masks for one video");
  predict->add_option("--checkpoint", checkpoint)->required();
  predict->add_option("--data", data)->required();
  predict->add_option("--video", video)->required();
  predict->add_option("--out", out)->required();
  predict->add_option("--threshold", threshold);

  std::uint64_t synth_seed = 0;
  int videos = 4, frames = 8, size = 64;
  auto* synth = app.add_subcommand("synth", "generate a synthetic mirror dataset");
  synth->add_option("--seed", synth_seed);
  synth->add_option("--videos", videos);
  synth->add_option("--frames", frames);
  synth->add_option("--size", size);
  synth->add_option("--out", out)->required();

  std::string sim_mode = "pairwise";
  auto* sim = app.add_subcommand("dataset-sim", "SSIM similarity of first frames, in percent");
  sim->add_option("--data", data)->required();
  sim->add_option("--mode", sim_mode, "pairwise | max");

  int gc_seeds = 20;
  std::string gc_filter;
  bool gc_no_model = false;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gc->add_option("--seeds", gc_seeds);
  gc->add_option("--filter", gc_filter, "only cases whose name contains this");
  gc->add_flag("--no-model", gc_no_model, "skip the full-model cases");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    std::cerr << sub->help();
    return 2;
  }

  try {
    if (*train) return cmd_train(data, out, config_path, preset, overrides);
    if (*eval) {
      mf::EvalOptions opt;
      opt.score_all_frames = all_frames;
      opt.mode = mf::parse_metric_mode(mode);
      opt.threshold = threshold;
      opt.seed = eval_seed;
      const mf::MetricsReport r = mf::evaluate_checkpoint(checkpoint, data, out, opt);
      std::cout << r.table() << r.summary() << "\n";
      return 0;
    }
    if (*predict) {
      mf::predict(checkpoint, data, video, out, threshold);
      return 0;
    }
    if (*synth) {
      mf::synth_generate(synth_seed, videos, frames, size, out);
      return 0;
    }
    if (*sim) return cmd_dataset_sim(data, sim_mode);
    if (*gc) return cmd_gradcheck(gc_seeds, gc_filter, gc_no_model);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
