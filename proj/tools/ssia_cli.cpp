// Command-line surface for the deraining network: training, inference,
// evaluation, scale-space dumps and synthetic dataset generation.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ssia/ssia.hpp"

namespace fs = std::filesystem;
using namespace ssia;

namespace {

// Files written by the running command; on failure everything recorded and
// not yet committed is deleted so no partial outputs survive.
class OutputJournal {
 public:
  void record(const fs::path& p) { paths_.push_back(p); }
  void commit() { paths_.clear(); }
  ~OutputJournal() {
    for (const auto& p : paths_) {
      std::error_code ec;
      fs::remove(p, ec);
    }
  }

 private:
  std::vector<fs::path> paths_;
};

std::string stem_of(const std::string& path) {
  return fs::path(path).stem().string();
}

Tensor pad_to_multiple_of_4(const Tensor& img, int& pad_h, int& pad_w) {
  const Shape s = img.shape();
  pad_h = (4 - s.h % 4) % 4;
  pad_w = (4 - s.w % 4) % 4;
  if (pad_h == 0 && pad_w == 0) return img;
  return reflect_pad(img, 0, pad_h, 0, pad_w);
}

void write_loss_csv(const std::string& path, const TrainResult& r,
                    OutputJournal& journal) {
  journal.record(path);
  std::ofstream out(path);
  if (!out) throw io_error("cannot write " + path);
  out << "step,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < r.step_loss.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i + 1, r.step_loss[i]);
    out << buf;
  }
}

struct MetricRow {
  std::string name;
  double psnr_db;
  double ssim_val;
};

void print_metric_table(const std::string& title,
                        const std::vector<MetricRow>& rows) {
  std::printf("%s\n", title.c_str());
  std::printf("%-24s %10s %8s\n", "image", "PSNR(dB)", "SSIM");
  double psum = 0, ssum = 0;
  bool any_inf = false;
  for (const auto& r : rows) {
    if (std::isinf(r.psnr_db)) {
      std::printf("%-24s %10s %8.4f\n", r.name.c_str(), "inf", r.ssim_val);
      any_inf = true;
    } else {
      std::printf("%-24s %10.3f %8.4f\n", r.name.c_str(), r.psnr_db, r.ssim_val);
      psum += r.psnr_db;
    }
    ssum += r.ssim_val;
  }
  if (any_inf)
    std::printf("%-24s %10s %8.4f\n", "mean", "inf", ssum / rows.size());
  else
    std::printf("%-24s %10.3f %8.4f\n", "mean", psum / rows.size(),
                ssum / rows.size());
}

MetricRow luminance_metrics(const std::string& name, const Tensor& a,
                            const Tensor& b) {
  const Tensor ya = luminance(a);
  const Tensor yb = luminance(b);
  return {name, psnr(ya, yb), ssim_value(ya, yb)};
}

void apply_ablation(NetConfig& net, const std::string& ablation) {
  if (ablation == "baseline") {
    net.use_sian = false;
    net.use_lstm = false;
    net.stages = 1;
  } else if (ablation == "lstm") {
    net.use_sian = false;
    net.use_lstm = true;
  } else if (ablation == "full") {
    net.use_sian = true;
    net.use_lstm = true;
  } else {
    throw std::invalid_argument("unknown ablation '" + ablation +
                                "' (expected baseline, lstm or full)");
  }
}

int cmd_train(const RunConfig& run, const std::string& data_dir,
              const std::string& out_ckpt, const std::string& csv_path) {
  OutputJournal journal;
  std::vector<Sample> data = load_paired_dataset(data_dir);
  NetworkParams params = NetworkParams::init(run.net, run.plan.seed);
  TrainResult result = train(params, data, run.plan, run.net);
  write_loss_csv(csv_path, result, journal);
  journal.record(out_ckpt);
  save_checkpoint(out_ckpt, params, run.net);
  journal.commit();
  std::printf("trained %d steps; final loss %.6f; checkpoint %s; loss csv %s\n",
              result.steps,
              result.step_loss.empty() ? 0.0 : result.step_loss.back(),
              out_ckpt.c_str(), csv_path.c_str());
  return 0;
}

int cmd_infer(const std::string& ckpt_path, const std::string& input,
              const std::string& outdir, int stages_override, bool dump_masks,
              bool dump_rain) {
  OutputJournal journal;
  LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
  if (stages_override > 0) ckpt.config.stages = stages_override;

  const Tensor img = read_image(input);
  if (img.shape().c != 3) throw io_error("infer expects a 3-channel PPM input");
  int pad_h = 0, pad_w = 0;
  const Tensor padded = pad_to_multiple_of_4(img, pad_h, pad_w);

  fs::create_directories(outdir);
  const std::string stem = stem_of(input);
  ForwardResult fr = forward_all_stages(padded, ckpt.params, ckpt.config);
  for (int k = 0; k < static_cast<int>(fr.outputs.size()); ++k) {
    Tensor out = crop(fr.outputs[k], 0, 0, img.shape().h, img.shape().w);
    const std::string path =
        (fs::path(outdir) / (stem + "_stage" + std::to_string(k + 1) + ".ppm"))
            .string();
    journal.record(path);
    write_image(path, clamp01(out));
    if (dump_rain) {
      Tensor rain = crop(fr.rain_layers[k], 0, 0, img.shape().h, img.shape().w);
      const std::string rpath =
          (fs::path(outdir) /
           (stem + "_stage" + std::to_string(k + 1) + "_rain.ppm"))
              .string();
      journal.record(rpath);
      write_image(rpath, clamp01(rain));
    }
    if (dump_masks) {
      for (int o = 0; o < kOctaveCount; ++o) {
        const std::string mpath =
            (fs::path(outdir) /
             (stem + "_stage" + std::to_string(k + 1) + "_mask_s" +
              std::to_string(kOctaveScales[o]) + ".pgm"))
                .string();
        journal.record(mpath);
        write_image(mpath, channel_mean(fr.masks[k][o]));
      }
    }
  }
  journal.commit();
  std::printf("wrote %zu stage outputs to %s\n", fr.outputs.size(),
              outdir.c_str());
  return 0;
}

int cmd_eval(const std::string& data_dir, const std::string& ckpt_path,
             bool per_stage) {
  std::vector<Sample> data = load_paired_dataset(data_dir);
  if (ckpt_path.empty()) {
    std::vector<MetricRow> rows;
    for (const auto& s : data)
      rows.push_back(luminance_metrics(s.name, s.rainy, s.clean));
    print_metric_table("input vs ground truth (luminance)", rows);
    return 0;
  }

  LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
  std::vector<std::vector<MetricRow>> stage_rows(ckpt.config.stages);
  for (const auto& s : data) {
    int pad_h = 0, pad_w = 0;
    const Tensor padded = pad_to_multiple_of_4(s.rainy, pad_h, pad_w);
    ForwardResult fr = forward_all_stages(padded, ckpt.params, ckpt.config);
    for (int k = 0; k < ckpt.config.stages; ++k) {
      Tensor out = crop(fr.outputs[k], 0, 0, s.rainy.shape().h, s.rainy.shape().w);
      stage_rows[k].push_back(luminance_metrics(s.name, clamp01(out), s.clean));
    }
  }
  if (per_stage) {
    for (int k = 0; k < ckpt.config.stages; ++k)
      print_metric_table("stage " + std::to_string(k + 1) + " (luminance)",
                         stage_rows[k]);
  } else {
    print_metric_table("final stage (luminance)", stage_rows.back());
  }
  return 0;
}

int cmd_dump_pyramid(const std::string& input, const std::string& outdir,
                     const RunConfig& run) {
  OutputJournal journal;
  const Tensor img = read_image(input);
  int pad_h = 0, pad_w = 0;
  const Tensor padded = pad_to_multiple_of_4(img, pad_h, pad_w);
  fs::create_directories(outdir);

  const auto octaves = build_octaves(padded, run.net.scale_space());
  const DoGPyramid dog = build_dog(octaves);
  for (int o = 0; o < kOctaveCount; ++o) {
    const int s = kOctaveScales[o];
    for (int l = 0; l < kOctaveLayers; ++l) {
      const std::string path =
          (fs::path(outdir) / ("oct" + std::to_string(s) + "_L" +
                               std::to_string(l + 1) + ".ppm"))
              .string();
      journal.record(path);
      write_image(path, minmax_normalize(octaves[o].layers[l]));
    }
    for (int l = 0; l < kDogLayers; ++l) {
      const std::string path =
          (fs::path(outdir) / ("oct" + std::to_string(s) + "_D" +
                               std::to_string(l + 1) + ".ppm"))
              .string();
      journal.record(path);
      write_image(path, minmax_normalize(dog.diffs[o][l]));
    }
  }
  journal.commit();
  std::printf("wrote %d octave and %d DoG images to %s\n",
              kOctaveCount * kOctaveLayers, kOctaveCount * kDogLayers,
              outdir.c_str());
  return 0;
}

int cmd_synth_data(const RunConfig& run, const std::string& out_dir,
                   const std::string& clean_dir, int generate, int gen_size) {
  OutputJournal journal;
  fs::create_directories(fs::path(out_dir) / "rain");
  fs::create_directories(fs::path(out_dir) / "norain");

  std::vector<std::pair<std::string, Tensor>> cleans;
  if (!clean_dir.empty()) {
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(clean_dir))
      if (e.is_regular_file()) names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    if (names.empty()) throw io_error("no images in " + clean_dir);
    for (const auto& n : names)
      cleans.emplace_back(stem_of(n) + ".ppm",
                          read_image((fs::path(clean_dir) / n).string()));
  } else {
    if (generate < 1)
      throw std::invalid_argument(
          "synth-data needs --clean DIR or --generate N");
    for (int i = 0; i < generate; ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "img%03d.ppm", i);
      cleans.emplace_back(name,
                          synth_clean_image(gen_size, gen_size,
                                            run.rain.seed * 7919 + i));
    }
  }

  RainSynthesisParams rp = run.rain;
  int idx = 0;
  for (const auto& [name, clean] : cleans) {
    rp.seed = run.rain.seed + 1000003ULL * idx;
    auto [rainy, rain] = synthesize_rain(clean, rp);
    const std::string rain_path = (fs::path(out_dir) / "rain" / name).string();
    const std::string clean_path =
        (fs::path(out_dir) / "norain" / name).string();
    journal.record(rain_path);
    journal.record(clean_path);
    write_image(rain_path, clamp01(rainy));
    write_image(clean_path, clamp01(clean));
    ++idx;
  }
  journal.commit();
  std::printf("wrote %zu rain/norain pairs to %s\n", cleans.size(),
              out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scale-space invariant attention deraining network"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  app.add_option("--config", config_path, "key=value run configuration file");
  auto* seed_opt = app.add_option("--seed", seed, "RNG seed for this command");

  // train
  auto* train_cmd = app.add_subcommand("train", "train on a rain/norain dataset");
  std::string data_dir, out_ckpt = "model.ckpt", csv_path = "loss.csv";
  int stages = 0, max_steps = -1, epochs = 0, batch = 0, patch = 0;
  std::string loss_name_opt, ablation;
  train_cmd->add_option("--data", data_dir, "dataset directory")->required();
  train_cmd->add_option("--out", out_ckpt, "checkpoint output path");
  train_cmd->add_option("--csv", csv_path, "loss history CSV path");
  train_cmd->add_option("--stages", stages, "recurrent stage count");
  train_cmd->add_option("--loss", loss_name_opt, "neg_ssim | mae | mse");
  train_cmd->add_option("--ablation", ablation, "baseline | lstm | full");
  train_cmd->add_option("--epochs", epochs, "training epochs");
  train_cmd->add_option("--batch", batch, "batch size");
  train_cmd->add_option("--patch", patch, "patch size");
  train_cmd->add_option("--max-steps", max_steps, "cap on optimizer steps");

  // infer
  auto* infer_cmd = app.add_subcommand("infer", "derain one image");
  std::string ckpt_path, input_path, outdir = ".";
  bool dump_masks = false, dump_rain = false;
  infer_cmd->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
  infer_cmd->add_option("--input", input_path, "input PPM image")->required();
  infer_cmd->add_option("--outdir", outdir, "output directory");
  infer_cmd->add_option("--stages", stages, "override stage count");
  infer_cmd->add_flag("--dump-masks", dump_masks,
                      "write channel-averaged attention masks per stage");
  infer_cmd->add_flag("--dump-rain-layer", dump_rain,
                      "write estimated rain layers per stage");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "PSNR/SSIM tables on luminance");
  bool per_stage = false;
  eval_cmd->add_option("--data", data_dir, "dataset directory")->required();
  eval_cmd->add_option("--checkpoint", ckpt_path,
                       "evaluate derained outputs of this checkpoint");
  eval_cmd->add_flag("--per-stage", per_stage, "report every stage");

  // dump-pyramid
  auto* dump_cmd = app.add_subcommand("dump-pyramid",
                                      "write octave/DoG images for an input");
  dump_cmd->add_option("--input", input_path, "input PPM image")->required();
  dump_cmd->add_option("--outdir", outdir, "output directory");

  // synth-data
  auto* synth_cmd = app.add_subcommand("synth-data", "make a rain/norain dataset");
  std::string clean_dir;
  int generate = 0, gen_size = 64;
  synth_cmd->add_option("--out", data_dir, "output dataset directory")->required();
  synth_cmd->add_option("--clean", clean_dir, "directory of clean images");
  synth_cmd->add_option("--generate", generate, "make N procedural clean scenes");
  synth_cmd->add_option("--size", gen_size, "generated image side length");

  try {
    app.parse(argc, argv);
    seed_set = seed_opt->count() > 0;

    RunConfig run;
    if (!config_path.empty()) run = load_run_config(config_path);
    if (seed_set) {
      run.plan.seed = seed;
      run.rain.seed = seed;
    }
    if (!ablation.empty()) apply_ablation(run.net, ablation);
    if (stages > 0) run.net.stages = stages;
    if (!loss_name_opt.empty()) run.plan.loss = parse_loss_kind(loss_name_opt);
    if (epochs > 0) run.plan.epochs = epochs;
    if (batch > 0) run.plan.batch_size = batch;
    if (patch > 0) run.plan.patch_size = patch;
    if (max_steps >= 0) run.plan.max_steps = max_steps;

    if (train_cmd->parsed())
      return cmd_train(run, data_dir, out_ckpt, csv_path);
    if (infer_cmd->parsed())
      return cmd_infer(ckpt_path, input_path, outdir, stages, dump_masks,
                       dump_rain);
    if (eval_cmd->parsed()) return cmd_eval(data_dir, ckpt_path, per_stage);
    if (dump_cmd->parsed()) return cmd_dump_pyramid(input_path, outdir, run);
    if (synth_cmd->parsed())
      return cmd_synth_data(run, data_dir, clean_dir, generate, gen_size);
    return 1;
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
