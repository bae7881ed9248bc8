// Command-line front end for the LiDAR range-image segmentation pipeline:
// project raw scans, synthesize labeled scenes, train, predict, evaluate,
// and export colored renders.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "lidarseg/config.hpp"
#include "lidarseg/export.hpp"
#include "lidarseg/io.hpp"
#include "lidarseg/npy.hpp"
#include "lidarseg/projection.hpp"
#include "lidarseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace lidarseg;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value pairs
  int threads = 1;
};

RunConfig resolve_config(const CommonOpts& opts) {
  RunConfig cfg;
  if (!opts.config_path.empty()) cfg = load_config_file(opts.config_path);
  for (const auto& item : opts.overrides) {
    const std::size_t eq = item.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorCode::InvalidArgument, "--set expects key=value, got '" + item + "'");
    apply_config_value(cfg, item.substr(0, eq), item.substr(eq + 1));
  }
  return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "key = value configuration file");
  cmd->add_option("--set", opts.overrides, "override a config key (key=value)")
      ->take_all();
  cmd->add_option("--threads", opts.threads, "worker threads for parallel stages");
}

std::vector<LabeledSample> load_dataset(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".npy")
      files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  std::vector<LabeledSample> samples;
  samples.reserve(files.size());
  for (const auto& f : files) samples.push_back(read_labeled_sample(f));
  if (samples.empty())
    throw Error(ErrorCode::EmptyDataset, "no .npy samples under " + dir);
  return samples;
}

LabeledSample load_sample_any(const std::string& path) {
  if (path.size() > 5 && path.substr(path.size() - 5) == ".rimg") {
    LabeledSample s;
    s.image = RangeImage::load(path);
    s.labels.assign(s.image.pixel_count(), 0);
    return s;
  }
  return read_labeled_sample(path);
}

std::vector<int32_t> load_labels_npy(const std::string& path, std::size_t expected) {
  const NpyArrayI32 arr = read_npy_i32(path);
  if (arr.data.size() != expected)
    throw Error(ErrorCode::LengthMismatch, path + " label count mismatch");
  return arr.data;
}

int checkpoint_precision(const std::string& path) {
  const CheckpointMeta meta = read_checkpoint_meta(path);
  return meta.require("precision") == "64" ? 64 : 32;
}

int cmd_project(const std::string& scan, const std::string& out, const CommonOpts& opts) {
  const RunConfig cfg = resolve_config(opts);
  const PointCloud cloud = read_kitti_bin(scan);
  const ProjectionResult res = project(cloud, cfg.grid());
  if (!out.empty()) res.image.save(out);
  std::printf("valid=%zu dropped_oov=%zu dropped_collision=%zu\n", res.stats.valid,
              res.stats.dropped_out_of_view, res.stats.dropped_by_collision);
  return 0;
}

int cmd_synth(int count, const std::string& out_dir, const CommonOpts& opts) {
  const RunConfig cfg = resolve_config(opts);
  fs::create_directories(out_dir);
  SceneConfig scene_cfg = cfg.scene();
  for (int i = 0; i < count; ++i) {
    scene_cfg.seed = cfg.synth_seed + static_cast<uint64_t>(i);
    const SyntheticScene scene = generate_scene(scene_cfg);
    char name[64];
    std::snprintf(name, sizeof(name), "%04d", i);
    write_labeled_sample(out_dir + "/" + name + ".npy", scene.sample);
    write_kitti_bin(out_dir + "/" + name + ".bin", scene.cloud);
  }
  std::printf("wrote %d scenes to %s\n", count, out_dir.c_str());
  return 0;
}

template <class S>
int run_train(const RunConfig& cfg, const std::vector<LabeledSample>& dataset,
              const std::string& out) {
  TrainResult<S> result = train<S>(dataset, cfg.train, cfg.extractor, cfg.unet, cfg.loss,
                                   std::cout, out);
  result.model->save(out, &result.adam);
  std::fprintf(stderr, "finished after %d steps; checkpoint at %s\n", result.steps,
               out.c_str());
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& out, const CommonOpts& opts) {
  const RunConfig cfg = resolve_config(opts);
  const auto dataset = load_dataset(data_dir);
  if (cfg.train.precision == 64) return run_train<double>(cfg, dataset, out);
  return run_train<float>(cfg, dataset, out);
}

template <class S>
std::vector<int32_t> run_predict(const std::string& ckpt, const RangeImage& img) {
  auto model = Model<S>::load(ckpt, nullptr);
  return predict(*model, img);
}

int cmd_predict(const std::string& ckpt, const std::string& sample_path,
                const std::string& out) {
  const LabeledSample sample = load_sample_any(sample_path);
  const std::vector<int32_t> labels =
      checkpoint_precision(ckpt) == 64 ? run_predict<double>(ckpt, sample.image)
                                       : run_predict<float>(ckpt, sample.image);
  NpyArrayI32 arr;
  arr.shape = {static_cast<std::size_t>(sample.image.height()),
               static_cast<std::size_t>(sample.image.width())};
  arr.data = labels;
  write_npy_i32(out, arr);
  return 0;
}

template <class S>
IoUReport run_eval(const std::string& ckpt, const std::vector<LabeledSample>& dataset,
                   int threads) {
  auto model = Model<S>::load(ckpt, nullptr);
  return evaluate(*model, dataset, threads);
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, const CommonOpts& opts) {
  const auto dataset = load_dataset(data_dir);
  const IoUReport report = checkpoint_precision(ckpt) == 64
                               ? run_eval<double>(ckpt, dataset, opts.threads)
                               : run_eval<float>(ckpt, dataset, opts.threads);
  std::cout << report.table();
  std::printf("average_iou=%.3f\n", report.average);
  return 0;
}

int cmd_export(const std::string& sample_path, const std::string& png_path,
               const std::string& ply_path, const std::string& labels_path) {
  const LabeledSample sample = load_sample_any(sample_path);
  std::vector<int32_t> labels = sample.labels;
  if (!labels_path.empty())
    labels = load_labels_npy(labels_path, sample.image.pixel_count());
  if (!png_path.empty()) export_range_png(png_path, sample.image, labels);
  if (!ply_path.empty()) export_ply(ply_path, sample.image, labels);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LiDAR range-image semantic segmentation toolkit"};
  app.require_subcommand(1);

  CommonOpts opts;

  auto* project_cmd = app.add_subcommand("project", "project a raw scan to a range-image");
  std::string scan_path, out_path;
  project_cmd->add_option("scan", scan_path, "KITTI .bin scan")->required();
  project_cmd->add_option("-o,--output", out_path, "output .rimg file");
  add_common(project_cmd, opts);

  auto* synth_cmd = app.add_subcommand("synth", "generate labeled synthetic scans");
  int synth_count = 1;
  std::string synth_dir;
  synth_cmd->add_option("-n,--count", synth_count, "number of scenes")->required();
  synth_cmd->add_option("-o,--output", synth_dir, "output directory")->required();
  add_common(synth_cmd, opts);

  auto* train_cmd = app.add_subcommand("train", "train on a directory of labeled samples");
  std::string data_dir, ckpt_out;
  train_cmd->add_option("--data", data_dir, "directory of .npy samples")->required();
  train_cmd->add_option("-o,--output", ckpt_out, "checkpoint path")->required();
  add_common(train_cmd, opts);

  auto* predict_cmd = app.add_subcommand("predict", "segment one sample");
  std::string ckpt_path, sample_path, labels_out;
  predict_cmd->add_option("--ckpt", ckpt_path, "checkpoint")->required();
  predict_cmd->add_option("sample", sample_path, ".npy sample or .rimg image")->required();
  predict_cmd->add_option("-o,--output", labels_out, "output labels (.npy int32)")
      ->required();

  auto* eval_cmd = app.add_subcommand("eval", "evaluate IoU over a dataset");
  std::string eval_ckpt, eval_dir;
  eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint")->required();
  eval_cmd->add_option("--data", eval_dir, "directory of .npy samples")->required();
  add_common(eval_cmd, opts);

  auto* export_cmd = app.add_subcommand("export", "colored renders of a sample");
  std::string export_sample, export_png, export_ply_path, export_labels;
  export_cmd->add_option("sample", export_sample, ".npy sample or .rimg image")->required();
  export_cmd->add_option("--png", export_png, "output PNG path");
  export_cmd->add_option("--ply", export_ply_path, "output PLY path");
  export_cmd->add_option("--labels", export_labels, "predicted labels (.npy int32)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (project_cmd->parsed()) return cmd_project(scan_path, out_path, opts);
    if (synth_cmd->parsed()) return cmd_synth(synth_count, synth_dir, opts);
    if (train_cmd->parsed()) return cmd_train(data_dir, ckpt_out, opts);
    if (predict_cmd->parsed()) return cmd_predict(ckpt_path, sample_path, labels_out);
    if (eval_cmd->parsed()) return cmd_eval(eval_ckpt, eval_dir, opts);
    if (export_cmd->parsed()) {
      if (export_png.empty() && export_ply_path.empty()) {
        std::cerr << "export: pass --png and/or --ply\n";
        return 2;
      }
      return cmd_export(export_sample, export_png, export_ply_path, export_labels);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
