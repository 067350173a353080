// hyperseg command-line tool: calibrate cubes, generate synthetic scenes,
// train/evaluate the segmentation models, and run experiment matrices.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "hyperseg/calibration.hpp"
#include "hyperseg/experiment.hpp"
#include "hyperseg/synthdata.hpp"

namespace fs = std::filesystem;
using namespace hyperseg;

namespace {

int cmd_calibrate(const std::string& raw_path, const std::string& white_path,
                  const std::string& dark_path, const std::string& out_path, bool no_clip) {
  HyperCube raw = load_cube(raw_path);
  ReferencePair refs{load_cube(white_path), load_cube(dark_path)};
  auto [cube, report] = calibrate(raw, refs, !no_clip);
  save_cube(cube, out_path);
  const fs::path report_path = out_path + ".report.json";
  std::ofstream os(report_path);
  if (!os) throw std::runtime_error("cannot write " + report_path.string());
  os << report.to_json().dump(2) << "\n";
  std::cout << "calibrated " << raw.width << "x" << raw.height << "x" << raw.bands << " -> "
            << out_path << " (invalid " << report.invalid_pixel_count << ", clipped "
            << report.clipped_low << "/" << report.clipped_high << ")\n";
  return 0;
}

int cmd_synth(const std::string& out_dir, const std::string& preset, const std::string& config_path,
              std::uint64_t seed, int n_train, int n_test) {
  SynthConfig cfg;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw std::runtime_error("cannot open synth config: " + config_path);
    nlohmann::json j;
    in >> j;
    cfg = SynthConfig::from_json(j);
    if (j.contains("seed") == false) cfg.seed = seed;
  } else if (preset == "twins") {
    cfg = texture_twin_config(seed);
  } else if (preset == "narrow") {
    cfg = narrow_band_config(seed);
  } else {
    throw std::invalid_argument("unknown preset '" + preset + "' (twins|narrow)");
  }
  const fs::path manifest = write_dataset(cfg, n_train, n_test, out_dir);
  std::ofstream os(fs::path(out_dir) / "synth_config.json");
  os << cfg.to_json().dump(2) << "\n";
  std::cout << "wrote " << (n_train + n_test) << " images and " << manifest.string() << "\n";
  return 0;
}

struct TrainOverrides {
  std::optional<std::string> bands, arch;
  std::optional<int> epochs, freeze_epochs;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  std::optional<bool> include_background;
};

ExperimentSpec load_experiment(const std::string& spec_path, const TrainOverrides& ov) {
  std::ifstream in(spec_path);
  if (!in) throw std::runtime_error("cannot open experiment spec: " + spec_path);
  nlohmann::json j;
  in >> j;
  ExperimentSpec spec = ExperimentSpec::from_json(j, fs::path(spec_path).parent_path());
  if (ov.bands) spec.bands = BandStrategy::parse(*ov.bands);
  if (ov.arch) spec.arch = arch_from_name(*ov.arch);
  if (ov.epochs) spec.train.epochs = *ov.epochs;
  if (ov.freeze_epochs) spec.train.freeze_backbone_epochs = *ov.freeze_epochs;
  if (ov.lr) spec.train.lr = *ov.lr;
  if (ov.seed) spec.train.seed = *ov.seed;
  if (ov.include_background) spec.include_background = *ov.include_background;
  spec.train.validate();
  return spec;
}

int cmd_train(const std::string& spec_path, const TrainOverrides& ov) {
  ExperimentSpec spec = load_experiment(spec_path, ov);
  DatasetManifest manifest = DatasetManifest::load(spec.manifest_path);
  const auto band_indices = select_bands(manifest.grid, spec.bands);
  ModelSpec mspec = ModelSpec::make(spec.arch, static_cast<int>(band_indices.size()),
                                    static_cast<int>(manifest.class_names.size()), spec.widths);
  Model<double> model = Model<double>::build(mspec, spec.train.seed);
  TrainResult<double> result = train(model, manifest, spec.bands, spec.train, spec.outdir, spec.id);
  std::cout << "trained " << spec.id << " (" << arch_name(spec.arch) << ", "
            << spec.bands.to_string() << "): loss " << result.loss_trace.front() << " -> "
            << result.loss_trace.back() << "\n"
            << "checkpoint " << result.checkpoint_path.string() << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& manifest_path, const std::string& split,
             const std::string& out_dir, const std::string& bands, bool include_background,
             const std::string& run_name) {
  DatasetManifest manifest = DatasetManifest::load(manifest_path);
  std::optional<BandStrategy> override;
  if (!bands.empty()) override = BandStrategy::parse(bands);
  EvalResult r = evaluate_checkpoint(ckpt, manifest, override, split, include_background, out_dir,
                                     run_name);
  std::printf("%s: precision %.4f recall %.4f f1 %.4f accuracy %.4f miou %.4f\n", run_name.c_str(),
              r.report.precision, r.report.recall, r.report.f1, r.report.accuracy, r.report.miou);
  std::cout << "metrics " << r.metrics_csv.string() << "\n";
  return 0;
}

int cmd_matrix(const std::string& spec_path, const std::string& csv_out) {
  auto specs = load_matrix_spec(spec_path);
  auto results = run_matrix(specs, csv_out);
  std::cout << "matrix: " << results.size() << " experiments -> " << csv_out << "\n";
  for (const auto& r : results)
    std::printf("  %s (%d bands, %s): miou %.4f\n", r.id.c_str(), r.eval.band_count,
                r.eval.decoder.c_str(), r.eval.report.miou);
  return 0;
}

int cmd_inflate(const std::string& in_path, int channels, const std::string& out_path) {
  PatchEmbedWeights rgb = PatchEmbedWeights::load(in_path);
  PatchEmbedWeights inflated = inflate_patch_embed(rgb, channels);
  inflated.save(out_path);
  std::cout << "inflated patch embed " << rgb.channels << " -> " << channels << " channels, "
            << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hyperspectral segmentation toolkit"};
  app.require_subcommand(1);

  // calibrate
  std::string raw_path, white_path, dark_path, cal_out;
  bool no_clip = false;
  auto* calibrate_cmd = app.add_subcommand("calibrate", "raw cube -> reflectance via white/dark references");
  calibrate_cmd->add_option("raw", raw_path, "raw intensity cube")->required();
  calibrate_cmd->add_option("white", white_path, "white reference cube")->required();
  calibrate_cmd->add_option("dark", dark_path, "dark reference cube")->required();
  calibrate_cmd->add_option("out", cal_out, "output reflectance cube")->required();
  calibrate_cmd->add_flag("--no-clip", no_clip, "do not clamp reflectance to [0,1]");

  // synth
  std::string synth_out, synth_preset = "twins", synth_config;
  std::uint64_t synth_seed = 1;
  int synth_train = 2, synth_test = 1;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset with manifest");
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->add_option("--preset", synth_preset, "twins|narrow (default twins)");
  synth_cmd->add_option("--config", synth_config, "synth config JSON (overrides preset)");
  synth_cmd->add_option("--seed", synth_seed, "dataset seed");
  synth_cmd->add_option("--train", synth_train, "number of training images");
  synth_cmd->add_option("--test", synth_test, "number of test images");

  // train
  std::string train_spec;
  TrainOverrides ov;
  std::string ov_bands, ov_arch;
  int ov_epochs = -1, ov_freeze = -1;
  double ov_lr = -1;
  std::int64_t ov_seed = -1;
  auto* train_cmd = app.add_subcommand("train", "train one experiment spec");
  train_cmd->add_option("--spec", train_spec, "experiment spec JSON")->required();
  train_cmd->add_option("--bands", ov_bands, "all|uniform:K|rgb:l1,l2,l3");
  train_cmd->add_option("--arch", ov_arch, "spectral1d|encdec2d|unet");
  train_cmd->add_option("--epochs", ov_epochs, "training epochs");
  train_cmd->add_option("--lr", ov_lr, "learning rate");
  train_cmd->add_option("--seed", ov_seed, "training seed");
  train_cmd->add_option("--freeze-epochs", ov_freeze, "epochs with the encoder frozen");

  // eval
  std::string eval_ckpt, eval_manifest, eval_split = "test", eval_out, eval_bands, eval_id = "eval";
  bool eval_include_bg = false;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a manifest split");
  eval_cmd->add_option("--checkpoint", eval_ckpt, "model checkpoint")->required();
  eval_cmd->add_option("--manifest", eval_manifest, "dataset manifest")->required();
  eval_cmd->add_option("--split", eval_split, "train|test (default test)");
  eval_cmd->add_option("--out", eval_out, "output directory")->required();
  eval_cmd->add_option("--bands", eval_bands, "band strategy (default: from checkpoint)");
  eval_cmd->add_option("--id", eval_id, "run name used in output files");
  eval_cmd->add_flag("--include-background", eval_include_bg,
                     "include class 0 in macro averages and accuracy");

  // matrix
  std::string matrix_spec, matrix_out;
  auto* matrix_cmd = app.add_subcommand("matrix", "run an experiment matrix, combined CSV out");
  matrix_cmd->add_option("--spec", matrix_spec, "matrix spec JSON")->required();
  matrix_cmd->add_option("--out", matrix_out, "combined metrics CSV path")->required();

  // inflate
  std::string inflate_in, inflate_out;
  int inflate_channels = 0;
  auto* inflate_cmd = app.add_subcommand("inflate", "duplicate RGB patch-embed weights to C channels");
  inflate_cmd->add_option("--in", inflate_in, "source patch embed (3 channels)")->required();
  inflate_cmd->add_option("--channels", inflate_channels, "target channel count")->required();
  inflate_cmd->add_option("--out", inflate_out, "output patch embed")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (calibrate_cmd->parsed())
      return cmd_calibrate(raw_path, white_path, dark_path, cal_out, no_clip);
    if (synth_cmd->parsed())
      return cmd_synth(synth_out, synth_preset, synth_config, synth_seed, synth_train, synth_test);
    if (train_cmd->parsed()) {
      if (!ov_bands.empty()) ov.bands = ov_bands;
      if (!ov_arch.empty()) ov.arch = ov_arch;
      if (ov_epochs >= 0) ov.epochs = ov_epochs;
      if (ov_freeze >= 0) ov.freeze_epochs = ov_freeze;
      if (ov_lr >= 0) ov.lr = ov_lr;
      if (ov_seed >= 0) ov.seed = static_cast<std::uint64_t>(ov_seed);
      return cmd_train(train_spec, ov);
    }
    if (eval_cmd->parsed())
      return cmd_eval(eval_ckpt, eval_manifest, eval_split, eval_out, eval_bands, eval_include_bg,
                      eval_id);
    if (matrix_cmd->parsed()) return cmd_matrix(matrix_spec, matrix_out);
    if (inflate_cmd->parsed()) return cmd_inflate(inflate_in, inflate_channels, inflate_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
