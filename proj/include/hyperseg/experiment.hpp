#pragma once

// Experiment descriptions and the glue that runs them: train a model on a
// manifest under one band configuration, evaluate on the test split, and emit
// the metrics/confusion CSVs plus predicted masks. A matrix of experiments
// reproduces the results-table layout, rows ordered by experiment id.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hyperseg/bandselect.hpp"
#include "hyperseg/hypercube.hpp"
#include "hyperseg/metrics.hpp"
#include "hyperseg/models.hpp"
#include "hyperseg/training.hpp"

namespace hyperseg {

inline std::string backbone_label(Arch) { return "VGG-style"; }

inline std::string decoder_label(Arch a) {
  switch (a) {
    case Arch::Spectral1D: return "spectral only";
    case Arch::EncDec2D: return "Encoder-decoder";
    case Arch::UNet: return "U-Net";
  }
  return "spectral only";
}

struct ExperimentSpec {
  std::string id;
  Arch arch = Arch::Spectral1D;
  std::vector<int> widths;  // empty = architecture default
  BandStrategy bands;
  TrainConfig train;
  std::filesystem::path manifest_path;
  std::filesystem::path outdir;
  bool include_background = true;

  static ExperimentSpec from_json(const nlohmann::json& j,
                                  const std::filesystem::path& base_dir = {}) {
    ExperimentSpec s;
    s.id = j.at("id").get<std::string>();
    s.arch = arch_from_name(j.at("arch").get<std::string>());
    if (j.contains("widths")) s.widths = j.at("widths").get<std::vector<int>>();
    s.bands = BandStrategy::parse(j.value("bands", "all"));
    if (j.contains("train")) s.train = TrainConfig::from_json(j.at("train"));
    s.manifest_path = base_dir / j.at("manifest").get<std::string>();
    s.outdir = base_dir / j.at("outdir").get<std::string>();
    s.include_background = j.value("include_background", true);
    return s;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"id", id},
                        {"arch", arch_name(arch)},
                        {"bands", bands.to_string()},
                        {"train", train.to_json()},
                        {"manifest", manifest_path.string()},
                        {"outdir", outdir.string()},
                        {"include_background", include_background}};
    if (!widths.empty()) j["widths"] = widths;
    return j;
  }
};

struct EvalResult {
  MetricReport report;
  ConfusionMatrix confusion;
  int band_count = 0;
  std::string backbone;
  std::string decoder;
  std::filesystem::path metrics_csv;
  std::filesystem::path confusion_csv;
};

// Runs a checkpoint over one manifest split, writing predicted masks alongside
// the metric CSVs. When no band strategy is given, the one recorded in the
// checkpoint is used.
inline EvalResult evaluate_checkpoint(const std::filesystem::path& checkpoint_path,
                                      const DatasetManifest& manifest,
                                      std::optional<BandStrategy> bands_override,
                                      const std::string& split, bool include_background,
                                      const std::filesystem::path& outdir,
                                      const std::string& run_name) {
  auto [model, header] = Model<double>::load_checkpoint(checkpoint_path);
  model.set_requires_grad(false);

  BandStrategy bands;
  if (bands_override) {
    bands = *bands_override;
  } else {
    if (!header.contains("bands"))
      throw std::invalid_argument("evaluate: checkpoint records no band strategy, pass one");
    bands = BandStrategy::parse(header.at("bands").get<std::string>());
  }
  const auto band_indices = select_bands(manifest.grid, bands);
  if (static_cast<int>(band_indices.size()) != model.spec().in_channels)
    throw std::invalid_argument("evaluate: band strategy '" + bands.to_string() + "' selects " +
                                std::to_string(band_indices.size()) +
                                " bands but the checkpoint expects " +
                                std::to_string(model.spec().in_channels) + " input channels");
  if (model.spec().num_classes != static_cast<int>(manifest.class_names.size()))
    throw std::invalid_argument("evaluate: checkpoint has " +
                                std::to_string(model.spec().num_classes) +
                                " classes, manifest has " +
                                std::to_string(manifest.class_names.size()));

  const auto entries = manifest.split_entries(split);
  if (entries.empty())
    throw std::invalid_argument("evaluate: manifest has no '" + split + "' entries");

  std::filesystem::create_directories(outdir);
  EvalResult result;
  result.confusion = ConfusionMatrix(manifest.class_names);
  for (const auto* e : entries) {
    HyperCube cube = select_channels(load_cube(manifest.cube_file(*e)), band_indices);
    Tensor<double> x = detail::cube_to_tensor<double>(cube);
    LabelMask predicted = argmax_mask(model.forward(x), manifest.class_names);
    LabelMask truth = load_mask(manifest.mask_file(*e), manifest.class_names);
    result.confusion.accumulate(predicted, truth);
    const std::string stem = std::filesystem::path(e->cube_path).stem().string();
    save_mask(predicted, outdir / (run_name + "_" + stem + "_pred.pgm"));
  }
  result.report = compute(result.confusion, include_background);
  result.band_count = static_cast<int>(band_indices.size());
  result.backbone = backbone_label(model.spec().arch);
  result.decoder = decoder_label(model.spec().arch);

  result.metrics_csv = outdir / (run_name + "_metrics.csv");
  {
    std::ofstream os(result.metrics_csv);
    if (!os) throw std::runtime_error("cannot write " + result.metrics_csv.string());
    write_metrics_csv_header(os);
    write_metrics_csv_row(os, run_name, result.band_count, result.backbone, result.decoder,
                          result.report);
  }
  result.confusion_csv = outdir / (run_name + "_confusion.csv");
  {
    std::ofstream os(result.confusion_csv);
    if (!os) throw std::runtime_error("cannot write " + result.confusion_csv.string());
    result.confusion.write_csv(os);
  }
  return result;
}

struct ExperimentResult {
  std::string id;
  EvalResult eval;
  TrainResult<double> training;
};

// train on the manifest's train split, then score the test split
inline ExperimentResult run_experiment(const ExperimentSpec& spec) {
  DatasetManifest manifest = DatasetManifest::load(spec.manifest_path);
  const auto band_indices = select_bands(manifest.grid, spec.bands);
  ModelSpec mspec = ModelSpec::make(spec.arch, static_cast<int>(band_indices.size()),
                                    static_cast<int>(manifest.class_names.size()), spec.widths);
  Model<double> model = Model<double>::build(mspec, spec.train.seed);

  ExperimentResult result;
  result.id = spec.id;
  result.training = train(model, manifest, spec.bands, spec.train, spec.outdir, spec.id);
  result.eval = evaluate_checkpoint(result.training.checkpoint_path, manifest, spec.bands, "test",
                                    spec.include_background, spec.outdir, spec.id);
  return result;
}

// Runs every experiment and writes the combined CSV, rows sorted by id. An
// empty experiment list still writes the header.
inline std::vector<ExperimentResult> run_matrix(std::vector<ExperimentSpec> specs,
                                                const std::filesystem::path& csv_path) {
  std::sort(specs.begin(), specs.end(),
            [](const ExperimentSpec& a, const ExperimentSpec& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < specs.size(); ++i)
    if (specs[i].id == specs[i - 1].id)
      throw std::invalid_argument("matrix: duplicate experiment id '" + specs[i].id + "'");
  std::vector<ExperimentResult> results;
  for (const auto& spec : specs) results.push_back(run_experiment(spec));

  if (csv_path.has_parent_path()) std::filesystem::create_directories(csv_path.parent_path());
  std::ofstream os(csv_path);
  if (!os) throw std::runtime_error("cannot write " + csv_path.string());
  write_metrics_csv_header(os);
  for (const auto& r : results)
    write_metrics_csv_row(os, r.id, r.eval.band_count, r.eval.backbone, r.eval.decoder,
                          r.eval.report);
  return results;
}

inline std::vector<ExperimentSpec> load_matrix_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open matrix spec: " + path.string());
  nlohmann::json j;
  in >> j;
  std::vector<ExperimentSpec> specs;
  for (const auto& je : j.at("experiments"))
    specs.push_back(ExperimentSpec::from_json(je, path.parent_path()));
  return specs;
}

}  // namespace hyperseg
