#pragma once

// AdamW training loop with the two-phase freeze/unfreeze schedule.
//
// One optimizer step per batch of images (gradients accumulate over the batch;
// images keep their native size, so there is no stacking). The loss trace has
// one row per epoch: row 0 is the loss of the untrained model, row e the
// full training-set loss after e epochs of updates.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hyperseg/bandselect.hpp"
#include "hyperseg/hypercube.hpp"
#include "hyperseg/models.hpp"
#include "hyperseg/ops.hpp"
#include "hyperseg/tensor.hpp"

namespace hyperseg {

struct TrainConfig {
  int epochs = 2000;           // paper schedule
  double lr = 1e-5;            // paper learning rate
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch = 1;               // images per optimizer step
  std::uint64_t seed = 0;
  int freeze_backbone_epochs = 0;  // encoder params untouched for the first N epochs
  bool ignore_background = false;  // drop class 0 from the loss
  int checkpoint_every = 0;        // extra checkpoints every N epochs; 0 = final only

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (!(lr > 0)) throw std::invalid_argument("TrainConfig: lr must be > 0");
    if (weight_decay < 0) throw std::invalid_argument("TrainConfig: negative weight_decay");
    if (batch < 1) throw std::invalid_argument("TrainConfig: batch must be >= 1");
    if (freeze_backbone_epochs < 0 || freeze_backbone_epochs > epochs)
      throw std::invalid_argument("TrainConfig: freeze_backbone_epochs must be in [0, epochs]");
  }

  nlohmann::json to_json() const {
    return {{"epochs", epochs},
            {"lr", lr},
            {"weight_decay", weight_decay},
            {"betas", {beta1, beta2}},
            {"eps", eps},
            {"batch", batch},
            {"seed", seed},
            {"freeze_backbone_epochs", freeze_backbone_epochs},
            {"ignore_background", ignore_background},
            {"checkpoint_every", checkpoint_every}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    if (j.contains("betas")) {
      c.beta1 = j.at("betas").at(0).get<double>();
      c.beta2 = j.at("betas").at(1).get<double>();
    }
    c.eps = j.value("eps", c.eps);
    c.batch = j.value("batch", c.batch);
    c.seed = j.value("seed", c.seed);
    c.freeze_backbone_epochs = j.value("freeze_backbone_epochs", c.freeze_backbone_epochs);
    c.ignore_background = j.value("ignore_background", c.ignore_background);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.validate();
    return c;
  }
};

// first/second moment and step count per parameter, in parameter order
template <typename T>
struct AdamWState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::vector<long> t;

  template <typename P>
  static AdamWState init(const std::vector<P>& params) {
    AdamWState s;
    for (const auto& p : params) {
      s.m.emplace_back(static_cast<std::size_t>(p.value.size()), T(0));
      s.v.emplace_back(static_cast<std::size_t>(p.value.size()), T(0));
      s.t.push_back(0);
    }
    return s;
  }
};

// One decoupled-weight-decay Adam step over all unmasked parameters:
//   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
//   theta <- theta - lr * mhat / (sqrt(vhat) + eps) - lr * wd * theta
// Masked-out parameters are skipped entirely (moments and step count frozen).
template <typename T>
void adamw_step(std::vector<Param<T>>& params, AdamWState<T>& state, const TrainConfig& cfg,
                const std::vector<bool>* update_mask = nullptr) {
  if (state.m.size() != params.size())
    throw std::invalid_argument("adamw_step: state was initialized for a different parameter set");
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    if (update_mask && !(*update_mask)[pi]) continue;
    auto& value = params[pi].value.values();
    const auto& grad = params[pi].value.grad();
    auto& m = state.m[pi];
    auto& v = state.v[pi];
    const long t = ++state.t[pi];
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = static_cast<double>(grad[i]);
      if (!std::isfinite(g))
        throw std::runtime_error("adamw_step: non-finite gradient in parameter '" +
                                 params[pi].name + "' at index " + std::to_string(i));
      const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * g;
      const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      const double theta = static_cast<double>(value[i]);
      value[i] = static_cast<T>(theta - cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps)) -
                                cfg.lr * cfg.weight_decay * theta);
    }
  }
}

template <typename T>
struct TrainResult {
  std::vector<double> loss_trace;  // index = epoch, entry 0 = initial loss
  std::filesystem::path checkpoint_path;
  std::filesystem::path loss_csv_path;
};

namespace detail {

template <typename T>
Tensor<T> cube_to_tensor(const HyperCube& cube) {
  std::vector<T> data(cube.values.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<T>(cube.values[i]);
  return Tensor<T>::from({1, cube.bands, cube.height, cube.width}, std::move(data));
}

}  // namespace detail

template <typename T>
TrainResult<T> train(Model<T>& model, const DatasetManifest& manifest, const BandStrategy& bands,
                     const TrainConfig& cfg, const std::filesystem::path& outdir,
                     const std::string& run_name = "model") {
  cfg.validate();
  const auto band_indices = select_bands(manifest.grid, bands);
  if (static_cast<int>(band_indices.size()) != model.spec().in_channels)
    throw std::invalid_argument("train: band strategy '" + bands.to_string() + "' selects " +
                                std::to_string(band_indices.size()) + " bands but the model has " +
                                std::to_string(model.spec().in_channels) + " input channels");

  const auto train_entries = manifest.split_entries("train");
  if (train_entries.empty()) throw std::invalid_argument("train: manifest has no train entries");

  std::vector<Tensor<T>> inputs;
  std::vector<LabelMask> targets;
  for (const auto* e : train_entries) {
    HyperCube cube = select_channels(load_cube(manifest.cube_file(*e)), band_indices);
    inputs.push_back(detail::cube_to_tensor<T>(cube));
    targets.push_back(load_mask(manifest.mask_file(*e), manifest.class_names));
  }

  const int ignore_index = cfg.ignore_background ? 0 : -1;
  auto dataset_loss = [&]() {
    model.set_requires_grad(false);
    double total = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      Tensor<T> loss = softmax_ce_loss(model.forward(inputs[i]), targets[i], ignore_index);
      total += static_cast<double>(loss.item());
    }
    model.set_requires_grad(true);
    return total / static_cast<double>(inputs.size());
  };

  auto& params = model.params();
  auto state = AdamWState<T>::init(params);
  std::vector<bool> unfrozen_mask(params.size(), true);
  std::vector<bool> frozen_mask(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) frozen_mask[i] = !params[i].encoder;

  std::filesystem::create_directories(outdir);
  TrainResult<T> result;
  result.loss_trace.push_back(dataset_loss());

  model.set_requires_grad(true);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto& mask = (epoch <= cfg.freeze_backbone_epochs) ? frozen_mask : unfrozen_mask;
    int in_batch = 0;
    model.zero_grad();
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      Tensor<T> loss = softmax_ce_loss(model.forward(inputs[i]), targets[i], ignore_index);
      if (!std::isfinite(static_cast<double>(loss.item())))
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch));
      backward(loss);
      if (++in_batch == cfg.batch || i + 1 == inputs.size()) {
        adamw_step(params, state, cfg, &mask);
        model.zero_grad();
        in_batch = 0;
      }
    }
    result.loss_trace.push_back(dataset_loss());
    if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 && epoch != cfg.epochs)
      model.save_checkpoint(outdir / (run_name + "_epoch" + std::to_string(epoch) + ".ckpt"),
                            {{"bands", bands.to_string()}, {"epoch", epoch}});
  }

  result.checkpoint_path = outdir / (run_name + ".ckpt");
  model.save_checkpoint(result.checkpoint_path,
                        {{"bands", bands.to_string()}, {"epoch", cfg.epochs}});

  result.loss_csv_path = outdir / (run_name + "_loss.csv");
  std::ofstream csv(result.loss_csv_path);
  if (!csv) throw std::runtime_error("cannot write loss trace: " + result.loss_csv_path.string());
  csv << "epoch,loss\n";
  for (std::size_t e = 0; e < result.loss_trace.size(); ++e) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.12g", result.loss_trace[e]);
    csv << e << "," << buf << "\n";
  }
  return result;
}

}  // namespace hyperseg
