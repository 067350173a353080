#pragma once

// The three segmentation architectures, built over the tensor ops:
//
//   Spectral1D — 1x1 convolutions along the spectral axis only; each pixel is
//                classified from its own spectrum, no spatial mixing.
//   EncDec2D   — VGG-style encoder of (3x3 conv, relu)x2 + maxpool stages,
//                mirrored decoder of stride-2 transposed convs + conv pairs.
//   UNet       — EncDec2D plus channel-concatenation skips from each encoder
//                stage to the matching decoder stage.
//
// Also: checkpoint IO (text header + flat f32le weight payload in declaration
// order) and the patch-embed weight inflation used to adapt pretrained
// 3-channel embeddings to C-channel inputs.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hyperseg/hypercube.hpp"
#include "hyperseg/ops.hpp"
#include "hyperseg/rng.hpp"
#include "hyperseg/tensor.hpp"

namespace hyperseg {

enum class Arch { Spectral1D, EncDec2D, UNet };

inline std::string arch_name(Arch a) {
  switch (a) {
    case Arch::Spectral1D: return "spectral1d";
    case Arch::EncDec2D: return "encdec2d";
    case Arch::UNet: return "unet";
  }
  return "spectral1d";
}

inline Arch arch_from_name(const std::string& s) {
  if (s == "spectral1d") return Arch::Spectral1D;
  if (s == "encdec2d") return Arch::EncDec2D;
  if (s == "unet") return Arch::UNet;
  throw std::invalid_argument("unknown arch '" + s + "' (expected spectral1d|encdec2d|unet)");
}

struct ModelSpec {
  Arch arch = Arch::Spectral1D;
  int in_channels = 3;
  int num_classes = 2;
  // Spectral1D: the channel path between input and classifier.
  // 2D archs: per-stage channel counts; depth = widths.size() pool stages.
  std::vector<int> widths;
  int depth = 0;

  static ModelSpec spectral1d(int in_channels, int num_classes,
                              std::vector<int> widths = {32, 16, 32}) {
    ModelSpec s{Arch::Spectral1D, in_channels, num_classes, std::move(widths), 0};
    s.validate();
    return s;
  }

  static ModelSpec encdec2d(int in_channels, int num_classes,
                            std::vector<int> widths = {16, 32, 64}) {
    ModelSpec s{Arch::EncDec2D, in_channels, num_classes, std::move(widths), 0};
    s.depth = static_cast<int>(s.widths.size());
    s.validate();
    return s;
  }

  static ModelSpec unet(int in_channels, int num_classes, std::vector<int> widths = {16, 32, 64}) {
    ModelSpec s{Arch::UNet, in_channels, num_classes, std::move(widths), 0};
    s.depth = static_cast<int>(s.widths.size());
    s.validate();
    return s;
  }

  static ModelSpec make(Arch arch, int in_channels, int num_classes,
                        std::vector<int> widths = {}) {
    if (arch == Arch::Spectral1D)
      return widths.empty() ? spectral1d(in_channels, num_classes)
                            : spectral1d(in_channels, num_classes, std::move(widths));
    if (arch == Arch::EncDec2D)
      return widths.empty() ? encdec2d(in_channels, num_classes)
                            : encdec2d(in_channels, num_classes, std::move(widths));
    return widths.empty() ? unet(in_channels, num_classes)
                          : unet(in_channels, num_classes, std::move(widths));
  }

  void validate() const {
    if (in_channels < 1) throw std::invalid_argument("ModelSpec: in_channels must be >= 1");
    if (num_classes < 2) throw std::invalid_argument("ModelSpec: num_classes must be >= 2");
    if (widths.empty()) throw std::invalid_argument("ModelSpec: widths must be non-empty");
    for (int w : widths)
      if (w < 1) throw std::invalid_argument("ModelSpec: widths must be positive");
    if (arch != Arch::Spectral1D && depth != static_cast<int>(widths.size()))
      throw std::invalid_argument("ModelSpec: depth " + std::to_string(depth) +
                                  " inconsistent with " + std::to_string(widths.size()) +
                                  " stage widths");
  }

  nlohmann::json to_json() const {
    return {{"arch", arch_name(arch)},
            {"in_channels", in_channels},
            {"num_classes", num_classes},
            {"widths", widths},
            {"depth", depth}};
  }

  static ModelSpec from_json(const nlohmann::json& j) {
    ModelSpec s;
    s.arch = arch_from_name(j.at("arch").get<std::string>());
    s.in_channels = j.at("in_channels").get<int>();
    s.num_classes = j.at("num_classes").get<int>();
    s.widths = j.at("widths").get<std::vector<int>>();
    s.depth = j.value("depth", s.arch == Arch::Spectral1D ? 0 : static_cast<int>(s.widths.size()));
    s.validate();
    return s;
  }
};

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  bool encoder = false;  // frozen during the freeze phase of training
};

template <typename T>
class Model {
 public:
  Model() = default;

  static Model build(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    Model m;
    m.spec_ = spec;
    Rng rng(seed);
    if (spec.arch == Arch::Spectral1D) {
      int prev = spec.in_channels;
      for (std::size_t i = 0; i < spec.widths.size(); ++i) {
        m.add_conv1x1("layer" + std::to_string(i), prev, spec.widths[i], rng, /*encoder=*/true);
        prev = spec.widths[i];
      }
      m.add_conv1x1("head", prev, spec.num_classes, rng, /*encoder=*/false);
    } else {
      const bool skips = spec.arch == Arch::UNet;
      const auto& w = spec.widths;
      const int d = spec.depth;
      int prev = spec.in_channels;
      for (int i = 0; i < d; ++i) {
        m.add_conv3x3("enc" + std::to_string(i) + ".conva", prev, w[static_cast<std::size_t>(i)],
                      rng, true);
        m.add_conv3x3("enc" + std::to_string(i) + ".convb", w[static_cast<std::size_t>(i)],
                      w[static_cast<std::size_t>(i)], rng, true);
        prev = w[static_cast<std::size_t>(i)];
      }
      for (int i = d - 1; i >= 0; --i) {
        const int above = (i == d - 1) ? w[static_cast<std::size_t>(d - 1)]
                                       : w[static_cast<std::size_t>(i + 1)];
        const int wi = w[static_cast<std::size_t>(i)];
        m.add_tconv2x2("dec" + std::to_string(i) + ".up", above, wi, rng, false);
        const int cat = skips ? 2 * wi : wi;
        m.add_conv3x3("dec" + std::to_string(i) + ".conva", cat, wi, rng, false);
        m.add_conv3x3("dec" + std::to_string(i) + ".convb", wi, wi, rng, false);
      }
      m.add_conv1x1("head", w[0], spec.num_classes, rng, false);
    }
    m.rebuild_index();
    return m;
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    if (x.ndim() != 4)
      throw std::invalid_argument("forward: input must be [N,C,H,W], got " + shape_str(x.shape()));
    if (x.dim(1) != spec_.in_channels)
      throw std::invalid_argument("forward: model expects " + std::to_string(spec_.in_channels) +
                                  " channels, input has " + std::to_string(x.dim(1)));
    if (spec_.arch == Arch::Spectral1D) {
      Tensor<T> h = x;
      for (std::size_t i = 0; i < spec_.widths.size(); ++i) {
        const std::string base = "layer" + std::to_string(i);
        h = relu(conv1x1(h, p(base + ".weight"), p(base + ".bias")));
      }
      return conv1x1(h, p("head.weight"), p("head.bias"));
    }

    const int d = spec_.depth;
    const int mult = 1 << d;
    if (x.dim(2) % mult != 0 || x.dim(3) % mult != 0)
      throw std::invalid_argument("forward: " + arch_name(spec_.arch) + " with depth " +
                                  std::to_string(d) + " needs height and width divisible by " +
                                  std::to_string(mult) + ", got " + std::to_string(x.dim(2)) +
                                  "x" + std::to_string(x.dim(3)));
    const bool skips = spec_.arch == Arch::UNet;
    std::vector<Tensor<T>> skip_feats;
    Tensor<T> h = x;
    for (int i = 0; i < d; ++i) {
      const std::string base = "enc" + std::to_string(i);
      h = relu(conv2d(h, p(base + ".conva.weight"), p(base + ".conva.bias"), 1, Padding::same));
      h = relu(conv2d(h, p(base + ".convb.weight"), p(base + ".convb.bias"), 1, Padding::same));
      if (skips) skip_feats.push_back(h);
      h = maxpool2d(h, 2, 2);
    }
    for (int i = d - 1; i >= 0; --i) {
      const std::string base = "dec" + std::to_string(i);
      h = conv_transpose2d(h, p(base + ".up.weight"), 2);
      if (skips) h = concat_channels(h, skip_feats[static_cast<std::size_t>(i)]);
      h = relu(conv2d(h, p(base + ".conva.weight"), p(base + ".conva.bias"), 1, Padding::same));
      h = relu(conv2d(h, p(base + ".convb.weight"), p(base + ".convb.bias"), 1, Padding::same));
    }
    return conv1x1(h, p("head.weight"), p("head.bias"));
  }

  const ModelSpec& spec() const { return spec_; }
  std::vector<Param<T>>& params() { return params_; }
  const std::vector<Param<T>>& params() const { return params_; }

  Tensor<T>& param(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("no parameter named '" + name + "'");
    return params_[it->second].value;
  }
  const Tensor<T>& param(const std::string& name) const {
    return const_cast<Model*>(this)->param(name);
  }

  long param_count() const {
    long n = 0;
    for (const auto& prm : params_) n += prm.value.size();
    return n;
  }

  void set_requires_grad(bool rg) {
    for (auto& prm : params_) prm.value.set_requires_grad(rg);
  }
  void zero_grad() {
    for (auto& prm : params_) prm.value.zero_grad();
  }

  // checkpoint = single-line JSON header + '\n' + f32le payload in declaration order
  void save_checkpoint(const std::filesystem::path& path,
                       nlohmann::json extra = nlohmann::json::object()) const {
    nlohmann::json header = std::move(extra);
    header["format"] = "hyperseg-checkpoint-v1";
    header["model"] = spec_.to_json();
    header["param_count"] = param_count();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
    out << header.dump() << "\n";
    std::vector<float> buf;
    for (const auto& prm : params_) {
      buf.resize(static_cast<std::size_t>(prm.value.size()));
      const T* src = prm.value.data();
      for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(src[i]);
      out.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!out) throw std::runtime_error("checkpoint write failed: " + path.string());
  }

  static std::pair<Model, nlohmann::json> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty checkpoint: " + path.string());
    nlohmann::json header;
    try {
      header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path.string() + ": bad checkpoint header (" + e.what() + ")");
    }
    if (header.value("format", "") != "hyperseg-checkpoint-v1")
      throw std::runtime_error(path.string() + ": not a hyperseg checkpoint");
    Model m = build(ModelSpec::from_json(header.at("model")), /*seed=*/0);
    std::vector<float> buf;
    for (auto& prm : m.params_) {
      buf.resize(static_cast<std::size_t>(prm.value.size()));
      in.read(reinterpret_cast<char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
      if (!in)
        throw std::runtime_error(path.string() + ": checkpoint payload shorter than model '" +
                                 prm.name + "'");
      T* dst = prm.value.data();
      for (std::size_t i = 0; i < buf.size(); ++i) dst[i] = static_cast<T>(buf[i]);
    }
    char probe;
    if (in.read(&probe, 1))
      throw std::runtime_error(path.string() + ": checkpoint payload longer than model");
    return {std::move(m), std::move(header)};
  }

 private:
  const Tensor<T>& p(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::logic_error("missing parameter '" + name + "'");
    return params_[it->second].value;
  }

  // weights uniform in +-sqrt(1/fan_in), biases zero
  void add_param(std::string name, Shape shape, int fan_in, Rng& rng, bool encoder, bool bias) {
    const T bound = static_cast<T>(std::sqrt(1.0 / fan_in));
    Tensor<T> t = bias ? Tensor<T>::zeros(std::move(shape))
                       : Tensor<T>::random_uniform(std::move(shape), rng, -bound, bound);
    params_.push_back({std::move(name), std::move(t), encoder});
  }

  void add_conv3x3(const std::string& base, int cin, int cout, Rng& rng, bool encoder) {
    add_param(base + ".weight", {cout, cin, 3, 3}, cin * 9, rng, encoder, false);
    add_param(base + ".bias", {cout}, cin * 9, rng, encoder, true);
  }
  void add_conv1x1(const std::string& base, int cin, int cout, Rng& rng, bool encoder) {
    add_param(base + ".weight", {cout, cin}, cin, rng, encoder, false);
    add_param(base + ".bias", {cout}, cin, rng, encoder, true);
  }
  void add_tconv2x2(const std::string& base, int cin, int cout, Rng& rng, bool encoder) {
    add_param(base + ".weight", {cin, cout, 2, 2}, cin * 4, rng, encoder, false);
  }

  void rebuild_index() {
    index_.clear();
    for (std::size_t i = 0; i < params_.size(); ++i) index_[params_[i].name] = i;
  }

  ModelSpec spec_;
  std::vector<Param<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// argmax over the class axis; ties pick the lowest class index
template <typename T>
LabelMask argmax_mask(const Tensor<T>& logits, std::vector<std::string> class_names) {
  if (logits.ndim() != 4 || logits.dim(0) != 1)
    throw std::invalid_argument("argmax_mask: logits must be [1,C,H,W]");
  const int C = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
  const long plane = static_cast<long>(H) * W;
  LabelMask mask(H, W, std::move(class_names));
  const T* lp = logits.data();
  for (long p = 0; p < plane; ++p) {
    int best = 0;
    T best_v = lp[p];
    for (int c = 1; c < C; ++c) {
      const T v = lp[static_cast<long>(c) * plane + p];
      if (v > best_v) {
        best_v = v;
        best = c;
      }
    }
    mask.labels[static_cast<std::size_t>(p)] = static_cast<std::uint8_t>(best);
  }
  return mask;
}

// ---------------------------------------------------------------------------
// Patch-embed inflation
// ---------------------------------------------------------------------------
// A patch-embed layer is a patch x patch convolution with stride = patch.
// inflate_patch_embed builds a C-channel embedding from pretrained 3-channel
// weights: output channel j is an exact copy of source channel j mod 3, the
// bias is unchanged and no rescaling is applied.
struct PatchEmbedWeights {
  int embed_dim = 0;
  int channels = 0;
  int patch = 0;
  std::vector<double> weight;  // [embed_dim][channels][patch][patch]
  std::vector<double> bias;    // [embed_dim]

  void validate() const {
    if (embed_dim < 1 || channels < 1 || patch < 1)
      throw std::invalid_argument("PatchEmbedWeights: non-positive dimension");
    const std::size_t expect =
        static_cast<std::size_t>(embed_dim) * channels * patch * patch;
    if (weight.size() != expect || bias.size() != static_cast<std::size_t>(embed_dim))
      throw std::invalid_argument("PatchEmbedWeights: payload size mismatch");
    for (double v : weight)
      if (!std::isfinite(v)) throw std::invalid_argument("PatchEmbedWeights: non-finite weight");
    for (double v : bias)
      if (!std::isfinite(v)) throw std::invalid_argument("PatchEmbedWeights: non-finite bias");
  }

  void save(const std::filesystem::path& path) const {
    validate();
    nlohmann::json header = {{"format", "hyperseg-patchembed-v1"},
                             {"embed_dim", embed_dim},
                             {"channels", channels},
                             {"patch", patch}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write patch embed: " + path.string());
    out << header.dump() << "\n";
    std::vector<float> buf(weight.size() + bias.size());
    for (std::size_t i = 0; i < weight.size(); ++i) buf[i] = static_cast<float>(weight[i]);
    for (std::size_t i = 0; i < bias.size(); ++i)
      buf[weight.size() + i] = static_cast<float>(bias[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!out) throw std::runtime_error("patch embed write failed: " + path.string());
  }

  static PatchEmbedWeights load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open patch embed: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty patch embed: " + path.string());
    nlohmann::json header = nlohmann::json::parse(line);
    if (header.value("format", "") != "hyperseg-patchembed-v1")
      throw std::runtime_error(path.string() + ": not a patch embed file");
    PatchEmbedWeights pe;
    pe.embed_dim = header.at("embed_dim").get<int>();
    pe.channels = header.at("channels").get<int>();
    pe.patch = header.at("patch").get<int>();
    const std::size_t wn = static_cast<std::size_t>(pe.embed_dim) * pe.channels * pe.patch * pe.patch;
    std::vector<float> buf(wn + static_cast<std::size_t>(pe.embed_dim));
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw std::runtime_error(path.string() + ": short patch embed payload");
    pe.weight.assign(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(wn));
    pe.bias.assign(buf.begin() + static_cast<std::ptrdiff_t>(wn), buf.end());
    pe.validate();
    return pe;
  }
};

inline PatchEmbedWeights inflate_patch_embed(const PatchEmbedWeights& rgb, int target_channels) {
  rgb.validate();
  if (rgb.channels != 3)
    throw std::invalid_argument("inflate_patch_embed: source must have exactly 3 channels, got " +
                                std::to_string(rgb.channels));
  if (target_channels < 1)
    throw std::invalid_argument("inflate_patch_embed: target_channels must be >= 1");
  PatchEmbedWeights out;
  out.embed_dim = rgb.embed_dim;
  out.channels = target_channels;
  out.patch = rgb.patch;
  out.bias = rgb.bias;
  const std::size_t kk = static_cast<std::size_t>(rgb.patch) * rgb.patch;
  out.weight.resize(static_cast<std::size_t>(rgb.embed_dim) * target_channels * kk);
  for (int e = 0; e < rgb.embed_dim; ++e) {
    for (int c = 0; c < target_channels; ++c) {
      const std::size_t src = (static_cast<std::size_t>(e) * 3 + static_cast<std::size_t>(c % 3)) * kk;
      const std::size_t dst =
          (static_cast<std::size_t>(e) * target_channels + static_cast<std::size_t>(c)) * kk;
      std::copy(rgb.weight.begin() + static_cast<std::ptrdiff_t>(src),
                rgb.weight.begin() + static_cast<std::ptrdiff_t>(src + kk),
                out.weight.begin() + static_cast<std::ptrdiff_t>(dst));
    }
  }
  return out;
}

}  // namespace hyperseg
