#pragma once

// Deterministic synthetic hyperspectral scenes: the image is a seeded Voronoi
// partition of class blobs; each pixel's spectrum is its class signature
// (a mixture of Gaussian bumps over the wavelength grid) shifted by the class
// texture pattern (+-delta) plus Gaussian noise, clamped to [0,1].
//
// Texture twins — two classes sharing a signature but differing in texture —
// give scenes where per-pixel spectra carry no class information and only
// spatial context separates the pair.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hyperseg/hypercube.hpp"
#include "hyperseg/rng.hpp"

namespace hyperseg {

struct GaussianBump {
  double center_nm = 0.0;
  double width_nm = 1.0;  // standard deviation
  double amplitude = 0.0;
};

enum class TextureKind { Flat, Checker, Stripes };

struct Texture {
  TextureKind kind = TextureKind::Flat;
  int period = 2;
  char orientation = 'h';  // stripes only: 'h' rows or 'v' columns
  double delta = 0.0;      // spectrum shift applied with the pattern sign

  // pattern sign at (y, x): 0 for flat, otherwise +-1
  int sign(int y, int x) const {
    switch (kind) {
      case TextureKind::Flat:
        return 0;
      case TextureKind::Checker:
        return ((y / period + x / period) % 2 == 0) ? 1 : -1;
      case TextureKind::Stripes:
        return (((orientation == 'h' ? y : x) / period) % 2 == 0) ? 1 : -1;
    }
    return 0;
  }
};

struct ClassSpec {
  std::string name;
  std::vector<GaussianBump> signature;
  Texture texture;

  double signature_at(double nm) const {
    double v = 0.0;
    for (const auto& b : signature) {
      const double z = (nm - b.center_nm) / b.width_nm;
      v += b.amplitude * std::exp(-0.5 * z * z);
    }
    return std::clamp(v, 0.0, 1.0);
  }
};

struct SynthConfig {
  int height = 64;
  int width = 64;
  int bands = 16;
  double grid_start_nm = 415.05;
  double grid_end_nm = 1008.10;
  std::vector<ClassSpec> classes;  // index 0 = background
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  int sites_per_class = 3;

  void validate() const {
    if (height < 1 || width < 1 || bands < 2)
      throw std::invalid_argument("SynthConfig: bad dimensions");
    if (classes.size() < 2) throw std::invalid_argument("SynthConfig: need at least 2 classes");
    if (noise_sigma < 0) throw std::invalid_argument("SynthConfig: negative noise_sigma");
    if (sites_per_class < 1) throw std::invalid_argument("SynthConfig: sites_per_class must be >= 1");
    for (const auto& c : classes) {
      if (c.texture.period < 2 && c.texture.kind != TextureKind::Flat)
        throw std::invalid_argument("SynthConfig: texture period must be >= 2");
      for (const auto& b : c.signature)
        if (b.width_nm <= 0) throw std::invalid_argument("SynthConfig: bump width must be > 0");
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json jc = nlohmann::json::array();
    for (const auto& c : classes) {
      nlohmann::json sig = nlohmann::json::array();
      for (const auto& b : c.signature)
        sig.push_back({{"center_nm", b.center_nm}, {"width_nm", b.width_nm}, {"amplitude", b.amplitude}});
      std::string kind = c.texture.kind == TextureKind::Flat      ? "flat"
                         : c.texture.kind == TextureKind::Checker ? "checker"
                                                                  : "stripes";
      nlohmann::json tex = {{"kind", kind}};
      if (c.texture.kind != TextureKind::Flat) {
        tex["period"] = c.texture.period;
        tex["delta"] = c.texture.delta;
      }
      if (c.texture.kind == TextureKind::Stripes)
        tex["orientation"] = std::string(1, c.texture.orientation);
      jc.push_back({{"name", c.name}, {"signature", sig}, {"texture", tex}});
    }
    return {{"height", height},       {"width", width},
            {"bands", bands},         {"grid_start_nm", grid_start_nm},
            {"grid_end_nm", grid_end_nm}, {"noise_sigma", noise_sigma},
            {"seed", seed},           {"sites_per_class", sites_per_class},
            {"classes", jc}};
  }

  static SynthConfig from_json(const nlohmann::json& j) {
    SynthConfig c;
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    c.bands = j.value("bands", c.bands);
    c.grid_start_nm = j.value("grid_start_nm", c.grid_start_nm);
    c.grid_end_nm = j.value("grid_end_nm", c.grid_end_nm);
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.seed = j.value("seed", c.seed);
    c.sites_per_class = j.value("sites_per_class", c.sites_per_class);
    for (const auto& jc : j.at("classes")) {
      ClassSpec cs;
      cs.name = jc.at("name").get<std::string>();
      for (const auto& jb : jc.at("signature"))
        cs.signature.push_back({jb.at("center_nm").get<double>(), jb.at("width_nm").get<double>(),
                                jb.at("amplitude").get<double>()});
      if (jc.contains("texture")) {
        const auto& jt = jc.at("texture");
        const std::string kind = jt.value("kind", "flat");
        if (kind == "checker")
          cs.texture.kind = TextureKind::Checker;
        else if (kind == "stripes")
          cs.texture.kind = TextureKind::Stripes;
        else if (kind == "flat")
          cs.texture.kind = TextureKind::Flat;
        else
          throw std::invalid_argument("SynthConfig: unknown texture kind '" + kind + "'");
        cs.texture.period = jt.value("period", 2);
        cs.texture.delta = jt.value("delta", 0.0);
        const std::string ori = jt.value("orientation", "h");
        cs.texture.orientation = ori.empty() ? 'h' : ori[0];
      }
      c.classes.push_back(std::move(cs));
    }
    c.validate();
    return c;
  }
};

inline WavelengthGrid synth_grid(const SynthConfig& cfg) {
  return WavelengthGrid::uniform(cfg.grid_start_nm, cfg.grid_end_nm, cfg.bands);
}

inline std::pair<HyperCube, LabelMask> generate(const SynthConfig& cfg) {
  cfg.validate();
  const int n_classes = static_cast<int>(cfg.classes.size());
  const long n_pixels = static_cast<long>(cfg.height) * cfg.width;
  const long min_pixels = std::max<long>(1, n_pixels / 50);  // 2% coverage per class

  Rng rng(cfg.seed);
  Rng site_rng = rng.fork(1);
  Rng noise_rng = rng.fork(2);

  std::vector<std::string> names;
  for (const auto& c : cfg.classes) names.push_back(c.name);
  LabelMask mask(cfg.height, cfg.width, names);

  // Voronoi partition of seeded sites, retried until every class covers >= 2%
  const int n_sites = n_classes * cfg.sites_per_class;
  bool ok = false;
  for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
    std::vector<int> sy(static_cast<std::size_t>(n_sites)), sx(static_cast<std::size_t>(n_sites));
    for (int s = 0; s < n_sites; ++s) {
      sy[static_cast<std::size_t>(s)] = site_rng.uniform_int(0, cfg.height - 1);
      sx[static_cast<std::size_t>(s)] = site_rng.uniform_int(0, cfg.width - 1);
    }
    std::vector<long> coverage(static_cast<std::size_t>(n_classes), 0);
    for (int y = 0; y < cfg.height; ++y) {
      for (int x = 0; x < cfg.width; ++x) {
        long best = -1;
        int best_site = 0;
        for (int s = 0; s < n_sites; ++s) {
          const long dy = y - sy[static_cast<std::size_t>(s)];
          const long dx = x - sx[static_cast<std::size_t>(s)];
          const long d2 = dy * dy + dx * dx;
          if (best < 0 || d2 < best) {
            best = d2;
            best_site = s;
          }
        }
        const int cls = best_site % n_classes;  // sites interleave classes
        mask.at(y, x) = static_cast<std::uint8_t>(cls);
        ++coverage[static_cast<std::size_t>(cls)];
      }
    }
    ok = std::all_of(coverage.begin(), coverage.end(),
                     [&](long c) { return c >= min_pixels; });
  }
  if (!ok)
    throw std::runtime_error("generate: could not reach 2% coverage per class after 100 layouts");

  const WavelengthGrid grid = synth_grid(cfg);
  HyperCube cube(cfg.height, cfg.width, grid, /*calib=*/true);

  // per-class signature sampled on the grid
  std::vector<std::vector<double>> sig(static_cast<std::size_t>(n_classes),
                                       std::vector<double>(static_cast<std::size_t>(cfg.bands)));
  for (int c = 0; c < n_classes; ++c)
    for (int b = 0; b < cfg.bands; ++b)
      sig[static_cast<std::size_t>(c)][static_cast<std::size_t>(b)] =
          cfg.classes[static_cast<std::size_t>(c)].signature_at(grid.wavelength(b));

  // noise drawn in cube storage order (band, row, col)
  for (int b = 0; b < cfg.bands; ++b) {
    for (int y = 0; y < cfg.height; ++y) {
      for (int x = 0; x < cfg.width; ++x) {
        const int c = mask.at(y, x);
        const auto& tex = cfg.classes[static_cast<std::size_t>(c)].texture;
        double v = sig[static_cast<std::size_t>(c)][static_cast<std::size_t>(b)] +
                   tex.sign(y, x) * tex.delta;
        if (cfg.noise_sigma > 0) v += cfg.noise_sigma * noise_rng.normal();
        cube.at(y, x, b) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return {std::move(cube), std::move(mask)};
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

// Desk-scale texture-twin scene: background, two twins sharing a signature
// (checker vs stripes with the same shift, so their per-pixel spectral
// distributions are identical), and one spectrally distinct class.
inline SynthConfig texture_twin_config(std::uint64_t seed = 1) {
  SynthConfig cfg;
  cfg.height = 64;
  cfg.width = 64;
  cfg.bands = 16;
  cfg.noise_sigma = 0.03;
  cfg.seed = seed;
  cfg.sites_per_class = 3;
  const std::vector<GaussianBump> twin_sig = {{560.0, 90.0, 0.55}, {860.0, 120.0, 0.35}};
  cfg.classes = {
      {"background", {{700.0, 600.0, 0.22}}, {TextureKind::Flat, 2, 'h', 0.0}},
      {"twin_checker", twin_sig, {TextureKind::Checker, 2, 'h', 0.10}},
      {"twin_stripes", twin_sig, {TextureKind::Stripes, 2, 'h', 0.10}},
      {"distinct", {{470.0, 60.0, 0.65}, {950.0, 80.0, 0.40}}, {TextureKind::Flat, 2, 'h', 0.0}},
  };
  return cfg;
}

// Spectrally narrow signatures that alias under aggressive band subsampling:
// the three foreground bumps sit between the bands kept by uniform:3, so the
// classes collapse there while remaining separable with the full grid.
inline SynthConfig narrow_band_config(std::uint64_t seed = 1) {
  SynthConfig cfg;
  cfg.height = 64;
  cfg.width = 64;
  cfg.bands = 16;
  cfg.noise_sigma = 0.02;
  cfg.seed = seed;
  cfg.sites_per_class = 3;
  // band spacing is (1008.10-415.05)/15 = 39.54 nm; uniform:3 keeps bands 0, 8, 15
  const GaussianBump base{700.0, 600.0, 0.30};
  cfg.classes = {
      {"background", {{700.0, 600.0, 0.15}}, {}},
      {"narrow_a", {base, {553.4, 30.0, 0.5}}, {}},
      {"narrow_b", {base, {632.5, 30.0, 0.5}}, {}},
      {"narrow_c", {base, {850.0, 30.0, 0.5}}, {}},
  };
  return cfg;
}

// Writes n_train + n_test images (independent sub-seeds of cfg.seed), their
// masks, and a manifest tying the dataset together.
inline std::filesystem::path write_dataset(const SynthConfig& cfg, int n_train, int n_test,
                                           const std::filesystem::path& outdir) {
  if (n_train < 1 || n_test < 0)
    throw std::invalid_argument("write_dataset: need at least one training image");
  std::filesystem::create_directories(outdir);
  DatasetManifest manifest;
  manifest.grid = synth_grid(cfg);
  for (const auto& c : cfg.classes) manifest.class_names.push_back(c.name);
  manifest.base_dir = outdir;

  Rng base(cfg.seed);
  for (int i = 0; i < n_train + n_test; ++i) {
    SynthConfig img_cfg = cfg;
    img_cfg.seed = base.fork(static_cast<std::uint64_t>(i) + 10).seed();
    auto [cube, mask] = generate(img_cfg);
    const std::string stem = "img" + std::to_string(i);
    save_cube(cube, outdir / (stem + ".raw"));
    save_mask(mask, outdir / (stem + "_mask.pgm"));
    manifest.entries.push_back(
        {stem + ".raw", stem + "_mask.pgm", i < n_train ? "train" : "test"});
  }
  const auto manifest_path = outdir / "manifest.json";
  manifest.save(manifest_path);
  return manifest_path;
}

}  // namespace hyperseg
