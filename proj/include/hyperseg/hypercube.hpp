#pragma once

// Hyperspectral data model and file IO: reflectance cubes with their
// wavelength grid, per-pixel label masks, and dataset manifests.
//
// Cube container format: a plain-text `<path>.hdr` next to a raw payload of
// little-endian 32-bit floats in band-sequential (BSQ) order. Header keys:
//   samples, lines, bands, dtype=f32le, interleave=bsq,
//   wavelengths=<comma list, nm>, calibrated=<0|1>
// Masks are stored as 8-bit single-channel PGM (P5), pixel value = class index.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace hyperseg {

struct cube_io_error : std::runtime_error {
  enum class Kind { missing_file, bad_header, size_mismatch, bad_payload, unwritable };
  Kind kind;
  cube_io_error(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

// ---------------------------------------------------------------------------
// WavelengthGrid
// ---------------------------------------------------------------------------
// Either a uniform grid start + i*(end-start)/(count-1), or an explicit list
// (the form a grid takes after channel selection). Both serialize to the
// same wavelength list in cube headers.
class WavelengthGrid {
 public:
  WavelengthGrid() = default;

  static WavelengthGrid uniform(double start_nm, double end_nm, int count) {
    if (!(start_nm < end_nm)) throw std::invalid_argument("WavelengthGrid: start_nm must be < end_nm");
    if (count < 2) throw std::invalid_argument("WavelengthGrid: uniform grid needs count >= 2");
    WavelengthGrid g;
    g.uniform_ = true;
    g.start_ = start_nm;
    g.end_ = end_nm;
    g.nm_.resize(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i)
      g.nm_[static_cast<std::size_t>(i)] = start_nm + i * (end_nm - start_nm) / (count - 1);
    return g;
  }

  static WavelengthGrid from_list(std::vector<double> nm) {
    if (nm.empty()) throw std::invalid_argument("WavelengthGrid: empty wavelength list");
    for (std::size_t i = 1; i < nm.size(); ++i)
      if (!(nm[i - 1] < nm[i]))
        throw std::invalid_argument("WavelengthGrid: wavelengths must be strictly increasing");
    WavelengthGrid g;
    g.uniform_ = false;
    g.start_ = nm.front();
    g.end_ = nm.back();
    g.nm_ = std::move(nm);
    return g;
  }

  int count() const { return static_cast<int>(nm_.size()); }
  bool is_uniform() const { return uniform_; }
  double start_nm() const { return start_; }
  double end_nm() const { return end_; }
  const std::vector<double>& values() const { return nm_; }

  double wavelength(int index) const {
    if (index < 0 || index >= count())
      throw std::out_of_range("wavelength index " + std::to_string(index) +
                              " out of range [0, " + std::to_string(count()) + ")");
    return nm_[static_cast<std::size_t>(index)];
  }

  WavelengthGrid restrict_to(const std::vector<int>& indices) const {
    std::vector<double> nm;
    nm.reserve(indices.size());
    for (int i : indices) nm.push_back(wavelength(i));
    return from_list(std::move(nm));
  }

  bool operator==(const WavelengthGrid& o) const { return nm_ == o.nm_; }

  nlohmann::json to_json() const {
    if (uniform_)
      return {{"start_nm", start_}, {"end_nm", end_}, {"count", count()}};
    return {{"wavelengths", nm_}};
  }

  static WavelengthGrid from_json(const nlohmann::json& j) {
    if (j.contains("wavelengths"))
      return from_list(j.at("wavelengths").get<std::vector<double>>());
    return uniform(j.at("start_nm").get<double>(), j.at("end_nm").get<double>(),
                   j.at("count").get<int>());
  }

 private:
  bool uniform_ = false;
  double start_ = 0.0, end_ = 0.0;
  std::vector<double> nm_;
};

inline double wavelength_of(const WavelengthGrid& grid, int index) {
  return grid.wavelength(index);
}

// ---------------------------------------------------------------------------
// HyperCube
// ---------------------------------------------------------------------------
// Values are kept as doubles in memory (calibration math is done in 64-bit);
// the container payload is f32le. Layout is band-major (BSQ), matching both
// the file format and the [channels, height, width] tensor convention.
struct HyperCube {
  int height = 0;
  int width = 0;
  int bands = 0;
  bool calibrated = false;
  WavelengthGrid grid;
  std::vector<double> values;  // [band][row][col]

  HyperCube() = default;
  HyperCube(int h, int w, WavelengthGrid g, bool calib = false)
      : height(h), width(w), bands(g.count()), calibrated(calib), grid(std::move(g)),
        values(static_cast<std::size_t>(h) * w * bands, 0.0) {
    if (h <= 0 || w <= 0) throw std::invalid_argument("HyperCube: non-positive dimensions");
  }

  std::size_t index(int y, int x, int b) const {
    return (static_cast<std::size_t>(b) * height + y) * width + x;
  }
  double& at(int y, int x, int b) { return values[index(y, x, b)]; }
  double at(int y, int x, int b) const { return values[index(y, x, b)]; }
  std::size_t size() const { return values.size(); }

  bool finite() const {
    for (double v : values)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

// ---------------------------------------------------------------------------
// LabelMask
// ---------------------------------------------------------------------------
struct LabelMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> labels;  // [row][col], value = class index
  std::vector<std::string> class_names;  // index 0 is background

  LabelMask() = default;
  LabelMask(int h, int w, std::vector<std::string> names)
      : height(h), width(w), labels(static_cast<std::size_t>(h) * w, 0),
        class_names(std::move(names)) {
    if (h <= 0 || w <= 0) throw std::invalid_argument("LabelMask: non-positive dimensions");
  }

  std::uint8_t& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  int num_classes() const { return static_cast<int>(class_names.size()); }

  void validate() const {
    for (std::uint8_t v : labels)
      if (v >= class_names.size())
        throw std::invalid_argument("LabelMask: label " + std::to_string(int(v)) +
                                    " >= class count " + std::to_string(class_names.size()));
  }
};

// Class layout of the WEEE dataset; index 0 is background.
inline std::vector<std::string> weee_class_names() {
  return {"background", "Copper", "Brass", "Aluminum", "StainlessSteel", "WhiteCopper"};
}

// ---------------------------------------------------------------------------
// Cube IO
// ---------------------------------------------------------------------------
namespace detail {

inline std::string trim(std::string s) {
  const char* ws = " \t\r\n";
  auto b = s.find_first_not_of(ws);
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

inline std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct CubeHeader {
  int samples = 0, lines = 0, bands = 0;
  bool calibrated = false;
  std::vector<double> wavelengths;
};

inline std::filesystem::path header_path(const std::filesystem::path& cube_path) {
  std::filesystem::path p = cube_path;
  p += ".hdr";
  return p;
}

inline CubeHeader read_cube_header(const std::filesystem::path& path) {
  const auto hdr = header_path(path);
  std::ifstream in(hdr);
  if (!in)
    throw cube_io_error(cube_io_error::Kind::missing_file,
                        "missing cube header: " + hdr.string());
  CubeHeader h;
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw cube_io_error(cube_io_error::Kind::bad_header,
                          hdr.string() + ": malformed line '" + line + "'");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  for (const char* key : {"samples", "lines", "bands", "dtype", "interleave", "wavelengths", "calibrated"})
    if (!kv.count(key))
      throw cube_io_error(cube_io_error::Kind::bad_header,
                          hdr.string() + ": missing key '" + std::string(key) + "'");
  try {
    h.samples = std::stoi(kv["samples"]);
    h.lines = std::stoi(kv["lines"]);
    h.bands = std::stoi(kv["bands"]);
  } catch (const std::exception&) {
    throw cube_io_error(cube_io_error::Kind::bad_header, hdr.string() + ": non-integer dimension");
  }
  if (h.samples <= 0 || h.lines <= 0 || h.bands <= 0)
    throw cube_io_error(cube_io_error::Kind::bad_header, hdr.string() + ": non-positive dimension");
  if (kv["dtype"] != "f32le")
    throw cube_io_error(cube_io_error::Kind::bad_header,
                        hdr.string() + ": unsupported dtype '" + kv["dtype"] + "'");
  if (kv["interleave"] != "bsq")
    throw cube_io_error(cube_io_error::Kind::bad_header,
                        hdr.string() + ": unsupported interleave '" + kv["interleave"] + "'");
  h.calibrated = kv["calibrated"] == "1";
  if (kv["calibrated"] != "0" && kv["calibrated"] != "1")
    throw cube_io_error(cube_io_error::Kind::bad_header, hdr.string() + ": calibrated must be 0 or 1");
  std::stringstream ss(kv["wavelengths"]);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (tok.empty()) continue;
    try {
      h.wavelengths.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw cube_io_error(cube_io_error::Kind::bad_header,
                          hdr.string() + ": bad wavelength '" + tok + "'");
    }
  }
  if (static_cast<int>(h.wavelengths.size()) != h.bands)
    throw cube_io_error(cube_io_error::Kind::bad_header,
                        hdr.string() + ": wavelength count " + std::to_string(h.wavelengths.size()) +
                            " != bands " + std::to_string(h.bands));
  return h;
}

}  // namespace detail

inline void save_cube(const HyperCube& cube, const std::filesystem::path& path) {
  if (!cube.finite())
    throw std::invalid_argument("save_cube: cube contains non-finite values");
  if (cube.grid.count() != cube.bands)
    throw std::invalid_argument("save_cube: grid count != bands");

  std::ofstream hdr(detail::header_path(path));
  if (!hdr)
    throw cube_io_error(cube_io_error::Kind::unwritable,
                        "cannot write header: " + detail::header_path(path).string());
  hdr << "samples=" << cube.width << "\n";
  hdr << "lines=" << cube.height << "\n";
  hdr << "bands=" << cube.bands << "\n";
  hdr << "dtype=f32le\n";
  hdr << "interleave=bsq\n";
  hdr << "wavelengths=";
  for (int b = 0; b < cube.bands; ++b) {
    if (b) hdr << ",";
    hdr << detail::format_g17(cube.grid.wavelength(b));
  }
  hdr << "\n";
  hdr << "calibrated=" << (cube.calibrated ? 1 : 0) << "\n";
  if (!hdr)
    throw cube_io_error(cube_io_error::Kind::unwritable, "header write failed");

  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw cube_io_error(cube_io_error::Kind::unwritable, "cannot write cube: " + path.string());
  const std::size_t plane = static_cast<std::size_t>(cube.height) * cube.width;
  std::vector<float> buf(plane);
  for (int b = 0; b < cube.bands; ++b) {
    const double* src = cube.values.data() + static_cast<std::size_t>(b) * plane;
    for (std::size_t i = 0; i < plane; ++i) buf[i] = static_cast<float>(src[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(plane * sizeof(float)));
  }
  if (!out)
    throw cube_io_error(cube_io_error::Kind::unwritable, "payload write failed: " + path.string());
}

inline HyperCube load_cube(const std::filesystem::path& path) {
  const auto h = detail::read_cube_header(path);
  std::error_code ec;
  const auto fsize = std::filesystem::file_size(path, ec);
  if (ec)
    throw cube_io_error(cube_io_error::Kind::missing_file, "missing cube payload: " + path.string());
  const std::size_t expected =
      static_cast<std::size_t>(h.samples) * h.lines * h.bands * sizeof(float);
  if (fsize != expected)
    throw cube_io_error(cube_io_error::Kind::size_mismatch,
                        path.string() + ": payload is " + std::to_string(fsize) +
                            " bytes, header implies " + std::to_string(expected));

  HyperCube cube(h.lines, h.samples, WavelengthGrid::from_list(h.wavelengths), h.calibrated);
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw cube_io_error(cube_io_error::Kind::missing_file, "cannot open cube: " + path.string());
  const std::size_t plane = static_cast<std::size_t>(h.lines) * h.samples;
  std::vector<float> buf(plane);
  for (int b = 0; b < h.bands; ++b) {
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(plane * sizeof(float)));
    if (!in)
      throw cube_io_error(cube_io_error::Kind::bad_payload, path.string() + ": short read");
    double* dst = cube.values.data() + static_cast<std::size_t>(b) * plane;
    for (std::size_t i = 0; i < plane; ++i) dst[i] = static_cast<double>(buf[i]);
  }
  return cube;
}

// Keeps only the listed bands; the grid degenerates to an explicit list.
inline HyperCube select_channels(const HyperCube& cube, const std::vector<int>& indices) {
  if (indices.empty()) throw std::invalid_argument("select_channels: empty index list");
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= cube.bands)
      throw std::invalid_argument("select_channels: index " + std::to_string(indices[i]) +
                                  " out of range [0, " + std::to_string(cube.bands) + ")");
    if (i > 0 && indices[i] <= indices[i - 1])
      throw std::invalid_argument("select_channels: indices must be strictly increasing, got " +
                                  std::to_string(indices[i - 1]) + " then " +
                                  std::to_string(indices[i]));
  }
  HyperCube out(cube.height, cube.width, cube.grid.restrict_to(indices), cube.calibrated);
  const std::size_t plane = static_cast<std::size_t>(cube.height) * cube.width;
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const double* src = cube.values.data() + static_cast<std::size_t>(indices[j]) * plane;
    std::copy(src, src + plane, out.values.data() + j * plane);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mask IO (binary PGM, one byte per pixel = class index)
// ---------------------------------------------------------------------------
inline void save_mask(const LabelMask& mask, const std::filesystem::path& path) {
  mask.validate();
  if (mask.class_names.size() > 256)
    throw std::invalid_argument("save_mask: more than 256 classes cannot use 8-bit storage");
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw cube_io_error(cube_io_error::Kind::unwritable, "cannot write mask: " + path.string());
  out << "P5\n" << mask.width << " " << mask.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(mask.labels.data()),
            static_cast<std::streamsize>(mask.labels.size()));
  if (!out)
    throw cube_io_error(cube_io_error::Kind::unwritable, "mask write failed: " + path.string());
}

inline LabelMask load_mask(const std::filesystem::path& path,
                           std::vector<std::string> class_names) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw cube_io_error(cube_io_error::Kind::missing_file, "missing mask: " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P5" || w <= 0 || h <= 0 || maxval != 255)
    throw cube_io_error(cube_io_error::Kind::bad_header, path.string() + ": not an 8-bit P5 PGM");
  in.get();  // single whitespace after maxval
  LabelMask mask(h, w, std::move(class_names));
  in.read(reinterpret_cast<char*>(mask.labels.data()),
          static_cast<std::streamsize>(mask.labels.size()));
  if (!in)
    throw cube_io_error(cube_io_error::Kind::bad_payload, path.string() + ": short mask read");
  mask.validate();
  return mask;
}

// ---------------------------------------------------------------------------
// DatasetManifest
// ---------------------------------------------------------------------------
struct ManifestEntry {
  std::string cube_path;  // relative to the manifest location
  std::string mask_path;
  std::string split;  // "train" or "test"
};

struct DatasetManifest {
  WavelengthGrid grid;
  std::vector<std::string> class_names;
  std::vector<ManifestEntry> entries;
  std::filesystem::path base_dir;  // set on load; resolves relative entry paths

  std::filesystem::path cube_file(const ManifestEntry& e) const { return base_dir / e.cube_path; }
  std::filesystem::path mask_file(const ManifestEntry& e) const { return base_dir / e.mask_path; }

  std::vector<const ManifestEntry*> split_entries(const std::string& split) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
      if (e.split == split) out.push_back(&e);
    return out;
  }

  void save(const std::filesystem::path& path) const {
    nlohmann::json j;
    j["grid"] = grid.to_json();
    j["class_names"] = class_names;
    j["entries"] = nlohmann::json::array();
    for (const auto& e : entries)
      j["entries"].push_back({{"cube", e.cube_path}, {"mask", e.mask_path}, {"split", e.split}});
    std::ofstream out(path);
    if (!out)
      throw cube_io_error(cube_io_error::Kind::unwritable, "cannot write manifest: " + path.string());
    out << j.dump(2) << "\n";
  }

  static DatasetManifest load(const std::filesystem::path& path, bool validate = true) {
    std::ifstream in(path);
    if (!in)
      throw cube_io_error(cube_io_error::Kind::missing_file, "missing manifest: " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw cube_io_error(cube_io_error::Kind::bad_header,
                          path.string() + ": invalid JSON (" + e.what() + ")");
    }
    DatasetManifest m;
    m.base_dir = path.parent_path();
    m.grid = WavelengthGrid::from_json(j.at("grid"));
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    for (const auto& je : j.at("entries")) {
      ManifestEntry e{je.at("cube").get<std::string>(), je.at("mask").get<std::string>(),
                      je.at("split").get<std::string>()};
      if (e.split != "train" && e.split != "test")
        throw std::invalid_argument("manifest: split must be train or test, got '" + e.split + "'");
      m.entries.push_back(std::move(e));
    }
    if (validate) m.validate();
    return m;
  }

  // Checks referenced files exist and that cube/mask/grid dimensions agree.
  // Only headers are touched, payloads stay on disk.
  void validate() const {
    for (const auto& e : entries) {
      const auto ch = detail::read_cube_header(cube_file(e));
      if (ch.bands != grid.count())
        throw std::invalid_argument("manifest: cube " + e.cube_path + " has " +
                                    std::to_string(ch.bands) + " bands, grid has " +
                                    std::to_string(grid.count()));
      std::ifstream min(mask_file(e), std::ios::binary);
      if (!min)
        throw cube_io_error(cube_io_error::Kind::missing_file,
                            "missing mask: " + mask_file(e).string());
      std::string magic;
      int w = 0, h = 0;
      min >> magic >> w >> h;
      if (magic != "P5")
        throw cube_io_error(cube_io_error::Kind::bad_header,
                            mask_file(e).string() + ": not a P5 PGM");
      if (w != ch.samples || h != ch.lines)
        throw std::invalid_argument("manifest: entry " + e.cube_path + " cube is " +
                                    std::to_string(ch.samples) + "x" + std::to_string(ch.lines) +
                                    " but mask is " + std::to_string(w) + "x" + std::to_string(h));
    }
  }
};

}  // namespace hyperseg
