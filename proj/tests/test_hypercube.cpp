#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "hyperseg/hypercube.hpp"
#include "hyperseg/rng.hpp"

using namespace hyperseg;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("hyperseg_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// random cube with f32-representable values, the container's value domain
HyperCube random_cube(int h, int w, int bands, Rng& rng) {
  HyperCube cube(h, w, WavelengthGrid::uniform(400.0, 1000.0, bands));
  for (auto& v : cube.values) v = static_cast<double>(static_cast<float>(rng.uniform(0.0, 2.0)));
  return cube;
}

}  // namespace

TEST(WavelengthGrid, PaperGridEndpoints) {
  auto grid = WavelengthGrid::uniform(415.05, 1008.10, 76);
  EXPECT_DOUBLE_EQ(wavelength_of(grid, 0), 415.05);
  EXPECT_DOUBLE_EQ(wavelength_of(grid, 75), 1008.10);
}

TEST(WavelengthGrid, AffineInterpolant) {
  auto grid = WavelengthGrid::uniform(415.05, 1008.10, 76);
  // independent arithmetic: start + step with step computed the other way round
  const double step = (1008.10 - 415.05) / 75.0;
  EXPECT_NEAR(wavelength_of(grid, 1), 415.05 + step, 1e-12);
  EXPECT_NEAR(wavelength_of(grid, 1), 422.957333333333333, 1e-9);
  for (int i = 0; i < 76; ++i)
    EXPECT_NEAR(wavelength_of(grid, i), 415.05 + i * step, 1e-9);
}

TEST(WavelengthGrid, StrictlyMonotone) {
  auto grid = WavelengthGrid::uniform(415.05, 1008.10, 76);
  for (int i = 1; i < grid.count(); ++i)
    EXPECT_LT(grid.wavelength(i - 1), grid.wavelength(i));
}

TEST(WavelengthGrid, IndexOutOfRange) {
  auto grid = WavelengthGrid::uniform(400.0, 1000.0, 10);
  EXPECT_THROW(wavelength_of(grid, -1), std::out_of_range);
  EXPECT_THROW(wavelength_of(grid, 10), std::out_of_range);
}

TEST(WavelengthGrid, InvalidConstruction) {
  EXPECT_THROW(WavelengthGrid::uniform(1000.0, 400.0, 10), std::invalid_argument);
  EXPECT_THROW(WavelengthGrid::uniform(400.0, 1000.0, 1), std::invalid_argument);
  EXPECT_THROW(WavelengthGrid::from_list({500.0, 500.0}), std::invalid_argument);
  EXPECT_NO_THROW(WavelengthGrid::from_list({500.0}));  // single band after selection
}

TEST(CubeIo, TinyRoundTrip) {
  const auto dir = temp_dir("cube_tiny");
  HyperCube cube(1, 1, WavelengthGrid::from_list({500.0}));
  cube.at(0, 0, 0) = 0.25;
  save_cube(cube, dir / "one.raw");
  HyperCube loaded = load_cube(dir / "one.raw");
  EXPECT_EQ(loaded.height, 1);
  EXPECT_EQ(loaded.width, 1);
  EXPECT_EQ(loaded.bands, 1);
  EXPECT_EQ(loaded.at(0, 0, 0), 0.25);
  EXPECT_EQ(loaded.grid.wavelength(0), 500.0);
}

TEST(CubeIo, RandomRoundTripBitExact) {
  const auto dir = temp_dir("cube_rand");
  Rng rng(42);
  for (int trial = 0; trial < 8; ++trial) {
    HyperCube cube = random_cube(8, 8, 7, rng);
    cube.calibrated = trial % 2 == 0;
    save_cube(cube, dir / "c.raw");
    HyperCube loaded = load_cube(dir / "c.raw");
    ASSERT_EQ(loaded.values.size(), cube.values.size());
    for (std::size_t i = 0; i < cube.values.size(); ++i)
      ASSERT_EQ(loaded.values[i], cube.values[i]) << "element " << i;
    EXPECT_EQ(loaded.calibrated, cube.calibrated);
    ASSERT_EQ(loaded.grid.count(), cube.grid.count());
    for (int b = 0; b < cube.bands; ++b)
      EXPECT_EQ(loaded.grid.wavelength(b), cube.grid.wavelength(b));
  }
}

TEST(CubeIo, MissingFile) {
  try {
    load_cube("/nonexistent/cube.raw");
    FAIL() << "expected cube_io_error";
  } catch (const cube_io_error& e) {
    EXPECT_EQ(e.kind, cube_io_error::Kind::missing_file);
  }
}

TEST(CubeIo, MalformedHeader) {
  const auto dir = temp_dir("cube_badhdr");
  std::ofstream(dir / "bad.raw") << "";
  std::ofstream(dir / "bad.raw.hdr") << "samples=2\nlines=2\n";  // keys missing
  try {
    load_cube(dir / "bad.raw");
    FAIL() << "expected cube_io_error";
  } catch (const cube_io_error& e) {
    EXPECT_EQ(e.kind, cube_io_error::Kind::bad_header);
  }
}

TEST(CubeIo, PayloadSizeMismatch) {
  const auto dir = temp_dir("cube_sizemismatch");
  Rng rng(7);
  HyperCube cube = random_cube(4, 4, 76, rng);
  save_cube(cube, dir / "c.raw");
  // header claims 76 bands; truncate the payload to 75
  const auto payload = dir / "c.raw";
  fs::resize_file(payload, 4 * 4 * 75 * sizeof(float));
  try {
    load_cube(payload);
    FAIL() << "expected cube_io_error";
  } catch (const cube_io_error& e) {
    EXPECT_EQ(e.kind, cube_io_error::Kind::size_mismatch);
  }
}

TEST(CubeIo, SaveRejectsNonFinite) {
  const auto dir = temp_dir("cube_nan");
  HyperCube cube(2, 2, WavelengthGrid::uniform(400.0, 1000.0, 3));
  cube.at(0, 1, 2) = std::nan("");
  EXPECT_THROW(save_cube(cube, dir / "nan.raw"), std::invalid_argument);
}

// sensor-sized smoke test: 1024 x 1024 x 76 survives a save/load cycle
TEST(CubeIo, SensorSizedSmoke) {
  const auto dir = temp_dir("cube_big");
  HyperCube cube(1024, 1024, WavelengthGrid::uniform(415.05, 1008.10, 76));
  for (int b = 0; b < cube.bands; ++b) {
    const double base = b * 0.001;
    const std::size_t off = static_cast<std::size_t>(b) * 1024 * 1024;
    for (std::size_t i = 0; i < 1024 * 1024; ++i)
      cube.values[off + i] = static_cast<double>(static_cast<float>(base + i * 1e-7));
  }
  save_cube(cube, dir / "big.raw");
  HyperCube loaded = load_cube(dir / "big.raw");
  ASSERT_EQ(loaded.height, 1024);
  ASSERT_EQ(loaded.width, 1024);
  ASSERT_EQ(loaded.bands, 76);
  Rng rng(3);
  for (int probe = 0; probe < 20000; ++probe) {
    const std::size_t i = static_cast<std::size_t>(rng.next_u64() % cube.values.size());
    ASSERT_EQ(loaded.values[i], cube.values[i]);
  }
  fs::remove_all(dir);
}

TEST(SelectChannels, IdentitySelection) {
  Rng rng(5);
  HyperCube cube = random_cube(6, 5, 76, rng);
  std::vector<int> all(76);
  for (int i = 0; i < 76; ++i) all[static_cast<std::size_t>(i)] = i;
  HyperCube out = select_channels(cube, all);
  EXPECT_EQ(out.values, cube.values);
  EXPECT_TRUE(out.grid == cube.grid);
}

TEST(SelectChannels, SingleBand) {
  Rng rng(6);
  HyperCube cube(2, 2, WavelengthGrid::uniform(415.05, 1008.10, 76));
  for (auto& v : cube.values) v = rng.uniform();
  HyperCube out = select_channels(cube, {0});
  EXPECT_EQ(out.bands, 1);
  EXPECT_DOUBLE_EQ(out.grid.wavelength(0), 415.05);
}

TEST(SelectChannels, RgbTriple) {
  HyperCube cube(1, 1, WavelengthGrid::uniform(415.05, 1008.10, 76));
  HyperCube out = select_channels(cube, {6, 17, 27});
  ASSERT_EQ(out.bands, 3);
  EXPECT_NEAR(out.grid.wavelength(0), 462.49, 0.01);
  EXPECT_NEAR(out.grid.wavelength(1), 549.47, 0.01);
  EXPECT_NEAR(out.grid.wavelength(2), 628.55, 0.01);
}

TEST(SelectChannels, OrderPreserving) {
  Rng rng(8);
  HyperCube cube = random_cube(5, 4, 12, rng);
  const std::vector<int> indices{1, 3, 4, 9, 11};
  HyperCube out = select_channels(cube, indices);
  for (std::size_t j = 0; j < indices.size(); ++j)
    for (int y = 0; y < cube.height; ++y)
      for (int x = 0; x < cube.width; ++x)
        ASSERT_EQ(out.at(y, x, static_cast<int>(j)), cube.at(y, x, indices[j]));
}

TEST(SelectChannels, RejectsBadIndices) {
  Rng rng(9);
  HyperCube cube = random_cube(2, 2, 8, rng);
  EXPECT_THROW(select_channels(cube, {3, 3}), std::invalid_argument);
  EXPECT_THROW(select_channels(cube, {5, 3}), std::invalid_argument);
  EXPECT_THROW(select_channels(cube, {0, 8}), std::invalid_argument);
  EXPECT_THROW(select_channels(cube, {}), std::invalid_argument);
}

TEST(MaskIo, RoundTrip) {
  const auto dir = temp_dir("mask");
  LabelMask mask(3, 4, weee_class_names());
  Rng rng(11);
  for (auto& v : mask.labels) v = static_cast<std::uint8_t>(rng.uniform_int(0, 5));
  save_mask(mask, dir / "m.pgm");
  LabelMask loaded = load_mask(dir / "m.pgm", weee_class_names());
  EXPECT_EQ(loaded.labels, mask.labels);
  EXPECT_EQ(loaded.height, 3);
  EXPECT_EQ(loaded.width, 4);
}

TEST(MaskIo, WeeeClassLayout) {
  const auto names = weee_class_names();
  ASSERT_EQ(names.size(), 6u);
  EXPECT_EQ(names[0], "background");
  EXPECT_EQ(names[1], "Copper");
  EXPECT_EQ(names[2], "Brass");
  EXPECT_EQ(names[3], "Aluminum");
  EXPECT_EQ(names[4], "StainlessSteel");
  EXPECT_EQ(names[5], "WhiteCopper");
}

TEST(MaskIo, RejectsOutOfRangeLabel) {
  LabelMask mask(2, 2, {"background", "a"});
  mask.labels[3] = 7;
  EXPECT_THROW(mask.validate(), std::invalid_argument);
}

TEST(Manifest, SaveLoadValidate) {
  const auto dir = temp_dir("manifest");
  Rng rng(13);
  HyperCube cube = random_cube(4, 4, 6, rng);
  save_cube(cube, dir / "a.raw");
  LabelMask mask(4, 4, {"background", "foo"});
  mask.at(1, 1) = 1;
  save_mask(mask, dir / "a.pgm");

  DatasetManifest m;
  m.grid = cube.grid;
  m.class_names = {"background", "foo"};
  m.entries = {{"a.raw", "a.pgm", "train"}};
  m.base_dir = dir;
  m.save(dir / "manifest.json");

  DatasetManifest loaded = DatasetManifest::load(dir / "manifest.json");
  ASSERT_EQ(loaded.entries.size(), 1u);
  EXPECT_EQ(loaded.entries[0].split, "train");
  EXPECT_EQ(loaded.class_names, m.class_names);
  EXPECT_TRUE(loaded.grid == m.grid);
}

TEST(Manifest, RejectsDimensionMismatch) {
  const auto dir = temp_dir("manifest_bad");
  Rng rng(17);
  HyperCube cube = random_cube(4, 4, 6, rng);
  save_cube(cube, dir / "a.raw");
  LabelMask mask(5, 4, {"background", "foo"});  // height differs from the cube
  save_mask(mask, dir / "a.pgm");
  DatasetManifest m;
  m.grid = cube.grid;
  m.class_names = {"background", "foo"};
  m.entries = {{"a.raw", "a.pgm", "train"}};
  m.base_dir = dir;
  m.save(dir / "manifest.json");
  EXPECT_THROW(DatasetManifest::load(dir / "manifest.json"), std::invalid_argument);
}

TEST(Manifest, RejectsMissingCube) {
  const auto dir = temp_dir("manifest_missing");
  DatasetManifest m;
  m.grid = WavelengthGrid::uniform(400.0, 1000.0, 4);
  m.class_names = {"background", "foo"};
  m.entries = {{"ghost.raw", "ghost.pgm", "test"}};
  m.base_dir = dir;
  m.save(dir / "manifest.json");
  EXPECT_THROW(DatasetManifest::load(dir / "manifest.json"), cube_io_error);
}
