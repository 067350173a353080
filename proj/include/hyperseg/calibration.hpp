#pragma once

// Spectralon reflectance calibration: converts raw intensity cubes to
// reflectance via (L - R_dark) / (R_white - R_dark). References are either
// full-frame cubes or 1x1xK per-band values broadcast over the frame.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>

#include <json.hpp>

#include "hyperseg/hypercube.hpp"

namespace hyperseg {

// Denominator magnitudes below this (in raw-intensity units) are treated as
// degenerate Spectralon measurements.
inline constexpr double kCalibrationDenominatorEpsilon = 1e-6;

struct ReferencePair {
  HyperCube white;  // R_WS
  HyperCube dark;   // R_BS
};

struct CalibrationReport {
  std::int64_t invalid_pixel_count = 0;  // degenerate denominator, element set to 0
  std::int64_t clipped_low = 0;
  std::int64_t clipped_high = 0;

  nlohmann::json to_json() const {
    return {{"invalid_pixel_count", invalid_pixel_count},
            {"clipped_low", clipped_low},
            {"clipped_high", clipped_high}};
  }
};

namespace detail {

// Reference access with 1x1xK broadcast.
struct RefView {
  const HyperCube* cube;
  bool broadcast;
  double at(int y, int x, int b) const {
    return broadcast ? cube->at(0, 0, b) : cube->at(y, x, b);
  }
};

inline RefView ref_view(const HyperCube& ref, const HyperCube& raw, const char* which) {
  if (ref.bands != raw.bands)
    throw std::invalid_argument(std::string("calibrate: ") + which + " reference has " +
                                std::to_string(ref.bands) + " bands, raw has " +
                                std::to_string(raw.bands));
  if (ref.height == 1 && ref.width == 1) return {&ref, true};
  if (ref.height != raw.height || ref.width != raw.width)
    throw std::invalid_argument(std::string("calibrate: ") + which +
                                " reference dimensions do not match raw cube");
  return {&ref, false};
}

}  // namespace detail

inline std::pair<HyperCube, CalibrationReport> calibrate(const HyperCube& raw,
                                                         const ReferencePair& refs,
                                                         bool clip = true) {
  if (raw.calibrated)
    throw std::invalid_argument("calibrate: input cube is already calibrated");
  if (refs.white.height != refs.dark.height || refs.white.width != refs.dark.width ||
      refs.white.bands != refs.dark.bands)
    throw std::invalid_argument("calibrate: white and dark references differ in dimensions");
  const auto white = detail::ref_view(refs.white, raw, "white");
  const auto dark = detail::ref_view(refs.dark, raw, "dark");

  HyperCube out(raw.height, raw.width, raw.grid, /*calib=*/true);
  CalibrationReport report;
  for (int b = 0; b < raw.bands; ++b) {
    for (int y = 0; y < raw.height; ++y) {
      for (int x = 0; x < raw.width; ++x) {
        const double ws = white.at(y, x, b);
        const double bs = dark.at(y, x, b);
        const double denom = ws - bs;
        double r;
        if (std::fabs(denom) < kCalibrationDenominatorEpsilon) {
          r = 0.0;
          ++report.invalid_pixel_count;
        } else {
          r = (raw.at(y, x, b) - bs) / denom;
          if (clip) {
            if (r < 0.0) {
              r = 0.0;
              ++report.clipped_low;
            } else if (r > 1.0) {
              r = 1.0;
              ++report.clipped_high;
            }
          }
        }
        out.at(y, x, b) = r;
      }
    }
  }
  return {std::move(out), report};
}

}  // namespace hyperseg
