#pragma once

// Band subset selection for the three experimental configurations: all bands,
// k uniformly spaced bands, or the bands nearest to three RGB target
// wavelengths.

#include <array>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "hyperseg/hypercube.hpp"

namespace hyperseg {

struct BandStrategy {
  enum class Kind { All, UniformK, RgbNearest };

  Kind kind = Kind::All;
  int k = 0;                             // UniformK
  std::array<double, 3> targets_nm{};    // RgbNearest

  static BandStrategy all() { return {}; }

  static BandStrategy uniform(int k) {
    if (k < 2) throw std::invalid_argument("BandStrategy: uniform k must be >= 2");
    BandStrategy s;
    s.kind = Kind::UniformK;
    s.k = k;
    return s;
  }

  // Default targets are conventional RGB channel centers; the paper names the
  // colors but not the wavelengths.
  static BandStrategy rgb_nearest(double r_nm = 630.0, double g_nm = 550.0, double b_nm = 465.0) {
    BandStrategy s;
    s.kind = Kind::RgbNearest;
    s.targets_nm = {r_nm, g_nm, b_nm};
    return s;
  }

  // "all" | "uniform:K" | "rgb:l1,l2,l3" (rgb with no values uses defaults)
  static BandStrategy parse(const std::string& text) {
    if (text == "all") return all();
    if (text.rfind("uniform:", 0) == 0) {
      int k = 0;
      try {
        k = std::stoi(text.substr(8));
      } catch (const std::exception&) {
        throw std::invalid_argument("bad band strategy '" + text + "'");
      }
      return uniform(k);
    }
    if (text == "rgb") return rgb_nearest();
    if (text.rfind("rgb:", 0) == 0) {
      std::array<double, 3> t{};
      std::string rest = text.substr(4);
      std::size_t pos = 0;
      for (int i = 0; i < 3; ++i) {
        std::size_t used = 0;
        try {
          t[static_cast<std::size_t>(i)] = std::stod(rest.substr(pos), &used);
        } catch (const std::exception&) {
          throw std::invalid_argument("bad band strategy '" + text + "'");
        }
        pos += used;
        if (i < 2) {
          if (pos >= rest.size() || rest[pos] != ',')
            throw std::invalid_argument("bad band strategy '" + text + "' (need 3 wavelengths)");
          ++pos;
        }
      }
      if (pos != rest.size())
        throw std::invalid_argument("bad band strategy '" + text + "' (trailing characters)");
      BandStrategy s;
      s.kind = Kind::RgbNearest;
      s.targets_nm = t;
      return s;
    }
    throw std::invalid_argument("bad band strategy '" + text +
                                "' (expected all | uniform:K | rgb:l1,l2,l3)");
  }

  std::string to_string() const {
    switch (kind) {
      case Kind::All:
        return "all";
      case Kind::UniformK:
        return "uniform:" + std::to_string(k);
      case Kind::RgbNearest: {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "rgb:%g,%g,%g", targets_nm[0], targets_nm[1],
                      targets_nm[2]);
        return buf;
      }
    }
    return "all";
  }
};

// Strictly increasing band indices for the strategy. UniformK rounds
// j*(count-1)/(k-1) half away from zero and always includes both endpoints;
// RgbNearest picks the argmin |wavelength - target| per target (lowest index
// on a tie) and returns the indices ascending.
inline std::vector<int> select_bands(const WavelengthGrid& grid, const BandStrategy& strategy) {
  const int count = grid.count();
  std::vector<int> indices;
  switch (strategy.kind) {
    case BandStrategy::Kind::All:
      indices.resize(static_cast<std::size_t>(count));
      for (int i = 0; i < count; ++i) indices[static_cast<std::size_t>(i)] = i;
      return indices;

    case BandStrategy::Kind::UniformK: {
      const int k = strategy.k;
      if (k > count)
        throw std::invalid_argument("select_bands: k=" + std::to_string(k) + " exceeds " +
                                    std::to_string(count) + " bands");
      indices.reserve(static_cast<std::size_t>(k));
      for (int j = 0; j < k; ++j)
        indices.push_back(static_cast<int>(
            std::llround(static_cast<double>(j) * (count - 1) / (k - 1))));
      break;
    }

    case BandStrategy::Kind::RgbNearest: {
      for (double target : strategy.targets_nm)
        if (target < grid.start_nm() || target > grid.end_nm())
          throw std::invalid_argument("select_bands: rgb target " + std::to_string(target) +
                                      " nm outside grid [" + std::to_string(grid.start_nm()) +
                                      ", " + std::to_string(grid.end_nm()) + "]");
      for (double target : strategy.targets_nm) {
        int best = 0;
        double best_dist = std::fabs(grid.wavelength(0) - target);
        for (int i = 1; i < count; ++i) {
          double d = std::fabs(grid.wavelength(i) - target);
          if (d < best_dist) {
            best_dist = d;
            best = i;
          }
        }
        indices.push_back(best);
      }
      std::sort(indices.begin(), indices.end());
      break;
    }
  }

  for (std::size_t i = 1; i < indices.size(); ++i)
    if (indices[i] == indices[i - 1])
      throw std::invalid_argument("select_bands: strategy produced duplicate band index " +
                                  std::to_string(indices[i]) + " (positions " +
                                  std::to_string(i - 1) + " and " + std::to_string(i) + ")");
  return indices;
}

}  // namespace hyperseg
