#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "fibersr/error.hpp"
#include "fibersr/image.hpp"
#include "fibersr/io.hpp"
#include "fibersr/random.hpp"

namespace fibersr {

/// Physical probe parameters in micrometres. Pixel quantities are derived by
/// rounding length / pixel_size_um.
struct DegradationConfig {
  double pixel_size_um = 2.0;
  double fiber_diameter_um = 6.0;        // m
  double inter_fiber_distance_um = 12.0; // s
  double max_offset_um = 2.0;            // d
  std::uint64_t seed = 0;

  int fiber_px() const { return static_cast<int>(std::lround(fiber_diameter_um / pixel_size_um)); }
  int pitch_px() const { return static_cast<int>(std::lround(inter_fiber_distance_um / pixel_size_um)); }
  int offset_px() const { return static_cast<int>(std::lround(max_offset_um / pixel_size_um)); }

  void validate() const {
    require(pixel_size_um > 0.0 && std::isfinite(pixel_size_um), "DegradationConfig: pixel size must be > 0");
    require(fiber_diameter_um >= pixel_size_um, "DegradationConfig: fiber diameter must be >= pixel size");
    require(inter_fiber_distance_um >= fiber_diameter_um,
            "DegradationConfig: inter-fiber distance must be >= fiber diameter");
    require(max_offset_um >= 0.0, "DegradationConfig: max offset must be >= 0");
    require(std::isfinite(inter_fiber_distance_um) && std::isfinite(max_offset_um),
            "DegradationConfig: parameters must be finite");
    require(fiber_px() >= 1, "DegradationConfig: fiber must span at least one pixel");
    require(pitch_px() >= fiber_px(), "DegradationConfig: pitch in pixels must be >= fiber size in pixels");
    require(offset_px() >= 0, "DegradationConfig: offset in pixels must be >= 0");
  }

  /// Same geometry expressed directly in pixels.
  static DegradationConfig from_pixels(int m_px, int s_px, int d_px, std::uint64_t seed = 0, double pixel_size_um = 2.0) {
    return {pixel_size_um, m_px * pixel_size_um, s_px * pixel_size_um, d_px * pixel_size_um, seed};
  }
};

struct Tile {
  int tile_row = 0;
  int tile_col = 0;
  int origin_row = 0;
  int origin_col = 0;
  int nominal_roi_row = 0;
  int nominal_roi_col = 0;
};

struct GridGeometry {
  int pitch_px = 0;
  int fiber_px = 0;
  int tile_rows = 0;
  int tile_cols = 0;
  std::vector<Tile> tiles;  // row-major
};

/// Non-overlapping pitch x pitch tiles over the top-left covered region; the
/// nominal ROI sits floor((s - m) / 2) pixels into its tile on both axes.
inline GridGeometry grid_geometry(const DegradationConfig& cfg, int width, int height) {
  cfg.validate();
  GridGeometry g;
  g.pitch_px = cfg.pitch_px();
  g.fiber_px = cfg.fiber_px();
  require(width >= g.pitch_px && height >= g.pitch_px, "grid_geometry: image smaller than one fiber tile");
  g.tile_rows = height / g.pitch_px;
  g.tile_cols = width / g.pitch_px;
  const int margin = (g.pitch_px - g.fiber_px) / 2;
  g.tiles.reserve(static_cast<std::size_t>(g.tile_rows) * g.tile_cols);
  for (int tr = 0; tr < g.tile_rows; ++tr)
    for (int tc = 0; tc < g.tile_cols; ++tc) {
      const int r0 = tr * g.pitch_px;
      const int c0 = tc * g.pitch_px;
      g.tiles.push_back({tr, tc, r0, c0, r0 + margin, c0 + margin});
    }
  return g;
}

struct FiberSample {
  int tile_row = 0;
  int tile_col = 0;
  int roi_row = 0;
  int roi_col = 0;
  int roi_size = 0;
  double mean_value = 0.0;
  int offset_y = 0;  // drawn d_y, before clamping the ROI into the frame
  int offset_x = 0;  // drawn d_x
};

struct DegradedPair {
  Image sparse;
  Image lr;
  std::vector<FiberSample> samples;
};

/// Fiber knock-out degradation. Per tile, in row-major order, draws d_y then
/// d_x uniformly from [-d_px, d_px] (no draws when d_px = 0), shifts the
/// nominal ROI, clamps it into the frame, and fills the tile of the LR image
/// with the ROI mean. Uncovered border strips keep the source pixels.
inline DegradedPair degrade(const Image& image, const DegradationConfig& cfg, Rng& rng) {
  const GridGeometry g = grid_geometry(cfg, image.width(), image.height());
  const int m = g.fiber_px;
  const int s = g.pitch_px;
  const int d = cfg.offset_px();
  const int w = image.width();
  const auto src = image.pixels();

  std::vector<FiberSample> samples;
  samples.reserve(g.tiles.size());
  for (const Tile& t : g.tiles) {
    FiberSample fs;
    fs.tile_row = t.tile_row;
    fs.tile_col = t.tile_col;
    fs.roi_size = m;
    if (d > 0) {
      fs.offset_y = static_cast<int>(rng.uniform_int(-d, d));
      fs.offset_x = static_cast<int>(rng.uniform_int(-d, d));
    }
    fs.roi_row = std::clamp(t.nominal_roi_row + fs.offset_y, 0, image.height() - m);
    fs.roi_col = std::clamp(t.nominal_roi_col + fs.offset_x, 0, w - m);
    samples.push_back(fs);
  }

  std::vector<double> lr(src.begin(), src.end());
  std::vector<double> sparse(src.size(), 0.0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    FiberSample& fs = samples[i];
    double sum = 0.0;
    for (int y = fs.roi_row; y < fs.roi_row + m; ++y)
      for (int x = fs.roi_col; x < fs.roi_col + m; ++x) {
        const std::size_t idx = static_cast<std::size_t>(y) * w + x;
        sum += src[idx];
        sparse[idx] = src[idx];
      }
    fs.mean_value = sum / static_cast<double>(m * m);
    const Tile& t = g.tiles[i];
    for (int y = t.origin_row; y < t.origin_row + s; ++y)
      std::fill_n(lr.begin() + static_cast<std::ptrdiff_t>(y) * w + t.origin_col, s, fs.mean_value);
  }
  return {Image(w, image.height(), std::move(sparse)), Image(w, image.height(), std::move(lr)), std::move(samples)};
}

inline DegradedPair degrade(const Image& image, const DegradationConfig& cfg) {
  Rng rng(cfg.seed);
  return degrade(image, cfg, rng);
}

/// Degenerate probe (one-pixel fibers on a one-pixel pitch, no offset):
/// returns the LR image, which equals the input.
inline Image identity_check(const Image& image) {
  return degrade(image, DegradationConfig::from_pixels(1, 1, 0)).lr;
}

inline std::string samples_csv(const std::vector<FiberSample>& samples) {
  std::ostringstream out;
  out << "tile_row,tile_col,roi_row,roi_col,dx,dy,mean\n";
  for (const auto& s : samples)
    out << s.tile_row << ',' << s.tile_col << ',' << s.roi_row << ',' << s.roi_col << ',' << s.offset_x << ','
        << s.offset_y << ',' << format_number(s.mean_value) << '\n';
  return out.str();
}

}  // namespace fibersr
