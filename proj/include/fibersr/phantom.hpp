#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "fibersr/error.hpp"
#include "fibersr/image.hpp"
#include "fibersr/random.hpp"

namespace fibersr {

enum class Diagnosis { neoplastic, non_neoplastic };

inline std::string to_string(Diagnosis d) { return d == Diagnosis::neoplastic ? "neoplastic" : "non_neoplastic"; }

inline Diagnosis parse_diagnosis(const std::string& s) {
  if (s == "neoplastic") return Diagnosis::neoplastic;
  if (s == "non_neoplastic") return Diagnosis::non_neoplastic;
  throw Error("unknown diagnosis '" + s + "' (expected neoplastic or non_neoplastic)");
}

/// Synthetic fluorescent-nuclei field. Class parameters are free choices that
/// emulate denser, larger, more pleomorphic nuclei for the neoplastic label;
/// they carry no clinical meaning.
struct PhantomSpec {
  int width = 1280;
  int height = 960;
  double nuclei_per_megapixel = 4000.0;
  double radius_min_px = 2.5;
  double radius_max_px = 4.0;
  double intensity_min = 0.55;
  double intensity_max = 0.9;
  double background_level = 0.12;
  double background_noise_sd = 0.02;
  double eccentricity_max = 0.3;
  Diagnosis label = Diagnosis::non_neoplastic;

  void validate() const {
    require(width >= 1 && height >= 1, "PhantomSpec: width and height must be >= 1");
    require(nuclei_per_megapixel >= 0.0 && std::isfinite(nuclei_per_megapixel), "PhantomSpec: density must be >= 0");
    require(radius_min_px >= 1.0, "PhantomSpec: radius_min must be >= 1");
    require(radius_max_px >= radius_min_px, "PhantomSpec: radius_max must be >= radius_min");
    require(intensity_min <= intensity_max && intensity_max <= 1.0 && intensity_min > 0.0,
            "PhantomSpec: intensity range must satisfy 0 < min <= max <= 1");
    require(background_level >= 0.0 && background_level <= 1.0, "PhantomSpec: background_level outside [0,1]");
    require(background_noise_sd >= 0.0, "PhantomSpec: noise sd must be >= 0");
    require(background_level + 3.0 * background_noise_sd < intensity_min,
            "PhantomSpec: nuclei must be brighter than background + 3 noise sd");
    require(eccentricity_max >= 0.0 && eccentricity_max < 1.0, "PhantomSpec: eccentricity_max must lie in [0,1)");
  }

  std::size_t nucleus_count() const {
    return static_cast<std::size_t>(std::llround(nuclei_per_megapixel * static_cast<double>(width) * height / 1e6));
  }
};

/// Desk-scale class presets (128 x 128).
inline PhantomSpec non_neoplastic_preset(int size = 128) {
  PhantomSpec s;
  s.width = s.height = size;
  s.label = Diagnosis::non_neoplastic;
  return s;
}

inline PhantomSpec neoplastic_preset(int size = 128) {
  PhantomSpec s;
  s.width = s.height = size;
  s.nuclei_per_megapixel = 8000.0;
  s.radius_min_px = 3.0;
  s.radius_max_px = 5.5;
  s.eccentricity_max = 0.5;
  s.label = Diagnosis::neoplastic;
  return s;
}

struct Nucleus {
  double center_x = 0.0;
  double center_y = 0.0;
  double semi_major = 0.0;
  double semi_minor = 0.0;
  double angle = 0.0;
  double peak = 0.0;
};

struct Phantom {
  Image image;
  std::vector<Nucleus> nuclei;
};

/// Elliptical nuclei with a cos^2 taper from center (peak) to edge (zero),
/// combined by per-pixel maximum over a Gaussian-noise background.
inline Phantom generate_phantom(const PhantomSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  const std::size_t count = spec.nucleus_count();
  std::vector<Nucleus> nuclei;
  nuclei.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Nucleus n;
    n.center_x = rng.uniform(0.0, static_cast<double>(spec.width));
    n.center_y = rng.uniform(0.0, static_cast<double>(spec.height));
    n.semi_major = rng.uniform(spec.radius_min_px, spec.radius_max_px);
    n.semi_minor = n.semi_major * rng.uniform(1.0 - spec.eccentricity_max, 1.0);
    n.angle = rng.uniform(0.0, std::numbers::pi);
    n.peak = rng.uniform(spec.intensity_min, spec.intensity_max);
    nuclei.push_back(n);
  }

  const std::size_t pixels = static_cast<std::size_t>(spec.width) * spec.height;
  std::vector<double> field(pixels, spec.background_level);
  if (spec.background_noise_sd > 0.0)
    for (double& v : field) v = std::clamp(spec.background_level + spec.background_noise_sd * rng.normal(), 0.0, 1.0);

  std::vector<double> nuclear(pixels, 0.0);
  for (const Nucleus& n : nuclei) {
    const double c = std::cos(n.angle);
    const double s = std::sin(n.angle);
    const int x0 = std::max(0, static_cast<int>(std::floor(n.center_x - n.semi_major)));
    const int x1 = std::min(spec.width - 1, static_cast<int>(std::ceil(n.center_x + n.semi_major)));
    const int y0 = std::max(0, static_cast<int>(std::floor(n.center_y - n.semi_major)));
    const int y1 = std::min(spec.height - 1, static_cast<int>(std::ceil(n.center_y + n.semi_major)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double dx = x + 0.5 - n.center_x;
        const double dy = y + 0.5 - n.center_y;
        const double u = (c * dx + s * dy) / n.semi_major;
        const double v = (-s * dx + c * dy) / n.semi_minor;
        const double rho = std::sqrt(u * u + v * v);
        if (rho >= 1.0) continue;
        const double taper = std::cos(0.5 * std::numbers::pi * rho);
        double& dst = nuclear[static_cast<std::size_t>(y) * spec.width + x];
        dst = std::max(dst, n.peak * taper * taper);
      }
    }
  }
  for (std::size_t i = 0; i < pixels; ++i) field[i] = std::clamp(std::max(field[i], nuclear[i]), 0.0, 1.0);
  return {Image(spec.width, spec.height, std::move(field)), std::move(nuclei)};
}

struct LabeledImage {
  Image image;
  Diagnosis label = Diagnosis::non_neoplastic;
};

/// Items are grouped by spec; item k (counted across all specs) uses seed
/// base_seed + k.
inline std::vector<LabeledImage> generate_dataset(const std::vector<PhantomSpec>& specs, int count_per_spec,
                                                  std::uint64_t base_seed) {
  require(count_per_spec >= 1, "generate_dataset: count_per_spec must be >= 1");
  std::vector<LabeledImage> out;
  out.reserve(specs.size() * static_cast<std::size_t>(count_per_spec));
  std::uint64_t k = 0;
  for (const PhantomSpec& spec : specs)
    for (int i = 0; i < count_per_spec; ++i, ++k) out.push_back({generate_phantom(spec, base_seed + k).image, spec.label});
  return out;
}

}  // namespace fibersr
