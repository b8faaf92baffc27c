#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fibersr/degrade.hpp"
#include "fibersr/error.hpp"
#include "fibersr/image.hpp"
#include "fibersr/io.hpp"
#include "fibersr/metrics.hpp"
#include "fibersr/phantom.hpp"
#include "fibersr/preprocess.hpp"
#include "fibersr/random.hpp"
#include "fibersr/srcnn.hpp"
#include "fibersr/train.hpp"

namespace fibersr {

// --- profiles and single-image reports ---------------------------------------

/// Intensities of `row` over columns [col_start, col_end).
inline std::vector<double> line_profile(const Image& image, int row, int col_start, int col_end) {
  require(row >= 0 && row < image.height(), "line_profile: row out of bounds");
  require(col_start >= 0 && col_start < col_end && col_end <= image.width(), "line_profile: column range out of bounds");
  const auto r = image.row(row);
  return {r.begin() + col_start, r.begin() + col_end};
}

inline std::string profile_csv(const std::vector<double>& profile, int col_start) {
  std::ostringstream out;
  out << "col,intensity\n";
  for (std::size_t i = 0; i < profile.size(); ++i)
    out << col_start + static_cast<int>(i) << ',' << format_number(profile[i]) << '\n';
  return out.str();
}

/// HR/LR/SR overlay of one row segment.
inline std::string overlay_profile_csv(const Image& hr, const Image& lr, const Image& sr, int row, int col_start,
                                       int col_end) {
  const auto h = line_profile(hr, row, col_start, col_end);
  const auto l = line_profile(lr, row, col_start, col_end);
  const auto s = line_profile(sr, row, col_start, col_end);
  std::ostringstream out;
  out << "col,hr,lr,sr\n";
  for (std::size_t i = 0; i < h.size(); ++i)
    out << col_start + static_cast<int>(i) << ',' << format_number(h[i]) << ',' << format_number(l[i]) << ','
        << format_number(s[i]) << '\n';
  return out.str();
}

struct CompareReport {
  double psnr_lr = 0.0;
  double psnr_sr = 0.0;
  double ssim_lr = 0.0;
  double ssim_sr = 0.0;
  double delta_psnr = 0.0;  // sr - lr; 0 when both are the same (incl. both infinite)
  double delta_ssim = 0.0;
};

inline double metric_delta(double sr, double lr) { return sr == lr ? 0.0 : sr - lr; }

inline CompareReport compare_report(const Image& hr, const Image& lr, const Image& sr) {
  require(hr.width() == lr.width() && hr.height() == lr.height() && hr.width() == sr.width() &&
              hr.height() == sr.height(),
          "compare_report: dimension mismatch");
  CompareReport r;
  r.psnr_lr = psnr(hr, lr);
  r.psnr_sr = psnr(hr, sr);
  r.ssim_lr = ssim(hr, lr);
  r.ssim_sr = ssim(hr, sr);
  r.delta_psnr = metric_delta(r.psnr_sr, r.psnr_lr);
  r.delta_ssim = metric_delta(r.ssim_sr, r.ssim_lr);
  return r;
}

inline constexpr const char* kCompareHeader = "psnr_lr_db,psnr_sr_db,ssim_lr,ssim_sr,delta_psnr_db,delta_ssim";

inline std::string compare_csv_line(const CompareReport& r) {
  return format_number(r.psnr_lr) + ',' + format_number(r.psnr_sr) + ',' + format_number(r.ssim_lr) + ',' +
         format_number(r.ssim_sr) + ',' + format_number(r.delta_psnr) + ',' + format_number(r.delta_ssim);
}

// --- sweep configuration -------------------------------------------------------

struct SweepBaseline {
  double fiber_diameter_um = 6.0;
  double inter_fiber_distance_um = 12.0;
  double offset_um = 2.0;  // one pixel at 2 um
};

struct SweepGrids {
  std::vector<double> offset_um;
  std::vector<double> inter_fiber_distance_um;
  std::vector<double> fiber_diameter_um;
};

/// Both class presets on the full 1280 x 960 canvas.
inline std::vector<PhantomSpec> full_canvas_phantoms() {
  std::vector<PhantomSpec> out{non_neoplastic_preset(), neoplastic_preset()};
  for (auto& s : out) {
    s.width = 1280;
    s.height = 960;
  }
  return out;
}

struct SweepConfig {
  std::vector<PhantomSpec> phantoms = full_canvas_phantoms();
  int train_count = 206;
  int val_count = 50;
  int test_count = 300;
  double pixel_size_um = 2.0;
  bool preprocess_hr = false;
  PreprocessConfig preprocess{};
  SweepGrids grids;
  SweepBaseline baseline;
  TrainConfig train;
  std::uint64_t base_seed = 20240601;
  int sample_images = 1;  // test images exported as hr/lr/sr PGM triples per cell
  std::string output_dir;
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                                const std::string& where) {
  require(j.is_object(), where + ": expected a JSON object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items())
    if (!ok.count(key)) throw Error(where + ": unknown key '" + key + "'");
}

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& dst, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(where + ": field '" + key + "' has the wrong type");
  }
}

inline PhantomSpec phantom_from_json(const nlohmann::json& j, const std::string& where) {
  reject_unknown_keys(j,
                      {"preset", "width", "height", "nuclei_per_megapixel", "radius_min_px", "radius_max_px",
                       "intensity_min", "intensity_max", "background_level", "background_noise_sd",
                       "eccentricity_max", "label"},
                      where);
  PhantomSpec s;
  if (j.contains("preset")) {
    const std::string p = j.at("preset").get<std::string>();
    if (p == "neoplastic") s = neoplastic_preset();
    else if (p == "non_neoplastic") s = non_neoplastic_preset();
    else throw Error(where + ": unknown preset '" + p + "'");
  }
  read_field(j, "width", s.width, where);
  read_field(j, "height", s.height, where);
  read_field(j, "nuclei_per_megapixel", s.nuclei_per_megapixel, where);
  read_field(j, "radius_min_px", s.radius_min_px, where);
  read_field(j, "radius_max_px", s.radius_max_px, where);
  read_field(j, "intensity_min", s.intensity_min, where);
  read_field(j, "intensity_max", s.intensity_max, where);
  read_field(j, "background_level", s.background_level, where);
  read_field(j, "background_noise_sd", s.background_noise_sd, where);
  read_field(j, "eccentricity_max", s.eccentricity_max, where);
  if (j.contains("label")) s.label = parse_diagnosis(j.at("label").get<std::string>());
  try {
    s.validate();
  } catch (const Error& e) {
    throw Error(where + ": " + e.what());
  }
  return s;
}

}  // namespace detail

inline SweepConfig parse_sweep_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(std::string("sweep config: invalid JSON: ") + e.what());
  }
  const std::string where = "sweep config";
  detail::reject_unknown_keys(j,
                              {"phantoms", "train_count", "val_count", "test_count", "pixel_size_um",
                               "preprocess_hr", "preprocess", "grids", "baseline", "train", "base_seed",
                               "sample_images", "output_dir"},
                              where);
  SweepConfig c;
  if (j.contains("phantoms")) {
    require(j.at("phantoms").is_array() && !j.at("phantoms").empty(), where + ": phantoms must be a non-empty array");
    c.phantoms.clear();
    int i = 0;
    for (const auto& p : j.at("phantoms"))
      c.phantoms.push_back(detail::phantom_from_json(p, where + ": phantoms[" + std::to_string(i++) + "]"));
  }
  detail::read_field(j, "train_count", c.train_count, where);
  detail::read_field(j, "val_count", c.val_count, where);
  detail::read_field(j, "test_count", c.test_count, where);
  detail::read_field(j, "pixel_size_um", c.pixel_size_um, where);
  detail::read_field(j, "preprocess_hr", c.preprocess_hr, where);
  detail::read_field(j, "base_seed", c.base_seed, where);
  detail::read_field(j, "sample_images", c.sample_images, where);
  detail::read_field(j, "output_dir", c.output_dir, where);
  if (j.contains("preprocess")) {
    const auto& p = j.at("preprocess");
    const std::string w = where + ": preprocess";
    detail::reject_unknown_keys(p, {"gaussian_sigma_px", "clahe_clip_limit", "clahe_tile_rows", "clahe_tile_cols",
                                    "clahe_bins"},
                                w);
    detail::read_field(p, "gaussian_sigma_px", c.preprocess.gaussian_sigma_px, w);
    detail::read_field(p, "clahe_clip_limit", c.preprocess.clahe_clip_limit, w);
    detail::read_field(p, "clahe_tile_rows", c.preprocess.clahe_tile_rows, w);
    detail::read_field(p, "clahe_tile_cols", c.preprocess.clahe_tile_cols, w);
    detail::read_field(p, "clahe_bins", c.preprocess.clahe_bins, w);
  }
  if (j.contains("grids")) {
    const auto& g = j.at("grids");
    const std::string w = where + ": grids";
    detail::reject_unknown_keys(g, {"offset_um", "inter_fiber_distance_um", "fiber_diameter_um"}, w);
    detail::read_field(g, "offset_um", c.grids.offset_um, w);
    detail::read_field(g, "inter_fiber_distance_um", c.grids.inter_fiber_distance_um, w);
    detail::read_field(g, "fiber_diameter_um", c.grids.fiber_diameter_um, w);
  }
  if (j.contains("baseline")) {
    const auto& b = j.at("baseline");
    const std::string w = where + ": baseline";
    detail::reject_unknown_keys(b, {"fiber_diameter_um", "inter_fiber_distance_um", "offset_um"}, w);
    detail::read_field(b, "fiber_diameter_um", c.baseline.fiber_diameter_um, w);
    detail::read_field(b, "inter_fiber_distance_um", c.baseline.inter_fiber_distance_um, w);
    detail::read_field(b, "offset_um", c.baseline.offset_um, w);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    const std::string w = where + ": train";
    detail::reject_unknown_keys(t,
                                {"learning_rate", "epochs", "batch_size", "patch_size", "patches_per_image",
                                 "adam_beta1", "adam_beta2", "adam_eps", "validation_interval", "init_std",
                                 "lrelu_slope"},
                                w);
    detail::read_field(t, "learning_rate", c.train.learning_rate, w);
    detail::read_field(t, "epochs", c.train.epochs, w);
    detail::read_field(t, "batch_size", c.train.batch_size, w);
    detail::read_field(t, "patch_size", c.train.patch_size, w);
    detail::read_field(t, "patches_per_image", c.train.patches_per_image, w);
    detail::read_field(t, "adam_beta1", c.train.adam_beta1, w);
    detail::read_field(t, "adam_beta2", c.train.adam_beta2, w);
    detail::read_field(t, "adam_eps", c.train.adam_eps, w);
    detail::read_field(t, "validation_interval", c.train.validation_interval, w);
    detail::read_field(t, "init_std", c.train.init_std, w);
    detail::read_field(t, "lrelu_slope", c.train.lrelu_slope, w);
  }
  return c;
}

// --- grid cells ------------------------------------------------------------------

enum class SweepAxis { offset, inter_fiber_distance, fiber_diameter };

inline std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::offset: return "offset";
    case SweepAxis::inter_fiber_distance: return "inter_fiber_distance";
    case SweepAxis::fiber_diameter: return "fiber_diameter";
  }
  return "offset";
}

struct SweepCell {
  SweepAxis axis = SweepAxis::offset;
  std::size_t value_index = 0;
  double m_um = 0.0;
  double s_um = 0.0;
  double d_um = 0.0;
  std::uint64_t seed = 0;

  std::string name() const {
    return to_string(axis) + "_m" + format_number(m_um) + "_s" + format_number(s_um) + "_d" + format_number(d_um);
  }
};

/// Offset axis, then inter-fiber distance, then fiber diameter; each varies
/// one parameter with the other two at the baseline.
inline std::vector<SweepCell> enumerate_cells(const SweepConfig& c) {
  std::vector<SweepCell> cells;
  auto add = [&](SweepAxis axis, const std::vector<double>& values) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      SweepCell cell{axis, i, c.baseline.fiber_diameter_um, c.baseline.inter_fiber_distance_um, c.baseline.offset_um, 0};
      if (axis == SweepAxis::offset) cell.d_um = values[i];
      if (axis == SweepAxis::inter_fiber_distance) cell.s_um = values[i];
      if (axis == SweepAxis::fiber_diameter) cell.m_um = values[i];
      cell.seed = derive_seed(c.base_seed, {static_cast<std::uint64_t>(axis) + 1, i});
      cells.push_back(cell);
    }
  };
  add(SweepAxis::offset, c.grids.offset_um);
  add(SweepAxis::inter_fiber_distance, c.grids.inter_fiber_distance_um);
  add(SweepAxis::fiber_diameter, c.grids.fiber_diameter_um);
  return cells;
}

inline DegradationConfig cell_degradation(const SweepConfig& c, const SweepCell& cell) {
  return {c.pixel_size_um, cell.m_um, cell.s_um, cell.d_um, cell.seed};
}

/// Rejects the whole configuration, naming the first offending cell, before
/// any data is generated.
inline void validate_sweep(const SweepConfig& c) {
  require(c.train_count >= 1 && c.val_count >= 1 && c.test_count >= 1, "sweep config: dataset counts must be >= 1");
  require(!c.phantoms.empty(), "sweep config: at least one phantom spec is required");
  require(c.sample_images >= 0, "sweep config: sample_images must be >= 0");
  c.preprocess.validate();
  try {
    c.train.validate();
  } catch (const Error& e) {
    throw Error(std::string("sweep config: ") + e.what());
  }
  const auto cells = enumerate_cells(c);
  require(!cells.empty(), "sweep config: all grids are empty");
  for (const auto& spec : c.phantoms) {
    spec.validate();
    require(c.train.patch_size <= std::min(spec.width, spec.height),
            "sweep config: train.patch_size exceeds the phantom size");
  }
  for (std::size_t i = 0; i < cells.size(); ++i) {
    try {
      const auto dc = cell_degradation(c, cells[i]);
      dc.validate();
      for (const auto& spec : c.phantoms) grid_geometry(dc, spec.width, spec.height);
    } catch (const Error& e) {
      throw Error("sweep config: invalid cell " + std::to_string(i) + " (" + cells[i].name() + "): " + e.what());
    }
  }
}

// --- results -------------------------------------------------------------------

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // unbiased; 0 for a single value
};

/// Mean and unbiased standard deviation. Infinite entries (identical-image
/// PSNR) give an infinite mean; the spread is 0 when every entry is the same
/// infinity and infinite when finite and infinite entries mix.
inline MeanStd mean_std(const std::vector<double>& v) {
  require(!v.empty(), "mean_std: empty");
  std::size_t infinite = 0;
  for (double x : v)
    if (std::isinf(x)) ++infinite;
  if (infinite > 0) {
    const double inf = std::numeric_limits<double>::infinity();
    return {inf, infinite == v.size() ? 0.0 : inf};
  }
  double s = 0.0;
  for (double x : v) s += x;
  const double mean = s / static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double q = 0.0;
  for (double x : v) q += (x - mean) * (x - mean);
  return {mean, std::sqrt(q / static_cast<double>(v.size() - 1))};
}

struct ResultRow {
  SweepAxis axis = SweepAxis::offset;
  double m_um = 0.0;
  double s_um = 0.0;
  double d_um = 0.0;
  std::uint64_t seed = 0;
  MeanStd psnr_lr, psnr_sr, ssim_lr, ssim_sr;
  int best_epoch = 0;
  double train_seconds = 0.0;  // not part of the results CSV (not reproducible)
};

inline constexpr const char* kResultsHeader =
    "axis,m_um,s_um,d_um,seed,psnr_lr_mean,psnr_lr_std,psnr_sr_mean,psnr_sr_std,ssim_lr_mean,ssim_lr_std,"
    "ssim_sr_mean,ssim_sr_std,best_epoch";

inline std::string results_csv(const std::vector<ResultRow>& rows) {
  std::ostringstream out;
  out << kResultsHeader << '\n';
  for (const auto& r : rows)
    out << to_string(r.axis) << ',' << format_number(r.m_um) << ',' << format_number(r.s_um) << ','
        << format_number(r.d_um) << ',' << r.seed << ',' << format_number(r.psnr_lr.mean) << ','
        << format_number(r.psnr_lr.std) << ',' << format_number(r.psnr_sr.mean) << ',' << format_number(r.psnr_sr.std)
        << ',' << format_number(r.ssim_lr.mean) << ',' << format_number(r.ssim_lr.std) << ','
        << format_number(r.ssim_sr.mean) << ',' << format_number(r.ssim_sr.std) << ',' << r.best_epoch << '\n';
  return out.str();
}

inline std::string timings_csv(const std::vector<ResultRow>& rows) {
  std::ostringstream out;
  out << "axis,m_um,s_um,d_um,train_seconds\n";
  for (const auto& r : rows)
    out << to_string(r.axis) << ',' << format_number(r.m_um) << ',' << format_number(r.s_um) << ','
        << format_number(r.d_um) << ',' << format_number(r.train_seconds) << '\n';
  return out.str();
}

// --- datasets ------------------------------------------------------------------

enum class Split : std::uint64_t { train = 1, validation = 2, test = 3 };

/// HR phantoms for one split. Item k uses spec k mod |specs| and a seed
/// derived from (base_seed, split, k), so every cell sees the same HR images.
inline std::vector<Image> sweep_hr_images(const SweepConfig& c, Split split, int count, int threads = 1) {
  std::vector<Image> out(static_cast<std::size_t>(count));
  parallel_for(out.size(), threads, [&](std::size_t k) {
    const PhantomSpec& spec = c.phantoms[k % c.phantoms.size()];
    Image img = generate_phantom(spec, derive_seed(c.base_seed, {0x9a7, static_cast<std::uint64_t>(split), k})).image;
    out[k] = c.preprocess_hr ? preprocess(img, c.preprocess) : std::move(img);
  });
  return out;
}

/// LR partners for one split; image k is degraded with a generator seeded
/// from (cell seed, split, k).
inline std::vector<ImagePair> degrade_split(const std::vector<Image>& hr, const DegradationConfig& dc, Split split,
                                            int threads = 1) {
  std::vector<ImagePair> out(hr.size());
  parallel_for(hr.size(), threads, [&](std::size_t k) {
    Rng rng(derive_seed(dc.seed, {static_cast<std::uint64_t>(split), k}));
    out[k] = {degrade(hr[k], dc, rng).lr, hr[k]};
  });
  return out;
}

struct SweepHooks {
  std::function<void(std::size_t index, std::size_t total, const SweepCell&)> on_cell_start;
};

struct SweepOutcome {
  std::vector<ResultRow> rows;
};

inline nlohmann::json sweep_metadata(const SweepConfig& c, const std::vector<SweepCell>& cells) {
  nlohmann::json j;
  j["base_seed"] = c.base_seed;
  j["pixel_size_um"] = c.pixel_size_um;
  j["counts"] = {{"train", c.train_count}, {"validation", c.val_count}, {"test", c.test_count}};
  j["baseline"] = {{"fiber_diameter_um", c.baseline.fiber_diameter_um},
                   {"inter_fiber_distance_um", c.baseline.inter_fiber_distance_um},
                   {"offset_um", c.baseline.offset_um}};
  j["baseline_note"] =
      "Each axis is swept with the other two parameters held at the baseline. The held-fixed values are an "
      "assumption of this toolkit.";
  j["train"] = {{"learning_rate", c.train.learning_rate}, {"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},       {"patch_size", c.train.patch_size},
                {"patches_per_image", c.train.patches_per_image}, {"validation_interval", c.train.validation_interval},
                {"init_std", c.train.init_std},           {"lrelu_slope", c.train.lrelu_slope}};
  j["preprocess_hr"] = c.preprocess_hr;
  nlohmann::json list = nlohmann::json::array();
  for (std::size_t i = 0; i < cells.size(); ++i)
    list.push_back({{"index", i},
                    {"name", cells[i].name()},
                    {"axis", to_string(cells[i].axis)},
                    {"m_um", cells[i].m_um},
                    {"s_um", cells[i].s_um},
                    {"d_um", cells[i].d_um},
                    {"seed", cells[i].seed}});
  j["cells"] = list;
  return j;
}

/// Runs every cell: degrade the shared HR splits, train a fresh model, score
/// the test split. When out_dir is non-empty, writes results.csv,
/// timings.csv, metadata.json and one directory per cell (weights, training
/// history, sample hr/lr/sr PGM triples, line profiles). `threads` never
/// changes any number in results.csv.
inline SweepOutcome run_sweep(const SweepConfig& c, const std::filesystem::path& out_dir, int threads = 1,
                              const SweepHooks& hooks = {}) {
  validate_sweep(c);
  threads = resolve_threads(threads);
  const auto cells = enumerate_cells(c);
  namespace fs = std::filesystem;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_file_atomic(out_dir / "metadata.json", sweep_metadata(c, cells).dump(2) + "\n");
  }

  const auto hr_train = sweep_hr_images(c, Split::train, c.train_count, threads);
  const auto hr_val = sweep_hr_images(c, Split::validation, c.val_count, threads);
  const auto hr_test = sweep_hr_images(c, Split::test, c.test_count, threads);

  SweepOutcome outcome;
  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    const SweepCell& cell = cells[ci];
    if (hooks.on_cell_start) hooks.on_cell_start(ci, cells.size(), cell);
    const DegradationConfig dc = cell_degradation(c, cell);
    const auto train_pairs = degrade_split(hr_train, dc, Split::train, threads);
    const auto val_pairs = degrade_split(hr_val, dc, Split::validation, threads);
    const auto test_pairs = degrade_split(hr_test, dc, Split::test, threads);

    TrainConfig tc = c.train;
    tc.seed = derive_seed(cell.seed, {0x7a1});
    tc.threads = threads;
    const auto t0 = std::chrono::steady_clock::now();
    const TrainResult trained = train(train_pairs, val_pairs, tc);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    std::vector<Image> sr(test_pairs.size());
    std::vector<CompareReport> reports(test_pairs.size());
    parallel_for(test_pairs.size(), threads, [&](std::size_t k) {
      sr[k] = infer(trained.model, test_pairs[k].lr);
      reports[k] = compare_report(test_pairs[k].hr, test_pairs[k].lr, sr[k]);
    });
    std::vector<double> pl, ps, sl, ss;
    for (const auto& r : reports) {
      pl.push_back(r.psnr_lr);
      ps.push_back(r.psnr_sr);
      sl.push_back(r.ssim_lr);
      ss.push_back(r.ssim_sr);
    }
    ResultRow row{cell.axis, cell.m_um, cell.s_um, cell.d_um, cell.seed, mean_std(pl), mean_std(ps), mean_std(sl),
                  mean_std(ss), trained.best_epoch, seconds};
    outcome.rows.push_back(row);

    if (!out_dir.empty()) {
      const fs::path dir = out_dir / "cells" / (std::to_string(ci) + "_" + cell.name());
      write_file_atomic(dir / "weights.srcw", save_weights(trained.model));
      write_file_atomic(dir / "history.csv", history_csv(trained.history));
      std::ostringstream per_image;
      per_image << "test_index," << kCompareHeader << '\n';
      for (std::size_t k = 0; k < reports.size(); ++k) per_image << k << ',' << compare_csv_line(reports[k]) << '\n';
      write_file_atomic(dir / "test_metrics.csv", per_image.str());
      const auto samples = std::min<std::size_t>(static_cast<std::size_t>(c.sample_images), test_pairs.size());
      for (std::size_t k = 0; k < samples; ++k) {
        const std::string tag = "test" + std::to_string(k);
        const Image& hr = test_pairs[k].hr;
        write_pgm(dir / (tag + "_hr.pgm"), hr);
        write_pgm(dir / (tag + "_lr.pgm"), test_pairs[k].lr);
        write_pgm(dir / (tag + "_sr.pgm"), sr[k]);
        write_file_atomic(dir / (tag + "_profile.csv"),
                          overlay_profile_csv(hr, test_pairs[k].lr, sr[k], hr.height() / 2, 0, hr.width()));
      }
      // Rewritten after every cell so an interrupted sweep keeps its rows.
      write_file_atomic(out_dir / "results.csv", results_csv(outcome.rows));
      write_file_atomic(out_dir / "timings.csv", timings_csv(outcome.rows));
    }
  }
  return outcome;
}

}  // namespace fibersr
