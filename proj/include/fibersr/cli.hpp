#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fibersr/degrade.hpp"
#include "fibersr/error.hpp"
#include "fibersr/harness.hpp"
#include "fibersr/image.hpp"
#include "fibersr/io.hpp"
#include "fibersr/metrics.hpp"
#include "fibersr/phantom.hpp"
#include "fibersr/preprocess.hpp"
#include "fibersr/readerstats.hpp"
#include "fibersr/srcnn.hpp"
#include "fibersr/train.hpp"

namespace fibersr::cli {

namespace fs = std::filesystem;

/// Seed used when --seed is not given.
inline constexpr std::uint64_t kDefaultSeed = 20240601;

struct GlobalOptions {
  std::uint64_t seed = kDefaultSeed;
  int threads = 0;  // 0 = all hardware threads; never changes results
  int verbosity = 1;
};

namespace detail {

inline std::vector<fs::path> list_pgms(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".pgm") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

/// Pairs <dir>/hr/NAME.pgm with <dir>/lr/NAME.pgm.
inline std::vector<ImagePair> load_pairs(const fs::path& dir) {
  const fs::path hr_dir = dir / "hr";
  const fs::path lr_dir = dir / "lr";
  require(fs::is_directory(hr_dir) && fs::is_directory(lr_dir),
          "dataset '" + dir.string() + "' must contain hr/ and lr/ subdirectories");
  std::vector<ImagePair> out;
  for (const auto& hr_path : list_pgms(hr_dir)) {
    const fs::path lr_path = lr_dir / hr_path.filename();
    require(fs::exists(lr_path), "missing LR partner '" + lr_path.string() + "'");
    out.push_back({read_pgm(lr_path), read_pgm(hr_path)});
  }
  require(!out.empty(), "dataset '" + dir.string() + "' has no hr/*.pgm images");
  return out;
}

inline std::pair<int, int> parse_grid(const std::string& s) {
  const auto x = s.find_first_of("x,");
  require(x != std::string::npos, "tile grid must look like ROWSxCOLS");
  try {
    return {std::stoi(s.substr(0, x)), std::stoi(s.substr(x + 1))};
  } catch (const std::exception&) {
    throw Error("tile grid must look like ROWSxCOLS");
  }
}

}  // namespace detail

/// Runs one command line (without the program name). Returns 0 on success,
/// 1 on usage errors (help goes to `err`), 2 on data or validation errors.
inline int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Fiber-probe degradation, SRCNN super-resolution and reader-study statistics", "fibersr"};
  app.fallthrough();
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--seed", g.seed, "Base seed for every random draw")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads (0 = all cores); results do not depend on it")
      ->capture_default_str();
  app.add_option("--verbosity", g.verbosity, "0 = quiet, 1 = progress, 2 = detail")->capture_default_str();

  std::function<void()> action;

  // phantom
  auto* ph = app.add_subcommand("phantom", "Generate synthetic nuclei images");
  std::string ph_preset = "non_neoplastic";
  int ph_w = 128, ph_h = 128, ph_count = 1;
  std::optional<double> ph_density, ph_noise;
  std::string ph_out, ph_centers;
  ph->add_option("--preset", ph_preset, "neoplastic | non_neoplastic")->capture_default_str();
  ph->add_option("--width", ph_w)->capture_default_str();
  ph->add_option("--height", ph_h)->capture_default_str();
  ph->add_option("--density", ph_density, "Nuclei per megapixel (overrides the preset)");
  ph->add_option("--noise-sd", ph_noise, "Background noise sd (overrides the preset)");
  ph->add_option("--count", ph_count, "Images to generate; > 1 writes a directory")->capture_default_str();
  ph->add_option("--centers", ph_centers, "CSV of placed nuclei (single image only)");
  ph->add_option("output", ph_out, "Output PGM (or directory when --count > 1)")->required();
  ph->callback([&] {
    action = [&] {
      require(ph_preset == "neoplastic" || ph_preset == "non_neoplastic", "unknown preset '" + ph_preset + "'");
      PhantomSpec spec = ph_preset == "neoplastic" ? neoplastic_preset() : non_neoplastic_preset();
      spec.width = ph_w;
      spec.height = ph_h;
      if (ph_density) spec.nuclei_per_megapixel = *ph_density;
      if (ph_noise) spec.background_noise_sd = *ph_noise;
      require(ph_count >= 1, "--count must be >= 1");
      if (ph_count == 1) {
        const Phantom p = generate_phantom(spec, g.seed);
        write_pgm(ph_out, p.image);
        if (!ph_centers.empty()) {
          std::ostringstream c;
          c << "center_x,center_y,semi_major,semi_minor,angle,peak\n";
          for (const auto& n : p.nuclei)
            c << format_number(n.center_x) << ',' << format_number(n.center_y) << ',' << format_number(n.semi_major)
              << ',' << format_number(n.semi_minor) << ',' << format_number(n.angle) << ','
              << format_number(n.peak) << '\n';
          write_file_atomic(ph_centers, c.str());
        }
        return;
      }
      const auto items = generate_dataset({spec}, ph_count, g.seed);
      for (std::size_t k = 0; k < items.size(); ++k) {
        char name[32];
        std::snprintf(name, sizeof name, "phantom_%04zu.pgm", k);
        write_pgm(fs::path(ph_out) / name, items[k].image);
      }
    };
  });

  // preprocess
  auto* pp = app.add_subcommand("preprocess", "Gaussian smoothing followed by CLAHE");
  PreprocessConfig pcfg;
  std::string pp_tiles = "8x8", pp_in, pp_out;
  pp->add_option("--sigma", pcfg.gaussian_sigma_px)->capture_default_str();
  pp->add_option("--clip-limit", pcfg.clahe_clip_limit)->capture_default_str();
  pp->add_option("--tiles", pp_tiles, "CLAHE tile grid ROWSxCOLS")->capture_default_str();
  pp->add_option("--bins", pcfg.clahe_bins)->capture_default_str();
  pp->add_option("input", pp_in)->required();
  pp->add_option("output", pp_out)->required();
  pp->callback([&] {
    action = [&] {
      const auto [r, c] = detail::parse_grid(pp_tiles);
      pcfg.clahe_tile_rows = r;
      pcfg.clahe_tile_cols = c;
      write_pgm(pp_out, preprocess(read_pgm(pp_in), pcfg));
    };
  });

  // degrade
  auto* dg = app.add_subcommand("degrade", "Simulate the fiber-probe LR image");
  DegradationConfig dcfg;
  std::optional<std::uint64_t> dg_seed;
  std::string dg_in, dg_out, dg_sparse, dg_samples;
  dg->add_option("--pixel-size", dcfg.pixel_size_um, "um per pixel")->capture_default_str();
  dg->add_option("--fiber-diameter", dcfg.fiber_diameter_um, "m in um")->capture_default_str();
  dg->add_option("--inter-fiber-distance", dcfg.inter_fiber_distance_um, "s in um")->capture_default_str();
  dg->add_option("--max-offset", dcfg.max_offset_um, "d in um")->capture_default_str();
  dg->add_option("--seed", dg_seed, "Offset seed (defaults to the global --seed)");
  dg->add_option("--emit-sparse", dg_sparse, "Also write the sparse image (file or directory)");
  dg->add_option("--samples", dg_samples, "Also write the per-fiber sample log (file or directory)");
  dg->add_option("input", dg_in, "Input PGM or directory of PGMs")->required();
  dg->add_option("output", dg_out, "Output PGM or directory")->required();
  dg->callback([&] {
    action = [&] {
      dcfg.seed = dg_seed.value_or(g.seed);
      dcfg.validate();
      auto one = [&](const fs::path& in, const fs::path& lr_path, const fs::path& sparse_path,
                     const fs::path& samples_path, std::uint64_t seed) {
        DegradationConfig c = dcfg;
        c.seed = seed;
        const DegradedPair d = degrade(read_pgm(in), c);
        write_pgm(lr_path, d.lr);
        if (!sparse_path.empty()) write_pgm(sparse_path, d.sparse);
        if (!samples_path.empty()) write_file_atomic(samples_path, samples_csv(d.samples));
      };
      if (!fs::is_directory(dg_in)) {
        one(dg_in, dg_out, dg_sparse, dg_samples, dcfg.seed);
        return;
      }
      // Directory mode: file k (sorted by name) uses a seed derived from (seed, k).
      const auto files = detail::list_pgms(dg_in);
      require(!files.empty(), "no .pgm files in '" + dg_in + "'");
      for (std::size_t k = 0; k < files.size(); ++k) {
        const auto name = files[k].filename();
        fs::path samples_path;
        if (!dg_samples.empty()) samples_path = fs::path(dg_samples) / name.stem().concat(".csv");
        one(files[k], fs::path(dg_out) / name, dg_sparse.empty() ? fs::path() : fs::path(dg_sparse) / name,
            samples_path, derive_seed(dcfg.seed, {k}));
      }
    };
  });

  // train
  auto* tr = app.add_subcommand("train", "Train an SRCNN model from paired images");
  TrainConfig tcfg;
  std::string tr_data, tr_val, tr_weights, tr_history;
  tr->add_option("--data", tr_data, "Training set directory with hr/ and lr/ subdirectories")->required();
  tr->add_option("--val", tr_val, "Validation set directory (same layout)")->required();
  tr->add_option("--weights", tr_weights, "Output weights file")->required();
  tr->add_option("--history", tr_history, "Output per-epoch loss CSV");
  tr->add_option("--lr", tcfg.learning_rate)->capture_default_str();
  tr->add_option("--epochs", tcfg.epochs)->capture_default_str();
  tr->add_option("--batch-size", tcfg.batch_size)->capture_default_str();
  tr->add_option("--patch-size", tcfg.patch_size)->capture_default_str();
  tr->add_option("--patches-per-image", tcfg.patches_per_image)->capture_default_str();
  tr->add_option("--validation-interval", tcfg.validation_interval)->capture_default_str();
  tr->add_option("--init-std", tcfg.init_std)->capture_default_str();
  tr->add_option("--slope", tcfg.lrelu_slope, "LReLU negative slope")->capture_default_str();
  tr->callback([&] {
    action = [&] {
      tcfg.seed = g.seed;
      tcfg.threads = g.threads;
      const auto train_pairs = detail::load_pairs(tr_data);
      const auto val_pairs = detail::load_pairs(tr_val);
      if (g.verbosity >= 1)
        err << "training on " << train_pairs.size() << " pairs, validating on " << val_pairs.size() << "\n";
      const TrainResult r = train(train_pairs, val_pairs, tcfg);
      write_file_atomic(tr_weights, save_weights(r.model));
      if (!tr_history.empty()) write_file_atomic(tr_history, history_csv(r.history));
      if (g.verbosity >= 1)
        err << "best validation MSE " << format_number(r.best_val_mse) << " at epoch " << r.best_epoch << "\n";
    };
  });

  // infer
  auto* in = app.add_subcommand("infer", "Super-resolve an LR image");
  std::string in_weights, in_in, in_out;
  in->add_option("--weights", in_weights)->required();
  in->add_option("input", in_in)->required();
  in->add_option("output", in_out)->required();
  in->callback([&] {
    action = [&] {
      const auto model = load_weights<float>(read_file(in_weights));
      write_pgm(in_out, infer(model, read_pgm(in_in), resolve_threads(g.threads)));
    };
  });

  // metrics
  auto* mt = app.add_subcommand("metrics", "PSNR (dB) and SSIM of a test image against a reference");
  std::string mt_ref, mt_test;
  bool mt_header = false;
  mt->add_flag("--header", mt_header, "Print the psnr_db,ssim header line first");
  mt->add_option("reference", mt_ref)->required();
  mt->add_option("test", mt_test)->required();
  mt->callback([&] {
    action = [&] {
      const Image a = read_pgm(mt_ref);
      const Image b = read_pgm(mt_test);
      if (mt_header) out << "psnr_db,ssim\n";
      out << format_number(psnr(a, b)) << ',' << format_number(ssim(a, b)) << '\n';
    };
  });

  // sweep
  auto* sw = app.add_subcommand("sweep", "Run a degradation-parameter sweep");
  std::string sw_config, sw_out;
  sw->add_option("--config", sw_config, "Sweep configuration (JSON)")->required();
  sw->add_option("--out", sw_out, "Output directory (overrides output_dir in the config)");
  sw->callback([&] {
    action = [&] {
      const SweepConfig c = parse_sweep_config(read_text_file(sw_config));
      const std::string dir = sw_out.empty() ? c.output_dir : sw_out;
      require(!dir.empty(), "no output directory: pass --out or set output_dir");
      SweepHooks hooks;
      if (g.verbosity >= 1)
        hooks.on_cell_start = [&](std::size_t i, std::size_t n, const SweepCell& cell) {
          err << "[" << i + 1 << "/" << n << "] " << cell.name() << "\n";
        };
      run_sweep(c, dir, g.threads, hooks);
    };
  });

  // profile
  auto* pr = app.add_subcommand("profile", "Intensity profile along one image row");
  std::string pr_in, pr_out;
  int pr_row = 0, pr_c0 = 0;
  std::optional<int> pr_c1;
  pr->add_option("--row", pr_row)->required();
  pr->add_option("--col-start", pr_c0)->capture_default_str();
  pr->add_option("--col-end", pr_c1, "Exclusive end column (default: image width)");
  pr->add_option("--out", pr_out, "Output CSV (default: standard output)");
  pr->add_option("input", pr_in)->required();
  pr->callback([&] {
    action = [&] {
      const Image img = read_pgm(pr_in);
      const int c1 = pr_c1.value_or(img.width());
      const std::string csv = profile_csv(line_profile(img, pr_row, pr_c0, c1), pr_c0);
      if (pr_out.empty()) out << csv;
      else write_file_atomic(pr_out, csv);
    };
  });

  // readerstats
  auto* rs = app.add_subcommand("readerstats", "Diagnostic performance and HR/SR t-tests from read records");
  std::string rs_reads, rs_out;
  bool rs_welch = false;
  rs->add_option("--reads", rs_reads, "Read-record CSV")->required();
  rs->add_option("--out", rs_out, "Output directory")->required();
  rs->add_flag("--welch", rs_welch, "Welch t-test instead of pooled variance");
  rs->callback([&] {
    action = [&] {
      const auto records = parse_reads_csv(read_text_file(rs_reads));
      const StudyReport rep = study_report(records, rs_welch);
      write_file_atomic(fs::path(rs_out) / "per_reader.csv", per_reader_csv(rep));
      write_file_atomic(fs::path(rs_out) / "confidence.csv", confidence_csv(rep));
      write_file_atomic(fs::path(rs_out) / "tests.csv", tests_csv(rep));
    };
  });

  // samplesize
  auto* ss = app.add_subcommand("samplesize", "Per-arm sample size for equivalence of two proportions");
  double ss_power = 0.8, ss_alpha = 0.05, ss_limit = 0.15, ss_p = 0.7;
  ss->add_option("--power", ss_power)->capture_default_str();
  ss->add_option("--alpha", ss_alpha)->capture_default_str();
  ss->add_option("--limit", ss_limit, "Equivalence limit")->capture_default_str();
  ss->add_option("--p", ss_p, "Assumed proportion in both arms")->capture_default_str();
  ss->callback([&] { action = [&] { out << equivalence_sample_size(ss_power, ss_alpha, ss_limit, ss_p) << '\n'; }; });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return 1;
  }

  try {
    if (action) action();
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
  } catch (const std::bad_alloc&) {
    err << "error: out of memory\n";
  }
  return 2;
}

}  // namespace fibersr::cli
