#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fibersr/error.hpp"
#include "fibersr/image.hpp"
#include "fibersr/io.hpp"
#include "fibersr/parallel.hpp"
#include "fibersr/random.hpp"
#include "fibersr/srcnn.hpp"

namespace fibersr {

struct TrainConfig {
  double learning_rate = 1e-4;
  int epochs = 300;
  int batch_size = 8;
  int patch_size = 512;
  int patches_per_image = 10;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  int validation_interval = 1;
  double init_std = 1e-3;
  double lrelu_slope = 0.01;
  Architecture architecture{};
  int threads = 1;  // never changes results

  void validate() const {
    require(learning_rate > 0.0, "TrainConfig: learning_rate must be > 0");
    require(epochs >= 1 && batch_size >= 1 && patch_size >= 1 && patches_per_image >= 1 && validation_interval >= 1,
            "TrainConfig: counts must be >= 1");
    require(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0,
            "TrainConfig: Adam betas must lie in [0,1)");
    require(adam_eps > 0.0, "TrainConfig: adam_eps must be > 0");
    require(init_std > 0.0, "TrainConfig: init_std must be > 0");
  }

  AdamConfig adam() const { return {learning_rate, adam_beta1, adam_beta2, adam_eps}; }
};

struct ImagePair {
  Image lr;
  Image hr;
};

struct EpochRecord {
  int epoch = 0;
  std::optional<double> train_mse;  // absent for epoch 0 (the initial model)
  std::optional<double> val_mse;    // absent between validation epochs
};

struct TrainResult {
  SrcnnModel<float> model;  // snapshot with the lowest validation MSE
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_mse = 0.0;
};

/// Mean squared error of the unclamped network output over full frames,
/// averaged over every pixel of every pair.
inline double validation_mse(const SrcnnModel<float>& model, const std::vector<ImagePair>& pairs, int threads = 1) {
  require(!pairs.empty(), "validation_mse: empty set");
  std::vector<double> sums(pairs.size());
  std::size_t count = 0;
  for (const auto& p : pairs) count += p.hr.size();
  const int outer = std::min<int>(threads, static_cast<int>(pairs.size()));
  const int inner = std::max(1, threads / std::max(outer, 1));
  parallel_for(pairs.size(), outer, [&](std::size_t i) {
    const auto pred = predict(model, pairs[i].lr, inner);
    const auto hr = pairs[i].hr.pixels();
    double s = 0.0;
    for (std::size_t j = 0; j < pred.size(); ++j) {
      const double d = pred[j] - hr[j];
      s += d * d;
    }
    sums[i] = s;
  });
  double total = 0.0;
  for (double s : sums) total += s;
  return total / static_cast<double>(count);
}

namespace detail {

inline void check_pairs(const std::vector<ImagePair>& pairs, const char* what) {
  require(!pairs.empty(), std::string("train: empty ") + what + " set");
  for (const auto& p : pairs)
    require(p.lr.width() == p.hr.width() && p.lr.height() == p.hr.height(),
            std::string("train: lr/hr dimension mismatch in ") + what + " set");
}

struct PatchRef {
  std::size_t image = 0;
  CropWindow window;
};

}  // namespace detail

/// Trains a freshly initialized float model. Every epoch draws
/// patches_per_image aligned crop windows per training pair, shuffles them
/// and takes one Adam step per batch (the last batch may be short). Epoch 0
/// in the history is the initial model, so the returned checkpoint is never
/// worse on validation than the starting point.
inline TrainResult train(const std::vector<ImagePair>& pairs, const std::vector<ImagePair>& val_pairs,
                         const TrainConfig& cfg) {
  cfg.validate();
  detail::check_pairs(pairs, "training");
  detail::check_pairs(val_pairs, "validation");
  for (const auto& p : pairs)
    require(cfg.patch_size <= std::min(p.hr.width(), p.hr.height()), "train: patch_size exceeds a training image");

  SrcnnModel<float> model =
      SrcnnModel<float>::initialized(derive_seed(cfg.seed, {1}), cfg.init_std, cfg.lrelu_slope, cfg.architecture);
  Rng rng(derive_seed(cfg.seed, {2}));
  AdamState<float> adam;
  const AdamConfig adam_cfg = cfg.adam();
  const int threads = resolve_threads(cfg.threads);
  const int ps = cfg.patch_size;

  TrainResult result;
  result.model = model;
  result.best_val_mse = validation_mse(model, val_pairs, threads);
  result.history.push_back({0, std::nullopt, result.best_val_mse});

  std::vector<detail::PatchRef> patches;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    patches.clear();
    for (std::size_t i = 0; i < pairs.size(); ++i)
      for (int k = 0; k < cfg.patches_per_image; ++k)
        patches.push_back({i, random_crop_window(pairs[i].hr.width(), pairs[i].hr.height(), ps, rng)});
    rng.shuffle(patches);

    double loss_sum = 0.0;
    for (std::size_t b0 = 0; b0 < patches.size(); b0 += static_cast<std::size_t>(cfg.batch_size)) {
      const int n = static_cast<int>(std::min<std::size_t>(cfg.batch_size, patches.size() - b0));
      Tensor4<float> in(n, 1, ps, ps);
      Tensor4<float> target(n, 1, ps, ps);
      for (int j = 0; j < n; ++j) {
        const auto& ref = patches[b0 + static_cast<std::size_t>(j)];
        const ImagePair& p = pairs[ref.image];
        float* di = in.item(j);
        float* dt = target.item(j);
        for (int y = 0; y < ps; ++y) {
          const auto lr_row = p.lr.row(ref.window.y0 + y);
          const auto hr_row = p.hr.row(ref.window.y0 + y);
          for (int x = 0; x < ps; ++x) {
            di[static_cast<std::size_t>(y) * ps + x] = static_cast<float>(lr_row[ref.window.x0 + x]);
            dt[static_cast<std::size_t>(y) * ps + x] = static_cast<float>(hr_row[ref.window.x0 + x]);
          }
        }
      }
      const auto lg = backward(model, in, target, threads);
      loss_sum += lg.loss * n;
      adam_step(model, lg.gradients, adam, adam_cfg);
    }

    EpochRecord rec{epoch, loss_sum / static_cast<double>(patches.size()), std::nullopt};
    if (epoch % cfg.validation_interval == 0 || epoch == cfg.epochs) {
      const double v = validation_mse(model, val_pairs, threads);
      rec.val_mse = v;
      if (v < result.best_val_mse) {
        result.best_val_mse = v;
        result.best_epoch = epoch;
        result.model = model;
      }
    }
    result.history.push_back(rec);
  }
  return result;
}

inline std::string history_csv(const std::vector<EpochRecord>& history) {
  std::ostringstream out;
  out << "epoch,train_mse,val_mse\n";
  for (const auto& r : history)
    out << r.epoch << ',' << format_optional(r.train_mse) << ',' << format_optional(r.val_mse) << '\n';
  return out.str();
}

}  // namespace fibersr
