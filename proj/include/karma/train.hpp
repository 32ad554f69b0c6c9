#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "karma/config.hpp"
#include "karma/metrics.hpp"
#include "karma/synth.hpp"

namespace karma {

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double loss = 0, ce = 0, dice = 0, smooth = 0, sparsity = 0;
  double lr = 0;          // at the last step of the epoch
  double grad_norm = 0;   // mean pre-clip norm over the epoch
  SegMetrics val;
  std::size_t pruned = 0;  // zero entries after pruning, when it ran
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  std::vector<std::string> log;  // the key=value lines that were emitted
  double best_val_miou = -1.0;
  std::size_t best_epoch = 0;
  std::filesystem::path checkpoint;
  double seconds = 0;
};

struct Split {
  std::vector<std::size_t> train, val;
};

/// Indices with i % 5 == 4 go to validation when `holdout` is set and the
/// dataset has at least 5 samples; otherwise validation reuses training.
Split split_indices(std::size_t n, bool holdout);

/// Horizontal flip and/or k quarter turns (counter-clockwise) of a
/// [C x H x W] image and its H*W mask. Quarter turns need H == W.
void augment(std::vector<double>& image, std::vector<std::uint8_t>& mask, std::size_t channels, std::size_t h,
             std::size_t w, bool flip, unsigned quarter_turns);

/// Trains on `data`, writing `out_dir/best` (best validation mIoU) and
/// `out_dir/train_log.txt`. Log lines go to `log` as well when given.
TrainResult train(const TrainConfig& cfg, const Dataset& data, const std::filesystem::path& out_dir,
                  std::ostream* log = nullptr);
TrainResult train(const TrainConfig& cfg, const std::filesystem::path& dataset_dir,
                  const std::filesystem::path& out_dir, std::ostream* log = nullptr);

struct EvalResult {
  ConfusionMatrix cm;
  SegMetrics metrics;
};

EvalResult evaluate(KarmaNet& model, const Dataset& data, const std::vector<std::size_t>& indices,
                    std::size_t batch_size = 4);

/// Per-pixel argmax over classes of logits [B x K x H x W].
std::vector<std::uint8_t> argmax_classes(const Tensor& logits);

struct Checkpoint {
  TrainConfig config;
  std::unique_ptr<KarmaNet> model;
  std::size_t epoch = 0;
  double val_miou = 0;
};

/// Directory with config.ini, manifest.txt and one tensor file per
/// parameter and buffer.
void save_checkpoint(const std::filesystem::path& dir, KarmaNet& model, const TrainConfig& cfg,
                     std::size_t epoch, double val_miou);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace karma
