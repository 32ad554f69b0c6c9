#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "karma/losses.hpp"
#include "karma/model.hpp"
#include "karma/optim.hpp"
#include "karma/synth.hpp"

namespace karma {

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 16;
  double clip_norm = 1.0;
  double lr_min = 1e-6;
  AdamWConfig optim;
  std::uint64_t seed = 1;
  ModelConfig model;
  LossConfig loss;
  bool augment_flip = true;
  bool augment_rotate = true;
  bool warm_restarts = false;
  std::size_t restart_period = 10;  // epochs
  std::size_t prune_every = 10;     // epochs; 0 disables
  /// Hold out samples with index % 5 == 4; otherwise validate on the
  /// training set.
  bool val_split = true;
  int threads = 0;  // 0 keeps the OpenMP default

  void validate() const;
};

/// Flat `section.key -> value` map from `key = value` lines with `[section]`
/// headers and `#` comments. Keys before any header have no prefix.
std::map<std::string, std::string> parse_ini(const std::string& text, const std::string& origin = "<config>");
std::map<std::string, std::string> read_ini(const std::filesystem::path& path);

/// Valid keys for TrainConfig, e.g. "train.epochs", "model.variant".
std::vector<std::string> train_config_keys();

/// Applies values on top of `cfg`. "model.variant" is applied first and
/// resets the model section to that preset. Unknown keys or unparsable
/// values throw ArgumentError listing the valid keys.
void apply_config(TrainConfig& cfg, const std::map<std::string, std::string>& values);

/// Round-trips through parse_ini + apply_config.
std::string to_ini(const TrainConfig& cfg);

/// TIKAN_SEED overrides train.seed and model.seed when set.
void apply_env(TrainConfig& cfg);

std::vector<std::string> synth_config_keys();
void apply_synth_config(SynthSpec& spec, std::size_t& count, const std::map<std::string, std::string>& values);

}  // namespace karma
