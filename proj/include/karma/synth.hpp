#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "karma/tensor.hpp"

namespace karma {

enum class ShapeKind { line, blob, ring };

const char* shape_kind_name(ShapeKind k);
ShapeKind parse_shape_kind(const std::string& s);

/// Class 0 is background; kinds[c-1] and frequencies[c-1] describe class c.
struct SynthSpec {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t num_classes = 4;
  std::vector<ShapeKind> kinds{ShapeKind::blob, ShapeKind::ring, ShapeKind::line};
  std::vector<double> frequencies{0.20, 0.12, 0.072};
  std::uint64_t seed = 1;
  std::size_t cell = 4;  // shapes are drawn on a grid of cell x cell pixels

  /// Cycles blob, ring, line with frequencies 0.2 * 0.6^(c-1).
  static SynthSpec imbalanced(std::size_t num_classes, std::size_t height, std::size_t width, std::uint64_t seed);
  void validate() const;
};

struct Sample {
  Tensor image;                     // [3 x H x W], values in [0, 1]
  std::vector<std::uint8_t> mask;   // H * W labels
};

Sample generate_sample(const SynthSpec& spec, std::uint64_t index);

struct Dataset {
  std::size_t height = 0, width = 0, num_classes = 0;
  std::vector<Tensor> images;
  std::vector<std::vector<std::uint8_t>> masks;
  std::size_t size() const { return images.size(); }
};

/// images/NNNN.tnsr, masks/NNNN.tnsr and manifest.txt under `dir`.
void write_dataset(const std::filesystem::path& dir, const SynthSpec& spec, std::size_t count);
/// Reads and checks every file before returning.
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace karma
