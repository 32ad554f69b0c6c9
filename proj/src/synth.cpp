#include "karma/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "karma/error.hpp"
#include "karma/rng.hpp"
#include "karma/tensor_io.hpp"

namespace karma {

const char* shape_kind_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::line: return "line";
    case ShapeKind::blob: return "blob";
    case ShapeKind::ring: return "ring";
  }
  return "?";
}

ShapeKind parse_shape_kind(const std::string& s) {
  if (s == "line") return ShapeKind::line;
  if (s == "blob") return ShapeKind::blob;
  if (s == "ring") return ShapeKind::ring;
  throw ArgumentError("unknown shape kind '" + s + "' (valid: line, blob, ring)");
}

SynthSpec SynthSpec::imbalanced(std::size_t k, std::size_t h, std::size_t w, std::uint64_t seed) {
  SynthSpec s;
  s.height = h;
  s.width = w;
  s.num_classes = k;
  s.seed = seed;
  s.kinds.clear();
  s.frequencies.clear();
  const ShapeKind cycle[3] = {ShapeKind::blob, ShapeKind::ring, ShapeKind::line};
  for (std::size_t c = 1; c < k; ++c) {
    s.kinds.push_back(cycle[(c - 1) % 3]);
    s.frequencies.push_back(0.2 * std::pow(0.6, static_cast<double>(c - 1)));
  }
  return s;
}

void SynthSpec::validate() const {
  if (height == 0 || width == 0 || height % 32 != 0 || width % 32 != 0)
    throw ArgumentError("synth H and W must be positive multiples of 32");
  if (num_classes < 2 || num_classes > 255) throw ArgumentError("synth needs 2..255 classes");
  if (kinds.size() != num_classes - 1 || frequencies.size() != num_classes - 1)
    throw ArgumentError("synth needs one kind and one frequency per non-background class");
  if (cell == 0 || height % cell != 0 || width % cell != 0) throw ArgumentError("cell must divide H and W");
  double sum = 0;
  for (double f : frequencies) {
    if (!(f >= 0.0 && f <= 1.0)) throw ArgumentError("class frequencies must lie in [0, 1]");
    sum += f;
  }
  if (sum > 1.0 + 1e-12) throw ArgumentError("class frequencies sum to more than 1");
}

namespace {

struct CellGrid {
  long h, w;
  std::vector<std::uint8_t> label;
  std::size_t painted = 0;

  // Paints background cells only; returns cells changed.
  std::size_t paint(long y, long x, std::uint8_t c) {
    if (y < 0 || x < 0 || y >= h || x >= w) return 0;
    auto& v = label[static_cast<std::size_t>(y * w + x)];
    if (v != 0) return 0;
    v = c;
    return 1;
  }
};

std::size_t draw(CellGrid& g, ShapeKind kind, std::uint8_t c, std::size_t need, Rng& rng) {
  const long cy = static_cast<long>(rng.below(static_cast<std::uint64_t>(g.h)));
  const long cx = static_cast<long>(rng.below(static_cast<std::uint64_t>(g.w)));
  const long span = std::max<long>(2, std::min(g.h, g.w) / 3);
  std::size_t n = 0;
  switch (kind) {
    case ShapeKind::line: {
      long dy = 0, dx = 0;
      while (dy == 0 && dx == 0) {
        dy = static_cast<long>(rng.below(9)) - 4;
        dx = static_cast<long>(rng.below(9)) - 4;
      }
      const long m = std::max(std::labs(dy), std::labs(dx));
      const long len = std::min<long>(2 * span, static_cast<long>(need) + 2);
      for (long s = 0; s < len && n < need; ++s) n += g.paint(cy + s * dy / m, cx + s * dx / m, c);
      break;
    }
    case ShapeKind::blob: {
      long r = 1 + static_cast<long>(rng.below(static_cast<std::uint64_t>(span / 2 + 1)));
      while (r > 1 && static_cast<std::size_t>(3 * r * r) > need + 4) --r;
      for (long y = -r; y <= r; ++y)
        for (long x = -r; x <= r; ++x)
          if (n < need && y * y + x * x <= r * r) n += g.paint(cy + y, cx + x, c);
      break;
    }
    case ShapeKind::ring: {
      long r = 2 + static_cast<long>(rng.below(static_cast<std::uint64_t>(span / 2 + 1)));
      while (r > 2 && static_cast<std::size_t>(4 * r) > need + 4) --r;
      const long inner = (r - 1) * (r - 1);
      for (long y = -r; y <= r; ++y)
        for (long x = -r; x <= r; ++x) {
          const long d = y * y + x * x;
          if (n < need && d <= r * r && d > inner) n += g.paint(cy + y, cx + x, c);
        }
      break;
    }
  }
  return n;
}

// Symmetric noise in [-amp, amp] from an integer hash.
double hash_noise(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c, double amp) {
  return amp * (static_cast<double>(hash64(seed, a, b, c) >> 11) * 0x1.0p-52 - 1.0);
}

std::string index_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu.tnsr", i);
  return buf;
}

}  // namespace

Sample generate_sample(const SynthSpec& spec, std::uint64_t index) {
  spec.validate();
  const std::size_t H = spec.height, W = spec.width, cs = spec.cell;
  CellGrid g{static_cast<long>(H / cs), static_cast<long>(W / cs), std::vector<std::uint8_t>(H / cs * W / cs, 0)};
  const std::size_t cells = g.label.size();
  Rng rng(hash64(spec.seed, index, 0x5eed));

  for (std::size_t c = 1; c < spec.num_classes; ++c) {
    const auto label = static_cast<std::uint8_t>(c);
    // stochastic rounding keeps small targets unbiased
    const auto target =
        static_cast<std::size_t>(std::floor(spec.frequencies[c - 1] * static_cast<double>(cells) + rng.uniform()));
    std::size_t have = 0;
    if (target >= cells) {
      for (auto& v : g.label)
        if (v == 0) v = label, ++have;
      continue;
    }
    for (int attempt = 0; attempt < 400 && have < target; ++attempt)
      have += draw(g, spec.kinds[c - 1], label, target - have, rng);
  }

  // Class palette: background grey, others spread over hue-like corners.
  std::vector<std::array<double, 3>> palette(spec.num_classes);
  palette[0] = {0.45, 0.45, 0.45};
  for (std::size_t c = 1; c < spec.num_classes; ++c) {
    const std::uint64_t h = hash64(0xC0105, c);
    for (std::size_t ch = 0; ch < 3; ++ch)
      palette[c][ch] = 0.1 + 0.8 * static_cast<double>((h >> (16 * ch)) & 0xFFFF) / 65535.0;
    palette[c][(c - 1) % 3] = c % 2 ? 0.95 : 0.05;
  }

  Sample s;
  s.mask.resize(H * W);
  std::vector<double> img(3 * H * W);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const std::uint8_t c = g.label[(y / cs) * (W / cs) + x / cs];
      s.mask[y * W + x] = c;
      const bool textured = c != 0 && spec.kinds[c - 1] == ShapeKind::ring;
      const double tex = textured && ((x / 2 + y / 2) % 2) ? -0.08 : 0.0;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double v = palette[c][ch] + tex + hash_noise(spec.seed, index, y * W + x, ch, 0.06);
        img[(ch * H + y) * W + x] = std::clamp(v, 0.0, 1.0);
      }
    }
  s.image = Tensor({3, H, W}, std::move(img));
  return s;
}

void write_dataset(const std::filesystem::path& dir, const SynthSpec& spec, std::size_t count) {
  spec.validate();
  if (count == 0) throw ArgumentError("dataset count must be positive");
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "masks");
  for (std::size_t i = 0; i < count; ++i) {
    const Sample s = generate_sample(spec, i);
    write_tensor(dir / "images" / index_name(i), RawTensor::from(s.image));
    write_tensor(dir / "masks" / index_name(i), RawTensor::bytes({spec.height, spec.width}, s.mask));
  }
  std::ofstream m(dir / "manifest.txt");
  m << "count = " << count << "\nheight = " << spec.height << "\nwidth = " << spec.width
    << "\nnum_classes = " << spec.num_classes << "\nseed = " << spec.seed << "\ncell = " << spec.cell << "\n";
  m << "kinds =";
  for (auto k : spec.kinds) m << " " << shape_kind_name(k);
  m << "\nfrequencies =";
  char buf[32];
  for (double f : spec.frequencies) {
    std::snprintf(buf, sizeof buf, " %.17g", f);
    m << buf;
  }
  m << "\n";
  if (!m) throw std::runtime_error("cannot write manifest in " + dir.string());
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream m(dir / "manifest.txt");
  if (!m) throw FormatError(dir.string() + ": missing manifest.txt");
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(m, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t\r") + 1);
      return s;
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  auto number = [&](const char* key) -> std::size_t {
    const auto it = kv.find(key);
    if (it == kv.end()) throw FormatError(dir.string() + ": manifest lacks '" + key + "'");
    try {
      return std::stoul(it->second);
    } catch (const std::exception&) {
      throw FormatError(dir.string() + ": bad manifest value for '" + key + "'");
    }
  };
  Dataset d;
  const std::size_t count = number("count");
  d.height = number("height");
  d.width = number("width");
  d.num_classes = number("num_classes");
  if (count == 0 || d.num_classes < 2 || d.height % 32 || d.width % 32 || d.height == 0 || d.width == 0)
    throw FormatError(dir.string() + ": manifest values out of range");
  for (std::size_t i = 0; i < count; ++i) {
    const RawTensor img = read_tensor(dir / "images" / index_name(i));
    const RawTensor msk = read_tensor(dir / "masks" / index_name(i));
    if (img.dtype != Dtype::f64 || img.dims != std::vector<std::uint64_t>{3, d.height, d.width})
      throw FormatError(dir.string() + ": image " + std::to_string(i) + " has the wrong shape or dtype");
    if (msk.dtype != Dtype::u8 || msk.dims != std::vector<std::uint64_t>{d.height, d.width})
      throw FormatError(dir.string() + ": mask " + std::to_string(i) + " has the wrong shape or dtype");
    for (auto v : msk.u8)
      if (v >= d.num_classes) throw FormatError(dir.string() + ": mask " + std::to_string(i) + " has label " +
                                                std::to_string(v) + " >= num_classes");
    d.images.push_back(img.to_tensor());
    d.masks.push_back(msk.u8);
  }
  return d;
}

}  // namespace karma
