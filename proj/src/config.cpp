#include "karma/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "karma/error.hpp"

namespace karma {

void TrainConfig::validate() const {
  if (epochs == 0) throw ArgumentError("epochs must be >= 1");
  if (batch_size == 0) throw ArgumentError("batch_size must be >= 1");
  if (!(clip_norm > 0.0)) throw ArgumentError("clip_norm must be positive");
  if (lr_min < 0.0 || lr_min > optim.lr) throw ArgumentError("lr_min must be in [0, lr]");
  if (warm_restarts && restart_period == 0) throw ArgumentError("restart_period must be positive");
  if (threads < 0) throw ArgumentError("threads must be >= 0");
  model.validate();
}

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Bad {
  std::string what;
};

double to_double(const std::string& s) {
  std::size_t used = 0;
  double v;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw Bad{"expected a number"};
  }
  if (used != s.size()) throw Bad{"expected a number"};
  return v;
}

std::uint64_t to_uint(const std::string& s) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) throw Bad{"expected an unsigned integer"};
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    throw Bad{"integer out of range"};
  }
}

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw Bad{"expected true or false"};
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  for (char ch : s + ",") {
    if (ch == ',' || ch == ' ') {
      if (!trim(item).empty()) out.push_back(trim(item));
      item.clear();
    } else {
      item += ch;
    }
  }
  return out;
}

template <class Cfg>
struct Key {
  std::string name;
  std::function<void(Cfg&, const std::string&)> set;
  std::function<std::string(const Cfg&)> get;
};

#define KARMA_NUM(KEY, FIELD)                                                     \
  Key<TrainConfig> {                                                              \
    KEY, [](TrainConfig& c, const std::string& v) { c.FIELD = to_double(v); },    \
        [](const TrainConfig& c) { return fmt(c.FIELD); }                         \
  }
#define KARMA_UINT(KEY, FIELD, TYPE)                                                          \
  Key<TrainConfig> {                                                                          \
    KEY, [](TrainConfig& c, const std::string& v) { c.FIELD = static_cast<TYPE>(to_uint(v)); }, \
        [](const TrainConfig& c) { return std::to_string(c.FIELD); }                          \
  }
#define KARMA_BOOL(KEY, FIELD)                                                  \
  Key<TrainConfig> {                                                            \
    KEY, [](TrainConfig& c, const std::string& v) { c.FIELD = to_bool(v); },    \
        [](const TrainConfig& c) { return std::string(c.FIELD ? "true" : "false"); } \
  }

const std::vector<Key<TrainConfig>>& train_keys() {
  static const std::vector<Key<TrainConfig>> keys = {
      KARMA_UINT("train.epochs", epochs, std::size_t),
      KARMA_UINT("train.batch_size", batch_size, std::size_t),
      KARMA_NUM("train.clip_norm", clip_norm),
      KARMA_NUM("train.lr", optim.lr),
      KARMA_NUM("train.lr_min", lr_min),
      KARMA_NUM("train.weight_decay", optim.weight_decay),
      KARMA_NUM("train.beta1", optim.beta1),
      KARMA_NUM("train.beta2", optim.beta2),
      KARMA_NUM("train.eps", optim.eps),
      KARMA_UINT("train.seed", seed, std::uint64_t),
      KARMA_BOOL("train.augment_flip", augment_flip),
      KARMA_BOOL("train.augment_rotate", augment_rotate),
      KARMA_BOOL("train.warm_restarts", warm_restarts),
      KARMA_UINT("train.restart_period", restart_period, std::size_t),
      KARMA_UINT("train.prune_every", prune_every, std::size_t),
      KARMA_BOOL("train.val_split", val_split),
      KARMA_UINT("train.threads", threads, int),
      {"model.variant", [](TrainConfig& c, const std::string& v) { c.model.variant = v; },
       [](const TrainConfig& c) { return c.model.variant; }},
      KARMA_UINT("model.in_channels", model.in_channels, std::size_t),
      KARMA_UINT("model.num_classes", model.num_classes, std::size_t),
      {"model.stage_channels",
       [](TrainConfig& c, const std::string& v) {
         const auto items = split_list(v);
         if (items.size() != 5) throw Bad{"expected 5 comma-separated channel counts"};
         for (std::size_t i = 0; i < 5; ++i) c.model.stage_channels[i] = to_uint(items[i]);
       },
       [](const TrainConfig& c) {
         std::string s;
         for (std::size_t i = 0; i < 5; ++i) s += (i ? "," : "") + std::to_string(c.model.stage_channels[i]);
         return s;
       }},
      KARMA_UINT("model.fpn_width", model.fpn_width, std::size_t),
      {"model.pre_kan_projection",
       [](TrainConfig& c, const std::string& v) {
         if (v == "none") c.model.pre_kan_projection.reset();
         else c.model.pre_kan_projection = to_uint(v);
       },
       [](const TrainConfig& c) {
         return c.model.pre_kan_projection ? std::to_string(*c.model.pre_kan_projection) : std::string("none");
       }},
      KARMA_NUM("model.kan_hidden_ratio", model.kan_hidden_ratio),
      KARMA_UINT("model.rank", model.ranks.rank, std::size_t),
      KARMA_UINT("model.spline_rank", model.ranks.spline_rank, std::size_t),
      KARMA_NUM("model.energy_threshold", model.ranks.energy_threshold),
      KARMA_NUM("model.prune_threshold", model.ranks.prune_threshold),
      KARMA_BOOL("model.share_splines", model.share_splines),
      KARMA_UINT("model.grid_size", model.grid.grid_size, std::size_t),
      KARMA_UINT("model.spline_order", model.grid.order, std::size_t),
      KARMA_NUM("model.grid_lo", model.grid.lo),
      KARMA_NUM("model.grid_hi", model.grid.hi),
      KARMA_NUM("model.grid_noise", model.grid.noise_scale),
      {"model.kan_init",
       [](TrainConfig& c, const std::string& v) {
         if (v == "random") c.model.kan_init = KanInit::random;
         else if (v == "svd") c.model.kan_init = KanInit::svd;
         else throw Bad{"expected random or svd"};
       },
       [](const TrainConfig& c) { return std::string(c.model.kan_init == KanInit::svd ? "svd" : "random"); }},
      {"model.fpn_conv",
       [](TrainConfig& c, const std::string& v) {
         if (v == "dwsep") c.model.fpn_conv = FpnConv::dwsep;
         else if (v == "standard") c.model.fpn_conv = FpnConv::standard;
         else throw Bad{"expected dwsep or standard"};
       },
       [](const TrainConfig& c) {
         return std::string(c.model.fpn_conv == FpnConv::dwsep ? "dwsep" : "standard");
       }},
      KARMA_BOOL("model.learnable_fusion", model.learnable_fusion),
      KARMA_UINT("model.seed", model.seed, std::uint64_t),
      KARMA_NUM("loss.alpha", loss.alpha),
      KARMA_NUM("loss.beta", loss.beta),
      KARMA_NUM("loss.gamma", loss.gamma),
      KARMA_NUM("loss.lambda1", loss.lambda1),
      KARMA_NUM("loss.lambda2", loss.lambda2),
      KARMA_NUM("loss.dice_eps", loss.dice_eps),
      KARMA_BOOL("loss.focal", loss.focal),
      KARMA_NUM("loss.focal_gamma", loss.focal_gamma),
      KARMA_BOOL("loss.l1_include_bias", loss.l1_include_bias),
  };
  return keys;
}

#undef KARMA_NUM
#undef KARMA_UINT
#undef KARMA_BOOL

template <class Cfg>
std::string key_list(const std::vector<Key<Cfg>>& keys) {
  std::string s;
  for (const auto& k : keys) s += (s.empty() ? "" : ", ") + k.name;
  return s;
}

template <class Cfg>
void apply_keys(Cfg& cfg, const std::vector<Key<Cfg>>& keys, const std::string& key, const std::string& value) {
  for (const auto& k : keys) {
    if (k.name != key) continue;
    try {
      k.set(cfg, value);
    } catch (const Bad& b) {
      throw ArgumentError("bad value '" + value + "' for " + key + ": " + b.what);
    }
    return;
  }
  throw ArgumentError("unknown key '" + key + "'; valid keys: " + key_list(keys));
}

}  // namespace

std::map<std::string, std::string> parse_ini(const std::string& text, const std::string& origin) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line, section;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3)
        throw FormatError(origin + ":" + std::to_string(no) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos || trim(line.substr(0, eq)).empty())
      throw FormatError(origin + ":" + std::to_string(no) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    out[section.empty() ? key : section + "." + key] = trim(line.substr(eq + 1));
  }
  return out;
}

std::map<std::string, std::string> read_ini(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_ini(ss.str(), path.string());
}

std::vector<std::string> train_config_keys() {
  std::vector<std::string> out;
  for (const auto& k : train_keys()) out.push_back(k.name);
  return out;
}

void apply_config(TrainConfig& cfg, const std::map<std::string, std::string>& values) {
  if (const auto it = values.find("model.variant"); it != values.end()) {
    const std::size_t k = cfg.model.num_classes, in = cfg.model.in_channels;
    const std::uint64_t seed = cfg.model.seed;
    cfg.model = ModelConfig::preset(it->second, k);
    cfg.model.in_channels = in;
    cfg.model.seed = seed;
  }
  for (const auto& [key, value] : values)
    if (key != "model.variant") apply_keys(cfg, train_keys(), key, value);
}

std::string to_ini(const TrainConfig& cfg) {
  std::string out, section;
  for (const auto& k : train_keys()) {
    const auto dot = k.name.find('.');
    const std::string sec = k.name.substr(0, dot);
    if (sec != section) {
      out += (section.empty() ? "[" : "\n[") + sec + "]\n";
      section = sec;
    }
    out += k.name.substr(dot + 1) + " = " + k.get(cfg) + "\n";
  }
  return out;
}

void apply_env(TrainConfig& cfg) {
  const char* env = std::getenv("TIKAN_SEED");
  if (!env) return;
  try {
    cfg.seed = cfg.model.seed = to_uint(trim(env));
  } catch (const Bad&) {
    throw ArgumentError(std::string("TIKAN_SEED must be an unsigned integer, got '") + env + "'");
  }
}

namespace {

struct SynthTarget {
  SynthSpec spec;
  std::size_t count;
};

const std::vector<Key<SynthTarget>>& synth_keys() {
  static const std::vector<Key<SynthTarget>> keys = {
      {"synth.count", [](SynthTarget& s, const std::string& v) { s.count = to_uint(v); },
       [](const SynthTarget& s) { return std::to_string(s.count); }},
      {"synth.height", [](SynthTarget& s, const std::string& v) { s.spec.height = to_uint(v); },
       [](const SynthTarget& s) { return std::to_string(s.spec.height); }},
      {"synth.width", [](SynthTarget& s, const std::string& v) { s.spec.width = to_uint(v); },
       [](const SynthTarget& s) { return std::to_string(s.spec.width); }},
      {"synth.num_classes", [](SynthTarget& s, const std::string& v) { s.spec.num_classes = to_uint(v); },
       [](const SynthTarget& s) { return std::to_string(s.spec.num_classes); }},
      {"synth.seed", [](SynthTarget& s, const std::string& v) { s.spec.seed = to_uint(v); },
       [](const SynthTarget& s) { return std::to_string(s.spec.seed); }},
      {"synth.cell", [](SynthTarget& s, const std::string& v) { s.spec.cell = to_uint(v); },
       [](const SynthTarget& s) { return std::to_string(s.spec.cell); }},
      {"synth.kinds",
       [](SynthTarget& s, const std::string& v) {
         s.spec.kinds.clear();
         for (const auto& item : split_list(v)) {
           try {
             s.spec.kinds.push_back(parse_shape_kind(item));
           } catch (const ArgumentError& e) {
             throw Bad{e.what()};
           }
         }
       },
       [](const SynthTarget&) { return std::string(); }},
      {"synth.frequencies",
       [](SynthTarget& s, const std::string& v) {
         s.spec.frequencies.clear();
         for (const auto& item : split_list(v)) s.spec.frequencies.push_back(to_double(item));
       },
       [](const SynthTarget&) { return std::string(); }},
  };
  return keys;
}

}  // namespace

std::vector<std::string> synth_config_keys() {
  std::vector<std::string> out;
  for (const auto& k : synth_keys()) out.push_back(k.name);
  return out;
}

void apply_synth_config(SynthSpec& spec, std::size_t& count, const std::map<std::string, std::string>& values) {
  SynthTarget t{spec, count};
  // A new class count without explicit kinds/frequencies takes the default ladder.
  if (const auto it = values.find("synth.num_classes"); it != values.end()) {
    apply_keys(t, synth_keys(), it->first, it->second);
    const SynthSpec d = SynthSpec::imbalanced(t.spec.num_classes, t.spec.height, t.spec.width, t.spec.seed);
    t.spec.kinds = d.kinds;
    t.spec.frequencies = d.frequencies;
  }
  for (const auto& [key, value] : values)
    if (key != "synth.num_classes") apply_keys(t, synth_keys(), key, value);
  spec = t.spec;
  count = t.count;
}

}  // namespace karma
