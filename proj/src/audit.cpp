#include "karma/audit.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "karma/error.hpp"

namespace karma {

int ActivationTrace::add(std::uint64_t elems, const std::vector<int>& inputs, bool keep) {
  const std::size_t id = elems_.size();
  for (int in : inputs)
    if (in >= 0) last_use_.at(static_cast<std::size_t>(in)) = id;
  elems_.push_back(elems);
  last_use_.push_back(id);
  keep_.push_back(keep);
  return static_cast<int>(id);
}

std::uint64_t ActivationTrace::peak_elems() const {
  const std::size_t n = elems_.size();
  std::uint64_t peak = 0;
  for (std::size_t step = 0; step < n; ++step) {
    std::uint64_t live = 0;
    for (std::size_t t = 0; t <= step; ++t)
      if (keep_[t] || last_use_[t] >= step) live += elems_[t];
    peak = std::max(peak, live);
  }
  return peak;
}

namespace {

constexpr int kInput = -1;

// Walks the forward pass once, charging each op to the current module.
class Walker {
 public:
  Walker(const AuditOptions& opt, const GridConfig& grid) : opt_(opt), grid_(grid) {}

  struct Map {
    std::size_t c, h, w;
    int id;
  };

  void begin(const std::string& name) { report_.modules.push_back({name, 0, 0, 0}); }
  ModuleCost& cur() { return report_.modules.back(); }
  std::uint64_t n() const { return opt_.batch; }

  Map conv(const Map& x, std::size_t out, std::size_t k, bool depthwise, bool bias, std::size_t stride = 1,
           bool keep = false) {
    const std::size_t h = (x.h - 1) / stride + 1, w = (x.w - 1) / stride + 1;
    const std::uint64_t per_out = depthwise ? k * k : x.c * k * k;
    cur().params += (depthwise ? x.c * k * k : x.c * out * k * k) + (bias ? out : 0);
    cur().macs += n() * out * h * w * per_out;
    return {out, h, w, trace_.add(n() * out * h * w, {x.id}, keep)};
  }
  Map dwsep(const Map& x, std::size_t out, std::size_t k, std::size_t stride = 1) {
    return conv(conv(x, x.c, k, true, false, stride), out, 1, false, true);
  }
  Map bn(const Map& x) {
    cur().params += 2 * x.c;
    cur().extra_flops += opt_.bn_flops_per_elem * elems(x);
    return same(x);
  }
  Map act(const Map& x, bool keep = false) {
    cur().extra_flops += opt_.act_flops_per_elem * elems(x);
    return same(x, keep);
  }
  Map pool(const Map& x, std::size_t factor) {
    return {x.c, x.h / factor, x.w / factor, trace_.add(n() * x.c * (x.h / factor) * (x.w / factor), {x.id})};
  }
  Map same(const Map& x, bool keep = false) { return {x.c, x.h, x.w, trace_.add(elems(x), {x.id}, keep)}; }
  Map concat(const std::vector<Map>& parts, bool keep) {
    std::size_t c = 0;
    std::vector<int> ids;
    for (const auto& p : parts) {
      c += p.c;
      ids.push_back(p.id);
    }
    const Map& f = parts.front();
    return {c, f.h, f.w, trace_.add(n() * c * f.h * f.w, ids, keep)};
  }
  Map join(const Map& a, const Map& b, std::size_t c, std::size_t h, std::size_t w, bool keep = false) {
    return {c, h, w, trace_.add(n() * c * h * w, {a.id, b.id}, keep)};
  }
  std::uint64_t elems(const Map& x) const { return n() * x.c * x.h * x.w; }

  Map inception(const Map& x, std::size_t out, std::size_t stride) {
    const auto wd = branch_widths(out);
    const Map y1 = act(bn(dwsep(act(bn(dwsep(x, wd[0], 3, stride))), wd[0], 3)));
    const Map y2 = act(bn(dwsep(act(bn(dwsep(x, wd[1], 5, stride))), wd[1], 5)));
    const Map pooled = same(x);
    const Map y3 = act(bn(conv(pooled, wd[2], 1, false, true, stride)));
    return concat({y1, y2, y3}, true);
  }

  // Token matrix [rows x in] -> [rows x out].
  Map kan_linear(const Map& x, std::size_t out, const RankConfig& ranks, bool shared) {
    const std::uint64_t rows = n() * x.h * x.w, in = x.c;
    const std::uint64_t nb = grid_.grid_size + grid_.order;
    const std::uint64_t r = ranks.rank, rf = ranks.spline_rank;
    const std::uint64_t cols = shared ? nb : in * nb;
    cur().params += in * r + r * out + out + out * rf + rf * cols + 2 * out;
    cur().macs += rows * (in * r + r * out + cols * rf + rf * out);
    cur().extra_flops += rows * in * (grid_.grid_size + grid_.order) * (grid_.order + 1) * opt_.spline_constant;
    cur().extra_flops += opt_.act_flops_per_elem * rows * out;
    return {out, x.h, x.w, trace_.add(rows * out, {x.id})};
  }

  CostReport report_;
  ActivationTrace trace_;

 private:
  AuditOptions opt_;
  GridConfig grid_;
};

std::string module_of(const std::string& param) {
  const auto dot = param.find('.');
  const std::string head = param.substr(0, dot);
  if (head == "backbone") return param.substr(0, param.find('.', dot + 1));
  if (head.rfind("alpha", 0) == 0) return "fusion";
  return head;
}

}  // namespace

CostReport audit(const ModelConfig& cfg, std::size_t height, std::size_t width, const AuditOptions& opt) {
  cfg.validate();
  if (height == 0 || width == 0 || height % 32 != 0 || width % 32 != 0)
    throw ArgumentError("audit resolution must be a positive multiple of 32");
  if (opt.batch == 0 || opt.bytes_per_elem == 0) throw ArgumentError("batch and bytes_per_elem must be positive");

  Walker wk(opt, cfg.grid);
  const auto& ch = cfg.stage_channels;
  const std::size_t f = cfg.fpn_width, k = cfg.num_classes;

  Walker::Map x{cfg.in_channels, height, width, kInput};
  std::array<Walker::Map, 5> c;
  for (std::size_t i = 0; i < 5; ++i) {
    wk.begin("backbone.stage" + std::to_string(i + 1));
    const Walker::Map in = i == 0 ? x : wk.pool(c[i - 1], 2);
    c[i] = wk.inception(in, ch[i], i == 0 ? 2 : 1);
  }

  Walker::Map t = c[4];
  if (cfg.pre_kan_projection) {
    wk.begin("pre_kan");
    t = wk.conv(t, *cfg.pre_kan_projection, 1, false, true);
  }
  wk.begin("kan");
  {
    const std::size_t d = cfg.kan_channels(), hd = cfg.kan_hidden();
    const std::uint64_t rows = wk.n() * t.h * t.w;
    wk.cur().params += 2 * d;
    wk.cur().extra_flops += 8 * rows * d;  // layer norm
    Walker::Map z = wk.same(t);
    z = wk.kan_linear(z, hd, cfg.ranks, cfg.share_splines);
    z = wk.act(wk.bn(wk.conv(z, hd, 3, true, true)));
    z = wk.kan_linear(z, d, cfg.ranks, cfg.share_splines);
    z = wk.act(wk.bn(wk.conv(z, d, 3, true, true)));
    t = wk.join(t, z, d, t.h, t.w);
  }
  wk.begin("p5_proj");
  std::array<Walker::Map, 4> p;
  p[3] = wk.conv(t, f, 1, false, true, 1, true);
  for (std::size_t i = 3; i-- > 0;) {
    wk.begin("lateral" + std::to_string(i + 2));
    const Walker::Map lat = cfg.fpn_conv == FpnConv::dwsep ? wk.dwsep(c[i + 1], f, 1)
                                                           : wk.conv(c[i + 1], f, 1, false, true);
    const Walker::Map up = wk.same({f, lat.h, lat.w, p[i + 1].id});
    p[i] = wk.join(lat, up, f, lat.h, lat.w, true);
  }
  std::array<Walker::Map, 4> o;
  for (std::size_t i = 0; i < 4; ++i) {
    wk.begin("head" + std::to_string(i + 2));
    o[i] = wk.conv(p[i], k, 3, false, true, 1, true);
  }
  wk.begin("fusion");
  if (cfg.learnable_fusion) wk.cur().params += 4;
  Walker::Map acc{};
  for (std::size_t i = 0; i < 4; ++i) {
    const Walker::Map up = wk.same({k, height, width, o[i].id});
    wk.cur().extra_flops += wk.elems(up) * ((cfg.learnable_fusion ? 1 : 0) + (i > 0 ? 1 : 0));
    acc = i == 0 ? up : wk.join(acc, up, k, height, width);
  }

  CostReport r = std::move(wk.report_);
  r.variant = cfg.variant;
  r.height = height;
  r.width = width;
  r.options = opt;
  for (const auto& m : r.modules) {
    r.params_total += m.params;
    r.macs_total += m.macs;
    r.flops_total += r.flops(m);
  }
  r.activation_bytes_peak = wk.trace_.peak_elems() * opt.bytes_per_elem;
  return r;
}

std::map<std::string, std::uint64_t> count_params(KarmaNet& model) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& p : model.parameters()) out[module_of(p.name)] += p.value.numel();
  return out;
}

std::uint64_t estimate_activation_memory(const ModelConfig& cfg, std::size_t height, std::size_t width,
                                         std::size_t bytes_per_elem, std::size_t batch) {
  AuditOptions opt;
  opt.bytes_per_elem = bytes_per_elem;
  opt.batch = batch;
  return audit(cfg, height, width, opt).activation_bytes_peak;
}

std::string CostReport::text() const {
  std::ostringstream os;
  char line[160];
  os << "variant " << variant << " at " << height << "x" << width << ", batch " << options.batch << "\n";
  os << "convention: 1 MAC = " << options.flops_per_mac << " FLOP(s); activations at " << options.bytes_per_elem
     << " bytes/element\n";
  std::snprintf(line, sizeof line, "%-18s %12s %16s %16s\n", "module", "params", "MACs", "FLOPs");
  os << line;
  for (const auto& m : modules) {
    std::snprintf(line, sizeof line, "%-18s %12llu %16llu %16llu\n", m.name.c_str(),
                  static_cast<unsigned long long>(m.params), static_cast<unsigned long long>(m.macs),
                  static_cast<unsigned long long>(flops(m)));
    os << line;
  }
  std::snprintf(line, sizeof line, "%-18s %12llu %16llu %16llu\n", "total", static_cast<unsigned long long>(params_total),
                static_cast<unsigned long long>(macs_total), static_cast<unsigned long long>(flops_total));
  os << line;
  std::snprintf(line, sizeof line, "params %.4f M\nGFLOPs %.4f\nactivation peak %.2f MiB\n", mparams(), gflops(),
                static_cast<double>(activation_bytes_peak) / (1024.0 * 1024.0));
  os << line;
  return os.str();
}

std::string CostReport::key_values() const {
  std::ostringstream os;
  os << "variant=" << variant << "\nheight=" << height << "\nwidth=" << width << "\nbatch=" << options.batch
     << "\nflops_per_mac=" << options.flops_per_mac << "\nbytes_per_elem=" << options.bytes_per_elem
     << "\nparams_total=" << params_total << "\nmacs_total=" << macs_total << "\nflops_total=" << flops_total
     << "\nactivation_bytes_peak=" << activation_bytes_peak << "\n";
  for (const auto& m : modules) {
    os << "params." << m.name << "=" << m.params << "\n";
    os << "flops." << m.name << "=" << flops(m) << "\n";
  }
  return os.str();
}

}  // namespace karma
