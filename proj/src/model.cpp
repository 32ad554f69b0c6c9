#include "karma/model.hpp"

#include <cmath>

#include "karma/error.hpp"

namespace karma {

ModelConfig ModelConfig::preset(const std::string& variant, std::size_t num_classes) {
  ModelConfig c;
  c.variant = variant;
  c.num_classes = num_classes;
  if (variant == "karma") {
    // defaults above
  } else if (variant == "flash") {
    c.stage_channels = {48, 96, 192, 288, 384};
    c.pre_kan_projection = 256;
    c.fpn_width = 32;
    c.kan_hidden_ratio = 0.5;
    c.ranks = RankConfig{64, 16};
  } else if (variant == "high") {
    c.stage_channels = {128, 256, 512, 768, 1024};
    c.fpn_width = 128;
    c.fpn_conv = FpnConv::standard;
    c.ranks = RankConfig{256, 328};
    c.share_splines = false;
  } else {
    throw ArgumentError("unknown variant '" + variant + "' (valid: karma, flash, high)");
  }
  return c;
}

std::size_t ModelConfig::kan_hidden() const {
  return static_cast<std::size_t>(std::lround(static_cast<double>(kan_channels()) * kan_hidden_ratio));
}

void ModelConfig::validate() const {
  for (auto c : stage_channels)
    if (c < 3) throw ArgumentError("stage channels must be >= 3");
  if (in_channels == 0 || fpn_width == 0 || num_classes == 0)
    throw ArgumentError("in_channels, fpn_width and num_classes must be positive");
  if (!(kan_hidden_ratio > 0.0)) throw ArgumentError("kan_hidden_ratio must be positive");
  if (pre_kan_projection && *pre_kan_projection == 0) throw ArgumentError("pre_kan_projection must be positive");
  const std::size_t d = kan_channels(), hd = kan_hidden();
  if (hd == 0) throw ArgumentError("kan hidden width rounds to zero");
  if (ranks.rank == 0 || ranks.rank > std::min(d, hd)) {
    throw ArgumentError("rank " + std::to_string(ranks.rank) + " must be in [1, " +
                        std::to_string(std::min(d, hd)) + "]");
  }
  if (ranks.spline_rank == 0 || ranks.spline_rank > std::min(d, hd)) {
    throw ArgumentError("spline_rank " + std::to_string(ranks.spline_rank) + " is out of range");
  }
  if (!(ranks.energy_threshold > 0.0 && ranks.energy_threshold <= 1.0))
    throw ArgumentError("energy_threshold must be in (0, 1]");
  if (ranks.prune_threshold < 0.0) throw ArgumentError("prune_threshold must be >= 0");
  if (grid.grid_size == 0 || !(grid.lo < grid.hi) || grid.noise_scale < 0.0)
    throw ArgumentError("invalid spline grid settings");
}

KarmaNet::KarmaNet(const ModelConfig& cfg) : config(cfg) {
  config.validate();
  Rng rng(config.seed);
  const auto& ch = config.stage_channels;
  const std::size_t f = config.fpn_width, k = config.num_classes;
  backbone = BottomUp(config.in_channels, ch, rng);
  if (config.pre_kan_projection) {
    pre_kan = Conv2d(ch[4], *config.pre_kan_projection, 1, ConvMode::pointwise, true, rng);
  }
  const std::size_t d = config.kan_channels();
  kan = KanBlock(d, config.kan_hidden(), config.ranks, config.share_splines, config.grid,
                 config.kan_init, rng);
  p5_proj = Conv2d(d, f, 1, ConvMode::pointwise, true, rng);
  for (std::size_t i = 0; i < 3; ++i) {
    if (config.fpn_conv == FpnConv::dwsep) lateral_dwsep[i] = DwSepConv(ch[i + 1], f, 1, rng);
    else lateral_std[i] = Conv2d(ch[i + 1], f, 1, ConvMode::pointwise, true, rng);
  }
  for (auto& h : heads) h = Conv2d(f, k, 3, ConvMode::standard, true, rng);
  if (config.learnable_fusion)
    for (auto& a : fusion_weights) a = Tensor::full({1}, 1.0, true);
}

Tensor patch_embed(const Tensor& map) {
  if (map.rank() != 4) throw DimensionError("patch_embed expects [B x D x h x w]");
  const std::size_t b = map.dim(0), d = map.dim(1), h = map.dim(2), w = map.dim(3);
  return reshape(permute(map, {0, 2, 3, 1}), {b, h * w, d});
}

Tensor unpatchify(const Tensor& tokens, std::size_t h, std::size_t w) {
  if (tokens.rank() != 3 || tokens.dim(1) != h * w) {
    throw DimensionError("unpatchify: tokens " + shape_str(tokens.shape()) + " vs grid " +
                         std::to_string(h) + "x" + std::to_string(w));
  }
  const std::size_t b = tokens.dim(0), d = tokens.dim(2);
  return permute(reshape(tokens, {b, h, w, d}), {0, 3, 1, 2});
}

Tensor KarmaNet::tikan_enhance(const Tensor& c5, const RunContext& ctx) {
  const Tensor x = pre_kan ? pre_kan->forward(c5) : c5;
  const std::size_t h = x.dim(2), w = x.dim(3);
  const Tensor tokens = kan.forward(patch_embed(x), h, w, ctx);
  return p5_proj.forward(unpatchify(tokens, h, w));
}

std::array<Tensor, 4> KarmaNet::top_down(const std::array<Tensor, 5>& c, const Tensor& p5) {
  std::array<Tensor, 4> p;
  p[3] = p5;
  for (std::size_t i = 3; i-- > 0;) {
    const Tensor& ci = c[i + 1];
    const Tensor up = upsample2d(p[i + 1], 2);
    if (ci.dim(2) != up.dim(2) || ci.dim(3) != up.dim(3)) {
      throw DimensionError("top_down resolution mismatch: " + shape_str(ci.shape()) + " vs " +
                           shape_str(up.shape()));
    }
    const Tensor lat = config.fpn_conv == FpnConv::dwsep ? lateral_dwsep[i].forward(ci)
                                                         : lateral_std[i].forward(ci);
    p[i] = add(lat, up);
  }
  return p;
}

std::array<Tensor, 4> KarmaNet::predict(const std::array<Tensor, 4>& p) {
  std::array<Tensor, 4> o;
  for (std::size_t i = 0; i < 4; ++i) o[i] = heads[i].forward(p[i]);
  return o;
}

Tensor KarmaNet::fuse(const std::array<Tensor, 4>& o) {
  Tensor acc;
  for (std::size_t i = 0; i < 4; ++i) {
    Tensor up = upsample2d(o[i], std::size_t{1} << (i + 2));
    if (config.learnable_fusion) up = scale_by(up, fusion_weights[i]);
    acc = acc.defined() ? add(acc, up) : up;
  }
  return acc;
}

Features KarmaNet::forward_features(const Tensor& x, const RunContext& ctx) {
  if (x.rank() != 4 || x.dim(1) != config.in_channels) {
    throw DimensionError("model expects [B x " + std::to_string(config.in_channels) +
                         " x H x W], got " + shape_str(x.shape()));
  }
  Features f;
  f.c = backbone.forward(x, ctx);
  f.p = top_down(f.c, tikan_enhance(f.c[4], ctx));
  f.o = predict(f.p);
  f.fused = fuse(f.o);
  return f;
}

void KarmaNet::collect(const std::string& prefix, std::vector<ParamRef>& params,
                       std::vector<BufferRef>& buffers) {
  backbone.collect(join_name(prefix, "backbone"), params, buffers);
  if (pre_kan) pre_kan->collect(join_name(prefix, "pre_kan"), params, buffers);
  kan.collect(join_name(prefix, "kan"), params, buffers);
  p5_proj.collect(join_name(prefix, "p5_proj"), params, buffers);
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string name = join_name(prefix, "lateral" + std::to_string(i + 2));
    if (config.fpn_conv == FpnConv::dwsep) lateral_dwsep[i].collect(name, params, buffers);
    else lateral_std[i].collect(name, params, buffers);
  }
  for (std::size_t i = 0; i < 4; ++i)
    heads[i].collect(join_name(prefix, "head" + std::to_string(i + 2)), params, buffers);
  if (config.learnable_fusion)
    for (std::size_t i = 0; i < 4; ++i)
      params.push_back({join_name(prefix, "alpha" + std::to_string(i + 2)), fusion_weights[i], ParamKind::scale});
}

}  // namespace karma
