#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "karma/backbone.hpp"
#include "karma/kan.hpp"

namespace karma {

enum class FpnConv { dwsep, standard };

struct ModelConfig {
  std::string variant = "karma";
  std::size_t in_channels = 3;
  std::array<std::size_t, 5> stage_channels{48, 96, 192, 384, 576};
  std::size_t fpn_width = 64;
  std::optional<std::size_t> pre_kan_projection;  // 1x1 conv on c5 before the KAN block
  double kan_hidden_ratio = 1.0;
  RankConfig ranks{144, 36};
  bool share_splines = true;
  GridConfig grid;
  KanInit kan_init = KanInit::random;
  std::size_t num_classes = 9;
  FpnConv fpn_conv = FpnConv::dwsep;
  bool learnable_fusion = false;
  std::uint64_t seed = 1;

  /// "karma", "flash" or "high".
  static ModelConfig preset(const std::string& variant, std::size_t num_classes = 9);

  std::size_t kan_channels() const { return pre_kan_projection.value_or(stage_channels[4]); }
  std::size_t kan_hidden() const;
  void validate() const;
};

/// Intermediate maps of one forward pass.
struct Features {
  std::array<Tensor, 5> c;  // c1..c5
  std::array<Tensor, 4> p;  // p2..p5
  std::array<Tensor, 4> o;  // per-level logits o2..o5
  Tensor fused;
};

class KarmaNet : public Module {
 public:
  explicit KarmaNet(const ModelConfig& config);

  /// x: [B x in_channels x H x W] -> logits [B x K x H x W].
  Tensor forward(const Tensor& x, const RunContext& ctx) { return forward_features(x, ctx).fused; }
  Features forward_features(const Tensor& x, const RunContext& ctx);

  Tensor tikan_enhance(const Tensor& c5, const RunContext& ctx);
  std::array<Tensor, 4> top_down(const std::array<Tensor, 5>& c, const Tensor& p5);
  std::array<Tensor, 4> predict(const std::array<Tensor, 4>& p);
  Tensor fuse(const std::array<Tensor, 4>& o);

  void collect(const std::string& prefix, std::vector<ParamRef>& params,
               std::vector<BufferRef>& buffers) override;

  /// All KanLinear layers, for regularisers and pruning.
  std::vector<KanLinear*> kan_linears() { return {&kan.layer.fc1, &kan.layer.fc2}; }

  ModelConfig config;
  BottomUp backbone;
  std::optional<Conv2d> pre_kan;
  KanBlock kan;
  Conv2d p5_proj;
  std::array<DwSepConv, 3> lateral_dwsep;  // for c2, c3, c4
  std::array<Conv2d, 3> lateral_std;
  std::array<Conv2d, 4> heads;  // for p2..p5
  std::array<Tensor, 4> fusion_weights;  // [1] each, only with learnable_fusion
};

/// [B x D x h x w] -> [B x (h*w) x D], row-major over (h, w).
Tensor patch_embed(const Tensor& map);
Tensor unpatchify(const Tensor& tokens, std::size_t h, std::size_t w);

}  // namespace karma
