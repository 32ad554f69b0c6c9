#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "karma/model.hpp"

namespace karma {

struct AuditOptions {
  std::size_t batch = 1;
  /// FLOPs charged per multiply-accumulate.
  std::uint64_t flops_per_mac = 1;
  std::size_t bytes_per_elem = 4;
  std::uint64_t bn_flops_per_elem = 4;
  std::uint64_t act_flops_per_elem = 4;
  /// Spline cost per scalar is (G + O) * (O + 1) * spline_constant.
  std::uint64_t spline_constant = 2;
};

struct ModuleCost {
  std::string name;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;          // conv and matmul only
  std::uint64_t extra_flops = 0;   // norms, activations, spline evaluation
};

struct CostReport {
  std::string variant;
  std::size_t height = 0, width = 0;
  AuditOptions options;
  std::vector<ModuleCost> modules;
  std::uint64_t params_total = 0;
  std::uint64_t macs_total = 0;
  std::uint64_t flops_total = 0;
  std::uint64_t activation_bytes_peak = 0;

  std::uint64_t flops(const ModuleCost& m) const { return m.macs * options.flops_per_mac + m.extra_flops; }
  double gflops() const { return static_cast<double>(flops_total) * 1e-9; }
  double mparams() const { return static_cast<double>(params_total) * 1e-6; }

  std::string text() const;
  /// One `key=value` per line.
  std::string key_values() const;
};

/// Peak of simultaneously live tensors over an op sequence. The network input
/// is not counted; tensors marked `keep` stay live until the end.
class ActivationTrace {
 public:
  int add(std::uint64_t elems, const std::vector<int>& inputs, bool keep = false);
  std::uint64_t peak_elems() const;
  std::size_t size() const { return elems_.size(); }

 private:
  std::vector<std::uint64_t> elems_;
  std::vector<std::size_t> last_use_;
  std::vector<bool> keep_;
};

/// Analytic cost of the network described by `cfg` at H x W.
CostReport audit(const ModelConfig& cfg, std::size_t height, std::size_t width, const AuditOptions& opt = {});

/// Exact enumeration of the learnable scalars of a built model, grouped by
/// module name in the same granularity as `audit`.
std::map<std::string, std::uint64_t> count_params(KarmaNet& model);

std::uint64_t estimate_activation_memory(const ModelConfig& cfg, std::size_t height, std::size_t width,
                                         std::size_t bytes_per_elem = 4, std::size_t batch = 1);

}  // namespace karma
