#include "karma/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "karma/ops.hpp"
#include "karma/rng.hpp"

namespace karma {

Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo, double hi,
                     bool requires_grad) {
  Rng rng(seed);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(shape, std::move(v), requires_grad);
}

GradCheckResult gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                          std::vector<Tensor> inputs, const GradCheckOptions& opt) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor projection;
  auto reduce = [&](const Tensor& out) {
    if (out.numel() == 1 && out.rank() == 0) return out;
    if (!projection.defined()) projection = random_tensor(out.shape(), opt.seed ^ 0x5eed, 0.5, 1.5);
    return sum(mul(out, projection));
  };

  backward(reduce(fn(inputs)));

  GradCheckResult res;
  Rng rng(opt.seed);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor& t = inputs[k];
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    std::vector<std::size_t> coords(t.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opt.samples_per_input > 0 && opt.samples_per_input < coords.size()) {
      for (std::size_t i = 0; i < opt.samples_per_input; ++i)
        std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
      coords.resize(opt.samples_per_input);
    }
    NoGradGuard guard;
    for (std::size_t i : coords) {
      auto data = t.mutable_data();
      const double orig = data[i];
      data[i] = orig + opt.step;
      const double fp = reduce(fn(inputs)).item();
      data[i] = orig - opt.step;
      const double fm = reduce(fn(inputs)).item();
      data[i] = orig;
      const double numeric = (fp - fm) / (2.0 * opt.step);
      const double a = analytic[i];
      const double rel =
          std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), opt.floor});
      ++res.probes;
      if (rel > res.max_rel_error || res.worst.empty()) {
        if (rel >= res.max_rel_error) {
          res.max_rel_error = rel;
          std::ostringstream os;
          os << "input#" << k << "[" << i << "] analytic=" << a << " numeric=" << numeric;
          res.worst = os.str();
        }
      }
    }
  }
  for (auto& t : inputs) t.zero_grad();
  return res;
}

}  // namespace karma
