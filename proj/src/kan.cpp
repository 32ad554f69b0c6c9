#include "karma/kan.hpp"

#include <cmath>

#include "karma/error.hpp"
#include "karma/linalg.hpp"

namespace karma {

KanLinear::KanLinear(const KanLinearOptions& opt, Rng& rng) : options(opt) {
  if (opt.in == 0 || opt.out == 0) throw ArgumentError("KanLinear extents must be positive");
  if (opt.rank == 0 || opt.rank > std::min(opt.in, opt.out)) {
    throw ArgumentError("KanLinear rank " + std::to_string(opt.rank) + " outside [1, " +
                        std::to_string(std::min(opt.in, opt.out)) + "]");
  }
  if (opt.spline_rank == 0) throw ArgumentError("KanLinear spline_rank must be >= 1");
  grid = make_grid(opt.grid.grid_size, opt.grid.order, opt.grid.lo, opt.grid.hi, opt.grid.noise_scale);
  noise_salt = rng.next();
  const std::size_t nb = grid.num_basis();
  const std::size_t spline_cols = opt.share_splines ? nb : opt.in * nb;
  if (opt.spline_rank > opt.out) {
    throw ArgumentError("KanLinear spline_rank " + std::to_string(opt.spline_rank) +
                        " exceeds output width " + std::to_string(opt.out));
  }
  const double in = static_cast<double>(opt.in);
  if (opt.init == KanInit::svd) {
    const Tensor dense = uniform_param({opt.in, opt.out}, 1.0 / std::sqrt(in), rng);
    auto [u, v] = svd_init(dense, opt.rank);
    base_u = u;
    base_v = v;
    base_u.set_requires_grad(true);
    base_v.set_requires_grad(true);
  } else {
    // Product entries get the variance of U(+-1/sqrt(in)).
    const double a = std::pow(3.0 / (static_cast<double>(opt.rank) * in), 0.25);
    base_u = uniform_param({opt.in, opt.rank}, a, rng);
    base_v = uniform_param({opt.rank, opt.out}, a, rng);
  }
  base_bias = Tensor::zeros({opt.out}, true);
  // Spline coefficient entries start near 0.1 / sqrt(in) in magnitude.
  const double s = std::pow(0.09 / (static_cast<double>(opt.spline_rank) * in), 0.25);
  spline_u = uniform_param({opt.out, opt.spline_rank}, s, rng);
  spline_v = uniform_param({opt.spline_rank, spline_cols}, s, rng);
  scale_base = Tensor::full({opt.out}, 1.0, true);
  scale_spline = Tensor::full({opt.out}, 1.0, true);
}

Tensor KanLinear::base(const Tensor& x) const {
  if (x.rank() != 2 || x.dim(1) != options.in) {
    throw DimensionError("KanLinear expects [N x " + std::to_string(options.in) + "], got " +
                         shape_str(x.shape()));
  }
  return silu(add_lastdim(matmul(matmul(x, base_u), base_v), base_bias));
}

Tensor KanLinear::spline(const Tensor& x, const SplineGrid& g) const {
  if (x.rank() != 2 || x.dim(1) != options.in) {
    throw DimensionError("KanLinear expects [N x " + std::to_string(options.in) + "], got " +
                         shape_str(x.shape()));
  }
  const Tensor basis = bspline_basis(x, g);  // [N x in x nb]
  const Tensor flat = options.share_splines
                          ? sum_axis(basis, 1)
                          : reshape(basis, {x.dim(0), options.in * g.num_basis()});
  return matmul(matmul(flat, transpose(spline_v)), transpose(spline_u));
}

Tensor KanLinear::forward(const Tensor& x, const RunContext& ctx) const {
  const SplineGrid& g =
      ctx.training && grid.noise_scale > 0.0 ? grid_noise(grid, noise_salt ^ (ctx.step * 0x9E37ULL)) : grid;
  return add(mul_lastdim(base(x), scale_base), mul_lastdim(spline(x, g), scale_spline));
}

Tensor KanLinear::spline_coefficients() const { return matmul(spline_u, spline_v); }

std::size_t KanLinear::prune(double tau) {
  std::size_t zeros = 0;
  for (Tensor* t : {&base_u, &base_v, &spline_u, &spline_v}) {
    for (double& v : t->mutable_data()) {
      if (std::fabs(v) <= tau) v = 0.0;
      if (v == 0.0) ++zeros;
    }
  }
  return zeros;
}

void KanLinear::collect(const std::string& prefix, std::vector<ParamRef>& params,
                        std::vector<BufferRef>&) {
  params.push_back({join_name(prefix, "base_u"), base_u, ParamKind::weight});
  params.push_back({join_name(prefix, "base_v"), base_v, ParamKind::weight});
  params.push_back({join_name(prefix, "base_bias"), base_bias, ParamKind::bias});
  params.push_back({join_name(prefix, "spline_u"), spline_u, ParamKind::weight});
  params.push_back({join_name(prefix, "spline_v"), spline_v, ParamKind::weight});
  params.push_back({join_name(prefix, "scale_base"), scale_base, ParamKind::scale});
  params.push_back({join_name(prefix, "scale_spline"), scale_spline, ParamKind::scale});
}

namespace {

KanLinearOptions linear_options(std::size_t in, std::size_t out, const RankConfig& ranks,
                                bool share, const GridConfig& grid, KanInit init) {
  KanLinearOptions o;
  o.in = in;
  o.out = out;
  o.rank = ranks.rank;
  o.spline_rank = ranks.spline_rank;
  o.share_splines = share;
  o.grid = grid;
  o.init = init;
  return o;
}

}  // namespace

KanLayer::KanLayer(std::size_t dim, std::size_t hidden, const RankConfig& ranks, bool share_splines,
                   const GridConfig& grid, KanInit init, Rng& rng)
    : fc1(linear_options(dim, hidden, ranks, share_splines, grid, init), rng),
      fc2(linear_options(hidden, dim, ranks, share_splines, grid, init), rng),
      dw1(hidden, hidden, 3, ConvMode::depthwise, true, rng),
      dw2(dim, dim, 3, ConvMode::depthwise, true, rng),
      bn1(hidden),
      bn2(dim) {}

Tensor KanLayer::dw_bn_relu(const Tensor& rows, std::size_t b, std::size_t h, std::size_t w,
                            const Conv2d& dw, BatchNorm2d& bn, const RunContext& ctx) {
  const std::size_t c = rows.dim(1);
  const Tensor grid = reshape(permute(reshape(rows, {b, h * w, c}), {0, 2, 1}), {b, c, h, w});
  const Tensor y = relu(bn.forward(dw.forward(grid), ctx));
  return reshape(permute(reshape(y, {b, c, h * w}), {0, 2, 1}), {b * h * w, c});
}

Tensor KanLayer::forward(const Tensor& tokens, std::size_t h, std::size_t w, const RunContext& ctx) {
  if (tokens.rank() != 3 || tokens.dim(1) != h * w) {
    throw DimensionError("KanLayer tokens " + shape_str(tokens.shape()) + " do not match " +
                         std::to_string(h) + "x" + std::to_string(w) + " grid");
  }
  const std::size_t b = tokens.dim(0), d = tokens.dim(2);
  Tensor x = reshape(tokens, {b * h * w, d});
  x = dw_bn_relu(fc1.forward(x, ctx), b, h, w, dw1, bn1, ctx);
  x = dw_bn_relu(fc2.forward(x, ctx), b, h, w, dw2, bn2, ctx);
  return reshape(x, {b, h * w, d});
}

void KanLayer::collect(const std::string& prefix, std::vector<ParamRef>& params,
                       std::vector<BufferRef>& buffers) {
  fc1.collect(join_name(prefix, "fc1"), params, buffers);
  dw1.collect(join_name(prefix, "dw1"), params, buffers);
  bn1.collect(join_name(prefix, "bn1"), params, buffers);
  fc2.collect(join_name(prefix, "fc2"), params, buffers);
  dw2.collect(join_name(prefix, "dw2"), params, buffers);
  bn2.collect(join_name(prefix, "bn2"), params, buffers);
}

KanBlock::KanBlock(std::size_t dim, std::size_t hidden, const RankConfig& ranks, bool share_splines,
                   const GridConfig& grid, KanInit init, Rng& rng)
    : norm(dim), layer(dim, hidden, ranks, share_splines, grid, init, rng) {}

Tensor KanBlock::forward(const Tensor& tokens, std::size_t h, std::size_t w, const RunContext& ctx) {
  return add(tokens, layer.forward(norm.forward(tokens), h, w, ctx));
}

void KanBlock::collect(const std::string& prefix, std::vector<ParamRef>& params,
                       std::vector<BufferRef>& buffers) {
  norm.collect(join_name(prefix, "norm"), params, buffers);
  layer.collect(join_name(prefix, "layer"), params, buffers);
}

Tensor prune_weights(const Tensor& w, double tau) {
  if (tau < 0.0) throw ArgumentError("prune threshold must be >= 0");
  std::vector<double> v(w.data().begin(), w.data().end());
  for (auto& x : v)
    if (!(std::fabs(x) > tau)) x = 0.0;
  return Tensor(w.shape(), std::move(v));
}

std::size_t select_rank(const Tensor& w, double energy) {
  if (w.rank() != 2) throw DimensionError("select_rank expects a matrix");
  if (!(energy > 0.0 && energy <= 1.0)) throw ArgumentError("energy threshold must be in (0, 1]");
  const auto s = linalg::svd(std::vector<double>(w.data().begin(), w.data().end()), w.dim(0), w.dim(1)).s;
  double total = 0.0;
  for (double v : s) total += v * v;
  if (total == 0.0) return 1;
  double acc = 0.0;
  for (std::size_t r = 0; r < s.size(); ++r) {
    acc += s[r] * s[r];
    if (acc >= energy * total) return r + 1;
  }
  return s.size();
}

std::pair<Tensor, Tensor> svd_init(const Tensor& w, std::size_t r) {
  if (w.rank() != 2) throw DimensionError("svd_init expects a matrix");
  const std::size_t m = w.dim(0), n = w.dim(1);
  if (r < 1 || r > std::min(m, n)) {
    throw ArgumentError("svd_init rank " + std::to_string(r) + " outside [1, " +
                        std::to_string(std::min(m, n)) + "]");
  }
  const auto d = linalg::svd(std::vector<double>(w.data().begin(), w.data().end()), m, n);
  std::vector<double> u(m * r), v(r * n);
  for (std::size_t j = 0; j < r; ++j) {
    const double root = std::sqrt(d.s[j]);
    for (std::size_t i = 0; i < m; ++i) u[i * r + j] = d.u[i * d.k + j] * root;
    for (std::size_t i = 0; i < n; ++i) v[j * n + i] = d.v[i * d.k + j] * root;
  }
  return {Tensor({m, r}, std::move(u)), Tensor({r, n}, std::move(v))};
}

}  // namespace karma
