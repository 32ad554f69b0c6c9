#include "karma/train.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "karma/error.hpp"
#include "karma/kernels.hpp"
#include "karma/rng.hpp"
#include "karma/tensor_io.hpp"

namespace karma {

namespace fs = std::filesystem;

Split split_indices(std::size_t n, bool holdout) {
  Split s;
  for (std::size_t i = 0; i < n; ++i) {
    if (holdout && n >= 5 && i % 5 == 4) s.val.push_back(i);
    else s.train.push_back(i);
  }
  if (s.val.empty()) s.val = s.train;
  return s;
}

void augment(std::vector<double>& image, std::vector<std::uint8_t>& mask, std::size_t channels, std::size_t h,
             std::size_t w, bool flip, unsigned quarter_turns) {
  quarter_turns %= 4;
  if (quarter_turns % 2 && h != w) throw ArgumentError("quarter turns need a square image");
  if (image.size() != channels * h * w || mask.size() != h * w) throw DimensionError("augment size mismatch");
  if (!flip && quarter_turns == 0) return;
  // source pixel for destination (y, x)
  auto source = [&](std::size_t y, std::size_t x) {
    for (unsigned t = 0; t < quarter_turns; ++t) {
      const std::size_t ny = x, nx = w - 1 - y;  // inverse of one counter-clockwise turn
      y = ny;
      x = nx;
    }
    if (flip) x = w - 1 - x;
    return y * w + x;
  };
  std::vector<double> img(image.size());
  std::vector<std::uint8_t> m(mask.size());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t s = source(y, x);
      m[y * w + x] = mask[s];
      for (std::size_t c = 0; c < channels; ++c) img[c * h * w + y * w + x] = image[c * h * w + s];
    }
  image.swap(img);
  mask.swap(m);
}

std::vector<std::uint8_t> argmax_classes(const Tensor& logits) {
  if (logits.rank() != 4) throw DimensionError("argmax_classes expects [B x K x H x W]");
  const std::size_t b = logits.dim(0), k = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
  const auto v = logits.data();
  std::vector<std::uint8_t> out(b * hw);
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t i = 0; i < hw; ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < k; ++c)
        if (v[(n * k + c) * hw + i] > v[(n * k + best) * hw + i]) best = c;
      out[n * hw + i] = static_cast<std::uint8_t>(best);
    }
  return out;
}

namespace {

struct Batch {
  Tensor images;
  std::vector<std::uint8_t> labels;
};

Batch make_batch(const Dataset& d, const std::vector<std::size_t>& idx, std::size_t from, std::size_t to,
                 const TrainConfig* aug, std::uint64_t epoch) {
  const std::size_t h = d.height, w = d.width, plane = 3 * h * w;
  std::vector<double> img;
  img.reserve((to - from) * plane);
  Batch b;
  for (std::size_t j = from; j < to; ++j) {
    const std::size_t i = idx[j];
    std::vector<double> x(d.images[i].data().begin(), d.images[i].data().end());
    std::vector<std::uint8_t> m = d.masks[i];
    if (aug) {
      Rng rng(hash64(aug->seed, epoch, i, 0xA06));
      const bool flip = aug->augment_flip && rng.below(2) == 1;
      unsigned turns = 0;
      if (aug->augment_rotate) turns = static_cast<unsigned>(h == w ? rng.below(4) : 2 * rng.below(2));
      augment(x, m, 3, h, w, flip, turns);
    }
    img.insert(img.end(), x.begin(), x.end());
    b.labels.insert(b.labels.end(), m.begin(), m.end());
  }
  b.images = Tensor({to - from, 3, h, w}, std::move(img));
  return b;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void check_dataset(const Dataset& d) {
  if (d.size() == 0) throw FormatError("dataset is empty");
  if (d.masks.size() != d.images.size()) throw FormatError("dataset images and masks differ in count");
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.images[i].shape() != Shape{3, d.height, d.width} || d.masks[i].size() != d.height * d.width)
      throw FormatError("dataset sample " + std::to_string(i) + " has the wrong shape");
  }
}

}  // namespace

EvalResult evaluate(KarmaNet& model, const Dataset& data, const std::vector<std::size_t>& indices,
                    std::size_t batch_size) {
  if (batch_size == 0) throw ArgumentError("batch_size must be positive");
  if (data.num_classes != model.config.num_classes)
    throw ArgumentError("dataset has " + std::to_string(data.num_classes) + " classes, model predicts " +
                        std::to_string(model.config.num_classes));
  NoGradGuard guard;
  EvalResult r{ConfusionMatrix(data.num_classes), {}};
  for (std::size_t from = 0; from < indices.size(); from += batch_size) {
    const std::size_t to = std::min(indices.size(), from + batch_size);
    const Batch b = make_batch(data, indices, from, to, nullptr, 0);
    r.cm += confusion(argmax_classes(model.forward(b.images, RunContext{})), b.labels, data.num_classes);
  }
  r.metrics = compute_metrics(r.cm);
  return r;
}

TrainResult train(const TrainConfig& cfg_in, const Dataset& data, const fs::path& out_dir, std::ostream* log) {
  check_dataset(data);
  TrainConfig cfg = cfg_in;
  cfg.model.num_classes = data.num_classes;
  cfg.validate();
  if (cfg.threads > 0) kernels::set_num_threads(cfg.threads);
  fs::create_directories(out_dir);
  std::ofstream file_log(out_dir / "train_log.txt");

  TrainResult result;
  const auto t0 = std::chrono::steady_clock::now();
  auto emit = [&](const std::string& line) {
    result.log.push_back(line);
    file_log << line << "\n";
    if (log) *log << line << "\n" << std::flush;
  };

  const Split split = split_indices(data.size(), cfg.val_split);
  std::vector<std::uint8_t> train_labels;
  for (auto i : split.train) train_labels.insert(train_labels.end(), data.masks[i].begin(), data.masks[i].end());
  const ClassWeights cw = class_weights(train_labels, data.num_classes);

  KarmaNet model(cfg.model);
  auto params = model.parameters();
  AdamW opt(params, cfg.optim);

  const std::size_t per_epoch = (split.train.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::uint64_t total_steps = cfg.epochs * per_epoch;
  {
    std::string w;
    for (double x : cw.weights) w += (w.empty() ? "" : ",") + fmt(x);
    emit("event=start variant=" + cfg.model.variant + " params=" + std::to_string(model.num_parameters()) +
         " train=" + std::to_string(split.train.size()) + " val=" + std::to_string(split.val.size()) +
         " classes=" + std::to_string(data.num_classes) + " class_weights=" + w + " seed=" + std::to_string(cfg.seed));
  }

  std::uint64_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = split.train;
    Rng shuffle(hash64(cfg.seed, epoch, 0x5f));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    EpochLog e;
    e.epoch = epoch;
    for (std::size_t from = 0; from < order.size(); from += cfg.batch_size) {
      const std::size_t to = std::min(order.size(), from + cfg.batch_size);
      const Batch b = make_batch(data, order, from, to, &cfg, epoch);
      const Tensor logits = model.forward(b.images, RunContext{true, step});
      const LossParts parts = total_loss(logits, b.labels, model, cw.weights, cfg.loss);
      opt.zero_grad();
      backward(parts.total);
      const ClipResult clip = clip_grad_norm(params, cfg.clip_norm);
      e.lr = cfg.warm_restarts ? cosine_lr_restarts(step, cfg.restart_period * per_epoch, cfg.optim.lr, cfg.lr_min)
                               : cosine_lr(step, total_steps, cfg.optim.lr, cfg.lr_min);
      opt.step(e.lr);
      ++step;
      e.loss += parts.total.item();
      e.ce += parts.ce;
      e.dice += parts.dice;
      e.smooth += parts.smooth;
      e.sparsity += parts.sparsity;
      e.grad_norm += clip.norm;
    }
    const double nb = static_cast<double>(per_epoch);
    e.loss /= nb;
    e.ce /= nb;
    e.dice /= nb;
    e.smooth /= nb;
    e.sparsity /= nb;
    e.grad_norm /= nb;

    if (cfg.prune_every > 0 && epoch % cfg.prune_every == 0) {
      for (KanLinear* k : model.kan_linears()) e.pruned += k->prune(cfg.model.ranks.prune_threshold);
    }

    e.val = evaluate(model, data, split.val, cfg.batch_size).metrics;
    emit("event=epoch epoch=" + std::to_string(epoch) + " loss=" + fmt(e.loss) + " ce=" + fmt(e.ce) +
         " dice=" + fmt(e.dice) + " smooth=" + fmt(e.smooth) + " sparsity=" + fmt(e.sparsity) + " lr=" + fmt(e.lr) +
         " grad_norm=" + fmt(e.grad_norm) + " pruned=" + std::to_string(e.pruned) +
         " val_miou=" + fmt(e.val.miou_with_bg) + " val_miou_wo_bg=" + fmt(e.val.miou_wo_bg));
    if (e.val.miou_with_bg > result.best_val_miou) {
      result.best_val_miou = e.val.miou_with_bg;
      result.best_epoch = epoch;
      result.checkpoint = out_dir / "best";
      save_checkpoint(result.checkpoint, model, cfg, epoch, e.val.miou_with_bg);
    }
    result.epochs.push_back(e);
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  emit("event=done best_epoch=" + std::to_string(result.best_epoch) + " best_val_miou=" + fmt(result.best_val_miou) +
       " checkpoint=" + result.checkpoint.string());
  return result;
}

TrainResult train(const TrainConfig& cfg, const fs::path& dataset_dir, const fs::path& out_dir, std::ostream* log) {
  return train(cfg, load_dataset(dataset_dir), out_dir, log);
}

namespace {

std::string file_name(const std::string& name) { return name + ".tnsr"; }

}  // namespace

void save_checkpoint(const fs::path& dir, KarmaNet& model, const TrainConfig& cfg, std::size_t epoch,
                     double val_miou) {
  const fs::path tmp = dir.string() + ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp / "params");
  fs::create_directories(tmp / "buffers");
  std::ostringstream manifest;
  manifest << "epoch = " << epoch << "\nval_miou = " << fmt(val_miou) << "\n";
  for (const auto& p : model.parameters()) {
    write_tensor(tmp / "params" / file_name(p.name), RawTensor::from(p.value));
    manifest << "param " << p.name << "\n";
  }
  for (const auto& b : model.buffers()) {
    RawTensor raw;
    raw.dims = {b.values->size()};
    raw.f64 = *b.values;
    write_tensor(tmp / "buffers" / file_name(b.name), raw);
    manifest << "buffer " << b.name << "\n";
  }
  std::ofstream(tmp / "manifest.txt") << manifest.str();
  std::ofstream(tmp / "config.ini") << to_ini(cfg);
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

Checkpoint load_checkpoint(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.txt") || !fs::exists(dir / "config.ini"))
    throw FormatError(dir.string() + ": not a checkpoint (missing manifest.txt or config.ini)");
  Checkpoint ck;
  apply_config(ck.config, read_ini(dir / "config.ini"));
  ck.model = std::make_unique<KarmaNet>(ck.config.model);

  std::map<std::string, Tensor> params;
  for (auto& p : ck.model->parameters()) params.emplace(p.name, p.value);
  std::map<std::string, std::vector<double>*> buffers;
  for (auto& b : ck.model->buffers()) buffers.emplace(b.name, b.values);

  std::ifstream m(dir / "manifest.txt");
  std::string line;
  std::size_t seen_p = 0, seen_b = 0;
  while (std::getline(m, line)) {
    std::istringstream ls(line);
    std::string kind, name;
    ls >> kind >> name;
    if (kind == "param") {
      const auto it = params.find(name);
      if (it == params.end()) throw FormatError(dir.string() + ": unexpected parameter '" + name + "'");
      const RawTensor raw = read_tensor(dir / "params" / file_name(name));
      Tensor& t = it->second;
      if (raw.dtype != Dtype::f64 || raw.dims != std::vector<std::uint64_t>(t.shape().begin(), t.shape().end()))
        throw FormatError(dir.string() + ": parameter '" + name + "' has the wrong shape");
      std::copy(raw.f64.begin(), raw.f64.end(), t.mutable_data().begin());
      ++seen_p;
    } else if (kind == "buffer") {
      const auto it = buffers.find(name);
      if (it == buffers.end()) throw FormatError(dir.string() + ": unexpected buffer '" + name + "'");
      const RawTensor raw = read_tensor(dir / "buffers" / file_name(name));
      if (raw.dtype != Dtype::f64 || raw.f64.size() != it->second->size())
        throw FormatError(dir.string() + ": buffer '" + name + "' has the wrong size");
      *it->second = raw.f64;
      ++seen_b;
    } else if (kind == "epoch") {
      ck.epoch = std::stoul(line.substr(line.find('=') + 1));
    } else if (kind == "val_miou") {
      ck.val_miou = std::stod(line.substr(line.find('=') + 1));
    }
  }
  if (seen_p != params.size() || seen_b != buffers.size())
    throw FormatError(dir.string() + ": checkpoint is missing parameters or buffers");
  return ck;
}

}  // namespace karma
