// Command-line front end: synth, train, eval, audit, gradcheck.
#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include "karma/audit.hpp"
#include "karma/config.hpp"
#include "karma/error.hpp"
#include "karma/gradsuite.hpp"
#include "karma/tensor_io.hpp"
#include "karma/train.hpp"

using namespace karma;

namespace {

std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out += c;
  }
  return out + "\"";
}

int fail(const std::string& kind, const std::string& message, int code) {
  std::cerr << "error=" << kind << " message=" << quoted(message) << "\n";
  return code;
}

using Values = std::map<std::string, std::string>;

// Config file first, then --set pairs, then dedicated flags.
Values gather(const std::string& config, const std::vector<std::string>& sets, const Values& flags) {
  Values v;
  if (!config.empty()) v = read_ini(config);
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ArgumentError("--set expects KEY=VALUE, got '" + s + "'");
    v[s.substr(0, eq)] = s.substr(eq + 1);
  }
  for (const auto& [k, val] : flags) v[k] = val;
  return v;
}

template <class T>
void flag(Values& out, const std::string& key, const T& value, bool given) {
  if (!given) return;
  if constexpr (std::is_same_v<T, std::string>) out[key] = value;
  else out[key] = std::to_string(value);
}

std::string option_list(const CLI::App* app) {
  std::string s;
  for (const CLI::Option* o : app->get_options()) {
    const std::string n = o->get_name();
    if (n.empty() || n == "--help") continue;
    s += (s.empty() ? "" : ", ") + n;
  }
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"KARMA segmentation toolkit"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "write a synthetic dataset directory");
  std::string s_config, s_out;
  std::vector<std::string> s_set;
  std::size_t s_count = 0, s_classes = 0, s_height = 0, s_width = 0;
  std::uint64_t s_seed = 0;
  synth->add_option("--config", s_config, "ini file with a [synth] section");
  synth->add_option("--out", s_out, "output directory")->required();
  auto* s_count_opt = synth->add_option("--count", s_count, "number of samples");
  auto* s_classes_opt = synth->add_option("--classes", s_classes, "classes including background");
  auto* s_height_opt = synth->add_option("--height", s_height);
  auto* s_width_opt = synth->add_option("--width", s_width);
  auto* s_seed_opt = synth->add_option("--seed", s_seed);
  synth->add_option("--set", s_set, "override KEY=VALUE");

  // train
  auto* tr = app.add_subcommand("train", "train a model on a dataset directory");
  std::string t_config, t_data, t_out, t_variant;
  std::vector<std::string> t_set;
  std::size_t t_epochs = 0, t_batch = 0;
  double t_lr = 0;
  std::uint64_t t_seed = 0;
  int t_threads = 0;
  tr->add_option("--config", t_config, "ini file");
  tr->add_option("--data", t_data, "dataset directory")->required();
  tr->add_option("--out", t_out, "output directory")->required();
  auto* t_variant_opt = tr->add_option("--variant", t_variant, "karma, flash or high");
  auto* t_epochs_opt = tr->add_option("--epochs", t_epochs);
  auto* t_batch_opt = tr->add_option("--batch-size", t_batch);
  auto* t_lr_opt = tr->add_option("--lr", t_lr);
  auto* t_seed_opt = tr->add_option("--seed", t_seed);
  auto* t_threads_opt = tr->add_option("--threads", t_threads, "1 gives bit-reproducible runs");
  tr->add_option("--set", t_set, "override KEY=VALUE");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string e_ckpt, e_data, e_split = "val";
  std::size_t e_batch = 4;
  ev->add_option("--checkpoint", e_ckpt)->required();
  ev->add_option("--data", e_data)->required();
  ev->add_option("--split", e_split, "val, train or all")->check(CLI::IsMember({"val", "train", "all"}));
  ev->add_option("--batch-size", e_batch);

  // audit
  auto* au = app.add_subcommand("audit", "parameter, FLOP and activation-memory report");
  std::string a_variant = "karma", a_kv, a_config;
  std::size_t a_res = 256, a_classes = 9, a_batch = 1, a_bytes = 4;
  std::uint64_t a_fpm = 1;
  au->add_option("--variant", a_variant);
  au->add_option("--res", a_res, "square input resolution");
  au->add_option("--classes", a_classes);
  au->add_option("--batch", a_batch);
  au->add_option("--bytes", a_bytes, "bytes per activation element");
  au->add_option("--flops-per-mac", a_fpm);
  au->add_option("--kv", a_kv, "also write key=value report to this file");
  au->add_option("--config", a_config, "ini file whose [model] section overrides the preset");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  std::string g_module = "all";
  gc->add_option("--module", g_module, "all, tensor, spline, kan, backbone, losses, model");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string valid;
    for (const auto* sub : app.get_subcommands())
      valid = sub->get_name() + " options: " + option_list(sub);
    if (valid.empty()) valid = "subcommands: synth, train, eval, audit, gradcheck";
    return fail("usage", std::string(e.what()) + "; " + valid, 2);
  }

  try {
    if (synth->parsed()) {
      Values f;
      flag(f, "synth.count", s_count, s_count_opt->count() > 0);
      flag(f, "synth.num_classes", s_classes, s_classes_opt->count() > 0);
      flag(f, "synth.height", s_height, s_height_opt->count() > 0);
      flag(f, "synth.width", s_width, s_width_opt->count() > 0);
      flag(f, "synth.seed", s_seed, s_seed_opt->count() > 0);
      SynthSpec spec;
      std::size_t count = 16;
      apply_synth_config(spec, count, gather(s_config, s_set, f));
      write_dataset(s_out, spec, count);
      std::cout << "event=synth out=" << s_out << " count=" << count << " height=" << spec.height
                << " width=" << spec.width << " classes=" << spec.num_classes << " seed=" << spec.seed << "\n";
    } else if (tr->parsed()) {
      TrainConfig cfg;
      Values base = t_config.empty() ? Values{} : read_ini(t_config);
      apply_config(cfg, base);
      apply_env(cfg);
      Values f;
      flag(f, "model.variant", t_variant, t_variant_opt->count() > 0);
      flag(f, "train.epochs", t_epochs, t_epochs_opt->count() > 0);
      flag(f, "train.batch_size", t_batch, t_batch_opt->count() > 0);
      if (t_lr_opt->count() > 0) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", t_lr);
        f["train.lr"] = buf;
      }
      flag(f, "train.seed", t_seed, t_seed_opt->count() > 0);
      flag(f, "model.seed", t_seed, t_seed_opt->count() > 0);
      flag(f, "train.threads", t_threads, t_threads_opt->count() > 0);
      apply_config(cfg, gather("", t_set, f));
      const TrainResult r = train(cfg, t_data, t_out, &std::cout);
      (void)r;
    } else if (ev->parsed()) {
      Checkpoint ck = load_checkpoint(e_ckpt);
      const Dataset d = load_dataset(e_data);
      const Split split = split_indices(d.size(), ck.config.val_split);
      std::vector<std::size_t> idx = e_split == "val" ? split.val : split.train;
      if (e_split == "all") {
        idx.clear();
        for (std::size_t i = 0; i < d.size(); ++i) idx.push_back(i);
      }
      const EvalResult r = evaluate(*ck.model, d, idx, e_batch);
      std::cout << "event=eval split=" << e_split << " samples=" << idx.size() << " " << r.metrics.to_kv() << "\n";
    } else if (au->parsed()) {
      TrainConfig cfg;
      cfg.model = ModelConfig::preset(a_variant, a_classes);
      if (!a_config.empty()) {
        Values v;
        for (const auto& [k, val] : read_ini(a_config))
          if (k.rfind("model.", 0) == 0) v[k] = val;
        apply_config(cfg, v);
      }
      AuditOptions opt;
      opt.batch = a_batch;
      opt.bytes_per_elem = a_bytes;
      opt.flops_per_mac = a_fpm;
      const CostReport r = audit(cfg.model, a_res, a_res, opt);
      std::cout << r.text();
      char line[128];
      std::snprintf(line, sizeof line, "params=%llu\ngflops=%.6f\n", static_cast<unsigned long long>(r.params_total),
                    r.gflops());
      std::cout << line;
      if (!a_kv.empty()) {
        std::ofstream out(a_kv);
        out << r.key_values();
        if (!out) throw std::runtime_error("cannot write " + a_kv);
      }
    } else if (gc->parsed()) {
      const auto entries = run_gradient_suite(g_module);
      std::size_t failed = 0;
      for (const auto& e : entries) {
        char line[96];
        std::snprintf(line, sizeof line, " max_rel_error=%.3e tolerance=%.0e probes=%zu status=%s",
                      e.result.max_rel_error, e.tolerance, e.result.probes, e.passed() ? "pass" : "fail");
        std::cout << "module=" << e.module << " op=" << quoted(e.name) << line << "\n";
        if (!e.passed()) {
          ++failed;
          std::cout << "  worst " << e.result.worst << "\n";
        }
      }
      std::cout << "checks=" << entries.size() << " failed=" << failed << "\n";
      return failed == 0 ? 0 : 1;
    }
  } catch (const ArgumentError& e) {
    return fail("argument", e.what(), 2);
  } catch (const DimensionError& e) {
    return fail("dimension", e.what(), 2);
  } catch (const FormatError& e) {
    return fail("format", e.what(), 3);
  } catch (const NumericError& e) {
    return fail("numeric", e.what(), 4);
  } catch (const std::exception& e) {
    return fail("runtime", e.what(), 1);
  }
  return 0;
}
