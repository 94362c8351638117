// SPDX-License-Identifier: Apache-2.0

#include "commands.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <system_error>

#include "CLI11.hpp"
#include "rblr/io.hpp"
#include "rblr/memory.hpp"

namespace rblr::cli {

namespace fs = std::filesystem;

namespace {

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw FormatError(FormatError::Code::Io, "cannot create output directory '" + dir.string() + "': " + ec.message());
}

std::string mb_line(const char* label, std::int64_t bytes) {
  return fmt("%-16s %14lld B  %12.3f MB  (~%.0f MB)\n", label, static_cast<long long>(bytes), to_mb(bytes),
             std::round(to_mb(bytes)));
}

}  // namespace

int cmd_plan(const RunConfig& cfg, std::ostream& out) {
  if (!cfg.network && !cfg.plan.sweep) throw ConfigError("plan needs a 'network' section or plan.sweep = true");
  ensure_dir(cfg.out_dir);
  if (cfg.network) {
    const NetworkSpec& spec = *cfg.network;
    const MemoryReport r = memory_report(spec);
    out << "memory plan (float32 storage, 3 live states, 1 MB = 1e6 B)\n";
    out << "input " << spec.input_shape.str() << ", " << spec.layers.size() << " layers\n\n";
    out << fmt("%5s %6s %6s %-13s %12s\n", "layer", "m", "n", "resolution", "kernel_MB");
    std::string csv = "layer,m,n,resolution,kernel_bytes\n";
    for (std::size_t j = 0; j < spec.layers.size(); ++j) {
      const auto& l = spec.layers[j];
      const std::string res(to_string(l.resolution));
      out << fmt("%5zu %6d %6d %-13s %12.4f\n", j + 1, l.m, l.n, res.c_str(), to_mb(r.kernel_bytes_per_layer[j]));
      csv += fmt("%zu,%d,%d,%s,%lld\n", j + 1, l.m, l.n, res.c_str(),
                 static_cast<long long>(r.kernel_bytes_per_layer[j]));
    }
    out << "\n" << mb_line("kernel memory", r.kernel_bytes_total) << mb_line("state memory", r.state_bytes)
        << mb_line("total", r.total_bytes);
    csv += fmt("total_kernels,,,,%lld\nstates,,,,%lld\ntotal,,,,%lld\n", static_cast<long long>(r.kernel_bytes_total),
               static_cast<long long>(r.state_bytes), static_cast<long long>(r.total_bytes));
    write_text(cfg.out_dir / "memory_plan.csv", csv);
    out << "wrote " << (cfg.out_dir / "memory_plan.csv").string() << "\n";
  }
  if (cfg.plan.sweep) {
    const auto rows = memory_curves(cfg.plan.curves);
    write_text(cfg.out_dir / "memory_curves.csv", curves_csv(rows));
    out << "wrote " << rows.size() << " curve rows to " << (cfg.out_dir / "memory_curves.csv").string() << "\n";
  }
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  if (!cfg.network) throw ConfigError("train needs a 'network' section");
  const Dataset data = load_dataset(cfg);
  if (data.video.shape() != cfg.network->input_shape) {
    throw ShapeError("data shape " + data.video.shape().str() + " does not match network input " +
                     cfg.network->input_shape.str());
  }
  ensure_dir(cfg.out_dir);
  const TrainResult r = train(*cfg.network, cfg.train, data);

  write_text(cfg.out_dir / "metrics.csv", metrics_csv(r.metrics));
  std::string timing = "iter,wall_time_s\n";
  for (std::size_t k = 0; k < r.metrics.size(); ++k) timing += fmt("%d,%.6f\n", r.metrics[k].iter, r.wall_time_s[k]);
  write_text(cfg.out_dir / "timing.csv", timing);
  std::string events = "iteration,from_m,to_m,loss_before,loss_zero_init\n";
  for (const auto& e : r.rank_changes) {
    events += fmt("%d,%d,%d,%.17g,%.17g\n", e.iteration, e.from_m, e.to_m, e.loss_before, e.loss_zero_init);
  }
  write_text(cfg.out_dir / "rank_changes.csv", events);
  save_checkpoint(cfg.out_dir / "model.ckpt", r.model);

  const auto& first = r.metrics.front();
  const auto& last = r.metrics.back();
  out << fmt("trained %d iterations: loss %.6g -> %.6g, mean IoU %.4f -> %.4f, block rank %d\n", cfg.train.iterations,
             first.loss, last.loss, first.mean_iou, last.mean_iou, last.current_m);
  for (const auto& e : r.rank_changes) {
    out << fmt("rank %d -> %d at iteration %d (loss %.12g, zero-init %.12g)\n", e.from_m, e.to_m, e.iteration,
               e.loss_before, e.loss_zero_init);
  }
  out << "wrote model.ckpt, metrics.csv, timing.csv, rank_changes.csv to " << cfg.out_dir.string() << "\n";
  return kExitOk;
}

int cmd_verify(const std::string& fault, std::ostream& out) {
  bool ok = true;
  for (const auto& c : run_verify_checks(fault)) {
    out << fmt("%s %-30s error %.3e  tolerance %.1e\n", c.passed ? "PASS" : "FAIL", c.name.c_str(), c.error,
               c.tolerance);
    ok = ok && c.passed;
  }
  out << (ok ? "all checks passed\n" : "verification FAILED\n");
  return ok ? kExitOk : kExitValidation;
}

int cmd_infer(const RunConfig& cfg, const InferOptions& opt, std::ostream& out) {
  const Model model = load_checkpoint(opt.checkpoint);
  Tensor5D video;
  std::vector<int> labels;
  if (opt.input) {
    video = read_tensor(*opt.input);
    if (opt.labels) labels = read_labels(*opt.labels, video.shape());
  } else {
    Dataset d = load_dataset(cfg);
    video = std::move(d.video);
    labels = opt.labels ? read_labels(*opt.labels, video.shape()) : std::move(d.labels);
  }
  if (video.shape() != model.spec.input_shape) {
    throw ShapeError("input shape " + video.shape().str() + " does not match checkpoint network input " +
                     model.spec.input_shape.str());
  }
  const std::vector<int> pred = predict(model, video);
  ensure_dir(cfg.out_dir);
  const Shape s = video.shape();
  write_labels(cfg.out_dir / "segmentation.rblr", s.with_channels(1), pred);
  out << "wrote " << (cfg.out_dir / "segmentation.rblr").string() << "\n";
  if (labels.empty()) return kExitOk;

  const auto plane = static_cast<std::size_t>(s.nx * s.ny);
  std::string csv = "slice,mean_iou\n";
  for (std::int64_t z = 0; z < s.nz; ++z) {
    const std::size_t off = plane * static_cast<std::size_t>(z);
    const std::vector<std::uint8_t> all(plane, 1);
    const double iou = mean_iou(std::span(pred).subspan(off, plane), std::span(labels).subspan(off, plane), all,
                                model.head.classes);
    csv += fmt("%lld,%.17g\n", static_cast<long long>(z), iou);
  }
  write_text(cfg.out_dir / "slice_iou.csv", csv);
  const std::vector<std::uint8_t> all(pred.size(), 1);
  out << fmt("mean IoU %.17g\n", mean_iou(pred, labels, all, model.head.classes));
  out << "wrote " << (cfg.out_dir / "slice_iou.csv").string() << "\n";
  return kExitOk;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Reversible block-low-rank network toolkit"};
  app.name("rblr");
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--seed", seed, "override train.seed");
  app.add_option("--out", out_dir, "output directory (overrides output.dir)");

  auto* plan = app.add_subcommand("plan", "memory report for the configured network");
  auto* train_cmd = app.add_subcommand("train", "train on the configured data");
  auto* verify = app.add_subcommand("verify", "run the built-in invariant checks");
  auto* infer = app.add_subcommand("infer", "segment a volume with a trained checkpoint");
  std::string fault;
  verify->add_option("--inject-fault", fault, "corrupt one operator (adjoint, reconstruction, gradient)")
      ->check(CLI::IsMember({"adjoint", "reconstruction", "gradient"}));
  InferOptions infer_opt;
  std::string input, labels;
  infer->add_option("--checkpoint", infer_opt.checkpoint, "checkpoint written by train")->required();
  infer->add_option("--input", input, "input tensor file (default: the config data)");
  infer->add_option("--labels", labels, "label tensor file for IoU reporting");
  for (auto* sub : {plan, train_cmd, verify, infer}) sub->fallthrough();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (verify->parsed()) return cmd_verify(fault, out);
    RunConfig cfg;
    if (!config_path.empty()) {
      cfg = load_config(config_path);
    } else if (!infer->parsed() || input.empty()) {
      throw ConfigError(std::string(app.get_subcommands().front()->get_name()) + " needs --config");
    }
    if (seed) cfg.train.seed = *seed;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (plan->parsed()) return cmd_plan(cfg, out);
    if (train_cmd->parsed()) return cmd_train(cfg, out);
    if (!input.empty()) infer_opt.input = input;
    if (!labels.empty()) infer_opt.labels = labels;
    return cmd_infer(cfg, infer_opt, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace rblr::cli
