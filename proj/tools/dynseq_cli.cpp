#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dynseq/dynseq.hpp"

namespace fs = std::filesystem;
using namespace dynseq;

namespace {

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
  std::optional<std::string> dataset;
};

struct LossOptions {
  std::optional<std::string> mode, confidence, mask, mask_gradient;
  std::optional<std::size_t> horizon;
  std::optional<double> tau, lambda, sharpness;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("-c,--config", o.config_path, "JSON run config (defaults apply to missing keys)");
  cmd->add_option("--set", o.overrides, "Override a config value, e.g. --set loss.tau=0.2 (repeatable)");
  cmd->add_option("--seed", o.seed, "Master seed");
  cmd->add_option("--output-dir", o.output_dir, "Output directory");
  cmd->add_option("--dataset", o.dataset, "Prices CSV to use instead of the generator");
}

void add_loss(CLI::App* cmd, LossOptions& o) {
  cmd->add_option("--mode", o.mode, "static or dynamic");
  cmd->add_option("--horizon", o.horizon, "Decoder horizon T");
  cmd->add_option("--tau", o.tau, "Confidence threshold");
  cmd->add_option("--lambda", o.lambda, "Penalty weight");
  cmd->add_option("--sharpness", o.sharpness, "Sigmoid sharpness k");
  cmd->add_option("--confidence", o.confidence, "max, cd, tv or emd");
  cmd->add_option("--mask", o.mask, "indicator or sigmoid");
  cmd->add_option("--mask-gradient", o.mask_gradient, "detached or full");
}

/// File, then environment, then flags.
RunConfig resolve(const CommonOptions& o, const LossOptions* loss = nullptr) {
  RunConfig c = o.config_path.empty() ? RunConfig{} : load_config(o.config_path);
  apply_environment(c);
  Json flags = Json::object();
  if (o.seed) flags["seed"] = *o.seed;
  if (o.output_dir) flags["output_dir"] = *o.output_dir;
  if (o.dataset) flags["dataset"] = *o.dataset;
  if (loss) {
    if (loss->mode) flags["loss"]["mode"] = *loss->mode;
    if (loss->tau) flags["loss"]["tau"] = *loss->tau;
    if (loss->lambda) flags["loss"]["lambda"] = *loss->lambda;
    if (loss->sharpness) flags["loss"]["sharpness"] = *loss->sharpness;
    if (loss->confidence) flags["loss"]["confidence"] = *loss->confidence;
    if (loss->mask) flags["loss"]["mask"] = *loss->mask;
    if (loss->mask_gradient) flags["loss"]["mask_gradient"] = *loss->mask_gradient;
    if (loss->horizon) flags["model"]["horizon"] = *loss->horizon;
  }
  apply_json(c, flags);
  for (const auto& s : o.overrides) apply_json(c, parse_override(s));
  c.validate();
  return c;
}

void print_series_stats(const Tensor& prices) {
  const Tensor r = compute_returns(prices);
  const std::size_t N = r.rows(), Q = r.cols();
  std::vector<double> mean(Q, 0.0), sd(Q, 0.0);
  for (std::size_t q = 0; q < Q; ++q) {
    for (std::size_t i = 0; i < N; ++i) mean[q] += r(i, q);
    mean[q] /= static_cast<double>(N);
    for (std::size_t i = 0; i < N; ++i) sd[q] += (r(i, q) - mean[q]) * (r(i, q) - mean[q]);
    sd[q] = std::sqrt(sd[q] / static_cast<double>(N));
  }
  std::printf("returns: %zu ticks x %zu series\n", N, Q);
  for (std::size_t q = 0; q < Q; ++q) std::printf("  series_%zu sigma %.6g\n", q, sd[q]);
  std::printf("correlation:\n");
  for (std::size_t a = 0; a < Q; ++a) {
    std::printf(" ");
    for (std::size_t b = 0; b < Q; ++b) {
      double c = 0.0;
      for (std::size_t i = 0; i < N; ++i) c += (r(i, a) - mean[a]) * (r(i, b) - mean[b]);
      const double denom = static_cast<double>(N) * sd[a] * sd[b];
      std::printf(" %6.3f", denom > 0.0 ? c / denom : 0.0);
    }
    std::printf("\n");
  }
}

std::string dataset_label(const RunConfig& c) { return c.dataset.empty() ? "synthetic" : fs::path(c.dataset).stem().string(); }

int cmd_generate(const CommonOptions& o, const std::string& out_path) {
  RunConfig c = resolve(o);
  write_effective_config(c);
  const Tensor prices = generate_synthetic(c.effective_synthetic());
  const fs::path path = out_path.empty() ? fs::path(c.output_dir) / "prices.csv" : fs::path(out_path);
  write_prices_csv(path, prices);
  std::printf("wrote %s\n", path.string().c_str());
  print_series_stats(prices);
  return 0;
}

void print_run(const char* label, const RunReport& r) {
  std::printf("%s: mean F1 %s, mean length %.3f, coverage %.3f\n", label, format_number(r.mean_f1).c_str(),
              r.mean_length, r.mean_coverage);
  for (std::size_t q = 0; q < r.series_length.size(); ++q)
    std::printf("  series_%zu mean length %.3f\n", q, r.series_length[q]);
}

int cmd_train(const CommonOptions& o, const LossOptions& l) {
  RunConfig c = resolve(o, &l);
  write_effective_config(c);
  const LabeledSeries data = prepare_data(c, load_prices(c));
  std::printf("beta %.6f, %zu labeled ticks\n", data.beta, data.ticks());
  const WalkForwardConfig wf = c.effective_walk_forward();
  const RunReport main = run_walk_forward(c.model, c.effective_loss(), data, wf, c.training);
  std::optional<RunReport> one, full;
  if (c.compare_static && c.model.kind == ModelKind::seq2seq) {
    for (std::size_t len : {std::size_t{1}, c.model.horizon}) {
      ModelConfig mc = c.model;
      mc.horizon = len;
      WalkForwardConfig w = wf;
      w.seed = static_seed(wf.seed, len);
      (len == 1 ? one : full) = run_walk_forward(mc, DynamicLossConfig::full_horizon(len), data, w, c.training);
    }
  }
  const fs::path dir(c.output_dir);
  detail::write_text(dir / "windows.csv", windows_csv(main, one ? &*one : nullptr, full ? &*full : nullptr));
  detail::write_text(dir / "checkpoints.csv", checkpoints_csv(main));
  save_checkpoint(main.final_params, dir / "checkpoint.bin");
  print_run(c.loss_mode == LossMode::dynamic ? "dynamic" : "static", main);
  std::printf("wrote %s\n", (dir / "windows.csv").string().c_str());
  return 0;
}

void write_sweep_outputs(const RunConfig& c, const std::vector<SweepPoint>& points, const StaticCurve& curve) {
  const fs::path dir(c.output_dir);
  detail::write_text(dir / "sweep.csv", sweep_csv(points));
  detail::write_text(dir / "curve.csv", curve_csv(curve));
  detail::write_text(dir / "sensitivity.csv", sensitivity_csv(sensitivity_points(points, c.sweep.sensitivity_lambda)));
  const Json summary = summary_json(points, curve, c.sweep.sensitivity_lambda, dataset_label(c));
  detail::write_text(dir / "summary.json", summary.dump(2) + "\n");
  if (!summary["best"].is_null()) std::printf("%s\n", summary["best"]["row"].get<std::string>().c_str());
  const Json& s = summary["sensitivity"];
  if (!s["slope"].is_null())
    std::printf("sensitivity at lambda %s: slope %.4f, r %s\n", format_number(c.sweep.sensitivity_lambda).c_str(),
                s["slope"].get<double>(),
                s["correlation"].is_null() ? "NA" : format_number(s["correlation"].get<double>()).c_str());
}

int cmd_sweep(const CommonOptions& o, const LossOptions& l, std::optional<std::size_t> workers) {
  RunConfig c = resolve(o, &l);
  if (workers) c.sweep.workers = *workers;
  if (c.model.kind != ModelKind::seq2seq) throw ConfigError("sweep needs model.kind = seq2seq");
  c.validate();
  write_effective_config(c);
  const LabeledSeries data = prepare_data(c, load_prices(c));
  const WalkForwardConfig wf = c.effective_walk_forward();
  const StaticCurve curve = build_static_curve(c.model, data, wf, c.training, c.sweep.static_lengths, c.sweep.workers);
  DynamicLossConfig loss = c.loss;
  loss.horizon = c.model.horizon;
  const std::vector<SweepPoint> points = sweep(c.model, loss, data, wf, c.training, c.sweep, curve);
  write_sweep_outputs(c, points, curve);
  std::size_t bad = 0;
  for (const auto& p : points) bad += p.status.rfind("error", 0) == 0;
  if (bad) std::fprintf(stderr, "%zu sweep point(s) failed; see the status column\n", bad);
  std::printf("wrote %s\n", (fs::path(c.output_dir) / "sweep.csv").string().c_str());
  return 0;
}

int cmd_report(const CommonOptions& o) {
  RunConfig c = resolve(o);
  const fs::path dir(c.output_dir);
  const auto points = read_sweep_csv(dir / "sweep.csv");
  const StaticCurve curve = read_curve_csv(dir / "curve.csv");
  write_sweep_outputs(c, points, curve);
  return 0;
}

int cmd_gradcheck(const std::string& filter, bool tamper, std::uint64_t seed) {
  const auto cases = filter_cases(all_gradcheck_cases(), filter);
  GradSuiteConfig cfg;
  cfg.seed = seed;
  std::function<void(ParameterSet&)> hook;
  if (tamper)
    hook = [](ParameterSet& p) {
      auto& first = p.begin()->second;
      first.grad[0] += 1e-2;
    };
  const auto results = run_gradcheck_suite(cases, cfg, hook);
  std::size_t failed = 0;
  for (const auto& r : results) {
    failed += !r.passed;
    std::printf("%-4s %-34s max rel err %.3e  (%s, tau %.4f, %zu coords, %zu attempt%s)%s%s\n",
                r.passed ? "ok" : "FAIL", r.name.c_str(), r.check.max_relative_error,
                r.check.worst_parameter.empty() ? "-" : r.check.worst_parameter.c_str(), r.tau, r.check.coordinates,
                r.attempts, r.attempts == 1 ? "" : "s", r.note.empty() ? "" : "  ", r.note.c_str());
  }
  std::printf("%zu/%zu configurations within %.0e\n", results.size() - failed, results.size(), cfg.tolerance);
  return failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic-length seq2seq training and experiment harness"};
  app.require_subcommand(1);

  CommonOptions gen_o, train_o, sweep_o, report_o;
  LossOptions train_l, sweep_l;
  std::string gen_out, grad_filter;
  bool grad_tamper = false;
  std::uint64_t grad_seed = 7;
  std::optional<std::size_t> workers;

  auto* gen = app.add_subcommand("generate", "Write a synthetic prices CSV");
  add_common(gen, gen_o);
  gen->add_option("-o,--out", gen_out, "Output CSV (default <output_dir>/prices.csv)");

  auto* train = app.add_subcommand("train", "Walk-forward training; writes windows.csv and a checkpoint");
  add_common(train, train_o);
  add_loss(train, train_l);

  auto* sw = app.add_subcommand("sweep", "Static curve plus (tau, lambda) grid; writes CSVs and summary.json");
  add_common(sw, sweep_o);
  add_loss(sw, sweep_l);
  sw->add_option("--workers", workers, "Parallel sweep workers");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check over model and loss configurations");
  grad->add_option("--filter", grad_filter, "Only configurations whose name contains this text");
  grad->add_option("--seed", grad_seed, "Suite seed");
  grad->add_flag("--tamper", grad_tamper, "Corrupt one analytic gradient (fault injection)");

  auto* rep = app.add_subcommand("report", "Rebuild summary.json and sensitivity.csv from sweep outputs");
  add_common(rep, report_o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_generate(gen_o, gen_out);
    if (*train) return cmd_train(train_o, train_l);
    if (*sw) return cmd_sweep(sweep_o, sweep_l, workers);
    if (*grad) return cmd_gradcheck(grad_filter, grad_tamper, grad_seed);
    if (*rep) return cmd_report(report_o);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
