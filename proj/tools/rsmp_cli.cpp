// rsmp: dataset generation, training, rendering, evaluation, sample
// histograms and gradient self-checks.
//
// Exit codes: 0 success, 1 usage error, 2 runtime error (including a failed
// gradient check).

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "rsmp/checkpoint.hpp"
#include "rsmp/config.hpp"
#include "rsmp/gradcheck_suites.hpp"
#include "rsmp/image.hpp"
#include "rsmp/metrics.hpp"
#include "rsmp/trainer.hpp"

namespace {

using namespace rsmp;

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<std::string> out;
  std::optional<std::string> dataset;
  std::vector<std::string> checkpoints;
  std::optional<int> view;
  std::optional<double> eps;
  int bins = 32;
  std::optional<int> iterations;
};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

TrainConfig resolve_config(const Options& o) {
  TrainConfig c = o.config_path.empty() ? TrainConfig{} : load_config(o.config_path);
  if (o.seed) c.seed = *o.seed;
  if (o.mode) c.mode = *o.mode;
  if (o.dataset) c.dataset = *o.dataset;
  if (o.iterations) c.iterations = *o.iterations;
  c.validate();
  return c;
}

const std::string& single_checkpoint(const Options& o) {
  if (o.checkpoints.size() != 1) throw UsageError("exactly one --checkpoint is required");
  return o.checkpoints.front();
}

std::string dataset_dir(const Options& o, const Checkpoint& ckpt) { return o.dataset.value_or(ckpt.config.dataset); }

void write_text(const std::optional<std::string>& path, const std::string& text) {
  if (!path) {
    std::cout << text;
    return;
  }
  std::ofstream out(*path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + *path);
  out << text;
}

int cmd_gen_data(const Options& o) {
  const TrainConfig c = resolve_config(o);
  const std::string dir = o.out.value_or(c.dataset);
  const Dataset d = generate_dataset(scene_by_name(c.scene, c.seed), c.seed, c.n_views, c.layout(), dir);
  std::cerr << "wrote " << d.views.size() << " views (" << d.test.size() << " test) to " << dir << '\n';
  return 0;
}

int cmd_train(const Options& o) {
  if (o.checkpoints.size() > 1) throw UsageError("train accepts at most one --checkpoint to resume from");
  TrainConfig c = resolve_config(o);
  if (o.out) c.out = *o.out;
  std::optional<Checkpoint> resume;
  if (!o.checkpoints.empty()) {
    // Resuming continues the stored run: its config wins, except for the
    // output path (default: the checkpoint itself), the dataset location and
    // an explicit --iterations.
    resume = load_checkpoint(o.checkpoints.front());
    if (!o.out) c.out = o.checkpoints.front();
    if (!o.dataset) c.dataset = resume->config.dataset;
    if (o.iterations) resume->config.iterations = *o.iterations;
  }
  const Dataset d = load_dataset(c.dataset);
  const auto start = std::chrono::steady_clock::now();
  const TrainResult r = train(c, d, resume);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cerr << "trained to iteration " << r.checkpoint.iteration << " in " << seconds << " s; checkpoint " << c.out
            << ", log " << c.out << ".csv\n";
  return 0;
}

int cmd_render(const Options& o) {
  const Checkpoint ckpt = load_checkpoint(single_checkpoint(o));
  if (!o.view) throw UsageError("render requires --view");
  if (!o.out) throw UsageError("render requires --out");
  const Dataset d = load_dataset(dataset_dir(o, ckpt));
  if (*o.view < 0 || *o.view >= static_cast<int>(d.views.size())) {
    throw UsageError("--view " + std::to_string(*o.view) + " outside 0.." + std::to_string(d.views.size() - 1));
  }
  const Model<float> model = model_from_checkpoint(ckpt);
  write_png(*o.out, render_image(d.camera(*o.view), model, default_chunk(model)));
  return 0;
}

int cmd_eval(const Options& o) {
  if (o.checkpoints.empty()) throw UsageError("eval requires at least one --checkpoint");
  std::vector<MetricReport> reports;
  for (const auto& path : o.checkpoints) {
    const Checkpoint ckpt = load_checkpoint(path);
    const Dataset d = load_dataset(dataset_dir(o, ckpt));
    const double eps = o.eps.value_or((d.far - d.near) / 32.0);
    reports.push_back(evaluate(model_from_checkpoint(ckpt), d, path, eps));
  }
  write_text(o.out, reports_to_json(reports) + "\n");
  return 0;
}

int cmd_hist(const Options& o) {
  const Checkpoint ckpt = load_checkpoint(single_checkpoint(o));
  const Dataset d = load_dataset(dataset_dir(o, ckpt));
  const Model<float> model = model_from_checkpoint(ckpt);
  const double eps = o.eps.value_or((d.far - d.near) / 32.0);
  std::vector<int> views = o.view ? std::vector<int>{*o.view} : d.test;
  std::vector<HistogramBin> total;
  double weighted = 0.0;
  std::size_t rays = 0;
  for (int v : views) {
    if (v < 0 || v >= static_cast<int>(d.views.size())) throw UsageError("--view out of range");
    const ViewSamples s = view_samples(model, d, v);
    const auto bins = distance_histogram(s.t, d.near, d.far, o.bins);
    if (total.empty()) {
      total = bins;
    } else {
      for (std::size_t i = 0; i < bins.size(); ++i) total[i].count += bins[i].count;
    }
    std::size_t valid = 0;
    for (double z : s.depth) valid += std::isfinite(z) ? 1 : 0;
    weighted += surface_concentration(s.t, s.depth, eps) * static_cast<double>(valid);
    rays += valid;
  }
  write_text(o.out, histogram_csv(total));
  std::cerr << "surface_concentration(eps=" << eps << ") = " << (rays ? weighted / static_cast<double>(rays) : 0.0)
            << '\n';
  return 0;
}

int cmd_gradcheck(const Options& o) {
  const std::uint64_t seed = o.seed.value_or(0);
  bool ok = true;
  for (const auto& name : gradcheck_suite_names()) {
    const SuiteResult r = run_gradcheck_suite(name, seed, 10);
    const bool pass = passed(r);
    ok = ok && pass;
    std::printf("%s %-20s max_rel_err=%.3e elements=%zu unresolved=%zu seeds=%d\n", pass ? "PASS" : "FAIL",
                name.c_str(), r.check.max_rel_error, r.check.elements, r.check.unresolved, r.seeds);
  }
  std::printf("%s\n", ok ? "gradcheck: all suites passed" : "gradcheck: FAILED");
  return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned ray sampling for differentiable volume rendering"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", o.config_path, "JSON config file (strict, versioned)")->check(CLI::ExistingFile);
    cmd->add_option("--seed", o.seed, "seed override");
    cmd->add_option("--mode", o.mode, "sampling mode")->check(CLI::IsMember({"learned", "uniform"}));
    cmd->add_option("--out", o.out, "output path");
    cmd->add_option("--dataset", o.dataset, "dataset directory override");
  };

  auto* gen = app.add_subcommand("gen-data", "render the synthetic dataset with the analytic oracle");
  add_common(gen);
  auto* train_cmd = app.add_subcommand("train", "train a model; --checkpoint resumes");
  add_common(train_cmd);
  train_cmd->add_option("--checkpoint", o.checkpoints, "checkpoint to resume from");
  train_cmd->add_option("--iterations", o.iterations, "iteration count override");
  auto* render = app.add_subcommand("render", "render one dataset view to PNG");
  add_common(render);
  render->add_option("--checkpoint", o.checkpoints, "trained checkpoint")->required();
  render->add_option("--view", o.view, "view index");
  auto* eval = app.add_subcommand("eval", "PSNR/SSIM/concentration report over the test views");
  add_common(eval);
  eval->add_option("--checkpoint", o.checkpoints, "checkpoint(s) to compare")->required();
  eval->add_option("--eps", o.eps, "surface tolerance (default (far-near)/32)");
  auto* hist = app.add_subcommand("hist", "histogram of sample distances as CSV");
  add_common(hist);
  hist->add_option("--checkpoint", o.checkpoints, "trained checkpoint")->required();
  hist->add_option("--view", o.view, "single view (default: all test views)");
  hist->add_option("--eps", o.eps, "surface tolerance (default (far-near)/32)");
  hist->add_option("--bins", o.bins, "bin count")->check(CLI::PositiveNumber);
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every gradient");
  grad->add_option("--seed", o.seed, "first seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_gen_data(o);
    if (*train_cmd) return cmd_train(o);
    if (*render) return cmd_render(o);
    if (*eval) return cmd_eval(o);
    if (*hist) return cmd_hist(o);
    if (*grad) return cmd_gradcheck(o);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
