#include "rsmp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace rsmp {

namespace {

constexpr std::uint64_t kStreamBatch = 0x9E3779B97F4A7C15ULL;
constexpr std::uint64_t kStreamJitter = 0xD1B54A32D192ED03ULL;

std::string rng_text(const Rng& a, const Rng& b) {
  std::ostringstream os;
  os << a << '\n' << b;
  return os.str();
}

void parse_rng_text(const std::string& text, Rng& a, Rng& b) {
  std::istringstream is(text);
  is >> a >> b;
  if (is.fail()) throw std::runtime_error("checkpoint: malformed RNG state");
}

void assign_from_checkpoint(Model<float>& model, const Checkpoint& ckpt) {
  visit(model, [&](const std::string& name, Tensor<float>& t) {
    const Tensor<float>* stored = ckpt.find(name);
    if (!stored) throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
    if (stored->shape != t.shape) {
      throw std::runtime_error("checkpoint: tensor '" + name + "' has shape " + to_string(stored->shape) +
                               ", config implies " + to_string(t.shape));
    }
    t = *stored;
  });
}

std::string parameter_norms(const Model<float>& model) {
  std::ostringstream os;
  visit(model, [&](const std::string& name, const Tensor<float>& t) {
    os << ' ' << name << '=' << t.values.matrix().norm();
  });
  return os.str();
}

}  // namespace

PixelSet training_pixels(const Dataset& dataset) {
  PixelSet set;
  for (int v : dataset.train) {
    const Camera cam = dataset.camera(v);
    const Image& img = dataset.views.at(static_cast<std::size_t>(v)).image;
    auto rays = generate_rays(cam);
    for (std::size_t i = 0; i < rays.size(); ++i) {
      set.rays.push_back(rays[i]);
      set.colors.emplace_back(static_cast<float>(img.rgb[i * 3]), static_cast<float>(img.rgb[i * 3 + 1]),
                              static_cast<float>(img.rgb[i * 3 + 2]));
    }
  }
  return set;
}

PixelBatch sample_ray_batch(const PixelSet& pixels, Index n_rays, Rng& rng) {
  if (pixels.rays.empty()) throw std::invalid_argument("sample_ray_batch: no training pixels");
  if (static_cast<std::size_t>(n_rays) > pixels.rays.size()) {
    throw std::invalid_argument("sample_ray_batch: batch larger than the training set");
  }
  std::uniform_int_distribution<std::size_t> pick(0, pixels.rays.size() - 1);
  std::vector<std::size_t> indices;
  indices.reserve(static_cast<std::size_t>(n_rays));
  while (static_cast<Index>(indices.size()) < n_rays) {
    const std::size_t i = pick(rng);
    if (std::find(indices.begin(), indices.end(), i) == indices.end()) indices.push_back(i);
  }
  std::vector<Ray> rays;
  Tensor<float> target(Shape{n_rays, 3});
  for (Index r = 0; r < n_rays; ++r) {
    const std::size_t i = indices[static_cast<std::size_t>(r)];
    rays.push_back(pixels.rays[i]);
    target.matrix().row(r) = pixels.colors[i].transpose();
  }
  return {RayBatch(std::move(rays)), std::move(target), std::move(indices)};
}

std::string log_header() { return "iter,loss,psnr_test"; }

std::string format_log_row(const LogRow& row) {
  std::ostringstream os;
  os.precision(9);
  os << row.iteration << ',' << row.loss << ',';
  if (row.psnr_test) os << *row.psnr_test;
  return os.str();
}

Model<float> model_from_checkpoint(const Checkpoint& ckpt) {
  Rng scratch(0);
  Model<float> model = init_model<float>(ckpt.config.sampling_mode(), ckpt.config.field_shape(),
                                         ckpt.config.sampler_shape(), scratch);
  assign_from_checkpoint(model, ckpt);
  return model;
}

Trainer::Trainer(const TrainConfig& config, const Dataset& dataset)
    : config_(config),
      dataset_(dataset),
      pixels_(training_pixels(dataset)),
      batch_rng_(config.seed + kStreamBatch),
      jitter_rng_(config.seed + kStreamJitter) {
  config_.validate();
  Rng init(config_.seed);
  model_ = init_model<float>(config_.sampling_mode(), config_.field_shape(), config_.sampler_shape(), init);
}

Trainer::Trainer(const Checkpoint& ckpt, const Dataset& dataset)
    : config_(ckpt.config), dataset_(dataset), pixels_(training_pixels(dataset)), iteration_(ckpt.iteration) {
  model_ = model_from_checkpoint(ckpt);
  parse_rng_text(ckpt.rng_state, batch_rng_, jitter_rng_);
  adam_.step = ckpt.iteration;
  if (ckpt.iteration > 0) {
    visit(model_, [&](const std::string& name, const Tensor<float>& t) {
      const Tensor<float>* m = ckpt.find("adam.m/" + name);
      const Tensor<float>* v = ckpt.find("adam.v/" + name);
      if (!m || !v || m->shape != t.shape || v->shape != t.shape) {
        throw std::runtime_error("checkpoint: missing or malformed optimizer state for '" + name + "'");
      }
      adam_.m.push_back(*m);
      adam_.v.push_back(*v);
    });
  }
}

std::vector<Tensor<float>*> Trainer::parameters() {
  std::vector<Tensor<float>*> out;
  visit(model_, [&](const std::string&, Tensor<float>& t) { out.push_back(&t); });
  return out;
}

double Trainer::learning_rate() const {
  const double progress = static_cast<double>(iteration_) / static_cast<double>(config_.iterations);
  return config_.lr * std::pow(config_.lr_final / config_.lr, std::min(progress, 1.0));
}

double Trainer::step() {
  const PixelBatch batch = sample_ray_batch(pixels_, config_.n_rays, batch_rng_);

  Tape<float> tape;
  const FieldVars<float> field = bind(tape, model_.field, true);
  std::optional<SamplerVars<float>> sampler;
  SampleSource<float> source;
  source.n_samples = model_.n_samples();
  if (model_.sampler) {
    sampler = bind(tape, *model_.sampler, true);
    source.sampler = &*sampler;
    source.sampler_shape = model_.sampler_shape;
  } else {
    source.jitter = &jitter_rng_;
  }
  const RayRender<float> out = render_rays(tape, batch.rays, source, field, model_.field_shape);
  const Var<float> loss = photometric_loss(out.render.rgb, tape.constant(batch.target));
  const double loss_value = loss.item();
  if (!std::isfinite(loss_value)) {
    throw std::runtime_error("training diverged: non-finite loss at iteration " + std::to_string(iteration_ + 1) +
                             "; parameter norms:" + parameter_norms(model_));
  }
  tape.backward(loss);

  std::vector<Tensor<float>> grads;
  auto collect = [&](const std::string&, const Var<float>& v) { grads.push_back(tape.grad(v)); };
  visit(field, collect);
  if (sampler) visit(*sampler, collect);

  AdamHyper hyper{learning_rate(), config_.beta1, config_.beta2, config_.adam_eps};
  const auto params = parameters();
  adam_step<float>(params, grads, adam_, hyper);
  ++iteration_;
  return loss_value;
}

double Trainer::test_psnr() const {
  double total = 0.0;
  for (int v : dataset_.test) {
    const Image img = render_image(dataset_.camera(v), model_, default_chunk(model_));
    total += psnr(img, dataset_.views.at(static_cast<std::size_t>(v)).image);
  }
  return dataset_.test.empty() ? 0.0 : total / static_cast<double>(dataset_.test.size());
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ckpt;
  ckpt.config = config_;
  ckpt.iteration = iteration_;
  visit(model_, [&](const std::string& name, const Tensor<float>& t) { ckpt.tensors.push_back({name, t}); });
  std::size_t i = 0;
  visit(model_, [&](const std::string& name, const Tensor<float>& t) {
    if (i < adam_.m.size()) {
      ckpt.tensors.push_back({"adam.m/" + name, adam_.m[i]});
      ckpt.tensors.push_back({"adam.v/" + name, adam_.v[i]});
    } else {
      ckpt.tensors.push_back({"adam.m/" + name, Tensor<float>::zeros(t.shape)});
      ckpt.tensors.push_back({"adam.v/" + name, Tensor<float>::zeros(t.shape)});
    }
    ++i;
  });
  ckpt.rng_state = rng_text(batch_rng_, jitter_rng_);
  return ckpt;
}

TrainResult train(const TrainConfig& config, const Dataset& dataset, const std::optional<Checkpoint>& resume,
                  bool write_files) {
  std::unique_ptr<Trainer> trainer;
  if (resume) {
    Checkpoint ckpt = *resume;
    ckpt.config.out = config.out;
    ckpt.config.dataset = config.dataset;
    trainer = std::make_unique<Trainer>(ckpt, dataset);
  } else {
    trainer = std::make_unique<Trainer>(config, dataset);
  }
  const TrainConfig& cfg = trainer->config();
  const std::uint64_t total = static_cast<std::uint64_t>(cfg.iterations);

  std::ofstream log;
  if (write_files) {
    const std::string log_path = cfg.out + ".csv";
    const bool fresh = !resume;
    log.open(log_path, fresh ? std::ios::trunc : std::ios::app);
    if (!log) throw std::runtime_error("cannot open log " + log_path);
    if (fresh) log << log_header() << '\n';
  }

  TrainResult result;
  while (trainer->iteration() < total) {
    const double loss = trainer->step();
    const std::uint64_t it = trainer->iteration();
    const bool last = it == total;
    const bool eval = last || it % static_cast<std::uint64_t>(cfg.eval_every) == 0;
    if (last || eval || it % static_cast<std::uint64_t>(cfg.log_every) == 0) {
      LogRow row{it, loss, std::nullopt};
      if (eval) row.psnr_test = trainer->test_psnr();
      result.log.push_back(row);
      if (write_files) log << format_log_row(row) << '\n' << std::flush;
    }
    if (write_files && (last || it % static_cast<std::uint64_t>(cfg.checkpoint_every) == 0)) {
      save_checkpoint(trainer->checkpoint(), cfg.out);
    }
  }
  result.checkpoint = trainer->checkpoint();
  if (write_files && total == trainer->iteration() && result.log.empty()) {
    save_checkpoint(result.checkpoint, cfg.out);
  }
  return result;
}

ViewSamples view_samples(const Model<float>& model, const Dataset& dataset, int view) {
  ViewSamples out;
  render_image(dataset.camera(view), model, default_chunk(model), &out.t);
  const auto& depth = dataset.views.at(static_cast<std::size_t>(view)).depth;
  out.depth.assign(depth.begin(), depth.end());
  return out;
}

MetricReport evaluate(const Model<float>& model, const Dataset& dataset, const std::string& label, double eps) {
  MetricReport report;
  report.label = label;
  report.mode = to_string(model.mode);
  double weighted = 0.0;
  std::size_t rays = 0;
  for (int v : dataset.test) {
    DistanceMatrix t;
    const Image img = render_image(dataset.camera(v), model, default_chunk(model), &t);
    const Image& gt = dataset.views.at(static_cast<std::size_t>(v)).image;
    report.views.push_back({v, psnr(img, gt), ssim(img, gt)});

    const auto& depth_f = dataset.views.at(static_cast<std::size_t>(v)).depth;
    const std::vector<double> depth(depth_f.begin(), depth_f.end());
    const auto valid = static_cast<std::size_t>(std::count_if(depth.begin(), depth.end(), [](double d) { return std::isfinite(d); }));
    weighted += surface_concentration(t, depth, eps) * static_cast<double>(valid);
    rays += valid;
  }
  report.finalize();
  report.surface_concentration = rays ? weighted / static_cast<double>(rays) : 0.0;
  return report;
}

}  // namespace rsmp
