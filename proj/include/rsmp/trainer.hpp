#pragma once

// End-to-end optimization of sampler and field: random pixel batches,
// photometric MSE, one Adam optimizer over all parameters.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rsmp/checkpoint.hpp"
#include "rsmp/config.hpp"
#include "rsmp/metrics.hpp"
#include "rsmp/model.hpp"
#include "rsmp/optimizer.hpp"
#include "rsmp/scenes.hpp"

namespace rsmp {

/// Every pixel ray of the training views with its stored color.
struct PixelSet {
  std::vector<Ray> rays;
  std::vector<Eigen::Vector3f> colors;
};

PixelSet training_pixels(const Dataset& dataset);

struct PixelBatch {
  RayBatch rays;
  Tensor<float> target;              // [n_rays x 3]
  std::vector<std::size_t> indices;  // into PixelSet
};

/// n_rays distinct pixels drawn uniformly from `pixels`.
PixelBatch sample_ray_batch(const PixelSet& pixels, Index n_rays, Rng& rng);

/// Mean over rays and channels of the squared difference.
template <typename Scalar>
Var<Scalar> photometric_loss(Var<Scalar> pred, Var<Scalar> target) {
  if (pred.shape() != target.shape()) {
    throw std::invalid_argument("photometric_loss: shape mismatch " + to_string(pred.shape()) + " vs " +
                                to_string(target.shape()));
  }
  Var<Scalar> diff = sub(pred, target);
  return mean(mul(diff, diff));
}

struct LogRow {
  std::uint64_t iteration = 0;
  double loss = 0.0;
  std::optional<double> psnr_test;
};

std::string log_header();
std::string format_log_row(const LogRow& row);

/// Rebuilds the model stored in a checkpoint.
Model<float> model_from_checkpoint(const Checkpoint& checkpoint);

class Trainer {
 public:
  Trainer(const TrainConfig& config, const Dataset& dataset);
  Trainer(const Checkpoint& checkpoint, const Dataset& dataset);

  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  /// One optimization step; returns the batch loss before the update.
  double step();

  /// Mean PSNR of the current model over the test views.
  double test_psnr() const;

  double learning_rate() const;
  std::uint64_t iteration() const { return iteration_; }
  const Model<float>& model() const { return model_; }
  const TrainConfig& config() const { return config_; }
  Checkpoint checkpoint() const;

 private:
  std::vector<Tensor<float>*> parameters();

  TrainConfig config_;
  const Dataset& dataset_;
  PixelSet pixels_;
  Model<float> model_;
  AdamState<float> adam_;
  Rng batch_rng_;
  Rng jitter_rng_;
  std::uint64_t iteration_ = 0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LogRow> log;
};

/// Trains until config.iterations, optionally resuming. When `write_files`
/// is set the checkpoint goes to config.out every checkpoint_every
/// iterations and at the end, and log rows are appended to config.out + ".csv".
TrainResult train(const TrainConfig& config, const Dataset& dataset, const std::optional<Checkpoint>& resume = {},
                  bool write_files = true);

/// PSNR/SSIM per test view and the mean sample concentration around the
/// ground-truth surface (tolerance eps) over the test views.
MetricReport evaluate(const Model<float>& model, const Dataset& dataset, const std::string& label, double eps);

/// Sample distances and ground-truth depths for every pixel of one view.
struct ViewSamples {
  DistanceMatrix t;
  std::vector<double> depth;
};
ViewSamples view_samples(const Model<float>& model, const Dataset& dataset, int view);

}  // namespace rsmp
