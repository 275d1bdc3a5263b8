#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"

#include "rsmp/field.hpp"
#include "rsmp/model.hpp"
#include "rsmp/sampler.hpp"
#include "rsmp/scenes.hpp"

namespace rsmp {

inline constexpr int kConfigVersion = 1;

/// Complete description of an experiment: data generation, model shape,
/// optimizer and bookkeeping.
struct TrainConfig {
  int version = kConfigVersion;
  std::string mode = "learned";
  std::uint64_t seed = 0;
  std::string dataset = "data";
  std::string out = "model.rsmp";

  // data generation
  std::string scene = "leaves-lite";
  int n_views = 16;
  int width = 64;
  int height = 64;

  // sampler
  int n_rays = 64;
  int n_samples = 16;
  int n_blocks = 3;
  int d_feat = 16;
  int h_ray = 64;
  int h_scene = 256;

  // field
  int field_depth = 4;
  int field_width = 64;
  int pos_levels = 6;
  int dir_levels = 4;
  double position_scale = 1.0 / 3.0;

  // optimization
  int iterations = 5000;
  double lr = 5e-4;
  double lr_final = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-7;

  // bookkeeping
  int log_every = 100;
  int eval_every = 1000;
  int checkpoint_every = 1000;

  SamplingMode sampling_mode() const { return parse_sampling_mode(mode); }
  FieldShape field_shape() const;
  SamplerShape sampler_shape() const;
  DatasetLayout layout() const;

  /// Throws std::invalid_argument naming the first offending field.
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);

/// Strict parse: unknown keys, wrong types and a missing or unsupported
/// "version" are rejected. Keys not present keep their defaults.
TrainConfig config_from_json(const nlohmann::json& j);

TrainConfig load_config(const std::filesystem::path& path);

}  // namespace rsmp
