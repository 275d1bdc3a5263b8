#include "rsmp/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <variant>
#include <vector>

namespace rsmp {

namespace {

using json = nlohmann::json;

using Member = std::variant<int TrainConfig::*, double TrainConfig::*, std::uint64_t TrainConfig::*,
                            std::string TrainConfig::*>;

struct Key {
  const char* name;
  Member member;
};

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      {"version", &TrainConfig::version},
      {"mode", &TrainConfig::mode},
      {"seed", &TrainConfig::seed},
      {"dataset", &TrainConfig::dataset},
      {"out", &TrainConfig::out},
      {"scene", &TrainConfig::scene},
      {"n_views", &TrainConfig::n_views},
      {"width", &TrainConfig::width},
      {"height", &TrainConfig::height},
      {"n_rays", &TrainConfig::n_rays},
      {"n_samples", &TrainConfig::n_samples},
      {"n_blocks", &TrainConfig::n_blocks},
      {"d_feat", &TrainConfig::d_feat},
      {"h_ray", &TrainConfig::h_ray},
      {"h_scene", &TrainConfig::h_scene},
      {"field_depth", &TrainConfig::field_depth},
      {"field_width", &TrainConfig::field_width},
      {"pos_levels", &TrainConfig::pos_levels},
      {"dir_levels", &TrainConfig::dir_levels},
      {"position_scale", &TrainConfig::position_scale},
      {"iterations", &TrainConfig::iterations},
      {"lr", &TrainConfig::lr},
      {"lr_final", &TrainConfig::lr_final},
      {"beta1", &TrainConfig::beta1},
      {"beta2", &TrainConfig::beta2},
      {"adam_eps", &TrainConfig::adam_eps},
      {"log_every", &TrainConfig::log_every},
      {"eval_every", &TrainConfig::eval_every},
      {"checkpoint_every", &TrainConfig::checkpoint_every},
  };
  return table;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("config: " + what);
}

}  // namespace

FieldShape TrainConfig::field_shape() const {
  FieldShape s;
  s.depth = field_depth;
  s.width = field_width;
  s.pos_levels = pos_levels;
  s.dir_levels = dir_levels;
  s.position_scale = position_scale;
  return s;
}

SamplerShape TrainConfig::sampler_shape() const {
  SamplerShape s;
  s.n_rays = n_rays;
  s.n_samples = n_samples;
  s.d_feat = d_feat;
  s.h_ray = h_ray;
  s.h_scene = h_scene;
  s.n_blocks = n_blocks;
  return s;
}

DatasetLayout TrainConfig::layout() const {
  DatasetLayout l;
  l.width = width;
  l.height = height;
  return l;
}

void TrainConfig::validate() const {
  require(version == kConfigVersion, "'version' must be " + std::to_string(kConfigVersion));
  require(mode == "learned" || mode == "uniform", "'mode' must be 'learned' or 'uniform'");
  require(n_views >= 8, "'n_views' must be at least 8 (every 8th view is held out)");
  require(width >= 11 && height >= 11, "'width' and 'height' must be at least 11");
  const std::pair<const char*, int> positive[] = {
      {"n_rays", n_rays},           {"n_samples", n_samples},     {"n_blocks", n_blocks},
      {"d_feat", d_feat},           {"h_ray", h_ray},             {"h_scene", h_scene},
      {"field_depth", field_depth}, {"field_width", field_width}, {"pos_levels", pos_levels},
      {"dir_levels", dir_levels},   {"iterations", iterations},   {"log_every", log_every},
      {"eval_every", eval_every},   {"checkpoint_every", checkpoint_every}};
  for (const auto& [name, value] : positive) require(value > 0, std::string("'") + name + "' must be positive");
  require(position_scale > 0.0, "'position_scale' must be positive");
  require(lr > 0.0 && lr_final > 0.0, "'lr' and 'lr_final' must be positive");
  require(beta1 >= 0.0 && beta1 < 1.0, "'beta1' must lie in [0, 1)");
  require(beta2 >= 0.0 && beta2 < 1.0, "'beta2' must lie in [0, 1)");
  require(adam_eps > 0.0, "'adam_eps' must be positive");
}

json to_json(const TrainConfig& config) {
  json j = json::object();
  for (const Key& key : keys()) {
    std::visit([&](auto member) { j[key.name] = config.*member; }, key.member);
  }
  return j;
}

TrainConfig config_from_json(const json& j) {
  require(j.is_object(), "top level must be a JSON object");
  require(j.contains("version"), "missing required field 'version'");
  TrainConfig config;
  for (const auto& [name, value] : j.items()) {
    const Key* key = nullptr;
    for (const Key& k : keys()) {
      if (name == k.name) key = &k;
    }
    require(key != nullptr, "unknown field '" + name + "'");
    std::visit(
        [&](auto member) {
          using T = std::remove_reference_t<decltype(config.*member)>;
          bool ok = false;
          if constexpr (std::is_same_v<T, std::string>) {
            ok = value.is_string();
          } else if constexpr (std::is_same_v<T, double>) {
            ok = value.is_number();
          } else if constexpr (std::is_same_v<T, std::uint64_t>) {
            ok = value.is_number_unsigned() || (value.is_number_integer() && value.get<std::int64_t>() >= 0);
          } else {
            ok = value.is_number_integer();
          }
          require(ok, "field '" + name + "' has the wrong type");
          config.*member = value.get<T>();
        },
        key->member);
  }
  config.validate();
  return config;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config: " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

}  // namespace rsmp
