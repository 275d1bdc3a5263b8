#include "rsmp/scenes.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include <png.h>
#include <zlib.h>

namespace rsmp {

namespace {

using json = nlohmann::json;
constexpr int kDatasetVersion = 1;

bool inside(const Sphere& s, const Eigen::Vector3d& p) { return (p - s.center).squaredNorm() <= s.radius * s.radius; }

bool inside(const Box& b, const Eigen::Vector3d& p) {
  return (p.array() >= b.lo.array()).all() && (p.array() <= b.hi.array()).all();
}

// Parametric interval where the ray overlaps the primitive, widened by `pad`.
bool overlap(const Sphere& s, const Ray& ray, double pad, double& t0, double& t1) {
  const Eigen::Vector3d oc = ray.origin - s.center;
  const double b = oc.dot(ray.direction);
  const double r = s.radius + pad;
  const double c = oc.squaredNorm() - r * r;
  const double disc = b * b - c;
  if (disc < 0.0) return false;
  const double root = std::sqrt(disc);
  t0 = -b - root;
  t1 = -b + root;
  return true;
}

bool overlap(const Box& box, const Ray& ray, double pad, double& t0, double& t1) {
  t0 = -std::numeric_limits<double>::infinity();
  t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double lo = box.lo[a] - pad, hi = box.hi[a] + pad;
    const double o = ray.origin[a], d = ray.direction[a];
    if (std::abs(d) < 1e-15) {
      if (o < lo || o > hi) return false;
      continue;
    }
    double ta = (lo - o) / d, tb = (hi - o) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  return t0 <= t1;
}

std::uint32_t crc_of(const std::string& bytes) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("dataset: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("dataset: cannot create " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("dataset: write failed for " + path.string());
}

std::string encode_depth(const std::vector<float>& depth) {
  std::string bytes(depth.size() * 4, '\0');
  for (std::size_t i = 0; i < depth.size(); ++i) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(depth[i]);
    for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xFFu);
  }
  return bytes;
}

std::vector<float> decode_depth(const std::string& bytes) {
  std::vector<float> depth(bytes.size() / 4);
  for (std::size_t i = 0; i < depth.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
    depth[i] = std::bit_cast<float>(bits);
  }
  return depth;
}

Image decode_png(const std::string& bytes, const std::string& name) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    throw std::runtime_error("dataset: cannot decode " + name + ": " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> raw(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, raw.data(), 0, nullptr)) {
    png_image_free(&png);
    throw std::runtime_error("dataset: cannot decode " + name + ": " + png.message);
  }
  Image image(static_cast<int>(png.width), static_cast<int>(png.height));
  for (std::size_t i = 0; i < raw.size(); ++i) image.rgb[i] = raw[i] / 255.0;
  return image;
}

std::string indexed_name(const char* dir, int i, const char* ext) {
  std::ostringstream os;
  os << dir << '/' << std::setw(4) << std::setfill('0') << i << ext;
  return os.str();
}

template <typename T>
T field(const json& j, const char* key, const char* file = "manifest.json") {
  if (!j.is_object() || !j.contains(key)) {
    throw std::runtime_error(std::string("dataset: ") + file + " is missing field '" + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw std::runtime_error(std::string("dataset: ") + file + " field '" + key + "' has the wrong type");
  }
}

}  // namespace

DensityColor scene_density_color(const Scene& scene, const Eigen::Vector3d& p) {
  DensityColor out;
  Eigen::Vector3d weighted = Eigen::Vector3d::Zero();
  for (const auto& s : scene.spheres) {
    if (inside(s, p)) {
      out.sigma += s.density;
      weighted += s.density * s.albedo;
    }
  }
  for (const auto& b : scene.boxes) {
    if (inside(b, p)) {
      out.sigma += b.density;
      weighted += b.density * b.albedo;
    }
  }
  if (out.sigma > 0.0) out.rgb = weighted / out.sigma;
  return out;
}

Scene leaves_lite(std::uint64_t seed) {
  Scene scene;
  scene.name = "leaves-lite";
  scene.near = 2.0;
  scene.far = 6.0;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };

  for (int i = 0; i < 12; ++i) {
    // Long side along x or y, so the strips cross the image plane.
    const int long_axis = u(rng) < 0.5 ? 0 : 1;
    const int other = 1 - long_axis;
    const int thin_axis = u(rng) < 0.5 ? other : 2;
    const int mid_axis = 3 - long_axis - thin_axis;
    Eigen::Vector3d size;
    size[long_axis] = range(0.8, 1.4);
    size[mid_axis] = range(0.08, 0.25);
    size[thin_axis] = range(0.05, 0.1);
    const Eigen::Vector3d center(range(-0.9, 0.9), range(-0.9, 0.9), range(-1.0, 1.0));
    Box box;
    box.lo = center - 0.5 * size;
    box.hi = center + 0.5 * size;
    box.density = 40.0;
    box.albedo = Eigen::Vector3d(range(0.1, 0.6), range(0.5, 1.0), range(0.05, 0.35));
    scene.boxes.push_back(box);
  }
  const Eigen::Vector3d sphere_colors[2] = {{0.9, 0.25, 0.2}, {0.25, 0.35, 0.9}};
  for (int i = 0; i < 2; ++i) {
    Sphere s;
    s.center = Eigen::Vector3d(range(-0.7, 0.7), range(-0.7, 0.7), range(-0.8, 0.2));
    s.radius = range(0.35, 0.45);
    s.density = 25.0;
    s.albedo = sphere_colors[i];
    scene.spheres.push_back(s);
  }
  return scene;
}

Scene scene_by_name(const std::string& name, std::uint64_t seed) {
  if (name == "leaves-lite") return leaves_lite(seed);
  throw std::invalid_argument("unknown scene '" + name + "'");
}

namespace {

// Offset that moves a breakpoint node just past a primitive boundary, so the
// node's density holds on the whole interval up to the next node.
constexpr double kBoundaryNudge = 1e-9;

struct NodeWindow {
  Scene local;  // primitives the ray touches
  std::vector<double> breakpoints;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
};

NodeWindow node_window(const Scene& scene, const Ray& ray) {
  NodeWindow w;
  auto consider = [&](const auto& prim, auto& list) {
    double t0, t1;
    if (overlap(prim, ray, 0.0, t0, t1) && t1 >= ray.near && t0 <= ray.far) {
      list.push_back(prim);
      for (double b : {t0 + kBoundaryNudge, t1 + kBoundaryNudge}) {
        if (b > ray.near && b < ray.far) w.breakpoints.push_back(b);
      }
      w.lo = std::min(w.lo, t0);
      w.hi = std::max(w.hi, t1);
    }
  };
  for (const auto& s : scene.spheres) consider(s, w.local.spheres);
  for (const auto& b : scene.boxes) consider(b, w.local.boxes);
  return w;
}

// Grid nodes near + k h for k in [k0, k1] merged with the breakpoints.
std::vector<double> merged_nodes(const Ray& ray, int steps, int k0, int k1, std::vector<double> breakpoints) {
  const double h = (ray.far - ray.near) / steps;
  std::vector<double> t;
  t.reserve(static_cast<std::size_t>(std::max(0, k1 - k0 + 1)) + breakpoints.size());
  for (int k = k0; k <= k1; ++k) t.push_back(ray.near + k * h);
  t.insert(t.end(), breakpoints.begin(), breakpoints.end());
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  return t;
}

}  // namespace

std::vector<double> oracle_nodes(const Scene& scene, const Ray& ray, int steps) {
  if (steps < 1) throw std::invalid_argument("oracle: steps must be positive");
  return merged_nodes(ray, steps, 0, steps - 1, node_window(scene, ray).breakpoints);
}

OraclePixel oracle_ray(const Scene& scene, const Ray& ray, int steps) {
  if (steps < 1) throw std::invalid_argument("oracle: steps must be positive");
  const double h = (ray.far - ray.near) / steps;

  // Only nodes that can lie inside some primitive matter; every other node
  // has zero density and contributes nothing.
  const NodeWindow w = node_window(scene, ray);
  OraclePixel px;
  if (w.local.spheres.empty() && w.local.boxes.empty()) {
    px.depth = std::numeric_limits<double>::quiet_NaN();
    return px;
  }
  const int k0 = std::max(0, static_cast<int>(std::floor((w.lo - ray.near) / h)) - 1);
  const int k1 = std::min(steps - 1, static_cast<int>(std::ceil((w.hi - ray.near) / h)) + 1);
  const std::vector<double> t = merged_nodes(ray, steps, k0, k1, w.breakpoints);

  double transmittance = 1.0, depth_sum = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const DensityColor dc = scene_density_color(w.local, ray.origin + t[i] * ray.direction);
    if (dc.sigma <= 0.0) continue;
    const double next = i + 1 < t.size() ? t[i + 1] : ray.far;
    const double alpha = 1.0 - std::exp(-dc.sigma * (next - t[i]));
    const double weight = transmittance * alpha;
    px.rgb += weight * dc.rgb;
    px.opacity += weight;
    depth_sum += weight * t[i];
    transmittance *= 1.0 - alpha;
  }
  px.depth = px.opacity >= kDepthOpacityThreshold ? depth_sum / px.opacity
                                                  : std::numeric_limits<double>::quiet_NaN();
  return px;
}

OracleImage oracle_render(const Scene& scene, const Camera& camera, int steps) {
  const auto rays = generate_rays(camera);
  OracleImage out{Image(camera.intrinsics.width, camera.intrinsics.height), std::vector<double>(rays.size())};
  for (std::size_t i = 0; i < rays.size(); ++i) {
    const OraclePixel px = oracle_ray(scene, rays[i], steps);
    for (int c = 0; c < 3; ++c) out.image.rgb[i * 3 + c] = px.rgb[c];
    out.depth[i] = px.depth;
  }
  return out;
}

Camera Dataset::camera(int view) const {
  Camera cam;
  cam.intrinsics = intrinsics;
  cam.pose = views.at(static_cast<std::size_t>(view)).pose;
  cam.near = near;
  cam.far = far;
  return cam;
}

std::vector<int> test_split(int n_views) {
  std::vector<int> test;
  for (int i = 0; i < n_views; i += 8) test.push_back(i);
  return test;
}

std::vector<Pose> forward_facing_poses(const Scene& scene, int n_views, const DatasetLayout& layout) {
  // Vogel spiral over a disc of view angles; view 0 sits near the axis.
  constexpr double golden_angle = 2.399963229728653;
  std::vector<Pose> poses;
  for (int k = 0; k < n_views; ++k) {
    const double r = layout.max_angle * std::sqrt((k + 0.5) / n_views);
    const double phi = k * golden_angle;
    const double yaw = r * std::cos(phi), pitch = r * std::sin(phi);
    const Eigen::Vector3d offset(std::sin(yaw) * std::cos(pitch), std::sin(pitch), std::cos(yaw) * std::cos(pitch));
    poses.push_back(look_at(scene.centroid + layout.radius * offset, scene.centroid, Eigen::Vector3d::UnitY()));
  }
  return poses;
}

Dataset make_dataset(const Scene& scene, std::uint64_t seed, int n_views, const DatasetLayout& layout) {
  if (n_views < 8) {
    throw std::invalid_argument("dataset: n_views must be at least 8 so that the test split is non-empty");
  }
  Dataset ds;
  ds.scene = scene.name;
  ds.seed = seed;
  ds.intrinsics = Intrinsics::from_fov(layout.width, layout.height, layout.fov);
  ds.near = scene.near;
  ds.far = scene.far;
  ds.test = test_split(n_views);
  for (int i = 0; i < n_views; ++i) {
    if (std::find(ds.test.begin(), ds.test.end(), i) == ds.test.end()) ds.train.push_back(i);
  }
  for (const Pose& pose : forward_facing_poses(scene, n_views, layout)) {
    View view;
    view.pose = pose;
    ds.views.push_back(std::move(view));
    const OracleImage gt = oracle_render(scene, ds.camera(static_cast<int>(ds.views.size()) - 1), layout.oracle_steps);
    ds.views.back().image = quantized(gt.image);
    ds.views.back().depth.assign(gt.depth.begin(), gt.depth.end());
  }
  return ds;
}

void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  if (!ec) std::filesystem::create_directories(dir / "depth", ec);
  if (ec) throw std::runtime_error("dataset: cannot create " + dir.string() + ": " + ec.message());

  json files = json::array();
  json poses = json::array();
  for (std::size_t i = 0; i < ds.views.size(); ++i) {
    const View& v = ds.views[i];
    const std::string image_name = indexed_name("images", static_cast<int>(i), ".png");
    const std::string depth_name = indexed_name("depth", static_cast<int>(i), ".bin");
    write_png(dir / image_name, v.image);
    const std::string depth_bytes = encode_depth(v.depth);
    write_file(dir / depth_name, depth_bytes);
    files.push_back({{"image", image_name},
                     {"depth", depth_name},
                     {"image_crc32", crc_of(read_file(dir / image_name))},
                     {"depth_crc32", crc_of(depth_bytes)}});
    json rows = json::array();
    for (int r = 0; r < 3; ++r) rows.push_back({v.pose(r, 0), v.pose(r, 1), v.pose(r, 2), v.pose(r, 3)});
    poses.push_back(rows);
  }
  json manifest = {{"version", kDatasetVersion},
                   {"scene", ds.scene},
                   {"seed", ds.seed},
                   {"width", ds.intrinsics.width},
                   {"height", ds.intrinsics.height},
                   {"fx", ds.intrinsics.fx},
                   {"fy", ds.intrinsics.fy},
                   {"cx", ds.intrinsics.cx},
                   {"cy", ds.intrinsics.cy},
                   {"near", ds.near},
                   {"far", ds.far},
                   {"n_views", ds.views.size()},
                   {"split", {{"train", ds.train}, {"test", ds.test}}},
                   {"poses_crc32", 0},
                   {"files", files}};
  const std::string poses_text = poses.dump(1) + "\n";
  write_file(dir / "poses.json", poses_text);
  manifest["poses_crc32"] = crc_of(poses_text);
  write_file(dir / "manifest.json", manifest.dump(1) + "\n");
}

Dataset generate_dataset(const Scene& scene, std::uint64_t seed, int n_views, const DatasetLayout& layout,
                         const std::filesystem::path& dir) {
  Dataset ds = make_dataset(scene, seed, n_views, layout);
  write_dataset(ds, dir);
  return ds;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  json manifest;
  try {
    manifest = json::parse(read_file(dir / "manifest.json"));
  } catch (const json::parse_error& e) {
    throw std::runtime_error("dataset: manifest.json is not valid JSON: " + std::string(e.what()));
  }
  const int version = field<int>(manifest, "version");
  if (version != kDatasetVersion) {
    throw std::runtime_error("dataset: manifest.json field 'version' is " + std::to_string(version) +
                             ", expected " + std::to_string(kDatasetVersion));
  }
  Dataset ds;
  ds.scene = field<std::string>(manifest, "scene");
  ds.seed = field<std::uint64_t>(manifest, "seed");
  ds.intrinsics.width = field<int>(manifest, "width");
  ds.intrinsics.height = field<int>(manifest, "height");
  ds.intrinsics.fx = field<double>(manifest, "fx");
  ds.intrinsics.fy = field<double>(manifest, "fy");
  ds.intrinsics.cx = field<double>(manifest, "cx");
  ds.intrinsics.cy = field<double>(manifest, "cy");
  ds.near = field<double>(manifest, "near");
  ds.far = field<double>(manifest, "far");
  if (ds.intrinsics.width < 1 || ds.intrinsics.height < 1) {
    throw std::runtime_error("dataset: manifest.json fields 'width'/'height' must be positive");
  }
  if (!(ds.near > 0.0) || !(ds.far > ds.near)) {
    throw std::runtime_error("dataset: manifest.json fields 'near'/'far' must satisfy 0 < near < far");
  }
  const int n_views = field<int>(manifest, "n_views");
  const json split = field<json>(manifest, "split");
  ds.train = field<std::vector<int>>(split, "train", "manifest.json split");
  ds.test = field<std::vector<int>>(split, "test", "manifest.json split");
  const json files = field<json>(manifest, "files");
  if (!files.is_array() || static_cast<int>(files.size()) != n_views) {
    throw std::runtime_error("dataset: manifest.json field 'files' must list n_views entries");
  }
  for (int i : ds.train) {
    if (i < 0 || i >= n_views) throw std::runtime_error("dataset: manifest.json field 'split.train' out of range");
  }
  for (int i : ds.test) {
    if (i < 0 || i >= n_views) throw std::runtime_error("dataset: manifest.json field 'split.test' out of range");
  }

  const std::string poses_text = read_file(dir / "poses.json");
  if (crc_of(poses_text) != field<std::uint32_t>(manifest, "poses_crc32")) {
    throw std::runtime_error("dataset: checksum mismatch for poses.json");
  }
  json poses;
  try {
    poses = json::parse(poses_text);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("dataset: poses.json is not valid JSON: " + std::string(e.what()));
  }
  if (!poses.is_array() || static_cast<int>(poses.size()) != n_views) {
    throw std::runtime_error("dataset: poses.json must hold n_views 3x4 matrices");
  }

  const std::size_t pixels = static_cast<std::size_t>(ds.intrinsics.width) * ds.intrinsics.height;
  for (int i = 0; i < n_views; ++i) {
    const json& entry = files[static_cast<std::size_t>(i)];
    View view;
    const auto image_name = field<std::string>(entry, "image", "manifest.json files");
    const auto depth_name = field<std::string>(entry, "depth", "manifest.json files");
    const std::string image_bytes = read_file(dir / image_name);
    if (crc_of(image_bytes) != field<std::uint32_t>(entry, "image_crc32", "manifest.json files")) {
      throw std::runtime_error("dataset: checksum mismatch for " + image_name);
    }
    view.image = decode_png(image_bytes, image_name);
    if (view.image.width != ds.intrinsics.width || view.image.height != ds.intrinsics.height) {
      throw std::runtime_error("dataset: " + image_name + " is " + std::to_string(view.image.width) + "x" +
                               std::to_string(view.image.height) + ", manifest says " +
                               std::to_string(ds.intrinsics.width) + "x" + std::to_string(ds.intrinsics.height));
    }
    const std::string depth_bytes = read_file(dir / depth_name);
    if (crc_of(depth_bytes) != field<std::uint32_t>(entry, "depth_crc32", "manifest.json files")) {
      throw std::runtime_error("dataset: checksum mismatch for " + depth_name);
    }
    if (depth_bytes.size() != pixels * 4) {
      throw std::runtime_error("dataset: " + depth_name + " does not hold width*height float32 values");
    }
    view.depth = decode_depth(depth_bytes);

    const json& rows = poses[static_cast<std::size_t>(i)];
    if (!rows.is_array() || rows.size() != 3) throw std::runtime_error("dataset: poses.json entry is not 3x4");
    for (int r = 0; r < 3; ++r) {
      if (!rows[r].is_array() || rows[r].size() != 4) throw std::runtime_error("dataset: poses.json entry is not 3x4");
      for (int c = 0; c < 4; ++c) view.pose(r, c) = rows[r][c].get<double>();
    }
    ds.views.push_back(std::move(view));
  }
  return ds;
}

}  // namespace rsmp
