#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "rsmp/image.hpp"
#include "rsmp/trainer.hpp"

using namespace rsmp;
namespace fs = std::filesystem;

namespace {

const fs::path& work_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "rsmp_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string path(const std::string& name) { return (work_dir() / name).string(); }

int run(const std::string& args) {
  const std::string cmd = std::string(RSMP_CLI_PATH) + " " + args + " >" + path("stdout.txt") + " 2>" + path("stderr.txt");
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small but valid experiment: 16x12 images, 8 views, tiny networks.
const std::string& config_path() {
  static const std::string p = [] {
    const nlohmann::json j = {{"version", 1},      {"dataset", path("data")}, {"n_views", 8},      {"width", 16},
                              {"height", 12},      {"n_rays", 16},            {"n_samples", 8},    {"d_feat", 8},
                              {"h_ray", 16},       {"h_scene", 32},           {"n_blocks", 2},     {"field_depth", 2},
                              {"field_width", 16}, {"pos_levels", 4},         {"dir_levels", 2},   {"iterations", 6},
                              {"log_every", 2},    {"eval_every", 3},         {"checkpoint_every", 3}};
    std::ofstream(path("config.json")) << j.dump(1);
    return path("config.json");
  }();
  return p;
}

void ensure_dataset() {
  static bool done = false;
  if (!done) {
    REQUIRE(run("gen-data --config " + config_path()) == 0);
    done = true;
  }
}

}  // namespace

TEST_CASE("usage errors exit with 1") {
  CHECK(run("") == 1);
  CHECK(run("frobnicate") == 1);
  CHECK(run("train --mode sideways") == 1);
  CHECK(run("train --config " + path("no_such.json")) == 1);
  CHECK(run("render --view 0") == 1);
  CHECK(run("--help") == 0);
}

TEST_CASE("runtime errors exit with 2") {
  ensure_dataset();
  CHECK(run("render --checkpoint " + path("missing.rsmp") + " --view 0 --out " + path("x.png")) == 2);
  CHECK(slurp(path("stderr.txt")).find("missing.rsmp") != std::string::npos);
  CHECK(run("train --config " + config_path() + " --dataset " + path("no_data")) == 2);

  std::ofstream(path("bad.json")) << R"({"version": 1, "n_rays": "many"})";
  CHECK(run("train --config " + path("bad.json")) == 2);
  CHECK(slurp(path("stderr.txt")).find("n_rays") != std::string::npos);

  std::ofstream(path("few_views.json")) << R"({"version": 1, "n_views": 4})";
  CHECK(run("gen-data --config " + path("few_views.json") + " --out " + path("few")) != 0);
}

TEST_CASE("gen-data, train, render, eval and hist") {
  ensure_dataset();
  const Dataset ds = load_dataset(path("data"));
  CHECK(ds.views.size() == 8);
  CHECK(ds.test == std::vector<int>{0});

  REQUIRE(run("train --config " + config_path() + " --mode learned --seed 1 --out " + path("learned.rsmp")) == 0);
  REQUIRE(run("train --config " + config_path() + " --mode uniform --seed 1 --out " + path("uniform.rsmp")) == 0);
  CHECK(load_checkpoint(path("learned.rsmp")).iteration == 6);
  CHECK(slurp(path("learned.rsmp.csv")).rfind("iter,loss,psnr_test\n2,", 0) == 0);

  // Extending a finished run by resuming it.
  REQUIRE(run("train --checkpoint " + path("uniform.rsmp") + " --iterations 8") == 0);
  CHECK(load_checkpoint(path("uniform.rsmp")).iteration == 8);

  REQUIRE(run("render --checkpoint " + path("learned.rsmp") + " --view 3 --out " + path("view3.png")) == 0);
  const Model<float> model = model_from_checkpoint(load_checkpoint(path("learned.rsmp")));
  const Image expected = quantized(render_image(ds.camera(3), model, default_chunk(model)));
  const Image decoded = read_png(path("view3.png"));
  CHECK(decoded.width == 16);
  CHECK(decoded.height == 12);
  CHECK(decoded.rgb == expected.rgb);
  CHECK(run("render --checkpoint " + path("learned.rsmp") + " --view 8 --out " + path("x.png")) == 1);

  REQUIRE(run("eval --checkpoint " + path("learned.rsmp") + " --checkpoint " + path("uniform.rsmp") + " --out " +
              path("eval.json")) == 0);
  const auto report = nlohmann::json::parse(slurp(path("eval.json")));
  REQUIRE(report["models"].size() == 2);
  CHECK(report["models"][0]["mode"] == "learned");
  CHECK(report["models"][1]["mode"] == "uniform");
  CHECK(report["models"][0]["views"].size() == 1);
  CHECK(report["models"][0].contains("mean_psnr"));
  CHECK(report["models"][0].contains("mean_ssim"));
  CHECK(report["models"][0].contains("surface_concentration"));

  REQUIRE(run("hist --checkpoint " + path("learned.rsmp") + " --bins 4 --out " + path("hist.csv")) == 0);
  std::istringstream csv(slurp(path("hist.csv")));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "bin_lo,bin_hi,count");
  std::size_t total = 0, rows = 0;
  while (std::getline(csv, line)) {
    total += std::stoul(line.substr(line.rfind(',') + 1));
    ++rows;
  }
  CHECK(rows == 4);
  CHECK(total == 16u * 12u * 8u);
  CHECK(slurp(path("stderr.txt")).find("surface_concentration") != std::string::npos);
}

TEST_CASE("eval on an untrained checkpoint emits a complete report") {
  ensure_dataset();
  TrainConfig c = load_config(config_path());
  Trainer fresh(c, load_dataset(path("data")));
  save_checkpoint(fresh.checkpoint(), path("fresh.rsmp"));
  REQUIRE(run("eval --checkpoint " + path("fresh.rsmp")) == 0);
  const auto report = nlohmann::json::parse(slurp(path("stdout.txt")));
  REQUIRE(report["models"].size() == 1);
  CHECK(report["models"][0]["views"].size() == 1);
  CHECK(report["models"][0]["mean_psnr"].is_number());
}

TEST_CASE("gradcheck passes on a fresh build") {
  CHECK(run("gradcheck") == 0);
  const std::string out = slurp(path("stdout.txt"));
  CHECK(out.find("gradcheck: all suites passed") != std::string::npos);
  CHECK(out.find("FAIL") == std::string::npos);
  CHECK(out.find("PASS pipeline") != std::string::npos);
}
