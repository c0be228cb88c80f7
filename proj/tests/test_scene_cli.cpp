#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "moments_nerf/cli.hpp"
#include "moments_nerf/scene.hpp"

using namespace moments_nerf;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("mn_scene_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

struct CliResult {
  int code;
  std::string out, err;
};

CliResult invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "moments_cli");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

void write_minimal_scene(const fs::path& dir, double fx) {
  write_png((dir / "a.png").string(), Tensor<double>({4, 6, 3}, 0.5));
  std::ofstream(dir / "scene.json") << R"({"near": 1.0, "far": 3.0, "world_scale": 0.5, "frames": [
    {"file": "a.png", "fx": )" << fx
                                    << R"(, "fy": 8, "cx": 2.5, "cy": 1.5,
     "world_to_cam": [1,0,0,0, 0,1,0,0, 0,0,1,2]}]})";
}

// Sphere color along a pixel ray from the chord length alone.
Eigen::Vector3d analytic_pixel(const AnalyticSphere& s, const render::Ray& ray) {
  const Eigen::Vector3d oc = ray.origin - s.center;
  const double b = oc.dot(ray.dir), c = oc.squaredNorm() - s.radius * s.radius;
  const double disc = b * b - c;
  if (disc <= 0.0) return Eigen::Vector3d::Zero();
  const double t0 = std::max(ray.t_near, -b - std::sqrt(disc)), t1 = std::min(ray.t_far, -b + std::sqrt(disc));
  const double chord = std::max(0.0, t1 - t0);
  return s.albedo * -std::expm1(-s.sigma * chord);
}

std::vector<std::string> tiny_model_flags() {
  return {"--width", "8", "--feature-dim", "6", "--zernike-layers", "2", "--zernike-channels", "2"};
}

}  // namespace

TEST(SceneIo, LoadsMinimalScene) {
  const auto dir = scratch("minimal");
  write_minimal_scene(dir, 8.0);
  const auto s = load_scene(dir.string());
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s.cameras[0].width, 6);
  EXPECT_EQ(s.cameras[0].height, 4);
  EXPECT_DOUBLE_EQ(s.cameras[0].translation.z(), 2.0);
  EXPECT_DOUBLE_EQ(s.world_scale, 0.5);
  EXPECT_NEAR(s.images[0].at(1, 1, 1), 128.0 / 255.0, 1e-12);
}

TEST(SceneIo, RejectsBadIntrinsics) {
  const auto dir = scratch("bad_fx");
  write_minimal_scene(dir, 0.0);
  try {
    load_scene(dir.string());
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("fx"), std::string::npos) << e.what();
  }
  EXPECT_THROW(load_scene((dir / "missing").string()), LoadError);
}

TEST(SceneIo, SaveLoadRoundTrip) {
  SynthSpec spec;
  spec.n_views = 2;
  spec.size = 10;
  spec.samples = 64;
  auto s = synth_scene(spec).scene;
  for (auto& img : s.images)
    for (auto& v : img.data) v = std::round(v * 255.0) / 255.0;
  const auto dir = scratch("roundtrip");
  save_scene(dir.string(), s);
  const auto back = load_scene(dir.string());
  ASSERT_EQ(back.size(), s.size());
  EXPECT_EQ(back.near, s.near);
  EXPECT_EQ(back.far, s.far);
  EXPECT_EQ(back.world_scale, s.world_scale);
  for (std::size_t v = 0; v < s.size(); ++v) {
    EXPECT_EQ(back.images[v].data, s.images[v].data);
    EXPECT_EQ(back.cameras[v].fx, s.cameras[v].fx);
    EXPECT_EQ(back.cameras[v].rotation, s.cameras[v].rotation);
    EXPECT_EQ(back.cameras[v].translation, s.cameras[v].translation);
  }
}

TEST(Synth, MatchesChordClosedForm) {
  SynthSpec spec;
  spec.n_views = 3;
  spec.size = 9;
  spec.samples = 256;
  spec.seed = 4;
  const auto syn = synth_scene(spec);
  const auto& s = syn.scene;
  int black = 0;
  for (std::size_t v = 0; v < s.size(); ++v) {
    const auto& cam = s.cameras[v];
    const auto p = project(spec.sphere.center, cam);
    ASSERT_TRUE(p.in_front);
    EXPECT_GE(p.u, 0.0);
    EXPECT_LE(p.u, cam.width - 1.0);
    EXPECT_GE(p.v, 0.0);
    EXPECT_LE(p.v, cam.height - 1.0);
    for (int i = 0; i < cam.height; ++i)
      for (int j = 0; j < cam.width; ++j) {
        const auto ray = render::generate_ray(cam, j, i, s.near, s.far);
        const auto want = analytic_pixel(syn.field, ray);
        for (int k = 0; k < 3; ++k) EXPECT_NEAR(s.images[v].at(i, j, k), want[k], 1e-6);
        if (want.isZero()) {
          ++black;
          for (int k = 0; k < 3; ++k) EXPECT_EQ(s.images[v].at(i, j, k), 0.0);
        }
        // The sampled segment stays inside the normalized cube.
        for (double t : {s.near, s.far})
          EXPECT_LE((ray.at(t) * s.world_scale).cwiseAbs().maxCoeff(), 1.5 + 1e-12);
      }
    // The center ray crosses a full diameter.
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(s.images[v].at(4, 4, k), spec.sphere.albedo[k], 1e-9);
  }
  EXPECT_GT(black, 0);
}

TEST(Synth, SeedMovesTheRing) {
  SynthSpec spec;
  spec.size = 6;
  spec.samples = 16;
  const auto a = synth_scene(spec).scene;
  const auto b = synth_scene(spec).scene;
  EXPECT_EQ(a.images[0].data, b.images[0].data);
  spec.seed = 9;
  const auto c = synth_scene(spec).scene;
  EXPECT_NE(a.cameras[0].translation, c.cameras[0].translation);
}

TEST(Cli, UsageErrors) {
  const auto r = invoke({"train", "--bogus"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("error"), std::string::npos);
  EXPECT_EQ(invoke({}).code, 2);
  EXPECT_EQ(invoke({"--help"}).code, 0);
  const auto missing = invoke({"eval", "--pred", "/nonexistent/a.png", "--gt", "/nonexistent/b.png"});
  EXPECT_EQ(missing.code, 1);
  EXPECT_NE(missing.err.find("error:"), std::string::npos);
}

TEST(Cli, SynthTrainRenderEval) {
  const auto dir = scratch("pipeline");
  const auto scene = (dir / "scene").string();
  ASSERT_EQ(invoke({"synth", "--views", "3", "--size", "12", "--samples", "64", "--out", scene}).code, 0);
  EXPECT_TRUE(fs::exists(fs::path(scene) / "scene.json"));
  for (int v = 0; v < 3; ++v) EXPECT_TRUE(fs::exists(fs::path(scene) / ("view_00" + std::to_string(v) + ".png")));

  auto train = [&](const std::string& tag) {
    std::vector<std::string> args{"train", "--scene", scene, "--out", (dir / (tag + ".mfp")).string(),
                                  "--loss-csv", (dir / (tag + ".csv")).string(), "--iters", "4", "--batch", "8",
                                  "--samples", "6", "--seed", "7", "--train-views", "0,1", "--eval-views", "2"};
    for (const auto& f : tiny_model_flags()) args.push_back(f);
    return invoke(args);
  };
  const auto t1 = train("a");
  ASSERT_EQ(t1.code, 0) << t1.err;
  ASSERT_EQ(train("b").code, 0);
  EXPECT_EQ(slurp(dir / "a.csv"), slurp(dir / "b.csv"));
  EXPECT_EQ(slurp(dir / "a.mfp"), slurp(dir / "b.mfp"));

  const auto png = (dir / "r.png").string(), raw = (dir / "r.mimg").string();
  const auto r = invoke({"render", "--checkpoint", (dir / "a.mfp").string(), "--scene", scene, "--view", "2", "--samples",
                      "8", "--out", png, "--raw", raw, "--train-views", "0,1"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto img = read_raw_image(raw);
  EXPECT_EQ(img.shape, (Shape{12, 12, 3}));
  EXPECT_EQ(read_png(png).shape, img.shape);

  const auto e = invoke({"eval", "--checkpoint", (dir / "a.mfp").string(), "--scene", scene, "--samples", "8",
                      "--train-views", "0,1", "--eval-views", "2"});
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_EQ(e.out.rfind("scene,view_id,psnr,ssim\n", 0), 0u);
  EXPECT_NE(e.out.find("all,mean,"), std::string::npos);

  const auto same = invoke({"eval", "--pred", png, "--gt", png});
  ASSERT_EQ(same.code, 0);
  EXPECT_NE(same.out.find(",99.000000,1.000000"), std::string::npos) << same.out;
}

TEST(Cli, ExtractWritesFeatureVolume) {
  const auto dir = scratch("extract");
  write_png((dir / "in.png").string(), Tensor<double>({16, 12, 3}, 0.3));
  std::vector<std::string> args{"extract", "--image", (dir / "in.png").string(), "--out", (dir / "f.mfv").string()};
  for (const auto& f : tiny_model_flags()) args.push_back(f);
  const auto r = invoke(args);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto vol = encoder::read_feature_volume((dir / "f.mfv").string());
  EXPECT_EQ(vol.height(), 16);
  EXPECT_EQ(vol.width(), 12);
  EXPECT_EQ(vol.depth(), 6);
}

TEST(Cli, GaborBankAndZernikeDumps) {
  const auto dir = scratch("dumps");
  write_png((dir / "in.png").string(), Tensor<double>({12, 12, 3}, 0.6));
  ASSERT_EQ(invoke({"gabor-bank", "--kernel", "5", "--image", (dir / "in.png").string(), "--out", (dir / "g").string()}).code,
            0);
  EXPECT_TRUE(fs::exists(dir / "g" / "kernel_0.csv"));
  EXPECT_TRUE(fs::exists(dir / "g" / "response_0.png"));
  EXPECT_TRUE(fs::exists(dir / "g" / "response_0.txt"));

  write_png((dir / "patch.png").string(), Tensor<double>({7, 7, 3}, 1.0));
  ASSERT_EQ(invoke({"zernike", "--grid", "7", "--patch", (dir / "patch.png").string(), "--out", (dir / "z").string()}).code,
            0);
  EXPECT_TRUE(fs::exists(dir / "z" / "basis.csv"));
  const auto moments = slurp(dir / "z" / "moments.csv");
  EXPECT_EQ(moments.rfind("n,m,parity,alpha\n", 0), 0u);
  EXPECT_EQ(std::count(moments.begin(), moments.end(), '\n'), zernike::build_basis(zernike::kOrderCap, 7).count() + 1);
  const auto wrong = invoke({"zernike", "--grid", "9", "--patch", (dir / "patch.png").string(), "--out", (dir / "z").string()});
  EXPECT_EQ(wrong.code, 1);
}

TEST(Cli, GradcheckPasses) {
  const auto r = invoke({"gradcheck"});
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
  EXPECT_NE(r.out.find("ok "), std::string::npos);
}
