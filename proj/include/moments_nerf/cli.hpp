#pragma once

// Command-line front end. run_cli() is the whole program; tools/ only wraps it.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "encoder.hpp"
#include "errors.hpp"
#include "gabor.hpp"
#include "gradcheck.hpp"
#include "image_io.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "scene.hpp"
#include "train.hpp"
#include "zernike.hpp"

namespace moments_nerf::cli {

namespace detail {

inline std::vector<int> all_views(const Scene& s) {
  std::vector<int> v(s.size());
  std::iota(v.begin(), v.end(), 0);
  return v;
}

/// Training views default to everything not held out; eval views default to the rest.
inline void resolve_views(const Scene& s, std::vector<int>& train, std::vector<int>& eval) {
  if (train.empty()) {
    for (int v : all_views(s))
      if (std::find(eval.begin(), eval.end(), v) == eval.end()) train.push_back(v);
  }
  if (eval.empty()) {
    for (int v : all_views(s))
      if (std::find(train.begin(), train.end(), v) == train.end()) eval.push_back(v);
  }
  require(!train.empty(), "no training views selected");
}

inline double plane_mean(const Tensor<double>& img, std::size_t p) {
  return (img.data[3 * p] + img.data[3 * p + 1] + img.data[3 * p + 2]) / 3.0;
}

}  // namespace detail

struct Options {
  // synth
  int views = 3;
  int size = 32;
  int synth_samples = 1024;
  // shared
  std::uint64_t seed = 0;
  std::string out;
  std::string scene;
  std::string checkpoint;
  std::vector<int> train_views;
  std::vector<int> eval_views;
  // train
  TrainConfig train;
  std::string loss_csv;
  bool no_gabor = false;
  bool no_zernike = false;
  int width = 128;
  int feature_dim = 64;
  int zernike_layers = 15;
  int zernike_channels = 8;
  // render / eval
  int view = -1;
  int render_samples = 128;
  std::string raw;
  std::string pred;
  std::string gt;
  std::string image;
  std::string name = "scene";
  // gabor-bank / zernike
  int kernel = 9;
  int grid = 7;
  std::string patch;
};

inline int cmd_synth(const Options& o, std::ostream& out) {
  SynthSpec spec;
  spec.n_views = o.views;
  spec.size = o.size;
  spec.seed = o.seed;
  spec.samples = o.synth_samples;
  const auto syn = synth_scene(spec);
  save_scene(o.out, syn.scene);
  out << "wrote " << syn.scene.size() << " views to " << o.out << " (world_scale " << syn.scene.world_scale << ")\n";
  return 0;
}

inline Model<float> model_from(const Options& o) {
  if (!o.checkpoint.empty()) return load_checkpoint<float>(o.checkpoint).model;
  ModelConfig mc;
  mc.encoder.use_gabor = !o.no_gabor;
  mc.encoder.use_zernike = !o.no_zernike;
  mc.encoder.zernike_layers = o.zernike_layers;
  mc.encoder.zernike_channels = o.zernike_channels;
  mc.encoder.feature_dim = o.feature_dim;
  mc.field.width = o.width;
  return Model<float>::create(mc, o.seed);
}

inline int cmd_extract(const Options& o, std::ostream& out) {
  auto model = model_from(o);
  const auto img = read_png(o.image).cast<float>();
  const auto vol = encoder::moments_encode(img, model.params, model.cfg.encoder);
  encoder::write_feature_volume(o.out, vol);
  out << "wrote " << vol.height() << "x" << vol.width() << "x" << vol.depth() << " feature volume to " << o.out << "\n";
  return 0;
}

inline int cmd_gabor_bank(const Options& o, std::ostream& out) {
  namespace fs = std::filesystem;
  fs::create_directories(o.out);
  const auto bank = gabor::default_bank();
  std::vector<gabor::GaborKernel> kernels;
  for (std::size_t f = 0; f < bank.size(); ++f) {
    kernels.push_back(gabor::make_kernel(o.kernel, bank[f].first, bank[f].second));
    std::ofstream os(fs::path(o.out) / ("kernel_" + std::to_string(f) + ".csv"));
    gabor::write_kernel_csv(os, kernels.back());
  }
  if (!o.image.empty()) {
    const auto resp = gabor::gabor_layer(read_png(o.image), kernels);
    for (int f = 0; f < resp.dim(2); ++f) {
      Tensor<double> plane({resp.dim(0), resp.dim(1)});
      double lo = 1e300, hi = -1e300;
      for (std::size_t p = 0; p < plane.size(); ++p) {
        plane.data[p] = resp.data[p * resp.dim(2) + f];
        lo = std::min(lo, plane.data[p]);
        hi = std::max(hi, plane.data[p]);
      }
      for (auto& v : plane.data) v = hi > lo ? (v - lo) / (hi - lo) : 0.0;
      const std::string stem = "response_" + std::to_string(f);
      write_png((fs::path(o.out) / (stem + ".png")).string(), plane);
      std::ofstream side(fs::path(o.out) / (stem + ".txt"));
      side.precision(17);
      side << "min " << lo << "\nmax " << hi << "\n";
    }
  }
  out << "wrote " << kernels.size() << " kernels to " << o.out << "\n";
  return 0;
}

inline int cmd_zernike(const Options& o, std::ostream& out) {
  namespace fs = std::filesystem;
  const auto basis = zernike::build_basis(zernike::kOrderCap, o.grid);
  fs::create_directories(o.out);
  {
    std::ofstream os(fs::path(o.out) / "basis.csv");
    zernike::write_basis_csv(os, basis);
  }
  if (!o.patch.empty()) {
    const auto img = read_png(o.patch);
    if (img.dim(0) != o.grid || img.dim(1) != o.grid)
      throw ArgumentError("zernike: patch must be " + std::to_string(o.grid) + "x" + std::to_string(o.grid) +
                          " pixels, got " + shape_str(img.shape));
    std::vector<double> gray(basis.grid.pixels());
    for (std::size_t p = 0; p < gray.size(); ++p) gray[p] = detail::plane_mean(img, p);
    std::ofstream os(fs::path(o.out) / "moments.csv");
    zernike::write_coeffs_csv(os, zernike::moments(gray, basis), basis);
  }
  out << "wrote " << basis.count() << " basis planes on a " << o.grid << "x" << o.grid << " grid to " << o.out << "\n";
  return 0;
}

inline int cmd_train(Options o, std::ostream& out) {
  const Scene full = load_scene(o.scene);
  detail::resolve_views(full, o.train_views, o.eval_views);
  const Scene train = full.select(o.train_views);
  auto model = model_from(o);
  OptimState<float> opt;
  if (!o.checkpoint.empty()) opt = load_checkpoint<float>(o.checkpoint).opt;
  o.train.seed = o.seed;
  const auto res = train_loop(train, model, opt, o.train, [&](int it, double loss) {
    out << "iter " << it << " loss " << loss << "\n";
  });
  if (!o.loss_csv.empty()) write_loss_csv(o.loss_csv, res.losses);
  save_checkpoint(o.out, model, opt, CheckpointMeta{train.world_scale, train.near, train.far});
  out << "saved checkpoint " << o.out << "\n";
  return 0;
}

inline int cmd_render(Options o, std::ostream& out) {
  const Scene full = load_scene(o.scene);
  detail::resolve_views(full, o.train_views, o.eval_views);
  require(o.view >= 0 || !o.eval_views.empty(), "render: pass --view or --eval-views");
  const int view = o.view >= 0 ? o.view : o.eval_views.front();
  require(view < static_cast<int>(full.size()), "render: view " + std::to_string(view) + " out of range");
  auto model = load_checkpoint<float>(o.checkpoint).model;
  const Scene inputs = full.select(o.train_views);
  std::vector<Tensor<double>> renders;
  evaluate_views(model, inputs, full.select({view}), o.name, o.render_samples, &renders);
  write_png(o.out, renders.front());
  if (!o.raw.empty()) write_raw_image(o.raw, renders.front());
  out << "rendered view " << view << " to " << o.out << "\n";
  return 0;
}

inline int cmd_eval(Options o, std::ostream& out) {
  metrics::MetricReport report;
  if (!o.pred.empty() || !o.gt.empty()) {
    require(!o.pred.empty() && !o.gt.empty(), "eval: --pred and --gt go together");
    report.add(o.name, std::filesystem::path(o.pred).stem().string(), read_png(o.pred), read_png(o.gt));
  } else {
    require(!o.checkpoint.empty() && !o.scene.empty(), "eval: pass --pred/--gt or --checkpoint/--scene");
    const Scene full = load_scene(o.scene);
    detail::resolve_views(full, o.train_views, o.eval_views);
    require(!o.eval_views.empty(), "eval: no held-out views left to evaluate");
    auto model = load_checkpoint<float>(o.checkpoint).model;
    report = evaluate_views(model, full.select(o.train_views), full.select(o.eval_views), o.name, o.render_samples,
                            nullptr, o.eval_views);
  }
  if (o.out.empty()) {
    report.write_csv(out);
  } else {
    report.write_csv(o.out);
    const auto a = report.aggregate();
    out << "psnr " << a.psnr << " ssim " << a.ssim << " -> " << o.out << "\n";
  }
  return 0;
}

inline int cmd_gradcheck(const Options& o, std::ostream& out) {
  bool ok = true;
  for (const auto& r : gradcheck::run_all(o.seed == 0 ? 7 : o.seed)) {
    out << r << "\n";
    ok = ok && r.passed();
  }
  return ok ? 0 : 1;
}

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  Options o;
  CLI::App app{"Moments-NeRF: Zernike/Gabor encoded radiance fields at desk scale"};
  app.require_subcommand(1);
  auto seed = [&](CLI::App* c) { c->add_option("--seed", o.seed, "random seed"); };
  auto views = [&](CLI::App* c) {
    c->add_option("--train-views", o.train_views, "conditioning/training view indices")->delimiter(',');
    c->add_option("--eval-views", o.eval_views, "held-out view indices")->delimiter(',');
  };

  auto* synth = app.add_subcommand("synth", "write the analytic sphere scene");
  synth->add_option("--views", o.views, "camera count")->check(CLI::PositiveNumber);
  synth->add_option("--size", o.size, "image side in pixels")->check(CLI::PositiveNumber);
  synth->add_option("--samples", o.synth_samples, "compositing samples per ray");
  synth->add_option("--out", o.out, "output directory")->required();
  seed(synth);

  auto model_flags = [&](CLI::App* c) {
    c->add_flag("--no-gabor", o.no_gabor, "disable the Gabor stage");
    c->add_flag("--no-zernike", o.no_zernike, "disable the Zernike stack");
    c->add_option("--width", o.width, "field hidden width");
    c->add_option("--feature-dim", o.feature_dim, "encoder feature width");
    c->add_option("--zernike-layers", o.zernike_layers, "number of stacked Zernike layers");
    c->add_option("--zernike-channels", o.zernike_channels, "channels per Zernike layer");
  };

  auto* extract = app.add_subcommand("extract", "encode an image into an MFV1 feature volume");
  extract->add_option("--image", o.image, "input PNG")->required();
  extract->add_option("--out", o.out, "output .mfv file")->required();
  extract->add_option("--checkpoint", o.checkpoint, "trained weights (default: fresh init from --seed)");
  model_flags(extract);
  seed(extract);

  auto* gb = app.add_subcommand("gabor-bank", "dump the default Gabor kernels (and responses)");
  gb->add_option("--kernel", o.kernel, "kernel size (odd)");
  gb->add_option("--image", o.image, "optional PNG to filter");
  gb->add_option("--out", o.out, "output directory")->required();

  auto* zk = app.add_subcommand("zernike", "dump the Zernike basis (and patch moments)");
  zk->add_option("--grid", o.grid, "grid size (odd, >= 5)");
  zk->add_option("--patch", o.patch, "optional grid x grid PNG patch");
  zk->add_option("--out", o.out, "output directory")->required();

  auto* train = app.add_subcommand("train", "train on a scene directory");
  train->add_option("--scene", o.scene, "scene directory")->required();
  train->add_option("--out", o.out, "checkpoint path")->required();
  train->add_option("--checkpoint", o.checkpoint, "resume from this checkpoint");
  train->add_option("--loss-csv", o.loss_csv, "write iteration,loss");
  train->add_option("--iters", o.train.iterations, "iterations");
  train->add_option("--batch", o.train.batch_rays, "rays per batch");
  train->add_option("--samples", o.train.samples, "samples per ray");
  train->add_option("--lr", o.train.lr, "learning rate");
  train->add_option("--log-every", o.train.log_every, "progress cadence (0 = silent)");
  train->add_option("--freeze", o.train.frozen_groups, "parameter groups to freeze: gabor,zernike,trunk,field")
      ->delimiter(',')
      ->check(CLI::IsMember({"gabor", "zernike", "trunk", "field"}));
  model_flags(train);
  seed(train);
  views(train);

  auto* render = app.add_subcommand("render", "render one view of a scene from a checkpoint");
  render->add_option("--checkpoint", o.checkpoint, "checkpoint path")->required();
  render->add_option("--scene", o.scene, "scene directory (cameras and conditioning images)")->required();
  render->add_option("--view", o.view, "camera index to render");
  render->add_option("--samples", o.render_samples, "samples per ray");
  render->add_option("--out", o.out, "output PNG")->required();
  render->add_option("--raw", o.raw, "also write the float image (MIMG)");
  views(render);

  auto* eval = app.add_subcommand("eval", "PSNR/SSIM of renders against ground truth");
  eval->add_option("--pred", o.pred, "predicted PNG");
  eval->add_option("--gt", o.gt, "ground-truth PNG");
  eval->add_option("--checkpoint", o.checkpoint, "render held-out views from this checkpoint");
  eval->add_option("--scene", o.scene, "scene directory");
  eval->add_option("--samples", o.render_samples, "samples per ray");
  eval->add_option("--name", o.name, "scene name in the report");
  eval->add_option("--out", o.out, "CSV path (default: stdout)");
  views(eval);

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  seed(gc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(o, out);
    if (extract->parsed()) return cmd_extract(o, out);
    if (gb->parsed()) return cmd_gabor_bank(o, out);
    if (zk->parsed()) return cmd_zernike(o, out);
    if (train->parsed()) return cmd_train(o, out);
    if (render->parsed()) return cmd_render(o, out);
    if (eval->parsed()) return cmd_eval(o, out);
    if (gc->parsed()) return cmd_gradcheck(o, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace moments_nerf::cli
