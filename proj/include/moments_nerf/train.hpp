#pragma once

// Adam, the ray-batch training loop, and MFP1 checkpoints.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "binary_io.hpp"
#include "errors.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "ops.hpp"
#include "renderer.hpp"
#include "scene.hpp"
#include "tensor.hpp"

namespace moments_nerf {

template <class T>
struct OptimState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<Tensor<T>> m;  // one per parameter, in ParamSet order
  std::vector<Tensor<T>> v;

  void init(const ParamSet<T>& params) {
    m.clear();
    v.clear();
    for (const auto& p : params) {
      m.emplace_back(p.value.shape);
      v.emplace_back(p.value.shape);
    }
    step = 0;
  }
};

/// One bias-corrected Adam update. Frozen parameters keep their values and moments.
template <class T>
void adam_step(ParamSet<T>& params, OptimState<T>& opt) {
  if (opt.m.size() != params.size()) opt.init(params);
  for (const auto& p : params) {
    require(p.grad.shape == p.value.shape, "adam: gradient shape mismatch for " + p.name);
    if (!p.frozen && !p.grad.all_finite()) throw NumericError("adam: non-finite gradient in " + p.name);
  }
  ++opt.step;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
  std::size_t k = 0;
  for (auto& p : params) {
    auto& m = opt.m[k].data;
    auto& v = opt.v[k].data;
    ++k;
    if (p.frozen) continue;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = static_cast<double>(p.grad.data[i]);
      m[i] = static_cast<T>(opt.beta1 * m[i] + (1.0 - opt.beta1) * g);
      v[i] = static_cast<T>(opt.beta2 * v[i] + (1.0 - opt.beta2) * g * g);
      const double mh = m[i] / c1;
      const double vh = v[i] / c2;
      p.value.data[i] = static_cast<T>(p.value.data[i] - opt.lr * mh / (std::sqrt(vh) + opt.eps));
    }
  }
}

struct TrainConfig {
  int batch_rays = 512;
  int iterations = 1000;
  int samples = 64;
  std::uint64_t seed = 0;
  double lr = 1e-4;
  int log_every = 100;  // 0 disables progress callbacks
  std::string checkpoint;
  std::vector<std::string> frozen_groups;

  void validate() const {
    require(batch_rays >= 1, "train: batch must be >= 1");
    require(iterations >= 0, "train: iterations must be >= 0");
    require(samples >= 2, "train: need at least 2 samples per ray");
    require(lr > 0.0, "train: learning rate must be positive");
  }
};

struct TrainResult {
  std::vector<double> losses;
  std::size_t cache_hits = 0;
  std::size_t cache_misses = 0;
};

using ProgressFn = std::function<void(int iteration, double loss)>;

/// Random rays across the training views, their jittered samples, and target colors.
struct RayBatch {
  std::vector<render::Ray> rays;
  std::vector<render::SampleSet> sets;
  Tensor<double> target;  // R x 3
};

inline RayBatch sample_ray_batch(const Scene& scene, int count, int samples, std::mt19937_64& rng) {
  RayBatch b;
  b.target = Tensor<double>({count, 3});
  std::uniform_int_distribution<int> pick_view(0, static_cast<int>(scene.size()) - 1);
  for (int r = 0; r < count; ++r) {
    const int v = pick_view(rng);
    const Camera& cam = scene.cameras[v];
    const int i = std::uniform_int_distribution<int>(0, cam.height - 1)(rng);
    const int j = std::uniform_int_distribution<int>(0, cam.width - 1)(rng);
    b.rays.push_back(render::generate_ray(cam, j, i, scene.near, scene.far));
    b.sets.push_back(render::stratified_samples(b.rays.back(), samples, &rng));
    for (int c = 0; c < 3; ++c) b.target.at(r, c) = scene.images[v].at(i, j, c);
  }
  return b;
}

template <class T>
std::vector<ConditioningView<T>> conditioning_views(const Scene& scene) {
  std::vector<ConditioningView<T>> out;
  for (std::size_t v = 0; v < scene.size(); ++v) out.push_back({scene.cameras[v], scene.images[v].cast<T>()});
  return out;
}

/// Loss of one ray batch recorded on `tape`. Encoder features are recorded with
/// gradients when any encoder group is trainable, otherwise read from the cache.
template <class T>
typename Tape<T>::Var batch_loss(Tape<T>& tape, Model<T>& model, const std::vector<ConditioningView<T>>& views,
                                 FeatureCache<T>& cache, const encoder::MomentKernelCache<T>& kernels,
                                 double world_scale, const RayBatch& batch) {
  std::vector<typename Tape<T>::Var> feats;
  std::vector<Camera> cams;
  const bool joint = model.encoder_trainable() && tape.recording();
  for (std::size_t v = 0; v < views.size(); ++v) {
    cams.push_back(views[v].cam);
    if (joint)
      feats.push_back(encoder::encode_op(tape, tape.constant(views[v].image), model.params, model.cfg.encoder, kernels));
    else
      feats.push_back(tape.constant(cache.get(static_cast<int>(v), views[v].image, model).data));
  }
  auto rgb = render_rays_op(tape, model, feats, cams, world_scale, batch.rays, batch.sets);
  return ops::mse_loss(tape, rgb, tape.constant(batch.target.cast<T>()));
}

/// Trains in place. Deterministic for a fixed cfg.seed.
template <class T>
TrainResult train_loop(const Scene& scene, Model<T>& model, OptimState<T>& opt, const TrainConfig& cfg,
                       const ProgressFn& progress = nullptr) {
  cfg.validate();
  require(scene.size() >= 1, "train: scene has no training images");
  scene.validate();
  for (const auto& g : cfg.frozen_groups) model.params.set_group_frozen(g, true);
  opt.lr = cfg.lr;
  if (opt.m.size() != model.params.size()) opt.init(model.params);

  const auto views = conditioning_views<T>(scene);
  const auto kernels = encoder::MomentKernelCache<T>::make(model.cfg.encoder.zernike_radius);
  FeatureCache<T> cache;
  std::mt19937_64 rng(cfg.seed);
  TrainResult res;
  res.losses.reserve(cfg.iterations);
  for (int it = 0; it < cfg.iterations; ++it) {
    const RayBatch batch = sample_ray_batch(scene, cfg.batch_rays, cfg.samples, rng);
    model.params.zero_grad();
    Tape<T> tape(true);
    auto loss = batch_loss(tape, model, views, cache, kernels, scene.world_scale, batch);
    tape.backward(loss);
    adam_step(model.params, opt);
    if (model.encoder_trainable()) ++model.encoder_version;
    const double l = static_cast<double>(tape.value(loss).data[0]);
    res.losses.push_back(l);
    if (progress && cfg.log_every > 0 && ((it + 1) % cfg.log_every == 0 || it + 1 == cfg.iterations))
      progress(it + 1, l);
  }
  res.cache_hits = cache.hits();
  res.cache_misses = cache.misses();
  return res;
}

inline void write_loss_csv(const std::string& path, const std::vector<double>& losses) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "iteration,loss\n";
  os.precision(9);
  for (std::size_t i = 0; i < losses.size(); ++i) os << i + 1 << ',' << losses[i] << '\n';
}

/// Renders every camera of `targets` conditioned on the views of `inputs` with
/// midpoint samples, and scores the renders against the target images.
template <class T>
metrics::MetricReport evaluate_views(Model<T>& model, const Scene& inputs, const Scene& targets,
                                     const std::string& scene_name, int samples,
                                     std::vector<Tensor<double>>* renders = nullptr,
                                     const std::vector<int>& view_ids = {}) {
  require(targets.size() >= 1, "eval: no evaluation views");
  const auto views = conditioning_views<T>(inputs);
  FeatureCache<T> cache;
  render::RenderConfig rc;
  rc.samples = samples;
  metrics::MetricReport report;
  for (std::size_t v = 0; v < targets.size(); ++v) {
    auto img = render_model(model, views, cache, inputs.world_scale, targets.cameras[v], inputs.near, inputs.far, rc);
    const std::string id = v < view_ids.size() ? std::to_string(view_ids[v]) : std::to_string(v);
    report.add(scene_name, id, img.rgb, targets.images[v]);
    if (renders) renders->push_back(std::move(img.rgb));
  }
  return report;
}

// ---------------------------------------------------------------------------
// MFP1: "MFP1", u32 block count, then per block: u32 name length, name bytes,
// u32 rank, u32 dims[rank], f32 data. Little-endian. Blocks are parameters
// ("param:<name>"), Adam moments ("adam.m:<name>", "adam.v:<name>"), and
// metadata ("meta:*").

namespace detail {

struct Block {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

template <class T>
Block make_block(std::string name, const Tensor<T>& t) {
  return {std::move(name), t.shape, std::vector<float>(t.data.begin(), t.data.end())};
}

inline Block scalar_block(std::string name, double v) { return {std::move(name), {1}, {static_cast<float>(v)}}; }

// Integers that may exceed float precision are split into 16-bit limbs.
inline Block u64_block(std::string name, std::uint64_t v) {
  return {std::move(name), {4},
          {static_cast<float>(v & 0xFFFF), static_cast<float>((v >> 16) & 0xFFFF),
           static_cast<float>((v >> 32) & 0xFFFF), static_cast<float>(v >> 48)}};
}
inline std::uint64_t u64_from(const Block& b) {
  require(b.data.size() == 4, "checkpoint: bad integer block " + b.name);
  std::uint64_t v = 0;
  for (int k = 3; k >= 0; --k) v = (v << 16) | static_cast<std::uint64_t>(b.data[k]);
  return v;
}

inline Block vec_block(std::string name, const std::vector<double>& xs) {
  return {std::move(name), {static_cast<int>(xs.size())}, std::vector<float>(xs.begin(), xs.end())};
}
inline Block ivec_block(std::string name, const std::vector<int>& xs) {
  return {std::move(name), {static_cast<int>(xs.size())}, std::vector<float>(xs.begin(), xs.end())};
}

inline std::vector<Block> read_blocks(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open checkpoint " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "MFP1") throw LoadError("checkpoint: bad magic in " + path);
  const std::uint32_t count = binary::get_u32(is);
  std::vector<Block> blocks;
  for (std::uint32_t b = 0; b < count; ++b) {
    Block blk;
    const std::uint32_t len = binary::get_u32(is);
    if (len > 4096) throw LoadError("checkpoint: implausible name length");
    blk.name.resize(len);
    if (!is.read(blk.name.data(), len)) throw LoadError("checkpoint: truncated name");
    const std::uint32_t rank = binary::get_u32(is);
    if (rank > 8) throw LoadError("checkpoint: implausible rank for " + blk.name);
    for (std::uint32_t r = 0; r < rank; ++r) blk.shape.push_back(static_cast<int>(binary::get_u32(is)));
    blk.data.resize(shape_numel(blk.shape));
    for (auto& x : blk.data) x = binary::get_f32(is);
    blocks.push_back(std::move(blk));
  }
  return blocks;
}

inline void write_blocks(const std::string& path, const std::vector<Block>& blocks) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path);
  os.write("MFP1", 4);
  binary::put_u32(os, static_cast<std::uint32_t>(blocks.size()));
  for (const auto& b : blocks) {
    binary::put_u32(os, static_cast<std::uint32_t>(b.name.size()));
    os.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
    binary::put_u32(os, static_cast<std::uint32_t>(b.shape.size()));
    for (int d : b.shape) binary::put_u32(os, static_cast<std::uint32_t>(d));
    for (float x : b.data) binary::put_f32(os, x);
  }
  if (!os) throw std::runtime_error("failed writing checkpoint " + path);
}

}  // namespace detail

/// Everything needed to rebuild a model: architecture, parameters, optimizer, scene scale.
struct CheckpointMeta {
  double world_scale = 1.0;
  double near = 0.0;
  double far = 1.0;
};

template <class T>
void save_checkpoint(const std::string& path, const Model<T>& model, const OptimState<T>& opt,
                     const CheckpointMeta& meta) {
  using namespace detail;
  const auto& e = model.cfg.encoder;
  const auto& f = model.cfg.field;
  std::vector<Block> blocks;
  blocks.push_back(ivec_block("meta:encoder.ints",
                              {e.use_gabor, e.gabor_orientations, e.gabor_kernel, e.use_zernike, e.zernike_layers,
                               e.zernike_radius, e.zernike_channels, e.feature_dim, static_cast<int>(e.activation),
                               e.power}));
  blocks.push_back(vec_block("meta:encoder.wavelengths", e.gabor_wavelengths));
  blocks.push_back(ivec_block("meta:encoder.trunk", e.trunk_widths));
  blocks.push_back(ivec_block("meta:field.ints", {f.num_freqs, f.include_raw, f.encode_dir, f.width, f.f1_blocks,
                                                  f.f2_blocks, f.feature_dim, static_cast<int>(f.activation), f.power}));
  blocks.push_back(vec_block("meta:scene", {meta.world_scale, meta.near, meta.far}));
  blocks.push_back(u64_block("meta:adam.step", static_cast<std::uint64_t>(opt.step)));
  blocks.push_back(u64_block("meta:encoder.version", model.encoder_version));
  std::size_t k = 0;
  for (const auto& p : model.params) {
    blocks.push_back(make_block("param:" + p.name, p.value));
    blocks.push_back(scalar_block("frozen:" + p.name, p.frozen ? 1.0 : 0.0));
    if (k < opt.m.size()) {
      blocks.push_back(make_block("adam.m:" + p.name, opt.m[k]));
      blocks.push_back(make_block("adam.v:" + p.name, opt.v[k]));
    }
    ++k;
  }
  detail::write_blocks(path, blocks);
}

template <class T>
struct LoadedCheckpoint {
  Model<T> model;
  OptimState<T> opt;
  CheckpointMeta meta;
};

template <class T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  using namespace detail;
  const auto blocks = read_blocks(path);
  std::map<std::string, const Block*> by_name;
  for (const auto& b : blocks) by_name[b.name] = &b;
  auto need = [&](const std::string& n) -> const Block& {
    auto it = by_name.find(n);
    if (it == by_name.end()) throw LoadError("checkpoint: missing block " + n);
    return *it->second;
  };
  auto ints = [&](const std::string& n) {
    std::vector<int> out;
    for (float x : need(n).data) out.push_back(static_cast<int>(x));
    return out;
  };
  ModelConfig cfg;
  const auto ei = ints("meta:encoder.ints");
  const auto fi = ints("meta:field.ints");
  if (ei.size() != 10 || fi.size() != 9) throw LoadError("checkpoint: malformed config blocks");
  auto& e = cfg.encoder;
  e.use_gabor = ei[0];
  e.gabor_orientations = ei[1];
  e.gabor_kernel = ei[2];
  e.use_zernike = ei[3];
  e.zernike_layers = ei[4];
  e.zernike_radius = ei[5];
  e.zernike_channels = ei[6];
  e.feature_dim = ei[7];
  e.activation = static_cast<encoder::Activation>(ei[8]);
  e.power = ei[9];
  e.gabor_wavelengths.assign(need("meta:encoder.wavelengths").data.begin(), need("meta:encoder.wavelengths").data.end());
  e.trunk_widths = ints("meta:encoder.trunk");
  auto& f = cfg.field;
  f.num_freqs = fi[0];
  f.include_raw = fi[1];
  f.encode_dir = fi[2];
  f.width = fi[3];
  f.f1_blocks = fi[4];
  f.f2_blocks = fi[5];
  f.feature_dim = fi[6];
  f.activation = static_cast<field::Activation>(fi[7]);
  f.power = fi[8];

  LoadedCheckpoint<T> out;
  out.model = Model<T>::create(cfg, 0);
  const auto& sc = need("meta:scene").data;
  if (sc.size() != 3) throw LoadError("checkpoint: malformed meta:scene");
  out.meta = {sc[0], sc[1], sc[2]};
  out.model.encoder_version = u64_from(need("meta:encoder.version"));
  out.opt.init(out.model.params);
  out.opt.step = static_cast<std::int64_t>(u64_from(need("meta:adam.step")));
  std::size_t k = 0;
  for (auto& p : out.model.params) {
    auto fill = [&](const std::string& n, Tensor<T>& dst) {
      const Block& b = need(n);
      if (b.shape != dst.shape)
        throw LoadError("checkpoint: " + n + " has shape " + shape_str(b.shape) + ", expected " + shape_str(dst.shape));
      for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] = static_cast<T>(b.data[i]);
    };
    fill("param:" + p.name, p.value);
    p.frozen = need("frozen:" + p.name).data.at(0) != 0.0f;
    if (by_name.count("adam.m:" + p.name)) {
      fill("adam.m:" + p.name, out.opt.m[k]);
      fill("adam.v:" + p.name, out.opt.v[k]);
    }
    ++k;
  }
  return out;
}

}  // namespace moments_nerf
