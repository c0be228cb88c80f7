#pragma once

// Central finite-difference checks of the tape gradients, in double precision.
//
// Every check reduces the op output to a scalar with a fixed random weight
// vector, so a single backward pass gives the full gradient of that scalar.

#include <algorithm>
#include <cmath>
#include <functional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "encoder.hpp"
#include "field.hpp"
#include "gabor.hpp"
#include "model.hpp"
#include "ops.hpp"
#include "renderer.hpp"
#include "tensor.hpp"
#include "train.hpp"

namespace moments_nerf::gradcheck {

using TapeD = Tape<double>;
using VarD = TapeD::Var;

constexpr double kTolerance = 1e-4;
constexpr double kLinearTolerance = 1e-7;

struct CheckResult {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = kTolerance;
  int entries = 0;

  bool passed() const { return max_rel_error < tolerance; }
};

inline std::ostream& operator<<(std::ostream& os, const CheckResult& r) {
  os << (r.passed() ? "ok   " : "FAIL ") << r.name << "  max_rel=" << r.max_rel_error << "  tol=" << r.tolerance
     << "  entries=" << r.entries;
  return os;
}

/// |a - n| / max(|a|, |n|, floor). The floor keeps round-off on near-zero
/// gradients from reading as a large relative error.
inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// sum_i w_i x_i with constant weights.
inline VarD weighted_sum(TapeD& tape, VarD x, const std::vector<double>& w) {
  const auto& xv = tape.value(x);
  require(xv.size() == w.size(), "weighted_sum: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * xv.data[i];
  return tape.op(Tensor<double>({1}, {s}), {x}, [x, w](TapeD& t, int self) {
    const double g = t.grad_of(self).data[0];
    auto& gx = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < w.size(); ++i) gx.data[i] += g * w[i];
  });
}

/// Builds the op under test from leaf vars and returns its (non-scalar) output.
using Builder = std::function<VarD(TapeD&, const std::vector<VarD>&)>;

struct CheckOptions {
  double tolerance = kTolerance;
  double step = 1e-4;          // h = step * max(1, |x|)
  int max_entries = 48;        // per input; larger inputs are subsampled
  std::uint64_t seed = 12345;  // weights and entry subsampling
};

/// Checks d(w . f(inputs))/d(inputs[k]) for every k in `wrt`.
inline CheckResult check_op(const std::string& name, std::vector<Tensor<double>> inputs, const std::vector<int>& wrt,
                            const Builder& build, const CheckOptions& opt = {}) {
  std::mt19937_64 rng(opt.seed);
  std::vector<double> w;
  auto eval = [&](const std::vector<Tensor<double>>& in, std::vector<Tensor<double>>* grads) {
    TapeD tape(grads != nullptr);
    std::vector<VarD> leaves;
    for (std::size_t k = 0; k < in.size(); ++k) {
      const bool diff = std::find(wrt.begin(), wrt.end(), static_cast<int>(k)) != wrt.end();
      leaves.push_back(diff ? tape.leaf(in[k]) : tape.constant(in[k]));
    }
    VarD out = build(tape, leaves);
    if (w.empty()) {
      std::normal_distribution<double> nd;
      w.resize(tape.value(out).size());
      for (auto& v : w) v = nd(rng);
    }
    VarD s = weighted_sum(tape, out, w);
    if (grads) {
      tape.backward(s);
      grads->clear();
      for (auto v : leaves) grads->push_back(tape.grad(v));
    }
    return tape.value(s).data[0];
  };

  std::vector<Tensor<double>> grads;
  eval(inputs, &grads);
  CheckResult res{name, 0.0, opt.tolerance, 0};
  for (int k : wrt) {
    auto& x = inputs[k];
    std::vector<std::size_t> idx(x.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (static_cast<int>(idx.size()) > opt.max_entries) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opt.max_entries);
    }
    for (std::size_t i : idx) {
      const double x0 = x.data[i];
      const double h = opt.step * std::max(1.0, std::abs(x0));
      x.data[i] = x0 + h;
      const double fp = eval(inputs, nullptr);
      x.data[i] = x0 - h;
      const double fm = eval(inputs, nullptr);
      x.data[i] = x0;
      const double numeric = (fp - fm) / (2.0 * h);
      res.max_rel_error = std::max(res.max_rel_error, rel_error(grads[k].data[i], numeric));
      ++res.entries;
    }
  }
  return res;
}

inline Tensor<double> random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data) v = u(rng);
  return t;
}

// ---------------------------------------------------------------------------
// Primitive checks.

inline std::vector<CheckResult> primitive_checks(std::uint64_t seed = 7) {
  std::mt19937_64 rng(seed);
  std::vector<CheckResult> out;
  CheckOptions lin;
  lin.tolerance = kLinearTolerance;

  out.push_back(check_op("linear", {random_tensor(rng, {5, 4}), random_tensor(rng, {3, 4}), random_tensor(rng, {3})},
                         {0, 1, 2}, [](TapeD& t, const auto& v) { return ops::linear(t, v[0], v[1], v[2]); }, lin));
  out.push_back(check_op("add", {random_tensor(rng, {4, 3}), random_tensor(rng, {4, 3})}, {0, 1},
                         [](TapeD& t, const auto& v) { return ops::add(t, v[0], v[1]); }, lin));
  out.push_back(check_op("concat_last", {random_tensor(rng, {4, 2}), random_tensor(rng, {4, 3})}, {0, 1},
                         [](TapeD& t, const auto& v) { return ops::concat_last(t, std::vector<VarD>{v[0], v[1]}); },
                         lin));
  out.push_back(check_op("mean_groups", {random_tensor(rng, {6, 3})}, {0},
                         [](TapeD& t, const auto& v) { return ops::mean_groups(t, v[0], 3); }, lin));
  out.push_back(check_op("slice_cols", {random_tensor(rng, {4, 5})}, {0},
                         [](TapeD& t, const auto& v) { return ops::slice_cols(t, v[0], 1, 3); }, lin));

  // Keep |t/s| away from the flat tails so the derivative is well conditioned.
  out.push_back(check_op("super_gaussian", {random_tensor(rng, {6, 5}, -1.2, 1.2), Tensor<double>({1}, {0.9})},
                         {0, 1}, [](TapeD& t, const auto& v) { return ops::super_gaussian(t, v[0], v[1], 4); }));
  out.push_back(check_op("super_gaussian_p1", {random_tensor(rng, {6, 5}, -1.5, 1.5), Tensor<double>({1}, {1.3})},
                         {0, 1}, [](TapeD& t, const auto& v) { return ops::super_gaussian(t, v[0], v[1], 1); }));
  out.push_back(check_op("logistic", {random_tensor(rng, {5, 3}, -4, 4)}, {0},
                         [](TapeD& t, const auto& v) { return ops::sigmoid(t, v[0]); }));
  out.push_back(check_op("softplus", {random_tensor(rng, {5, 3}, -4, 4)}, {0},
                         [](TapeD& t, const auto& v) { return ops::softplus(t, v[0]); }));
  {
    // The input length scale is the period of the top frequency 2^5.
    CheckOptions pe;
    pe.step = 1e-4 / 32.0;
    out.push_back(check_op("positional_encoding", {random_tensor(rng, {4, 3}, -1.5, 1.5)}, {0},
                           [](TapeD& t, const auto& v) { return ops::positional_encoding(t, v[0], 6, true); }, pe));
  }
  out.push_back(check_op("mse_loss", {random_tensor(rng, {4, 3}), random_tensor(rng, {4, 3})}, {0, 1},
                         [](TapeD& t, const auto& v) { return ops::mse_loss(t, v[0], v[1]); }));

  {
    const int rays = 3, samples = 8;
    Tensor<double> delta({rays, samples});
    std::uniform_real_distribution<double> u(0.05, 0.2);
    for (auto& d : delta.data) d = u(rng);
    out.push_back(check_op("composite",
                           {random_tensor(rng, {rays * samples, 3}, 0, 1), random_tensor(rng, {rays * samples, 1}, 0, 4)},
                           {0, 1}, [delta](TapeD& t, const auto& v) { return ops::composite(t, v[0], v[1], delta); }));
  }

  {
    const auto kern = encoder::MomentKernelCache<double>::make(2);
    auto z = [kern](TapeD& t, const auto& v) {
      return encoder::zernike_conv_op(t, v[0], v[1], v[2], kern.kernels, kern.ksize);
    };
    const int cin = 2, cout = 3;
    out.push_back(check_op("zernike_conv",
                           {random_tensor(rng, {7, 6, cin}), random_tensor(rng, {cout, cin * zernike::kNumBasis}),
                            random_tensor(rng, {cout})},
                           {0, 1, 2}, z, lin));
  }
  out.push_back(check_op("conv2d",
                         {random_tensor(rng, {7, 6, 2}), random_tensor(rng, {3, 2 * 9}), random_tensor(rng, {3})},
                         {0, 1, 2}, [](TapeD& t, const auto& v) { return encoder::conv2d_op(t, v[0], v[1], v[2], 3, 2); },
                         lin));
  out.push_back(check_op("upsample", {random_tensor(rng, {3, 4, 2})}, {0},
                         [](TapeD& t, const auto& v) { return encoder::upsample_op(t, v[0], 7, 8); }, lin));
  {
    std::vector<encoder::BilinearTap> taps;
    std::uniform_real_distribution<double> u(-0.5, 5.5);
    for (int i = 0; i < 6; ++i) taps.push_back(encoder::bilinear_tap(5, 5, u(rng), u(rng)));
    out.push_back(check_op("sample_bilinear", {random_tensor(rng, {5, 5, 3})}, {0},
                           [taps](TapeD& t, const auto& v) { return encoder::sample_bilinear_op(t, v[0], taps); }, lin));
  }
  return out;
}

/// One check per Gabor parameter (lambda, theta, psi, sigma, gamma, k1..k5),
/// plus the image input.
inline std::vector<CheckResult> gabor_checks(std::uint64_t seed = 11) {
  std::mt19937_64 rng(seed);
  static const char* names[gabor::kParamsPerFilter] = {"lambda", "theta", "psi", "sigma", "gamma",
                                                       "k1",     "k2",    "k3",  "k4",    "k5"};
  // Off-axis orientations keep x' and y' away from zero except at the kernel center.
  Tensor<double> params({2, gabor::kParamsPerFilter},
                        {4.0, 0.37, 0.2, 2.5, 0.6, 1.1, 1.2, 2.1, 0.3, 1.05,
                         6.0, 1.21, -0.4, 3.0, 0.8, 0.9, 1.0, 2.0, 0.1, 0.95});
  const Tensor<double> image = random_tensor(rng, {9, 10, 3}, 0, 1);
  const int ksize = 5;
  auto build = [ksize](TapeD& t, const auto& v) { return gabor::gabor_layer_op(t, v[0], v[1], ksize); };

  std::vector<CheckResult> out;
  for (int q = 0; q < gabor::kParamsPerFilter; ++q) {
    // Perturb only column q of the parameter block.
    auto build_q = [q, ksize, params](TapeD& t, const std::vector<VarD>& v) {
      const auto& col = t.value(v[1]);
      Tensor<double> full = params;
      for (int f = 0; f < full.dim(0); ++f) full.at(f, q) = col.data[f];
      auto p = t.op(std::move(full), {v[1]}, [q, src = v[1]](TapeD& tt, int self) {
        const auto& g = tt.grad_of(self);
        auto& gs = tt.grad_buffer(src.id);
        for (int f = 0; f < g.dim(0); ++f) gs.data[f] += g.at(f, q);
      });
      return gabor::gabor_layer_op(t, v[0], p, ksize);
    };
    Tensor<double> col({params.dim(0)});
    for (int f = 0; f < params.dim(0); ++f) col.data[f] = params.at(f, q);
    out.push_back(check_op(std::string("gabor.") + names[q], {image, col}, {1}, build_q));
  }
  CheckOptions lin;
  lin.tolerance = kLinearTolerance;
  out.push_back(check_op("gabor.image", {image, params}, {0}, build, lin));
  return out;
}

// ---------------------------------------------------------------------------
// End to end: tiny encoder + field + compositing + ray loss.

inline ModelConfig tiny_model_config() {
  ModelConfig mc;
  mc.encoder.gabor_orientations = 2;
  mc.encoder.gabor_wavelengths = {4.0};
  mc.encoder.gabor_kernel = 5;
  mc.encoder.zernike_layers = 2;
  mc.encoder.zernike_radius = 2;
  mc.encoder.zernike_channels = 3;
  mc.encoder.trunk_widths = {4, 4};
  mc.encoder.feature_dim = 4;
  mc.encoder.power = 1;
  mc.field.width = 8;
  mc.field.num_freqs = 2;
  mc.field.f1_blocks = 1;
  mc.field.f2_blocks = 1;
  mc.field.power = 1;
  return mc.sync();
}

/// Gradient of the ray MSE with respect to every parameter tensor of a tiny
/// model conditioned on two 12x12 views. Parameters are subsampled.
inline CheckResult end_to_end_check(std::uint64_t seed = 3, int entries_per_param = 3) {
  SynthSpec spec;
  spec.n_views = 2;
  spec.size = 12;
  spec.samples = 64;
  spec.seed = seed;
  const auto syn = synth_scene(spec);
  const Scene& scene = syn.scene;
  Model<double> model = Model<double>::create(tiny_model_config(), seed);
  std::mt19937_64 rng(seed);
  const RayBatch batch = sample_ray_batch(scene, 4, 6, rng);
  const auto views = conditioning_views<double>(scene);
  const auto kernels = encoder::MomentKernelCache<double>::make(model.cfg.encoder.zernike_radius);

  auto loss = [&](bool grad) {
    TapeD tape(grad);
    FeatureCache<double> cache;
    auto l = batch_loss(tape, model, views, cache, kernels, scene.world_scale, batch);
    if (grad) {
      model.params.zero_grad();
      tape.backward(l);
    }
    return tape.value(l).data[0];
  };
  loss(true);

  CheckResult res{"end_to_end_ray_loss", 0.0, kTolerance, 0};
  for (auto& p : model.params) {
    std::vector<std::size_t> idx(p.value.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min<std::size_t>(idx.size(), entries_per_param));
    for (std::size_t i : idx) {
      const double x0 = p.value.data[i];
      const double h = 1e-4 * std::max(1.0, std::abs(x0));
      p.value.data[i] = x0 + h;
      const double fp = loss(false);
      p.value.data[i] = x0 - h;
      const double fm = loss(false);
      p.value.data[i] = x0;
      res.max_rel_error = std::max(res.max_rel_error, rel_error(p.grad.data[i], (fp - fm) / (2 * h)));
      ++res.entries;
    }
  }
  return res;
}

/// The whole suite.
inline std::vector<CheckResult> run_all(std::uint64_t seed = 7) {
  auto out = primitive_checks(seed);
  for (auto& r : gabor_checks(seed + 4)) out.push_back(std::move(r));
  out.push_back(end_to_end_check(seed));
  return out;
}

}  // namespace moments_nerf::gradcheck
