#pragma once

// Pixel-aligned radiance field. A per-view network f1 consumes the encoded
// view-space position, the view-space direction, and the sampled image
// feature (added as a residual before every block); the per-view outputs
// are mean pooled and a second network f2 produces density and color.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "autodiff.hpp"
#include "errors.hpp"
#include "ops.hpp"
#include "tensor.hpp"

namespace moments_nerf::field {

template <class T>
using Var = typename Tape<T>::Var;

/// (sin(2^0 p), cos(2^0 p), ..., sin(2^(L-1) p), cos(2^(L-1) p)) per scalar, raw values appended.
inline std::vector<double> positional_encoding(std::span<const double> p, int num_freqs, bool include_raw = true) {
  Tape<double> tape(false);
  auto x = tape.constant(Tensor<double>({1, static_cast<int>(p.size())}, std::vector<double>(p.begin(), p.end())));
  const auto& e = tape.value(ops::positional_encoding(tape, x, num_freqs, include_raw)).data;
  return {e.begin(), e.end()};
}

/// exp(-(t / spread)^(2p)).
inline double super_gaussian(double t, double spread, int power) {
  require(spread > 0.0, "super_gaussian: spread must be positive");
  require(power >= 1, "super_gaussian: power must be >= 1");
  return ops::detail::sg_value(t, spread, power);
}

enum class Activation { SuperGaussian, Identity };

struct FieldConfig {
  int num_freqs = 6;
  bool include_raw = true;
  bool encode_dir = false;
  int width = 128;
  int f1_blocks = 3;
  int f2_blocks = 2;
  int feature_dim = 64;
  Activation activation = Activation::SuperGaussian;
  double spread = 1.0;
  int power = 4;
  double init_gain = 1.0;

  int input_width() const {
    const int pe = 3 * 2 * num_freqs + (include_raw ? 3 : 0);
    return pe + (encode_dir ? pe : 3);
  }
};

namespace detail {
template <class T>
void add_linear(ParamSet<T>& params, const std::string& name, int out, int in, double gain, std::mt19937_64& rng) {
  params.add(name + ".weight", "field", random_normal<T>(rng, out, in, gain / std::sqrt(static_cast<double>(in))));
  params.add(name + ".bias", "field", Tensor<T>({out}));
}
}  // namespace detail

/// Register field parameters under "field.*".
template <class T>
void init_field(ParamSet<T>& params, const FieldConfig& cfg, std::mt19937_64& rng) {
  require(cfg.num_freqs >= 1 && cfg.width >= 1 && cfg.f1_blocks >= 1 && cfg.f2_blocks >= 0,
          "FieldConfig: invalid network shape");
  const int w = cfg.width;
  detail::add_linear(params, "field.in", w, cfg.input_width(), cfg.init_gain, rng);
  auto block = [&](const std::string& base) {
    // Second layer of each residual block starts small so blocks begin near identity.
    detail::add_linear(params, base + ".fc0", w, w, cfg.init_gain, rng);
    detail::add_linear(params, base + ".fc1", w, w, 0.1 * cfg.init_gain, rng);
    params.add(base + ".spread0", "field", Tensor<T>({1}, static_cast<T>(cfg.spread)));
    params.add(base + ".spread1", "field", Tensor<T>({1}, static_cast<T>(cfg.spread)));
  };
  for (int b = 0; b < cfg.f1_blocks; ++b) {
    detail::add_linear(params, "field.f1." + std::to_string(b) + ".feat", w, cfg.feature_dim, cfg.init_gain, rng);
    block("field.f1." + std::to_string(b));
  }
  for (int b = 0; b < cfg.f2_blocks; ++b) block("field.f2." + std::to_string(b));
  params.add("field.out.spread", "field", Tensor<T>({1}, static_cast<T>(cfg.spread)));
  detail::add_linear(params, "field.out", 4, w, cfg.init_gain, rng);
}

template <class T>
Var<T> activate(Tape<T>& tape, Var<T> x, Parameter<T>& spread, const FieldConfig& cfg) {
  if (cfg.activation == Activation::Identity) return x;
  return ops::super_gaussian(tape, x, tape.param(spread), cfg.power);
}

template <class T>
Var<T> linear(Tape<T>& tape, Var<T> x, ParamSet<T>& params, const std::string& name) {
  return ops::linear(tape, x, tape.param(params[name + ".weight"]), tape.param(params[name + ".bias"]));
}

template <class T>
Var<T> res_block(Tape<T>& tape, Var<T> h, ParamSet<T>& params, const std::string& base, const FieldConfig& cfg) {
  Var<T> a = activate(tape, h, params[base + ".spread0"], cfg);
  a = linear(tape, a, params, base + ".fc0");
  a = activate(tape, a, params[base + ".spread1"], cfg);
  a = linear(tape, a, params, base + ".fc1");
  return ops::add(tape, h, a);
}

/// Batched field over P points seen from V views. Rows are view-major
/// (row v * P + p). x_view, d_view: [V*P x 3] constants; features: [V*P x D].
template <class T>
std::pair<Var<T>, Var<T>> field_forward(Tape<T>& tape, ParamSet<T>& params, const FieldConfig& cfg, Var<T> x_view,
                                        Var<T> d_view, Var<T> features, int views) {
  require(views >= 1, "field: at least one view is required");
  const auto& fv = tape.value(features);
  require(fv.rank() == 2 && fv.dim(1) == cfg.feature_dim,
          "field: feature width " + shape_str(fv.shape) + " does not match config " + std::to_string(cfg.feature_dim));
  Var<T> px = ops::positional_encoding(tape, x_view, cfg.num_freqs, cfg.include_raw);
  Var<T> pd = cfg.encode_dir ? ops::positional_encoding(tape, d_view, cfg.num_freqs, cfg.include_raw) : d_view;
  Var<T> h = linear(tape, ops::concat_last(tape, std::vector<Var<T>>{px, pd}), params, "field.in");
  for (int b = 0; b < cfg.f1_blocks; ++b) {
    const std::string base = "field.f1." + std::to_string(b);
    h = ops::add(tape, h, linear(tape, features, params, base + ".feat"));
    h = res_block(tape, h, params, base, cfg);
  }
  h = ops::mean_groups(tape, h, views);
  for (int b = 0; b < cfg.f2_blocks; ++b) h = res_block(tape, h, params, "field.f2." + std::to_string(b), cfg);
  h = activate(tape, h, params["field.out.spread"], cfg);
  Var<T> out = linear(tape, h, params, "field.out");
  Var<T> sigma = ops::softplus(tape, ops::slice_cols(tape, out, 0, 1));
  Var<T> rgb = ops::sigmoid(tape, ops::slice_cols(tape, out, 1, 3));
  return {rgb, sigma};
}

struct ViewSample {
  int view_index = 0;
  Eigen::Vector3d x_view;  // normalized view-frame position
  Eigen::Vector3d d_view;  // unit view-frame direction
  std::vector<double> feature;
};

struct FieldQuery {
  Eigen::Vector3d x;  // normalized world position
  Eigen::Vector3d d;  // unit direction
  std::vector<ViewSample> per_view;
};

struct FieldValue {
  Eigen::Vector3d color;
  double sigma = 0.0;
};

/// Single-point query. Views are pooled in ascending view_index order, so
/// the result does not depend on the order of q.per_view.
template <class T>
FieldValue field_query(const FieldQuery& q, ParamSet<T>& params, const FieldConfig& cfg) {
  require(!q.per_view.empty(), "field_query: empty view list");
  require(std::abs(q.d.norm() - 1.0) < 1e-6, "field_query: direction must be unit length");
  std::vector<const ViewSample*> order;
  for (const auto& v : q.per_view) order.push_back(&v);
  std::stable_sort(order.begin(), order.end(),
                   [](const ViewSample* a, const ViewSample* b) { return a->view_index < b->view_index; });
  const int views = static_cast<int>(order.size());
  Tensor<T> xv({views, 3}), dv({views, 3}), fv({views, cfg.feature_dim});
  for (int v = 0; v < views; ++v) {
    require(static_cast<int>(order[v]->feature.size()) == cfg.feature_dim, "field_query: feature width mismatch");
    for (int k = 0; k < 3; ++k) {
      xv.at(v, k) = static_cast<T>(order[v]->x_view[k]);
      dv.at(v, k) = static_cast<T>(order[v]->d_view[k]);
    }
    for (int c = 0; c < cfg.feature_dim; ++c) fv.at(v, c) = static_cast<T>(order[v]->feature[c]);
  }
  Tape<T> tape(false);
  auto [rgb, sigma] = field_forward(tape, params, cfg, tape.constant(std::move(xv)), tape.constant(std::move(dv)),
                                    tape.constant(std::move(fv)), views);
  const auto& c = tape.value(rgb);
  return FieldValue{Eigen::Vector3d(c.data[0], c.data[1], c.data[2]), static_cast<double>(tape.value(sigma).data[0])};
}

}  // namespace moments_nerf::field
