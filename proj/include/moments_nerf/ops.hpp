#pragma once

// Differentiable tensor ops recorded on a Tape. Each op computes its forward
// value eagerly and registers a closure for the vector-Jacobian product.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "autodiff.hpp"
#include "errors.hpp"
#include "tensor.hpp"

namespace moments_nerf::ops {

template <class T>
using Var = typename Tape<T>::Var;

namespace detail {

template <class T>
void accumulate(Tape<T>& tape, int parent, const Tensor<T>& g) {
  if (!tape.needs_grad(parent)) return;
  auto& dst = tape.grad_buffer(parent);
  for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += g.data[i];
}

template <class T>
using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;

// Subnormal activations make every later GEMM that reads them far slower.
template <class T>
void flush_subnormal(Buffer<T>& v) {
  const T tiny = std::numeric_limits<T>::min();
  for (auto& x : v) x = x < tiny ? T(0) : x;
}

template <class F>
void for_blocks(Eigen::Index n, F&& f, Eigen::Index block = 2048) {
  for (Eigen::Index i = 0; i < n; i += block) f(i, std::min(block, n - i));
}

// (u^2)^p elementwise.
template <class T>
Arr<T> even_power(const Arr<T>& u, int p) {
  const Arr<T> u2 = u.square();
  Arr<T> r = Arr<T>::Ones(u.size());
  for (int k = 0; k < p; ++k) r *= u2;
  return r;
}

template <class T>
T sg_value(T t, T sbar, int p) {
  const T u2 = (t / sbar) * (t / sbar);
  T u2p = T(1);
  for (int k = 0; k < p; ++k) u2p *= u2;
  const T y = std::exp(-u2p);
  return y < std::numeric_limits<T>::min() ? T(0) : y;
}

}  // namespace detail

/// Elementwise a + b (same shape).
template <class T>
Var<T> add(Tape<T>& tape, Var<T> a, Var<T> b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  require(av.shape == bv.shape, "add: shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
  Tensor<T> out(av.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = av.data[i] + bv.data[i];
  return tape.op(std::move(out), {a, b}, [a, b](Tape<T>& t, int self) {
    const Tensor<T> g = t.grad_of(self);
    detail::accumulate(t, a.id, g);
    detail::accumulate(t, b.id, g);
  });
}

/// Elementwise s * a.
template <class T>
Var<T> scale(Tape<T>& tape, Var<T> a, T s) {
  Tensor<T> out = tape.value(a);
  for (auto& v : out.data) v *= s;
  return tape.op(std::move(out), {a}, [a, s](Tape<T>& t, int self) {
    Tensor<T> g = t.grad_of(self);
    for (auto& v : g.data) v *= s;
    detail::accumulate(t, a.id, g);
  });
}

/// x [N x in] times weight [out x in]^T plus bias [out].
template <class T>
Var<T> linear(Tape<T>& tape, Var<T> x, Var<T> weight, Var<T> bias) {
  const auto& xv = tape.value(x);
  const auto& wv = tape.value(weight);
  const auto& bv = tape.value(bias);
  require(xv.rank() == 2 && wv.rank() == 2 && bv.rank() == 1, "linear: expected x[N,in], W[out,in], b[out]");
  require(xv.dim(1) == wv.dim(1), "linear: input width " + std::to_string(xv.dim(1)) +
                                      " does not match weight " + shape_str(wv.shape));
  require(bv.dim(0) == wv.dim(0), "linear: bias width mismatch");
  const int n = xv.dim(0);
  const int out_w = wv.dim(0);
  Tensor<T> out({n, out_w});
  auto om = as_matrix(out);
  om.noalias() = as_matrix(xv) * as_matrix(wv).transpose();
  om.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bv.data.data(), out_w);
  return tape.op(std::move(out), {x, weight, bias}, [x, weight, bias](Tape<T>& t, int self) {
    const auto g = as_matrix(t.grad_of(self));
    if (t.needs_grad(x.id)) as_matrix(t.grad_buffer(x.id)).noalias() += g * as_matrix(t.value_of(weight.id));
    if (t.needs_grad(weight.id))
      as_matrix(t.grad_buffer(weight.id)).noalias() += g.transpose() * as_matrix(t.value_of(x.id));
    if (t.needs_grad(bias.id)) {
      auto& gb = t.grad_buffer(bias.id);
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> b(gb.data.data(), gb.size());
      for (Eigen::Index r = 0; r < g.rows(); ++r) b += g.row(r);
    }
  });
}

/// exp(-(t / sbar)^(2p)) elementwise; sbar is a learnable scalar tensor of shape [1].
template <class T>
Var<T> super_gaussian(Tape<T>& tape, Var<T> x, Var<T> sbar, int p) {
  const auto& xv = tape.value(x);
  const T s = tape.value(sbar).data.at(0);
  require(s > T(0), "super_gaussian: spread must be positive");
  const Eigen::Index n = static_cast<Eigen::Index>(xv.size());
  Tensor<T> out(xv.shape);
  // Cache-sized blocks keep the power temporaries out of main memory.
  detail::for_blocks(n, [&](Eigen::Index i, Eigen::Index len) {
    Eigen::Map<detail::Arr<T>>(out.data.data() + i, len) =
        (-detail::even_power<T>(Eigen::Map<const detail::Arr<T>>(xv.data.data() + i, len) / s, p)).exp();
  });
  detail::flush_subnormal(out.data);
  return tape.op(std::move(out), {x, sbar}, [x, sbar, p, n](Tape<T>& t, int self) {
    const T s = t.value_of(sbar.id).data[0];
    const bool gx = t.needs_grad(x.id);
    T gs = 0;
    detail::for_blocks(n, [&](Eigen::Index i, Eigen::Index len) {
      const detail::Arr<T> u = Eigen::Map<const detail::Arr<T>>(t.value_of(x.id).data.data() + i, len) / s;
      // dy/dt = -2p u^(2p-1) y / s ; dy/ds = 2p u^(2p) y / s
      const detail::Arr<T> common = (T(2 * p) / s) * detail::even_power<T>(u, p - 1) *
                                    Eigen::Map<const detail::Arr<T>>(t.value_of(self).data.data() + i, len) *
                                    Eigen::Map<const detail::Arr<T>>(t.grad_of(self).data.data() + i, len);
      if (gx) Eigen::Map<detail::Arr<T>>(t.grad_buffer(x.id).data.data() + i, len) -= common * u;
      gs += (common * u.square()).sum();
    });
    if (t.needs_grad(sbar.id)) t.grad_buffer(sbar.id).data[0] += gs;
  });
}

template <class T>
Var<T> sigmoid(Tape<T>& tape, Var<T> x) {
  const auto& xv = tape.value(x);
  Tensor<T> out(xv.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = T(1) / (T(1) + std::exp(-xv.data[i]));
  return tape.op(std::move(out), {x}, [x](Tape<T>& t, int self) {
    const auto& g = t.grad_of(self);
    const auto& y = t.value_of(self);
    auto& gx = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < y.size(); ++i) gx.data[i] += g.data[i] * y.data[i] * (T(1) - y.data[i]);
  });
}

template <class T>
Var<T> softplus(Tape<T>& tape, Var<T> x) {
  const auto& xv = tape.value(x);
  Tensor<T> out(xv.shape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = xv.data[i];
    out.data[i] = v > T(20) ? v : std::log1p(std::exp(v));
  }
  return tape.op(std::move(out), {x}, [x](Tape<T>& t, int self) {
    const auto& g = t.grad_of(self);
    const auto& xv = t.value_of(x.id);
    auto& gx = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < xv.size(); ++i) gx.data[i] += g.data[i] / (T(1) + std::exp(-xv.data[i]));
  });
}

/// Per scalar p: (sin(2^0 p), cos(2^0 p), ..., sin(2^(L-1) p), cos(2^(L-1) p)), then
/// the raw inputs appended when include_raw. Input [N x k], output [N x k(2L + raw)].
template <class T>
Var<T> positional_encoding(Tape<T>& tape, Var<T> x, int num_freqs, bool include_raw) {
  require(num_freqs >= 1, "positional_encoding: need at least one frequency");
  const auto& xv = tape.value(x);
  require(xv.rank() == 2, "positional_encoding: expected [N, k]");
  const int n = xv.dim(0);
  const int k = xv.dim(1);
  const int width = k * 2 * num_freqs + (include_raw ? k : 0);
  Tensor<T> out({n, width});
  for (int r = 0; r < n; ++r) {
    int c = 0;
    for (int j = 0; j < k; ++j) {
      const T p = xv.at(r, j);
      T f = T(1);
      for (int l = 0; l < num_freqs; ++l, f *= T(2)) {
        out.at(r, c++) = std::sin(f * p);
        out.at(r, c++) = std::cos(f * p);
      }
    }
    if (include_raw)
      for (int j = 0; j < k; ++j) out.at(r, c++) = xv.at(r, j);
  }
  return tape.op(std::move(out), {x}, [x, num_freqs, include_raw](Tape<T>& t, int self) {
    const auto& g = t.grad_of(self);
    const auto& y = t.value_of(self);
    auto& gx = t.grad_buffer(x.id);
    const int n = gx.dim(0);
    const int k = gx.dim(1);
    for (int r = 0; r < n; ++r) {
      int c = 0;
      for (int j = 0; j < k; ++j) {
        T acc = T(0);
        T f = T(1);
        for (int l = 0; l < num_freqs; ++l, f *= T(2), c += 2) {
          // d sin(fp) = f cos(fp); d cos(fp) = -f sin(fp)
          acc += g.at(r, c) * f * y.at(r, c + 1) - g.at(r, c + 1) * f * y.at(r, c);
        }
        gx.at(r, j) += acc;
      }
      if (include_raw)
        for (int j = 0; j < k; ++j) gx.at(r, j) += g.at(r, c++);
    }
  });
}

/// Concatenate along the last dimension; leading dimensions must agree.
template <class T>
Var<T> concat_last(Tape<T>& tape, const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "concat_last: no inputs");
  Shape lead = tape.value(parts[0]).shape;
  lead.pop_back();
  int total = 0;
  std::vector<int> widths;
  for (auto p : parts) {
    Shape s = tape.value(p).shape;
    const int w = s.back();
    s.pop_back();
    require(s == lead, "concat_last: leading shapes differ");
    widths.push_back(w);
    total += w;
  }
  Shape out_shape = lead;
  out_shape.push_back(total);
  Tensor<T> out(out_shape);
  const std::size_t rows = shape_numel(lead);
  int off = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto& v = tape.value(parts[pi]);
    const int w = widths[pi];
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.data.begin() + r * w, w, out.data.begin() + r * total + off);
    off += w;
  }
  return tape.op(std::move(out), parts, [parts, widths, total, rows](Tape<T>& t, int self) {
    const auto& g = t.grad_of(self);
    int off = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
      const int w = widths[pi];
      if (t.needs_grad(parts[pi].id)) {
        auto& gp = t.grad_buffer(parts[pi].id);
        for (std::size_t r = 0; r < rows; ++r)
          for (int c = 0; c < w; ++c) gp.data[r * w + c] += g.data[r * total + off + c];
      }
      off += w;
    }
  });
}

/// Stack 2-D tensors with equal column counts along rows.
template <class T>
Var<T> concat_rows(Tape<T>& tape, const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const int w = tape.value(parts[0]).dim(1);
  int rows = 0;
  for (auto p : parts) {
    const auto& v = tape.value(p);
    require(v.rank() == 2 && v.dim(1) == w, "concat_rows: column mismatch");
    rows += v.dim(0);
  }
  Tensor<T> out({rows, w});
  auto it = out.data.begin();
  for (auto p : parts) it = std::copy(tape.value(p).data.begin(), tape.value(p).data.end(), it);
  return tape.op(std::move(out), parts, [parts](Tape<T>& t, int self) {
    const auto& g = t.grad_of(self);
    std::size_t off = 0;
    for (auto p : parts) {
      const std::size_t n = t.value_of(p.id).size();
      if (t.needs_grad(p.id)) {
        auto& gp = t.grad_buffer(p.id);
        for (std::size_t i = 0; i < n; ++i) gp.data[i] += g.data[off + i];
      }
      off += n;
    }
  });
}

/// Columns [start, start + count) of a 2-D tensor.
template <class T>
Var<T> slice_cols(Tape<T>& tape, Var<T> x, int start, int count) {
  const auto& xv = tape.value(x);
  require(xv.rank() == 2 && start >= 0 && start + count <= xv.dim(1), "slice_cols: out of range");
  const int n = xv.dim(0);
  const int w = xv.dim(1);
  Tensor<T> out({n, count});
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < count; ++c) out.at(r, c) = xv.at(r, start + c);
  return tape.op(std::move(out), {x}, [x, start, count, n, w](Tape<T>& t, int self) {
    const auto& g = t.grad_of(self);
    auto& gx = t.grad_buffer(x.id);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < count; ++c) gx.data[static_cast<std::size_t>(r) * w + start + c] += g.at(r, c);
  });
}

/// Mean over groups: rows are laid out group-major ([groups * N, W]); output [N, W].
/// Accumulation order is group 0, 1, ... for every row.
template <class T>
Var<T> mean_groups(Tape<T>& tape, Var<T> x, int groups) {
  const auto& xv = tape.value(x);
  require(groups >= 1, "mean_groups: need at least one group");
  require(xv.rank() == 2 && xv.dim(0) % groups == 0, "mean_groups: row count not divisible by groups");
  const int n = xv.dim(0) / groups;
  const int w = xv.dim(1);
  Tensor<T> out({n, w});
  const T inv = T(1) / T(groups);
  for (int gi = 0; gi < groups; ++gi)
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < w; ++c) out.at(r, c) += xv.at(gi * n + r, c);
  for (auto& v : out.data) v *= inv;
  return tape.op(std::move(out), {x}, [x, groups, n, w, inv](Tape<T>& t, int self) {
    const auto& g = t.grad_of(self);
    auto& gx = t.grad_buffer(x.id);
    for (int gi = 0; gi < groups; ++gi)
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < w; ++c) gx.at(gi * n + r, c) += g.at(r, c) * inv;
  });
}

/// Sum of squares of all entries (scalar).
template <class T>
Var<T> sum_squares(Tape<T>& tape, Var<T> x) {
  const auto& xv = tape.value(x);
  T s = T(0);
  for (T v : xv.data) s += v * v;
  return tape.op(Tensor<T>({1}, {s}), {x}, [x](Tape<T>& t, int self) {
    const T g = t.grad_of(self).data[0];
    const auto& xv = t.value_of(x.id);
    auto& gx = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < xv.size(); ++i) gx.data[i] += T(2) * xv.data[i] * g;
  });
}

/// Mean over rays of the squared Euclidean color error. pred, gt: [R x 3].
template <class T>
Var<T> mse_loss(Tape<T>& tape, Var<T> pred, Var<T> gt) {
  const auto& pv = tape.value(pred);
  const auto& gv = tape.value(gt);
  require(pv.shape == gv.shape, "mse_loss: shape mismatch " + shape_str(pv.shape) + " vs " + shape_str(gv.shape));
  require(pv.rank() == 2 && pv.dim(0) > 0, "mse_loss: expected [rays, channels]");
  const T inv_rays = T(1) / T(pv.dim(0));
  T s = T(0);
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const T d = pv.data[i] - gv.data[i];
    s += d * d;
  }
  return tape.op(Tensor<T>({1}, {s * inv_rays}), {pred, gt}, [pred, gt, inv_rays](Tape<T>& t, int self) {
    const T g = t.grad_of(self).data[0];
    const auto& pv = t.value_of(pred.id);
    const auto& gv = t.value_of(gt.id);
    const bool wp = t.needs_grad(pred.id);
    const bool wg = t.needs_grad(gt.id);
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const T d = T(2) * (pv.data[i] - gv.data[i]) * inv_rays * g;
      if (wp) t.grad_buffer(pred.id).data[i] += d;
      if (wg) t.grad_buffer(gt.id).data[i] -= d;
    }
  });
}

/// Emission-absorption compositing over black for R rays with S samples each.
/// rgb: [R*S x 3], sigma: [R*S x 1], delta: [R x S] constant gaps. Output [R x 3].
template <class T>
Var<T> composite(Tape<T>& tape, Var<T> rgb, Var<T> sigma, const Tensor<T>& delta) {
  const auto& cv = tape.value(rgb);
  const auto& sv = tape.value(sigma);
  require(delta.rank() == 2, "composite: delta must be [rays, samples]");
  const int rays = delta.dim(0);
  const int samples = delta.dim(1);
  require(cv.rank() == 2 && cv.dim(0) == rays * samples && cv.dim(1) == 3, "composite: rgb shape mismatch");
  require(sv.size() == static_cast<std::size_t>(rays) * samples, "composite: sigma shape mismatch");
  Tensor<T> out({rays, 3});
  for (int r = 0; r < rays; ++r) {
    T optical = T(0);
    for (int s = 0; s < samples; ++s) {
      const std::size_t i = static_cast<std::size_t>(r) * samples + s;
      const T tau = sv.data[i] * delta.at(r, s);
      const T w = std::exp(-optical) * (-std::expm1(-tau));
      for (int c = 0; c < 3; ++c) out.at(r, c) += w * cv.at(static_cast<int>(i), c);
      optical += tau;
    }
  }
  return tape.op(std::move(out), {rgb, sigma}, [rgb, sigma, delta, rays, samples](Tape<T>& t, int self) {
    const auto& g = t.grad_of(self);
    const auto& cv = t.value_of(rgb.id);
    const auto& sv = t.value_of(sigma.id);
    const bool wc = t.needs_grad(rgb.id);
    const bool ws = t.needs_grad(sigma.id);
    std::vector<T> w(samples), trans(samples), gw(samples);
    for (int r = 0; r < rays; ++r) {
      T optical = T(0);
      for (int s = 0; s < samples; ++s) {
        const std::size_t i = static_cast<std::size_t>(r) * samples + s;
        const T tau = sv.data[i] * delta.at(r, s);
        trans[s] = std::exp(-optical);
        w[s] = trans[s] * (-std::expm1(-tau));
        T acc = T(0);
        for (int c = 0; c < 3; ++c) acc += g.at(r, c) * cv.at(static_cast<int>(i), c);
        gw[s] = acc;
        optical += tau;
      }
      if (wc) {
        auto& gc = t.grad_buffer(rgb.id);
        for (int s = 0; s < samples; ++s)
          for (int c = 0; c < 3; ++c)
            gc.at(r * samples + s, c) += w[s] * g.at(r, c);
      }
      if (ws) {
        // w_s depends on sigma_j for j <= s:
        //   dw_s/dtau_s = T_s exp(-tau_s); dw_s/dtau_j = -w_s (j < s).
        auto& gs = t.grad_buffer(sigma.id);
        T suffix = T(0);  // sum_{s > j} gw_s w_s
        for (int s = samples - 1; s >= 0; --s) {
          const std::size_t i = static_cast<std::size_t>(r) * samples + s;
          const T tau = sv.data[i] * delta.at(r, s);
          const T dtau = gw[s] * trans[s] * std::exp(-tau) - suffix;
          gs.data[i] += dtau * delta.at(r, s);
          suffix += gw[s] * w[s];
        }
      }
    }
  });
}

}  // namespace moments_nerf::ops
