#pragma once

// Encoder + field + conditioning views: the full pixel-aligned pipeline.
//
// World points are normalized by the scene's world_scale. The view-frame
// position of a point for conditioning view v is world_scale * R_v * x, i.e.
// the camera rotation applied about the normalized world origin, so that
// view-frame coordinates stay inside the same [-1.5, 1.5] box.

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <utility>
#include <vector>

#include "autodiff.hpp"
#include "camera.hpp"
#include "encoder.hpp"
#include "errors.hpp"
#include "field.hpp"
#include "ops.hpp"
#include "renderer.hpp"
#include "tensor.hpp"

namespace moments_nerf {

struct ModelConfig {
  encoder::EncoderConfig encoder;
  field::FieldConfig field;

  /// Keeps the field's feature width in sync with the encoder output.
  ModelConfig& sync() {
    field.feature_dim = encoder.feature_dim;
    return *this;
  }
};

template <class T>
struct Model {
  ModelConfig cfg;
  ParamSet<T> params;
  std::uint64_t encoder_version = 0;  // bumped whenever encoder parameters change

  static Model create(ModelConfig cfg, std::uint64_t seed) {
    cfg.sync();
    Model m;
    m.cfg = cfg;
    std::mt19937_64 rng(seed);
    encoder::init_encoder(m.params, m.cfg.encoder, rng);
    field::init_field(m.params, m.cfg.field, rng);
    return m;
  }

  bool encoder_trainable() const {
    for (const auto& p : params)
      if (p.name.rfind("encoder.", 0) == 0 && !p.frozen) return true;
    return false;
  }
};

/// A posed input image that conditions the field.
template <class T>
struct ConditioningView {
  Camera cam;
  Tensor<T> image;  // H x W x 3 in [0, 1]
};

/// Feature volumes keyed by (view index, encoder version), with hit/miss counters.
template <class T>
class FeatureCache {
 public:
  const encoder::FeatureVolume<T>& get(int view, const Tensor<T>& image, Model<T>& model) {
    const auto key = std::make_pair(view, model.encoder_version);
    auto it = cache_.find(key);
    if (it != cache_.end()) {
      ++hits_;
      return it->second;
    }
    ++misses_;
    // Older versions are never queried again.
    for (auto e = cache_.begin(); e != cache_.end();)
      e = (e->first.first == view) ? cache_.erase(e) : std::next(e);
    return cache_[key] = encoder::moments_encode(image, model.params, model.cfg.encoder);
  }

  std::size_t hits() const { return hits_; }
  std::size_t misses() const { return misses_; }
  void clear() { cache_.clear(); }

 private:
  std::map<std::pair<int, std::uint64_t>, encoder::FeatureVolume<T>> cache_;
  std::size_t hits_ = 0;
  std::size_t misses_ = 0;
};

/// Normalized view-frame position and direction of a world point for one view.
inline std::pair<Eigen::Vector3d, Eigen::Vector3d> to_view_frame(const Camera& cam, double world_scale,
                                                                 const Eigen::Vector3d& x_world,
                                                                 const Eigen::Vector3d& d_world) {
  return {world_scale * (cam.rotation * x_world), cam.rotation * d_world};
}

/// Per-sample field inputs for a set of rays: view-major rows, P = sum of samples.
template <class T>
struct ConditionedBatch {
  Tensor<T> x_view;  // [V*P x 3]
  Tensor<T> d_view;  // [V*P x 3]
  std::vector<std::vector<encoder::BilinearTap>> taps;  // per view, P taps
  int points = 0;
};

template <class T>
ConditionedBatch<T> condition_rays(const std::vector<Camera>& cams, const std::vector<std::pair<int, int>>& sizes,
                                   double world_scale, const std::vector<render::Ray>& rays,
                                   const std::vector<render::SampleSet>& sets) {
  ConditionedBatch<T> b;
  for (const auto& s : sets) b.points += static_cast<int>(s.t.size());
  const int views = static_cast<int>(cams.size());
  b.x_view = Tensor<T>({views * b.points, 3});
  b.d_view = Tensor<T>({views * b.points, 3});
  b.taps.resize(views);
  for (int v = 0; v < views; ++v) {
    b.taps[v].reserve(b.points);
    int row = v * b.points;
    for (std::size_t r = 0; r < rays.size(); ++r)
      for (double t : sets[r].t) {
        const Eigen::Vector3d xw = rays[r].at(t);
        const auto [xv, dv] = to_view_frame(cams[v], world_scale, xw, rays[r].dir);
        for (int k = 0; k < 3; ++k) {
          b.x_view.at(row, k) = static_cast<T>(xv[k]);
          b.d_view.at(row, k) = static_cast<T>(dv[k]);
        }
        const Projection pr = project(xw, cams[v]);
        // Points behind a conditioning camera read the clamped corner feature.
        const double u = pr.in_front ? pr.u : -1.0;
        const double vv = pr.in_front ? pr.v : -1.0;
        b.taps[v].push_back(encoder::bilinear_tap(sizes[v].first, sizes[v].second, u, vv));
        ++row;
      }
  }
  return b;
}

/// Field evaluated at every sample of the given rays: rgb [P x 3], sigma [P x 1].
template <class T>
std::pair<typename Tape<T>::Var, typename Tape<T>::Var> field_on_rays(
    Tape<T>& tape, Model<T>& model, const std::vector<typename Tape<T>::Var>& features,
    const std::vector<Camera>& cams, double world_scale, const std::vector<render::Ray>& rays,
    const std::vector<render::SampleSet>& sets) {
  require(!cams.empty() && cams.size() == features.size(), "field_on_rays: need one feature volume per view");
  std::vector<std::pair<int, int>> sizes;
  for (auto f : features) sizes.emplace_back(tape.value(f).dim(0), tape.value(f).dim(1));
  auto batch = condition_rays<T>(cams, sizes, world_scale, rays, sets);
  std::vector<typename Tape<T>::Var> sampled;
  for (std::size_t v = 0; v < cams.size(); ++v)
    sampled.push_back(encoder::sample_bilinear_op(tape, features[v], batch.taps[v]));
  auto feats = sampled.size() == 1 ? sampled[0] : ops::concat_rows(tape, sampled);
  return field::field_forward(tape, model.params, model.cfg.field, tape.constant(std::move(batch.x_view)),
                              tape.constant(std::move(batch.d_view)), feats, static_cast<int>(cams.size()));
}

/// Composited colors [R x 3] for rays that all carry the same sample count.
template <class T>
typename Tape<T>::Var render_rays_op(Tape<T>& tape, Model<T>& model, const std::vector<typename Tape<T>::Var>& features,
                                     const std::vector<Camera>& cams, double world_scale,
                                     const std::vector<render::Ray>& rays, const std::vector<render::SampleSet>& sets) {
  require(!rays.empty(), "render_rays: empty ray batch");
  const int samples = static_cast<int>(sets[0].t.size());
  Tensor<T> delta({static_cast<int>(rays.size()), samples});
  for (std::size_t r = 0; r < rays.size(); ++r) {
    require(static_cast<int>(sets[r].t.size()) == samples, "render_rays: rays must share a sample count");
    for (int s = 0; s < samples; ++s) delta.at(static_cast<int>(r), s) = static_cast<T>(sets[r].delta[s]);
  }
  auto [rgb, sigma] = field_on_rays(tape, model, features, cams, world_scale, rays, sets);
  return ops::composite(tape, rgb, sigma, delta);
}

/// Renders a novel camera conditioned on the given views. Feature volumes come
/// from (and populate) the cache.
template <class T>
render::RenderedImage render_model(Model<T>& model, const std::vector<ConditioningView<T>>& views,
                                   FeatureCache<T>& cache, double world_scale, const Camera& cam, double t_near,
                                   double t_far, const render::RenderConfig& cfg) {
  require(!views.empty(), "render: at least one conditioning view is required");
  std::vector<Camera> cams;
  std::vector<const encoder::FeatureVolume<T>*> vols;
  for (std::size_t v = 0; v < views.size(); ++v) {
    cams.push_back(views[v].cam);
    vols.push_back(&cache.get(static_cast<int>(v), views[v].image, model));
  }
  auto radiance = [&](const std::vector<render::Ray>& rays, const std::vector<render::SampleSet>& sets) {
    Tape<T> tape(false);
    std::vector<typename Tape<T>::Var> feats;
    for (auto* vol : vols) feats.push_back(tape.constant(vol->data));
    auto [rgb, sigma] = field_on_rays(tape, model, feats, cams, world_scale, rays, sets);
    render::BatchRadiance out;
    const auto& c = tape.value(rgb);
    const auto& s = tape.value(sigma);
    out.colors.resize(s.size());
    out.sigma.resize(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      out.colors[i] = Eigen::Vector3d(c.data[3 * i], c.data[3 * i + 1], c.data[3 * i + 2]);
      out.sigma[i] = static_cast<double>(s.data[i]);
    }
    return out;
  };
  return render::render_image(cam, t_near, t_far, cfg, radiance);
}

}  // namespace moments_nerf
