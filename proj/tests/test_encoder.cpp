#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "moments_nerf/camera.hpp"
#include "moments_nerf/encoder.hpp"

using namespace moments_nerf;
using namespace moments_nerf::encoder;

namespace {

Tensor<double> random_image(std::mt19937_64& rng, int h, int w, int c, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t({h, w, c});
  for (auto& v : t.data) v = u(rng);
  return t;
}

int mirror(int i, int n) {
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
  return i;
}

// Per pixel, per channel: cut the window, take its 15 moments, dot with the mix.
Tensor<double> window_oracle(const Tensor<double>& x, const ZernikeConvLayer& layer) {
  const int h = x.dim(0), w = x.dim(1), cin = x.dim(2);
  const int r = layer.window_radius, k = 2 * r + 1;
  Tensor<double> out({h, w, layer.c_out()});
  std::vector<double> window(static_cast<std::size_t>(k) * k);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      std::vector<double> feats;
      for (int c = 0; c < cin; ++c) {
        for (int a = 0; a < k; ++a)
          for (int b = 0; b < k; ++b) window[a * k + b] = x.at(mirror(i + a - r, h), mirror(j + b - r, w), c);
        const auto alpha = zernike::moments(window, layer.basis);
        feats.insert(feats.end(), alpha.begin(), alpha.end());
      }
      for (int o = 0; o < layer.c_out(); ++o) {
        double s = layer.bias[o];
        for (std::size_t f = 0; f < feats.size(); ++f) s += layer.mix(o, static_cast<Eigen::Index>(f)) * feats[f];
        out.at(i, j, o) = s;
      }
    }
  return out;
}

ZernikeConvLayer random_layer(std::mt19937_64& rng, int radius, int cin, int cout) {
  auto layer = ZernikeConvLayer::make(radius, cin, cout);
  std::normal_distribution<double> g;
  for (Eigen::Index i = 0; i < layer.mix.size(); ++i) layer.mix.data()[i] = g(rng);
  for (auto& b : layer.bias) b = g(rng);
  return layer;
}

Tensor<double> folded_conv(const Tensor<double>& x, const ZernikeConvLayer& layer) {
  Tape<double> tape(false);
  Tensor<double> mix({layer.c_out(), static_cast<int>(layer.mix.cols())});
  std::copy(layer.mix.data(), layer.mix.data() + layer.mix.size(), mix.data.begin());
  Tensor<double> bias({layer.c_out()}, layer.bias);
  auto kern = std::make_shared<const RowMat<double>>(moment_kernels(layer.basis));
  return tape.value(zernike_conv_op(tape, tape.constant(x), tape.constant(mix), tape.constant(bias), kern,
                                    layer.basis.size()));
}

EncoderConfig small_config() {
  EncoderConfig cfg;
  cfg.gabor_orientations = 2;
  cfg.gabor_wavelengths = {4.0};
  cfg.gabor_kernel = 5;
  cfg.zernike_layers = 3;
  cfg.zernike_radius = 2;
  cfg.zernike_channels = 4;
  cfg.trunk_widths = {4, 6, 8};
  cfg.feature_dim = 10;
  return cfg;
}

}  // namespace

TEST(ZernikeConv, ZeroMixGivesBias) {
  auto layer = ZernikeConvLayer::make(3, 2, 3);
  layer.bias = {0.5, -1.0, 2.0};
  std::mt19937_64 rng(1);
  const auto out = zernike_conv(random_image(rng, 9, 9, 2), layer);
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < 9; ++j)
      for (int o = 0; o < 3; ++o) EXPECT_DOUBLE_EQ(out.at(i, j, o), layer.bias[o]);
}

TEST(ZernikeConv, ConstantInputPistonOnly) {
  auto layer = ZernikeConvLayer::make(3, 1, 1);
  layer.mix(0, 0) = 1.0;
  double piston_mass = 0.0;
  for (std::size_t p = 0; p < layer.basis.grid.pixels(); ++p)
    piston_mass += layer.basis.grid.cell_weight[p] * layer.basis.values[0][p];
  for (double c : {0.0, 0.25, -1.5}) {
    const auto out = zernike_conv(Tensor<double>({8, 8, 1}, c), layer);
    for (double v : out.data) EXPECT_NEAR(v, c * piston_mass, 1e-12);
  }
}

TEST(ZernikeConv, MatchesWindowOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const auto layer = random_layer(rng, seed % 2 ? 3 : 2, 2, 3);
    const auto x = random_image(rng, seed % 3 ? 16 : 8, 16, 2);
    const auto ref = window_oracle(x, layer);
    const auto plain = zernike_conv(x, layer);
    const auto folded = folded_conv(x, layer);
    for (std::size_t i = 0; i < ref.size(); ++i) {
      EXPECT_NEAR(plain.data[i], ref.data[i], 1e-10);
      EXPECT_NEAR(folded.data[i], ref.data[i], 1e-10);
    }
  }
}

TEST(ZernikeConv, ShapeErrors) {
  auto layer = ZernikeConvLayer::make(2, 3, 2);
  EXPECT_THROW(zernike_conv(Tensor<double>({8, 8, 2}), layer), ArgumentError);
  EXPECT_THROW(ZernikeConvLayer::make(1, 1, 1), ArgumentError);
}

TEST(ConvOp, MatchesBruteForceWithStride) {
  std::mt19937_64 rng(2);
  const int h = 9, w = 7, cin = 2, cout = 3, k = 3;
  const auto x = random_image(rng, h, w, cin);
  const auto wt = random_image(rng, cout, cin * k * k, 1);
  Tensor<double> weight({cout, cin * k * k}, wt.data);
  Tensor<double> bias({cout}, std::vector<double>{0.1, 0.2, 0.3});
  for (int stride : {1, 2}) {
    Tape<double> tape(false);
    const auto out = tape.value(conv2d_op(tape, tape.constant(x), tape.constant(weight), tape.constant(bias), k, stride));
    const int oh = (h + stride - 1) / stride, ow = (w + stride - 1) / stride;
    ASSERT_EQ(out.shape, (Shape{oh, ow, cout}));
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j)
        for (int o = 0; o < cout; ++o) {
          double s = bias.data[o];
          for (int c = 0; c < cin; ++c)
            for (int a = 0; a < k; ++a)
              for (int b = 0; b < k; ++b)
                s += weight.at(o, c * k * k + a * k + b) * x.at(mirror(i * stride + a - 1, h), mirror(j * stride + b - 1, w), c);
          EXPECT_NEAR(out.at(i, j, o), s, 1e-12);
        }
  }
}

TEST(Upsample, IdentityAndConstant) {
  std::mt19937_64 rng(3);
  const auto x = random_image(rng, 5, 4, 2);
  Tape<double> tape(false);
  const auto same = tape.value(upsample_op(tape, tape.constant(x), 5, 4));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(same.data[i], x.data[i]);
  const auto up = tape.value(upsample_op(tape, tape.constant(Tensor<double>({3, 3, 1}, 0.7)), 12, 9));
  for (double v : up.data) EXPECT_NEAR(v, 0.7, 1e-15);
}

TEST(Project, Examples) {
  Camera cam;
  cam.fx = cam.fy = 100;
  cam.cx = cam.cy = 50;
  cam.width = cam.height = 101;
  auto p = project({0.1, 0.0, 1.0}, cam);
  EXPECT_TRUE(p.in_front);
  EXPECT_NEAR(p.u, 60.0, 1e-12);
  EXPECT_NEAR(p.v, 50.0, 1e-12);
  EXPECT_NEAR(p.depth, 1.0, 1e-12);
  p = project({0.0, 0.0, 1.0}, cam);
  EXPECT_DOUBLE_EQ(p.u, cam.cx);
  EXPECT_DOUBLE_EQ(p.v, cam.cy);
  EXPECT_FALSE(project({0.0, 0.0, -1.0}, cam).in_front);
}

TEST(Project, LookAtIsRigid) {
  const auto cam = Camera::look_at({3, 1, 2}, {0, 0, 0}, Eigen::Vector3d::UnitZ(), 40, 32, 32);
  EXPECT_NO_THROW(cam.validate());
  const auto p = project(Eigen::Vector3d::Zero(), cam);
  EXPECT_NEAR(p.u, cam.cx, 1e-9);
  EXPECT_NEAR(p.v, cam.cy, 1e-9);
  EXPECT_NEAR(p.depth, std::sqrt(14.0), 1e-12);
}

TEST(Bilinear, Examples) {
  FeatureVolume<double> vol{Tensor<double>({3, 4, 2})};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) {
      vol.data.at(i, j, 0) = i * 10 + j;
      vol.data.at(i, j, 1) = -(i + j * j);
    }
  auto f = sample_bilinear(vol, 2.0, 1.0);
  EXPECT_DOUBLE_EQ(f[0], 12.0);
  EXPECT_DOUBLE_EQ(f[1], -5.0);
  f = sample_bilinear(vol, 1.5, 0.5);
  EXPECT_DOUBLE_EQ(f[0], (1 + 2 + 11 + 12) / 4.0);
  EXPECT_DOUBLE_EQ(f[1], -(1 + 4 + 2 + 5) / 4.0);
  EXPECT_EQ(sample_bilinear(vol, -5.0, 1.3), sample_bilinear(vol, 0.0, 1.3));
  EXPECT_EQ(sample_bilinear(vol, 9.0, 7.0), sample_bilinear(vol, 3.0, 2.0));
  EXPECT_THROW(sample_bilinear(vol, NAN, 0.0), ArgumentError);
}

TEST(Bilinear, ConvexEnvelope) {
  std::mt19937_64 rng(4);
  FeatureVolume<double> vol{random_image(rng, 6, 7, 5)};
  std::uniform_real_distribution<double> u(-1.0, 7.5);
  for (int trial = 0; trial < 200; ++trial) {
    const double x = u(rng), y = u(rng);
    const auto f = sample_bilinear(vol, x, y);
    const auto tap = bilinear_tap(6, 7, x, y);
    for (int c = 0; c < 5; ++c) {
      double lo = 1e9, hi = -1e9;
      for (int k = 0; k < 4; ++k) {
        lo = std::min(lo, vol.data.data[tap.idx[k] * 5 + c]);
        hi = std::max(hi, vol.data.data[tap.idx[k] * 5 + c]);
      }
      EXPECT_GE(f[c], lo - 1e-12);
      EXPECT_LE(f[c], hi + 1e-12);
    }
  }
}

TEST(Encoder, OutputShapeAndDeterminism) {
  const auto cfg = small_config();
  ParamSet<double> params;
  std::mt19937_64 rng(5);
  init_encoder(params, cfg, rng);
  std::mt19937_64 img_rng(6);
  const auto img = random_image(img_rng, 13, 11, 3, 0.0, 1.0);
  const auto a = moments_encode(img, params, cfg);
  const auto b = moments_encode(img, params, cfg);
  EXPECT_EQ(a.height(), 13);
  EXPECT_EQ(a.width(), 11);
  EXPECT_EQ(a.depth(), 10);
  EXPECT_TRUE(a.data.all_finite());
  EXPECT_EQ(a.data.data, b.data.data);
}

TEST(Encoder, DefaultFeatureWidth) {
  EncoderConfig cfg;
  EXPECT_EQ(cfg.feature_dim, 64);
  EXPECT_EQ(cfg.zernike_layers, 15);
}

TEST(Encoder, LinearWithIdentityActivations) {
  auto cfg = small_config();
  cfg.activation = Activation::Identity;
  ParamSet<double> params;
  std::mt19937_64 rng(7);
  init_encoder(params, cfg, rng);
  std::mt19937_64 img_rng(8);
  const auto p = random_image(img_rng, 12, 12, 3, 0.0, 1.0);
  const auto q = random_image(img_rng, 12, 12, 3, 0.0, 1.0);
  Tensor<double> mix(p.shape);
  for (std::size_t i = 0; i < p.size(); ++i) mix.data[i] = 0.25 * p.data[i] + 0.5 * q.data[i];
  const auto fp = moments_encode(p, params, cfg), fq = moments_encode(q, params, cfg), fm = moments_encode(mix, params, cfg);
  double scale = 0.0;
  for (double v : fm.data.data) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < fm.data.size(); ++i)
    EXPECT_NEAR(fm.data.data[i], 0.25 * fp.data.data[i] + 0.5 * fq.data.data[i], 1e-10 * scale);
}

TEST(Encoder, AblatedStagesStillEncode) {
  for (auto [g, z] : {std::pair{false, true}, std::pair{true, false}, std::pair{false, false}}) {
    auto cfg = small_config();
    cfg.use_gabor = g;
    cfg.use_zernike = z;
    ParamSet<double> params;
    std::mt19937_64 rng(9);
    init_encoder(params, cfg, rng);
    EXPECT_EQ(params.contains("encoder.gabor"), g);
    EXPECT_EQ(params.contains("encoder.zernike.0.mix"), z);
    const auto f = moments_encode(Tensor<double>({9, 9, 3}, 0.5), params, cfg);
    EXPECT_EQ(f.depth(), cfg.feature_dim);
  }
}

TEST(Encoder, NonFiniteParameterIsNumericError) {
  const auto cfg = small_config();
  ParamSet<double> params;
  std::mt19937_64 rng(10);
  init_encoder(params, cfg, rng);
  params["encoder.trunk.0.bias"].value.data[0] = NAN;
  EXPECT_THROW(moments_encode(Tensor<double>({9, 9, 3}, 0.5), params, cfg), NumericError);
}

TEST(FeatureVolumeFile, RoundTrip) {
  std::mt19937_64 rng(11);
  FeatureVolume<double> vol{random_image(rng, 4, 5, 3)};
  const auto path = (std::filesystem::temp_directory_path() / "mn_test_volume.mfv").string();
  write_feature_volume(path, vol);
  const auto back = read_feature_volume(path);
  ASSERT_EQ(back.data.shape, vol.data.shape);
  for (std::size_t i = 0; i < vol.data.size(); ++i) EXPECT_EQ(back.data.data[i], static_cast<float>(vol.data.data[i]));
  std::filesystem::remove(path);
  EXPECT_THROW(read_feature_volume(path), LoadError);
}
