#pragma once

#include "moments_nerf/autodiff.hpp"
#include "moments_nerf/camera.hpp"
#include "moments_nerf/encoder.hpp"
#include "moments_nerf/errors.hpp"
#include "moments_nerf/field.hpp"
#include "moments_nerf/gabor.hpp"
#include "moments_nerf/gradcheck.hpp"
#include "moments_nerf/image_io.hpp"
#include "moments_nerf/metrics.hpp"
#include "moments_nerf/model.hpp"
#include "moments_nerf/ops.hpp"
#include "moments_nerf/renderer.hpp"
#include "moments_nerf/scene.hpp"
#include "moments_nerf/tensor.hpp"
#include "moments_nerf/train.hpp"
#include "moments_nerf/zernike.hpp"
