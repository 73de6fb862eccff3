// Copyright Contributors to the Wildsplat Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include "wildsplat/cloud.hpp"
#include "wildsplat/geometry.hpp"
#include "wildsplat/tensor.hpp"

namespace wildsplat {

inline constexpr float kAlphaCutoff = 1.0f / 255.0f;
inline constexpr float kTransmittanceFloor = 1e-4f;
inline constexpr int kTileSize = 16;

struct RenderOutput {
    Tensor image;            // [H,W,3]
    Tensor alpha;            // [H,W] accumulated opacity
    // forward artifacts replayed by the backward pass
    std::vector<SplatProjection> projections;   // per Gaussian
    std::vector<int> order;                     // depth-ascending indices of valid splats
    std::vector<float> radius;                  // 3-sigma influence radius, pixels
    int skipped_non_pd = 0;                     // splats dropped for a non-PD 2-D covariance
};

struct RenderGrads {
    Tensor d_positions;       // [N,3]
    Tensor d_rotations;       // [N,4]
    Tensor d_log_scales;      // [N,3]
    Tensor d_opacity_logits;  // [N]
    Tensor d_colors;          // [N,3]
    std::vector<float> grad2d_norm;  // per-Gaussian screen-space gradient norm (NDC-ish units)
    std::vector<int> contributed;    // 1 if the splat touched any pixel
};

/// Per-pixel reference compositor: every pixel walks the full depth-sorted
/// splat list. Colors are supplied externally (already SH-evaluated).
RenderOutput render_naive(const GaussianCloud& cloud, const Camera& cam,
                          const Tensor& per_gaussian_color,
                          const Eigen::Vector3f& background = Eigen::Vector3f::Zero());

/// Tile-binned fast path. Identical pixel values to render_naive (same
/// per-splat math, same global depth order, same 3-sigma truncation).
RenderOutput render_tiled(const GaussianCloud& cloud, const Camera& cam,
                          const Tensor& per_gaussian_color,
                          const Eigen::Vector3f& background = Eigen::Vector3f::Zero());

/// Analytic backward through compositing, projection, covariance build and
/// the opacity sigmoid. d_image is [H,W,3].
RenderGrads render_backward(const GaussianCloud& cloud, const Camera& cam,
                            const Tensor& per_gaussian_color, const RenderOutput& fwd,
                            const Tensor& d_image,
                            const Eigen::Vector3f& background = Eigen::Vector3f::Zero());

/// Tape op: composites the cloud described by the four parameter tensors
/// ([N,3] mu, [N,4] quat, [N,3] log scale, [N] opacity logit) and [N,3]
/// colors into an [H,W,3] image. Backward feeds all five inputs and, when
/// stats is non-null, accumulates densification statistics.
Var render_op(Var mu, Var quat, Var log_scale, Var opacity_logit, Var color, const Camera& cam,
              int degree, const Eigen::Vector3f& background, GaussianCloud* stats = nullptr);

/// Tape op: per-Gaussian color via SH evaluation of [N,3*(L+1)^2] coefficient
/// rows at fixed unit directions [N,3]. Only bands up to active_degree
/// contribute (progressive unlock). Differentiable w.r.t. the coefficients.
Var sh_colors_op(Var sh_coeffs, const Tensor& directions, int degree, int active_degree);

/// Utility shared with the trainer: viewing directions from Gaussian centers
/// to the camera origin, unit length, [N,3].
Tensor view_directions(const std::vector<Eigen::Vector3f>& positions, const Camera& cam);

}  // namespace wildsplat
