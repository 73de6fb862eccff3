// Copyright Contributors to the Wildsplat Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <vector>

#include "wildsplat/geometry.hpp"
#include "wildsplat/tensor.hpp"

namespace wildsplat {

struct LossWeights {
    float w_l1 = 0.8f;
    float w_ssim = 0.2f;
    float w_regM = 1e-5f;
    float w_regSH = 0.1f;
    float w_regTS = 1e-5f;
    float mask_eps = 0.5f;  // threshold inside the transient-Gaussian penalty
};

/// Standard SSIM with an 11x11 Gaussian window (sigma 1.5), valid-mode,
/// averaged over channels and positions. Inputs are [H,W,3]; H,W >= 11.
Var ssim_op(Var a, Var b);

/// w_l1 * L1(M*render, M*gt) + w_ssim * (1 - SSIM(M*render, M*gt)).
/// Gradients flow into the render AND the mask.
Var masked_photometric(Var render, Var gt, Var mask, float w_l1, float w_ssim);

/// mean over pixels of (1 - M)^2.
Var reg_mask(Var mask);

/// sum_i alpha_i * [mask(project(mu_i)) < eps]; the indicator is detached,
/// gradients reach only the opacity logits. Off-frame or behind-camera
/// Gaussians contribute nothing.
Var reg_transient_gaussians(Var opacity_logits, const std::vector<Eigen::Vector3f>& positions,
                            const Camera& cam, const Tensor& resized_mask, float eps);

/// L = L_c + w_regM*L_regM + w_regSH*L_regSH + w_regTS*L_regTS.
/// Throws naming the offending component if any value is non-finite.
Var total_loss(Var l_c, Var l_reg_mask, Var l_reg_sh, Var l_reg_transient,
               const LossWeights& w);

// Plain-value helpers shared with evaluation.
float psnr(const Tensor& a, const Tensor& b);                    // [0,1] images; capped at 99
float psnr_masked(const Tensor& a, const Tensor& b, const Tensor& mask);  // mask [H,W] weights

}  // namespace wildsplat
