// Copyright Contributors to the Wildsplat Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "wildsplat/dataset.hpp"
#include "wildsplat/trainer.hpp"

namespace wildsplat {

/// Controlled toy scene: a ring of cameras around a blob of Gaussians, with
/// per-image affine color transforms and opaque rectangle occluders.
struct SyntheticSceneSpec {
    uint64_t seed = 0;
    int n_gaussians = 100;
    int n_cameras = 16;
    int n_appearances = 8;
    int width = 64, height = 64;
    float occluder_fraction = 0.5f;  // share of images that get occluders
    int max_occluders = 2;
    int occluder_min_size = 8, occluder_max_size = 20;  // pixels
    float noise_point_fraction = 0.1f;  // extra init points inside occluder frusta
};

struct SynthResult {
    Dataset dataset;
    /// The last `n_noise_points` entries of dataset.points sit inside
    /// occluder frusta (deliberately bad initialization).
    int n_noise_points = 0;
};

SynthResult synth(const SyntheticSceneSpec& spec);

struct EvalReport {
    std::vector<int> image_ids;
    std::vector<float> psnr_values;
    std::vector<float> ssim_values;
    std::vector<float> psnr_masked_values;  // against the ground-truth static mask
    float mean_psnr = 0, mean_ssim = 0, mean_psnr_masked = 0;
    /// mean(1-M) over true occluder pixels minus mean(1-M) over static
    /// pixels; positive when the predictor singles out occluders. 0 when the
    /// dataset carries no ground-truth masks.
    float mask_separation = 0;

    std::string to_csv() const;
};

/// Renders every dataset image through the trained pipeline (embedding from
/// the image itself) and scores it against the ground truth.
EvalReport evaluate(TrainState& state, const Dataset& dataset);

/// (1-t)*a + t*b.
Tensor interpolate_appearance(const Tensor& a, const Tensor& b, float t);

/// Embedding of an unseen style image (mask forced off), baked and rendered
/// from `cam`.
Tensor style_transfer(const Tensor& style_image_chw, TrainState& state, const Camera& cam);

/// Value-level render of a plain cloud (vanilla SH colors), [H,W,3].
Tensor render_cloud(const GaussianCloud& cloud, const Camera& cam,
                    const Eigen::Vector3f& background = Eigen::Vector3f::Zero());

/// Live-pipeline render for one embedding (base SH + residual), [H,W,3].
Tensor render_with_embedding(TrainState& state, const Tensor& embedding, const Camera& cam);

/// SSIM of two [H,W,3] images (same windowed statistic the loss uses).
float ssim_value(const Tensor& a, const Tensor& b);

/// A camera on the scene ring (shared by synth and the interp CLI).
Camera ring_camera(int index, int count, int width, int height, float radius = 4.0f,
                   float height_offset = 0.6f);

}  // namespace wildsplat
