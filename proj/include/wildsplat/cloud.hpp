// Copyright Contributors to the Wildsplat Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace wildsplat {

struct SparsePointSet {
    std::vector<Eigen::Vector3f> points;
    std::vector<Eigen::Vector3f> colors;  // [0,1]
};

/// The Gaussian scene container. All arrays share the leading extent N.
/// Scales are stored as logs, opacities as logits, so the constrained
/// quantities stay in range by construction.
struct GaussianCloud {
    int degree = 3;
    std::vector<Eigen::Vector3f> positions;
    std::vector<Eigen::Vector4f> rotations;     // (w,x,y,z)
    std::vector<Eigen::Vector3f> log_scales;
    std::vector<float> opacity_logits;
    std::vector<float> sh;                      // N * 3 * (L+1)^2, channel-major per Gaussian

    // densification statistics, accumulated by the renderer backward pass
    std::vector<float> grad2d_accum;
    std::vector<int> obs_count;
    // lineage flag carried through clone/split (used by the synthetic harness)
    std::vector<uint8_t> tags;

    int count() const { return static_cast<int>(positions.size()); }
    int coeffs_per_channel() const { return (degree + 1) * (degree + 1); }
    int sh_stride() const { return 3 * coeffs_per_channel(); }
    float* sh_of(int i) { return sh.data() + static_cast<size_t>(i) * sh_stride(); }
    const float* sh_of(int i) const { return sh.data() + static_cast<size_t>(i) * sh_stride(); }

    float opacity(int i) const;
    Eigen::Vector3f scales(int i) const;

    void reset_stats();
    void check_invariants() const;  // throws on violation
    float scene_extent() const;     // radius of the bounding sphere around the centroid
};

GaussianCloud init_from_points(const SparsePointSet& pts, int degree);

// Binary little-endian PLY, vanilla splatting property order:
// x y z nx ny nz f_dc_0..2 f_rest_* opacity scale_0..2 rot_0..3.
std::vector<uint8_t> write_ply(const GaussianCloud& cloud);
GaussianCloud read_ply(const std::vector<uint8_t>& bytes);
void write_ply_file(const GaussianCloud& cloud, const std::string& path);
GaussianCloud read_ply_file(const std::string& path);

struct DensifyConfig {
    float grad_threshold = 2e-4f;
    float scale_threshold_rel = 0.01f;  // clone below, split above (times scene extent)
    float min_opacity = 0.005f;
    float split_scale_shrink = 1.6f;
};

/// Clone/split high-gradient Gaussians, prune transparent ones, reset stats.
/// When kept_src is given it receives, for each output row, the input row its
/// optimizer state should come from, or -1 for freshly created rows.
GaussianCloud densify_and_prune(const GaussianCloud& cloud, const DensifyConfig& cfg,
                                float scene_extent, std::mt19937& rng,
                                std::vector<int>* kept_src = nullptr);

/// Clamp every opacity down to `ceiling`. Idempotent.
void reset_opacity(GaussianCloud& cloud, float ceiling = 0.01f);

// Plain-text "x y z r g b" lines.
SparsePointSet read_points_text(const std::string& path);
void write_points_text(const SparsePointSet& pts, const std::string& path);
// COLMAP points3D.txt (track entries ignored).
SparsePointSet read_colmap_points3d(const std::string& path);

}  // namespace wildsplat
