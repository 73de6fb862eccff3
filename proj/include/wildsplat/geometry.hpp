// Copyright Contributors to the Wildsplat Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include "wildsplat/tensor.hpp"

namespace wildsplat {

inline constexpr float kShC0 = 0.28209479177387814f;
inline constexpr float kCovDilation = 0.3f;   // screen-space low-pass on the 2-D covariance
inline constexpr float kZNear = 0.1f;

/// Pinhole camera with a rigid world-to-camera transform.
struct Camera {
    float fx = 0, fy = 0, cx = 0, cy = 0;
    int width = 0, height = 0;
    Eigen::Matrix3f rot;     // world-to-camera rotation
    Eigen::Vector3f trans;   // world-to-camera translation

    Eigen::Vector3f to_camera(const Eigen::Vector3f& p_world) const {
        return rot * p_world + trans;
    }
    Eigen::Vector3f position() const { return -rot.transpose() * trans; }
    void validate() const;  // throws on bad intrinsics / non-orthonormal rotation
};

struct SplatProjection {
    Eigen::Vector2f mu2d;          // pixels
    Eigen::Matrix2f cov2d;         // after dilation
    float depth = 0;               // camera-space z
    bool valid = false;
};

/// Number of coefficients per channel for SH degree l.
inline int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

/// Evaluates the real SH expansion (3DGS basis ordering and signs) for one
/// channel's coefficients at unit direction d. No color offset applied.
float sh_eval_channel(const float* coeffs, int degree, const Eigen::Vector3f& d);

/// d(channel value)/d(coeff i): the basis values themselves.
void sh_basis(int degree, const Eigen::Vector3f& d, float* out);

/// Full three-channel evaluation with the splatting color convention
/// color = max(result + 0.5, 0). coeffs is 3*(L+1)^2, channel-major.
Eigen::Vector3f sh_eval_color(const float* coeffs, int degree, const Eigen::Vector3f& d);

/// NeRF positional encoding of a plain vector (non-tape variant).
std::vector<float> positional_encoding_values(const float* x, int k, int n_freq);

/// Quaternion (w,x,y,z), normalized internally. Throws when |q| ~ 0.
Eigen::Matrix3f quat_to_rot(const Eigen::Vector4f& q);

/// dL/dq for a normalized-inside quat_to_rot, given dL/dR.
Eigen::Vector4f quat_to_rot_backward(const Eigen::Vector4f& q, const Eigen::Matrix3f& dR);

/// Sigma = R S S^T R^T with S = diag(s).
Eigen::Matrix3f build_cov3d(const Eigen::Vector4f& q, const Eigen::Vector3f& s);

/// EWA-style projection of one Gaussian to screen space.
SplatProjection project_gaussian(const Eigen::Vector3f& mu, const Eigen::Matrix3f& cov3d,
                                 const Camera& cam);

/// Gradients of project_gaussian w.r.t. the world mean and 3-D covariance,
/// given upstream gradients on mu2d and the (symmetric) cov2d.
void project_gaussian_backward(const Eigen::Vector3f& mu, const Eigen::Matrix3f& cov3d,
                               const Camera& cam, const Eigen::Vector2f& d_mu2d,
                               const Eigen::Matrix2f& d_cov2d, Eigen::Vector3f& d_mu,
                               Eigen::Matrix3f& d_cov3d);

}  // namespace wildsplat
