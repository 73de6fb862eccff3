// Copyright Contributors to the Wildsplat Project
// SPDX-License-Identifier: Apache-2.0
#include "wildsplat/geometry.hpp"

#include <cmath>
#include <stdexcept>

namespace wildsplat {

namespace {

constexpr float kC1 = 0.4886025119029199f;
constexpr float kC2[5] = {1.0925484305920792f, -1.0925484305920792f, 0.31539156525252005f,
                          -1.0925484305920792f, 0.5462742152960396f};
constexpr float kC3[7] = {-0.5900435899266435f, 2.890611442640554f,  -0.4570457994644658f,
                          0.3731763325901154f,  -0.4570457994644658f, 1.445305721320277f,
                          -0.5900435899266435f};

}  // namespace

void Camera::validate() const {
    if (!(fx > 0.0f) || !(fy > 0.0f))
        throw std::invalid_argument("camera: focal lengths must be positive");
    if (width <= 0 || height <= 0)
        throw std::invalid_argument("camera: image size must be positive");
    const Eigen::Matrix3f err = rot * rot.transpose() - Eigen::Matrix3f::Identity();
    if (err.cwiseAbs().maxCoeff() > 1e-5f || rot.determinant() < 0.0f)
        throw std::invalid_argument("camera: rotation block is not orthonormal");
}

void sh_basis(int degree, const Eigen::Vector3f& d, float* out) {
    if (degree < 0 || degree > 3)
        throw std::invalid_argument("sh: unsupported degree " + std::to_string(degree));
    const float x = d.x(), y = d.y(), z = d.z();
    out[0] = kShC0;
    if (degree < 1) return;
    out[1] = -kC1 * y;
    out[2] = kC1 * z;
    out[3] = -kC1 * x;
    if (degree < 2) return;
    const float xx = x * x, yy = y * y, zz = z * z;
    const float xy = x * y, yz = y * z, xz = x * z;
    out[4] = kC2[0] * xy;
    out[5] = kC2[1] * yz;
    out[6] = kC2[2] * (2.0f * zz - xx - yy);
    out[7] = kC2[3] * xz;
    out[8] = kC2[4] * (xx - yy);
    if (degree < 3) return;
    out[9] = kC3[0] * y * (3.0f * xx - yy);
    out[10] = kC3[1] * xy * z;
    out[11] = kC3[2] * y * (4.0f * zz - xx - yy);
    out[12] = kC3[3] * z * (2.0f * zz - 3.0f * xx - 3.0f * yy);
    out[13] = kC3[4] * x * (4.0f * zz - xx - yy);
    out[14] = kC3[5] * z * (xx - yy);
    out[15] = kC3[6] * x * (xx - 3.0f * yy);
}

float sh_eval_channel(const float* coeffs, int degree, const Eigen::Vector3f& d) {
    float basis[16];
    sh_basis(degree, d, basis);
    float acc = 0.0f;
    for (int i = 0; i < sh_coeff_count(degree); ++i) acc += basis[i] * coeffs[i];
    return acc;
}

Eigen::Vector3f sh_eval_color(const float* coeffs, int degree, const Eigen::Vector3f& d) {
    if (std::fabs(d.norm() - 1.0f) > 1e-4f)
        throw std::invalid_argument("sh_eval: direction must be unit length");
    const int k = sh_coeff_count(degree);
    Eigen::Vector3f c;
    for (int ch = 0; ch < 3; ++ch)
        c[ch] = std::max(sh_eval_channel(coeffs + ch * k, degree, d) + 0.5f, 0.0f);
    return c;
}

std::vector<float> positional_encoding_values(const float* x, int k, int n_freq) {
    std::vector<float> out(static_cast<size_t>(k + 2 * k * n_freq));
    std::copy(x, x + k, out.begin());
    int off = k;
    float f = static_cast<float>(M_PI);
    for (int fq = 0; fq < n_freq; ++fq) {
        for (int c = 0; c < k; ++c) out[static_cast<size_t>(off + c)] = std::sin(f * x[c]);
        off += k;
        for (int c = 0; c < k; ++c) out[static_cast<size_t>(off + c)] = std::cos(f * x[c]);
        off += k;
        f *= 2.0f;
    }
    return out;
}

Eigen::Matrix3f quat_to_rot(const Eigen::Vector4f& q) {
    const float n = q.norm();
    if (n < 1e-12f) throw std::invalid_argument("quat_to_rot: degenerate rotation (|q| ~ 0)");
    const float w = q[0] / n, x = q[1] / n, y = q[2] / n, z = q[3] / n;
    Eigen::Matrix3f r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

Eigen::Vector4f quat_to_rot_backward(const Eigen::Vector4f& q, const Eigen::Matrix3f& dR) {
    const float n = q.norm();
    const Eigen::Vector4f u = q / n;
    const float w = u[0], x = u[1], y = u[2], z = u[3];
    Eigen::Vector4f du;
    du[0] = 2.0f * (-z * (dR(0, 1) - dR(1, 0)) + y * (dR(0, 2) - dR(2, 0)) -
                    x * (dR(1, 2) - dR(2, 1)));
    du[1] = 2.0f * (y * (dR(0, 1) + dR(1, 0)) + z * (dR(0, 2) + dR(2, 0)) -
                    2.0f * x * (dR(1, 1) + dR(2, 2)) - w * (dR(1, 2) - dR(2, 1)));
    du[2] = 2.0f * (x * (dR(0, 1) + dR(1, 0)) - 2.0f * y * (dR(0, 0) + dR(2, 2)) +
                    z * (dR(1, 2) + dR(2, 1)) + w * (dR(0, 2) - dR(2, 0)));
    du[3] = 2.0f * (-2.0f * z * (dR(0, 0) + dR(1, 1)) + x * (dR(0, 2) + dR(2, 0)) +
                    y * (dR(1, 2) + dR(2, 1)) - w * (dR(0, 1) - dR(1, 0)));
    // back through normalization: dq = (I - u u^T)/n du
    return (du - u * u.dot(du)) / n;
}

Eigen::Matrix3f build_cov3d(const Eigen::Vector4f& q, const Eigen::Vector3f& s) {
    const Eigen::Matrix3f r = quat_to_rot(q);
    const Eigen::Matrix3f m = r * s.asDiagonal();
    return m * m.transpose();
}

SplatProjection project_gaussian(const Eigen::Vector3f& mu, const Eigen::Matrix3f& cov3d,
                                 const Camera& cam) {
    SplatProjection out;
    const Eigen::Vector3f t = cam.to_camera(mu);
    out.depth = t.z();
    if (t.z() <= kZNear) return out;
    const float inv_z = 1.0f / t.z();
    out.mu2d = Eigen::Vector2f(cam.fx * t.x() * inv_z + cam.cx, cam.fy * t.y() * inv_z + cam.cy);
    Eigen::Matrix<float, 2, 3> jac;
    jac << cam.fx * inv_z, 0, -cam.fx * t.x() * inv_z * inv_z,
           0, cam.fy * inv_z, -cam.fy * t.y() * inv_z * inv_z;
    const Eigen::Matrix3f v = cam.rot * cov3d * cam.rot.transpose();
    out.cov2d = jac * v * jac.transpose();
    out.cov2d(0, 0) += kCovDilation;
    out.cov2d(1, 1) += kCovDilation;
    out.valid = true;
    return out;
}

void project_gaussian_backward(const Eigen::Vector3f& mu, const Eigen::Matrix3f& cov3d,
                               const Camera& cam, const Eigen::Vector2f& d_mu2d,
                               const Eigen::Matrix2f& d_cov2d_in, Eigen::Vector3f& d_mu,
                               Eigen::Matrix3f& d_cov3d) {
    d_mu.setZero();
    d_cov3d.setZero();
    const Eigen::Vector3f t = cam.to_camera(mu);
    if (t.z() <= kZNear) return;
    const float inv_z = 1.0f / t.z();
    const float inv_z2 = inv_z * inv_z;
    const float inv_z3 = inv_z2 * inv_z;
    Eigen::Matrix<float, 2, 3> jac;
    jac << cam.fx * inv_z, 0, -cam.fx * t.x() * inv_z2,
           0, cam.fy * inv_z, -cam.fy * t.y() * inv_z2;
    const Eigen::Matrix3f v = cam.rot * cov3d * cam.rot.transpose();

    // symmetrize the upstream covariance gradient
    const Eigen::Matrix2f dS = 0.5f * (d_cov2d_in + d_cov2d_in.transpose());

    const Eigen::Matrix3f dV = jac.transpose() * dS * jac;
    d_cov3d = cam.rot.transpose() * dV * cam.rot;

    const Eigen::Matrix<float, 2, 3> dJ = 2.0f * dS * jac * v;
    Eigen::Vector3f dt = Eigen::Vector3f::Zero();
    // mu2d terms
    dt.x() += d_mu2d.x() * cam.fx * inv_z;
    dt.y() += d_mu2d.y() * cam.fy * inv_z;
    dt.z() += -d_mu2d.x() * cam.fx * t.x() * inv_z2 - d_mu2d.y() * cam.fy * t.y() * inv_z2;
    // Jacobian-entry terms
    dt.z() += dJ(0, 0) * (-cam.fx * inv_z2);
    dt.x() += dJ(0, 2) * (-cam.fx * inv_z2);
    dt.z() += dJ(0, 2) * (2.0f * cam.fx * t.x() * inv_z3);
    dt.z() += dJ(1, 1) * (-cam.fy * inv_z2);
    dt.y() += dJ(1, 2) * (-cam.fy * inv_z2);
    dt.z() += dJ(1, 2) * (2.0f * cam.fy * t.y() * inv_z3);

    d_mu = cam.rot.transpose() * dt;
}

}  // namespace wildsplat
