// Copyright Contributors to the Wildsplat Project
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <cmath>
#include <random>

#include "wildsplat/geometry.hpp"

using namespace wildsplat;

namespace {

// Independent real-SH reference: explicit polynomials in double precision,
// written out from the standard constant table (splatting band ordering).
void reference_basis(int degree, const Eigen::Vector3f& d, double* out) {
    const double x = d.x(), y = d.y(), z = d.z();
    out[0] = 0.28209479177387814;
    if (degree < 1) return;
    const double c1 = 0.4886025119029199;
    out[1] = -c1 * y;
    out[2] = c1 * z;
    out[3] = -c1 * x;
    if (degree < 2) return;
    out[4] = 1.0925484305920792 * x * y;
    out[5] = -1.0925484305920792 * y * z;
    out[6] = 0.31539156525252005 * (2.0 * z * z - x * x - y * y);
    out[7] = -1.0925484305920792 * x * z;
    out[8] = 0.5462742152960396 * (x * x - y * y);
    if (degree < 3) return;
    out[9] = -0.5900435899266435 * y * (3.0 * x * x - y * y);
    out[10] = 2.890611442640554 * x * y * z;
    out[11] = -0.4570457994644658 * y * (4.0 * z * z - x * x - y * y);
    out[12] = 0.3731763325901154 * z * (2.0 * z * z - 3.0 * x * x - 3.0 * y * y);
    out[13] = -0.4570457994644658 * x * (4.0 * z * z - x * x - y * y);
    out[14] = 1.445305721320277 * z * (x * x - y * y);
    out[15] = -0.5900435899266435 * x * (x * x - 3.0 * y * y);
}

Eigen::Vector3f random_dir(std::mt19937& rng) {
    std::normal_distribution<float> g(0.0f, 1.0f);
    Eigen::Vector3f d(g(rng), g(rng), g(rng));
    while (d.norm() < 1e-3f) d = Eigen::Vector3f(g(rng), g(rng), g(rng));
    return d.normalized();
}

// Quaternion sandwich q v q* with explicit Hamilton products.
Eigen::Vector3f sandwich(const Eigen::Vector4f& qraw, const Eigen::Vector3f& v) {
    const Eigen::Vector4f q = qraw.normalized();  // (w,x,y,z)
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    // p = q * (0,v)
    const double pw = -x * v.x() - y * v.y() - z * v.z();
    const double px = w * v.x() + y * v.z() - z * v.y();
    const double py = w * v.y() + z * v.x() - x * v.z();
    const double pz = w * v.z() + x * v.y() - y * v.x();
    // r = p * conj(q)
    return Eigen::Vector3f(
        static_cast<float>(-pw * x + px * w - py * z + pz * y),
        static_cast<float>(-pw * y + py * w - pz * x + px * z),
        static_cast<float>(-pw * z + pz * w - px * y + py * x));
}

Camera basic_camera() {
    Camera cam;
    cam.fx = cam.fy = 100.0f;
    cam.cx = cam.cy = 50.0f;
    cam.width = cam.height = 100;
    cam.rot = Eigen::Matrix3f::Identity();
    cam.trans = Eigen::Vector3f::Zero();
    return cam;
}

}  // namespace

TEST_CASE("sh_eval: analytic constants") {
    const Eigen::Vector3f d(0.0f, 0.0f, 1.0f);
    float dc[1] = {2.0f};
    CHECK(sh_eval_channel(dc, 0, d) == doctest::Approx(2.0f * 0.28209479f));

    float band1[4] = {0.0f, 0.0f, 1.0f, 0.0f};  // only the (1,0) coefficient
    CHECK(sh_eval_channel(band1, 1, d) == doctest::Approx(0.48860251f));
}

TEST_CASE("sh_eval: independent polynomial oracle") {
    std::mt19937 rng(11);
    std::uniform_real_distribution<float> coeff(-1.0f, 1.0f);
    for (int degree = 0; degree <= 3; ++degree) {
        for (int trial = 0; trial < 20; ++trial) {
            const Eigen::Vector3f d = random_dir(rng);
            const int k = sh_coeff_count(degree);
            std::vector<float> c(static_cast<size_t>(k));
            for (float& v : c) v = coeff(rng);
            double ref_basis[16];
            reference_basis(degree, d, ref_basis);
            double expected = 0.0;
            for (int i = 0; i < k; ++i) expected += ref_basis[i] * c[static_cast<size_t>(i)];
            const float got = sh_eval_channel(c.data(), degree, d);
            CHECK(std::fabs(got - expected) /
                      std::max(1e-3, std::fabs(got) + std::fabs(expected)) <
                  1e-5);
            // the basis values themselves are the coefficient gradients
            float basis[16];
            sh_basis(degree, d, basis);
            for (int i = 0; i < k; ++i)
                CHECK(basis[i] == doctest::Approx(ref_basis[i]).epsilon(1e-5));
        }
    }
}

TEST_CASE("sh_eval: DC-only expansion is view independent; errors") {
    std::mt19937 rng(3);
    float c[48] = {};
    c[0] = 0.7f;
    c[16] = -0.2f;
    c[32] = 0.1f;
    const Eigen::Vector3f a = random_dir(rng), b = random_dir(rng);
    CHECK(sh_eval_color(c, 3, a) == sh_eval_color(c, 3, b));
    CHECK_THROWS(sh_eval_color(c, 3, Eigen::Vector3f(0.0f, 0.0f, 2.0f)));  // non-unit
}

TEST_CASE("sh_eval_color clamps at zero") {
    float c[3] = {-10.0f, 0.0f, 0.0f};
    const Eigen::Vector3f rgb = sh_eval_color(c, 0, Eigen::Vector3f(0, 0, 1));
    CHECK(rgb[0] == 0.0f);
    CHECK(rgb[1] == doctest::Approx(0.5f));
}

TEST_CASE("positional encoding values") {
    const float zero = 0.0f;
    const auto enc = positional_encoding_values(&zero, 1, 2);
    REQUIRE(enc.size() == 5);
    CHECK(enc[0] == 0.0f);
    CHECK(enc[1] == doctest::Approx(0.0f));
    CHECK(enc[2] == doctest::Approx(1.0f));
    CHECK(enc[3] == doctest::Approx(0.0f));
    CHECK(enc[4] == doctest::Approx(1.0f));

    const float v[3] = {0.3f, -0.2f, 0.9f};
    CHECK(positional_encoding_values(v, 3, 0).size() == 3);   // identity
    CHECK(positional_encoding_values(v, 3, 4).size() == 27);  // 3 + 2*3*4
}

TEST_CASE("quat_to_rot: identity, 90-degree x, sandwich oracle") {
    CHECK(quat_to_rot(Eigen::Vector4f(1, 0, 0, 0)).isApprox(Eigen::Matrix3f::Identity()));

    const float s = std::sqrt(0.5f);
    const Eigen::Matrix3f rx = quat_to_rot(Eigen::Vector4f(s, s, 0, 0));
    CHECK((rx * Eigen::Vector3f(0, 1, 0)).isApprox(Eigen::Vector3f(0, 0, 1), 1e-6f));

    std::mt19937 rng(17);
    std::normal_distribution<float> g(0.0f, 1.0f);
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::Vector4f q(g(rng), g(rng), g(rng), g(rng));
        const Eigen::Matrix3f r = quat_to_rot(q);
        CHECK((r * r.transpose()).isApprox(Eigen::Matrix3f::Identity(), 1e-6f));
        const Eigen::Vector3f v(g(rng), g(rng), g(rng));
        CHECK((r * v).isApprox(sandwich(q, v), 1e-5f));
    }
    CHECK_THROWS(quat_to_rot(Eigen::Vector4f::Zero()));
}

TEST_CASE("quat_to_rot_backward vs finite differences") {
    std::mt19937 rng(23);
    std::normal_distribution<float> g(0.0f, 1.0f);
    for (int trial = 0; trial < 10; ++trial) {
        Eigen::Vector4f q(g(rng), g(rng), g(rng), g(rng));
        if (q.norm() < 0.3f) q[0] += 1.0f;
        Eigen::Matrix3f a;  // random linear functional over R
        for (int i = 0; i < 9; ++i) a(i / 3, i % 3) = g(rng);
        const Eigen::Vector4f dq = quat_to_rot_backward(q, a);
        for (int i = 0; i < 4; ++i) {
            const float h = 1e-3f;
            Eigen::Vector4f qp = q, qm = q;
            qp[i] += h;
            qm[i] -= h;
            const float numeric =
                ((quat_to_rot(qp) - quat_to_rot(qm)).cwiseProduct(a)).sum() / (2.0f * h);
            CHECK(std::fabs(dq[i] - numeric) /
                      std::max(1.0f, std::fabs(dq[i]) + std::fabs(numeric)) <
                  1e-3f);
        }
    }
}

TEST_CASE("build_cov3d: closed forms and eigensolver oracle") {
    const Eigen::Matrix3f d =
        build_cov3d(Eigen::Vector4f(1, 0, 0, 0), Eigen::Vector3f(1, 2, 3));
    CHECK(d.isApprox(Eigen::Vector3f(1, 4, 9).asDiagonal().toDenseMatrix(), 1e-6f));

    std::mt19937 rng(29);
    std::normal_distribution<float> g(0.0f, 1.0f);
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::Vector4f q(g(rng), g(rng), g(rng), g(rng));
        if (q.norm() < 0.3f) q[0] += 1.0f;
        CHECK(build_cov3d(q, Eigen::Vector3f(1, 1, 1)).isApprox(Eigen::Matrix3f::Identity(), 1e-5f));

        Eigen::Vector3f s(0.3f + std::fabs(g(rng)), 0.3f + std::fabs(g(rng)),
                          0.3f + std::fabs(g(rng)));
        const Eigen::Matrix3f cov = build_cov3d(q, s);
        CHECK(cov.isApprox(cov.transpose(), 1e-6f));
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3f> es(cov);
        Eigen::Vector3f expected(s[0] * s[0], s[1] * s[1], s[2] * s[2]);
        std::sort(expected.data(), expected.data() + 3);
        for (int i = 0; i < 3; ++i)
            CHECK(es.eigenvalues()[i] == doctest::Approx(expected[i]).epsilon(1e-4));
    }
}

TEST_CASE("project_gaussian: closed forms") {
    const Camera cam = basic_camera();
    const Eigen::Vector3f mu(0.0f, 0.0f, 2.0f);
    const float sigma2 = 0.09f;
    const SplatProjection p =
        project_gaussian(mu, sigma2 * Eigen::Matrix3f::Identity(), cam);
    REQUIRE(p.valid);
    CHECK(p.mu2d.x() == doctest::Approx(50.0f));
    CHECK(p.mu2d.y() == doctest::Approx(50.0f));
    CHECK(p.depth == doctest::Approx(2.0f));
    // J Sigma J^T = (fx/z)^2 sigma^2 I = 2500 sigma^2 I, before dilation
    const Eigen::Matrix2f undilated = p.cov2d - kCovDilation * Eigen::Matrix2f::Identity();
    CHECK(undilated.isApprox(2500.0f * sigma2 * Eigen::Matrix2f::Identity(), 1e-4f));

    CHECK_FALSE(project_gaussian(Eigen::Vector3f(0, 0, 0.05f),
                                 Eigen::Matrix3f::Identity(), cam)
                    .valid);
}

TEST_CASE("projection preserves depth order") {
    const Camera cam = basic_camera();
    const auto a = project_gaussian({0.1f, 0.0f, 1.5f}, 0.01f * Eigen::Matrix3f::Identity(), cam);
    const auto b = project_gaussian({0.0f, 0.2f, 2.5f}, 0.01f * Eigen::Matrix3f::Identity(), cam);
    CHECK(a.depth < b.depth);
}

TEST_CASE("project_gaussian_backward vs finite differences") {
    std::mt19937 rng(31);
    std::normal_distribution<float> g(0.0f, 1.0f);
    Camera cam = basic_camera();
    cam.rot = quat_to_rot(Eigen::Vector4f(0.9f, 0.2f, -0.3f, 0.1f));
    cam.trans = Eigen::Vector3f(0.1f, -0.2f, 0.3f);
    for (int trial = 0; trial < 10; ++trial) {
        const Eigen::Vector3f mu_cam_target(0.5f * g(rng), 0.5f * g(rng), 2.0f + 0.5f * std::fabs(g(rng)));
        const Eigen::Vector3f mu = cam.rot.transpose() * (mu_cam_target - cam.trans);
        Eigen::Vector4f q(g(rng), g(rng), g(rng), g(rng));
        if (q.norm() < 0.3f) q[0] += 1.0f;
        const Eigen::Vector3f s(0.1f + 0.2f * std::fabs(g(rng)), 0.1f + 0.2f * std::fabs(g(rng)),
                                0.1f + 0.2f * std::fabs(g(rng)));
        const Eigen::Matrix3f cov = build_cov3d(q, s);

        const Eigen::Vector2f da(g(rng), g(rng));
        Eigen::Matrix2f db;
        db << g(rng), g(rng), 0.0f, g(rng);
        db = 0.5f * (db + db.transpose().eval());  // symmetric upstream

        auto objective = [&](const Eigen::Vector3f& m, const Eigen::Matrix3f& c) {
            const SplatProjection p = project_gaussian(m, c, cam);
            REQUIRE(p.valid);
            return da.dot(p.mu2d) + (db.cwiseProduct(p.cov2d)).sum();
        };

        Eigen::Vector3f d_mu;
        Eigen::Matrix3f d_cov;
        project_gaussian_backward(mu, cov, cam, da, db, d_mu, d_cov);

        const float h = 1e-3f;
        for (int i = 0; i < 3; ++i) {
            Eigen::Vector3f mp = mu, mm = mu;
            mp[i] += h;
            mm[i] -= h;
            const float numeric = (objective(mp, cov) - objective(mm, cov)) / (2.0f * h);
            CHECK(std::fabs(d_mu[i] - numeric) /
                      std::max(1.0f, std::fabs(d_mu[i]) + std::fabs(numeric)) <
                  1e-3f);
        }
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                Eigen::Matrix3f cp = cov, cm = cov;
                cp(i, j) += h;
                cm(i, j) -= h;
                const float numeric = (objective(mu, cp) - objective(mu, cm)) / (2.0f * h);
                CHECK(std::fabs(d_cov(i, j) - numeric) /
                          std::max(1.0f, std::fabs(d_cov(i, j)) + std::fabs(numeric)) <
                      1e-3f);
            }
    }
}

TEST_CASE("camera validation") {
    Camera cam = basic_camera();
    CHECK_NOTHROW(cam.validate());
    cam.fx = -1.0f;
    CHECK_THROWS(cam.validate());
    cam = basic_camera();
    cam.rot(0, 0) = 2.0f;
    CHECK_THROWS(cam.validate());
}
