// Copyright Contributors to the Wildsplat Project
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "fd_check.hpp"
#include "wildsplat/cloud.hpp"
#include "wildsplat/rasterizer.hpp"

using namespace wildsplat;
using wildsplat::testing::check_gradients;
using wildsplat::testing::random_tensor;

namespace {

Camera small_camera(int size = 9, float fx = 100.0f) {
    Camera cam;
    cam.width = cam.height = size;
    cam.fx = cam.fy = fx;
    cam.cx = cam.cy = static_cast<float>(size / 2);
    cam.rot = Eigen::Matrix3f::Identity();
    cam.trans = Eigen::Vector3f::Zero();
    return cam;
}

GaussianCloud make_cloud(const std::vector<Eigen::Vector3f>& mu,
                         const std::vector<float>& logits, float log_scale) {
    GaussianCloud c;
    c.degree = 0;
    for (size_t i = 0; i < mu.size(); ++i) {
        c.positions.push_back(mu[i]);
        c.rotations.push_back(Eigen::Vector4f(1, 0, 0, 0));
        c.log_scales.push_back(Eigen::Vector3f::Constant(log_scale));
        c.opacity_logits.push_back(logits[i]);
        for (int j = 0; j < 3; ++j) c.sh.push_back(0.0f);
    }
    c.reset_stats();
    c.tags.assign(mu.size(), 0);
    return c;
}

GaussianCloud random_scene(std::mt19937& rng, int n) {
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    GaussianCloud c;
    c.degree = 0;
    for (int i = 0; i < n; ++i) {
        c.positions.emplace_back(0.6f * u(rng), 0.6f * u(rng), 2.0f + u(rng));
        Eigen::Vector4f q(1.0f + u(rng), u(rng), u(rng), u(rng));
        c.rotations.push_back(q.normalized());
        c.log_scales.emplace_back(-3.0f + u(rng), -3.0f + u(rng), -3.0f + u(rng));
        c.opacity_logits.push_back(2.0f * u(rng));
        for (int j = 0; j < 3; ++j) c.sh.push_back(u(rng));
    }
    c.reset_stats();
    c.tags.assign(static_cast<size_t>(n), 0);
    return c;
}

Tensor random_colors(std::mt19937& rng, int n) {
    return wildsplat::testing::random_tensor({n, 3}, rng, 0.0f, 1.0f);
}

}  // namespace

TEST_CASE("single opaque splat reads out its color") {
    const Camera cam = small_camera();
    // projects exactly onto pixel (4,4)
    GaussianCloud c = make_cloud({{0, 0, 2}}, {10.0f}, 1.0f);
    Tensor color({1, 3}, {0.8f, 0.3f, 0.6f});
    const RenderOutput out = render_naive(c, cam, color);
    for (int ch = 0; ch < 3; ++ch)  // alpha is clamped at 0.99, hence 0.011 slack
        CHECK(std::fabs(out.image.data[(4 * 9 + 4) * 3 + ch] - color[ch]) < 0.011f);
    CHECK(out.alpha.at2(4, 4) > 0.98f);
}

TEST_CASE("two-splat compositing closed form") {
    const Camera cam = small_camera();
    GaussianCloud c = make_cloud({{0, 0, 2}, {0, 0, 2.5f}}, {0.0f, 0.0f}, 2.0f);
    Tensor colors({2, 3}, {1, 0, 0, 0, 1, 0});  // a front, b back
    const RenderOutput out = render_naive(c, cam, colors);
    CHECK(out.image.data[(4 * 9 + 4) * 3 + 0] == doctest::Approx(0.5f).epsilon(1e-4));
    CHECK(out.image.data[(4 * 9 + 4) * 3 + 1] == doctest::Approx(0.25f).epsilon(1e-4));
}

TEST_CASE("empty cloud renders the background") {
    const Camera cam = small_camera();
    GaussianCloud c;
    c.degree = 0;
    const RenderOutput out = render_naive(c, cam, Tensor({0, 3}),
                                          Eigen::Vector3f(0.2f, 0.4f, 0.6f));
    for (int p = 0; p < 81; ++p) {
        CHECK(out.image.data[p * 3 + 0] == 0.2f);
        CHECK(out.image.data[p * 3 + 2] == 0.6f);
        CHECK(out.alpha[p] == 0.0f);
    }
}

TEST_CASE("splats outside the frustum contribute nothing") {
    const Camera cam = small_camera();
    GaussianCloud c = make_cloud({{0, 0, -1}, {50, 0, 2}}, {5.0f, 5.0f}, -2.0f);
    Tensor colors({2, 3});
    colors.fill(1.0f);
    const RenderOutput out = render_tiled(c, cam, colors);
    for (float v : out.image.data) CHECK(v == 0.0f);
}

TEST_CASE("tiled equals naive on random scenes") {
    std::mt19937 rng(77);
    for (int trial = 0; trial < 12; ++trial) {
        const int n = 20 + static_cast<int>(rng() % 100);
        const GaussianCloud c = random_scene(rng, n);
        Camera cam = small_camera(64, 60.0f);
        cam.cx = cam.cy = 31.5f;
        const Tensor colors = random_colors(rng, n);
        const RenderOutput a = render_naive(c, cam, colors);
        const RenderOutput b = render_tiled(c, cam, colors);
        float max_err = 0.0f;
        for (int i = 0; i < a.image.numel(); ++i)
            max_err = std::max(max_err, std::fabs(a.image[i] - b.image[i]));
        CHECK(max_err < 1e-5f);
    }
}

TEST_CASE("energy bound: unit colors stay in range") {
    std::mt19937 rng(13);
    const GaussianCloud c = random_scene(rng, 60);
    const Camera cam = small_camera(32, 40.0f);
    const Tensor colors = random_colors(rng, 60);
    const RenderOutput out = render_tiled(c, cam, colors);
    for (float v : out.image.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f + 1e-6f);
    }
    for (float a : out.alpha.data) {
        CHECK(a >= 0.0f);
        CHECK(a <= 1.0f + 1e-6f);
    }
}

TEST_CASE("occlusion monotonicity") {
    const Camera cam = small_camera();
    Tensor colors({2, 3}, {0, 0, 0, 1, 1, 1});  // front black, back white
    auto back_contribution = [&](float front_logit) {
        GaussianCloud c = make_cloud({{0, 0, 2}, {0, 0, 2.5f}}, {front_logit, 2.0f}, 2.0f);
        return render_naive(c, cam, colors).image.data[(4 * 9 + 4) * 3];
    };
    float prev = back_contribution(-6.0f);
    for (float logit : {-2.0f, 0.0f, 2.0f, 6.0f}) {
        const float cur = back_contribution(logit);
        CHECK(cur <= prev + 1e-6f);
        prev = cur;
    }
}

TEST_CASE("render_op backward vs finite differences") {
    std::mt19937 rng(99);
    const Camera cam = small_camera(8, 40.0f);
    const int n = 5;
    const GaussianCloud base = random_scene(rng, n);
    Tensor mu({n, 3}), quat({n, 4}), ls({n, 3}), op({n});
    for (int i = 0; i < n; ++i) {
        for (int d = 0; d < 3; ++d) {
            mu.at2(i, d) = base.positions[static_cast<size_t>(i)][d];
            ls.at2(i, d) = base.log_scales[static_cast<size_t>(i)][d];
        }
        for (int d = 0; d < 4; ++d) quat.at2(i, d) = base.rotations[static_cast<size_t>(i)][d];
        op[i] = base.opacity_logits[static_cast<size_t>(i)];
    }
    const Tensor colors = random_colors(rng, n);
    const Tensor weights = random_tensor({8, 8, 3}, rng);

    check_gradients(
        {mu, quat, ls, op, colors},
        [&](Tape& tape, const std::vector<Var>& in) {
            Var img = render_op(in[0], in[1], in[2], in[3], in[4], cam, 0,
                                Eigen::Vector3f::Zero());
            return sum(mul(img, tape.constant(weights)));
        },
        1e-2f, 1e-3f, /*floor=*/1.0f);
}

TEST_CASE("zero upstream gradient leaves parameters untouched") {
    std::mt19937 rng(3);
    const int n = 4;
    const GaussianCloud c = random_scene(rng, n);
    const Camera cam = small_camera();
    const Tensor colors = random_colors(rng, n);
    const RenderOutput fwd = render_tiled(c, cam, colors);
    Tensor zero_up({cam.height, cam.width, 3});
    const RenderGrads g = render_backward(c, cam, colors, fwd, zero_up);
    for (float v : g.d_positions.data) CHECK(v == 0.0f);
    for (float v : g.d_rotations.data) CHECK(v == 0.0f);
    for (float v : g.d_opacity_logits.data) CHECK(v == 0.0f);
    for (float v : g.d_colors.data) CHECK(v == 0.0f);
}

TEST_CASE("opaque splat passes the pixel gradient straight to its color") {
    const Camera cam = small_camera();
    GaussianCloud c = make_cloud({{0, 0, 2}}, {20.0f}, 1.0f);  // alpha' = 0.99 clamp
    Tensor colors({1, 3}, {0.5f, 0.5f, 0.5f});
    const RenderOutput fwd = render_naive(c, cam, colors);
    Tensor up({9, 9, 3});
    up.data[(4 * 9 + 4) * 3 + 1] = 1.0f;
    const RenderGrads g = render_backward(c, cam, colors, fwd, up);
    // T*alpha' = 0.99 at the covered pixel
    CHECK(g.d_colors.at2(0, 1) == doctest::Approx(0.99f).epsilon(1e-3));
    CHECK(g.d_colors.at2(0, 0) == 0.0f);
}

TEST_CASE("sh_colors_op: values, progressive bands, clamp, gradients") {
    std::mt19937 rng(55);
    const int n = 3, degree = 2;
    const int width = 3 * sh_coeff_count(degree);
    Tensor dirs({n, 3});
    for (int i = 0; i < n; ++i) {
        Eigen::Vector3f d(1.0f + i * 0.3f, -0.5f, 0.7f);
        d.normalize();
        for (int k = 0; k < 3; ++k) dirs.at2(i, k) = d[k];
    }
    const Tensor coeffs = random_tensor({n, width}, rng, -0.8f, 0.8f);

    {  // value matches the scalar evaluator when all bands are active
        Tape tape;
        Var out = sh_colors_op(tape.constant(coeffs), dirs, degree, degree);
        for (int i = 0; i < n; ++i) {
            const Eigen::Vector3f d(dirs.at2(i, 0), dirs.at2(i, 1), dirs.at2(i, 2));
            const Eigen::Vector3f rgb = sh_eval_color(&coeffs.data[i * width], degree, d);
            for (int ch = 0; ch < 3; ++ch)
                CHECK(tape.value(out).at2(i, ch) == doctest::Approx(rgb[ch]).epsilon(1e-5));
        }
    }
    {  // bands above active_degree are ignored and get zero gradient
        Tape tape;
        Var sh = tape.leaf(coeffs);
        Var out = sh_colors_op(sh, dirs, degree, 0);
        tape.backward(sum(out));
        const int k = sh_coeff_count(degree);
        for (int i = 0; i < n; ++i)
            for (int ch = 0; ch < 3; ++ch)
                for (int j = 1; j < k; ++j)
                    CHECK(tape.grad(sh).at2(i, ch * k + j) == 0.0f);
    }
    {  // the color clamp kills the gradient
        Tensor dark({1, 3}, {-50.0f, 0.0f, 0.0f});
        Tensor one_dir({1, 3}, {0.0f, 0.0f, 1.0f});
        Tape tape;
        Var sh = tape.leaf(dark);
        Var out = sh_colors_op(sh, one_dir, 0, 0);
        CHECK(tape.value(out).at2(0, 0) == 0.0f);
        tape.backward(sum(out));
        CHECK(tape.grad(sh).at2(0, 0) == 0.0f);
        CHECK(tape.grad(sh).at2(0, 1) != 0.0f);
    }
    check_gradients({coeffs},
                    [&](Tape&, const std::vector<Var>& in) {
                        return mean(square(sh_colors_op(in[0], dirs, degree, degree)));
                    });
}

TEST_CASE("view_directions are unit length toward the gaussian") {
    const Camera cam = small_camera();
    std::vector<Eigen::Vector3f> pos = {{0, 0, 2}, {1, -1, 3}};
    const Tensor d = view_directions(pos, cam);
    for (int i = 0; i < 2; ++i) {
        Eigen::Vector3f v(d.at2(i, 0), d.at2(i, 1), d.at2(i, 2));
        CHECK(v.norm() == doctest::Approx(1.0f).epsilon(1e-5));
        CHECK(v.dot((pos[static_cast<size_t>(i)] - cam.position()).normalized()) ==
              doctest::Approx(1.0f).epsilon(1e-5));
    }
}
