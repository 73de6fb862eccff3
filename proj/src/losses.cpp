// Copyright Contributors to the Wildsplat Project
// SPDX-License-Identifier: Apache-2.0
#include "wildsplat/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace wildsplat {

namespace {

Tensor gaussian_window(int size, float sigma) {
    Tensor k({size, size});
    const int half = size / 2;
    double total = 0.0;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const float dy = static_cast<float>(y - half), dx = static_cast<float>(x - half);
            const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            k.at2(y, x) = static_cast<float>(v);
            total += v;
        }
    for (float& v : k.data) v = static_cast<float>(v / total);
    return k;
}

const Tensor& ssim_window() {
    static const Tensor w = gaussian_window(11, 1.5f);
    return w;
}

}  // namespace

Var ssim_op(Var a, Var b) {
    Tape* t = a.tape;
    const Tensor& av = t->value(a);
    if (av.ndim() != 3 || av.shape[2] != 3)
        throw std::invalid_argument("ssim: expected [H,W,3], got " + shape_str(av.shape));
    if (av.shape[0] < 11 || av.shape[1] < 11)
        throw std::invalid_argument("ssim: image " + shape_str(av.shape) +
                                    " smaller than the 11x11 window");
    constexpr float c1 = 0.01f * 0.01f;
    constexpr float c2 = 0.03f * 0.03f;
    Var x = hwc_to_chw_op(a);
    Var y = hwc_to_chw_op(b);
    const Tensor& win = ssim_window();
    Var mu_x = depthwise_blur_valid(x, win);
    Var mu_y = depthwise_blur_valid(y, win);
    Var xx = depthwise_blur_valid(mul(x, x), win);
    Var yy = depthwise_blur_valid(mul(y, y), win);
    Var xy = depthwise_blur_valid(mul(x, y), win);
    Var var_x = sub(xx, mul(mu_x, mu_x));
    Var var_y = sub(yy, mul(mu_y, mu_y));
    Var cov = sub(xy, mul(mu_x, mu_y));
    Var num = mul(add_scalar(scale(mul(mu_x, mu_y), 2.0f), c1),
                  add_scalar(scale(cov, 2.0f), c2));
    Var den = mul(add_scalar(add(mul(mu_x, mu_x), mul(mu_y, mu_y)), c1),
                  add_scalar(add(var_x, var_y), c2));
    return mean(divide(num, den));
}

Var masked_photometric(Var render, Var gt, Var mask, float w_l1, float w_ssim) {
    Tape* t = render.tape;
    const Tensor& rv = t->value(render);
    const Tensor& gv = t->value(gt);
    if (rv.shape != gv.shape)
        throw std::invalid_argument("masked_photometric: render " + shape_str(rv.shape) +
                                    " vs ground truth " + shape_str(gv.shape));
    Var mr = mask_mul_hwc(render, mask);
    Var mg = mask_mul_hwc(gt, mask);
    Var l1 = mean(abs_op(sub(mr, mg)));
    Var dssim = add_scalar(neg(ssim_op(mr, mg)), 1.0f);
    return add(scale(l1, w_l1), scale(dssim, w_ssim));
}

Var reg_mask(Var mask) {
    return mean(square(add_scalar(neg(mask), 1.0f)));
}

Var reg_transient_gaussians(Var opacity_logits, const std::vector<Eigen::Vector3f>& positions,
                            const Camera& cam, const Tensor& resized_mask, float eps) {
    Tape* t = opacity_logits.tape;
    const Tensor& lv = t->value(opacity_logits);
    const int n = lv.numel();
    if (static_cast<int>(positions.size()) != n)
        throw std::invalid_argument("reg_transient: logit/position count mismatch");
    if (resized_mask.ndim() != 2 || resized_mask.shape[0] != cam.height ||
        resized_mask.shape[1] != cam.width)
        throw std::invalid_argument("reg_transient: mask " + shape_str(resized_mask.shape) +
                                    " does not match the camera frame");
    std::vector<uint8_t> flagged(static_cast<size_t>(n), 0);
    for (int i = 0; i < n; ++i) {
        const Eigen::Vector3f p = cam.to_camera(positions[static_cast<size_t>(i)]);
        if (p.z() <= kZNear) continue;
        const int px = static_cast<int>(std::lround(cam.fx * p.x() / p.z() + cam.cx));
        const int py = static_cast<int>(std::lround(cam.fy * p.y() / p.z() + cam.cy));
        if (px < 0 || px >= cam.width || py < 0 || py >= cam.height) continue;
        if (resized_mask.at2(py, px) < eps) flagged[static_cast<size_t>(i)] = 1;
    }
    double total = 0.0;
    for (int i = 0; i < n; ++i)
        if (flagged[static_cast<size_t>(i)]) total += 1.0 / (1.0 + std::exp(-lv[i]));
    const int lid = opacity_logits.id;
    const int out_id = t->size();
    return t->make_node(Tensor::scalar(static_cast<float>(total)), [t, lid, out_id, n, flagged]() {
        const float g = t->grad(Var{t, out_id})[0];
        const Tensor& lv = t->value(Var{t, lid});
        Tensor& gl = t->grad_mut(Var{t, lid});
        for (int i = 0; i < n; ++i) {
            if (!flagged[static_cast<size_t>(i)]) continue;
            const float a = 1.0f / (1.0f + std::exp(-lv[i]));
            gl[i] += g * a * (1.0f - a);
        }
    });
}

Var total_loss(Var l_c, Var l_reg_mask, Var l_reg_sh, Var l_reg_transient,
               const LossWeights& w) {
    Tape* t = l_c.tape;
    auto check = [t](Var v, const char* name) {
        if (!t->value(v).all_finite())
            throw std::runtime_error(std::string("total_loss: non-finite component ") + name);
    };
    check(l_c, "L_c");
    check(l_reg_mask, "L_regM");
    check(l_reg_sh, "L_regSH");
    check(l_reg_transient, "L_regTS");
    return add(add(l_c, scale(l_reg_mask, w.w_regM)),
               add(scale(l_reg_sh, w.w_regSH), scale(l_reg_transient, w.w_regTS)));
}

float psnr(const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape)
        throw std::invalid_argument("psnr: shapes " + shape_str(a.shape) + " vs " +
                                    shape_str(b.shape));
    double mse = 0.0;
    for (int i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        mse += d * d;
    }
    mse /= a.numel();
    if (mse <= 0.0) return 99.0f;
    return std::min(99.0f, static_cast<float>(10.0 * std::log10(1.0 / mse)));
}

float psnr_masked(const Tensor& a, const Tensor& b, const Tensor& mask) {
    if (a.shape != b.shape)
        throw std::invalid_argument("psnr: shapes " + shape_str(a.shape) + " vs " +
                                    shape_str(b.shape));
    const int h = a.shape[0], w = a.shape[1], c = a.ndim() == 3 ? a.shape[2] : 1;
    double mse = 0.0, weight = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const float m = mask.at2(y, x);
            for (int ch = 0; ch < c; ++ch) {
                const size_t i = (static_cast<size_t>(y) * w + x) * c + ch;
                const double d = static_cast<double>(a.data[i]) - b.data[i];
                mse += m * d * d;
                weight += m;
            }
        }
    if (weight <= 0.0) return 99.0f;
    mse /= weight;
    if (mse <= 0.0) return 99.0f;
    return std::min(99.0f, static_cast<float>(10.0 * std::log10(1.0 / mse)));
}

}  // namespace wildsplat
