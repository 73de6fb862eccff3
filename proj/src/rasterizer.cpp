// Copyright Contributors to the Wildsplat Project
// SPDX-License-Identifier: Apache-2.0
#include "wildsplat/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <stdexcept>

namespace wildsplat {

namespace {

struct SplatScreen {
    // conic (inverse 2-D covariance) and center, precomputed once per splat
    float a, b, c;     // conic entries: [[a,b],[b,c]]
    float mx, my;
    float alpha;       // sigmoid(logit)
    float r;           // 3-sigma influence radius
};

struct Prepared {
    std::vector<SplatProjection> proj;
    std::vector<SplatScreen> screen;   // parallel to proj; undefined where invalid
    std::vector<int> order;            // valid splats, depth ascending, index tie-break
    std::vector<float> radius;
    int skipped_non_pd = 0;
};

float sigmoidf(float x) { return 1.0f / (1.0f + std::exp(-x)); }

Prepared prepare(const GaussianCloud& cloud, const Camera& cam) {
    const int n = cloud.count();
    Prepared p;
    p.proj.resize(static_cast<size_t>(n));
    p.screen.resize(static_cast<size_t>(n));
    p.radius.assign(static_cast<size_t>(n), 0.0f);
    for (int i = 0; i < n; ++i) {
        const Eigen::Matrix3f cov3d =
            build_cov3d(cloud.rotations[static_cast<size_t>(i)], cloud.scales(i));
        SplatProjection pr = project_gaussian(cloud.positions[static_cast<size_t>(i)], cov3d, cam);
        if (pr.valid) {
            const float a = pr.cov2d(0, 0), b = pr.cov2d(0, 1), c = pr.cov2d(1, 1);
            const float det = a * c - b * b;
            if (det <= 0.0f || a <= 0.0f) {
                pr.valid = false;
                ++p.skipped_non_pd;
            } else {
                const float inv_det = 1.0f / det;
                SplatScreen& s = p.screen[static_cast<size_t>(i)];
                s.a = c * inv_det;
                s.b = -b * inv_det;
                s.c = a * inv_det;
                s.mx = pr.mu2d.x();
                s.my = pr.mu2d.y();
                s.alpha = sigmoidf(cloud.opacity_logits[static_cast<size_t>(i)]);
                const float mid = 0.5f * (a + c);
                const float lmax = mid + std::sqrt(std::max(0.1f, mid * mid - det));
                s.r = std::ceil(3.0f * std::sqrt(lmax));
                p.radius[static_cast<size_t>(i)] = s.r;
                // fully outside the frame: drop from the ordering
                if (s.mx + s.r < 0.0f || s.mx - s.r > static_cast<float>(cam.width - 1) ||
                    s.my + s.r < 0.0f || s.my - s.r > static_cast<float>(cam.height - 1))
                    pr.valid = false;
            }
        }
        p.proj[static_cast<size_t>(i)] = pr;
        if (pr.valid) p.order.push_back(i);
    }
    std::stable_sort(p.order.begin(), p.order.end(), [&](int a, int b) {
        const float da = p.proj[static_cast<size_t>(a)].depth;
        const float db = p.proj[static_cast<size_t>(b)].depth;
        return da < db || (da == db && a < b);
    });
    return p;
}

// Walks `candidates` (already depth sorted) at one pixel, compositing
// front-to-back with the shared cutoff rules.
inline void composite_pixel(float px, float py, const std::vector<int>& candidates,
                            const std::vector<SplatScreen>& screen, const Tensor& colors,
                            const Eigen::Vector3f& bg, float* out_rgb, float* out_alpha) {
    float t = 1.0f;
    float r = 0.0f, g = 0.0f, b = 0.0f;
    for (int idx : candidates) {
        const SplatScreen& s = screen[static_cast<size_t>(idx)];
        const float dx = px - s.mx, dy = py - s.my;
        if (std::fabs(dx) > s.r || std::fabs(dy) > s.r) continue;
        const float power = -0.5f * (s.a * dx * dx + s.c * dy * dy) - s.b * dx * dy;
        if (power > 0.0f) continue;
        const float alpha = std::min(0.99f, s.alpha * std::exp(power));
        if (alpha < kAlphaCutoff) continue;
        const float test_t = t * (1.0f - alpha);
        if (test_t < kTransmittanceFloor) break;
        const float w = alpha * t;
        r += w * colors.at2(idx, 0);
        g += w * colors.at2(idx, 1);
        b += w * colors.at2(idx, 2);
        t = test_t;
    }
    out_rgb[0] = r + t * bg.x();
    out_rgb[1] = g + t * bg.y();
    out_rgb[2] = b + t * bg.z();
    *out_alpha = 1.0f - t;
}

void check_colors(const GaussianCloud& cloud, const Tensor& colors) {
    if (colors.ndim() != 2 || colors.shape[0] != cloud.count() || colors.shape[1] != 3)
        throw std::invalid_argument("render: colors must be [N,3], got " +
                                    shape_str(colors.shape));
}

RenderOutput finish(Prepared&& p, Tensor image, Tensor alpha) {
    RenderOutput out;
    out.image = std::move(image);
    out.alpha = std::move(alpha);
    out.projections = std::move(p.proj);
    out.order = std::move(p.order);
    out.radius = std::move(p.radius);
    out.skipped_non_pd = p.skipped_non_pd;
    return out;
}

}  // namespace

RenderOutput render_naive(const GaussianCloud& cloud, const Camera& cam,
                          const Tensor& per_gaussian_color, const Eigen::Vector3f& background) {
    check_colors(cloud, per_gaussian_color);
    Prepared p = prepare(cloud, cam);
    Tensor image({cam.height, cam.width, 3});
    Tensor alpha({cam.height, cam.width});
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x)
            composite_pixel(static_cast<float>(x), static_cast<float>(y), p.order, p.screen,
                            per_gaussian_color, background,
                            &image.data[(static_cast<size_t>(y) * cam.width + x) * 3],
                            &alpha.data[static_cast<size_t>(y) * cam.width + x]);
    return finish(std::move(p), std::move(image), std::move(alpha));
}

RenderOutput render_tiled(const GaussianCloud& cloud, const Camera& cam,
                          const Tensor& per_gaussian_color, const Eigen::Vector3f& background) {
    check_colors(cloud, per_gaussian_color);
    Prepared p = prepare(cloud, cam);
    const int tiles_x = (cam.width + kTileSize - 1) / kTileSize;
    const int tiles_y = (cam.height + kTileSize - 1) / kTileSize;
    std::vector<std::vector<int>> bins(static_cast<size_t>(tiles_x * tiles_y));
    for (int idx : p.order) {  // order preserved inside each bin: global depth sort
        const SplatScreen& s = p.screen[static_cast<size_t>(idx)];
        const int tx0 = std::max(0, static_cast<int>(std::floor((s.mx - s.r) / kTileSize)));
        const int tx1 = std::min(tiles_x - 1, static_cast<int>(std::floor((s.mx + s.r) / kTileSize)));
        const int ty0 = std::max(0, static_cast<int>(std::floor((s.my - s.r) / kTileSize)));
        const int ty1 = std::min(tiles_y - 1, static_cast<int>(std::floor((s.my + s.r) / kTileSize)));
        for (int ty = ty0; ty <= ty1; ++ty)
            for (int tx = tx0; tx <= tx1; ++tx)
                bins[static_cast<size_t>(ty * tiles_x + tx)].push_back(idx);
    }
    Tensor image({cam.height, cam.width, 3});
    Tensor alpha({cam.height, cam.width});
    for (int ty = 0; ty < tiles_y; ++ty)
        for (int tx = 0; tx < tiles_x; ++tx) {
            const auto& bin = bins[static_cast<size_t>(ty * tiles_x + tx)];
            const int y1 = std::min(cam.height, (ty + 1) * kTileSize);
            const int x1 = std::min(cam.width, (tx + 1) * kTileSize);
            for (int y = ty * kTileSize; y < y1; ++y)
                for (int x = tx * kTileSize; x < x1; ++x)
                    composite_pixel(static_cast<float>(x), static_cast<float>(y), bin, p.screen,
                                    per_gaussian_color, background,
                                    &image.data[(static_cast<size_t>(y) * cam.width + x) * 3],
                                    &alpha.data[static_cast<size_t>(y) * cam.width + x]);
        }
    return finish(std::move(p), std::move(image), std::move(alpha));
}

RenderGrads render_backward(const GaussianCloud& cloud, const Camera& cam,
                            const Tensor& per_gaussian_color, const RenderOutput& fwd,
                            const Tensor& d_image, const Eigen::Vector3f& /*background*/) {
    check_colors(cloud, per_gaussian_color);
    const int n = cloud.count();
    if (d_image.shape != fwd.image.shape)
        throw std::invalid_argument("render_backward: upstream gradient shape " +
                                    shape_str(d_image.shape) + " does not match image " +
                                    shape_str(fwd.image.shape));
    // Rebuild screen-space quantities (cheap next to the pixel loop).
    Prepared p = prepare(cloud, cam);

    RenderGrads out;
    out.d_positions = Tensor({n, 3});
    out.d_rotations = Tensor({n, 4});
    out.d_log_scales = Tensor({n, 3});
    out.d_opacity_logits = Tensor({n});
    out.d_colors = Tensor({n, 3});
    out.grad2d_norm.assign(static_cast<size_t>(n), 0.0f);
    out.contributed.assign(static_cast<size_t>(n), 0);

    // per-splat screen-space accumulators
    std::vector<Eigen::Vector2f> d_mu2d(static_cast<size_t>(n), Eigen::Vector2f::Zero());
    std::vector<Eigen::Matrix2f> d_cov2d(static_cast<size_t>(n), Eigen::Matrix2f::Zero());
    std::vector<float> d_alpha(static_cast<size_t>(n), 0.0f);

    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            const size_t pix = static_cast<size_t>(y) * cam.width + x;
            const float gu[3] = {d_image.data[pix * 3], d_image.data[pix * 3 + 1],
                                 d_image.data[pix * 3 + 2]};
            if (gu[0] == 0.0f && gu[1] == 0.0f && gu[2] == 0.0f) continue;
            const float px = static_cast<float>(x), py = static_cast<float>(y);
            const float ctotal[3] = {fwd.image.data[pix * 3], fwd.image.data[pix * 3 + 1],
                                     fwd.image.data[pix * 3 + 2]};
            float t = 1.0f;
            float acc[3] = {0.0f, 0.0f, 0.0f};  // composited in front of the current splat
            for (int idx : p.order) {
                const SplatScreen& s = p.screen[static_cast<size_t>(idx)];
                const float dx = px - s.mx, dy = py - s.my;
                if (std::fabs(dx) > s.r || std::fabs(dy) > s.r) continue;
                const float power = -0.5f * (s.a * dx * dx + s.c * dy * dy) - s.b * dx * dy;
                if (power > 0.0f) continue;
                const float g_exp = std::exp(power);
                const float raw = s.alpha * g_exp;
                const float alpha = std::min(0.99f, raw);
                if (alpha < kAlphaCutoff) continue;
                const float test_t = t * (1.0f - alpha);
                if (test_t < kTransmittanceFloor) break;
                out.contributed[static_cast<size_t>(idx)] = 1;

                float dalpha_px = 0.0f;
                for (int ch = 0; ch < 3; ++ch) {
                    const float contrib = per_gaussian_color.at2(idx, ch) * alpha * t;
                    const float behind = ctotal[ch] - acc[ch] - contrib;
                    out.d_colors.at2(idx, ch) += gu[ch] * alpha * t;
                    dalpha_px += gu[ch] * (t * per_gaussian_color.at2(idx, ch) -
                                           behind / (1.0f - alpha));
                    acc[ch] += contrib;
                }
                t = test_t;
                if (raw < 0.99f) {  // clamped alphas get no gradient
                    d_alpha[static_cast<size_t>(idx)] += dalpha_px * g_exp;
                    const float dg = dalpha_px * s.alpha;
                    // dpower/dmu2d = conic * delta; dg = g * dpower
                    const float cdx = s.a * dx + s.b * dy;
                    const float cdy = s.b * dx + s.c * dy;
                    d_mu2d[static_cast<size_t>(idx)].x() += dg * g_exp * cdx;
                    d_mu2d[static_cast<size_t>(idx)].y() += dg * g_exp * cdy;
                    // dSigma' = 0.5 * dg * g * (conic d)(conic d)^T
                    const float k = 0.5f * dg * g_exp;
                    d_cov2d[static_cast<size_t>(idx)](0, 0) += k * cdx * cdx;
                    d_cov2d[static_cast<size_t>(idx)](0, 1) += k * cdx * cdy;
                    d_cov2d[static_cast<size_t>(idx)](1, 0) += k * cdy * cdx;
                    d_cov2d[static_cast<size_t>(idx)](1, 1) += k * cdy * cdy;
                }
            }
        }

    // chain screen-space gradients back to the 3-D parameters
    for (int idx : p.order) {
        const size_t i = static_cast<size_t>(idx);
        const Eigen::Vector4f q = cloud.rotations[i];
        const Eigen::Vector3f s = cloud.scales(idx);
        const Eigen::Matrix3f rot = quat_to_rot(q);
        const Eigen::Matrix3f cov3d = build_cov3d(q, s);

        Eigen::Vector3f dmu;
        Eigen::Matrix3f dcov3d;
        project_gaussian_backward(cloud.positions[i], cov3d, cam, d_mu2d[i], d_cov2d[i], dmu,
                                  dcov3d);
        for (int d = 0; d < 3; ++d) out.d_positions.at2(idx, d) = dmu[d];

        // Sigma = R M R^T, M = diag(s^2)
        const Eigen::Matrix3f m = (s.array() * s.array()).matrix().asDiagonal();
        const Eigen::Matrix3f dcov_sym = 0.5f * (dcov3d + dcov3d.transpose());
        const Eigen::Matrix3f dR = 2.0f * dcov_sym * rot * m;
        const Eigen::Matrix3f dM = rot.transpose() * dcov_sym * rot;
        const Eigen::Vector4f dq = quat_to_rot_backward(q, dR);
        for (int d = 0; d < 4; ++d) out.d_rotations.at2(idx, d) = dq[d];
        for (int d = 0; d < 3; ++d)
            out.d_log_scales.at2(idx, d) = 2.0f * s[d] * s[d] * dM(d, d);

        const float a = p.screen[i].alpha;
        out.d_opacity_logits[idx] = d_alpha[i] * a * (1.0f - a);
        out.grad2d_norm[i] = d_mu2d[i].norm();  // pixel units; thresholds live in config
    }
    return out;
}

Var render_op(Var mu, Var quat, Var log_scale, Var opacity_logit, Var color, const Camera& cam,
              int degree, const Eigen::Vector3f& background, GaussianCloud* stats) {
    Tape* t = mu.tape;
    const Tensor& muv = t->value(mu);
    const int n = muv.shape[0];

    auto build_cloud = [t, degree, n](int mu_id, int q_id, int ls_id, int ol_id) {
        GaussianCloud c;
        c.degree = degree;
        const Tensor& muv = t->value(Var{t, mu_id});
        const Tensor& qv = t->value(Var{t, q_id});
        const Tensor& lsv = t->value(Var{t, ls_id});
        const Tensor& olv = t->value(Var{t, ol_id});
        c.positions.resize(static_cast<size_t>(n));
        c.rotations.resize(static_cast<size_t>(n));
        c.log_scales.resize(static_cast<size_t>(n));
        c.opacity_logits.resize(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            c.positions[static_cast<size_t>(i)] = {muv.at2(i, 0), muv.at2(i, 1), muv.at2(i, 2)};
            c.rotations[static_cast<size_t>(i)] = {qv.at2(i, 0), qv.at2(i, 1), qv.at2(i, 2),
                                                   qv.at2(i, 3)};
            c.log_scales[static_cast<size_t>(i)] = {lsv.at2(i, 0), lsv.at2(i, 1), lsv.at2(i, 2)};
            c.opacity_logits[static_cast<size_t>(i)] = olv[i];
        }
        c.sh.assign(static_cast<size_t>(n) * c.sh_stride(), 0.0f);
        return c;
    };

    GaussianCloud cloud = build_cloud(mu.id, quat.id, log_scale.id, opacity_logit.id);
    RenderOutput fwd = render_tiled(cloud, cam, t->value(color), background);
    Tensor image = fwd.image;
    auto fwd_shared = std::make_shared<RenderOutput>(std::move(fwd));

    const int mu_id = mu.id, q_id = quat.id, ls_id = log_scale.id, ol_id = opacity_logit.id,
              c_id = color.id;
    const int out_id = t->size();
    return t->make_node(std::move(image), [t, build_cloud, fwd_shared, cam, background, stats, n,
                                           mu_id, q_id, ls_id, ol_id, c_id, out_id]() {
        GaussianCloud cloud = build_cloud(mu_id, q_id, ls_id, ol_id);
        const Tensor& colors = t->value(Var{t, c_id});
        RenderGrads g = render_backward(cloud, cam, colors, *fwd_shared,
                                        t->grad(Var{t, out_id}), background);
        Tensor& gmu = t->grad_mut(Var{t, mu_id});
        Tensor& gq = t->grad_mut(Var{t, q_id});
        Tensor& gls = t->grad_mut(Var{t, ls_id});
        Tensor& gol = t->grad_mut(Var{t, ol_id});
        Tensor& gc = t->grad_mut(Var{t, c_id});
        for (int i = 0; i < g.d_positions.numel(); ++i) gmu[i] += g.d_positions[i];
        for (int i = 0; i < g.d_rotations.numel(); ++i) gq[i] += g.d_rotations[i];
        for (int i = 0; i < g.d_log_scales.numel(); ++i) gls[i] += g.d_log_scales[i];
        for (int i = 0; i < g.d_opacity_logits.numel(); ++i) gol[i] += g.d_opacity_logits[i];
        for (int i = 0; i < g.d_colors.numel(); ++i) gc[i] += g.d_colors[i];
        if (stats != nullptr && stats->count() == n) {
            for (int i = 0; i < n; ++i)
                if (g.contributed[static_cast<size_t>(i)]) {
                    stats->grad2d_accum[static_cast<size_t>(i)] +=
                        g.grad2d_norm[static_cast<size_t>(i)];
                    stats->obs_count[static_cast<size_t>(i)] += 1;
                }
        }
    });
}

Tensor view_directions(const std::vector<Eigen::Vector3f>& positions, const Camera& cam) {
    const int n = static_cast<int>(positions.size());
    Tensor out({n, 3});
    const Eigen::Vector3f cpos = cam.position();
    for (int i = 0; i < n; ++i) {
        Eigen::Vector3f d = positions[static_cast<size_t>(i)] - cpos;
        const float nn = d.norm();
        d = nn > 1e-12f ? Eigen::Vector3f(d / nn) : Eigen::Vector3f(0, 0, 1);
        for (int c = 0; c < 3; ++c) out.at2(i, c) = d[c];
    }
    return out;
}

Var sh_colors_op(Var sh_coeffs, const Tensor& directions, int degree, int active_degree) {
    Tape* t = sh_coeffs.tape;
    const Tensor& shv = t->value(sh_coeffs);
    const int n = shv.shape[0];
    const int k = sh_coeff_count(degree);
    if (shv.ndim() != 2 || shv.shape[1] != 3 * k)
        throw std::invalid_argument("sh_colors: coefficients " + shape_str(shv.shape) +
                                    " do not match degree " + std::to_string(degree));
    if (active_degree < 0 || active_degree > degree)
        throw std::invalid_argument("sh_colors: bad active degree");
    const int ka = sh_coeff_count(active_degree);
    Tensor out({n, 3});
    std::vector<float> basis(static_cast<size_t>(n) * ka);
    for (int i = 0; i < n; ++i) {
        const Eigen::Vector3f d(directions.at2(i, 0), directions.at2(i, 1), directions.at2(i, 2));
        float b[16];
        sh_basis(active_degree, d, b);
        std::copy(b, b + ka, basis.begin() + static_cast<size_t>(i) * ka);
        for (int ch = 0; ch < 3; ++ch) {
            float acc = 0.5f;
            for (int c = 0; c < ka; ++c) acc += b[c] * shv.at2(i, ch * k + c);
            out.at2(i, ch) = std::max(acc, 0.0f);
        }
    }
    int sid = sh_coeffs.id;
    int out_id = t->size();
    return t->make_node(std::move(out), [t, sid, out_id, n, k, ka, basis]() {
        const Var self{t, out_id};
        const Tensor& g = t->grad(self);
        const Tensor& ov = t->value(self);
        Tensor& gs = t->grad_mut(Var{t, sid});
        for (int i = 0; i < n; ++i)
            for (int ch = 0; ch < 3; ++ch) {
                const float go = g.at2(i, ch);
                if (go == 0.0f || ov.at2(i, ch) <= 0.0f) continue;  // clamp kills the gradient
                for (int c = 0; c < ka; ++c)
                    gs.at2(i, ch * k + c) += go * basis[static_cast<size_t>(i) * ka + c];
            }
    });
}

}  // namespace wildsplat
