// Copyright Contributors to the Wildsplat Project
// SPDX-License-Identifier: Apache-2.0
#include "wildsplat/harness.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "wildsplat/geometry.hpp"
#include "wildsplat/image_io.hpp"
#include "wildsplat/losses.hpp"
#include "wildsplat/rasterizer.hpp"

namespace wildsplat {

Camera ring_camera(int index, int count, int width, int height, float radius,
                   float height_offset) {
    if (count <= 0) throw std::invalid_argument("ring_camera: count must be positive");
    const float theta = 2.0f * static_cast<float>(M_PI) * index / count;
    const Eigen::Vector3f pos(radius * std::cos(theta), height_offset,
                              radius * std::sin(theta));
    const Eigen::Vector3f forward = (-pos).normalized();
    const Eigen::Vector3f up_world(0.0f, 1.0f, 0.0f);
    const Eigen::Vector3f right = up_world.cross(forward).normalized();
    const Eigen::Vector3f down = forward.cross(right);
    Camera cam;
    cam.width = width;
    cam.height = height;
    cam.fx = cam.fy = 1.1f * static_cast<float>(width);
    cam.cx = 0.5f * static_cast<float>(width - 1);
    cam.cy = 0.5f * static_cast<float>(height - 1);
    cam.rot.row(0) = right;
    cam.rot.row(1) = down;
    cam.rot.row(2) = forward;
    cam.trans = -cam.rot * pos;
    cam.validate();
    return cam;
}

Tensor render_cloud(const GaussianCloud& cloud, const Camera& cam,
                    const Eigen::Vector3f& background) {
    const int n = cloud.count();
    Tensor colors({n, 3});
    for (int i = 0; i < n; ++i) {
        const Eigen::Vector3f d =
            (cloud.positions[static_cast<size_t>(i)] - cam.position()).normalized();
        const Eigen::Vector3f c = sh_eval_color(cloud.sh_of(i), cloud.degree, d);
        for (int ch = 0; ch < 3; ++ch) colors.at2(i, ch) = c[ch];
    }
    return render_tiled(cloud, cam, colors, background).image;
}

Tensor render_with_embedding(TrainState& state, const Tensor& embedding, const Camera& cam) {
    const GaussianCloud baked = bake(state.cloud, embedding, state.transfer);
    return render_cloud(baked, cam, state.config.background);
}

float ssim_value(const Tensor& a, const Tensor& b) {
    Tape tape;
    return tape.value(ssim_op(tape.constant(a), tape.constant(b)))[0];
}

Tensor interpolate_appearance(const Tensor& a, const Tensor& b, float t) {
    if (a.shape != b.shape)
        throw std::invalid_argument("interpolate_appearance: lengths " +
                                    std::to_string(a.numel()) + " vs " +
                                    std::to_string(b.numel()));
    Tensor out(a.shape);
    for (int i = 0; i < a.numel(); ++i) out[i] = (1.0f - t) * a[i] + t * b[i];
    return out;
}

Tensor style_transfer(const Tensor& style_image_chw, TrainState& state, const Camera& cam) {
    const AppearanceOutput enc =
        encode_values(style_image_chw, state.encoder, /*style_mode=*/true);
    return render_with_embedding(state, enc.embedding, cam);
}

namespace {

struct Rect {
    int x0, y0, x1, y1;  // half-open
    Eigen::Vector3f color;
};

void paste_rect(Tensor& image_chw, Tensor& mask, const Rect& r) {
    const int h = mask.shape[0], w = mask.shape[1];
    for (int y = std::max(0, r.y0); y < std::min(h, r.y1); ++y)
        for (int x = std::max(0, r.x0); x < std::min(w, r.x1); ++x) {
            for (int c = 0; c < 3; ++c) image_chw.at3(c, y, x) = r.color[c];
            mask.at2(y, x) = 0.0f;
        }
}

}  // namespace

SynthResult synth(const SyntheticSceneSpec& spec) {
    if (spec.n_gaussians <= 0 || spec.n_cameras <= 0 || spec.n_appearances <= 0)
        throw std::invalid_argument("synth: counts must be positive");
    std::mt19937 rng(static_cast<uint32_t>(spec.seed));
    std::uniform_real_distribution<float> unit(0.0f, 1.0f);
    auto uniform = [&](float lo, float hi) { return lo + (hi - lo) * unit(rng); };
    std::normal_distribution<float> gauss(0.0f, 1.0f);

    GaussianCloud cloud;
    cloud.degree = 3;
    const int k = cloud.coeffs_per_channel();
    for (int i = 0; i < spec.n_gaussians; ++i) {
        Eigen::Vector3f p(gauss(rng), gauss(rng), gauss(rng));
        if (p.norm() > 1e-4f) p *= uniform(0.2f, 1.2f) / p.norm();
        cloud.positions.push_back(p);
        Eigen::Vector4f q(gauss(rng), gauss(rng), gauss(rng), gauss(rng));
        cloud.rotations.push_back(q.normalized());
        cloud.log_scales.push_back(Eigen::Vector3f(std::log(uniform(0.06f, 0.16f)),
                                                   std::log(uniform(0.06f, 0.16f)),
                                                   std::log(uniform(0.06f, 0.16f))));
        const float a = uniform(0.6f, 0.95f);
        cloud.opacity_logits.push_back(std::log(a / (1.0f - a)));
        std::vector<float> sh(static_cast<size_t>(3 * k), 0.0f);
        for (int c = 0; c < 3; ++c) {
            sh[static_cast<size_t>(c * k)] = (uniform(0.1f, 0.9f) - 0.5f) / kShC0;
            for (int j = 1; j < 4; ++j)  // mild view dependence in band 1
                sh[static_cast<size_t>(c * k + j)] = 0.1f * uniform(-1.0f, 1.0f);
        }
        cloud.sh.insert(cloud.sh.end(), sh.begin(), sh.end());
    }
    cloud.reset_stats();
    cloud.tags.assign(static_cast<size_t>(spec.n_gaussians), 0);

    // per-appearance affine transforms; 0 = identity, 1 = pure uniform gain
    std::vector<AppearanceTransform> transforms(static_cast<size_t>(spec.n_appearances));
    if (spec.n_appearances > 1)
        transforms[1].gain = 0.55f * Eigen::Matrix3f::Identity();
    for (int a = 2; a < spec.n_appearances; ++a) {
        AppearanceTransform& t = transforms[static_cast<size_t>(a)];
        t.gain = Eigen::Matrix3f::Zero();
        for (int c = 0; c < 3; ++c) t.gain(c, c) = uniform(0.6f, 1.4f);
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                if (r != c) t.gain(r, c) = uniform(-0.08f, 0.08f);
        for (int c = 0; c < 3; ++c) t.bias[c] = uniform(-0.08f, 0.08f);
    }

    SynthResult out;
    std::vector<std::vector<Rect>> rects_per_image(static_cast<size_t>(spec.n_cameras));
    for (int i = 0; i < spec.n_cameras; ++i) {
        WildImage img;
        img.id = i;
        img.camera = ring_camera(i, spec.n_cameras, spec.width, spec.height);
        Tensor base = render_cloud(cloud, img.camera);  // [H,W,3]
        const AppearanceTransform& t = transforms[static_cast<size_t>(i % spec.n_appearances)];
        for (int y = 0; y < spec.height; ++y)
            for (int x = 0; x < spec.width; ++x) {
                Eigen::Vector3f px;
                for (int c = 0; c < 3; ++c)
                    px[c] = base.data[(static_cast<size_t>(y) * spec.width + x) * 3 + c];
                px = t.gain * px + t.bias;
                for (int c = 0; c < 3; ++c)
                    base.data[(static_cast<size_t>(y) * spec.width + x) * 3 + c] =
                        std::clamp(px[c], 0.0f, 1.0f);
            }
        img.pixels = hwc_to_chw(base);
        Tensor mask = Tensor::full({spec.height, spec.width}, 1.0f);
        const bool occluded = unit(rng) < spec.occluder_fraction;
        if (occluded) {
            const int count = 1 + static_cast<int>(unit(rng) * spec.max_occluders) %
                                      spec.max_occluders;
            for (int r = 0; r < count; ++r) {
                Rect rect;
                // rectangles never exceed the frame, whatever the size range says
                const int sw = std::min(
                    spec.width,
                    spec.occluder_min_size +
                        static_cast<int>(unit(rng) * (spec.occluder_max_size -
                                                      spec.occluder_min_size)));
                const int sh2 = std::min(
                    spec.height,
                    spec.occluder_min_size +
                        static_cast<int>(unit(rng) * (spec.occluder_max_size -
                                                      spec.occluder_min_size)));
                rect.x0 = static_cast<int>(unit(rng) * (spec.width - sw));
                rect.y0 = static_cast<int>(unit(rng) * (spec.height - sh2));
                rect.x1 = rect.x0 + sw;
                rect.y1 = rect.y0 + sh2;
                rect.color = Eigen::Vector3f(uniform(0.0f, 1.0f), uniform(0.0f, 1.0f),
                                             uniform(0.0f, 1.0f));
                paste_rect(img.pixels, mask, rect);
                rects_per_image[static_cast<size_t>(i)].push_back(rect);
            }
        }
        out.dataset.images.push_back(std::move(img));
        out.dataset.gt_masks.push_back(std::move(mask));
        out.dataset.gt_appearance.push_back(t);
    }

    // sparse points: Gaussian centers ...
    for (int i = 0; i < spec.n_gaussians; ++i) {
        out.dataset.points.points.push_back(cloud.positions[static_cast<size_t>(i)]);
        Eigen::Vector3f c;
        for (int ch = 0; ch < 3; ++ch)
            c[ch] = std::clamp(
                cloud.sh_of(i)[ch * k] * kShC0 + 0.5f, 0.0f, 1.0f);
        out.dataset.points.colors.push_back(c);
    }
    // ... plus noisy points placed inside occluder view frusta
    std::vector<int> occluded_images;
    for (int i = 0; i < spec.n_cameras; ++i)
        if (!rects_per_image[static_cast<size_t>(i)].empty()) occluded_images.push_back(i);
    const int n_noise = occluded_images.empty()
                            ? 0
                            : static_cast<int>(std::lround(spec.noise_point_fraction *
                                                           spec.n_gaussians));
    for (int j = 0; j < n_noise; ++j) {
        const int img_idx = occluded_images[static_cast<size_t>(
            static_cast<int>(unit(rng) * occluded_images.size()) %
            static_cast<int>(occluded_images.size()))];
        const auto& rects = rects_per_image[static_cast<size_t>(img_idx)];
        const Rect& rect =
            rects[static_cast<size_t>(static_cast<int>(unit(rng) * rects.size()) %
                                      static_cast<int>(rects.size()))];
        const Camera& cam = out.dataset.images[static_cast<size_t>(img_idx)].camera;
        const float px = uniform(static_cast<float>(rect.x0), static_cast<float>(rect.x1 - 1));
        const float py = uniform(static_cast<float>(rect.y0), static_cast<float>(rect.y1 - 1));
        const Eigen::Vector3f dir_cam((px - cam.cx) / cam.fx, (py - cam.cy) / cam.fy, 1.0f);
        const Eigen::Vector3f dir_world = cam.rot.transpose() * dir_cam;
        const float depth = uniform(3.0f, 5.0f);
        out.dataset.points.points.push_back(cam.position() + depth * dir_world);
        out.dataset.points.colors.push_back(rect.color);
    }
    out.n_noise_points = n_noise;
    return out;
}

std::string EvalReport::to_csv() const {
    std::ostringstream ss;
    ss << "id,psnr,ssim,psnr_masked\n";
    for (size_t i = 0; i < image_ids.size(); ++i)
        ss << image_ids[i] << ',' << psnr_values[i] << ',' << ssim_values[i] << ','
           << psnr_masked_values[i] << '\n';
    return ss.str();
}

EvalReport evaluate(TrainState& state, const Dataset& dataset) {
    EvalReport rep;
    double occ_sum = 0.0, occ_n = 0.0, stat_sum = 0.0, stat_n = 0.0;
    for (size_t i = 0; i < dataset.images.size(); ++i) {
        const WildImage& img = dataset.images[i];
        const Tensor gt = chw_to_hwc(img.pixels);
        Tensor rendered;
        Tensor pred_mask;
        if (state.config.vanilla) {
            rendered = render_cloud(state.cloud, img.camera, state.config.background);
        } else {
            const AppearanceOutput enc = encode_values(img.pixels, state.encoder);
            rendered = render_with_embedding(state, enc.embedding, img.camera);
            pred_mask = enc.mask_resized;
        }
        rep.image_ids.push_back(img.id);
        rep.psnr_values.push_back(psnr(rendered, gt));
        rep.ssim_values.push_back(ssim_value(rendered, gt));
        const bool have_gt_mask = i < dataset.gt_masks.size();
        if (have_gt_mask)
            rep.psnr_masked_values.push_back(psnr_masked(rendered, gt, dataset.gt_masks[i]));
        else
            rep.psnr_masked_values.push_back(rep.psnr_values.back());
        if (have_gt_mask && pred_mask.numel() > 0) {
            const Tensor& gm = dataset.gt_masks[i];
            for (int p = 0; p < gm.numel(); ++p) {
                const double inv = 1.0 - pred_mask[p];
                if (gm[p] < 0.5f) {
                    occ_sum += inv;
                    occ_n += 1.0;
                } else {
                    stat_sum += inv;
                    stat_n += 1.0;
                }
            }
        }
    }
    const size_t n = rep.image_ids.size();
    if (n > 0) {
        for (size_t i = 0; i < n; ++i) {
            rep.mean_psnr += rep.psnr_values[i] / n;
            rep.mean_ssim += rep.ssim_values[i] / n;
            rep.mean_psnr_masked += rep.psnr_masked_values[i] / n;
        }
    }
    if (occ_n > 0.0 && stat_n > 0.0)
        rep.mask_separation = static_cast<float>(occ_sum / occ_n - stat_sum / stat_n);
    return rep;
}

}  // namespace wildsplat
