// Copyright Contributors to the Wildsplat Project
// SPDX-License-Identifier: Apache-2.0
#include "wildsplat/cloud.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "wildsplat/geometry.hpp"

namespace wildsplat {

namespace {

float sigmoidf(float x) { return 1.0f / (1.0f + std::exp(-x)); }

void append_f32(std::vector<uint8_t>& out, float v) {
    uint8_t b[4];
    std::memcpy(b, &v, 4);  // little-endian host assumed
    out.insert(out.end(), b, b + 4);
}

}  // namespace

float GaussianCloud::opacity(int i) const { return sigmoidf(opacity_logits[static_cast<size_t>(i)]); }

Eigen::Vector3f GaussianCloud::scales(int i) const {
    return log_scales[static_cast<size_t>(i)].array().exp();
}

void GaussianCloud::reset_stats() {
    grad2d_accum.assign(static_cast<size_t>(count()), 0.0f);
    obs_count.assign(static_cast<size_t>(count()), 0);
}

void GaussianCloud::check_invariants() const {
    const size_t n = positions.size();
    if (rotations.size() != n || log_scales.size() != n || opacity_logits.size() != n ||
        sh.size() != n * static_cast<size_t>(sh_stride()))
        throw std::runtime_error("cloud: array extents disagree");
    if (degree < 0 || degree > 3) throw std::runtime_error("cloud: unsupported SH degree");
    for (size_t i = 0; i < n; ++i) {
        if (!positions[i].allFinite() || !rotations[i].allFinite() || !log_scales[i].allFinite() ||
            !std::isfinite(opacity_logits[i]))
            throw std::runtime_error("cloud: non-finite attribute at Gaussian " +
                                     std::to_string(i));
    }
    for (float v : sh)
        if (!std::isfinite(v)) throw std::runtime_error("cloud: non-finite SH coefficient");
}

float GaussianCloud::scene_extent() const {
    if (count() == 0) return 0.0f;
    Eigen::Vector3f c = Eigen::Vector3f::Zero();
    for (const auto& p : positions) c += p;
    c /= static_cast<float>(count());
    float r = 0.0f;
    for (const auto& p : positions) r = std::max(r, (p - c).norm());
    return r;
}

GaussianCloud init_from_points(const SparsePointSet& pts, int degree) {
    const int m = static_cast<int>(pts.points.size());
    if (m == 0) throw std::invalid_argument("init_from_points: empty point set");
    if (pts.colors.size() != pts.points.size())
        throw std::invalid_argument("init_from_points: color count mismatch");
    GaussianCloud c;
    c.degree = degree;
    c.positions = pts.points;
    c.rotations.assign(static_cast<size_t>(m), Eigen::Vector4f(1, 0, 0, 0));
    c.opacity_logits.assign(static_cast<size_t>(m), std::log(0.1f / 0.9f));
    c.sh.assign(static_cast<size_t>(m) * c.sh_stride(), 0.0f);
    for (int i = 0; i < m; ++i) {
        float* s = c.sh_of(i);
        const int k = c.coeffs_per_channel();
        for (int ch = 0; ch < 3; ++ch) s[ch * k] = (pts.colors[static_cast<size_t>(i)][ch] - 0.5f) / kShC0;
    }
    // isotropic scale from the mean distance to the 3 nearest neighbors (brute force)
    c.log_scales.resize(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) {
        float best[3] = {std::numeric_limits<float>::max(), std::numeric_limits<float>::max(),
                         std::numeric_limits<float>::max()};
        for (int j = 0; j < m; ++j) {
            if (j == i) continue;
            const float d = (pts.points[static_cast<size_t>(i)] - pts.points[static_cast<size_t>(j)]).norm();
            if (d < best[0]) { best[2] = best[1]; best[1] = best[0]; best[0] = d; }
            else if (d < best[1]) { best[2] = best[1]; best[1] = d; }
            else if (d < best[2]) { best[2] = d; }
        }
        float mean_d;
        if (m == 1) mean_d = 0.1f;
        else if (m == 2) mean_d = best[0];
        else if (m == 3) mean_d = 0.5f * (best[0] + best[1]);
        else mean_d = (best[0] + best[1] + best[2]) / 3.0f;
        mean_d = std::max(mean_d, 1e-7f);
        c.log_scales[static_cast<size_t>(i)].setConstant(std::log(mean_d));
    }
    c.reset_stats();
    c.tags.assign(static_cast<size_t>(m), 0);
    return c;
}

// ---------------------------------------------------------------- PLY

std::vector<uint8_t> write_ply(const GaussianCloud& cloud) {
    const int n = cloud.count();
    const int rest = cloud.sh_stride() - 3;
    std::ostringstream h;
    h << "ply\nformat binary_little_endian 1.0\nelement vertex " << n << "\n";
    const char* base[] = {"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"};
    for (const char* p : base) h << "property float " << p << "\n";
    for (int i = 0; i < rest; ++i) h << "property float f_rest_" << i << "\n";
    h << "property float opacity\n";
    for (int i = 0; i < 3; ++i) h << "property float scale_" << i << "\n";
    for (int i = 0; i < 4; ++i) h << "property float rot_" << i << "\n";
    h << "end_header\n";

    std::vector<uint8_t> out;
    const std::string header = h.str();
    out.insert(out.end(), header.begin(), header.end());
    out.reserve(out.size() + static_cast<size_t>(n) * (17 + cloud.sh_stride()) * 4);
    const int k = cloud.coeffs_per_channel();
    for (int i = 0; i < n; ++i) {
        for (int d = 0; d < 3; ++d) append_f32(out, cloud.positions[static_cast<size_t>(i)][d]);
        for (int d = 0; d < 3; ++d) append_f32(out, 0.0f);
        const float* s = cloud.sh_of(i);
        for (int ch = 0; ch < 3; ++ch) append_f32(out, s[ch * k]);          // f_dc
        for (int ch = 0; ch < 3; ++ch)                                      // f_rest, channel-major
            for (int c = 1; c < k; ++c) append_f32(out, s[ch * k + c]);
        append_f32(out, cloud.opacity_logits[static_cast<size_t>(i)]);
        for (int d = 0; d < 3; ++d) append_f32(out, cloud.log_scales[static_cast<size_t>(i)][d]);
        for (int d = 0; d < 4; ++d) append_f32(out, cloud.rotations[static_cast<size_t>(i)][d]);
    }
    return out;
}

GaussianCloud read_ply(const std::vector<uint8_t>& bytes) {
    const std::string magic(bytes.begin(), bytes.begin() + std::min<size_t>(4, bytes.size()));
    if (magic != "ply\n") throw std::runtime_error("ply: missing magic");
    // find end_header
    const std::string hdr_end = "end_header\n";
    const auto it = std::search(bytes.begin(), bytes.end(), hdr_end.begin(), hdr_end.end());
    if (it == bytes.end()) throw std::runtime_error("ply: header not terminated");
    const size_t body = static_cast<size_t>(it - bytes.begin()) + hdr_end.size();
    std::istringstream hs(std::string(bytes.begin(), it));

    std::string line;
    int n = -1;
    std::vector<std::string> props;
    bool binary_le = false;
    while (std::getline(hs, line)) {
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt != "binary_little_endian")
                throw std::runtime_error("ply: unsupported encoding '" + fmt + "'");
            binary_le = true;
        } else if (tok == "element") {
            std::string name;
            ls >> name >> n;
            if (name != "vertex") throw std::runtime_error("ply: unexpected element '" + name + "'");
        } else if (tok == "property") {
            std::string type, name;
            ls >> type >> name;
            if (type != "float") throw std::runtime_error("ply: unsupported property type '" + type + "'");
            props.push_back(name);
        }
    }
    if (!binary_le) throw std::runtime_error("ply: unsupported encoding (not binary_little_endian)");
    if (n < 0) throw std::runtime_error("ply: missing vertex element");

    // determine SH layout from the f_rest_* count
    int rest = 0;
    for (const auto& p : props)
        if (p.rfind("f_rest_", 0) == 0) ++rest;
    if (rest % 3 != 0) throw std::runtime_error("ply: f_rest count not divisible by 3");
    const int k = rest / 3 + 1;
    int degree = -1;
    for (int l = 0; l <= 3; ++l)
        if ((l + 1) * (l + 1) == k) degree = l;
    if (degree < 0) throw std::runtime_error("ply: f_rest count does not match any SH degree");

    // exact expected property order
    std::vector<std::string> expect = {"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"};
    for (int i = 0; i < rest; ++i) expect.push_back("f_rest_" + std::to_string(i));
    expect.push_back("opacity");
    for (int i = 0; i < 3; ++i) expect.push_back("scale_" + std::to_string(i));
    for (int i = 0; i < 4; ++i) expect.push_back("rot_" + std::to_string(i));
    if (props.size() != expect.size())
        throw std::runtime_error("ply: expected " + std::to_string(expect.size()) +
                                 " properties, found " + std::to_string(props.size()));
    for (size_t i = 0; i < props.size(); ++i)
        if (props[i] != expect[i])
            throw std::runtime_error("ply: unexpected property '" + props[i] + "' (wanted '" +
                                     expect[i] + "')");

    const size_t stride = props.size() * 4;
    if (bytes.size() < body + stride * static_cast<size_t>(n))
        throw std::runtime_error("ply: truncated vertex data");

    GaussianCloud c;
    c.degree = degree;
    c.positions.resize(static_cast<size_t>(n));
    c.rotations.resize(static_cast<size_t>(n));
    c.log_scales.resize(static_cast<size_t>(n));
    c.opacity_logits.resize(static_cast<size_t>(n));
    c.sh.resize(static_cast<size_t>(n) * 3 * k);
    for (int i = 0; i < n; ++i) {
        const uint8_t* row = bytes.data() + body + stride * static_cast<size_t>(i);
        auto f = [&](int idx) {
            float v;
            std::memcpy(&v, row + idx * 4, 4);
            return v;
        };
        c.positions[static_cast<size_t>(i)] = {f(0), f(1), f(2)};
        float* s = c.sh_of(i);
        for (int ch = 0; ch < 3; ++ch) s[ch * k] = f(6 + ch);
        int idx = 9;
        for (int ch = 0; ch < 3; ++ch)
            for (int cc = 1; cc < k; ++cc) s[ch * k + cc] = f(idx++);
        c.opacity_logits[static_cast<size_t>(i)] = f(idx++);
        c.log_scales[static_cast<size_t>(i)] = {f(idx), f(idx + 1), f(idx + 2)};
        idx += 3;
        c.rotations[static_cast<size_t>(i)] = {f(idx), f(idx + 1), f(idx + 2), f(idx + 3)};
    }
    c.reset_stats();
    c.tags.assign(static_cast<size_t>(n), 0);
    return c;
}

void write_ply_file(const GaussianCloud& cloud, const std::string& path) {
    const auto bytes = write_ply(cloud);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("ply: cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

GaussianCloud read_ply_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("ply: cannot open '" + path + "'");
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
    return read_ply(bytes);
}

// ---------------------------------------------------------------- density control

GaussianCloud densify_and_prune(const GaussianCloud& cloud, const DensifyConfig& cfg,
                                float scene_extent, std::mt19937& rng,
                                std::vector<int>* kept_src) {
    const int n = cloud.count();
    GaussianCloud out;
    out.degree = cloud.degree;
    if (kept_src) kept_src->clear();
    std::normal_distribution<float> gauss(0.0f, 1.0f);

    auto copy_row = [&](const GaussianCloud& src, int i, int adam_src) {
        out.positions.push_back(src.positions[static_cast<size_t>(i)]);
        out.rotations.push_back(src.rotations[static_cast<size_t>(i)]);
        out.log_scales.push_back(src.log_scales[static_cast<size_t>(i)]);
        out.opacity_logits.push_back(src.opacity_logits[static_cast<size_t>(i)]);
        const float* s = src.sh_of(i);
        out.sh.insert(out.sh.end(), s, s + src.sh_stride());
        out.tags.push_back(src.tags.empty() ? 0 : src.tags[static_cast<size_t>(i)]);
        if (kept_src) kept_src->push_back(adam_src);
    };

    const float split_at = cfg.scale_threshold_rel * scene_extent;
    for (int i = 0; i < n; ++i) {
        if (cloud.opacity(i) < cfg.min_opacity) continue;  // prune
        const float mean_grad = cloud.obs_count[static_cast<size_t>(i)] > 0
                                    ? cloud.grad2d_accum[static_cast<size_t>(i)] /
                                          static_cast<float>(cloud.obs_count[static_cast<size_t>(i)])
                                    : 0.0f;
        const float max_scale = cloud.scales(i).maxCoeff();
        if (mean_grad > cfg.grad_threshold && max_scale >= split_at) {
            // split: two children sampled from the Gaussian, scales shrunk
            const Eigen::Matrix3f rot = quat_to_rot(cloud.rotations[static_cast<size_t>(i)]);
            const Eigen::Vector3f s = cloud.scales(i);
            const Eigen::Vector3f new_log =
                cloud.log_scales[static_cast<size_t>(i)].array() - std::log(cfg.split_scale_shrink);
            for (int child = 0; child < 2; ++child) {
                Eigen::Vector3f eps(gauss(rng), gauss(rng), gauss(rng));
                const Eigen::Vector3f p =
                    cloud.positions[static_cast<size_t>(i)] + rot * (s.cwiseProduct(eps));
                copy_row(cloud, i, -1);
                out.positions.back() = p;
                out.log_scales.back() = new_log;
            }
        } else if (mean_grad > cfg.grad_threshold) {
            // clone: keep the original (with its optimizer state) plus a copy
            copy_row(cloud, i, i);
            copy_row(cloud, i, -1);
        } else {
            copy_row(cloud, i, i);
        }
    }
    out.reset_stats();
    return out;
}

void reset_opacity(GaussianCloud& cloud, float ceiling) {
    const float cap = std::log(ceiling / (1.0f - ceiling));
    for (float& l : cloud.opacity_logits) l = std::min(l, cap);
}

// ---------------------------------------------------------------- point parsers

SparsePointSet read_points_text(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("points: cannot open '" + path + "'");
    SparsePointSet out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        float x, y, z, r, g, b;
        if (!(ls >> x >> y >> z >> r >> g >> b))
            throw std::runtime_error("points: malformed line '" + line + "'");
        out.points.emplace_back(x, y, z);
        out.colors.emplace_back(r, g, b);
    }
    if (out.points.empty()) throw std::runtime_error("points: '" + path + "' holds no points");
    return out;
}

void write_points_text(const SparsePointSet& pts, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("points: cannot open '" + path + "' for writing");
    for (size_t i = 0; i < pts.points.size(); ++i) {
        const auto& p = pts.points[i];
        const auto& c = pts.colors[i];
        f << p.x() << " " << p.y() << " " << p.z() << " " << c.x() << " " << c.y() << " "
          << c.z() << "\n";
    }
}

SparsePointSet read_colmap_points3d(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("points3D: cannot open '" + path + "'");
    SparsePointSet out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        long long id;
        double x, y, z;
        int r, g, b;
        double err;
        if (!(ls >> id >> x >> y >> z >> r >> g >> b >> err))
            throw std::runtime_error("points3D: malformed line '" + line.substr(0, 60) + "'");
        out.points.emplace_back(static_cast<float>(x), static_cast<float>(y),
                                static_cast<float>(z));
        out.colors.emplace_back(r / 255.0f, g / 255.0f, b / 255.0f);
    }
    if (out.points.empty()) throw std::runtime_error("points3D: '" + path + "' holds no points");
    return out;
}

}  // namespace wildsplat
