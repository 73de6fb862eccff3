// Copyright Contributors to the Wildsplat Project
// SPDX-License-Identifier: Apache-2.0
#include "wildsplat/dataset.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "wildsplat/image_io.hpp"

namespace fs = std::filesystem;

namespace wildsplat {

std::string image_file_name(int id) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%05d.png", id);
    return buf;
}

int Dataset::find_image(int id) const {
    for (size_t i = 0; i < images.size(); ++i)
        if (images[i].id == id) return static_cast<int>(i);
    return -1;
}

std::vector<std::pair<int, Camera>> read_cameras_text(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::vector<std::pair<int, Camera>> cams;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        int id = 0;
        Camera cam;
        ss >> id >> cam.fx >> cam.fy >> cam.cx >> cam.cy >> cam.width >> cam.height;
        float m[12];
        for (float& v : m) ss >> v;
        if (!ss)
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": expected id + 6 intrinsics + 12 transform values");
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) cam.rot(r, c) = m[r * 4 + c];
            cam.trans[r] = m[r * 4 + 3];
        }
        cam.validate();
        cams.emplace_back(id, cam);
    }
    return cams;
}

void write_cameras_text(const std::vector<std::pair<int, Camera>>& cams,
                        const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path);
    f.precision(9);
    for (const auto& [id, cam] : cams) {
        f << id << ' ' << cam.fx << ' ' << cam.fy << ' ' << cam.cx << ' ' << cam.cy << ' '
          << cam.width << ' ' << cam.height;
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) f << ' ' << cam.rot(r, c);
            f << ' ' << cam.trans[r];
        }
        f << '\n';
    }
}

namespace {

std::vector<AppearanceTransform> read_appearance_text(const std::string& path,
                                                      const std::vector<WildImage>& images) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::vector<AppearanceTransform> out(images.size());
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        int id = 0;
        AppearanceTransform t;
        ss >> id;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) ss >> t.gain(r, c);
        for (int r = 0; r < 3; ++r) ss >> t.bias[r];
        if (!ss)
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": expected id + 9 gain + 3 bias values");
        bool found = false;
        for (size_t i = 0; i < images.size(); ++i)
            if (images[i].id == id) {
                out[i] = t;
                found = true;
            }
        if (!found)
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": unknown image id " + std::to_string(id));
    }
    return out;
}

void write_appearance_text(const std::vector<AppearanceTransform>& transforms,
                           const std::vector<WildImage>& images, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path);
    f.precision(9);
    for (size_t i = 0; i < images.size(); ++i) {
        const AppearanceTransform& t = transforms[i];
        f << images[i].id;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) f << ' ' << t.gain(r, c);
        for (int r = 0; r < 3; ++r) f << ' ' << t.bias[r];
        f << '\n';
    }
}

}  // namespace

Dataset load_dataset(const std::string& dir) {
    Dataset ds;
    const auto cams = read_cameras_text(dir + "/cameras.txt");
    if (cams.empty()) throw std::runtime_error(dir + "/cameras.txt: no cameras");
    for (const auto& [id, cam] : cams) {
        const std::string img_path = dir + "/images/" + image_file_name(id);
        WildImage img;
        img.id = id;
        img.camera = cam;
        img.pixels = hwc_to_chw(read_png_rgb(img_path));
        if (img.pixels.shape[1] != cam.height || img.pixels.shape[2] != cam.width)
            throw std::runtime_error(img_path + ": size does not match camera " +
                                     std::to_string(id));
        ds.images.push_back(std::move(img));
    }
    ds.points = read_points_text(dir + "/points.txt");
    if (fs::exists(dir + "/gt_masks")) {
        for (const WildImage& img : ds.images) {
            Tensor m = read_png_gray(dir + "/gt_masks/" + image_file_name(img.id));
            if (m.shape[0] != img.camera.height || m.shape[1] != img.camera.width)
                throw std::runtime_error("gt mask size mismatch for image " +
                                         std::to_string(img.id));
            ds.gt_masks.push_back(std::move(m));
        }
    }
    if (fs::exists(dir + "/gt_appearance.txt"))
        ds.gt_appearance = read_appearance_text(dir + "/gt_appearance.txt", ds.images);
    return ds;
}

void save_dataset(const Dataset& ds, const std::string& dir) {
    fs::create_directories(dir + "/images");
    std::vector<std::pair<int, Camera>> cams;
    for (const WildImage& img : ds.images) {
        cams.emplace_back(img.id, img.camera);
        write_png_rgb(chw_to_hwc(img.pixels), dir + "/images/" + image_file_name(img.id));
    }
    write_cameras_text(cams, dir + "/cameras.txt");
    write_points_text(ds.points, dir + "/points.txt");
    if (!ds.gt_masks.empty()) {
        if (ds.gt_masks.size() != ds.images.size())
            throw std::invalid_argument("save_dataset: mask/image count mismatch");
        fs::create_directories(dir + "/gt_masks");
        for (size_t i = 0; i < ds.images.size(); ++i)
            write_png_gray(ds.gt_masks[i], dir + "/gt_masks/" + image_file_name(ds.images[i].id));
    }
    if (!ds.gt_appearance.empty())
        write_appearance_text(ds.gt_appearance, ds.images, dir + "/gt_appearance.txt");
}

}  // namespace wildsplat
