// Copyright Contributors to the Wildsplat Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "wildsplat/cloud.hpp"
#include "wildsplat/encoder.hpp"

namespace wildsplat {

/// Ground-truth per-image affine color transform (used by the synthetic
/// generator and by evaluation; real datasets have none).
struct AppearanceTransform {
    Eigen::Matrix3f gain = Eigen::Matrix3f::Identity();
    Eigen::Vector3f bias = Eigen::Vector3f::Zero();
};

/// On-disk layout: images/<id>.png, cameras.txt, points.txt, and optionally
/// gt_masks/<id>.png (white = static) and gt_appearance.txt.
struct Dataset {
    std::vector<WildImage> images;           // pixels [3,H,W]
    std::vector<Tensor> gt_masks;            // [H,W] in [0,1]; empty when absent
    std::vector<AppearanceTransform> gt_appearance;  // empty when absent
    SparsePointSet points;

    int find_image(int id) const;  // index, or -1
};

Dataset load_dataset(const std::string& dir);
void save_dataset(const Dataset& ds, const std::string& dir);

std::string image_file_name(int id);

// cameras.txt: one line per camera,
// "id fx fy cx cy W H r00 r01 r02 tx r10 r11 r12 ty r20 r21 r22 tz".
std::vector<std::pair<int, Camera>> read_cameras_text(const std::string& path);
void write_cameras_text(const std::vector<std::pair<int, Camera>>& cams,
                        const std::string& path);

}  // namespace wildsplat
