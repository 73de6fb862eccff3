// Copyright Contributors to the Wildsplat Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "wildsplat/tensor.hpp"

namespace wildsplat {

/// Writes an [H,W,3] float image in [0,1] as 8-bit RGB PNG.
void write_png_rgb(const Tensor& image, const std::string& path);
/// Writes an [H,W] or [1,H,W] float map in [0,1] as 8-bit grayscale PNG.
void write_png_gray(const Tensor& map, const std::string& path);

/// Reads an 8-bit PNG into an [H,W,3] float image in [0,1] (grayscale expanded).
Tensor read_png_rgb(const std::string& path);
/// Reads an 8-bit PNG as a single-channel [H,W] float map in [0,1].
Tensor read_png_gray(const std::string& path);

/// [H,W,3] -> [3,H,W] and back (the encoder consumes CHW).
Tensor hwc_to_chw(const Tensor& image);
Tensor chw_to_hwc(const Tensor& image);

}  // namespace wildsplat
