// Copyright Contributors to the Wildsplat Project
// SPDX-License-Identifier: Apache-2.0
#include "wildsplat/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <vector>

namespace wildsplat {

namespace {

uint8_t to_u8(float v) {
    return static_cast<uint8_t>(std::clamp(std::lround(v * 255.0f), 0L, 255L));
}

void write_png(const std::string& path, const std::vector<uint8_t>& pixels, int w, int h,
               bool gray) {
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(w);
    img.height = static_cast<png_uint_32>(h);
    img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, path.c_str(), 0, pixels.data(), 0, nullptr))
        throw std::runtime_error("png: failed to write '" + path + "': " + img.message);
}

std::vector<uint8_t> read_png(const std::string& path, int& w, int& h, bool gray) {
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str()))
        throw std::runtime_error("png: failed to open '" + path + "': " + img.message);
    img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    std::vector<uint8_t> pixels(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, pixels.data(), 0, nullptr))
        throw std::runtime_error("png: failed to read '" + path + "': " + img.message);
    w = static_cast<int>(img.width);
    h = static_cast<int>(img.height);
    return pixels;
}

}  // namespace

void write_png_rgb(const Tensor& image, const std::string& path) {
    if (image.ndim() != 3 || image.shape[2] != 3)
        throw std::invalid_argument("write_png_rgb: expected [H,W,3], got " +
                                    shape_str(image.shape));
    const int h = image.shape[0], w = image.shape[1];
    std::vector<uint8_t> px(static_cast<size_t>(h) * w * 3);
    for (size_t i = 0; i < px.size(); ++i) px[i] = to_u8(image.data[i]);
    write_png(path, px, w, h, false);
}

void write_png_gray(const Tensor& map, const std::string& path) {
    Shape s = map.shape;
    int h, w;
    if (s.size() == 2) {
        h = s[0];
        w = s[1];
    } else if (s.size() == 3 && s[0] == 1) {
        h = s[1];
        w = s[2];
    } else {
        throw std::invalid_argument("write_png_gray: expected [H,W] or [1,H,W], got " +
                                    shape_str(s));
    }
    std::vector<uint8_t> px(static_cast<size_t>(h) * w);
    for (size_t i = 0; i < px.size(); ++i) px[i] = to_u8(map.data[i]);
    write_png(path, px, w, h, true);
}

Tensor read_png_rgb(const std::string& path) {
    int w, h;
    const auto px = read_png(path, w, h, false);
    Tensor out({h, w, 3});
    for (size_t i = 0; i < px.size(); ++i) out.data[i] = px[i] / 255.0f;
    return out;
}

Tensor read_png_gray(const std::string& path) {
    int w, h;
    const auto px = read_png(path, w, h, true);
    Tensor out({h, w});
    for (size_t i = 0; i < px.size(); ++i) out.data[i] = px[i] / 255.0f;
    return out;
}

Tensor hwc_to_chw(const Tensor& image) {
    const int h = image.shape[0], w = image.shape[1], c = image.shape[2];
    Tensor out({c, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch)
                out.at3(ch, y, x) = image.data[(static_cast<size_t>(y) * w + x) * c + ch];
    return out;
}

Tensor chw_to_hwc(const Tensor& image) {
    const int c = image.shape[0], h = image.shape[1], w = image.shape[2];
    Tensor out({h, w, c});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch)
                out.data[(static_cast<size_t>(y) * w + x) * c + ch] = image.at3(ch, y, x);
    return out;
}

}  // namespace wildsplat
