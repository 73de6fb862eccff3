// Copyright Contributors to the Wildsplat Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>
#include <vector>

#include "wildsplat/geometry.hpp"
#include "wildsplat/tensor.hpp"

namespace wildsplat {

inline constexpr int kFeatureChannels = 32;   // width of the primary feature map
inline constexpr int kEmbeddingDim = 16;

struct WildImage {
    int id = 0;
    Tensor pixels;   // [3,H,W] in [0,1]
    Camera camera;
};

/// Joint appearance-embedding / static-mask network.
/// enc1: 3 convs (x4 spatial downsample) -> F
/// attn_mlp: shared 2-layer MLP over pooled channel statistics
/// unet: 2 convs down + 2 transpose convs up -> 1-channel mask logits
/// enc2: 3 stride-1 convs + global average pool + linear head -> embedding
struct EncoderParams {
    // enc1 (theta1)
    Param e1_w1, e1_b1, e1_w2, e1_b2, e1_w3, e1_b3;
    // channel attention MLP (theta2)
    Param at_w1, at_b1, at_w2, at_b2;
    // spatial attention U-Net (theta3)
    Param un_w1, un_b1, un_w2, un_b2, un_tw1, un_tb1, un_tw2, un_tb2;
    // enc2 + embedding head (theta4)
    Param e2_w1, e2_b1, e2_w2, e2_b2, e2_w3, e2_b3, head_w, head_b;

    static EncoderParams init(std::mt19937& rng);
    std::vector<Param*> all();
    std::vector<Param*> theta1();
    std::vector<Param*> theta2();
    std::vector<Param*> theta3();
    std::vector<Param*> theta4();
};

struct EncodeResult {
    Var embedding;      // [D_l]
    Var mask_small;     // [1,H/4,W/4] in (0,1)
    Var mask_resized;   // [H,W] in (0,1), aligned with the input image
};

/// Full forward pass of the joint module. Images whose extents are not
/// divisible by 4 are reflect-padded internally; outputs are cropped back.
/// style_mode forces the mask to zero so the embedding sees the whole frame.
EncodeResult encode(Tape& tape, const Tensor& image_chw, EncoderParams& params,
                    bool style_mode = false);

/// Value-only convenience: runs encode on a private tape and returns copies.
struct AppearanceOutput {
    Tensor embedding;
    Tensor mask_small;
    Tensor mask_resized;
};
AppearanceOutput encode_values(const Tensor& image_chw, EncoderParams& params,
                               bool style_mode = false);

}  // namespace wildsplat
