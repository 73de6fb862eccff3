// Copyright Contributors to the Wildsplat Project
// SPDX-License-Identifier: Apache-2.0
#include "wildsplat/encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace wildsplat {

namespace {

Tensor uniform_init(Shape shape, int fan_in, std::mt19937& rng) {
    Tensor t(std::move(shape));
    const float limit = std::sqrt(6.0f / static_cast<float>(fan_in));
    std::uniform_real_distribution<float> dist(-limit, limit);
    for (float& v : t.data) v = dist(rng);
    return t;
}

Param conv_param(int out_c, int in_c, int k, std::mt19937& rng, const char* name) {
    return Param(uniform_init({out_c, in_c, k, k}, in_c * k * k, rng), name);
}

Param linear_param(int in_w, int out_w, std::mt19937& rng, const char* name) {
    return Param(uniform_init({in_w, out_w}, in_w, rng), name);
}

}  // namespace

EncoderParams EncoderParams::init(std::mt19937& rng) {
    const int c = kFeatureChannels;
    EncoderParams p;
    p.e1_w1 = conv_param(16, 3, 4, rng, "enc1.w1");
    p.e1_b1 = Param(Tensor({16}), "enc1.b1");
    p.e1_w2 = conv_param(c, 16, 4, rng, "enc1.w2");
    p.e1_b2 = Param(Tensor({c}), "enc1.b2");
    p.e1_w3 = conv_param(c, c, 3, rng, "enc1.w3");
    p.e1_b3 = Param(Tensor({c}), "enc1.b3");
    const int hidden = c / 4;
    p.at_w1 = linear_param(c, hidden, rng, "attn.w1");
    p.at_b1 = Param(Tensor({hidden}), "attn.b1");
    p.at_w2 = linear_param(hidden, c, rng, "attn.w2");
    p.at_b2 = Param(Tensor({c}), "attn.b2");
    p.un_w1 = conv_param(16, c, 4, rng, "unet.w1");
    p.un_b1 = Param(Tensor({16}), "unet.b1");
    p.un_w2 = conv_param(16, 16, 4, rng, "unet.w2");
    p.un_b2 = Param(Tensor({16}), "unet.b2");
    p.un_tw1 = Param(uniform_init({16, 16, 2, 2}, 16 * 4, rng), "unet.tw1");
    p.un_tb1 = Param(Tensor({16}), "unet.tb1");
    p.un_tw2 = Param(uniform_init({16, 1, 2, 2}, 16 * 4, rng), "unet.tw2");
    p.un_tb2 = Param(Tensor({1}), "unet.tb2");
    p.e2_w1 = conv_param(c, c, 3, rng, "enc2.w1");
    p.e2_b1 = Param(Tensor({c}), "enc2.b1");
    p.e2_w2 = conv_param(c, c, 3, rng, "enc2.w2");
    p.e2_b2 = Param(Tensor({c}), "enc2.b2");
    p.e2_w3 = conv_param(c, c, 3, rng, "enc2.w3");
    p.e2_b3 = Param(Tensor({c}), "enc2.b3");
    p.head_w = linear_param(c, kEmbeddingDim, rng, "head.w");
    p.head_b = Param(Tensor({kEmbeddingDim}), "head.b");
    return p;
}

std::vector<Param*> EncoderParams::all() {
    std::vector<Param*> out;
    for (const auto& group : {theta1(), theta2(), theta3(), theta4()})
        out.insert(out.end(), group.begin(), group.end());
    return out;
}

std::vector<Param*> EncoderParams::theta1() {
    return {&e1_w1, &e1_b1, &e1_w2, &e1_b2, &e1_w3, &e1_b3};
}
std::vector<Param*> EncoderParams::theta2() { return {&at_w1, &at_b1, &at_w2, &at_b2}; }
std::vector<Param*> EncoderParams::theta3() {
    return {&un_w1, &un_b1, &un_w2, &un_b2, &un_tw1, &un_tb1, &un_tw2, &un_tb2};
}
std::vector<Param*> EncoderParams::theta4() {
    return {&e2_w1, &e2_b1, &e2_w2, &e2_b2, &e2_w3, &e2_b3, &head_w, &head_b};
}

EncodeResult encode(Tape& tape, const Tensor& image_chw, EncoderParams& params,
                    bool style_mode) {
    if (image_chw.ndim() != 3 || image_chw.shape[0] != 3)
        throw std::invalid_argument("encode: expected a [3,H,W] image, got " +
                                    shape_str(image_chw.shape));
    const int h = image_chw.shape[1], w = image_chw.shape[2];
    // stride-2 k4 p1 convolutions halve even extents exactly
    const int pad_b = (4 - h % 4) % 4, pad_r = (4 - w % 4) % 4;
    const Tensor padded = reflect_pad_chw(image_chw, pad_b, pad_r);
    const int hp = h + pad_b, wp = w + pad_r;

    Var img = tape.constant(padded);
    auto conv_block = [&](Var x, Param& wgt, Param& bias, int stride) {
        return relu(channel_bias(conv2d(x, tape.param(wgt), stride, 1), tape.param(bias)));
    };

    // Enc1: x4 downsample
    Var f = conv_block(img, params.e1_w1, params.e1_b1, 2);
    f = conv_block(f, params.e1_w2, params.e1_b2, 2);
    f = conv_block(f, params.e1_w3, params.e1_b3, 1);
    const int hq = tape.value(f).shape[1], wq = tape.value(f).shape[2];

    // channel attention from pooled statistics through the shared MLP
    Var aw1 = tape.param(params.at_w1), ab1 = tape.param(params.at_b1);
    Var aw2 = tape.param(params.at_w2), ab2 = tape.param(params.at_b2);
    auto attn_branch = [&](PoolMode mode) {
        Var pooled = reshape(pool_spatial(f, mode), {1, kFeatureChannels});
        return linear(relu(linear(pooled, aw1, ab1)), aw2, ab2);
    };
    Var a = sigmoid(reshape(add(attn_branch(PoolMode::Avg), attn_branch(PoolMode::Max)),
                            {kFeatureChannels}));
    Var f_ref = channel_scale(f, a);  // F'

    EncodeResult out;
    Var fused;  // F'' + F
    if (style_mode) {
        // transient mask forced to zero: the embedding sees the whole frame
        out.mask_small = tape.constant(Tensor({1, hq, wq}));
        out.mask_resized = tape.constant(Tensor({h, w}));
        fused = f;
    } else {
        Var u = conv_block(f_ref, params.un_w1, params.un_b1, 2);
        u = conv_block(u, params.un_w2, params.un_b2, 2);
        u = relu(channel_bias(conv_transpose2d(u, tape.param(params.un_tw1), 2),
                              tape.param(params.un_tb1)));
        u = channel_bias(conv_transpose2d(u, tape.param(params.un_tw2), 2),
                         tape.param(params.un_tb2));
        Var mask = sigmoid(crop2d(u, hq, wq));
        out.mask_small = mask;
        Var resized = resize_bilinear(mask, hp, wp);
        out.mask_resized = reshape(crop2d(resized, h, w), {h, w});
        fused = add(spatial_scale(f_ref, mask), f);  // M (x) F' + F
    }

    // Enc2 + head
    Var g = conv_block(fused, params.e2_w1, params.e2_b1, 1);
    g = conv_block(g, params.e2_w2, params.e2_b2, 1);
    g = conv_block(g, params.e2_w3, params.e2_b3, 1);
    Var pooled = reshape(pool_spatial(g, PoolMode::Avg), {1, kFeatureChannels});
    out.embedding =
        reshape(linear(pooled, tape.param(params.head_w), tape.param(params.head_b)),
                {kEmbeddingDim});
    return out;
}

AppearanceOutput encode_values(const Tensor& image_chw, EncoderParams& params, bool style_mode) {
    Tape tape;
    const EncodeResult r = encode(tape, image_chw, params, style_mode);
    AppearanceOutput out;
    out.embedding = tape.value(r.embedding);
    out.mask_small = tape.value(r.mask_small);
    out.mask_resized = tape.value(r.mask_resized);
    return out;
}

}  // namespace wildsplat
