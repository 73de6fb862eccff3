// Copyright Contributors to the Wildsplat Project
// SPDX-License-Identifier: Apache-2.0
#include "wildsplat/transfer.hpp"

#include <cmath>
#include <stdexcept>

namespace wildsplat {

namespace {

constexpr int kHidden = 64;

Tensor he_uniform(Shape shape, int fan_in, std::mt19937& rng) {
    Tensor t(std::move(shape));
    const float limit = std::sqrt(6.0f / static_cast<float>(fan_in));
    std::uniform_real_distribution<float> dist(-limit, limit);
    for (float& v : t.data) v = dist(rng);
    return t;
}

}  // namespace

int TransferParams::input_width(int degree) {
    const int sh_w = output_width(degree) * (1 + 2 * kShEncodingFreqs);
    const int mu_w = 3 * (1 + 2 * kPosEncodingFreqs);
    return sh_w + mu_w + kEmbeddingDim;
}

TransferParams TransferParams::init(std::mt19937& rng, int degree) {
    const int in_w = input_width(degree), out_w = output_width(degree);
    TransferParams p;
    p.w1 = Param(he_uniform({in_w, kHidden}, in_w, rng), "transfer.w1");
    p.b1 = Param(Tensor({kHidden}), "transfer.b1");
    p.w2 = Param(he_uniform({kHidden, kHidden}, kHidden, rng), "transfer.w2");
    p.b2 = Param(Tensor({kHidden}), "transfer.b2");
    p.w3 = Param(he_uniform({kHidden, kHidden}, kHidden, rng), "transfer.w3");
    p.b3 = Param(Tensor({kHidden}), "transfer.b3");
    p.w4 = Param(Tensor({kHidden, out_w}), "transfer.w4");  // zero: start at identity
    p.b4 = Param(Tensor({out_w}), "transfer.b4");
    return p;
}

std::vector<Param*> TransferParams::all() {
    return {&w1, &b1, &w2, &b2, &w3, &b3, &w4, &b4};
}

Var delta_sh(Tape& tape, Var sh, Var mu, Var embedding, TransferParams& params) {
    const Tensor& shv = tape.value(sh);
    const Tensor& muv = tape.value(mu);
    const Tensor& ev = tape.value(embedding);
    if (shv.ndim() != 2 || muv.ndim() != 2 || muv.shape[1] != 3 ||
        shv.shape[0] != muv.shape[0])
        throw std::invalid_argument("delta_sh: sh " + shape_str(shv.shape) + " vs centers " +
                                    shape_str(muv.shape));
    if (ev.numel() != kEmbeddingDim)
        throw std::invalid_argument("delta_sh: embedding length " +
                                    std::to_string(ev.numel()) + ", expected " +
                                    std::to_string(kEmbeddingDim));
    if (shv.shape[1] != params.w4.value.shape[1])
        throw std::invalid_argument("delta_sh: sh width " + std::to_string(shv.shape[1]) +
                                    " does not match the module's output width " +
                                    std::to_string(params.w4.value.shape[1]));
    const int n = shv.shape[0];
    Var x = concat_cols({positional_encoding(sh, kShEncodingFreqs),
                         positional_encoding(mu, kPosEncodingFreqs),
                         repeat_row(embedding, n)});
    Var h = relu(linear(x, tape.param(params.w1), tape.param(params.b1)));
    h = relu(linear(h, tape.param(params.w2), tape.param(params.b2)));
    h = relu(linear(h, tape.param(params.w3), tape.param(params.b3)));
    return linear(h, tape.param(params.w4), tape.param(params.b4));
}

Var transferred_sh(Var sh, Var delta) {
    if (!(sh.tape->value(sh).shape == delta.tape->value(delta).shape))
        throw std::invalid_argument("transferred_sh: shape mismatch");
    return add(sh, delta);
}

Var regularize_delta(Var delta) { return row_l2_mean(delta); }

Tensor cloud_sh_matrix(const GaussianCloud& cloud) {
    const int n = cloud.count(), k = cloud.sh_stride();
    Tensor m({n, k});
    std::copy(cloud.sh.begin(), cloud.sh.end(), m.data.begin());
    return m;
}

Tensor cloud_position_matrix(const GaussianCloud& cloud) {
    const int n = cloud.count();
    Tensor m({n, 3});
    for (int i = 0; i < n; ++i)
        for (int d = 0; d < 3; ++d) m.at2(i, d) = cloud.positions[static_cast<size_t>(i)][d];
    return m;
}

GaussianCloud bake(const GaussianCloud& cloud, const Tensor& embedding,
                   TransferParams& params) {
    Tape tape;
    Var sh = tape.constant(cloud_sh_matrix(cloud));
    Var mu = tape.constant(cloud_position_matrix(cloud));
    Var l = tape.constant(embedding);
    const Tensor& out = tape.value(transferred_sh(sh, delta_sh(tape, sh, mu, l, params)));
    GaussianCloud baked = cloud;
    std::copy(out.data.begin(), out.data.end(), baked.sh.begin());
    return baked;
}

}  // namespace wildsplat
