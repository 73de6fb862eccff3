// Copyright Contributors to the Wildsplat Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>
#include <vector>

#include "wildsplat/cloud.hpp"
#include "wildsplat/encoder.hpp"
#include "wildsplat/tensor.hpp"

namespace wildsplat {

inline constexpr int kShEncodingFreqs = 2;   // frequencies for the encoded base SH input
inline constexpr int kPosEncodingFreqs = 4;  // frequencies for the encoded center input

/// Four-layer residual-SH MLP: encoded base SH + encoded center + appearance
/// embedding -> per-Gaussian additive SH correction.
struct TransferParams {
    Param w1, b1, w2, b2, w3, b3, w4, b4;

    /// Hidden width 64, ReLU between layers. The final layer starts at zero
    /// so an untrained module leaves the cloud's colors untouched.
    static TransferParams init(std::mt19937& rng, int degree);
    std::vector<Param*> all();

    static int input_width(int degree);
    static int output_width(int degree) { return 3 * (degree + 1) * (degree + 1); }
};

/// Residual SH rows [N, 3*(L+1)^2] from base SH [N, 3*(L+1)^2], centers
/// [N,3] and one embedding [D_l]. Differentiable w.r.t. all inputs and params.
Var delta_sh(Tape& tape, Var sh, Var mu, Var embedding, TransferParams& params);

/// sh' = sh + delta. Shapes must match.
Var transferred_sh(Var sh, Var delta);

/// Mean over Gaussians of the Euclidean norm of each residual row.
Var regularize_delta(Var delta);

/// Freeze one appearance into a standalone cloud: identical to `cloud` except
/// sh <- sh + delta_sh(embedding). The result renders on any vanilla pipeline.
GaussianCloud bake(const GaussianCloud& cloud, const Tensor& embedding,
                   TransferParams& params);

// Value-level helpers shared by the trainer and bake.
Tensor cloud_sh_matrix(const GaussianCloud& cloud);       // [N, 3*(L+1)^2]
Tensor cloud_position_matrix(const GaussianCloud& cloud); // [N, 3]

}  // namespace wildsplat
