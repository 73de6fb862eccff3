// Copyright Contributors to the Wildsplat Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace wildsplat {

using Shape = std::vector<int>;

int shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

/// Dense row-major f32 tensor. Plain value type; no autodiff by itself.
struct Tensor {
    Shape shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), 0.0f) {}
    Tensor(Shape s, std::vector<float> d);

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor full(Shape s, float v);
    static Tensor scalar(float v) { return Tensor({1}, {v}); }

    int numel() const { return static_cast<int>(data.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape.size()); }

    float& operator[](int i) { return data[static_cast<size_t>(i)]; }
    float operator[](int i) const { return data[static_cast<size_t>(i)]; }

    // 2-D / 3-D accessors (no bounds checks beyond asserts in debug)
    float& at2(int r, int c) { return data[static_cast<size_t>(r) * shape[1] + c]; }
    float at2(int r, int c) const { return data[static_cast<size_t>(r) * shape[1] + c]; }
    float& at3(int c, int y, int x) {
        return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    float at3(int c, int y, int x) const {
        return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool all_finite() const;
    void fill(float v);
};

/// Trainable parameter: value plus gradient and Adam moments.
struct Param {
    Tensor value;
    Tensor grad;
    Tensor m;
    Tensor v;
    int64_t t = 0;
    std::string name;

    Param() = default;
    explicit Param(Tensor init, std::string n = "");

    void zero_grad() { grad.fill(0.0f); }
};

struct AdamConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 0.0f;  // decoupled: value -= lr * weight_decay * value
};

/// One Adam update with bias correction. Zeroes the gradient and bumps t.
/// Throws if the gradient is non-finite.
void adam_step(Param& p, const AdamConfig& cfg);

class Tape;

/// Handle to a node on a tape. Cheap to copy.
struct Var {
    Tape* tape = nullptr;
    int id = -1;
    bool valid() const { return tape != nullptr && id >= 0; }
};

/// Define-by-run reverse-mode tape. Rebuilt every training step.
class Tape {
public:
    Var constant(Tensor value);
    Var leaf(Tensor value);            // gradient tracked but not tied to a Param
    Var param(Param& p);               // leased: grad copied back on backward()

    const Tensor& value(Var v) const { return nodes_[static_cast<size_t>(v.id)].value; }
    const Tensor& grad(Var v) const { return nodes_[static_cast<size_t>(v.id)].grad; }
    Tensor& grad_mut(Var v) { return nodes_[static_cast<size_t>(v.id)].grad; }

    /// Seeds d(loss)=1 and traverses the recorded ops in reverse order,
    /// visiting each exactly once. Copies gradients into leased Params.
    void backward(Var loss);

    // Used by op implementations.
    Var make_node(Tensor value, std::function<void()> back);
    int size() const { return static_cast<int>(nodes_.size()); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::function<void()> back;  // null for leaves/constants
    };
    std::vector<Node> nodes_;
    std::vector<std::pair<int, Param*>> leased_;
};

// ---- elementwise / reduction ops ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var divide(Var a, Var b);
Var neg(Var a);
Var scale(Var a, float k);
Var add_scalar(Var a, float k);
Var square(Var a);
Var sqrt_op(Var a);
Var abs_op(Var a);
Var sin_op(Var a);
Var cos_op(Var a);
Var exp_op(Var a);
Var relu(Var a);
Var sigmoid(Var a);
Var sum(Var a);        // -> scalar
Var mean(Var a);       // -> scalar

// ---- linear algebra ----
Var matmul(Var a, Var b);                       // [M,K]x[K,N]
Var linear(Var x, Var weight, Var bias);        // [B,I]x[I,O]+[O]

// ---- conv / pooling (single image, CHW) ----
Var conv2d(Var x, Var kernel, int stride, int padding);          // k:[O,C,k,k]
Var conv_transpose2d(Var x, Var kernel, int stride);             // adjoint of conv2d
enum class PoolMode { Avg, Max };
Var pool_spatial(Var x, PoolMode mode);                          // [C,H,W]->[C]
/// Valid-mode blur of every channel with one constant 2-D kernel.
Var depthwise_blur_valid(Var x, const Tensor& kernel);

// ---- shape / broadcast ----
Var concat_cols(const std::vector<Var>& parts);          // [N,Ki] -> [N,sum Ki]
Var repeat_row(Var row, int n);                          // [D] -> [N,D]
Var channel_scale(Var x, Var a);                         // [C,H,W]*(per-channel [C])
Var channel_bias(Var x, Var b);                          // [C,H,W]+(per-channel [C])
Var spatial_scale(Var x, Var m);                         // [C,H,W]*(broadcast [1,H,W])
Var crop2d(Var x, int h, int w);                         // top-left crop of [C,H,W]
Var reshape(Var x, Shape s);
Var hwc_to_chw_op(Var x);                                // [H,W,C] -> [C,H,W]
Var mask_mul_hwc(Var x, Var m);                          // [H,W,C] * broadcast [H,W]

// ---- domain-flavored ops ----
/// NeRF positional encoding along the last axis:
/// [x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^{n-1} pi x), cos(2^{n-1} pi x)].
Var positional_encoding(Var x, int n_freq);
/// Bilinear upsampling of a [1,h,w] map to [1,H,W].
Var resize_bilinear(Var x, int out_h, int out_w);
/// Mean over rows of the Euclidean norm of each row of an [N,K] matrix.
Var row_l2_mean(Var x);

// Non-tape helpers shared with oracles/tests.
Tensor reflect_pad_chw(const Tensor& x, int pad_bottom, int pad_right);

}  // namespace wildsplat
