// Copyright Contributors to the Wildsplat Project
// SPDX-License-Identifier: Apache-2.0
#include "wildsplat/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace wildsplat {

int shape_numel(const Shape& s) {
    int n = 1;
    for (int e : s) n *= e;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

Tensor::Tensor(Shape s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != static_cast<int>(data.size()))
        throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match " +
                                    std::to_string(data.size()) + " elements");
}

Tensor Tensor::full(Shape s, float v) {
    Tensor t(std::move(s));
    t.fill(v);
    return t;
}

bool Tensor::all_finite() const {
    for (float x : data)
        if (!std::isfinite(x)) return false;
    return true;
}

void Tensor::fill(float v) { std::fill(data.begin(), data.end(), v); }

Param::Param(Tensor init, std::string n)
    : value(std::move(init)),
      grad(value.shape),
      m(value.shape),
      v(value.shape),
      name(std::move(n)) {}

void adam_step(Param& p, const AdamConfig& cfg) {
    if (!(cfg.lr > 0.0f)) throw std::invalid_argument("adam: lr must be positive");
    if (cfg.beta1 < 0.0f || cfg.beta1 >= 1.0f || cfg.beta2 < 0.0f || cfg.beta2 >= 1.0f)
        throw std::invalid_argument("adam: betas must lie in [0,1)");
    if (!p.grad.all_finite())
        throw std::runtime_error("adam: non-finite gradient for parameter '" + p.name + "'");
    p.t += 1;
    const float bc1 = 1.0f - std::pow(cfg.beta1, static_cast<float>(p.t));
    const float bc2 = 1.0f - std::pow(cfg.beta2, static_cast<float>(p.t));
    const int n = p.value.numel();
    for (int i = 0; i < n; ++i) {
        const float g = p.grad[i];
        p.m[i] = cfg.beta1 * p.m[i] + (1.0f - cfg.beta1) * g;
        p.v[i] = cfg.beta2 * p.v[i] + (1.0f - cfg.beta2) * g * g;
        const float mhat = p.m[i] / bc1;
        const float vhat = p.v[i] / bc2;
        p.value[i] -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) +
                                cfg.weight_decay * p.value[i]);
    }
    p.zero_grad();
}

// ---------------------------------------------------------------- Tape

Var Tape::constant(Tensor value) { return leaf(std::move(value)); }

Var Tape::leaf(Tensor value) {
    Node n;
    n.grad = Tensor(value.shape);
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(Param& p) {
    Var v = leaf(p.value);
    leased_.emplace_back(v.id, &p);
    return v;
}

Var Tape::make_node(Tensor value, std::function<void()> back) {
    Node n;
    n.grad = Tensor(value.shape);
    n.value = std::move(value);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::backward(Var loss) {
    if (loss.tape != this) throw std::invalid_argument("backward: var belongs to another tape");
    if (value(loss).numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
    nodes_[static_cast<size_t>(loss.id)].grad[0] = 1.0f;
    for (int i = loss.id; i >= 0; --i) {
        if (nodes_[static_cast<size_t>(i)].back) nodes_[static_cast<size_t>(i)].back();
    }
    for (auto& [id, p] : leased_) {
        const Tensor& g = nodes_[static_cast<size_t>(id)].grad;
        for (int i = 0; i < g.numel(); ++i) p->grad[i] += g[i];
    }
}

// ---------------------------------------------------------------- op helpers

namespace {

Tape* tape_of(Var a) {
    if (!a.valid()) throw std::invalid_argument("op: invalid var");
    return a.tape;
}

void require_same_tape(Var a, Var b) {
    if (a.tape != b.tape) throw std::invalid_argument("op: vars from different tapes");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape != b.shape)
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                                    " vs " + shape_str(b.shape));
}

struct NodeRef {
    Tape* t;
    int id;
    const Tensor& val() const { return t->value(Var{t, id}); }
    const Tensor& grd() const { return t->grad(Var{t, id}); }
    Tensor& grd_mut() const { return t->grad_mut(Var{t, id}); }
};

// Creates the output node, then patches the backward closure with its id.
template <typename Back>
Var emit(Tape* t, Tensor out, Back back) {
    // make_node with a placeholder, then rebind: instead we pre-reserve the id.
    int out_id = t->size();
    return t->make_node(std::move(out), [t, out_id, back]() {
        back(NodeRef{t, out_id});
    });
}

}  // namespace

Var add(Var a, Var b) {
    require_same_tape(a, b);
    Tape* t = tape_of(a);
    const Tensor& av = t->value(a);
    const Tensor& bv = t->value(b);
    require_same_shape(av, bv, "add");
    Tensor out(av.shape);
    for (int i = 0; i < out.numel(); ++i) out[i] = av[i] + bv[i];
    int aid = a.id, bid = b.id;
    return emit(t, std::move(out), [t, aid, bid](NodeRef self) {
        const Tensor& g = self.grd();
        Tensor& ga = t->grad_mut(Var{t, aid});
        Tensor& gb = t->grad_mut(Var{t, bid});
        for (int i = 0; i < g.numel(); ++i) {
            ga[i] += g[i];
            gb[i] += g[i];
        }
    });
}

Var sub(Var a, Var b) {
    require_same_tape(a, b);
    Tape* t = tape_of(a);
    const Tensor& av = t->value(a);
    const Tensor& bv = t->value(b);
    require_same_shape(av, bv, "sub");
    Tensor out(av.shape);
    for (int i = 0; i < out.numel(); ++i) out[i] = av[i] - bv[i];
    int aid = a.id, bid = b.id;
    return emit(t, std::move(out), [t, aid, bid](NodeRef self) {
        const Tensor& g = self.grd();
        Tensor& ga = t->grad_mut(Var{t, aid});
        Tensor& gb = t->grad_mut(Var{t, bid});
        for (int i = 0; i < g.numel(); ++i) {
            ga[i] += g[i];
            gb[i] -= g[i];
        }
    });
}

Var mul(Var a, Var b) {
    require_same_tape(a, b);
    Tape* t = tape_of(a);
    const Tensor& av = t->value(a);
    const Tensor& bv = t->value(b);
    require_same_shape(av, bv, "mul");
    Tensor out(av.shape);
    for (int i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
    int aid = a.id, bid = b.id;
    return emit(t, std::move(out), [t, aid, bid](NodeRef self) {
        const Tensor& g = self.grd();
        const Tensor& av = t->value(Var{t, aid});
        const Tensor& bv = t->value(Var{t, bid});
        Tensor& ga = t->grad_mut(Var{t, aid});
        Tensor& gb = t->grad_mut(Var{t, bid});
        for (int i = 0; i < g.numel(); ++i) {
            ga[i] += g[i] * bv[i];
            gb[i] += g[i] * av[i];
        }
    });
}

Var divide(Var a, Var b) {
    require_same_tape(a, b);
    Tape* t = tape_of(a);
    const Tensor& av = t->value(a);
    const Tensor& bv = t->value(b);
    require_same_shape(av, bv, "divide");
    Tensor out(av.shape);
    for (int i = 0; i < out.numel(); ++i) out[i] = av[i] / bv[i];
    int aid = a.id, bid = b.id;
    return emit(t, std::move(out), [t, aid, bid](NodeRef self) {
        const Tensor& g = self.grd();
        const Tensor& av = t->value(Var{t, aid});
        const Tensor& bv = t->value(Var{t, bid});
        Tensor& ga = t->grad_mut(Var{t, aid});
        Tensor& gb = t->grad_mut(Var{t, bid});
        for (int i = 0; i < g.numel(); ++i) {
            ga[i] += g[i] / bv[i];
            gb[i] -= g[i] * av[i] / (bv[i] * bv[i]);
        }
    });
}

namespace {

template <typename F, typename DF>
Var ew_unary(Var a, F f, DF df) {
    Tape* t = tape_of(a);
    const Tensor& av = t->value(a);
    Tensor out(av.shape);
    for (int i = 0; i < out.numel(); ++i) out[i] = f(av[i]);
    int aid = a.id;
    return emit(t, std::move(out), [t, aid, df](NodeRef self) {
        const Tensor& g = self.grd();
        const Tensor& av = t->value(Var{t, aid});
        const Tensor& ov = self.val();
        Tensor& ga = t->grad_mut(Var{t, aid});
        for (int i = 0; i < g.numel(); ++i) ga[i] += g[i] * df(av[i], ov[i]);
    });
}

}  // namespace

Var neg(Var a) {
    return ew_unary(a, [](float x) { return -x; }, [](float, float) { return -1.0f; });
}
Var scale(Var a, float k) {
    return ew_unary(a, [k](float x) { return k * x; }, [k](float, float) { return k; });
}
Var add_scalar(Var a, float k) {
    return ew_unary(a, [k](float x) { return x + k; }, [](float, float) { return 1.0f; });
}
Var square(Var a) {
    return ew_unary(a, [](float x) { return x * x; }, [](float x, float) { return 2.0f * x; });
}
Var sqrt_op(Var a) {
    return ew_unary(a, [](float x) { return std::sqrt(x); },
                    [](float, float y) { return 0.5f / y; });
}
Var abs_op(Var a) {
    return ew_unary(a, [](float x) { return std::fabs(x); },
                    [](float x, float) { return x > 0.0f ? 1.0f : (x < 0.0f ? -1.0f : 0.0f); });
}
Var sin_op(Var a) {
    return ew_unary(a, [](float x) { return std::sin(x); },
                    [](float x, float) { return std::cos(x); });
}
Var cos_op(Var a) {
    return ew_unary(a, [](float x) { return std::cos(x); },
                    [](float x, float) { return -std::sin(x); });
}
Var exp_op(Var a) {
    return ew_unary(a, [](float x) { return std::exp(x); }, [](float, float y) { return y; });
}
Var relu(Var a) {
    return ew_unary(a, [](float x) { return x > 0.0f ? x : 0.0f; },
                    [](float x, float) { return x > 0.0f ? 1.0f : 0.0f; });
}
Var sigmoid(Var a) {
    return ew_unary(a, [](float x) { return 1.0f / (1.0f + std::exp(-x)); },
                    [](float, float y) { return y * (1.0f - y); });
}

Var sum(Var a) {
    Tape* t = tape_of(a);
    const Tensor& av = t->value(a);
    double s = 0.0;
    for (int i = 0; i < av.numel(); ++i) s += av[i];
    int aid = a.id;
    return emit(t, Tensor::scalar(static_cast<float>(s)), [t, aid](NodeRef self) {
        const float g = self.grd()[0];
        Tensor& ga = t->grad_mut(Var{t, aid});
        for (int i = 0; i < ga.numel(); ++i) ga[i] += g;
    });
}

Var mean(Var a) {
    Tape* t = tape_of(a);
    int n = t->value(a).numel();
    return scale(sum(a), 1.0f / static_cast<float>(n));
}

// ---------------------------------------------------------------- matmul / linear

namespace {
using MatMap = Eigen::Map<
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using CMatMap = Eigen::Map<
    const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
}  // namespace

Var matmul(Var a, Var b) {
    require_same_tape(a, b);
    Tape* t = tape_of(a);
    const Tensor& av = t->value(a);
    const Tensor& bv = t->value(b);
    if (av.ndim() != 2 || bv.ndim() != 2 || av.shape[1] != bv.shape[0])
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(av.shape) +
                                    " vs " + shape_str(bv.shape));
    const int m = av.shape[0], k = av.shape[1], n = bv.shape[1];
    Tensor out({m, n});
    MatMap(out.data.data(), m, n).noalias() =
        CMatMap(av.data.data(), m, k) * CMatMap(bv.data.data(), k, n);
    int aid = a.id, bid = b.id;
    return emit(t, std::move(out), [t, aid, bid, m, k, n](NodeRef self) {
        CMatMap g(self.grd().data.data(), m, n);
        CMatMap av(t->value(Var{t, aid}).data.data(), m, k);
        CMatMap bv(t->value(Var{t, bid}).data.data(), k, n);
        MatMap ga(t->grad_mut(Var{t, aid}).data.data(), m, k);
        MatMap gb(t->grad_mut(Var{t, bid}).data.data(), k, n);
        ga.noalias() += g * bv.transpose();
        gb.noalias() += av.transpose() * g;
    });
}

Var linear(Var x, Var weight, Var bias) {
    require_same_tape(x, weight);
    require_same_tape(x, bias);
    Tape* t = tape_of(x);
    const Tensor& xv = t->value(x);
    const Tensor& wv = t->value(weight);
    const Tensor& bv = t->value(bias);
    if (xv.ndim() != 2 || wv.ndim() != 2 || xv.shape[1] != wv.shape[0])
        throw std::invalid_argument("linear: inner dimensions disagree, x " +
                                    shape_str(xv.shape) + " vs weight " + shape_str(wv.shape));
    const int b = xv.shape[0], in = xv.shape[1], out_w = wv.shape[1];
    if (bv.numel() != out_w)
        throw std::invalid_argument("linear: bias " + shape_str(bv.shape) +
                                    " does not match output width " + std::to_string(out_w));
    Tensor out({b, out_w});
    MatMap om(out.data.data(), b, out_w);
    om.noalias() = CMatMap(xv.data.data(), b, in) * CMatMap(wv.data.data(), in, out_w);
    om.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(bv.data.data(), out_w);
    int xid = x.id, wid = weight.id, bid = bias.id;
    return emit(t, std::move(out), [t, xid, wid, bid, b, in, out_w](NodeRef self) {
        CMatMap g(self.grd().data.data(), b, out_w);
        CMatMap xv(t->value(Var{t, xid}).data.data(), b, in);
        CMatMap wv(t->value(Var{t, wid}).data.data(), in, out_w);
        MatMap gx(t->grad_mut(Var{t, xid}).data.data(), b, in);
        MatMap gw(t->grad_mut(Var{t, wid}).data.data(), in, out_w);
        Eigen::Map<Eigen::RowVectorXf> gb(t->grad_mut(Var{t, bid}).data.data(), out_w);
        gx.noalias() += g * wv.transpose();
        gw.noalias() += xv.transpose() * g;
        gb += g.colwise().sum();
    });
}

// ---------------------------------------------------------------- conv

namespace {

void conv_shape_check(const Tensor& x, const Tensor& k, int stride, int padding, int& out_c,
                      int& out_h, int& out_w) {
    if (x.ndim() != 3 || k.ndim() != 4)
        throw std::invalid_argument("conv2d: expected CHW input and OCkk kernel, got " +
                                    shape_str(x.shape) + " and " + shape_str(k.shape));
    if (k.shape[1] != x.shape[0])
        throw std::invalid_argument("conv2d: kernel input channels " +
                                    std::to_string(k.shape[1]) + " vs image channels " +
                                    std::to_string(x.shape[0]));
    const int kh = k.shape[2], kw = k.shape[3];
    const int num_h = x.shape[1] + 2 * padding - kh;
    const int num_w = x.shape[2] + 2 * padding - kw;
    if (num_h < 0 || num_w < 0 || num_h % stride != 0 || num_w % stride != 0)
        throw std::invalid_argument(
            "conv2d: non-integral output extent for input " + shape_str(x.shape) + ", kernel " +
            shape_str(k.shape) + ", stride " + std::to_string(stride) + ", padding " +
            std::to_string(padding));
    out_c = k.shape[0];
    out_h = num_h / stride + 1;
    out_w = num_w / stride + 1;
}

}  // namespace

Var conv2d(Var x, Var kernel, int stride, int padding) {
    require_same_tape(x, kernel);
    Tape* t = tape_of(x);
    const Tensor& xv = t->value(x);
    const Tensor& kv = t->value(kernel);
    int oc, oh, ow;
    conv_shape_check(xv, kv, stride, padding, oc, oh, ow);
    const int ic = xv.shape[0], ih = xv.shape[1], iw = xv.shape[2];
    const int kh = kv.shape[2], kw = kv.shape[3];
    Tensor out({oc, oh, ow});
    for (int o = 0; o < oc; ++o)
        for (int y = 0; y < oh; ++y)
            for (int xo = 0; xo < ow; ++xo) {
                float acc = 0.0f;
                for (int c = 0; c < ic; ++c)
                    for (int ky = 0; ky < kh; ++ky) {
                        const int sy = y * stride - padding + ky;
                        if (sy < 0 || sy >= ih) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int sx = xo * stride - padding + kx;
                            if (sx < 0 || sx >= iw) continue;
                            acc += xv.at3(c, sy, sx) *
                                   kv.data[((static_cast<size_t>(o) * ic + c) * kh + ky) * kw + kx];
                        }
                    }
                out.at3(o, y, xo) = acc;
            }
    int xid = x.id, kid = kernel.id;
    return emit(t, std::move(out),
                [t, xid, kid, stride, padding, ic, ih, iw, oc, oh, ow, kh, kw](NodeRef self) {
        const Tensor& g = self.grd();
        const Tensor& xv = t->value(Var{t, xid});
        const Tensor& kv = t->value(Var{t, kid});
        Tensor& gx = t->grad_mut(Var{t, xid});
        Tensor& gk = t->grad_mut(Var{t, kid});
        for (int o = 0; o < oc; ++o)
            for (int y = 0; y < oh; ++y)
                for (int xo = 0; xo < ow; ++xo) {
                    const float go = g.at3(o, y, xo);
                    if (go == 0.0f) continue;
                    for (int c = 0; c < ic; ++c)
                        for (int ky = 0; ky < kh; ++ky) {
                            const int sy = y * stride - padding + ky;
                            if (sy < 0 || sy >= ih) continue;
                            for (int kx = 0; kx < kw; ++kx) {
                                const int sx = xo * stride - padding + kx;
                                if (sx < 0 || sx >= iw) continue;
                                const size_t ki =
                                    ((static_cast<size_t>(o) * ic + c) * kh + ky) * kw + kx;
                                gx.at3(c, sy, sx) += go * kv.data[ki];
                                gk.data[ki] += go * xv.at3(c, sy, sx);
                            }
                        }
                }
    });
}

Var conv_transpose2d(Var x, Var kernel, int stride) {
    require_same_tape(x, kernel);
    Tape* t = tape_of(x);
    const Tensor& xv = t->value(x);
    const Tensor& kv = t->value(kernel);
    if (stride < 1) throw std::invalid_argument("conv_transpose2d: stride must be >= 1");
    if (xv.ndim() != 3 || kv.ndim() != 4 || kv.shape[0] != xv.shape[0])
        throw std::invalid_argument("conv_transpose2d: input " + shape_str(xv.shape) +
                                    " incompatible with kernel " + shape_str(kv.shape));
    const int oc_in = xv.shape[0];  // kernel's "output" side is this op's input side
    const int ic = kv.shape[1], kh = kv.shape[2], kw = kv.shape[3];
    const int ih = xv.shape[1], iw = xv.shape[2];
    const int oh = (ih - 1) * stride + kh;
    const int ow = (iw - 1) * stride + kw;
    Tensor out({ic, oh, ow});
    for (int o = 0; o < oc_in; ++o)
        for (int y = 0; y < ih; ++y)
            for (int xo = 0; xo < iw; ++xo) {
                const float v = xv.at3(o, y, xo);
                if (v == 0.0f) continue;
                for (int c = 0; c < ic; ++c)
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx)
                            out.at3(c, y * stride + ky, xo * stride + kx) +=
                                v * kv.data[((static_cast<size_t>(o) * ic + c) * kh + ky) * kw + kx];
            }
    int xid = x.id, kid = kernel.id;
    return emit(t, std::move(out), [t, xid, kid, stride, oc_in, ic, kh, kw, ih, iw](NodeRef self) {
        const Tensor& g = self.grd();
        const Tensor& xv = t->value(Var{t, xid});
        const Tensor& kv = t->value(Var{t, kid});
        Tensor& gx = t->grad_mut(Var{t, xid});
        Tensor& gk = t->grad_mut(Var{t, kid});
        for (int o = 0; o < oc_in; ++o)
            for (int y = 0; y < ih; ++y)
                for (int xo = 0; xo < iw; ++xo) {
                    float acc = 0.0f;
                    for (int c = 0; c < ic; ++c)
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                const size_t ki =
                                    ((static_cast<size_t>(o) * ic + c) * kh + ky) * kw + kx;
                                const float go = g.at3(c, y * stride + ky, xo * stride + kx);
                                acc += go * kv.data[ki];
                                gk.data[ki] += go * xv.at3(o, y, xo);
                            }
                    gx.at3(o, y, xo) += acc;
                }
    });
}

Var pool_spatial(Var x, PoolMode mode) {
    Tape* t = tape_of(x);
    const Tensor& xv = t->value(x);
    if (xv.ndim() != 3)
        throw std::invalid_argument("pool_spatial: expected CHW, got " + shape_str(xv.shape));
    const int c = xv.shape[0], h = xv.shape[1], w = xv.shape[2];
    Tensor out({c});
    std::vector<int> argmax(static_cast<size_t>(c), 0);
    for (int ch = 0; ch < c; ++ch) {
        if (mode == PoolMode::Avg) {
            double s = 0.0;
            for (int i = 0; i < h * w; ++i) s += xv.data[static_cast<size_t>(ch) * h * w + i];
            out[ch] = static_cast<float>(s / (h * w));
        } else {
            int best = 0;
            float bv = xv.data[static_cast<size_t>(ch) * h * w];
            for (int i = 1; i < h * w; ++i) {
                const float v = xv.data[static_cast<size_t>(ch) * h * w + i];
                if (v > bv) {  // first occurrence wins on ties
                    bv = v;
                    best = i;
                }
            }
            out[ch] = bv;
            argmax[static_cast<size_t>(ch)] = best;
        }
    }
    int xid = x.id;
    return emit(t, std::move(out), [t, xid, mode, c, h, w, argmax](NodeRef self) {
        const Tensor& g = self.grd();
        Tensor& gx = t->grad_mut(Var{t, xid});
        for (int ch = 0; ch < c; ++ch) {
            if (mode == PoolMode::Avg) {
                const float gv = g[ch] / static_cast<float>(h * w);
                for (int i = 0; i < h * w; ++i) gx.data[static_cast<size_t>(ch) * h * w + i] += gv;
            } else {
                gx.data[static_cast<size_t>(ch) * h * w + argmax[static_cast<size_t>(ch)]] += g[ch];
            }
        }
    });
}

Var depthwise_blur_valid(Var x, const Tensor& kernel) {
    Tape* t = tape_of(x);
    const Tensor& xv = t->value(x);
    if (xv.ndim() != 3 || kernel.ndim() != 2)
        throw std::invalid_argument("depthwise_blur_valid: expected CHW input and 2-D kernel");
    const int c = xv.shape[0], h = xv.shape[1], w = xv.shape[2];
    const int kh = kernel.shape[0], kw = kernel.shape[1];
    if (h < kh || w < kw)
        throw std::invalid_argument("depthwise_blur_valid: image " + shape_str(xv.shape) +
                                    " smaller than window " + shape_str(kernel.shape));
    const int oh = h - kh + 1, ow = w - kw + 1;
    Tensor out({c, oh, ow});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < oh; ++y)
            for (int xo = 0; xo < ow; ++xo) {
                float acc = 0.0f;
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx)
                        acc += xv.at3(ch, y + ky, xo + kx) * kernel.at2(ky, kx);
                out.at3(ch, y, xo) = acc;
            }
    int xid = x.id;
    return emit(t, std::move(out), [t, xid, kernel, c, oh, ow](NodeRef self) {
        const Tensor& g = self.grd();
        Tensor& gx = t->grad_mut(Var{t, xid});
        const int kh = kernel.shape[0], kw = kernel.shape[1];
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < oh; ++y)
                for (int xo = 0; xo < ow; ++xo) {
                    const float go = g.at3(ch, y, xo);
                    if (go == 0.0f) continue;
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx)
                            gx.at3(ch, y + ky, xo + kx) += go * kernel.at2(ky, kx);
                }
    });
}

// ---------------------------------------------------------------- shape ops

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    Tape* t = tape_of(parts[0]);
    const int rows = t->value(parts[0]).shape[0];
    int total = 0;
    std::vector<int> widths;
    std::vector<int> ids;
    for (Var p : parts) {
        require_same_tape(parts[0], p);
        const Tensor& v = t->value(p);
        if (v.ndim() != 2 || v.shape[0] != rows)
            throw std::invalid_argument("concat_cols: row counts differ");
        widths.push_back(v.shape[1]);
        ids.push_back(p.id);
        total += v.shape[1];
    }
    Tensor out({rows, total});
    int off = 0;
    for (size_t pi = 0; pi < ids.size(); ++pi) {
        const Tensor& v = t->value(Var{t, ids[pi]});
        for (int r = 0; r < rows; ++r)
            std::copy(v.data.begin() + static_cast<size_t>(r) * widths[pi],
                      v.data.begin() + static_cast<size_t>(r + 1) * widths[pi],
                      out.data.begin() + static_cast<size_t>(r) * total + off);
        off += widths[pi];
    }
    return emit(t, std::move(out), [t, ids, widths, rows, total](NodeRef self) {
        const Tensor& g = self.grd();
        int off = 0;
        for (size_t pi = 0; pi < ids.size(); ++pi) {
            Tensor& gp = t->grad_mut(Var{t, ids[pi]});
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < widths[pi]; ++c)
                    gp.at2(r, c) += g.data[static_cast<size_t>(r) * total + off + c];
            off += widths[pi];
        }
    });
}

Var repeat_row(Var row, int n) {
    Tape* t = tape_of(row);
    const Tensor& rv = t->value(row);
    if (rv.ndim() != 1) throw std::invalid_argument("repeat_row: expected 1-D input");
    const int d = rv.shape[0];
    Tensor out({n, d});
    for (int r = 0; r < n; ++r)
        std::copy(rv.data.begin(), rv.data.end(), out.data.begin() + static_cast<size_t>(r) * d);
    int rid = row.id;
    return emit(t, std::move(out), [t, rid, n, d](NodeRef self) {
        const Tensor& g = self.grd();
        Tensor& gr = t->grad_mut(Var{t, rid});
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < d; ++c) gr[c] += g.data[static_cast<size_t>(r) * d + c];
    });
}

Var channel_scale(Var x, Var a) {
    require_same_tape(x, a);
    Tape* t = tape_of(x);
    const Tensor& xv = t->value(x);
    const Tensor& av = t->value(a);
    if (xv.ndim() != 3 || av.numel() != xv.shape[0])
        throw std::invalid_argument("channel_scale: shapes " + shape_str(xv.shape) + " vs " +
                                    shape_str(av.shape));
    const int c = xv.shape[0], hw = xv.shape[1] * xv.shape[2];
    Tensor out(xv.shape);
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < hw; ++i)
            out.data[static_cast<size_t>(ch) * hw + i] =
                xv.data[static_cast<size_t>(ch) * hw + i] * av[ch];
    int xid = x.id, aid = a.id;
    return emit(t, std::move(out), [t, xid, aid, c, hw](NodeRef self) {
        const Tensor& g = self.grd();
        const Tensor& xv = t->value(Var{t, xid});
        const Tensor& av = t->value(Var{t, aid});
        Tensor& gx = t->grad_mut(Var{t, xid});
        Tensor& ga = t->grad_mut(Var{t, aid});
        for (int ch = 0; ch < c; ++ch) {
            float acc = 0.0f;
            for (int i = 0; i < hw; ++i) {
                const size_t idx = static_cast<size_t>(ch) * hw + i;
                gx.data[idx] += g.data[idx] * av[ch];
                acc += g.data[idx] * xv.data[idx];
            }
            ga[ch] += acc;
        }
    });
}

Var channel_bias(Var x, Var b) {
    require_same_tape(x, b);
    Tape* t = tape_of(x);
    const Tensor& xv = t->value(x);
    const Tensor& bv = t->value(b);
    if (xv.ndim() != 3 || bv.numel() != xv.shape[0])
        throw std::invalid_argument("channel_bias: shapes " + shape_str(xv.shape) + " vs " +
                                    shape_str(bv.shape));
    const int c = xv.shape[0], hw = xv.shape[1] * xv.shape[2];
    Tensor out(xv.shape);
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < hw; ++i)
            out.data[static_cast<size_t>(ch) * hw + i] =
                xv.data[static_cast<size_t>(ch) * hw + i] + bv[ch];
    int xid = x.id, bid = b.id;
    return emit(t, std::move(out), [t, xid, bid, c, hw](NodeRef self) {
        const Tensor& g = self.grd();
        Tensor& gx = t->grad_mut(Var{t, xid});
        Tensor& gb = t->grad_mut(Var{t, bid});
        for (int ch = 0; ch < c; ++ch) {
            float acc = 0.0f;
            for (int i = 0; i < hw; ++i) {
                const size_t idx = static_cast<size_t>(ch) * hw + i;
                gx.data[idx] += g.data[idx];
                acc += g.data[idx];
            }
            gb[ch] += acc;
        }
    });
}

Var spatial_scale(Var x, Var m) {
    require_same_tape(x, m);
    Tape* t = tape_of(x);
    const Tensor& xv = t->value(x);
    const Tensor& mv = t->value(m);
    if (xv.ndim() != 3 || mv.ndim() != 3 || mv.shape[0] != 1 || mv.shape[1] != xv.shape[1] ||
        mv.shape[2] != xv.shape[2])
        throw std::invalid_argument("spatial_scale: shapes " + shape_str(xv.shape) + " vs " +
                                    shape_str(mv.shape));
    const int c = xv.shape[0], hw = xv.shape[1] * xv.shape[2];
    Tensor out(xv.shape);
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < hw; ++i)
            out.data[static_cast<size_t>(ch) * hw + i] =
                xv.data[static_cast<size_t>(ch) * hw + i] * mv.data[static_cast<size_t>(i)];
    int xid = x.id, mid = m.id;
    return emit(t, std::move(out), [t, xid, mid, c, hw](NodeRef self) {
        const Tensor& g = self.grd();
        const Tensor& xv = t->value(Var{t, xid});
        const Tensor& mv = t->value(Var{t, mid});
        Tensor& gx = t->grad_mut(Var{t, xid});
        Tensor& gm = t->grad_mut(Var{t, mid});
        for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < hw; ++i) {
                const size_t idx = static_cast<size_t>(ch) * hw + i;
                gx.data[idx] += g.data[idx] * mv.data[static_cast<size_t>(i)];
                gm.data[static_cast<size_t>(i)] += g.data[idx] * xv.data[idx];
            }
    });
}

Var crop2d(Var x, int h, int w) {
    Tape* t = tape_of(x);
    const Tensor& xv = t->value(x);
    if (xv.ndim() != 3 || h > xv.shape[1] || w > xv.shape[2])
        throw std::invalid_argument("crop2d: target " + std::to_string(h) + "x" +
                                    std::to_string(w) + " exceeds " + shape_str(xv.shape));
    const int c = xv.shape[0];
    Tensor out({c, h, w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int xo = 0; xo < w; ++xo) out.at3(ch, y, xo) = xv.at3(ch, y, xo);
    int xid = x.id;
    return emit(t, std::move(out), [t, xid, c, h, w](NodeRef self) {
        const Tensor& g = self.grd();
        Tensor& gx = t->grad_mut(Var{t, xid});
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h; ++y)
                for (int xo = 0; xo < w; ++xo) gx.at3(ch, y, xo) += g.at3(ch, y, xo);
    });
}

Var reshape(Var x, Shape s) {
    Tape* t = tape_of(x);
    const Tensor& xv = t->value(x);
    if (shape_numel(s) != xv.numel())
        throw std::invalid_argument("reshape: numel mismatch " + shape_str(xv.shape) + " -> " +
                                    shape_str(s));
    Tensor out(std::move(s), xv.data);
    int xid = x.id;
    return emit(t, std::move(out), [t, xid](NodeRef self) {
        const Tensor& g = self.grd();
        Tensor& gx = t->grad_mut(Var{t, xid});
        for (int i = 0; i < g.numel(); ++i) gx[i] += g[i];
    });
}

Var hwc_to_chw_op(Var x) {
    Tape* t = tape_of(x);
    const Tensor& xv = t->value(x);
    if (xv.ndim() != 3) throw std::invalid_argument("hwc_to_chw: expected 3-D input");
    const int h = xv.shape[0], w = xv.shape[1], c = xv.shape[2];
    Tensor out({c, h, w});
    for (int y = 0; y < h; ++y)
        for (int xo = 0; xo < w; ++xo)
            for (int ch = 0; ch < c; ++ch)
                out.at3(ch, y, xo) = xv.data[(static_cast<size_t>(y) * w + xo) * c + ch];
    int xid = x.id;
    return emit(t, std::move(out), [t, xid, h, w, c](NodeRef self) {
        const Tensor& g = self.grd();
        Tensor& gx = t->grad_mut(Var{t, xid});
        for (int y = 0; y < h; ++y)
            for (int xo = 0; xo < w; ++xo)
                for (int ch = 0; ch < c; ++ch)
                    gx.data[(static_cast<size_t>(y) * w + xo) * c + ch] += g.at3(ch, y, xo);
    });
}

Var mask_mul_hwc(Var x, Var m) {
    require_same_tape(x, m);
    Tape* t = tape_of(x);
    const Tensor& xv = t->value(x);
    const Tensor& mv = t->value(m);
    if (xv.ndim() != 3 || mv.ndim() != 2 || mv.shape[0] != xv.shape[0] ||
        mv.shape[1] != xv.shape[1])
        throw std::invalid_argument("mask_mul_hwc: shapes " + shape_str(xv.shape) + " vs " +
                                    shape_str(mv.shape));
    const int h = xv.shape[0], w = xv.shape[1], c = xv.shape[2];
    Tensor out(xv.shape);
    for (int y = 0; y < h; ++y)
        for (int xo = 0; xo < w; ++xo) {
            const float mval = mv.data[static_cast<size_t>(y) * w + xo];
            for (int ch = 0; ch < c; ++ch) {
                const size_t i = (static_cast<size_t>(y) * w + xo) * c + ch;
                out.data[i] = xv.data[i] * mval;
            }
        }
    int xid = x.id, mid = m.id;
    return emit(t, std::move(out), [t, xid, mid, h, w, c](NodeRef self) {
        const Tensor& g = self.grd();
        const Tensor& xv = t->value(Var{t, xid});
        const Tensor& mv = t->value(Var{t, mid});
        Tensor& gx = t->grad_mut(Var{t, xid});
        Tensor& gm = t->grad_mut(Var{t, mid});
        for (int y = 0; y < h; ++y)
            for (int xo = 0; xo < w; ++xo) {
                const size_t mi = static_cast<size_t>(y) * w + xo;
                float acc = 0.0f;
                for (int ch = 0; ch < c; ++ch) {
                    const size_t i = mi * c + ch;
                    gx.data[i] += g.data[i] * mv.data[mi];
                    acc += g.data[i] * xv.data[i];
                }
                gm.data[mi] += acc;
            }
    });
}

Var positional_encoding(Var x, int n_freq) {
    if (n_freq < 0) throw std::invalid_argument("positional_encoding: n_freq must be >= 0");
    Tape* t = tape_of(x);
    const Tensor& xv = t->value(x);
    const bool is_mat = xv.ndim() == 2;
    const int rows = is_mat ? xv.shape[0] : 1;
    const int k = is_mat ? xv.shape[1] : xv.numel();
    const int out_k = k + 2 * k * n_freq;
    Tensor out(is_mat ? Shape{rows, out_k} : Shape{out_k});
    for (int r = 0; r < rows; ++r) {
        const float* src = xv.data.data() + static_cast<size_t>(r) * k;
        float* dst = out.data.data() + static_cast<size_t>(r) * out_k;
        std::copy(src, src + k, dst);
        int off = k;
        float f = static_cast<float>(M_PI);
        for (int fq = 0; fq < n_freq; ++fq) {
            for (int c = 0; c < k; ++c) dst[off + c] = std::sin(f * src[c]);
            off += k;
            for (int c = 0; c < k; ++c) dst[off + c] = std::cos(f * src[c]);
            off += k;
            f *= 2.0f;
        }
    }
    int xid = x.id;
    return emit(t, std::move(out), [t, xid, rows, k, out_k, n_freq](NodeRef self) {
        const Tensor& g = self.grd();
        const Tensor& xv = t->value(Var{t, xid});
        Tensor& gx = t->grad_mut(Var{t, xid});
        for (int r = 0; r < rows; ++r) {
            const float* src = xv.data.data() + static_cast<size_t>(r) * k;
            const float* go = g.data.data() + static_cast<size_t>(r) * out_k;
            float* gi = gx.data.data() + static_cast<size_t>(r) * k;
            for (int c = 0; c < k; ++c) gi[c] += go[c];
            int off = k;
            float f = static_cast<float>(M_PI);
            for (int fq = 0; fq < n_freq; ++fq) {
                for (int c = 0; c < k; ++c) gi[c] += go[off + c] * f * std::cos(f * src[c]);
                off += k;
                for (int c = 0; c < k; ++c) gi[c] -= go[off + c] * f * std::sin(f * src[c]);
                off += k;
                f *= 2.0f;
            }
        }
    });
}

namespace {

struct BilinearTap {
    int x0, x1, y0, y1;
    float wx, wy;  // weight of the x1/y1 sample
};

BilinearTap bilinear_tap(int out_i, int out_n, int in_n) {
    // align_corners mapping so that endpoint samples are preserved
    BilinearTap tap{};
    if (out_n == 1 || in_n == 1) {
        tap.x0 = tap.x1 = 0;
        tap.wx = 0.0f;
        return tap;
    }
    const float pos = static_cast<float>(out_i) * (in_n - 1) / static_cast<float>(out_n - 1);
    tap.x0 = static_cast<int>(pos);
    tap.x1 = std::min(tap.x0 + 1, in_n - 1);
    tap.wx = pos - static_cast<float>(tap.x0);
    return tap;
}

}  // namespace

Var resize_bilinear(Var x, int out_h, int out_w) {
    Tape* t = tape_of(x);
    const Tensor& xv = t->value(x);
    if (xv.ndim() != 3 || xv.shape[0] != 1)
        throw std::invalid_argument("resize_bilinear: expected [1,h,w], got " +
                                    shape_str(xv.shape));
    const int ih = xv.shape[1], iw = xv.shape[2];
    if (out_h < ih || out_w < iw)
        throw std::invalid_argument("resize_bilinear: target must be >= source");
    Tensor out({1, out_h, out_w});
    for (int y = 0; y < out_h; ++y) {
        const BilinearTap ty = bilinear_tap(y, out_h, ih);
        for (int xo = 0; xo < out_w; ++xo) {
            const BilinearTap tx = bilinear_tap(xo, out_w, iw);
            const float v00 = xv.at3(0, ty.x0, tx.x0), v01 = xv.at3(0, ty.x0, tx.x1);
            const float v10 = xv.at3(0, ty.x1, tx.x0), v11 = xv.at3(0, ty.x1, tx.x1);
            out.at3(0, y, xo) = (1 - ty.wx) * ((1 - tx.wx) * v00 + tx.wx * v01) +
                                ty.wx * ((1 - tx.wx) * v10 + tx.wx * v11);
        }
    }
    int xid = x.id;
    return emit(t, std::move(out), [t, xid, out_h, out_w, ih, iw](NodeRef self) {
        const Tensor& g = self.grd();
        Tensor& gx = t->grad_mut(Var{t, xid});
        for (int y = 0; y < out_h; ++y) {
            const BilinearTap ty = bilinear_tap(y, out_h, ih);
            for (int xo = 0; xo < out_w; ++xo) {
                const BilinearTap tx = bilinear_tap(xo, out_w, iw);
                const float go = g.at3(0, y, xo);
                gx.at3(0, ty.x0, tx.x0) += go * (1 - ty.wx) * (1 - tx.wx);
                gx.at3(0, ty.x0, tx.x1) += go * (1 - ty.wx) * tx.wx;
                gx.at3(0, ty.x1, tx.x0) += go * ty.wx * (1 - tx.wx);
                gx.at3(0, ty.x1, tx.x1) += go * ty.wx * tx.wx;
            }
        }
    });
}

Var row_l2_mean(Var x) {
    Tape* t = tape_of(x);
    const Tensor& xv = t->value(x);
    if (xv.ndim() != 2) throw std::invalid_argument("row_l2_mean: expected 2-D input");
    const int n = xv.shape[0], k = xv.shape[1];
    std::vector<float> norms(static_cast<size_t>(n));
    double s = 0.0;
    for (int r = 0; r < n; ++r) {
        double acc = 0.0;
        for (int c = 0; c < k; ++c) {
            const float v = xv.at2(r, c);
            acc += static_cast<double>(v) * v;
        }
        norms[static_cast<size_t>(r)] = static_cast<float>(std::sqrt(acc));
        s += norms[static_cast<size_t>(r)];
    }
    int xid = x.id;
    return emit(t, Tensor::scalar(static_cast<float>(s / n)), [t, xid, n, k, norms](NodeRef self) {
        const float g = self.grd()[0];
        const Tensor& xv = t->value(Var{t, xid});
        Tensor& gx = t->grad_mut(Var{t, xid});
        for (int r = 0; r < n; ++r) {
            const float nr = norms[static_cast<size_t>(r)];
            if (nr <= 0.0f) continue;
            const float s = g / (static_cast<float>(n) * nr);
            for (int c = 0; c < k; ++c) gx.at2(r, c) += s * xv.at2(r, c);
        }
    });
}

Tensor reflect_pad_chw(const Tensor& x, int pad_bottom, int pad_right) {
    if (x.ndim() != 3) throw std::invalid_argument("reflect_pad_chw: expected CHW");
    if (pad_bottom == 0 && pad_right == 0) return x;
    const int c = x.shape[0], h = x.shape[1], w = x.shape[2];
    Tensor out({c, h + pad_bottom, w + pad_right});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h + pad_bottom; ++y) {
            int sy = y < h ? y : 2 * h - 2 - y;
            sy = std::clamp(sy, 0, h - 1);
            for (int xo = 0; xo < w + pad_right; ++xo) {
                int sx = xo < w ? xo : 2 * w - 2 - xo;
                sx = std::clamp(sx, 0, w - 1);
                out.at3(ch, y, xo) = x.at3(ch, sy, sx);
            }
        }
    return out;
}

}  // namespace wildsplat
