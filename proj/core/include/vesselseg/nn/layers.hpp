#pragma once

#include <algorithm>
#include <cmath>
#include <utility>

#include "vesselseg/nn/parallel.hpp"
#include "vesselseg/nn/param.hpp"
#include "vesselseg/nn/tensor.hpp"

namespace vesselseg::nn {

inline int ceil_div(int a, int b) { return a >= 0 ? (a + b - 1) / b : a / b; }

inline int conv_out_dim(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

/// Valid output index range [lo,hi) so that in = out*stride - pad + tap stays
/// inside [0,in_dim).
inline std::pair<int, int> tap_range(int out_dim, int in_dim, int stride, int pad, int tap) {
    const int lo = std::max(0, ceil_div(pad - tap, stride));
    const int hi = std::min(out_dim, (in_dim - 1 + pad - tap) / stride + 1);
    return {lo, std::max(lo, hi)};
}

// ---------------------------------------------------------------------------
// Depthwise 3D convolution (one k^3 kernel per channel).
// ---------------------------------------------------------------------------
template <class S>
class DepthwiseConv3dT {
public:
    DepthwiseConv3dT(int channels, int k, int stride, int pad)
        : c_(channels), k_(k), stride_(stride), pad_(pad),
          weight_("weight", {channels, k, k, k}), bias_("bias", {channels}) {}

    void init(vesselseg::Rng& rng) {
        weight_.init_uniform(rng, k_ * k_ * k_);
        bias_.init_uniform(rng, k_ * k_ * k_);
    }

    TensorT<S> forward(const TensorT<S>& x) {
        x_ = x;
        const int Do = conv_out_dim(x.d, k_, stride_, pad_);
        const int Ho = conv_out_dim(x.h, k_, stride_, pad_);
        const int Wo = conv_out_dim(x.w, k_, stride_, pad_);
        TensorT<S> out(x.b, c_, Do, Ho, Wo);

        parallel_for(int64_t(x.b) * c_, [&](int64_t lo, int64_t hi) {
            for (int64_t bc = lo; bc < hi; ++bc) {
                const int bi = int(bc / c_), ci = int(bc % c_);
                const S* in = x.plane(bi, ci);
                S* o = out.plane(bi, ci);
                const S bias = bias_.value[size_t(ci)];
                for (int64_t i = 0; i < out.spatial(); ++i) o[i] = bias;
                const S* wc = weight_.value.data() + size_t(ci) * k_ * k_ * k_;
                for (int dz = 0; dz < k_; ++dz) {
                    const auto [zlo, zhi] = tap_range(Do, x.d, stride_, pad_, dz);
                    for (int dy = 0; dy < k_; ++dy) {
                        const auto [ylo, yhi] = tap_range(Ho, x.h, stride_, pad_, dy);
                        for (int dx = 0; dx < k_; ++dx) {
                            const auto [xlo, xhi] = tap_range(Wo, x.w, stride_, pad_, dx);
                            const S wt = wc[(dz * k_ + dy) * k_ + dx];
                            for (int zo = zlo; zo < zhi; ++zo) {
                                const int zi = zo * stride_ - pad_ + dz;
                                for (int yo = ylo; yo < yhi; ++yo) {
                                    const int yi = yo * stride_ - pad_ + dy;
                                    S* orow = o + (int64_t(zo) * Ho + yo) * Wo;
                                    const S* irow = in + (int64_t(zi) * x.h + yi) * x.w +
                                                    (xlo * stride_ - pad_ + dx);
                                    if (stride_ == 1) {
                                        for (int xo = xlo; xo < xhi; ++xo)
                                            orow[xo] += wt * irow[xo - xlo];
                                    } else {
                                        for (int xo = xlo; xo < xhi; ++xo)
                                            orow[xo] += wt * irow[(xo - xlo) * stride_];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
        out_dims_ = {out.d, out.h, out.w};
        return out;
    }

    TensorT<S> backward(const TensorT<S>& g) {
        const auto [Do, Ho, Wo] = out_dims_;
        TensorT<S> dx(x_.b, c_, x_.d, x_.h, x_.w);

        parallel_for(int64_t(x_.b) * c_, [&](int64_t lo, int64_t hi) {
            for (int64_t bc = lo; bc < hi; ++bc) {
                const int bi = int(bc / c_), ci = int(bc % c_);
                const S* gp = g.plane(bi, ci);
                S* dxp = dx.plane(bi, ci);
                const S* wc = weight_.value.data() + size_t(ci) * k_ * k_ * k_;
                for (int dz = 0; dz < k_; ++dz) {
                    const auto [zlo, zhi] = tap_range(Do, x_.d, stride_, pad_, dz);
                    for (int dy = 0; dy < k_; ++dy) {
                        const auto [ylo, yhi] = tap_range(Ho, x_.h, stride_, pad_, dy);
                        for (int dx_ = 0; dx_ < k_; ++dx_) {
                            const auto [xlo, xhi] = tap_range(Wo, x_.w, stride_, pad_, dx_);
                            const S wt = wc[(dz * k_ + dy) * k_ + dx_];
                            for (int zo = zlo; zo < zhi; ++zo) {
                                const int zi = zo * stride_ - pad_ + dz;
                                for (int yo = ylo; yo < yhi; ++yo) {
                                    const int yi = yo * stride_ - pad_ + dy;
                                    const S* grow = gp + (int64_t(zo) * Ho + yo) * Wo;
                                    S* drow = dxp + (int64_t(zi) * x_.h + yi) * x_.w +
                                              (xlo * stride_ - pad_ + dx_);
                                    for (int xo = xlo; xo < xhi; ++xo)
                                        drow[(xo - xlo) * stride_] += wt * grow[xo];
                                }
                            }
                        }
                    }
                }
            }
        });

        parallel_for(c_, [&](int64_t clo, int64_t chi) {
            for (int64_t ci = clo; ci < chi; ++ci) {
                S* dwc = weight_.grad.data() + size_t(ci) * k_ * k_ * k_;
                S db = S{0};
                for (int bi = 0; bi < x_.b; ++bi) {
                    const S* gp = g.plane(bi, int(ci));
                    const S* in = x_.plane(bi, int(ci));
                    for (int64_t i = 0; i < g.spatial(); ++i) db += gp[i];
                    for (int dz = 0; dz < k_; ++dz) {
                        const auto [zlo, zhi] = tap_range(Do, x_.d, stride_, pad_, dz);
                        for (int dy = 0; dy < k_; ++dy) {
                            const auto [ylo, yhi] = tap_range(Ho, x_.h, stride_, pad_, dy);
                            for (int dx_ = 0; dx_ < k_; ++dx_) {
                                const auto [xlo, xhi] = tap_range(Wo, x_.w, stride_, pad_, dx_);
                                S acc = S{0};
                                for (int zo = zlo; zo < zhi; ++zo) {
                                    const int zi = zo * stride_ - pad_ + dz;
                                    for (int yo = ylo; yo < yhi; ++yo) {
                                        const int yi = yo * stride_ - pad_ + dy;
                                        const S* grow = gp + (int64_t(zo) * Ho + yo) * Wo;
                                        const S* irow = in + (int64_t(zi) * x_.h + yi) * x_.w +
                                                        (xlo * stride_ - pad_ + dx_);
                                        for (int xo = xlo; xo < xhi; ++xo)
                                            acc += grow[xo] * irow[(xo - xlo) * stride_];
                                    }
                                }
                                dwc[(dz * k_ + dy) * k_ + dx_] += acc;
                            }
                        }
                    }
                }
                bias_.grad[size_t(ci)] += db;
            }
        });
        return dx;
    }

    void visit_params(const ParamVisitorT<S>& v) {
        v(weight_);
        v(bias_);
    }

    int channels() const { return c_; }
    ParamT<S>& weight() { return weight_; }
    ParamT<S>& bias() { return bias_; }

private:
    int c_, k_, stride_, pad_;
    ParamT<S> weight_, bias_;
    TensorT<S> x_;
    std::array<int, 3> out_dims_{};
};

// ---------------------------------------------------------------------------
// Pointwise (1x1x1) convolution, the workhorse channel mixer.
// ---------------------------------------------------------------------------
template <class S>
class PointwiseConvT {
public:
    PointwiseConvT(int c_in, int c_out, bool with_bias = true)
        : ci_(c_in), co_(c_out), with_bias_(with_bias),
          weight_("weight", {c_out, c_in}), bias_("bias", {with_bias ? c_out : 0}) {}

    void init(vesselseg::Rng& rng) {
        weight_.init_uniform(rng, ci_);
        if (with_bias_) bias_.init_uniform(rng, ci_);
    }

    TensorT<S> forward(const TensorT<S>& x) {
        if (x.c != ci_)
            throw std::invalid_argument("pointwise conv expects " + std::to_string(ci_) +
                                        " channels, got " + x.shape_str());
        x_ = x;
        TensorT<S> out(x.b, co_, x.d, x.h, x.w);
        const int64_t n = x.spatial();
        constexpr int64_t TILE = 2048;
        const int64_t tiles = (n + TILE - 1) / TILE;

        parallel_for(int64_t(x.b) * tiles, [&](int64_t lo, int64_t hi) {
            S acc[4][TILE];
            for (int64_t task = lo; task < hi; ++task) {
                const int bi = int(task / tiles);
                const int64_t n0 = (task % tiles) * TILE;
                const int64_t len = std::min(TILE, n - n0);
                for (int c0 = 0; c0 < co_; c0 += 4) {
                    const int nc = std::min(4, co_ - c0);
                    for (int j = 0; j < nc; ++j) {
                        const S b = with_bias_ ? bias_.value[size_t(c0 + j)] : S{0};
                        for (int64_t i = 0; i < len; ++i) acc[j][i] = b;
                    }
                    for (int ci = 0; ci < ci_; ++ci) {
                        const S* xr = x.plane(bi, ci) + n0;
                        const S* wr = weight_.value.data() + ci;
                        S w[4];
                        for (int j = 0; j < nc; ++j) w[j] = wr[size_t(c0 + j) * ci_];
                        if (nc == 4) {
                            for (int64_t i = 0; i < len; ++i) {
                                const S xv = xr[i];
                                acc[0][i] += w[0] * xv;
                                acc[1][i] += w[1] * xv;
                                acc[2][i] += w[2] * xv;
                                acc[3][i] += w[3] * xv;
                            }
                        } else {
                            for (int j = 0; j < nc; ++j)
                                for (int64_t i = 0; i < len; ++i) acc[j][i] += w[j] * xr[i];
                        }
                    }
                    for (int j = 0; j < nc; ++j) {
                        S* o = out.plane(bi, c0 + j) + n0;
                        for (int64_t i = 0; i < len; ++i) o[i] = acc[j][i];
                    }
                }
            }
        });
        return out;
    }

    TensorT<S> backward(const TensorT<S>& g) {
        TensorT<S> dx(x_.b, ci_, x_.d, x_.h, x_.w);
        const int64_t n = x_.spatial();
        constexpr int64_t TILE = 2048;
        const int64_t tiles = (n + TILE - 1) / TILE;

        // dx = W^T g
        parallel_for(int64_t(x_.b) * tiles, [&](int64_t lo, int64_t hi) {
            S acc[4][TILE];
            for (int64_t task = lo; task < hi; ++task) {
                const int bi = int(task / tiles);
                const int64_t n0 = (task % tiles) * TILE;
                const int64_t len = std::min(TILE, n - n0);
                for (int c0 = 0; c0 < ci_; c0 += 4) {
                    const int nc = std::min(4, ci_ - c0);
                    for (int j = 0; j < nc; ++j)
                        for (int64_t i = 0; i < len; ++i) acc[j][i] = S{0};
                    for (int co = 0; co < co_; ++co) {
                        const S* gr = g.plane(bi, co) + n0;
                        const S* wr = weight_.value.data() + size_t(co) * ci_ + c0;
                        if (nc == 4) {
                            for (int64_t i = 0; i < len; ++i) {
                                const S gv = gr[i];
                                acc[0][i] += wr[0] * gv;
                                acc[1][i] += wr[1] * gv;
                                acc[2][i] += wr[2] * gv;
                                acc[3][i] += wr[3] * gv;
                            }
                        } else {
                            for (int j = 0; j < nc; ++j)
                                for (int64_t i = 0; i < len; ++i) acc[j][i] += wr[j] * gr[i];
                        }
                    }
                    for (int j = 0; j < nc; ++j) {
                        S* o = dx.plane(bi, c0 + j) + n0;
                        for (int64_t i = 0; i < len; ++i) o[i] = acc[j][i];
                    }
                }
            }
        });

        // dW = g x^T, db = row sums of g; each co owned by one worker
        parallel_for(co_, [&](int64_t lo, int64_t hi) {
            for (int64_t co = lo; co < hi; ++co) {
                S* dwr = weight_.grad.data() + size_t(co) * ci_;
                S db = S{0};
                for (int bi = 0; bi < x_.b; ++bi) {
                    const S* gr = g.plane(bi, int(co));
                    for (int ci = 0; ci + 4 <= ci_; ci += 4) {
                        const S* x0 = x_.plane(bi, ci);
                        const S* x1 = x_.plane(bi, ci + 1);
                        const S* x2 = x_.plane(bi, ci + 2);
                        const S* x3 = x_.plane(bi, ci + 3);
                        S a0{0}, a1{0}, a2{0}, a3{0};
                        for (int64_t i = 0; i < n; ++i) {
                            const S gv = gr[i];
                            a0 += gv * x0[i];
                            a1 += gv * x1[i];
                            a2 += gv * x2[i];
                            a3 += gv * x3[i];
                        }
                        dwr[ci] += a0;
                        dwr[ci + 1] += a1;
                        dwr[ci + 2] += a2;
                        dwr[ci + 3] += a3;
                    }
                    for (int ci = (ci_ / 4) * 4; ci < ci_; ++ci) {
                        const S* xr = x_.plane(bi, ci);
                        S a{0};
                        for (int64_t i = 0; i < n; ++i) a += gr[i] * xr[i];
                        dwr[ci] += a;
                    }
                    for (int64_t i = 0; i < n; ++i) db += gr[i];
                }
                if (with_bias_) bias_.grad[size_t(co)] += db;
            }
        });
        return dx;
    }

    void visit_params(const ParamVisitorT<S>& v) {
        v(weight_);
        if (with_bias_) v(bias_);
    }

    ParamT<S>& weight() { return weight_; }
    ParamT<S>& bias() { return bias_; }
    int in_channels() const { return ci_; }
    int out_channels() const { return co_; }

private:
    int ci_, co_;
    bool with_bias_;
    ParamT<S> weight_, bias_;
    TensorT<S> x_;
};

// ---------------------------------------------------------------------------
// Dense 3D convolution; used by the stem where C_in is tiny.
// ---------------------------------------------------------------------------
template <class S>
class DenseConv3dT {
public:
    DenseConv3dT(int c_in, int c_out, int k, int stride, int pad)
        : ci_(c_in), co_(c_out), k_(k), stride_(stride), pad_(pad),
          weight_("weight", {c_out, c_in, k, k, k}), bias_("bias", {c_out}) {}

    void init(vesselseg::Rng& rng) {
        weight_.init_uniform(rng, ci_ * k_ * k_ * k_);
        bias_.init_uniform(rng, ci_ * k_ * k_ * k_);
    }

    TensorT<S> forward(const TensorT<S>& x) {
        x_ = x;
        const int Do = conv_out_dim(x.d, k_, stride_, pad_);
        const int Ho = conv_out_dim(x.h, k_, stride_, pad_);
        const int Wo = conv_out_dim(x.w, k_, stride_, pad_);
        TensorT<S> out(x.b, co_, Do, Ho, Wo);

        parallel_for(int64_t(x.b) * co_, [&](int64_t lo, int64_t hi) {
            for (int64_t task = lo; task < hi; ++task) {
                const int bi = int(task / co_), co = int(task % co_);
                S* o = out.plane(bi, co);
                for (int64_t i = 0; i < out.spatial(); ++i) o[i] = bias_.value[size_t(co)];
                for (int ci = 0; ci < ci_; ++ci) {
                    const S* in = x.plane(bi, ci);
                    const S* wc = weight_.value.data() + (size_t(co) * ci_ + ci) * k_ * k_ * k_;
                    for (int dz = 0; dz < k_; ++dz) {
                        const auto [zlo, zhi] = tap_range(Do, x.d, stride_, pad_, dz);
                        for (int dy = 0; dy < k_; ++dy) {
                            const auto [ylo, yhi] = tap_range(Ho, x.h, stride_, pad_, dy);
                            for (int dx = 0; dx < k_; ++dx) {
                                const auto [xlo, xhi] = tap_range(Wo, x.w, stride_, pad_, dx);
                                const S wt = wc[(dz * k_ + dy) * k_ + dx];
                                for (int zo = zlo; zo < zhi; ++zo) {
                                    const int zi = zo * stride_ - pad_ + dz;
                                    for (int yo = ylo; yo < yhi; ++yo) {
                                        const int yi = yo * stride_ - pad_ + dy;
                                        S* orow = o + (int64_t(zo) * Ho + yo) * Wo;
                                        const S* irow = in + (int64_t(zi) * x.h + yi) * x.w +
                                                        (xlo * stride_ - pad_ + dx);
                                        for (int xo = xlo; xo < xhi; ++xo)
                                            orow[xo] += wt * irow[(xo - xlo) * stride_];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
        out_dims_ = {out.d, out.h, out.w};
        return out;
    }

    TensorT<S> backward(const TensorT<S>& g) {
        const auto [Do, Ho, Wo] = out_dims_;
        TensorT<S> dx(x_.b, ci_, x_.d, x_.h, x_.w);

        parallel_for(int64_t(x_.b) * ci_, [&](int64_t lo, int64_t hi) {
            for (int64_t task = lo; task < hi; ++task) {
                const int bi = int(task / ci_), ci = int(task % ci_);
                S* dxp = dx.plane(bi, ci);
                for (int co = 0; co < co_; ++co) {
                    const S* gp = g.plane(bi, co);
                    const S* wc = weight_.value.data() + (size_t(co) * ci_ + ci) * k_ * k_ * k_;
                    for (int dz = 0; dz < k_; ++dz) {
                        const auto [zlo, zhi] = tap_range(Do, x_.d, stride_, pad_, dz);
                        for (int dy = 0; dy < k_; ++dy) {
                            const auto [ylo, yhi] = tap_range(Ho, x_.h, stride_, pad_, dy);
                            for (int dx_ = 0; dx_ < k_; ++dx_) {
                                const auto [xlo, xhi] = tap_range(Wo, x_.w, stride_, pad_, dx_);
                                const S wt = wc[(dz * k_ + dy) * k_ + dx_];
                                for (int zo = zlo; zo < zhi; ++zo) {
                                    const int zi = zo * stride_ - pad_ + dz;
                                    for (int yo = ylo; yo < yhi; ++yo) {
                                        const int yi = yo * stride_ - pad_ + dy;
                                        const S* grow = gp + (int64_t(zo) * Ho + yo) * Wo;
                                        S* drow = dxp + (int64_t(zi) * x_.h + yi) * x_.w +
                                                  (xlo * stride_ - pad_ + dx_);
                                        for (int xo = xlo; xo < xhi; ++xo)
                                            drow[(xo - xlo) * stride_] += wt * grow[xo];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });

        parallel_for(co_, [&](int64_t lo, int64_t hi) {
            for (int64_t co = lo; co < hi; ++co) {
                S db{0};
                for (int bi = 0; bi < x_.b; ++bi) {
                    const S* gp = g.plane(bi, int(co));
                    for (int64_t i = 0; i < g.spatial(); ++i) db += gp[i];
                    for (int ci = 0; ci < ci_; ++ci) {
                        const S* in = x_.plane(bi, ci);
                        S* dwc = weight_.grad.data() + (size_t(co) * ci_ + ci) * k_ * k_ * k_;
                        for (int dz = 0; dz < k_; ++dz) {
                            const auto [zlo, zhi] = tap_range(Do, x_.d, stride_, pad_, dz);
                            for (int dy = 0; dy < k_; ++dy) {
                                const auto [ylo, yhi] = tap_range(Ho, x_.h, stride_, pad_, dy);
                                for (int dx_ = 0; dx_ < k_; ++dx_) {
                                    const auto [xlo, xhi] = tap_range(Wo, x_.w, stride_, pad_, dx_);
                                    S acc{0};
                                    for (int zo = zlo; zo < zhi; ++zo) {
                                        const int zi = zo * stride_ - pad_ + dz;
                                        for (int yo = ylo; yo < yhi; ++yo) {
                                            const int yi = yo * stride_ - pad_ + dy;
                                            const S* grow = gp + (int64_t(zo) * Ho + yo) * Wo;
                                            const S* irow = in + (int64_t(zi) * x_.h + yi) * x_.w +
                                                            (xlo * stride_ - pad_ + dx_);
                                            for (int xo = xlo; xo < xhi; ++xo)
                                                acc += grow[xo] * irow[(xo - xlo) * stride_];
                                        }
                                    }
                                    dwc[(dz * k_ + dy) * k_ + dx_] += acc;
                                }
                            }
                        }
                    }
                }
                bias_.grad[size_t(co)] += db;
            }
        });
        return dx;
    }

    void visit_params(const ParamVisitorT<S>& v) {
        v(weight_);
        v(bias_);
    }

private:
    int ci_, co_, k_, stride_, pad_;
    ParamT<S> weight_, bias_;
    TensorT<S> x_;
    std::array<int, 3> out_dims_{};
};

// ---------------------------------------------------------------------------
// 2x average pooling, ceil mode, averaging only valid window elements.
// ---------------------------------------------------------------------------
template <class S>
class AvgPool2xT {
public:
    TensorT<S> forward(const TensorT<S>& x) {
        in_dims_ = {x.b, x.c, x.d, x.h, x.w};
        const int Do = ceil_div(x.d, 2), Ho = ceil_div(x.h, 2), Wo = ceil_div(x.w, 2);
        TensorT<S> out(x.b, x.c, Do, Ho, Wo);
        parallel_for(int64_t(x.b) * x.c, [&](int64_t lo, int64_t hi) {
            for (int64_t bc = lo; bc < hi; ++bc) {
                const int bi = int(bc / x.c), ci = int(bc % x.c);
                const S* in = x.plane(bi, ci);
                S* o = out.plane(bi, ci);
                for (int zo = 0; zo < Do; ++zo)
                    for (int yo = 0; yo < Ho; ++yo)
                        for (int xo = 0; xo < Wo; ++xo) {
                            S sum{0};
                            int count = 0;
                            for (int dz = 0; dz < 2; ++dz)
                                for (int dy = 0; dy < 2; ++dy)
                                    for (int dx = 0; dx < 2; ++dx) {
                                        const int zi = 2 * zo + dz, yi = 2 * yo + dy,
                                                  xi = 2 * xo + dx;
                                        if (zi >= x.d || yi >= x.h || xi >= x.w) continue;
                                        sum += in[(int64_t(zi) * x.h + yi) * x.w + xi];
                                        ++count;
                                    }
                            o[(int64_t(zo) * Ho + yo) * Wo + xo] = sum / S(count);
                        }
            }
        });
        return out;
    }

    TensorT<S> backward(const TensorT<S>& g) {
        const auto [B, C, D, H, W] = in_dims_;
        TensorT<S> dx(B, C, D, H, W);
        parallel_for(int64_t(B) * C, [&](int64_t lo, int64_t hi) {
            for (int64_t bc = lo; bc < hi; ++bc) {
                const int bi = int(bc / C), ci = int(bc % C);
                const S* gp = g.plane(bi, ci);
                S* dxp = dx.plane(bi, ci);
                for (int zo = 0; zo < g.d; ++zo)
                    for (int yo = 0; yo < g.h; ++yo)
                        for (int xo = 0; xo < g.w; ++xo) {
                            int count = 0;
                            for (int dz = 0; dz < 2; ++dz)
                                for (int dy = 0; dy < 2; ++dy)
                                    for (int dx_ = 0; dx_ < 2; ++dx_) {
                                        const int zi = 2 * zo + dz, yi = 2 * yo + dy,
                                                  xi = 2 * xo + dx_;
                                        if (zi < D && yi < H && xi < W) ++count;
                                    }
                            const S share =
                                gp[(int64_t(zo) * g.h + yo) * g.w + xo] / S(count);
                            for (int dz = 0; dz < 2; ++dz)
                                for (int dy = 0; dy < 2; ++dy)
                                    for (int dx_ = 0; dx_ < 2; ++dx_) {
                                        const int zi = 2 * zo + dz, yi = 2 * yo + dy,
                                                  xi = 2 * xo + dx_;
                                        if (zi >= D || yi >= H || xi >= W) continue;
                                        dxp[(int64_t(zi) * H + yi) * W + xi] += share;
                                    }
                        }
            }
        });
        return dx;
    }

private:
    std::array<int, 5> in_dims_{};
};

// ---------------------------------------------------------------------------
// Nearest-neighbor x2 upsampling to an explicit target size (crop when odd).
// ---------------------------------------------------------------------------
template <class S>
class UpsampleNearest2xT {
public:
    TensorT<S> forward(const TensorT<S>& x, int td, int th, int tw) {
        if (td > 2 * x.d || th > 2 * x.h || tw > 2 * x.w)
            throw std::invalid_argument("upsample target exceeds 2x source");
        in_dims_ = {x.b, x.c, x.d, x.h, x.w};
        TensorT<S> out(x.b, x.c, td, th, tw);
        parallel_for(int64_t(x.b) * x.c, [&](int64_t lo, int64_t hi) {
            for (int64_t bc = lo; bc < hi; ++bc) {
                const int bi = int(bc / x.c), ci = int(bc % x.c);
                const S* in = x.plane(bi, ci);
                S* o = out.plane(bi, ci);
                for (int z = 0; z < td; ++z)
                    for (int y = 0; y < th; ++y) {
                        const S* irow = in + (int64_t(z / 2) * x.h + y / 2) * x.w;
                        S* orow = o + (int64_t(z) * th + y) * tw;
                        for (int xo = 0; xo < tw; ++xo) orow[xo] = irow[xo / 2];
                    }
            }
        });
        return out;
    }

    TensorT<S> backward(const TensorT<S>& g) {
        const auto [B, C, D, H, W] = in_dims_;
        TensorT<S> dx(B, C, D, H, W);
        parallel_for(int64_t(B) * C, [&](int64_t lo, int64_t hi) {
            for (int64_t bc = lo; bc < hi; ++bc) {
                const int bi = int(bc / C), ci = int(bc % C);
                const S* gp = g.plane(bi, ci);
                S* dxp = dx.plane(bi, ci);
                for (int z = 0; z < g.d; ++z)
                    for (int y = 0; y < g.h; ++y) {
                        S* drow = dxp + (int64_t(z / 2) * H + y / 2) * W;
                        const S* grow = gp + (int64_t(z) * g.h + y) * g.w;
                        for (int xo = 0; xo < g.w; ++xo) drow[xo / 2] += grow[xo];
                    }
            }
        });
        return dx;
    }

private:
    std::array<int, 5> in_dims_{};
};

// ---------------------------------------------------------------------------
// Channel LayerNorm: normalizes across C at every spatial position.
// ---------------------------------------------------------------------------
template <class S>
class LayerNormT {
public:
    explicit LayerNormT(int channels, S eps = S(1e-5))
        : c_(channels), eps_(eps), gamma_("gamma", {channels}), beta_("beta", {channels}) {
        gamma_.fill(S{1});
    }

    void init(vesselseg::Rng&) {}  // gamma=1, beta=0

    TensorT<S> forward(const TensorT<S>& x) {
        x_ = x;
        mu_.assign(size_t(x.b) * x.spatial(), S{0});
        inv_.assign(size_t(x.b) * x.spatial(), S{0});
        TensorT<S> out(x.b, c_, x.d, x.h, x.w);
        const int64_t lines = int64_t(x.d) * x.h;  // one (z,y) row of x at a time

        parallel_for(int64_t(x.b) * lines, [&](int64_t lo, int64_t hi) {
            std::vector<S> mean(static_cast<size_t>(x.w), S{0}), var(static_cast<size_t>(x.w), S{0});
            for (int64_t task = lo; task < hi; ++task) {
                const int bi = int(task / lines);
                const int64_t line = task % lines;
                const int64_t off = line * x.w;
                std::fill(mean.begin(), mean.end(), S{0});
                std::fill(var.begin(), var.end(), S{0});
                for (int ci = 0; ci < c_; ++ci) {
                    const S* row = x_.plane(bi, ci) + off;
                    for (int i = 0; i < x.w; ++i) mean[size_t(i)] += row[i];
                }
                for (auto& m : mean) m /= S(c_);
                for (int ci = 0; ci < c_; ++ci) {
                    const S* row = x_.plane(bi, ci) + off;
                    for (int i = 0; i < x.w; ++i) {
                        const S d = row[i] - mean[size_t(i)];
                        var[size_t(i)] += d * d;
                    }
                }
                S* mu = mu_.data() + size_t(bi) * x.spatial() + off;
                S* inv = inv_.data() + size_t(bi) * x.spatial() + off;
                for (int i = 0; i < x.w; ++i) {
                    mu[i] = mean[size_t(i)];
                    inv[i] = S{1} / std::sqrt(var[size_t(i)] / S(c_) + eps_);
                }
                for (int ci = 0; ci < c_; ++ci) {
                    const S* row = x_.plane(bi, ci) + off;
                    S* orow = out.plane(bi, ci) + off;
                    const S gm = gamma_.value[size_t(ci)], bt = beta_.value[size_t(ci)];
                    for (int i = 0; i < x.w; ++i) orow[i] = gm * (row[i] - mu[i]) * inv[i] + bt;
                }
            }
        });
        return out;
    }

    TensorT<S> backward(const TensorT<S>& g) {
        TensorT<S> dx(x_.b, c_, x_.d, x_.h, x_.w);
        const int64_t lines = int64_t(x_.d) * x_.h;

        // per-position sums s1 = sum_c gamma*g, s2 = sum_c gamma*g*xhat
        parallel_for(int64_t(x_.b) * lines, [&](int64_t lo, int64_t hi) {
            std::vector<S> s1(static_cast<size_t>(x_.w), S{0}), s2(static_cast<size_t>(x_.w), S{0});
            for (int64_t task = lo; task < hi; ++task) {
                const int bi = int(task / lines);
                const int64_t off = (task % lines) * x_.w;
                const S* mu = mu_.data() + size_t(bi) * x_.spatial() + off;
                const S* inv = inv_.data() + size_t(bi) * x_.spatial() + off;
                std::fill(s1.begin(), s1.end(), S{0});
                std::fill(s2.begin(), s2.end(), S{0});
                for (int ci = 0; ci < c_; ++ci) {
                    const S* grow = g.plane(bi, ci) + off;
                    const S* xrow = x_.plane(bi, ci) + off;
                    const S gm = gamma_.value[size_t(ci)];
                    for (int i = 0; i < x_.w; ++i) {
                        const S xhat = (xrow[i] - mu[i]) * inv[i];
                        s1[size_t(i)] += gm * grow[i];
                        s2[size_t(i)] += gm * grow[i] * xhat;
                    }
                }
                for (int ci = 0; ci < c_; ++ci) {
                    const S* grow = g.plane(bi, ci) + off;
                    const S* xrow = x_.plane(bi, ci) + off;
                    S* drow = dx.plane(bi, ci) + off;
                    const S gm = gamma_.value[size_t(ci)];
                    for (int i = 0; i < x_.w; ++i) {
                        const S xhat = (xrow[i] - mu[i]) * inv[i];
                        drow[i] = inv[i] * (gm * grow[i] - (s1[size_t(i)] + xhat * s2[size_t(i)]) / S(c_));
                    }
                }
            }
        });

        // parameter grads, one channel per worker
        parallel_for(c_, [&](int64_t lo, int64_t hi) {
            for (int64_t ci = lo; ci < hi; ++ci) {
                S dg{0}, db{0};
                for (int bi = 0; bi < x_.b; ++bi) {
                    const S* grow = g.plane(bi, int(ci));
                    const S* xrow = x_.plane(bi, int(ci));
                    const S* mu = mu_.data() + size_t(bi) * x_.spatial();
                    const S* inv = inv_.data() + size_t(bi) * x_.spatial();
                    for (int64_t i = 0; i < x_.spatial(); ++i) {
                        dg += grow[i] * (xrow[i] - mu[i]) * inv[i];
                        db += grow[i];
                    }
                }
                gamma_.grad[size_t(ci)] += dg;
                beta_.grad[size_t(ci)] += db;
            }
        });
        return dx;
    }

    void visit_params(const ParamVisitorT<S>& v) {
        v(gamma_);
        v(beta_);
    }

    ParamT<S>& gamma() { return gamma_; }
    ParamT<S>& beta() { return beta_; }

private:
    int c_;
    S eps_;
    ParamT<S> gamma_, beta_;
    TensorT<S> x_;
    std::vector<S> mu_, inv_;
};

// ---------------------------------------------------------------------------
// Exact GELU.
// ---------------------------------------------------------------------------
template <class S>
class GeluT {
public:
    TensorT<S> forward(const TensorT<S>& x) {
        x_ = x;
        TensorT<S> out = x;
        parallel_for(int64_t(out.numel()), [&](int64_t lo, int64_t hi) {
            for (int64_t i = lo; i < hi; ++i) {
                const S v = out.v[size_t(i)];
                out.v[size_t(i)] = S(0.5) * v * (S{1} + S(std::erf(double(v) * M_SQRT1_2)));
            }
        });
        return out;
    }

    TensorT<S> backward(const TensorT<S>& g) {
        TensorT<S> dx = g;
        constexpr double inv_sqrt2pi = 0.3989422804014327;
        parallel_for(int64_t(dx.numel()), [&](int64_t lo, int64_t hi) {
            for (int64_t i = lo; i < hi; ++i) {
                const double v = double(x_.v[size_t(i)]);
                const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
                const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
                dx.v[size_t(i)] = g.v[size_t(i)] * S(cdf + v * pdf);
            }
        });
        return dx;
    }

private:
    TensorT<S> x_;
};

// ---------------------------------------------------------------------------
// Learnable per-channel scale (layer scale).
// ---------------------------------------------------------------------------
template <class S>
class LayerScaleT {
public:
    LayerScaleT(int channels, S init) : c_(channels), gamma_("gamma", {channels}) {
        gamma_.fill(init);
    }

    TensorT<S> forward(const TensorT<S>& x) {
        x_ = x;
        TensorT<S> out = x;
        for (int bi = 0; bi < x.b; ++bi)
            for (int ci = 0; ci < c_; ++ci) {
                S* o = out.plane(bi, ci);
                const S gm = gamma_.value[size_t(ci)];
                for (int64_t i = 0; i < x.spatial(); ++i) o[i] *= gm;
            }
        return out;
    }

    TensorT<S> backward(const TensorT<S>& g) {
        TensorT<S> dx = g;
        for (int ci = 0; ci < c_; ++ci) {
            S dg{0};
            const S gm = gamma_.value[size_t(ci)];
            for (int bi = 0; bi < x_.b; ++bi) {
                const S* gp = g.plane(bi, ci);
                const S* xp = x_.plane(bi, ci);
                S* dxp = dx.plane(bi, ci);
                for (int64_t i = 0; i < x_.spatial(); ++i) {
                    dg += gp[i] * xp[i];
                    dxp[i] = gp[i] * gm;
                }
            }
            gamma_.grad[size_t(ci)] += dg;
        }
        return dx;
    }

    void visit_params(const ParamVisitorT<S>& v) { v(gamma_); }
    ParamT<S>& gamma() { return gamma_; }

private:
    int c_;
    ParamT<S> gamma_;
    TensorT<S> x_;
};

// ---------------------------------------------------------------------------
// Per-channel spatial statistics {mean, std, max} -> (B, 3C, 1,1,1).
// std carries a 1e-6 guard so constant inputs stay differentiable.
// ---------------------------------------------------------------------------
template <class S>
class ChannelStatsT {
public:
    static constexpr double kVarEps = 1e-6;

    TensorT<S> forward(const TensorT<S>& x) {
        x_ = x;
        TensorT<S> out(x.b, 3 * x.c, 1, 1, 1);
        mean_.assign(size_t(x.b) * x.c, S{0});
        std_.assign(size_t(x.b) * x.c, S{0});
        argmax_.assign(size_t(x.b) * x.c, 0);
        const int64_t n = x.spatial();
        parallel_for(int64_t(x.b) * x.c, [&](int64_t lo, int64_t hi) {
            for (int64_t bc = lo; bc < hi; ++bc) {
                const int bi = int(bc / x.c), ci = int(bc % x.c);
                const S* p = x.plane(bi, ci);
                S sum{0};
                S mx = p[0];
                int64_t arg = 0;
                for (int64_t i = 0; i < n; ++i) {
                    sum += p[i];
                    if (p[i] > mx) {
                        mx = p[i];
                        arg = i;
                    }
                }
                const S m = sum / S(n);
                S var{0};
                for (int64_t i = 0; i < n; ++i) {
                    const S d = p[i] - m;
                    var += d * d;
                }
                const S sd = std::sqrt(var / S(n) + S(kVarEps));
                mean_[size_t(bc)] = m;
                std_[size_t(bc)] = sd;
                argmax_[size_t(bc)] = arg;
                out.at(bi, ci, 0, 0, 0) = m;
                out.at(bi, x.c + ci, 0, 0, 0) = sd;
                out.at(bi, 2 * x.c + ci, 0, 0, 0) = mx;
            }
        });
        return out;
    }

    TensorT<S> backward(const TensorT<S>& g) {
        TensorT<S> dx(x_.b, x_.c, x_.d, x_.h, x_.w);
        const int64_t n = x_.spatial();
        parallel_for(int64_t(x_.b) * x_.c, [&](int64_t lo, int64_t hi) {
            for (int64_t bc = lo; bc < hi; ++bc) {
                const int bi = int(bc / x_.c), ci = int(bc % x_.c);
                const S gm = g.at(bi, ci, 0, 0, 0);
                const S gs = g.at(bi, x_.c + ci, 0, 0, 0);
                const S gx = g.at(bi, 2 * x_.c + ci, 0, 0, 0);
                const S m = mean_[size_t(bc)], sd = std_[size_t(bc)];
                const S* p = x_.plane(bi, ci);
                S* d = dx.plane(bi, ci);
                for (int64_t i = 0; i < n; ++i)
                    d[i] = gm / S(n) + gs * (p[i] - m) / (S(n) * sd);
                d[argmax_[size_t(bc)]] += gx;
            }
        });
        return dx;
    }

private:
    TensorT<S> x_;
    std::vector<S> mean_, std_;
    std::vector<int64_t> argmax_;
};

// ---------------------------------------------------------------------------
// Fully connected layer on (B, C, 1,1,1) vectors.
// ---------------------------------------------------------------------------
template <class S>
class LinearT {
public:
    LinearT(int c_in, int c_out)
        : ci_(c_in), co_(c_out), weight_("weight", {c_out, c_in}), bias_("bias", {c_out}) {}

    void init(vesselseg::Rng& rng) {
        weight_.init_uniform(rng, ci_);
        bias_.init_uniform(rng, ci_);
    }

    TensorT<S> forward(const TensorT<S>& x) {
        if (x.c != ci_ || x.spatial() != 1)
            throw std::invalid_argument("linear expects (B," + std::to_string(ci_) + ",1,1,1)");
        x_ = x;
        TensorT<S> out(x.b, co_, 1, 1, 1);
        for (int bi = 0; bi < x.b; ++bi)
            for (int o = 0; o < co_; ++o) {
                S acc = bias_.value[size_t(o)];
                const S* wr = weight_.value.data() + size_t(o) * ci_;
                for (int i = 0; i < ci_; ++i) acc += wr[i] * x.at(bi, i, 0, 0, 0);
                out.at(bi, o, 0, 0, 0) = acc;
            }
        return out;
    }

    TensorT<S> backward(const TensorT<S>& g) {
        TensorT<S> dx(x_.b, ci_, 1, 1, 1);
        for (int bi = 0; bi < x_.b; ++bi) {
            for (int o = 0; o < co_; ++o) {
                const S gv = g.at(bi, o, 0, 0, 0);
                bias_.grad[size_t(o)] += gv;
                S* dwr = weight_.grad.data() + size_t(o) * ci_;
                const S* wr = weight_.value.data() + size_t(o) * ci_;
                for (int i = 0; i < ci_; ++i) {
                    dwr[i] += gv * x_.at(bi, i, 0, 0, 0);
                    dx.at(bi, i, 0, 0, 0) += gv * wr[i];
                }
            }
        }
        return dx;
    }

    void visit_params(const ParamVisitorT<S>& v) {
        v(weight_);
        v(bias_);
    }

private:
    int ci_, co_;
    ParamT<S> weight_, bias_;
    TensorT<S> x_;
};

// ---------------------------------------------------------------------------
// Softmax over the channel axis of (B, C, 1,1,1).
// ---------------------------------------------------------------------------
template <class S>
class SoftmaxChannelT {
public:
    TensorT<S> forward(const TensorT<S>& x) {
        if (x.spatial() != 1) throw std::invalid_argument("channel softmax expects spatial 1");
        p_ = x;
        for (int bi = 0; bi < x.b; ++bi) {
            S mx = x.at(bi, 0, 0, 0, 0);
            for (int ci = 1; ci < x.c; ++ci) mx = std::max(mx, x.at(bi, ci, 0, 0, 0));
            S sum{0};
            for (int ci = 0; ci < x.c; ++ci) {
                const S e = std::exp(x.at(bi, ci, 0, 0, 0) - mx);
                p_.at(bi, ci, 0, 0, 0) = e;
                sum += e;
            }
            for (int ci = 0; ci < x.c; ++ci) p_.at(bi, ci, 0, 0, 0) /= sum;
        }
        return p_;
    }

    TensorT<S> backward(const TensorT<S>& g) {
        TensorT<S> dx = g;
        for (int bi = 0; bi < g.b; ++bi) {
            S dot{0};
            for (int ci = 0; ci < g.c; ++ci) dot += g.at(bi, ci, 0, 0, 0) * p_.at(bi, ci, 0, 0, 0);
            for (int ci = 0; ci < g.c; ++ci)
                dx.at(bi, ci, 0, 0, 0) =
                    p_.at(bi, ci, 0, 0, 0) * (g.at(bi, ci, 0, 0, 0) - dot);
        }
        return dx;
    }

private:
    TensorT<S> p_;
};

// ---------------------------------------------------------------------------
// Broadcast multiply of a feature map by per-(batch,channel) scalars.
// ---------------------------------------------------------------------------
template <class S>
class BroadcastMulT {
public:
    TensorT<S> forward(const TensorT<S>& f, const TensorT<S>& a) {
        if (a.c != f.c || a.spatial() != 1 || a.b != f.b)
            throw std::invalid_argument("broadcast mul: scalar tensor must be (B,C,1,1,1)");
        f_ = f;
        a_ = a;
        TensorT<S> out = f;
        parallel_for(int64_t(f.b) * f.c, [&](int64_t lo, int64_t hi) {
            for (int64_t bc = lo; bc < hi; ++bc) {
                const int bi = int(bc / f.c), ci = int(bc % f.c);
                const S s = a.at(bi, ci, 0, 0, 0);
                S* o = out.plane(bi, ci);
                for (int64_t i = 0; i < f.spatial(); ++i) o[i] *= s;
            }
        });
        return out;
    }

    std::pair<TensorT<S>, TensorT<S>> backward(const TensorT<S>& g) {
        TensorT<S> df = g;
        TensorT<S> da(a_.b, a_.c, 1, 1, 1);
        parallel_for(int64_t(f_.b) * f_.c, [&](int64_t lo, int64_t hi) {
            for (int64_t bc = lo; bc < hi; ++bc) {
                const int bi = int(bc / f_.c), ci = int(bc % f_.c);
                const S s = a_.at(bi, ci, 0, 0, 0);
                const S* gp = g.plane(bi, ci);
                const S* fp = f_.plane(bi, ci);
                S* dfp = df.plane(bi, ci);
                S acc{0};
                for (int64_t i = 0; i < f_.spatial(); ++i) {
                    acc += gp[i] * fp[i];
                    dfp[i] = gp[i] * s;
                }
                da.at(bi, ci, 0, 0, 0) = acc;
            }
        });
        return {std::move(df), std::move(da)};
    }

private:
    TensorT<S> f_, a_;
};

// channel concatenation helpers -------------------------------------------

template <class S>
TensorT<S> concat_channels(const TensorT<S>& a, const TensorT<S>& b) {
    if (a.b != b.b || a.d != b.d || a.h != b.h || a.w != b.w)
        throw std::invalid_argument("concat: spatial/batch mismatch");
    TensorT<S> out(a.b, a.c + b.c, a.d, a.h, a.w);
    for (int bi = 0; bi < a.b; ++bi) {
        for (int ci = 0; ci < a.c; ++ci)
            std::copy_n(a.plane(bi, ci), size_t(a.spatial()), out.plane(bi, ci));
        for (int ci = 0; ci < b.c; ++ci)
            std::copy_n(b.plane(bi, ci), size_t(b.spatial()), out.plane(bi, a.c + ci));
    }
    return out;
}

template <class S>
TensorT<S> concat_channels(const TensorT<S>& a, const TensorT<S>& b, const TensorT<S>& c) {
    return concat_channels(concat_channels(a, b), c);
}

/// Slice channels [c0, c0+len) into a fresh tensor.
template <class S>
TensorT<S> slice_channels(const TensorT<S>& x, int c0, int len) {
    TensorT<S> out(x.b, len, x.d, x.h, x.w);
    for (int bi = 0; bi < x.b; ++bi)
        for (int ci = 0; ci < len; ++ci)
            std::copy_n(x.plane(bi, c0 + ci), size_t(x.spatial()), out.plane(bi, ci));
    return out;
}

}  // namespace vesselseg::nn
