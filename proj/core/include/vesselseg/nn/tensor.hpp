#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace vesselseg::nn {

/// Dense 5-axis feature map (B,C,D,H,W), W fastest. Scalar type is a template
/// parameter so gradient checks can run the same blocks in double precision.
template <class S>
struct TensorT {
    int b = 0, c = 0, d = 0, h = 0, w = 0;
    std::vector<S> v;

    TensorT() = default;
    TensorT(int b_, int c_, int d_, int h_, int w_, S fill = S{0})
        : b(b_), c(c_), d(d_), h(h_), w(w_),
          v(static_cast<size_t>(b_) * c_ * d_ * h_ * w_, fill) {
        if (b_ <= 0 || c_ <= 0 || d_ <= 0 || h_ <= 0 || w_ <= 0)
            throw std::invalid_argument("tensor dims must be positive");
    }

    size_t numel() const { return v.size(); }
    int64_t spatial() const { return int64_t(d) * h * w; }

    S* plane(int bi, int ci) { return v.data() + (int64_t(bi) * c + ci) * spatial(); }
    const S* plane(int bi, int ci) const { return v.data() + (int64_t(bi) * c + ci) * spatial(); }

    S& at(int bi, int ci, int zi, int yi, int xi) {
        return v[(((int64_t(bi) * c + ci) * d + zi) * h + yi) * w + xi];
    }
    S at(int bi, int ci, int zi, int yi, int xi) const {
        return v[(((int64_t(bi) * c + ci) * d + zi) * h + yi) * w + xi];
    }

    bool same_shape(const TensorT& o) const {
        return b == o.b && c == o.c && d == o.d && h == o.h && w == o.w;
    }
    std::string shape_str() const {
        return "(" + std::to_string(b) + "," + std::to_string(c) + "," + std::to_string(d) + "," +
               std::to_string(h) + "," + std::to_string(w) + ")";
    }

    bool all_finite() const {
        for (S x : v)
            if (!std::isfinite(double(x))) return false;
        return true;
    }
};

template <class S>
TensorT<S> zeros_like(const TensorT<S>& t) {
    return TensorT<S>(t.b, t.c, t.d, t.h, t.w);
}

template <class S>
void add_into(TensorT<S>& dst, const TensorT<S>& src) {
    if (!dst.same_shape(src))
        throw std::invalid_argument("add_into: shape mismatch " + dst.shape_str() + " vs " +
                                    src.shape_str());
    for (size_t i = 0; i < dst.v.size(); ++i) dst.v[i] += src.v[i];
}

using Tensor = TensorT<float>;

}  // namespace vesselseg::nn
