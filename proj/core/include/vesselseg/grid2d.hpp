#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace vesselseg {

/// Dense row-major 2D grid, y-major then x.
template <class T>
struct Grid2D {
    int h = 0;
    int w = 0;
    std::vector<T> v;

    Grid2D() = default;
    Grid2D(int h_, int w_, T fill = T{}) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, fill) {
        if (h_ <= 0 || w_ <= 0) throw std::invalid_argument("Grid2D: non-positive dims");
    }

    T& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
    const T& at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }

    bool in_bounds(int y, int x) const { return y >= 0 && y < h && x >= 0 && x < w; }
    size_t size() const { return v.size(); }

    bool operator==(const Grid2D&) const = default;
};

using Image2D = Grid2D<float>;
using Mask2D = Grid2D<uint8_t>;
using Labels2D = Grid2D<uint8_t>;

}  // namespace vesselseg
