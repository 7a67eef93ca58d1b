#pragma once

#include <utility>
#include <vector>

#include "vesselseg/grid2d.hpp"

namespace vesselseg {

struct Component2D {
    std::vector<std::pair<int, int>> pixels;  // (y,x), scan order
    double centroid_y = 0.0;
    double centroid_x = 0.0;
    int y0 = 0, x0 = 0, y1 = 0, x1 = 0;  // inclusive pixel bbox

    bool contains(int y, int x) const;
};

/// Connected components of nonzero pixels, in deterministic scan order.
/// connectivity is 4 or 8.
std::vector<Component2D> connected_components(const Mask2D& fg, int connectivity = 8);

}  // namespace vesselseg
