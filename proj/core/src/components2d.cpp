#include "vesselseg/components2d.hpp"

#include <stdexcept>

namespace vesselseg {

bool Component2D::contains(int y, int x) const {
    if (y < y0 || y > y1 || x < x0 || x > x1) return false;
    for (const auto& [py, px] : pixels)
        if (py == y && px == x) return true;
    return false;
}

std::vector<Component2D> connected_components(const Mask2D& fg, int connectivity) {
    if (connectivity != 4 && connectivity != 8)
        throw std::invalid_argument("connectivity must be 4 or 8");
    static constexpr int off8[8][2] = {{-1, -1}, {-1, 0}, {-1, 1}, {0, -1},
                                       {0, 1},   {1, -1}, {1, 0},  {1, 1}};
    static constexpr int off4[4][2] = {{-1, 0}, {0, -1}, {0, 1}, {1, 0}};
    const int n_off = connectivity == 8 ? 8 : 4;
    const auto* off = connectivity == 8 ? off8 : off4;

    std::vector<Component2D> out;
    std::vector<uint8_t> seen(fg.size(), 0);
    std::vector<std::pair<int, int>> stack;

    for (int sy = 0; sy < fg.h; ++sy) {
        for (int sx = 0; sx < fg.w; ++sx) {
            const size_t si = static_cast<size_t>(sy) * fg.w + sx;
            if (!fg.v[si] || seen[si]) continue;
            Component2D comp;
            comp.y0 = comp.y1 = sy;
            comp.x0 = comp.x1 = sx;
            seen[si] = 1;
            stack.clear();
            stack.emplace_back(sy, sx);
            double sum_y = 0.0, sum_x = 0.0;
            while (!stack.empty()) {
                const auto [y, x] = stack.back();
                stack.pop_back();
                comp.pixels.emplace_back(y, x);
                sum_y += y;
                sum_x += x;
                comp.y0 = std::min(comp.y0, y);
                comp.y1 = std::max(comp.y1, y);
                comp.x0 = std::min(comp.x0, x);
                comp.x1 = std::max(comp.x1, x);
                for (int k = 0; k < n_off; ++k) {
                    const int ny = y + off[k][0], nx = x + off[k][1];
                    if (!fg.in_bounds(ny, nx)) continue;
                    const size_t ni = static_cast<size_t>(ny) * fg.w + nx;
                    if (fg.v[ni] && !seen[ni]) {
                        seen[ni] = 1;
                        stack.emplace_back(ny, nx);
                    }
                }
            }
            comp.centroid_y = sum_y / comp.pixels.size();
            comp.centroid_x = sum_x / comp.pixels.size();
            out.push_back(std::move(comp));
        }
    }
    return out;
}

}  // namespace vesselseg
