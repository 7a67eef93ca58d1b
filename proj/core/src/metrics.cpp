#include "vesselseg/metrics.hpp"

#include <cmath>
#include <limits>

namespace vesselseg {

ConfusionCounts confusion(const LabelVolume& pred, const LabelVolume& gt, uint8_t class_id) {
    if (!(pred.dims() == gt.dims()))
        throw VolumeError("confusion: prediction and ground truth dims differ");
    ConfusionCounts c;
    const auto& p = pred.data();
    const auto& g = gt.data();
    for (size_t i = 0; i < p.size(); ++i) {
        const bool pi = p[i] == class_id;
        const bool gi = g[i] == class_id;
        if (pi && gi) ++c.tp;
        else if (pi) ++c.fp;
        else if (gi) ++c.fn;
        else ++c.tn;
    }
    return c;
}

OverlapMetrics overlap_from_counts(const ConfusionCounts& c) {
    OverlapMetrics m;
    const auto ratio = [](uint64_t num, uint64_t den, bool trivially_perfect) {
        if (den == 0) return trivially_perfect ? 1.0 : 0.0;
        return double(num) / double(den);
    };
    const bool agree_empty = c.tp == 0 && c.fp == 0 && c.fn == 0;
    m.dice = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, agree_empty);
    m.iou = ratio(c.tp, c.tp + c.fp + c.fn, agree_empty);
    m.precision = ratio(c.tp, c.tp + c.fp, c.fn == 0);
    m.recall = ratio(c.tp, c.tp + c.fn, c.fp == 0);
    return m;
}

std::vector<std::array<int, 3>> boundary_voxels(const LabelVolume& v, uint8_t class_id) {
    static constexpr int off[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0},
                                      {0, 1, 0},  {0, 0, -1}, {0, 0, 1}};
    const Dims& d = v.dims();
    std::vector<std::array<int, 3>> out;
    for (int z = 0; z < d.d; ++z)
        for (int y = 0; y < d.h; ++y)
            for (int x = 0; x < d.w; ++x) {
                if (v.at(z, y, x) != class_id) continue;
                for (const auto& o : off) {
                    const int zz = z + o[0], yy = y + o[1], xx = x + o[2];
                    const bool outside = zz < 0 || zz >= d.d || yy < 0 || yy >= d.h ||
                                         xx < 0 || xx >= d.w;
                    if (outside || v.at(zz, yy, xx) != class_id) {
                        out.push_back({z, y, x});
                        break;
                    }
                }
            }
    return out;
}

namespace {

double sum_min_distances(const std::vector<std::array<int, 3>>& from,
                         const std::vector<std::array<int, 3>>& to, const Spacing& sp) {
    double total = 0.0;
    for (const auto& a : from) {
        double best = std::numeric_limits<double>::max();
        for (const auto& b : to) {
            const double dz = (a[0] - b[0]) * sp.z;
            const double dy = (a[1] - b[1]) * sp.y;
            const double dx = (a[2] - b[2]) * sp.x;
            best = std::min(best, dz * dz + dy * dy + dx * dx);
            if (best == 0.0) break;
        }
        total += std::sqrt(best);
    }
    return total;
}

}  // namespace

AsdResult average_surface_distance(const LabelVolume& pred, const LabelVolume& gt,
                                   uint8_t class_id) {
    if (!(pred.dims() == gt.dims()))
        throw VolumeError("average_surface_distance: dims differ");
    const auto bp = boundary_voxels(pred, class_id);
    const auto bg = boundary_voxels(gt, class_id);
    if (bp.empty() && bg.empty()) return {0.0, true};
    if (bp.empty() || bg.empty()) return {0.0, false};
    const Spacing& sp = pred.spacing();
    const double total = sum_min_distances(bp, bg, sp) + sum_min_distances(bg, bp, sp);
    return {total / double(bp.size() + bg.size()), true};
}

}  // namespace vesselseg
