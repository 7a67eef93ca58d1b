#pragma once

#include <cstdint>
#include <vector>

#include "vesselseg/volume.hpp"

namespace vesselseg {

/// One-vs-rest voxel counts for a single class.
struct ConfusionCounts {
    uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

    uint64_t total() const { return tp + fp + fn + tn; }
};

ConfusionCounts confusion(const LabelVolume& pred, const LabelVolume& gt, uint8_t class_id);

/// Count-based overlap metrics. Degenerate denominators resolve to 1.0 when
/// the masks agree trivially (both empty) and 0.0 otherwise.
struct OverlapMetrics {
    double dice = 0.0;
    double iou = 0.0;
    double precision = 0.0;
    double recall = 0.0;
};

OverlapMetrics overlap_from_counts(const ConfusionCounts& c);

/// Symmetric mean boundary distance in mm. defined=false when exactly one
/// mask is empty; both empty gives 0. Boundary voxels are foreground voxels
/// with a background or out-of-volume 6-neighbor.
struct AsdResult {
    double mm = 0.0;
    bool defined = true;
};

AsdResult average_surface_distance(const LabelVolume& pred, const LabelVolume& gt,
                                   uint8_t class_id);

/// Boundary voxels of the class mask, (z,y,x) triples in scan order.
std::vector<std::array<int, 3>> boundary_voxels(const LabelVolume& v, uint8_t class_id);

}  // namespace vesselseg
