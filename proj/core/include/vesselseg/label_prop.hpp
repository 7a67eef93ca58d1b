#pragma once

#include <cstdint>
#include <tuple>
#include <utility>
#include <vector>

#include "vesselseg/volume.hpp"

namespace vesselseg {

constexpr double kDefaultMatchRadius = 10.0;

/// One vessel cross-section on an annotated slice: the in-plane connected
/// component of merged foreground (lumen and wall), classes preserved.
struct TrackEntry {
    int z = 0;
    std::vector<std::tuple<int, int, uint8_t>> pixels;  // (y, x, class)
    double cy = 0.0;  // foreground-mass mean of the component
    double cx = 0.0;
};

/// Cross-sections of one vessel chained across annotated slices.
struct SliceTrack {
    int track_id = 0;
    std::vector<TrackEntry> entries;  // increasing z, at most one per slice
};

/// Piecewise-linear centroid interpolation between the track's annotated
/// slices; defined on [z_first, z_last] only (no extrapolation).
struct Centerline {
    int track_id = 0;
    int z_first = 0;
    std::vector<std::pair<double, double>> points;  // (cy,cx) at z_first + i

    int z_last() const { return z_first + static_cast<int>(points.size()) - 1; }
    std::pair<double, double> at(int z) const;
};

/// Groups annotated-slice components (8-connectivity, classes 1 and 2 merged)
/// into tracks by nearest-centroid matching against each track's most recent
/// centroid; matches farther than match_radius start a new track.
std::vector<SliceTrack> build_tracks(const LabelVolume& sparse,
                                     double match_radius = kDefaultMatchRadius);

Centerline interpolate_centerline(const SliceTrack& track);

/// C-IPL: translates each track's nearest annotated component along the
/// interpolated centerline onto the unlabeled slices between annotations.
/// Expert slices pass through verbatim; lumen wins paste conflicts.
LabelVolume propagate_cipl(const LabelVolume& sparse,
                           double match_radius = kDefaultMatchRadius);

/// A-IPL baseline: each unlabeled slice inside the annotated span copies the
/// nearest annotated plane verbatim (tie goes to the lower index).
LabelVolume propagate_aipl(const LabelVolume& sparse);

}  // namespace vesselseg
