#include "vesselseg/label_prop.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vesselseg/components2d.hpp"

namespace vesselseg {

std::pair<double, double> Centerline::at(int z) const {
    if (z < z_first || z > z_last())
        throw VolumeError("centerline queried at z=" + std::to_string(z) + " outside [" +
                          std::to_string(z_first) + "," + std::to_string(z_last()) + "]");
    return points[static_cast<size_t>(z - z_first)];
}

std::vector<SliceTrack> build_tracks(const LabelVolume& sparse, double match_radius) {
    if (sparse.annotated_slices().empty())
        throw VolumeError("build_tracks requires at least one annotated slice");

    std::vector<SliceTrack> tracks;
    for (int z : sparse.annotated_slices()) {
        const Labels2D plane = extract_slice(sparse, z);
        Mask2D merged(plane.h, plane.w);
        for (size_t i = 0; i < plane.size(); ++i) merged.v[i] = plane.v[i] != 0;
        const auto comps = connected_components(merged, 8);

        std::vector<uint8_t> taken(tracks.size(), 0);
        for (const auto& comp : comps) {
            // nearest free track by its most recent centroid
            int best = -1;
            double best_d = std::numeric_limits<double>::max();
            for (size_t t = 0; t < tracks.size(); ++t) {
                if (taken[t]) continue;
                const TrackEntry& last = tracks[t].entries.back();
                const double dy = comp.centroid_y - last.cy;
                const double dx = comp.centroid_x - last.cx;
                const double d = std::sqrt(dy * dy + dx * dx);
                if (d < best_d) {
                    best_d = d;
                    best = static_cast<int>(t);
                }
            }
            TrackEntry entry;
            entry.z = z;
            entry.cy = comp.centroid_y;
            entry.cx = comp.centroid_x;
            entry.pixels.reserve(comp.pixels.size());
            for (const auto& [y, x] : comp.pixels)
                entry.pixels.emplace_back(y, x, plane.at(y, x));

            if (best >= 0 && best_d <= match_radius) {
                tracks[static_cast<size_t>(best)].entries.push_back(std::move(entry));
                taken[static_cast<size_t>(best)] = 1;
            } else {
                SliceTrack t;
                t.track_id = static_cast<int>(tracks.size());
                t.entries.push_back(std::move(entry));
                tracks.push_back(std::move(t));
                taken.push_back(1);
            }
        }
    }
    return tracks;
}

Centerline interpolate_centerline(const SliceTrack& track) {
    if (track.entries.empty()) throw VolumeError("cannot interpolate an empty track");
    Centerline line;
    line.track_id = track.track_id;
    line.z_first = track.entries.front().z;
    const int z_last = track.entries.back().z;
    line.points.reserve(static_cast<size_t>(z_last - line.z_first + 1));

    size_t seg = 0;  // entries[seg] .. entries[seg+1] brackets z
    for (int z = line.z_first; z <= z_last; ++z) {
        while (seg + 1 < track.entries.size() && track.entries[seg + 1].z <= z) ++seg;
        const TrackEntry& a = track.entries[seg];
        if (a.z == z || seg + 1 >= track.entries.size()) {
            line.points.emplace_back(a.cy, a.cx);
            continue;
        }
        const TrackEntry& b = track.entries[seg + 1];
        const double t = double(z - a.z) / double(b.z - a.z);
        line.points.emplace_back(a.cy + t * (b.cy - a.cy), a.cx + t * (b.cx - a.cx));
    }
    return line;
}

namespace {

// lumen (1) overrides wall (2) on overlap
inline uint8_t merge_class(uint8_t existing, uint8_t incoming) {
    if (existing == kBackground) return incoming;
    if (existing == kLumen || incoming == kLumen) return kLumen;
    return kWall;
}

}  // namespace

LabelVolume propagate_cipl(const LabelVolume& sparse, double match_radius) {
    const auto tracks = build_tracks(sparse, match_radius);
    const Dims dims = sparse.dims();

    LabelVolume out = LabelVolume::zeros(dims, sparse.spacing());
    std::vector<uint8_t> received(static_cast<size_t>(dims.d), 0);

    // expert slices pass through verbatim
    for (int z : sparse.annotated_slices()) {
        insert_slice(out, z, extract_slice(sparse, z));
        received[static_cast<size_t>(z)] = 1;
    }

    for (const auto& track : tracks) {
        if (track.entries.size() < 2) continue;
        const Centerline line = interpolate_centerline(track);
        for (size_t i = 0; i + 1 < track.entries.size(); ++i) {
            const TrackEntry& lo = track.entries[i];
            const TrackEntry& hi = track.entries[i + 1];
            for (int z = lo.z + 1; z < hi.z; ++z) {
                if (sparse.is_annotated(z)) continue;  // never touch expert planes
                const TrackEntry& src = (z - lo.z <= hi.z - z) ? lo : hi;
                const auto [ty, tx] = line.at(z);
                const int dy = static_cast<int>(std::lround(ty - src.cy));
                const int dx = static_cast<int>(std::lround(tx - src.cx));
                bool wrote = false;
                for (const auto& [y, x, cls] : src.pixels) {
                    const int ny = y + dy, nx = x + dx;
                    if (ny < 0 || ny >= dims.h || nx < 0 || nx >= dims.w) continue;  // border clip
                    uint8_t& cell = out.at(z, ny, nx);
                    cell = merge_class(cell, cls);
                    wrote = true;
                }
                if (wrote) received[static_cast<size_t>(z)] = 1;
            }
        }
    }

    std::vector<int> annotated;
    for (int z = 0; z < dims.d; ++z)
        if (received[static_cast<size_t>(z)]) annotated.push_back(z);
    out.set_annotated_slices(std::move(annotated));
    return out;
}

LabelVolume propagate_aipl(const LabelVolume& sparse) {
    if (sparse.annotated_slices().empty())
        throw VolumeError("propagate_aipl requires at least one annotated slice");
    const Dims dims = sparse.dims();
    const auto& ann = sparse.annotated_slices();
    const int z_first = ann.front();
    const int z_last = ann.back();

    LabelVolume out = LabelVolume::zeros(dims, sparse.spacing());
    std::vector<int> annotated;
    size_t seg = 0;
    for (int z = z_first; z <= z_last; ++z) {
        while (seg + 1 < ann.size() && ann[seg + 1] <= z) ++seg;
        int source = ann[seg];
        if (seg + 1 < ann.size()) {
            const int lo = ann[seg], hi = ann[seg + 1];
            source = (z - lo <= hi - z) ? lo : hi;  // tie -> lower index
        }
        insert_slice(out, z, extract_slice(sparse, source));
        annotated.push_back(z);
    }
    out.set_annotated_slices(std::move(annotated));
    return out;
}

}  // namespace vesselseg
