#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "vesselseg/label_prop.hpp"
#include "vesselseg/metrics.hpp"
#include "vesselseg/phantom.hpp"

using namespace vesselseg;

namespace {

// annulus-free solid disk stamp
void stamp_disk(LabelVolume& v, int z, double cy, double cx, double r, uint8_t cls) {
    for (int y = 0; y < v.dims().h; ++y)
        for (int x = 0; x < v.dims().w; ++x) {
            const double dy = y - cy, dx = x - cx;
            if (std::sqrt(dy * dy + dx * dx) < r) v.at(z, y, x) = cls;
        }
}

VesselSpec drifting_tube() {
    VesselSpec s;
    s.base_cy = 31.5;
    s.base_cx = 31.5;
    s.lumen_radius = 3.5;
    s.wall_thickness0 = s.wall_thickness1 = 1.5;
    s.drift_amp_y = 2.5;
    s.drift_amp_x = 2.5;
    s.drift_period = 28.0;
    return s;
}

double lumen_dice(const LabelVolume& pred, const LabelVolume& gt) {
    return overlap_from_counts(confusion(pred, gt, kLumen)).dice;
}

}  // namespace

TEST_CASE("single tube forms exactly one track spanning all annotated slices") {
    const PhantomCase c = generate_case(drifting_tube(), {32, 64, 64}, {1, 1, 1}, 4, 0.0, 1);
    const auto tracks = build_tracks(c.sparse);
    REQUIRE(tracks.size() == 1);
    CHECK(tracks[0].entries.size() == c.sparse.annotated_slices().size());
    CHECK(tracks[0].entries.front().z == 0);
    CHECK(tracks[0].entries.back().z == 28);
}

TEST_CASE("two parallel tubes twenty voxels apart become two tracks") {
    LabelVolume sparse = LabelVolume::zeros({9, 48, 48}, {1, 1, 1});
    for (int z : {0, 4, 8}) {
        stamp_disk(sparse, z, 14.0, 14.0, 3.0, kLumen);
        stamp_disk(sparse, z, 34.0, 34.0, 3.0, kLumen);
    }
    sparse.set_annotated_slices({0, 4, 8});

    const auto tracks = build_tracks(sparse, 10.0);
    REQUIRE(tracks.size() == 2);
    CHECK(tracks[0].entries.size() == 3);
    CHECK(tracks[1].entries.size() == 3);
    // centroids stay near the stamped centers
    CHECK(std::abs(tracks[0].entries[0].cy - 14.0) < 0.5);
    CHECK(std::abs(tracks[1].entries[0].cx - 34.0) < 0.5);
}

TEST_CASE("a single annotated slice yields single-entry tracks") {
    LabelVolume sparse = LabelVolume::zeros({5, 32, 32}, {1, 1, 1});
    stamp_disk(sparse, 2, 15.0, 15.0, 3.0, kLumen);
    sparse.set_annotated_slices({2});
    const auto tracks = build_tracks(sparse);
    REQUIRE(tracks.size() == 1);
    CHECK(tracks[0].entries.size() == 1);

    const Centerline line = interpolate_centerline(tracks[0]);
    CHECK(line.z_first == 2);
    CHECK(line.z_last() == 2);
    CHECK_THROWS_AS(line.at(3), VolumeError);
}

TEST_CASE("centroid interpolation is linear between annotations") {
    SliceTrack t;
    t.track_id = 0;
    TrackEntry a;
    a.z = 0;
    a.cy = 10.0;
    a.cx = 10.0;
    TrackEntry b;
    b.z = 4;
    b.cy = 18.0;
    b.cx = 10.0;
    t.entries = {a, b};

    const Centerline line = interpolate_centerline(t);
    CHECK(line.at(1) == std::pair{12.0, 10.0});
    CHECK(line.at(2) == std::pair{14.0, 10.0});
    CHECK(line.at(0) == std::pair{10.0, 10.0});
    CHECK(line.at(4) == std::pair{18.0, 10.0});

    SUBCASE("equal endpoints give a constant line") {
        t.entries[1].cy = 10.0;
        const Centerline flat = interpolate_centerline(t);
        for (int z = 0; z <= 4; ++z) CHECK(flat.at(z) == std::pair{10.0, 10.0});
    }
}

TEST_CASE("A-IPL copies the nearest annotated plane, ties to the lower index") {
    LabelVolume sparse = LabelVolume::zeros({5, 24, 24}, {1, 1, 1});
    stamp_disk(sparse, 0, 8.0, 8.0, 2.5, kLumen);
    stamp_disk(sparse, 4, 15.0, 15.0, 2.5, kWall);
    sparse.set_annotated_slices({0, 4});

    const LabelVolume out = propagate_aipl(sparse);
    CHECK(extract_slice(out, 1) == extract_slice(sparse, 0));
    CHECK(extract_slice(out, 2) == extract_slice(sparse, 0));  // tie -> lower
    CHECK(extract_slice(out, 3) == extract_slice(sparse, 4));
    CHECK(out.annotated_slices() == std::vector<int>{0, 1, 2, 3, 4});
}

TEST_CASE("A-IPL leaves slices outside the annotated span empty") {
    LabelVolume sparse = LabelVolume::zeros({8, 24, 24}, {1, 1, 1});
    stamp_disk(sparse, 2, 8.0, 8.0, 2.5, kLumen);
    stamp_disk(sparse, 5, 8.0, 8.0, 2.5, kLumen);
    sparse.set_annotated_slices({2, 5});

    const LabelVolume out = propagate_aipl(sparse);
    for (int z : {0, 1, 6, 7})
        for (int y = 0; y < 24; ++y)
            for (int x = 0; x < 24; ++x) CHECK(out.at(z, y, x) == kBackground);
    CHECK(out.annotated_slices() == std::vector<int>{2, 3, 4, 5});
}

TEST_CASE("straight tube: C-IPL equals A-IPL exactly when offsets round to zero") {
    VesselSpec s = drifting_tube();
    s.drift_amp_y = s.drift_amp_x = 0.0;
    const PhantomCase c = generate_case(s, {16, 64, 64}, {1, 1, 1}, 4, 0.0, 2);
    const LabelVolume cipl = propagate_cipl(c.sparse);
    const LabelVolume aipl = propagate_aipl(c.sparse);
    CHECK(cipl.data() == aipl.data());
    CHECK(cipl.annotated_slices() == aipl.annotated_slices());
}

TEST_CASE("expert slices pass through both propagations verbatim") {
    const PhantomCase c = generate_case(drifting_tube(), {32, 64, 64}, {1, 1, 1}, 4, 0.0, 3);
    const LabelVolume cipl = propagate_cipl(c.sparse);
    const LabelVolume aipl = propagate_aipl(c.sparse);
    for (int z : c.sparse.annotated_slices()) {
        CHECK(extract_slice(cipl, z) == extract_slice(c.sparse, z));
        CHECK(extract_slice(aipl, z) == extract_slice(c.sparse, z));
    }
}

TEST_CASE("C-IPL slices are exact translates of their source component") {
    const PhantomCase c = generate_case(drifting_tube(), {32, 64, 64}, {1, 1, 1}, 4, 0.0, 4);
    const LabelVolume cipl = propagate_cipl(c.sparse);
    const auto tracks = build_tracks(c.sparse);
    REQUIRE(tracks.size() == 1);
    const Centerline line = interpolate_centerline(tracks[0]);

    for (int z = 1; z < 28; ++z) {
        if (c.sparse.is_annotated(z)) continue;
        // source = nearer annotated slice, tie to the lower one
        const int lo = (z / 4) * 4, hi = lo + 4;
        const int src_z = (z - lo <= hi - z) ? lo : hi;
        const auto [ty, tx] = line.at(z);
        const auto [sy, sx] = line.at(src_z);
        const int dy = int(std::lround(ty - sy));
        const int dx = int(std::lround(tx - sx));

        const Labels2D out = extract_slice(cipl, z);
        const Labels2D src = extract_slice(c.sparse, src_z);
        for (int y = 0; y < out.h; ++y)
            for (int x = 0; x < out.w; ++x) {
                const int py = y - dy, px = x - dx;
                const uint8_t expect =
                    (py >= 0 && py < src.h && px >= 0 && px < src.w) ? src.at(py, px) : 0;
                CHECK(out.at(y, x) == expect);
            }
    }
}

TEST_CASE("C-IPL centroid error stays below the half-sqrt2 rounding bound") {
    const PhantomCase c = generate_case(drifting_tube(), {32, 64, 64}, {1, 1, 1}, 4, 0.0, 5);
    const LabelVolume cipl = propagate_cipl(c.sparse);
    const auto tracks = build_tracks(c.sparse);
    const Centerline line = interpolate_centerline(tracks[0]);

    for (int z = line.z_first; z <= line.z_last(); ++z) {
        if (c.sparse.is_annotated(z)) continue;
        double sy = 0, sx = 0;
        int n = 0;
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x)
                if (cipl.at(z, y, x) != kBackground) {
                    sy += y;
                    sx += x;
                    ++n;
                }
        REQUIRE(n > 0);
        const auto [ty, tx] = line.at(z);
        const double dy = sy / n - ty, dx = sx / n - tx;
        CHECK(std::sqrt(dy * dy + dx * dx) <= 0.7072);
    }
}

TEST_CASE("pasted slices preserve in-plane lumen enclosure") {
    const PhantomCase c = generate_case(drifting_tube(), {32, 64, 64}, {1, 1, 1}, 4, 0.0, 6);
    const LabelVolume cipl = propagate_cipl(c.sparse);
    for (int z = 0; z < 29; ++z) {
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x) {
                if (cipl.at(z, y, x) != kLumen) continue;
                const int ny[4] = {y - 1, y + 1, y, y};
                const int nx[4] = {x, x, x - 1, x + 1};
                for (int k = 0; k < 4; ++k) {
                    if (ny[k] < 0 || ny[k] >= 64 || nx[k] < 0 || nx[k] >= 64) continue;
                    CHECK(cipl.at(z, ny[k], nx[k]) != kBackground);
                }
            }
    }
}

TEST_CASE("A-IPL shows the stair-step offset that C-IPL removes") {
    const PhantomCase c = generate_case(drifting_tube(), {32, 64, 64}, {1, 1, 1}, 4, 0.0, 7);
    const LabelVolume aipl = propagate_aipl(c.sparse);
    const auto tracks = build_tracks(c.sparse);
    const Centerline line = interpolate_centerline(tracks[0]);

    // find an unlabeled slice where the true center moved by > 1 voxel
    bool found = false;
    for (int z = 1; z < 28 && !found; ++z) {
        if (c.sparse.is_annotated(z)) continue;
        const int lo = (z / 4) * 4, hi = lo + 4;
        const int src_z = (z - lo <= hi - z) ? lo : hi;
        const auto [ty, tx] = line.at(z);
        const auto [sy, sx] = line.at(src_z);
        if (std::hypot(ty - sy, tx - sx) < 1.0) continue;
        found = true;

        double cy = 0, cx = 0;
        int n = 0;
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x)
                if (aipl.at(z, y, x) != kBackground) {
                    cy += y;
                    cx += x;
                    ++n;
                }
        REQUIRE(n > 0);
        CHECK(std::hypot(cy / n - ty, cx / n - tx) > 0.5);
    }
    CHECK(found);
}

TEST_CASE("C-IPL beats A-IPL on a drifting tube") {
    const PhantomCase c = generate_case(drifting_tube(), {64, 64, 64}, {1, 1, 1}, 4, 0.0, 8);
    const double cipl_dice = lumen_dice(propagate_cipl(c.sparse), c.gt);
    const double aipl_dice = lumen_dice(propagate_aipl(c.sparse), c.gt);
    CHECK(cipl_dice > aipl_dice);
}

TEST_CASE("build_tracks requires an annotated slice") {
    LabelVolume empty = LabelVolume::zeros({4, 8, 8}, {1, 1, 1});
    CHECK_THROWS_AS(build_tracks(empty), VolumeError);
    CHECK_THROWS_AS(propagate_aipl(empty), VolumeError);
}
