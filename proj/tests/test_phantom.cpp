#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "vesselseg/phantom.hpp"

using namespace vesselseg;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* name) {
    const fs::path p = fs::temp_directory_path() / "vesselseg_tests" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

VesselSpec straight_tube(double cy, double cx, double r, double t) {
    VesselSpec s;
    s.base_cy = cy;
    s.base_cx = cx;
    s.lumen_radius = r;
    s.wall_thickness0 = s.wall_thickness1 = t;
    return s;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("straight tube has identical per-slice foreground counts") {
    const VesselSpec spec = straight_tube(15.5, 15.5, 3.0, 1.0);
    const PhantomCase c = generate_case(spec, {32, 32, 32}, {1, 1, 1}, 4, 0.0, 1);

    const int expect_lumen = oracle::disk_pixel_count(32, 32, 15.5, 15.5, 3.0);
    const int expect_merged = oracle::disk_pixel_count(32, 32, 15.5, 15.5, 4.0);
    REQUIRE(expect_lumen > 0);

    for (int z = 0; z < 32; ++z) {
        int lumen = 0, merged = 0;
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) {
                lumen += c.gt.at(z, y, x) == kLumen;
                merged += c.gt.at(z, y, x) != kBackground;
            }
        CHECK(lumen == expect_lumen);
        CHECK(merged == expect_merged);
    }
}

TEST_CASE("annulus construction keeps in-plane 4-neighbors of lumen inside the vessel") {
    const PhantomCase c = generate_case(straight_tube(15.5, 15.5, 3.0, 1.0),
                                        {16, 32, 32}, {1, 1, 1}, 4, 0.0, 2);
    for (int z = 0; z < 16; ++z)
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) {
                if (c.gt.at(z, y, x) != kLumen) continue;
                const int ny[4] = {y - 1, y + 1, y, y};
                const int nx[4] = {x, x, x - 1, x + 1};
                for (int k = 0; k < 4; ++k) {
                    if (ny[k] < 0 || ny[k] >= 32 || nx[k] < 0 || nx[k] >= 32) continue;
                    CHECK(c.gt.at(z, ny[k], nx[k]) != kBackground);
                }
            }
}

TEST_CASE("interval sampling: k=4, D=16 annotates [0,4,8,12]") {
    const PhantomCase c = generate_case(straight_tube(15.5, 15.5, 3.0, 1.0),
                                        {16, 32, 32}, {1, 1, 1}, 4, 0.0, 3);
    CHECK(c.sparse.annotated_slices() == std::vector<int>{0, 4, 8, 12});
}

TEST_CASE("sparse equals gt on annotated slices and is empty elsewhere") {
    SuiteConfig cfg;
    cfg.num_cases = 1;
    cfg.train_cases = 1;
    cfg.val_cases = 0;
    cfg.test_cases = 0;
    cfg.stenosis_prob = 1.0;
    const VesselSpec spec = draw_spec(cfg, 0);
    const PhantomCase c = generate_case(spec, cfg.dims, cfg.spacing, cfg.interval,
                                        cfg.noise_sigma, 5);
    for (int z = 0; z < cfg.dims.d; ++z) {
        const bool annotated = c.sparse.is_annotated(z);
        for (int y = 0; y < cfg.dims.h; ++y)
            for (int x = 0; x < cfg.dims.w; ++x) {
                if (annotated) CHECK(c.sparse.at(z, y, x) == c.gt.at(z, y, x));
                else CHECK(c.sparse.at(z, y, x) == kBackground);
            }
    }
}

TEST_CASE("drifting stenotic ground truth satisfies lumen enclosure on every slice") {
    SuiteConfig cfg;
    for (uint64_t i = 0; i < 3; ++i) {
        cfg.stenosis_prob = i == 0 ? 0.0 : 1.0;
        const VesselSpec spec = draw_spec(cfg, i);
        const PhantomCase c = generate_case(spec, cfg.dims, cfg.spacing, 4, 0.0, 10 + i);
        std::array<int, 3> where{};
        const bool ok = lumen_enclosed(c.gt, &where);
        CAPTURE(where[0]);
        CAPTURE(where[1]);
        CAPTURE(where[2]);
        CHECK(ok);
    }
}

TEST_CASE("bifurcation yields two lumen components beyond the split") {
    VesselSpec spec = straight_tube(31.5, 31.5, 3.0, 1.5);
    Bifurcation b;
    b.split_slice = 16;
    b.offset_y = 0.0;
    b.offset_x = 8.0;
    b.ramp_slices = 8;
    spec.bifurcation = b;
    const PhantomCase c = generate_case(spec, {48, 64, 64}, {1, 1, 1}, 4, 0.0, 4);

    const auto lumen_components = [&](int z) {
        return oracle::count_components_2d(
            64, 64, [&](int y, int x) { return c.gt.at(z, y, x) == kLumen; });
    };
    CHECK(lumen_components(0) == 1);
    CHECK(lumen_components(15) == 1);
    // after the ramp the children are fully separated (offsets 8 each side)
    for (int z = 26; z < 48; ++z) CHECK(lumen_components(z) == 2);
}

TEST_CASE("border clearance violations are rejected") {
    // radius+wall = 5, center 4 voxels from the border
    CHECK_THROWS_WITH_AS(
        generate_case(straight_tube(4.0, 16.0, 3.0, 2.0), {8, 32, 32}, {1, 1, 1}, 4, 0.0, 1),
        doctest::Contains("border"), VolumeError);
    // stenosis dropping the radius below one voxel
    VesselSpec thin = straight_tube(15.5, 15.5, 1.2, 1.0);
    thin.stenosis = Stenosis{8, 4.0, 0.5};
    CHECK_THROWS_AS(generate_case(thin, {16, 32, 32}, {1, 1, 1}, 4, 0.0, 1), VolumeError);
}

TEST_CASE("suite split counts and manifest layout") {
    const auto dir = temp_dir("suite");
    SuiteConfig cfg;
    cfg.num_cases = 10;
    cfg.train_cases = 7;
    cfg.val_cases = 1;
    cfg.test_cases = 2;
    cfg.dims = {16, 48, 48};
    const Manifest m = generate_suite(cfg, dir);

    CHECK(m.entries.size() == 10);
    CHECK(m.by_split("train").size() == 7);
    CHECK(m.by_split("val").size() == 1);
    CHECK(m.by_split("test").size() == 2);

    const Manifest loaded = Manifest::load(dir / "manifest.json");
    REQUIRE(loaded.entries.size() == 10);
    CHECK(loaded.entries[0].case_id == "case_000");
    CHECK(fs::exists(loaded.resolve(loaded.entries[0].image_path)));
    CHECK(fs::exists(loaded.resolve(loaded.entries[9].sparse_path)));

    SUBCASE("split counts must sum to num_cases") {
        cfg.test_cases = 5;
        CHECK_THROWS_AS(generate_suite(cfg, dir), VolumeError);
    }
}

TEST_CASE("same seed twice gives byte-identical suites") {
    SuiteConfig cfg;
    cfg.num_cases = 2;
    cfg.train_cases = 2;
    cfg.val_cases = 0;
    cfg.test_cases = 0;
    cfg.dims = {16, 48, 48};
    cfg.noise_sigma = 0.03;

    const auto a = temp_dir("det_a");
    const auto b = temp_dir("det_b");
    generate_suite(cfg, a);
    generate_suite(cfg, b);

    for (const auto& entry : fs::directory_iterator(a)) {
        const auto rel = entry.path().filename();
        CAPTURE(rel.string());
        CHECK(slurp(entry.path()) == slurp(b / rel));
    }
}
