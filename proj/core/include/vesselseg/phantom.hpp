#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vesselseg/volume.hpp"

namespace vesselseg {

/// Local lumen narrowing: r(z) = r * (1 - depth * exp(-((z-center)/width)^2)).
struct Stenosis {
    int center_slice = 0;
    double width_slices = 4.0;
    double depth_fraction = 0.4;  // in [0,1)
};

/// Single parent splitting into two children drifting apart laterally.
struct Bifurcation {
    int split_slice = 0;
    double offset_y = 0.0;  // full child offset from parent centerline, voxels
    double offset_x = 6.0;
    int ramp_slices = 8;  // slices over which children separate
};

/// Procedural vessel: sinusoidally drifting centerline, optional stenosis,
/// constant-or-linear wall thickness, optional bifurcation.
struct VesselSpec {
    double base_cy = 0.0;
    double base_cx = 0.0;
    double drift_amp_y = 0.0;  // voxels
    double drift_amp_x = 0.0;
    double drift_period = 32.0;  // slices
    double drift_phase_y = 0.0;
    double drift_phase_x = 1.5707963267948966;  // pi/2
    double lumen_radius = 3.0;   // voxels
    std::optional<Stenosis> stenosis;
    double wall_thickness0 = 1.5;  // voxels at z=0
    double wall_thickness1 = 1.5;  // voxels at z=D-1
    std::optional<Bifurcation> bifurcation;

    /// Parent centerline at slice z.
    std::pair<double, double> centerline(int z) const;
    /// All active in-plane centers at slice z (1 before a split, 2 after).
    std::vector<std::pair<double, double>> active_centers(int z) const;
    double radius(int z) const;
    double thickness(int z, int depth) const;

    /// Throws VolumeError when r/t drop below 1 voxel or a centerline comes
    /// closer than r+t to a lateral border anywhere in [0,D).
    void validate_for(const Dims& dims) const;
};

/// Intensity model for the synthetic image (f32, before additive noise).
struct IntensityModel {
    float lumen = 0.9f;
    float wall = 0.5f;
    float background = 0.1f;
};

struct PhantomCase {
    Volume3D image;
    LabelVolume gt;      // fully labeled, annotated_slices = all slices
    LabelVolume sparse;  // labels kept on every k-th slice only
};

/// Deterministic case generation: voxel (z,y,x) is lumen iff its in-plane
/// distance to some active centerline is < r(z), wall iff within [r, r+t).
PhantomCase generate_case(const VesselSpec& spec, Dims dims, Spacing spacing, int interval,
                          double noise_sigma, uint64_t seed,
                          const IntensityModel& intensity = {});

struct SuiteConfig {
    int num_cases = 10;
    Dims dims{64, 64, 64};
    Spacing spacing{0.6, 0.6, 0.6};
    int interval = 4;
    double noise_sigma = 0.02;
    uint64_t seed = 1234;
    int train_cases = 7;
    int val_cases = 1;
    int test_cases = 2;

    // per-case variation ranges
    double drift_amp_min = 1.5, drift_amp_max = 3.0;
    double drift_period_min = 24.0, drift_period_max = 40.0;
    double radius_min = 3.0, radius_max = 4.5;
    double wall_min = 1.5, wall_max = 2.5;
    double stenosis_prob = 0.5;
    double stenosis_depth_min = 0.25, stenosis_depth_max = 0.45;
    double bifurcation_prob = 0.0;
};

struct ManifestEntry {
    std::string case_id;
    std::string image_path;  // relative to the manifest directory
    std::string gt_path;
    std::string sparse_path;
    std::string split;  // "train" | "val" | "test"
};

struct Manifest {
    std::vector<ManifestEntry> entries;

    std::vector<ManifestEntry> by_split(const std::string& split) const;
    void save(const std::filesystem::path& path) const;
    static Manifest load(const std::filesystem::path& path);

    /// Directory the manifest was loaded from (or will be saved to); entry
    /// paths resolve against it.
    std::filesystem::path root;
    std::filesystem::path resolve(const std::string& rel) const { return root / rel; }
};

/// Draws a per-case VesselSpec from the suite's variation ranges.
VesselSpec draw_spec(const SuiteConfig& cfg, uint64_t case_index);

/// Writes N cases + manifest.json under out_dir. Deterministic given the
/// config seed; case i uses an RNG substream derived from (seed, i).
Manifest generate_suite(const SuiteConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace vesselseg
