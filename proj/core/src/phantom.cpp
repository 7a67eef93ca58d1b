#include "vesselseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "vesselseg/rng.hpp"

namespace vesselseg {

namespace {
constexpr double kTwoPi = 6.283185307179586;
}

std::pair<double, double> VesselSpec::centerline(int z) const {
    const double ph = kTwoPi * z / drift_period;
    return {base_cy + drift_amp_y * std::sin(ph + drift_phase_y),
            base_cx + drift_amp_x * std::sin(ph + drift_phase_x)};
}

std::vector<std::pair<double, double>> VesselSpec::active_centers(int z) const {
    const auto c = centerline(z);
    if (!bifurcation || z < bifurcation->split_slice) return {c};
    const auto& b = *bifurcation;
    const double ramp = b.ramp_slices > 0
                            ? std::min(1.0, double(z - b.split_slice) / b.ramp_slices)
                            : 1.0;
    return {{c.first + ramp * b.offset_y, c.second + ramp * b.offset_x},
            {c.first - ramp * b.offset_y, c.second - ramp * b.offset_x}};
}

double VesselSpec::radius(int z) const {
    double r = lumen_radius;
    if (stenosis) {
        const double u = (z - stenosis->center_slice) / stenosis->width_slices;
        r *= 1.0 - stenosis->depth_fraction * std::exp(-u * u);
    }
    return r;
}

double VesselSpec::thickness(int z, int depth) const {
    if (depth <= 1) return wall_thickness0;
    const double t = double(z) / (depth - 1);
    return wall_thickness0 + (wall_thickness1 - wall_thickness0) * t;
}

void VesselSpec::validate_for(const Dims& dims) const {
    for (int z = 0; z < dims.d; ++z) {
        const double r = radius(z);
        const double t = thickness(z, dims.d);
        if (r < 1.0) throw VolumeError("lumen radius drops below 1 voxel at z=" + std::to_string(z));
        if (t < 1.0) throw VolumeError("wall thickness drops below 1 voxel at z=" + std::to_string(z));
        const double margin = r + t;
        for (const auto& [cy, cx] : active_centers(z)) {
            if (cy < margin || cy > dims.h - 1 - margin || cx < margin || cx > dims.w - 1 - margin)
                throw VolumeError("centerline within r+t of a lateral border at z=" + std::to_string(z));
        }
    }
}

namespace {

uint8_t classify(const std::vector<std::pair<double, double>>& centers, double y, double x,
                 double r, double rt) {
    double d2min = 1e30;
    for (const auto& [cy, cx] : centers) {
        const double dy = y - cy, dx = x - cx;
        d2min = std::min(d2min, dy * dy + dx * dx);
    }
    const double d = std::sqrt(d2min);
    if (d < r) return kLumen;
    if (d < rt) return kWall;
    return kBackground;
}

}  // namespace

PhantomCase generate_case(const VesselSpec& spec, Dims dims, Spacing spacing, int interval,
                          double noise_sigma, uint64_t seed, const IntensityModel& intensity) {
    if (interval < 1) throw VolumeError("annotation interval must be >= 1");
    spec.validate_for(dims);

    std::vector<uint8_t> gt(dims.voxels(), 0);
    std::vector<float> img(dims.voxels(), 0.0f);
    const float class_intensity[3] = {intensity.background, intensity.lumen, intensity.wall};

    Rng noise = Rng::derive(seed, 0x706e6f69);  // noise stream
    static constexpr double sub[3] = {-1.0 / 3.0, 0.0, 1.0 / 3.0};

    for (int z = 0; z < dims.d; ++z) {
        const auto centers = spec.active_centers(z);
        const double r = spec.radius(z);
        const double rt = r + spec.thickness(z, dims.d);
        for (int y = 0; y < dims.h; ++y) {
            for (int x = 0; x < dims.w; ++x) {
                const size_t off = voxel_offset(dims, z, y, x);
                gt[off] = classify(centers, y, x, r, rt);
                // 3x3 in-plane supersampling smooths class boundaries
                float acc = 0.0f;
                for (double oy : sub)
                    for (double ox : sub)
                        acc += class_intensity[classify(centers, y + oy, x + ox, r, rt)];
                float v = acc / 9.0f;
                if (noise_sigma > 0.0) v += static_cast<float>(noise.normal(0.0, noise_sigma));
                img[off] = v;
            }
        }
    }

    std::vector<int> annotated;
    for (int z = 0; z < dims.d; z += interval) annotated.push_back(z);

    std::vector<uint8_t> sparse(dims.voxels(), 0);
    for (int z : annotated) {
        const size_t base = voxel_offset(dims, z, 0, 0);
        const size_t plane = static_cast<size_t>(dims.h) * dims.w;
        std::copy_n(gt.begin() + static_cast<long>(base), plane,
                    sparse.begin() + static_cast<long>(base));
    }

    std::vector<int> all_slices(dims.d);
    for (int z = 0; z < dims.d; ++z) all_slices[z] = z;

    PhantomCase out{
        Volume3D(dims, spacing, Dtype::F32, std::move(img)),
        LabelVolume(dims, spacing, std::move(gt), std::move(all_slices)),
        LabelVolume(dims, spacing, std::move(sparse), std::move(annotated)),
    };
    const auto [mn, mx] = std::minmax_element(out.image.data().begin(), out.image.data().end());
    out.image.intensity_range = {{*mn, *mx}};
    return out;
}

VesselSpec draw_spec(const SuiteConfig& cfg, uint64_t case_index) {
    Rng rng = Rng::derive(cfg.seed, case_index, 0x63657073);
    VesselSpec s;
    s.lumen_radius = rng.uniform(cfg.radius_min, cfg.radius_max);
    const double wall = rng.uniform(cfg.wall_min, cfg.wall_max);
    s.wall_thickness0 = wall;
    s.wall_thickness1 = rng.uniform(cfg.wall_min, cfg.wall_max);
    s.drift_amp_y = rng.uniform(cfg.drift_amp_min, cfg.drift_amp_max);
    s.drift_amp_x = rng.uniform(cfg.drift_amp_min, cfg.drift_amp_max);
    s.drift_period = rng.uniform(cfg.drift_period_min, cfg.drift_period_max);
    s.drift_phase_y = rng.uniform(0.0, kTwoPi);
    s.drift_phase_x = rng.uniform(0.0, kTwoPi);

    // keep the drifting tube clear of the borders
    const double margin = cfg.radius_max + cfg.wall_max + std::max(s.drift_amp_y, s.drift_amp_x) + 2.0;
    s.base_cy = rng.uniform(margin, cfg.dims.h - 1 - margin);
    s.base_cx = rng.uniform(margin, cfg.dims.w - 1 - margin);

    if (rng.uniform() < cfg.stenosis_prob) {
        Stenosis st;
        st.center_slice = static_cast<int>(rng.uniform(cfg.dims.d * 0.3, cfg.dims.d * 0.7));
        st.width_slices = rng.uniform(4.0, 8.0);
        st.depth_fraction = rng.uniform(cfg.stenosis_depth_min, cfg.stenosis_depth_max);
        s.stenosis = st;
    }
    if (rng.uniform() < cfg.bifurcation_prob) {
        Bifurcation b;
        b.split_slice = cfg.dims.d / 2;
        b.offset_y = 0.0;
        b.offset_x = rng.uniform(5.0, 7.0);
        b.ramp_slices = 10;
        s.bifurcation = b;
        // children must still clear the borders
        s.base_cx = std::clamp(s.base_cx, b.offset_x + cfg.radius_max + cfg.wall_max + 3.0,
                               cfg.dims.w - 1 - (b.offset_x + cfg.radius_max + cfg.wall_max + 3.0));
    }
    return s;
}

std::vector<ManifestEntry> Manifest::by_split(const std::string& split) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries)
        if (e.split == split) out.push_back(e);
    return out;
}

void Manifest::save(const std::filesystem::path& path) const {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& e : entries) {
        nlohmann::ordered_json item;
        item["case_id"] = e.case_id;
        item["image_path"] = e.image_path;
        item["gt_path"] = e.gt_path;
        item["sparse_path"] = e.sparse_path;
        item["split"] = e.split;
        j.push_back(item);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw VolumeError("cannot write manifest " + path.string());
    f << j.dump(2) << "\n";
}

Manifest Manifest::load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw VolumeError("cannot open manifest " + path.string());
    nlohmann::json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        throw VolumeError("malformed manifest " + path.string() + ": " + e.what());
    }
    Manifest m;
    m.root = path.parent_path();
    for (const auto& item : j) {
        ManifestEntry e;
        e.case_id = item.at("case_id").get<std::string>();
        e.image_path = item.at("image_path").get<std::string>();
        e.gt_path = item.at("gt_path").get<std::string>();
        e.sparse_path = item.at("sparse_path").get<std::string>();
        e.split = item.at("split").get<std::string>();
        m.entries.push_back(std::move(e));
    }
    return m;
}

Manifest generate_suite(const SuiteConfig& cfg, const std::filesystem::path& out_dir) {
    if (cfg.train_cases + cfg.val_cases + cfg.test_cases != cfg.num_cases)
        throw VolumeError("split counts must sum to num_cases");
    std::filesystem::create_directories(out_dir);

    Manifest manifest;
    manifest.root = out_dir;
    for (int i = 0; i < cfg.num_cases; ++i) {
        const VesselSpec spec = draw_spec(cfg, static_cast<uint64_t>(i));
        const PhantomCase c = generate_case(spec, cfg.dims, cfg.spacing, cfg.interval,
                                            cfg.noise_sigma, cfg.seed + static_cast<uint64_t>(i));
        char id[32];
        std::snprintf(id, sizeof(id), "case_%03d", i);
        ManifestEntry e;
        e.case_id = id;
        e.image_path = std::string(id) + "_image.vvolh";
        e.gt_path = std::string(id) + "_gt.vvolh";
        e.sparse_path = std::string(id) + "_sparse.vvolh";
        e.split = i < cfg.train_cases ? "train"
                  : i < cfg.train_cases + cfg.val_cases ? "val"
                                                        : "test";
        write_volume(c.image, out_dir / e.image_path);
        write_volume(c.gt, out_dir / e.gt_path);
        write_volume(c.sparse, out_dir / e.sparse_path);
        manifest.entries.push_back(std::move(e));
    }
    manifest.save(out_dir / "manifest.json");
    return manifest;
}

}  // namespace vesselseg
