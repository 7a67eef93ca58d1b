#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "vesselseg/grid2d.hpp"

namespace vesselseg {

struct VolumeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Dtype : uint8_t { U8, F32 };
enum class VolumeKind : uint8_t { Image, Label };

std::string dtype_name(Dtype d);

/// Grid dimensions, axial slice count first: (D, H, W) = (z, y, x).
struct Dims {
    int d = 0;
    int h = 0;
    int w = 0;

    size_t voxels() const { return static_cast<size_t>(d) * h * w; }
    bool operator==(const Dims&) const = default;
};

/// Voxel spacing in mm, (z, y, x) order.
struct Spacing {
    double z = 1.0;
    double y = 1.0;
    double x = 1.0;

    bool operator==(const Spacing&) const = default;
};

/// Voxel (z,y,x) lives at offset ((z*H)+y)*W+x.
inline size_t voxel_offset(const Dims& dims, int z, int y, int x) {
    return (static_cast<size_t>(z) * dims.h + y) * dims.w + x;
}

/// Scalar 3D image. Payload is stored as float regardless of dtype; a U8
/// volume keeps exact byte values (0..255) so file round-trips stay bit-exact.
class Volume3D {
public:
    Volume3D() = default;
    Volume3D(Dims dims, Spacing spacing, Dtype dtype, std::vector<float> data);

    const Dims& dims() const { return dims_; }
    const Spacing& spacing() const { return spacing_; }
    Dtype dtype() const { return dtype_; }
    const std::vector<float>& data() const { return data_; }
    std::vector<float>& data() { return data_; }

    float at(int z, int y, int x) const { return data_[voxel_offset(dims_, z, y, x)]; }
    float& at(int z, int y, int x) { return data_[voxel_offset(dims_, z, y, x)]; }

    std::optional<std::pair<float, float>> intensity_range;

    /// Throws VolumeError if any type invariant is violated.
    void validate() const;

private:
    Dims dims_;
    Spacing spacing_;
    Dtype dtype_ = Dtype::F32;
    std::vector<float> data_;
};

/// Voxel-wise class map {0 background, 1 lumen, 2 wall} with the list of
/// expert-annotated axial slices.
class LabelVolume {
public:
    LabelVolume() = default;
    LabelVolume(Dims dims, Spacing spacing, std::vector<uint8_t> data,
                std::vector<int> annotated_slices);

    /// All-background volume with no annotated slices.
    static LabelVolume zeros(Dims dims, Spacing spacing);

    const Dims& dims() const { return dims_; }
    const Spacing& spacing() const { return spacing_; }
    const std::vector<uint8_t>& data() const { return data_; }
    std::vector<uint8_t>& data() { return data_; }
    const std::vector<int>& annotated_slices() const { return annotated_slices_; }

    uint8_t at(int z, int y, int x) const { return data_[voxel_offset(dims_, z, y, x)]; }
    uint8_t& at(int z, int y, int x) { return data_[voxel_offset(dims_, z, y, x)]; }

    bool is_annotated(int z) const;
    void set_annotated_slices(std::vector<int> slices);

    void validate() const;

private:
    Dims dims_;
    Spacing spacing_;
    std::vector<uint8_t> data_;
    std::vector<int> annotated_slices_;
};

constexpr uint8_t kBackground = 0;
constexpr uint8_t kLumen = 1;
constexpr uint8_t kWall = 2;

/// Serialized sidecar metadata for a .vvolh/.vvol pair.
struct VolumeHeader {
    Dims dims;
    Spacing spacing;
    Dtype dtype = Dtype::F32;
    std::string byte_order = "little";
    std::string layout = "zyx";
    VolumeKind kind = VolumeKind::Image;
    std::vector<int> annotated_slices;  // labels only

    std::string to_json() const;
    static VolumeHeader from_json(const std::string& text);

    bool operator==(const VolumeHeader&) const = default;
};

/// Raw payload path for a header path ("case.vvolh" -> "case.vvol").
std::filesystem::path payload_path(const std::filesystem::path& header_path);

void write_volume(const Volume3D& v, const std::filesystem::path& header_path);
void write_volume(const LabelVolume& v, const std::filesystem::path& header_path);

using AnyVolume = std::variant<Volume3D, LabelVolume>;

AnyVolume read_volume(const std::filesystem::path& header_path);
Volume3D read_image(const std::filesystem::path& header_path);
LabelVolume read_label(const std::filesystem::path& header_path);

Image2D extract_slice(const Volume3D& v, int z);
Labels2D extract_slice(const LabelVolume& v, int z);
void insert_slice(Volume3D& v, int z, const Image2D& plane);
void insert_slice(LabelVolume& v, int z, const Labels2D& plane);

/// True when every lumen voxel's 6-neighborhood lies within lumen, wall, or
/// the volume boundary. On failure, *where (if given) receives the offending
/// (z,y,x).
bool lumen_enclosed(const LabelVolume& v, std::array<int, 3>* where = nullptr);

}  // namespace vesselseg
