#include "vesselseg/nifti.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace vesselseg {

namespace {

// NIfTI-1 datatype codes.
constexpr int16_t kDtUint8 = 2;
constexpr int16_t kDtInt16 = 4;
constexpr int16_t kDtInt32 = 8;
constexpr int16_t kDtFloat32 = 16;
constexpr int16_t kDtFloat64 = 64;
constexpr int16_t kDtUint16 = 512;

struct NiftiRaw {
    Dims dims;
    Spacing spacing;
    std::vector<float> values;
};

uint16_t le16(const unsigned char* p) { return static_cast<uint16_t>(p[0] | (p[1] << 8)); }
uint32_t le32(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
uint64_t le64(const unsigned char* p) {
    return static_cast<uint64_t>(le32(p)) | (static_cast<uint64_t>(le32(p + 4)) << 32);
}
float lef32(const unsigned char* p) { return std::bit_cast<float>(le32(p)); }
double lef64(const unsigned char* p) { return std::bit_cast<double>(le64(p)); }

NiftiRaw load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw VolumeError("cannot open " + path.string());
    f.seekg(0, std::ios::end);
    const auto total = static_cast<size_t>(f.tellg());
    f.seekg(0, std::ios::beg);
    if (total < 352) throw VolumeError(path.string() + ": too small for a NIfTI-1 file");
    std::vector<unsigned char> bytes(total);
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(total));
    if (!f) throw VolumeError("failed reading " + path.string());

    const unsigned char* h = bytes.data();
    const uint32_t sizeof_hdr = le32(h);
    if (sizeof_hdr == 0x5C010000u)
        throw VolumeError(path.string() + ": big-endian NIfTI is not supported");
    if (sizeof_hdr != 348) throw VolumeError(path.string() + ": bad sizeof_hdr, not NIfTI-1");
    if (std::memcmp(h + 344, "n+1\0", 4) != 0)
        throw VolumeError(path.string() + ": magic is not \"n+1\" (detached .img unsupported)");

    const unsigned char* dim = h + 40;  // int16 dim[8]
    const int ndim = static_cast<int16_t>(le16(dim));
    if (ndim < 3) throw VolumeError(path.string() + ": fewer than 3 dimensions");
    const int nx = static_cast<int16_t>(le16(dim + 2));
    const int ny = static_cast<int16_t>(le16(dim + 4));
    const int nz = static_cast<int16_t>(le16(dim + 6));
    for (int i = 4; i <= ndim && i <= 7; ++i)
        if (static_cast<int16_t>(le16(dim + 2 * i)) > 1)
            throw VolumeError(path.string() + ": multi-frame NIfTI unsupported");
    if (nx <= 0 || ny <= 0 || nz <= 0) throw VolumeError(path.string() + ": non-positive dims");

    const int16_t datatype = static_cast<int16_t>(le16(h + 70));
    const unsigned char* pixdim = h + 76;  // float pixdim[8]
    const double sx = lef32(pixdim + 4);
    const double sy = lef32(pixdim + 8);
    const double sz = lef32(pixdim + 12);
    const float vox_offset = lef32(h + 108);
    float scl_slope = lef32(h + 112);
    float scl_inter = lef32(h + 116);
    if (scl_slope == 0.0f) { scl_slope = 1.0f; scl_inter = 0.0f; }

    const size_t n = static_cast<size_t>(nx) * ny * nz;
    size_t elem = 0;
    switch (datatype) {
        case kDtUint8: elem = 1; break;
        case kDtInt16: case kDtUint16: elem = 2; break;
        case kDtInt32: case kDtFloat32: elem = 4; break;
        case kDtFloat64: elem = 8; break;
        default:
            throw VolumeError(path.string() + ": unsupported NIfTI datatype " + std::to_string(datatype));
    }
    const size_t start = static_cast<size_t>(vox_offset);
    if (start < 352 || start + n * elem > total)
        throw VolumeError(path.string() + ": payload does not fit declared dims");

    const unsigned char* p = h + start;
    std::vector<float> values(n);
    for (size_t i = 0; i < n; ++i) {
        double v = 0.0;
        switch (datatype) {
            case kDtUint8: v = p[i]; break;
            case kDtInt16: v = static_cast<int16_t>(le16(p + 2 * i)); break;
            case kDtUint16: v = le16(p + 2 * i); break;
            case kDtInt32: v = static_cast<int32_t>(le32(p + 4 * i)); break;
            case kDtFloat32: v = lef32(p + 4 * i); break;
            case kDtFloat64: v = lef64(p + 8 * i); break;
        }
        values[i] = static_cast<float>(v * scl_slope + scl_inter);
    }

    NiftiRaw raw;
    raw.dims = {nz, ny, nx};
    raw.spacing = {sz > 0 ? sz : 1.0, sy > 0 ? sy : 1.0, sx > 0 ? sx : 1.0};
    raw.values = std::move(values);  // NIfTI is x-fastest like the zyx layout, no reorder needed
    return raw;
}

}  // namespace

Volume3D import_nifti_image(const std::filesystem::path& path) {
    auto raw = load(path);
    return Volume3D(raw.dims, raw.spacing, Dtype::F32, std::move(raw.values));
}

LabelVolume import_nifti_label(const std::filesystem::path& path, std::vector<int> annotated_slices) {
    auto raw = load(path);
    std::vector<uint8_t> labels(raw.values.size());
    for (size_t i = 0; i < labels.size(); ++i) {
        const float r = std::round(raw.values[i]);
        if (std::abs(raw.values[i] - r) > 1e-3f || r < 0.0f || r > 2.0f)
            throw VolumeError(path.string() + ": voxel value " + std::to_string(raw.values[i]) +
                              " is not a class id in {0,1,2}");
        labels[i] = static_cast<uint8_t>(r);
    }
    return LabelVolume(raw.dims, raw.spacing, std::move(labels), std::move(annotated_slices));
}

}  // namespace vesselseg
