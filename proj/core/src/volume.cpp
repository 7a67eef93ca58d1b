#include "vesselseg/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace vesselseg {

namespace {

using ordered_json = nlohmann::ordered_json;

void check_dims(const Dims& dims) {
    if (dims.d <= 0 || dims.h <= 0 || dims.w <= 0)
        throw VolumeError("dims must be positive, got [" + std::to_string(dims.d) + "," +
                          std::to_string(dims.h) + "," + std::to_string(dims.w) + "]");
}

void check_spacing(const Spacing& s) {
    if (!(s.z > 0.0) || !(s.y > 0.0) || !(s.x > 0.0)) throw VolumeError("spacing components must be > 0");
}

void check_annotated(const std::vector<int>& slices, int d) {
    for (size_t i = 0; i < slices.size(); ++i) {
        if (slices[i] < 0 || slices[i] >= d)
            throw VolumeError("annotated slice " + std::to_string(slices[i]) + " out of range [0," +
                              std::to_string(d) + ")");
        if (i > 0 && slices[i] <= slices[i - 1])
            throw VolumeError("annotated_slices must be strictly increasing");
    }
}

size_t dtype_size(Dtype d) { return d == Dtype::U8 ? 1 : 4; }

void append_le32(std::vector<unsigned char>& out, uint32_t bits) {
    out.push_back(static_cast<unsigned char>(bits & 0xff));
    out.push_back(static_cast<unsigned char>((bits >> 8) & 0xff));
    out.push_back(static_cast<unsigned char>((bits >> 16) & 0xff));
    out.push_back(static_cast<unsigned char>((bits >> 24) & 0xff));
}

uint32_t read_le32(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw VolumeError("cannot open " + path.string());
    f.seekg(0, std::ios::end);
    const auto n = static_cast<size_t>(f.tellg());
    f.seekg(0, std::ios::beg);
    std::vector<unsigned char> bytes(n);
    if (n > 0) f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n));
    if (!f) throw VolumeError("failed reading " + path.string());
    return bytes;
}

void write_file_bytes(const std::filesystem::path& path, const void* data, size_t n) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw VolumeError("cannot open " + path.string() + " for writing");
    f.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!f) throw VolumeError("failed writing " + path.string());
}

VolumeHeader parse_header_file(const std::filesystem::path& header_path) {
    const auto bytes = read_file_bytes(header_path);
    try {
        return VolumeHeader::from_json(std::string(bytes.begin(), bytes.end()));
    } catch (const std::exception& e) {
        throw VolumeError("malformed header " + header_path.string() + ": " + e.what());
    }
}

}  // namespace

std::string dtype_name(Dtype d) { return d == Dtype::U8 ? "u8" : "f32"; }

Volume3D::Volume3D(Dims dims, Spacing spacing, Dtype dtype, std::vector<float> data)
    : dims_(dims), spacing_(spacing), dtype_(dtype), data_(std::move(data)) {
    validate();
}

void Volume3D::validate() const {
    check_dims(dims_);
    check_spacing(spacing_);
    if (data_.size() != dims_.voxels())
        throw VolumeError("data length " + std::to_string(data_.size()) + " != D*H*W = " +
                          std::to_string(dims_.voxels()));
    if (dtype_ == Dtype::U8) {
        for (float v : data_) {
            if (!(v >= 0.0f && v <= 255.0f) || v != std::floor(v))
                throw VolumeError("u8 volume holds non-byte value " + std::to_string(v));
        }
    }
}

LabelVolume::LabelVolume(Dims dims, Spacing spacing, std::vector<uint8_t> data,
                         std::vector<int> annotated_slices)
    : dims_(dims), spacing_(spacing), data_(std::move(data)),
      annotated_slices_(std::move(annotated_slices)) {
    validate();
}

LabelVolume LabelVolume::zeros(Dims dims, Spacing spacing) {
    return LabelVolume(dims, spacing, std::vector<uint8_t>(dims.voxels(), 0), {});
}

bool LabelVolume::is_annotated(int z) const {
    return std::binary_search(annotated_slices_.begin(), annotated_slices_.end(), z);
}

void LabelVolume::set_annotated_slices(std::vector<int> slices) {
    check_annotated(slices, dims_.d);
    annotated_slices_ = std::move(slices);
}

void LabelVolume::validate() const {
    check_dims(dims_);
    check_spacing(spacing_);
    if (data_.size() != dims_.voxels())
        throw VolumeError("label data length " + std::to_string(data_.size()) + " != D*H*W = " +
                          std::to_string(dims_.voxels()));
    for (uint8_t v : data_)
        if (v > 2) throw VolumeError("label value " + std::to_string(int(v)) + " outside {0,1,2}");
    check_annotated(annotated_slices_, dims_.d);
}

std::string VolumeHeader::to_json() const {
    ordered_json j;
    j["dims"] = {dims.d, dims.h, dims.w};
    j["spacing"] = {spacing.z, spacing.y, spacing.x};
    j["dtype"] = dtype_name(dtype);
    j["byte_order"] = byte_order;
    j["layout"] = layout;
    j["kind"] = kind == VolumeKind::Image ? "image" : "label";
    if (kind == VolumeKind::Label) j["annotated_slices"] = annotated_slices;
    return j.dump(2) + "\n";
}

VolumeHeader VolumeHeader::from_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const std::exception& e) {
        throw VolumeError(std::string("header is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw VolumeError("header root must be an object");

    static const std::vector<std::string> known = {"dims",   "spacing", "dtype",
                                                   "byte_order", "layout",  "kind",
                                                   "annotated_slices"};
    for (const auto& [key, _] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw VolumeError("unknown header key \"" + key + "\"");

    VolumeHeader h;
    const auto dims = j.at("dims");
    if (!dims.is_array() || dims.size() != 3) throw VolumeError("dims must be a 3-array");
    h.dims = {dims[0].get<int>(), dims[1].get<int>(), dims[2].get<int>()};
    const auto sp = j.at("spacing");
    if (!sp.is_array() || sp.size() != 3) throw VolumeError("spacing must be a 3-array");
    h.spacing = {sp[0].get<double>(), sp[1].get<double>(), sp[2].get<double>()};

    const std::string dt = j.at("dtype").get<std::string>();
    if (dt == "u8") h.dtype = Dtype::U8;
    else if (dt == "f32") h.dtype = Dtype::F32;
    else throw VolumeError("unknown dtype \"" + dt + "\" (expected u8 or f32)");

    h.byte_order = j.at("byte_order").get<std::string>();
    if (h.byte_order != "little") throw VolumeError("unsupported byte_order \"" + h.byte_order + "\"");
    h.layout = j.at("layout").get<std::string>();
    if (h.layout != "zyx") throw VolumeError("unsupported layout \"" + h.layout + "\"");

    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "image") h.kind = VolumeKind::Image;
    else if (kind == "label") h.kind = VolumeKind::Label;
    else throw VolumeError("unknown kind \"" + kind + "\"");

    if (j.contains("annotated_slices")) {
        if (h.kind != VolumeKind::Label) throw VolumeError("annotated_slices only valid for labels");
        h.annotated_slices = j.at("annotated_slices").get<std::vector<int>>();
    }

    check_dims(h.dims);
    check_spacing(h.spacing);
    check_annotated(h.annotated_slices, h.dims.d);
    return h;
}

std::filesystem::path payload_path(const std::filesystem::path& header_path) {
    auto p = header_path;
    p.replace_extension(".vvol");
    return p;
}

void write_volume(const Volume3D& v, const std::filesystem::path& header_path) {
    v.validate();
    VolumeHeader h;
    h.dims = v.dims();
    h.spacing = v.spacing();
    h.dtype = v.dtype();
    h.kind = VolumeKind::Image;

    const std::string header = h.to_json();
    write_file_bytes(header_path, header.data(), header.size());

    std::vector<unsigned char> payload;
    if (v.dtype() == Dtype::U8) {
        payload.reserve(v.data().size());
        for (float f : v.data()) payload.push_back(static_cast<unsigned char>(f));
    } else {
        payload.reserve(v.data().size() * 4);
        for (float f : v.data()) append_le32(payload, std::bit_cast<uint32_t>(f));
    }
    write_file_bytes(payload_path(header_path), payload.data(), payload.size());
}

void write_volume(const LabelVolume& v, const std::filesystem::path& header_path) {
    v.validate();
    VolumeHeader h;
    h.dims = v.dims();
    h.spacing = v.spacing();
    h.dtype = Dtype::U8;
    h.kind = VolumeKind::Label;
    h.annotated_slices = v.annotated_slices();

    const std::string header = h.to_json();
    write_file_bytes(header_path, header.data(), header.size());
    write_file_bytes(payload_path(header_path), v.data().data(), v.data().size());
}

AnyVolume read_volume(const std::filesystem::path& header_path) {
    const VolumeHeader h = parse_header_file(header_path);
    const auto payload = read_file_bytes(payload_path(header_path));
    const size_t expected = h.dims.voxels() * dtype_size(h.dtype);
    if (payload.size() != expected)
        throw VolumeError("payload size mismatch for " + header_path.string() + ": expected " +
                          std::to_string(expected) + " bytes, got " + std::to_string(payload.size()));

    if (h.kind == VolumeKind::Label) {
        if (h.dtype != Dtype::U8) throw VolumeError("label volumes must be u8");
        std::vector<uint8_t> data(payload.begin(), payload.end());
        return LabelVolume(h.dims, h.spacing, std::move(data), h.annotated_slices);
    }

    std::vector<float> data(h.dims.voxels());
    if (h.dtype == Dtype::U8) {
        for (size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(payload[i]);
    } else {
        for (size_t i = 0; i < data.size(); ++i)
            data[i] = std::bit_cast<float>(read_le32(payload.data() + i * 4));
    }
    return Volume3D(h.dims, h.spacing, h.dtype, std::move(data));
}

Volume3D read_image(const std::filesystem::path& header_path) {
    auto any = read_volume(header_path);
    if (!std::holds_alternative<Volume3D>(any))
        throw VolumeError(header_path.string() + " holds a label volume, expected image");
    return std::get<Volume3D>(std::move(any));
}

LabelVolume read_label(const std::filesystem::path& header_path) {
    auto any = read_volume(header_path);
    if (!std::holds_alternative<LabelVolume>(any))
        throw VolumeError(header_path.string() + " holds an image volume, expected label");
    return std::get<LabelVolume>(std::move(any));
}

namespace {

template <class Vol, class T>
Grid2D<T> extract_plane(const Vol& v, int z) {
    if (z < 0 || z >= v.dims().d)
        throw VolumeError("slice index " + std::to_string(z) + " out of range [0," +
                          std::to_string(v.dims().d) + ")");
    Grid2D<T> plane(v.dims().h, v.dims().w);
    const size_t base = voxel_offset(v.dims(), z, 0, 0);
    std::copy_n(v.data().begin() + static_cast<long>(base), plane.size(), plane.v.begin());
    return plane;
}

template <class Vol, class T>
void insert_plane(Vol& v, int z, const Grid2D<T>& plane) {
    if (z < 0 || z >= v.dims().d)
        throw VolumeError("slice index " + std::to_string(z) + " out of range [0," +
                          std::to_string(v.dims().d) + ")");
    if (plane.h != v.dims().h || plane.w != v.dims().w)
        throw VolumeError("slice shape mismatch on insert");
    const size_t base = voxel_offset(v.dims(), z, 0, 0);
    std::copy(plane.v.begin(), plane.v.end(), v.data().begin() + static_cast<long>(base));
}

}  // namespace

Image2D extract_slice(const Volume3D& v, int z) { return extract_plane<Volume3D, float>(v, z); }
Labels2D extract_slice(const LabelVolume& v, int z) { return extract_plane<LabelVolume, uint8_t>(v, z); }
void insert_slice(Volume3D& v, int z, const Image2D& plane) { insert_plane(v, z, plane); }
void insert_slice(LabelVolume& v, int z, const Labels2D& plane) { insert_plane(v, z, plane); }

bool lumen_enclosed(const LabelVolume& v, std::array<int, 3>* where) {
    const Dims& d = v.dims();
    static constexpr int off[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0},
                                      {0, 1, 0},  {0, 0, -1}, {0, 0, 1}};
    for (int z = 0; z < d.d; ++z)
        for (int y = 0; y < d.h; ++y)
            for (int x = 0; x < d.w; ++x) {
                if (v.at(z, y, x) != kLumen) continue;
                for (const auto& o : off) {
                    const int zz = z + o[0], yy = y + o[1], xx = x + o[2];
                    if (zz < 0 || zz >= d.d || yy < 0 || yy >= d.h || xx < 0 || xx >= d.w)
                        continue;  // volume boundary counts as enclosed
                    if (v.at(zz, yy, xx) == kBackground) {
                        if (where) *where = {z, y, x};
                        return false;
                    }
                }
            }
    return true;
}

}  // namespace vesselseg
