#include "vesselseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "vesselseg/volume.hpp"

namespace vesselseg {

namespace {

constexpr char kMagic[8] = {'V', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

void put_u64(std::ofstream& f, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    f.write(reinterpret_cast<char*>(b), 8);
}

uint64_t get_u64(std::ifstream& f) {
    unsigned char b[8];
    f.read(reinterpret_cast<char*>(b), 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(b[i]) << (8 * i);
    return v;
}

}  // namespace

void save_checkpoint(nn::DbfUNet& model, const std::filesystem::path& path) {
    nlohmann::ordered_json manifest;
    manifest["format_version"] = kVersion;
    manifest["net_config"] = nlohmann::ordered_json::parse(model.config().to_json());
    nlohmann::ordered_json params = nlohmann::ordered_json::array();

    std::vector<nn::ParamT<float>*> ordered;
    nn::ParamVisitorT<float> v{"", [&](const std::string& name, nn::ParamT<float>& p) {
                                   nlohmann::ordered_json item;
                                   item["name"] = name;
                                   item["shape"] = p.shape;
                                   params.push_back(item);
                                   ordered.push_back(&p);
                               }};
    model.visit_params(v);
    manifest["params"] = params;
    const std::string header = manifest.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw VolumeError("cannot write checkpoint " + path.string());
    f.write(kMagic, 8);
    put_u64(f, kVersion);
    put_u64(f, header.size());
    f.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto* p : ordered) {
        std::vector<unsigned char> bytes(p->value.size() * 4);
        for (size_t i = 0; i < p->value.size(); ++i) {
            const uint32_t bits = std::bit_cast<uint32_t>(p->value[i]);
            bytes[4 * i] = bits & 0xff;
            bytes[4 * i + 1] = (bits >> 8) & 0xff;
            bytes[4 * i + 2] = (bits >> 16) & 0xff;
            bytes[4 * i + 3] = (bits >> 24) & 0xff;
        }
        f.write(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    }
    if (!f) throw VolumeError("failed writing checkpoint " + path.string());
}

nn::DbfUNet load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw VolumeError("cannot open checkpoint " + path.string());
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0)
        throw VolumeError(path.string() + " is not a checkpoint file");
    const uint64_t version = get_u64(f);
    if (version != kVersion)
        throw VolumeError("unsupported checkpoint version " + std::to_string(version));
    const uint64_t header_len = get_u64(f);
    std::string header(header_len, '\0');
    f.read(header.data(), static_cast<std::streamsize>(header_len));
    if (!f) throw VolumeError("truncated checkpoint header in " + path.string());

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(header);
    } catch (const std::exception& e) {
        throw VolumeError("malformed checkpoint manifest: " + std::string(e.what()));
    }

    nn::DbfUNet model(NetConfig::from_json(manifest.at("net_config").dump()));
    std::vector<nn::ParamT<float>*> ordered;
    std::vector<std::string> names;
    nn::ParamVisitorT<float> v{"", [&](const std::string& name, nn::ParamT<float>& p) {
                                   ordered.push_back(&p);
                                   names.push_back(name);
                               }};
    model.visit_params(v);

    const auto& listed = manifest.at("params");
    if (listed.size() != ordered.size())
        throw VolumeError("checkpoint parameter count mismatch");
    for (size_t i = 0; i < ordered.size(); ++i) {
        const std::string name = listed[i].at("name").get<std::string>();
        const auto shape = listed[i].at("shape").get<std::vector<int>>();
        if (name != names[i] || shape != ordered[i]->shape)
            throw VolumeError("checkpoint parameter \"" + name + "\" does not match model (\"" +
                              names[i] + "\")");
        std::vector<unsigned char> bytes(ordered[i]->value.size() * 4);
        f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw VolumeError("truncated checkpoint payload in " + path.string());
        for (size_t k = 0; k < ordered[i]->value.size(); ++k) {
            const uint32_t bits = uint32_t(bytes[4 * k]) | (uint32_t(bytes[4 * k + 1]) << 8) |
                                  (uint32_t(bytes[4 * k + 2]) << 16) |
                                  (uint32_t(bytes[4 * k + 3]) << 24);
            ordered[i]->value[k] = std::bit_cast<float>(bits);
        }
    }
    return model;
}

}  // namespace vesselseg
