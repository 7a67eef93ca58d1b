#include "vesselseg/dbfunet.hpp"

#include <map>

#include <nlohmann/json.hpp>

#include "vesselseg/volume.hpp"

namespace vesselseg {

void NetConfig::validate() const {
    if (levels() < 2) throw VolumeError("net config needs at least 2 levels");
    if (in_channels < 1 || num_classes < 2) throw VolumeError("bad channel/class counts");
    if (mlk_per_level < 1) throw VolumeError("mlk_per_level must be >= 1");
    if (mlp_ratio < 1) throw VolumeError("mlp_ratio must be >= 1");
    for (size_t i = 0; i < channels.size(); ++i) {
        if (channels[i] < 1) throw VolumeError("channel counts must be positive");
        if (i > 0 && channels[i] <= channels[i - 1])
            throw VolumeError("channels must be strictly increasing");
    }
}

NetConfig NetConfig::desk() { return NetConfig{}; }

NetConfig NetConfig::paper_scale() {
    NetConfig cfg;
    cfg.channels = {16, 32, 64, 128};
    return cfg;
}

std::string NetConfig::to_json() const {
    nlohmann::ordered_json j;
    j["in_channels"] = in_channels;
    j["num_classes"] = num_classes;
    j["channels"] = channels;
    j["mlk_per_level"] = mlk_per_level;
    j["use_bff"] = use_bff;
    j["use_msda"] = use_msda;
    j["layer_scale_init"] = layer_scale_init;
    j["mlp_ratio"] = mlp_ratio;
    return j.dump();
}

NetConfig NetConfig::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const std::exception& e) {
        throw VolumeError(std::string("net config is not valid JSON: ") + e.what());
    }
    static const std::vector<std::string> known = {
        "in_channels", "num_classes", "channels", "mlk_per_level",
        "use_bff",     "use_msda",    "layer_scale_init", "mlp_ratio"};
    for (const auto& [key, _] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw VolumeError("unknown net config key \"" + key + "\"");

    NetConfig cfg;
    if (j.contains("in_channels")) cfg.in_channels = j["in_channels"].get<int>();
    if (j.contains("num_classes")) cfg.num_classes = j["num_classes"].get<int>();
    if (j.contains("channels")) cfg.channels = j["channels"].get<std::vector<int>>();
    if (j.contains("mlk_per_level")) cfg.mlk_per_level = j["mlk_per_level"].get<int>();
    if (j.contains("use_bff")) cfg.use_bff = j["use_bff"].get<bool>();
    if (j.contains("use_msda")) cfg.use_msda = j["use_msda"].get<bool>();
    if (j.contains("layer_scale_init")) cfg.layer_scale_init = j["layer_scale_init"].get<double>();
    if (j.contains("mlp_ratio")) cfg.mlp_ratio = j["mlp_ratio"].get<int>();
    cfg.validate();
    return cfg;
}

std::string ParamReport::to_json() const {
    nlohmann::ordered_json j;
    j["total_params"] = total;
    j["forward_macs"] = forward_macs;
    j["within_lightweight_budget"] = within_lightweight_budget;
    nlohmann::ordered_json items = nlohmann::ordered_json::array();
    for (const auto& item : breakdown) {
        nlohmann::ordered_json o;
        o["module"] = item.module;
        o["params"] = item.params;
        items.push_back(o);
    }
    j["breakdown"] = items;
    return j.dump(2) + "\n";
}

ParamReport param_report(nn::DbfUNet& model, std::array<int, 3> patch_dims) {
    ParamReport report;
    std::map<std::string, int64_t> groups;
    std::vector<std::string> order;
    nn::ParamVisitorT<float> v{
        "", [&](const std::string& name, nn::ParamT<float>& p) {
            const std::string module = name.substr(0, name.find('.'));
            if (!groups.count(module)) order.push_back(module);
            groups[module] += static_cast<int64_t>(p.size());
        }};
    model.visit_params(v);
    for (const auto& module : order) {
        report.breakdown.push_back({module, groups[module]});
        report.total += groups[module];
    }
    report.forward_macs = estimate_forward_macs(model.config(), patch_dims);
    report.within_lightweight_budget = report.total <= 5'000'000;
    return report;
}

namespace {

// multiply-adds of the conv/linear layers only; normalization and
// activations are negligible at these sizes
int64_t mlk_macs(int64_t n, int64_t c, bool use_msda, int mlp_ratio) {
    int64_t macs = 0;
    if (use_msda) {
        macs += n * c * (27 + 125 + 343);  // depthwise k=3,5,7
        macs += 3 * n * c * c;             // their pointwise mixes
        macs += 27 * c * c;                // stats attention (9C -> 3C), per batch item
        macs += 2 * n * (3 * c) * (3 * c); // gated + skip mixes
        macs += n * (3 * c) * c;           // reduction
    } else {
        macs += n * c * 27 + n * c * c;
    }
    macs += 2 * int64_t(mlp_ratio) * n * c * c;  // MLP
    macs += n * c * c;                           // closing pointwise
    return macs;
}

}  // namespace

int64_t estimate_forward_macs(const NetConfig& cfg, std::array<int, 3> patch_dims) {
    const int L = cfg.levels();
    std::vector<int64_t> n(static_cast<size_t>(L), 0);
    {
        int64_t d = patch_dims[0], h = patch_dims[1], w = patch_dims[2];
        for (int i = 0; i < L; ++i) {
            n[size_t(i)] = d * h * w;
            d = (d + 1) / 2;
            h = (h + 1) / 2;
            w = (w + 1) / 2;
        }
    }
    const auto& ch = cfg.channels;
    int64_t macs = 0;
    macs += n[0] * cfg.in_channels * ch[0] * 27;  // head
    for (int i = 0; i < L; ++i)
        macs += cfg.mlk_per_level * mlk_macs(n[size_t(i)], ch[size_t(i)], cfg.use_msda, cfg.mlp_ratio);
    for (int i = 0; i + 1 < L; ++i) {
        const int64_t no = n[size_t(i) + 1];
        const int64_t ci = ch[size_t(i)], co = ch[size_t(i) + 1];
        macs += no * ci * 27 + no * ci * 4 * ci + no * 5 * ci * co + no * ci * co;
    }
    for (int i = 1; i < L; ++i) {
        const int64_t ci = ch[size_t(i)], cs = ch[size_t(i) - 1];
        if (cfg.use_bff) macs += n[size_t(i)] * ci * cs;       // bff pointwise at deep res
        macs += n[size_t(i) - 1] * ci * cs;                    // decoder channel match
        macs += mlk_macs(n[size_t(i) - 1], cs, cfg.use_msda, cfg.mlp_ratio);  // decoder mlk
    }
    if (cfg.use_bff) macs += cfg.mlk_per_level > 0 ? mlk_macs(n[0], ch[0], cfg.use_msda, cfg.mlp_ratio) : 0;
    macs += n[0] * ch[0] * cfg.num_classes;  // final head
    return macs;
}

}  // namespace vesselseg
