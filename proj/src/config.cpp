#include "dite/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dite/tensor.hpp"

namespace dite {

using nlohmann::json;

ModelConfig ModelConfig::dite18() {
    ModelConfig c;
    c.variant = 18;
    c.stages = {{1, 1}, {2, 2}, {4, 3}, {2, 4}};
    c.widths = {40, 80, 160, 320};
    c.stem_width = 32;
    c.groups = {1, 1, 2, 4};
    c.kernels = {4, 4, 2, 1};
    c.input_h = 256;
    c.input_w = 192;
    c.num_keypoints = 17;
    return c;
}

ModelConfig ModelConfig::dite30() {
    ModelConfig c = dite18();
    c.variant = 30;
    c.stages = {{1, 1}, {3, 2}, {8, 3}, {3, 4}};
    return c;
}

std::string ModelConfig::id() const {
    if (variant == 18) return "dite18";
    if (variant == 30) return "dite30";
    return "custom";
}

void ModelConfig::validate() const {
    if (stages.empty()) throw TensorError("config: at least one stage required");
    if (stages[0].modules != 1 || stages[0].branches != 1) {
        throw TensorError("config: first stage is the stem and must have modules=1, branches=1");
    }
    for (std::size_t s = 0; s < stages.size(); ++s) {
        if (stages[s].modules < 1) {
            throw TensorError("config: stage " + std::to_string(s + 1) + " has modules < 1");
        }
        if (stages[s].branches != static_cast<int>(s) + 1) {
            throw TensorError("config: stage " + std::to_string(s + 1) + " must have " +
                              std::to_string(s + 1) + " branches, got " +
                              std::to_string(stages[s].branches));
        }
    }
    if (variant == 18) {
        const std::vector<StageSpec> want = {{1, 1}, {2, 2}, {4, 3}, {2, 4}};
        for (std::size_t s = 0; s < want.size(); ++s) {
            if (stages.size() != 4 || stages[s].modules != want[s].modules) {
                throw TensorError("config: variant 18 requires stage module counts (1,2,4,2)");
            }
        }
    }
    if (variant == 30) {
        const std::vector<StageSpec> want = {{1, 1}, {3, 2}, {8, 3}, {3, 4}};
        for (std::size_t s = 0; s < want.size(); ++s) {
            if (stages.size() != 4 || stages[s].modules != want[s].modules) {
                throw TensorError("config: variant 30 requires stage module counts (1,3,8,3)");
            }
        }
    }
    const std::size_t nb = static_cast<std::size_t>(num_branches());
    if (widths.size() < nb) {
        throw TensorError("config: " + std::to_string(widths.size()) + " widths for " +
                          std::to_string(nb) + " branches");
    }
    if (groups.size() < nb || kernels.size() < nb) {
        throw TensorError("config: G and N need one entry per branch (" + std::to_string(nb) + ")");
    }
    for (std::size_t b = 0; b < nb; ++b) {
        if (widths[b] < 2 || widths[b] % 2 != 0) {
            throw TensorError("config: branch width " + std::to_string(widths[b]) +
                              " must be even and >= 2");
        }
        if (groups[b] < 1 || kernels[b] < 1) {
            throw TensorError("config: G and N entries must be >= 1");
        }
        if ((widths[b] / 2) % groups[b] != 0) {
            throw TensorError("config: branch " + std::to_string(b) + " active width " +
                              std::to_string(widths[b] / 2) + " not divisible by G=" +
                              std::to_string(groups[b]));
        }
    }
    if (stem_width < 2 || stem_width % 2 != 0) {
        throw TensorError("config: stem width must be even and >= 2");
    }
    if (input_h % 32 != 0 || input_w % 32 != 0) {
        throw TensorError("config: input " + std::to_string(input_h) + "x" +
                          std::to_string(input_w) + " must be divisible by 32");
    }
    if (num_keypoints < 1) throw TensorError("config: keypoints must be >= 1");
    if (gcm_ratio < 1 || dcm_ratio < 1) throw TensorError("config: ratios must be >= 1");
}

std::string ModelConfig::to_json() const {
    json j;
    j["variant"] = variant == 0 ? json("custom") : json(variant);
    j["widths"] = widths;
    j["stem_width"] = stem_width;
    j["stages"] = json::array();
    for (const StageSpec& s : stages) {
        j["stages"].push_back({{"modules", s.modules}, {"branches", s.branches}});
    }
    j["G"] = groups;
    j["N"] = kernels;
    j["input"] = {input_h, input_w};
    j["keypoints"] = num_keypoints;
    j["use_acm"] = use_acm;
    j["use_dsc"] = use_dsc;
    j["gcm_ratio"] = gcm_ratio;
    j["dcm_ratio"] = dcm_ratio;
    return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw TensorError(std::string("config: invalid JSON: ") + e.what());
    }
    ModelConfig c;
    if (j.contains("variant")) {
        if (j["variant"].is_number_integer()) {
            const int v = j["variant"].get<int>();
            if (v == 18) c = dite18();
            else if (v == 30) c = dite30();
            else throw TensorError("config: unknown variant " + std::to_string(v));
        } else if (j["variant"].is_string()) {
            const std::string v = j["variant"].get<std::string>();
            if (v == "custom") c.variant = 0;
            else if (v == "18") c = dite18();
            else if (v == "30") c = dite30();
            else throw TensorError("config: unknown variant '" + v + "'");
        } else {
            throw TensorError("config: variant must be 18, 30 or \"custom\"");
        }
    }
    try {
        if (j.contains("widths")) c.widths = j["widths"].get<std::vector<int>>();
        if (j.contains("stem_width")) c.stem_width = j["stem_width"].get<int>();
        if (j.contains("stages")) {
            c.stages.clear();
            for (const auto& s : j["stages"]) {
                c.stages.push_back(StageSpec{s.at("modules").get<int>(), s.at("branches").get<int>()});
            }
        }
        if (j.contains("G")) c.groups = j["G"].get<std::vector<int>>();
        if (j.contains("N")) c.kernels = j["N"].get<std::vector<int>>();
        if (j.contains("input")) {
            c.input_h = j["input"].at(0).get<int>();
            c.input_w = j["input"].at(1).get<int>();
        }
        if (j.contains("keypoints")) c.num_keypoints = j["keypoints"].get<int>();
        if (j.contains("use_acm")) c.use_acm = j["use_acm"].get<bool>();
        if (j.contains("use_dsc")) c.use_dsc = j["use_dsc"].get<bool>();
        if (j.contains("gcm_ratio")) c.gcm_ratio = j["gcm_ratio"].get<int>();
        if (j.contains("dcm_ratio")) c.dcm_ratio = j["dcm_ratio"].get<int>();
    } catch (const json::exception& e) {
        throw TensorError(std::string("config: bad field: ") + e.what());
    }
    c.validate();
    return c;
}

ModelConfig ModelConfig::from_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw TensorError("config: cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return from_json(ss.str());
}

}  // namespace dite
