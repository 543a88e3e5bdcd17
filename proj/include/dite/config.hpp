#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dite {

struct StageSpec {
    int modules = 1;
    int branches = 1;
};

// Declarative network description. The stem counts as the first stage
// (one module, one branch); each later stage runs `modules` cross-resolution
// modules of two DMC blocks plus one fusion layer. G and N are the per-branch
// split-group and kernel-bank sizes, highest to lowest resolution.
struct ModelConfig {
    int variant = 0;  // 18, 30, or 0 for custom
    std::vector<StageSpec> stages;
    std::vector<int> widths;
    int stem_width = 32;
    std::vector<int> groups;   // G
    std::vector<int> kernels;  // N
    int input_h = 256, input_w = 192;
    int num_keypoints = 17;
    bool use_acm = true;
    bool use_dsc = true;
    int gcm_ratio = 4;
    int dcm_ratio = 8;

    static ModelConfig dite18();
    static ModelConfig dite30();
    static ModelConfig from_json(const std::string& text);
    static ModelConfig from_json_file(const std::string& path);
    std::string to_json() const;

    int num_branches() const { return stages.empty() ? 0 : stages.back().branches; }

    std::string id() const;

    // Throws TensorError naming the violated constraint.
    void validate() const;
};

}  // namespace dite
