#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dsnet/model.hpp"
#include "dsnet/training.hpp"

namespace dsnet::cli {

struct Paths {
    std::string manifest;
    std::string checkpoint;
    std::string output_dir = "runs/default";
};

struct DataSettings {
    std::array<double, 3> split_ratios{12, 3, 5};  // train, val, test
    std::uint64_t split_seed = 0;
};

struct EvalSettings {
    std::string split = "test";
    double threshold = 0.5;
    std::size_t batch_size = 32;
    std::uint64_t robustness_seed = 0;
};

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    Paths paths;
    DataSettings data;
    EvalSettings eval;

    void validate() const;
};

// Starts from the defaults, applies the file (if any) and then each "section.key=value"
// override in order. Unknown keys and ill-typed values are ConfigErrors.
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides);

// The default config, commented.
std::string default_config_text();
// Plain YAML of every resolved field.
std::string resolved_config_text(const RunConfig& cfg);

// Relative output directories are placed under $DSNET_OUTPUT_ROOT when it is set.
std::string resolve_output_dir(const std::string& dir);

} // namespace dsnet::cli
