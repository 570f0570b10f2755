#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dsnet {

struct FamilyGradcheck {
    std::string family;
    double max_rel_error = 0;
    std::size_t coords_checked = 0;
    std::size_t kinks_skipped = 0;
};

struct GradSuiteOptions {
    std::size_t input_side = 32;  // for the end-to-end model row
    std::size_t samples = 40;     // probed coordinates per family
    std::size_t model_samples = 24;
    double step = 1e-5;
    std::uint64_t seed = 0;
};

// Central-difference check of every layer family and of the whole model, all in 64-bit.
// Each family is probed through a randomly weighted sum of its output.
std::vector<FamilyGradcheck> run_gradcheck_suite(const GradSuiteOptions& options = {});

} // namespace dsnet
