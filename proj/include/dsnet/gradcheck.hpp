#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dsnet/tensor.hpp"

namespace dsnet {

struct GradcheckResult {
    bool has_gradient = false;   // false when the probed tensor is frozen
    double max_rel_error = 0.0;  // relative to max(1, |analytic|, |numeric|)
    std::size_t coords_checked = 0;
    std::size_t kinks_skipped = 0;  // probes whose +-step straddled a ReLU/max-pool/clamp switch
};

// Central differences against the analytic gradient of a scalar function of x.
// Tensors above max_coords elements are probed at max_coords seeded random coordinates.
// A probe whose two sides took different branches in a piecewise op (see BranchRecorder) is
// not a derivative estimate; it is counted in kinks_skipped and replaced by another coordinate.
template <typename T>
GradcheckResult finite_diff_check(const std::function<Tensor<T>(const Tensor<T>&)>& f,
                                  Tensor<T> x, double step, std::size_t max_coords = 64,
                                  std::uint64_t seed = 0);

// Same check over a parameter collection: `samples` coordinates, each drawn by picking a
// tensor uniformly and then an element uniformly. The loss closure reads the tensors in place.
// Kink-straddling draws are redrawn, up to 10 x samples attempts in total.
template <typename T>
GradcheckResult finite_diff_check_params(const std::function<Tensor<T>()>& loss,
                                         std::vector<Tensor<T>> params, double step,
                                         std::size_t samples, std::uint64_t seed = 0);

} // namespace dsnet
