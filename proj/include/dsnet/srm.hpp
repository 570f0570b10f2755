#pragma once

#include <array>
#include <string>
#include <vector>

#include "dsnet/tensor.hpp"

namespace dsnet {

// One fixed 5x5 high-pass residual kernel. Taps are stored already divided by the
// normalization divisor; smaller kernels sit zero-embedded at the center.
struct SrmKernel {
    std::string name;
    std::array<double, 25> taps{};
    double divisor = 1.0;

    double tap(int row, int col) const { return taps[static_cast<std::size_t>(row * 5 + col)]; }
};

// The 30 SRM kernels in canonical order: 8 first-order, 4 second-order, 8 third-order,
// square 3x3, square 5x5, 4 edge 3x3, 4 edge 5x5. Directional variants follow the order
// E, SE, S, SW, W, NW, N, NE (or E, S, W, N for edge kernels).
struct FilterBank {
    std::vector<SrmKernel> kernels;

    std::size_t size() const { return kernels.size(); }
    // kernels.size() x 1 x 5 x 5 weight tensor for conv2d.
    template <typename T>
    Tensor<T> weights() const;
};

inline constexpr std::size_t kSrmKernelCount = 30;
inline constexpr std::size_t kResidualChannels = 3 * kSrmKernelCount;

FilterBank build_filter_bank();

// image [N, 3, s, s] -> residuals [N, 90, s, s], ordered R.k1..k30, G.k1..k30, B.k1..k30.
// Stride 1, zero padding 2; kernels carry no gradient.
template <typename T>
Tensor<T> extract_residuals(const Tensor<T>& image, const FilterBank& bank);

} // namespace dsnet
