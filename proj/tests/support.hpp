#pragma once

// Test-side reference implementations. Nothing here calls into the library's numerics.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "dsnet/tensor.hpp"

namespace testing {

using dsnet::Shape;
using dsnet::Tensor;

template <typename T>
Tensor<T> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0,
                        double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<T> v(dsnet::shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(u(rng));
    return Tensor<T>(shape, std::move(v));
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) return INFINITY;
    double m = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
    }
    return m;
}

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) return false;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        if (a.data()[i] != b.data()[i]) return false;
    }
    return true;
}

// Direct quadruple loop; zero padding, cross-correlation.
inline std::vector<double> naive_conv2d(const std::vector<double>& x, std::size_t n, std::size_t cin,
                                        std::size_t h, std::size_t w,
                                        const std::vector<double>& weight, std::size_t cout,
                                        std::size_t k, const std::vector<double>* bias,
                                        std::size_t stride, std::size_t pad, std::size_t& oh,
                                        std::size_t& ow) {
    oh = (h + 2 * pad - k) / stride + 1;
    ow = (w + 2 * pad - k) / stride + 1;
    std::vector<double> out(n * cout * oh * ow, 0.0);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t o = 0; o < cout; ++o)
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t xo = 0; xo < ow; ++xo) {
                    double acc = bias ? (*bias)[o] : 0.0;
                    for (std::size_t c = 0; c < cin; ++c)
                        for (std::size_t i = 0; i < k; ++i)
                            for (std::size_t j = 0; j < k; ++j) {
                                const long iy = static_cast<long>(y * stride + i) - static_cast<long>(pad);
                                const long ix = static_cast<long>(xo * stride + j) - static_cast<long>(pad);
                                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) ||
                                    ix >= static_cast<long>(w))
                                    continue;
                                acc += x[((b * cin + c) * h + static_cast<std::size_t>(iy)) * w +
                                         static_cast<std::size_t>(ix)] *
                                       weight[((o * cin + c) * k + i) * k + j];
                            }
                    out[((b * cout + o) * oh + y) * ow + xo] = acc;
                }
    return out;
}

// rows x din times din x dout.
inline std::vector<double> naive_linear(const std::vector<double>& x, std::size_t rows,
                                        std::size_t din, const std::vector<double>& w,
                                        std::size_t dout, const std::vector<double>& b) {
    std::vector<double> out(rows * dout);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < dout; ++o) {
            double acc = b.empty() ? 0.0 : b[o];
            for (std::size_t i = 0; i < din; ++i) acc += x[r * din + i] * w[i * dout + o];
            out[r * dout + o] = acc;
        }
    return out;
}

using Kernel5 = std::array<std::array<double, 5>, 5>;

inline Kernel5 embed3(const std::array<std::array<double, 3>, 3>& k3) {
    Kernel5 k{};
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) k[r + 1][c + 1] = k3[r][c];
    return k;
}

// The 30 residual kernels, tabulated by hand and divided by their normalizers.
// Direction order E, SE, S, SW, W, NW, N, NE as (row, col) steps.
inline std::vector<Kernel5> reference_srm_bank() {
    const int dr[8] = {0, 1, 1, 1, 0, -1, -1, -1};
    const int dc[8] = {1, 1, 0, -1, -1, -1, 0, 1};
    std::vector<Kernel5> bank;
    for (int d = 0; d < 8; ++d) {
        Kernel5 k{};
        k[2][2] = -1;
        k[2 + dr[d]][2 + dc[d]] = 1;
        bank.push_back(k);
    }
    for (int d = 0; d < 4; ++d) {
        Kernel5 k{};
        k[2 - dr[d]][2 - dc[d]] = 0.5;
        k[2][2] = -1;
        k[2 + dr[d]][2 + dc[d]] = 0.5;
        bank.push_back(k);
    }
    for (int d = 0; d < 8; ++d) {
        Kernel5 k{};
        k[2 - dr[d]][2 - dc[d]] = 1.0 / 3;
        k[2][2] = -1;
        k[2 + dr[d]][2 + dc[d]] = 1;
        k[2 + 2 * dr[d]][2 + 2 * dc[d]] = -1.0 / 3;
        bank.push_back(k);
    }
    auto scaled = [](Kernel5 k, double div) {
        for (auto& row : k)
            for (auto& v : row) v /= div;
        return k;
    };
    bank.push_back(scaled(embed3({{{-1, 2, -1}, {2, -4, 2}, {-1, 2, -1}}}), 4));
    bank.push_back(scaled(Kernel5{{{-1, 2, -2, 2, -1},
                                   {2, -6, 8, -6, 2},
                                   {-2, 8, -12, 8, -2},
                                   {2, -6, 8, -6, 2},
                                   {-1, 2, -2, 2, -1}}},
                          12));
    // Edge 3x3: E, S, W, N.
    bank.push_back(scaled(embed3({{{0, 2, -1}, {0, -4, 2}, {0, 2, -1}}}), 4));
    bank.push_back(scaled(embed3({{{0, 0, 0}, {2, -4, 2}, {-1, 2, -1}}}), 4));
    bank.push_back(scaled(embed3({{{-1, 2, 0}, {2, -4, 0}, {-1, 2, 0}}}), 4));
    bank.push_back(scaled(embed3({{{-1, 2, -1}, {2, -4, 2}, {0, 0, 0}}}), 4));
    // Edge 5x5: E, S, W, N.
    bank.push_back(scaled(Kernel5{{{0, 0, -2, 2, -1},
                                   {0, 0, 8, -6, 2},
                                   {0, 0, -12, 8, -2},
                                   {0, 0, 8, -6, 2},
                                   {0, 0, -2, 2, -1}}},
                          12));
    bank.push_back(scaled(Kernel5{{{0, 0, 0, 0, 0},
                                   {0, 0, 0, 0, 0},
                                   {-2, 8, -12, 8, -2},
                                   {2, -6, 8, -6, 2},
                                   {-1, 2, -2, 2, -1}}},
                          12));
    bank.push_back(scaled(Kernel5{{{-1, 2, -2, 0, 0},
                                   {2, -6, 8, 0, 0},
                                   {-2, 8, -12, 0, 0},
                                   {2, -6, 8, 0, 0},
                                   {-1, 2, -2, 0, 0}}},
                          12));
    bank.push_back(scaled(Kernel5{{{-1, 2, -2, 2, -1},
                                   {2, -6, 8, -6, 2},
                                   {-2, 8, -12, 8, -2},
                                   {0, 0, 0, 0, 0},
                                   {0, 0, 0, 0, 0}}},
                          12));
    return bank;
}

// [N,3,s,s] -> [N,90,s,s]: plane c filtered by kernel k lands in channel c*30 + k.
inline std::vector<double> naive_residuals(const std::vector<double>& img, std::size_t n,
                                           std::size_t s) {
    const auto bank = reference_srm_bank();
    std::vector<double> out(n * 90 * s * s, 0.0);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t k = 0; k < bank.size(); ++k)
                for (std::size_t y = 0; y < s; ++y)
                    for (std::size_t x = 0; x < s; ++x) {
                        double acc = 0;
                        for (int i = 0; i < 5; ++i)
                            for (int j = 0; j < 5; ++j) {
                                const long iy = static_cast<long>(y) + i - 2;
                                const long ix = static_cast<long>(x) + j - 2;
                                if (iy < 0 || ix < 0 || iy >= static_cast<long>(s) ||
                                    ix >= static_cast<long>(s))
                                    continue;
                                acc += bank[k][i][j] *
                                       img[((b * 3 + c) * s + static_cast<std::size_t>(iy)) * s +
                                           static_cast<std::size_t>(ix)];
                            }
                        out[((b * 90 + c * 30 + k) * s + y) * s + x] = acc;
                    }
    return out;
}

// Layer-by-layer parameter census written out from the architecture description.
inline std::size_t closed_form_parameter_count(std::size_t heads = 8) {
    auto conv = [](std::size_t cin, std::size_t cout, std::size_t k, bool bias) {
        return cin * cout * k * k + (bias ? cout : 0);
    };
    auto bn = [](std::size_t c) { return 2 * c; };
    auto module_a = [&](std::size_t cin, std::size_t cout) {
        return conv(cin, cout, 3, false) + bn(cout) + conv(cout, cout, 3, false) + bn(cout);
    };
    auto b1 = [&](std::size_t cin, std::size_t cout) {
        return conv(cin, cout, 3, false) + bn(cout) + conv(cin, cout, 3, true);
    };
    auto b2 = [&](std::size_t cin, std::size_t cout) { return conv(cin, cout, 3, false) + bn(cout); };

    const std::size_t residual =
        module_a(90, 64) + b1(64, 128) + b1(128, 256) + b1(256, 256) + b1(256, 256);
    const std::size_t head = conv(3, 3, 1, true) + conv(6, 6, 3, true) + conv(6, 6, 3, true);
    const std::size_t content =
        head + module_a(12, 64) + b2(64, 128) + b2(128, 256) + b2(256, 256) + b2(256, 256);
    const std::size_t d = 256, dk = d / heads;
    const std::size_t cma = 4 * (heads * dk * dk + heads * dk);
    const std::size_t mlp = (d * 4 * d + 4 * d) + (4 * d * d + d);
    const std::size_t block = 4 * (2 * d) + cma + 2 * mlp;
    const std::size_t classifier = 512 + 1;
    return residual + content + 2 * block + classifier;
}

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("dsnet_" + tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string file(const std::string& name) const { return (path_ / name).string(); }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

} // namespace testing
