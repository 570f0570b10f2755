#include "dsnet/srm.hpp"

#include <utility>

#include "dsnet/ops.hpp"

namespace dsnet {

namespace {

using Grid = std::array<double, 25>;

constexpr std::array<std::pair<int, int>, 8> kDirections = {{
    {0, 1}, {1, 1}, {1, 0}, {1, -1}, {0, -1}, {-1, -1}, {-1, 0}, {-1, 1},
}};
constexpr std::array<const char*, 8> kDirectionNames = {"E", "SE", "S", "SW",
                                                        "W", "NW", "N", "NE"};

void put(Grid& g, int row, int col, double v) { g[static_cast<std::size_t>(row * 5 + col)] += v; }

Grid rotate_clockwise(const Grid& g) {
    Grid out{};
    for (int r = 0; r < 5; ++r) {
        for (int c = 0; c < 5; ++c) out[static_cast<std::size_t>(r * 5 + c)] = g[(4 - c) * 5 + r];
    }
    return out;
}

SrmKernel make_kernel(std::string name, const Grid& raw, double divisor) {
    SrmKernel k;
    k.name = std::move(name);
    k.divisor = divisor;
    for (std::size_t i = 0; i < 25; ++i) k.taps[i] = raw[i] / divisor;
    return k;
}

Grid from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    // Rows narrower than 5 are centered.
    Grid g{};
    const int offset = (5 - static_cast<int>(rows.size())) / 2;
    int r = offset;
    for (const auto& row : rows) {
        int c = (5 - static_cast<int>(row.size())) / 2;
        for (double v : row) put(g, r, c++, v);
        ++r;
    }
    return g;
}

// Orientation order for the edge kernels: E, S, W, N. The base grid keeps the top (N) half.
void add_edge_family(std::vector<SrmKernel>& out, const std::string& prefix, const Grid& north,
                     double divisor) {
    Grid east = rotate_clockwise(north);
    Grid south = rotate_clockwise(east);
    Grid west = rotate_clockwise(south);
    out.push_back(make_kernel(prefix + "-E", east, divisor));
    out.push_back(make_kernel(prefix + "-S", south, divisor));
    out.push_back(make_kernel(prefix + "-W", west, divisor));
    out.push_back(make_kernel(prefix + "-N", north, divisor));
}

} // namespace

FilterBank build_filter_bank() {
    FilterBank bank;
    auto& ks = bank.kernels;

    for (std::size_t d = 0; d < 8; ++d) {
        const auto [dy, dx] = kDirections[d];
        Grid g{};
        put(g, 2, 2, -1);
        put(g, 2 + dy, 2 + dx, 1);
        ks.push_back(make_kernel(std::string("1st-") + kDirectionNames[d], g, 1.0));
    }
    for (std::size_t d = 0; d < 4; ++d) {
        const auto [dy, dx] = kDirections[d];
        Grid g{};
        put(g, 2 - dy, 2 - dx, 1);
        put(g, 2, 2, -2);
        put(g, 2 + dy, 2 + dx, 1);
        ks.push_back(make_kernel(std::string("2nd-") + kDirectionNames[d], g, 2.0));
    }
    for (std::size_t d = 0; d < 8; ++d) {
        const auto [dy, dx] = kDirections[d];
        Grid g{};
        put(g, 2 - dy, 2 - dx, 1);
        put(g, 2, 2, -3);
        put(g, 2 + dy, 2 + dx, 3);
        put(g, 2 + 2 * dy, 2 + 2 * dx, -1);
        ks.push_back(make_kernel(std::string("3rd-") + kDirectionNames[d], g, 3.0));
    }

    const Grid square3 = from_rows({{-1, 2, -1}, {2, -4, 2}, {-1, 2, -1}});
    const Grid square5 = from_rows({{-1, 2, -2, 2, -1},
                                    {2, -6, 8, -6, 2},
                                    {-2, 8, -12, 8, -2},
                                    {2, -6, 8, -6, 2},
                                    {-1, 2, -2, 2, -1}});
    ks.push_back(make_kernel("square3x3", square3, 4.0));
    ks.push_back(make_kernel("square5x5", square5, 12.0));

    const Grid edge3 = from_rows({{-1, 2, -1}, {2, -4, 2}, {0, 0, 0}});
    const Grid edge5 = from_rows({{-1, 2, -2, 2, -1},
                                  {2, -6, 8, -6, 2},
                                  {-2, 8, -12, 8, -2},
                                  {0, 0, 0, 0, 0},
                                  {0, 0, 0, 0, 0}});
    add_edge_family(ks, "edge3x3", edge3, 4.0);
    add_edge_family(ks, "edge5x5", edge5, 12.0);
    return bank;
}

template <typename T>
Tensor<T> FilterBank::weights() const {
    std::vector<T> w;
    w.reserve(kernels.size() * 25);
    for (const auto& k : kernels) {
        for (double v : k.taps) w.push_back(static_cast<T>(v));
    }
    return Tensor<T>({kernels.size(), 1, 5, 5}, std::move(w));
}

template <typename T>
Tensor<T> extract_residuals(const Tensor<T>& image, const FilterBank& bank) {
    if (image.rank() != 4 || image.shape()[1] != 3) {
        throw DimensionError("extract_residuals: expected [N, 3, s, s] image, got " +
                             shape_str(image.shape()));
    }
    const auto& s = image.shape();
    if (s[2] < 5 || s[3] < 5) {
        throw DimensionError("extract_residuals: spatial extent must be at least 5, got " +
                             shape_str(s));
    }
    // Each colour plane becomes its own single-channel sample so every kernel sees one channel.
    auto planes = reshape(image, {s[0] * 3, 1, s[2], s[3]});
    auto filtered = conv2d(planes, bank.weights<T>(), Tensor<T>(), 1, 2);
    return reshape(filtered, {s[0], 3 * bank.size(), s[2], s[3]});
}

template Tensor<float> FilterBank::weights<float>() const;
template Tensor<double> FilterBank::weights<double>() const;
template Tensor<float> extract_residuals(const Tensor<float>&, const FilterBank&);
template Tensor<double> extract_residuals(const Tensor<double>&, const FilterBank&);

} // namespace dsnet
