#include "dsnet/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace dsnet {

namespace {

thread_local BranchRecorder* active_recorder = nullptr;

} // namespace

BranchRecorder::BranchRecorder() : previous_(active_recorder) { active_recorder = this; }
BranchRecorder::~BranchRecorder() { active_recorder = previous_; }
std::uint64_t BranchRecorder::digest() const { return digest_; }

void record_branch(std::uint64_t value) {
    if (!active_recorder) return;
    auto& d = active_recorder->digest_;
    d = (d ^ value) * 0x100000001b3ull;
}

bool recording_branches() { return active_recorder != nullptr; }

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using MapConstMat = Eigen::Map<const RowMat<T>>;

template <typename T>
using BackwardFn =
    std::function<void(const TensorImpl<T>&, std::span<const T>, std::span<std::vector<T>*>)>;

void require_rank(const Shape& s, std::size_t rank, const char* op, const char* what) {
    if (s.size() != rank) {
        throw DimensionError(std::string(op) + ": " + what + " must have rank " +
                             std::to_string(rank) + ", got " + shape_str(s));
    }
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                             shape_str(b));
    }
}

std::size_t normalize_axis(int axis, std::size_t rank, const char* op) {
    const int r = static_cast<int>(rank);
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) {
        throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                             " invalid for rank " + std::to_string(rank));
    }
    return static_cast<std::size_t>(a);
}

struct ConvGeometry {
    std::size_t cin, h, w, kh, kw, stride, pad, ho, wo;
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
    const std::size_t plane = g.ho * g.wo;
    for (std::size_t c = 0; c < g.cin; ++c) {
        for (std::size_t ki = 0; ki < g.kh; ++ki) {
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                T* row = cols + ((c * g.kh + ki) * g.kw + kj) * plane;
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.pad);
                    T* dst = row + oy * g.wo;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
                        std::fill(dst, dst + g.wo, T(0));
                        continue;
                    }
                    const T* src = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                        static_cast<std::ptrdiff_t>(g.pad);
                        dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w))
                                      ? T(0)
                                      : src[ix];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* x) {
    const std::size_t plane = g.ho * g.wo;
    for (std::size_t c = 0; c < g.cin; ++c) {
        for (std::size_t ki = 0; ki < g.kh; ++ki) {
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                const T* row = cols + ((c * g.kh + ki) * g.kw + kj) * plane;
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    T* dst = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
                    const T* src = row + oy * g.wo;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                        static_cast<std::ptrdiff_t>(g.pad);
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

} // namespace

template <typename T>
BatchNormState<T> BatchNormState<T>::create(std::size_t channels) {
    BatchNormState s;
    s.gamma = Tensor<T>::full({channels}, T(1));
    s.beta = Tensor<T>::zeros({channels});
    s.running_mean = Tensor<T>::zeros({channels});
    s.running_var = Tensor<T>::full({channels}, T(1));
    s.gamma.set_requires_grad(true);
    s.beta.set_requires_grad(true);
    return s;
}

template <typename T>
LayerNormState<T> LayerNormState<T>::create(std::size_t width) {
    LayerNormState s;
    s.gamma = Tensor<T>::full({width}, T(1));
    s.beta = Tensor<T>::zeros({width});
    s.gamma.set_requires_grad(true);
    s.beta.set_requires_grad(true);
    return s;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t padding) {
    require_rank(input.shape(), 4, "conv2d", "input");
    require_rank(weight.shape(), 4, "conv2d", "weight");
    if (stride == 0) throw ArgumentError("conv2d: stride must be positive");
    const auto& is = input.shape();
    const auto& ws = weight.shape();
    if (ws[1] != is[1]) {
        throw DimensionError("conv2d: weight input channels (axis 1 = " + std::to_string(ws[1]) +
                             ") do not match input channels (axis 1 = " + std::to_string(is[1]) +
                             ")");
    }
    const std::size_t n = is[0], cout = ws[0];
    ConvGeometry g{is[1], is[2], is[3], ws[2], ws[3], stride, padding, 0, 0};
    if (g.kh > g.h + 2 * padding || g.kw > g.w + 2 * padding) {
        throw DimensionError("conv2d: kernel " + std::to_string(g.kh) + "x" +
                             std::to_string(g.kw) + " exceeds padded input extent on axes 2/3 " +
                             shape_str(is));
    }
    if (bias.defined() && (bias.rank() != 1 || bias.numel() != cout)) {
        throw DimensionError("conv2d: bias shape " + shape_str(bias.shape()) +
                             " does not match output channels " + std::to_string(cout));
    }
    g.ho = (g.h + 2 * padding - g.kh) / stride + 1;
    g.wo = (g.w + 2 * padding - g.kw) / stride + 1;
    const std::size_t plane = g.ho * g.wo;
    const std::size_t ckk = g.cin * g.kh * g.kw;

    std::vector<T> out(n * cout * plane);
    std::vector<T> cols(ckk * plane);
    MapConstMat<T> wmat(weight.data().data(), static_cast<Eigen::Index>(cout),
                        static_cast<Eigen::Index>(ckk));
    for (std::size_t b = 0; b < n; ++b) {
        im2col(input.data().data() + b * g.cin * g.h * g.w, g, cols.data());
        MapConstMat<T> cm(cols.data(), static_cast<Eigen::Index>(ckk),
                          static_cast<Eigen::Index>(plane));
        MapMat<T> om(out.data() + b * cout * plane, static_cast<Eigen::Index>(cout),
                     static_cast<Eigen::Index>(plane));
        om.noalias() = wmat * cm;
        if (bias.defined()) {
            const T* bp = bias.data().data();
            for (std::size_t c = 0; c < cout; ++c) {
                T* row = out.data() + (b * cout + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) row[i] += bp[c];
            }
        }
    }

    auto xi = input.impl();
    auto wi = weight.impl();
    const bool has_bias = bias.defined();
    BackwardFn<T> fn = [xi, wi, g, n, cout, has_bias](const TensorImpl<T>&,
                                                      std::span<const T> gout,
                                                      std::span<std::vector<T>*> grads) {
        const std::size_t plane = g.ho * g.wo;
        const std::size_t ckk = g.cin * g.kh * g.kw;
        const auto rows = static_cast<Eigen::Index>(ckk);
        const auto pcols = static_cast<Eigen::Index>(plane);
        std::vector<T> cols(ckk * plane);
        MapConstMat<T> wmat(wi->data.data(), static_cast<Eigen::Index>(cout), rows);
        for (std::size_t b = 0; b < n; ++b) {
            MapConstMat<T> gm(gout.data() + b * cout * plane, static_cast<Eigen::Index>(cout),
                              pcols);
            if (grads[1]) {
                im2col(xi->data.data() + b * g.cin * g.h * g.w, g, cols.data());
                MapConstMat<T> cm(cols.data(), rows, pcols);
                MapMat<T> gw(grads[1]->data(), static_cast<Eigen::Index>(cout), rows);
                gw.noalias() += gm * cm.transpose();
            }
            if (grads[0]) {
                MapMat<T> cm(cols.data(), rows, pcols);
                cm.noalias() = wmat.transpose() * gm;
                col2im_add(cols.data(), g, grads[0]->data() + b * g.cin * g.h * g.w);
            }
            if (has_bias && grads[2]) {
                T* gb = grads[2]->data();
                for (std::size_t c = 0; c < cout; ++c) {
                    const T* row = gout.data() + (b * cout + c) * plane;
                    T acc = 0;
                    for (std::size_t i = 0; i < plane; ++i) acc += row[i];
                    gb[c] += acc;
                }
            }
        }
    };
    return detail::make_result<T>({n, cout, g.ho, g.wo}, std::move(out), "conv2d",
                                  {input, weight, bias}, std::move(fn));
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input, std::size_t k, std::size_t stride,
                    std::size_t padding) {
    require_rank(input.shape(), 4, "maxpool2d", "input");
    if (k == 0 || stride == 0) throw ArgumentError("maxpool2d: kernel and stride must be positive");
    const auto& s = input.shape();
    const std::size_t n = s[0], c = s[1], h = s[2], w = s[3];
    if (h + 2 * padding < k || w + 2 * padding < k) {
        throw DimensionError("maxpool2d: degenerate output for input " + shape_str(s) +
                             " with k=" + std::to_string(k) + " pad=" + std::to_string(padding));
    }
    const std::size_t ho = (h + 2 * padding - k) / stride + 1;
    const std::size_t wo = (w + 2 * padding - k) / stride + 1;
    std::vector<T> out(n * c * ho * wo);
    std::vector<std::ptrdiff_t> arg(out.size(), -1);
    const T* x = input.data().data();
    for (std::size_t p = 0; p < n * c; ++p) {
        const T* plane = x + p * h * w;
        for (std::size_t oy = 0; oy < ho; ++oy) {
            for (std::size_t ox = 0; ox < wo; ++ox) {
                T best = -std::numeric_limits<T>::infinity();
                std::ptrdiff_t best_i = -1;
                for (std::size_t ki = 0; ki < k; ++ki) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ki) -
                                    static_cast<std::ptrdiff_t>(padding);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t kj = 0; kj < k; ++kj) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kj) -
                                        static_cast<std::ptrdiff_t>(padding);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                        const std::ptrdiff_t idx = iy * static_cast<std::ptrdiff_t>(w) + ix;
                        // A NaN in the window wins so it is not silently dropped.
                        if (best_i < 0 ||
                            (!std::isnan(best) && (plane[idx] > best || std::isnan(plane[idx])))) {
                            best = plane[idx];
                            best_i = idx;
                        }
                    }
                }
                if (best_i < 0) {
                    throw DimensionError("maxpool2d: window contains only padding for input " +
                                         shape_str(s));
                }
                const std::size_t o = (p * ho + oy) * wo + ox;
                out[o] = best;
                arg[o] = static_cast<std::ptrdiff_t>(p * h * w) + best_i;
                if (recording_branches()) record_branch(static_cast<std::uint64_t>(best_i));
            }
        }
    }
    BackwardFn<T> fn = [arg = std::move(arg)](const TensorImpl<T>&, std::span<const T> gout,
                                              std::span<std::vector<T>*> grads) {
        if (!grads[0]) return;
        T* gx = grads[0]->data();
        for (std::size_t o = 0; o < gout.size(); ++o) gx[arg[o]] += gout[o];
    };
    return detail::make_result<T>({n, c, ho, wo}, std::move(out), "maxpool2d", {input},
                                  std::move(fn));
}

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& input, BatchNormState<T>& state, bool training) {
    require_rank(input.shape(), 4, "batchnorm2d", "input");
    const auto& s = input.shape();
    const std::size_t n = s[0], c = s[1], plane = s[2] * s[3];
    if (c != state.channels()) {
        throw DimensionError("batchnorm2d: input channels (axis 1 = " + std::to_string(c) +
                             ") do not match state channels " + std::to_string(state.channels()));
    }
    const std::size_t m = n * plane;
    if (m == 0 || (training && m < 2)) {
        throw StatisticsError("batchnorm2d: N*H*W = " + std::to_string(m) +
                              " is too small for batch statistics");
    }
    const T* x = input.data().data();
    const T* gamma = state.gamma.data().data();
    const T* beta = state.beta.data().data();
    std::vector<T> mean(c), inv_std(c);
    if (training) {
        T* rm = state.running_mean.data().data();
        T* rv = state.running_var.data().data();
        const T mom = static_cast<T>(state.momentum);
        for (std::size_t ch = 0; ch < c; ++ch) {
            T acc = 0;
            for (std::size_t b = 0; b < n; ++b) {
                const T* p = x + (b * c + ch) * plane;
                for (std::size_t i = 0; i < plane; ++i) acc += p[i];
            }
            const T mu = acc / static_cast<T>(m);
            T sq = 0;
            for (std::size_t b = 0; b < n; ++b) {
                const T* p = x + (b * c + ch) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const T d = p[i] - mu;
                    sq += d * d;
                }
            }
            const T var = sq / static_cast<T>(m);
            mean[ch] = mu;
            inv_std[ch] = T(1) / std::sqrt(var + static_cast<T>(state.eps));
            rm[ch] = (T(1) - mom) * rm[ch] + mom * mu;
            rv[ch] = (T(1) - mom) * rv[ch] + mom * (sq / static_cast<T>(m - 1));
        }
    } else {
        const T* rm = state.running_mean.data().data();
        const T* rv = state.running_var.data().data();
        for (std::size_t ch = 0; ch < c; ++ch) {
            mean[ch] = rm[ch];
            inv_std[ch] = T(1) / std::sqrt(rv[ch] + static_cast<T>(state.eps));
        }
    }

    std::vector<T> xhat(input.numel());
    std::vector<T> out(input.numel());
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t off = (b * c + ch) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                const T xh = (x[off + i] - mean[ch]) * inv_std[ch];
                xhat[off + i] = xh;
                out[off + i] = gamma[ch] * xh + beta[ch];
            }
        }
    }

    auto gi = state.gamma.impl();
    BackwardFn<T> fn = [gi, xhat = std::move(xhat), inv_std, n, c, plane,
                        training](const TensorImpl<T>&, std::span<const T> gout,
                                  std::span<std::vector<T>*> grads) {
        const T* gamma = gi->data.data();
        const T m = static_cast<T>(n * plane);
        for (std::size_t ch = 0; ch < c; ++ch) {
            T sum_g = 0, sum_gx = 0;
            for (std::size_t b = 0; b < n; ++b) {
                const std::size_t off = (b * c + ch) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    sum_g += gout[off + i];
                    sum_gx += gout[off + i] * xhat[off + i];
                }
            }
            if (grads[1]) (*grads[1])[ch] += sum_gx;
            if (grads[2]) (*grads[2])[ch] += sum_g;
            if (!grads[0]) continue;
            T* gx = grads[0]->data();
            const T k = gamma[ch] * inv_std[ch];
            for (std::size_t b = 0; b < n; ++b) {
                const std::size_t off = (b * c + ch) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    if (training) {
                        gx[off + i] +=
                            k * (gout[off + i] - sum_g / m - xhat[off + i] * sum_gx / m);
                    } else {
                        gx[off + i] += k * gout[off + i];
                    }
                }
            }
        }
    };
    return detail::make_result<T>(s, std::move(out), "batchnorm2d",
                                  {input, state.gamma, state.beta}, std::move(fn));
}

template <typename T>
Tensor<T> layernorm(const Tensor<T>& tokens, const LayerNormState<T>& state) {
    if (tokens.rank() < 1) throw DimensionError("layernorm: input must have rank >= 1");
    const std::size_t d = tokens.dim(-1);
    if (d != state.width()) {
        throw DimensionError("layernorm: trailing axis " + std::to_string(d) +
                             " does not match state width " + std::to_string(state.width()));
    }
    const std::size_t rows = tokens.numel() / d;
    const T* x = tokens.data().data();
    const T* gamma = state.gamma.data().data();
    const T* beta = state.beta.data().data();
    std::vector<T> xhat(tokens.numel()), out(tokens.numel()), inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* p = x + r * d;
        T mu = 0;
        for (std::size_t i = 0; i < d; ++i) mu += p[i];
        mu /= static_cast<T>(d);
        T var = 0;
        for (std::size_t i = 0; i < d; ++i) var += (p[i] - mu) * (p[i] - mu);
        var /= static_cast<T>(d);
        const T is = T(1) / std::sqrt(var + static_cast<T>(state.eps));
        inv_std[r] = is;
        for (std::size_t i = 0; i < d; ++i) {
            const T xh = (p[i] - mu) * is;
            xhat[r * d + i] = xh;
            out[r * d + i] = gamma[i] * xh + beta[i];
        }
    }
    auto gi = state.gamma.impl();
    BackwardFn<T> fn = [gi, xhat = std::move(xhat), inv_std = std::move(inv_std), rows,
                        d](const TensorImpl<T>&, std::span<const T> gout,
                           std::span<std::vector<T>*> grads) {
        const T* gamma = gi->data.data();
        std::vector<T> dxh(d);
        for (std::size_t r = 0; r < rows; ++r) {
            const T* g = gout.data() + r * d;
            const T* xh = xhat.data() + r * d;
            T sum_d = 0, sum_dx = 0;
            for (std::size_t i = 0; i < d; ++i) {
                if (grads[1]) (*grads[1])[i] += g[i] * xh[i];
                if (grads[2]) (*grads[2])[i] += g[i];
                dxh[i] = g[i] * gamma[i];
                sum_d += dxh[i];
                sum_dx += dxh[i] * xh[i];
            }
            if (!grads[0]) continue;
            T* gx = grads[0]->data() + r * d;
            const T inv_d = T(1) / static_cast<T>(d);
            for (std::size_t i = 0; i < d; ++i) {
                gx[i] += inv_std[r] * (dxh[i] - sum_d * inv_d - xh[i] * sum_dx * inv_d);
            }
        }
    };
    return detail::make_result<T>(tokens.shape(), std::move(out), "layernorm",
                                  {tokens, state.gamma, state.beta}, std::move(fn));
}

template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
    require_rank(weight.shape(), 2, "linear", "weight");
    if (input.rank() < 1) throw DimensionError("linear: input must have rank >= 1");
    const std::size_t din = weight.shape()[0], dout = weight.shape()[1];
    if (input.dim(-1) != din) {
        throw DimensionError("linear: input trailing axis " + std::to_string(input.dim(-1)) +
                             " does not match weight axis 0 = " + std::to_string(din));
    }
    if (bias.defined() && bias.numel() != dout) {
        throw DimensionError("linear: bias shape " + shape_str(bias.shape()) +
                             " does not match output width " + std::to_string(dout));
    }
    const std::size_t rows = input.numel() / din;
    std::vector<T> out(rows * dout);
    MapConstMat<T> xm(input.data().data(), static_cast<Eigen::Index>(rows),
                      static_cast<Eigen::Index>(din));
    MapConstMat<T> wm(weight.data().data(), static_cast<Eigen::Index>(din),
                      static_cast<Eigen::Index>(dout));
    MapMat<T> om(out.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dout));
    om.noalias() = xm * wm;
    if (bias.defined()) {
        const T* b = bias.data().data();
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < dout; ++j) out[r * dout + j] += b[j];
        }
    }
    Shape os = input.shape();
    os.back() = dout;
    auto xi = input.impl();
    auto wi = weight.impl();
    const bool has_bias = bias.defined();
    BackwardFn<T> fn = [xi, wi, rows, din, dout, has_bias](const TensorImpl<T>&,
                                                           std::span<const T> gout,
                                                           std::span<std::vector<T>*> grads) {
        const auto r = static_cast<Eigen::Index>(rows);
        const auto di = static_cast<Eigen::Index>(din);
        const auto dout_i = static_cast<Eigen::Index>(dout);
        MapConstMat<T> gm(gout.data(), r, dout_i);
        if (grads[0]) {
            MapConstMat<T> wm(wi->data.data(), di, dout_i);
            MapMat<T> gx(grads[0]->data(), r, di);
            gx.noalias() += gm * wm.transpose();
        }
        if (grads[1]) {
            MapConstMat<T> xm(xi->data.data(), r, di);
            MapMat<T> gw(grads[1]->data(), di, dout_i);
            gw.noalias() += xm.transpose() * gm;
        }
        if (has_bias && grads[2]) {
            T* gb = grads[2]->data();
            for (std::size_t i = 0; i < rows; ++i) {
                for (std::size_t j = 0; j < dout; ++j) gb[j] += gout[i * dout + j];
            }
        }
    };
    return detail::make_result<T>(std::move(os), std::move(out), "linear",
                                  {input, weight, bias}, std::move(fn));
}

template <typename T>
Tensor<T> grouped_linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
    require_rank(input.shape(), 4, "grouped_linear", "input");
    require_rank(weight.shape(), 3, "grouped_linear", "weight");
    const auto& is = input.shape();
    const auto& ws = weight.shape();
    const std::size_t n = is[0], groups = is[1], t = is[2], d = is[3], e = ws[2];
    if (ws[0] != groups || ws[1] != d) {
        throw DimensionError("grouped_linear: weight " + shape_str(ws) +
                             " incompatible with input " + shape_str(is) +
                             " (axes 1 and 3 must match weight axes 0 and 1)");
    }
    if (bias.defined() && bias.shape() != Shape{groups, e}) {
        throw DimensionError("grouped_linear: bias shape " + shape_str(bias.shape()) +
                             " expected " + shape_str({groups, e}));
    }
    std::vector<T> out(n * groups * t * e);
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t gidx = 0; gidx < groups; ++gidx) {
            MapConstMat<T> xm(input.data().data() + (b * groups + gidx) * t * d,
                              static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(d));
            MapConstMat<T> wm(weight.data().data() + gidx * d * e, static_cast<Eigen::Index>(d),
                              static_cast<Eigen::Index>(e));
            T* op = out.data() + (b * groups + gidx) * t * e;
            MapMat<T> om(op, static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(e));
            om.noalias() = xm * wm;
            if (bias.defined()) {
                const T* bp = bias.data().data() + gidx * e;
                for (std::size_t i = 0; i < t; ++i) {
                    for (std::size_t j = 0; j < e; ++j) op[i * e + j] += bp[j];
                }
            }
        }
    }
    auto xi = input.impl();
    auto wi = weight.impl();
    const bool has_bias = bias.defined();
    BackwardFn<T> fn = [xi, wi, n, groups, t, d, e, has_bias](const TensorImpl<T>&,
                                                              std::span<const T> gout,
                                                              std::span<std::vector<T>*> grads) {
        const auto ti = static_cast<Eigen::Index>(t);
        const auto di = static_cast<Eigen::Index>(d);
        const auto ei = static_cast<Eigen::Index>(e);
        for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t gidx = 0; gidx < groups; ++gidx) {
                const std::size_t blk = b * groups + gidx;
                MapConstMat<T> gm(gout.data() + blk * t * e, ti, ei);
                if (grads[0]) {
                    MapConstMat<T> wm(wi->data.data() + gidx * d * e, di, ei);
                    MapMat<T> gx(grads[0]->data() + blk * t * d, ti, di);
                    gx.noalias() += gm * wm.transpose();
                }
                if (grads[1]) {
                    MapConstMat<T> xm(xi->data.data() + blk * t * d, ti, di);
                    MapMat<T> gw(grads[1]->data() + gidx * d * e, di, ei);
                    gw.noalias() += xm.transpose() * gm;
                }
                if (has_bias && grads[2]) {
                    T* gb = grads[2]->data() + gidx * e;
                    const T* g = gout.data() + blk * t * e;
                    for (std::size_t i = 0; i < t; ++i) {
                        for (std::size_t j = 0; j < e; ++j) gb[j] += g[i * e + j];
                    }
                }
            }
        }
    };
    return detail::make_result<T>({n, groups, t, e}, std::move(out), "grouped_linear",
                                  {input, weight, bias}, std::move(fn));
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
    if (a.rank() < 2 || a.rank() != b.rank()) {
        throw DimensionError("matmul: operands must share rank >= 2, got " + shape_str(a.shape()) +
                             " and " + shape_str(b.shape()));
    }
    const std::size_t r = a.rank();
    for (std::size_t i = 0; i + 2 < r; ++i) {
        if (a.shape()[i] != b.shape()[i]) {
            throw DimensionError("matmul: batch axis " + std::to_string(i) + " differs: " +
                                 shape_str(a.shape()) + " vs " + shape_str(b.shape()));
        }
    }
    const std::size_t m = a.shape()[r - 2], k = a.shape()[r - 1];
    const std::size_t bk = transpose_b ? b.shape()[r - 1] : b.shape()[r - 2];
    const std::size_t nn = transpose_b ? b.shape()[r - 2] : b.shape()[r - 1];
    if (bk != k) {
        throw DimensionError("matmul: inner extents differ: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()) + (transpose_b ? " (transposed)" : ""));
    }
    const std::size_t batch = a.numel() / (m * k);
    std::vector<T> out(batch * m * nn);
    const auto mi = static_cast<Eigen::Index>(m);
    const auto ki = static_cast<Eigen::Index>(k);
    const auto ni = static_cast<Eigen::Index>(nn);
    for (std::size_t i = 0; i < batch; ++i) {
        MapConstMat<T> am(a.data().data() + i * m * k, mi, ki);
        MapMat<T> om(out.data() + i * m * nn, mi, ni);
        if (transpose_b) {
            MapConstMat<T> bm(b.data().data() + i * nn * k, ni, ki);
            om.noalias() = am * bm.transpose();
        } else {
            MapConstMat<T> bm(b.data().data() + i * k * nn, ki, ni);
            om.noalias() = am * bm;
        }
    }
    Shape os = a.shape();
    os[r - 1] = nn;
    auto ai = a.impl();
    auto bi = b.impl();
    BackwardFn<T> fn = [ai, bi, batch, mi, ki, ni, transpose_b](const TensorImpl<T>&,
                                                                std::span<const T> gout,
                                                                std::span<std::vector<T>*> grads) {
        const auto sm = static_cast<std::size_t>(mi), sk = static_cast<std::size_t>(ki),
                   sn = static_cast<std::size_t>(ni);
        for (std::size_t i = 0; i < batch; ++i) {
            MapConstMat<T> gm(gout.data() + i * sm * sn, mi, ni);
            MapConstMat<T> am(ai->data.data() + i * sm * sk, mi, ki);
            if (transpose_b) {
                MapConstMat<T> bm(bi->data.data() + i * sn * sk, ni, ki);
                if (grads[0]) {
                    MapMat<T> ga(grads[0]->data() + i * sm * sk, mi, ki);
                    ga.noalias() += gm * bm;
                }
                if (grads[1]) {
                    MapMat<T> gb(grads[1]->data() + i * sn * sk, ni, ki);
                    gb.noalias() += gm.transpose() * am;
                }
            } else {
                MapConstMat<T> bm(bi->data.data() + i * sk * sn, ki, ni);
                if (grads[0]) {
                    MapMat<T> ga(grads[0]->data() + i * sm * sk, mi, ki);
                    ga.noalias() += gm * bm.transpose();
                }
                if (grads[1]) {
                    MapMat<T> gb(grads[1]->data() + i * sk * sn, ki, ni);
                    gb.noalias() += am.transpose() * gm;
                }
            }
        }
    };
    return detail::make_result<T>(std::move(os), std::move(out), "matmul", {a, b}, std::move(fn));
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& input, int axis) {
    const std::size_t ax = normalize_axis(axis, input.rank(), "softmax");
    const auto& s = input.shape();
    const std::size_t len = s[ax];
    std::size_t inner = 1;
    for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t outer = input.numel() / (len * inner);
    const T* x = input.data().data();
    std::vector<T> out(input.numel());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, x[base + i * inner]);
            T total = 0;
            for (std::size_t i = 0; i < len; ++i) {
                const T e = std::exp(x[base + i * inner] - mx);
                out[base + i * inner] = e;
                total += e;
            }
            for (std::size_t i = 0; i < len; ++i) out[base + i * inner] /= total;
        }
    }
    BackwardFn<T> fn = [outer, len, inner](const TensorImpl<T>& self, std::span<const T> gout,
                                           std::span<std::vector<T>*> grads) {
        if (!grads[0]) return;
        const T* y = self.data.data();
        T* gx = grads[0]->data();
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * len * inner + in;
                T dot = 0;
                for (std::size_t i = 0; i < len; ++i) {
                    dot += gout[base + i * inner] * y[base + i * inner];
                }
                for (std::size_t i = 0; i < len; ++i) {
                    const std::size_t j = base + i * inner;
                    gx[j] += y[j] * (gout[j] - dot);
                }
            }
        }
    };
    return detail::make_result<T>(s, std::move(out), "softmax", {input}, std::move(fn));
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "add");
    std::vector<T> out(a.numel());
    const T* x = a.data().data();
    const T* y = b.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
    BackwardFn<T> fn = [](const TensorImpl<T>&, std::span<const T> gout,
                          std::span<std::vector<T>*> grads) {
        for (auto* g : grads) {
            if (!g) continue;
            for (std::size_t i = 0; i < gout.size(); ++i) (*g)[i] += gout[i];
        }
    };
    return detail::make_result<T>(a.shape(), std::move(out), "add", {a, b}, std::move(fn));
}

template <typename T>
Tensor<T> subtract(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "subtract");
    std::vector<T> out(a.numel());
    const T* x = a.data().data();
    const T* y = b.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
    BackwardFn<T> fn = [](const TensorImpl<T>&, std::span<const T> gout,
                          std::span<std::vector<T>*> grads) {
        if (grads[0]) {
            for (std::size_t i = 0; i < gout.size(); ++i) (*grads[0])[i] += gout[i];
        }
        if (grads[1]) {
            for (std::size_t i = 0; i < gout.size(); ++i) (*grads[1])[i] -= gout[i];
        }
    };
    return detail::make_result<T>(a.shape(), std::move(out), "subtract", {a, b}, std::move(fn));
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    std::vector<T> out(a.data().begin(), a.data().end());
    for (auto& v : out) v *= factor;
    BackwardFn<T> fn = [factor](const TensorImpl<T>&, std::span<const T> gout,
                                std::span<std::vector<T>*> grads) {
        if (!grads[0]) return;
        for (std::size_t i = 0; i < gout.size(); ++i) (*grads[0])[i] += factor * gout[i];
    };
    return detail::make_result<T>(a.shape(), std::move(out), "scale", {a}, std::move(fn));
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    std::vector<T> out(a.numel());
    const T* x = a.data().data();
    // NaN passes through.
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) || std::isnan(x[i]) ? x[i] : T(0);
    if (recording_branches()) {
        for (std::size_t i = 0; i < out.size(); ++i) record_branch(x[i] > T(0));
    }
    BackwardFn<T> fn = [](const TensorImpl<T>& self, std::span<const T> gout,
                          std::span<std::vector<T>*> grads) {
        if (!grads[0]) return;
        // Output is positive exactly where the input was, so the mask is read from the output.
        const T* y = self.data.data();
        for (std::size_t i = 0; i < gout.size(); ++i) {
            if (y[i] > T(0)) (*grads[0])[i] += gout[i];
        }
    };
    return detail::make_result<T>(a.shape(), std::move(out), "relu", {a}, std::move(fn));
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
    std::vector<T> out(a.numel());
    const T* x = a.data().data();
    const T inv_sqrt2 = static_cast<T>(0.70710678118654752440);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = T(0.5) * x[i] * (T(1) + std::erf(x[i] * inv_sqrt2));
    }
    auto xi = a.impl();
    BackwardFn<T> fn = [xi, inv_sqrt2](const TensorImpl<T>&, std::span<const T> gout,
                                       std::span<std::vector<T>*> grads) {
        if (!grads[0]) return;
        const T inv_sqrt2pi = static_cast<T>(0.39894228040143267794);
        const T* x = xi->data.data();
        for (std::size_t i = 0; i < gout.size(); ++i) {
            const T cdf = T(0.5) * (T(1) + std::erf(x[i] * inv_sqrt2));
            const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x[i] * x[i]);
            (*grads[0])[i] += gout[i] * (cdf + x[i] * pdf);
        }
    };
    return detail::make_result<T>(a.shape(), std::move(out), "gelu", {a}, std::move(fn));
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    std::vector<T> out(a.numel());
    const T* x = a.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (x[i] >= T(0)) {
            out[i] = T(1) / (T(1) + std::exp(-x[i]));
        } else {
            const T e = std::exp(x[i]);
            out[i] = e / (T(1) + e);
        }
    }
    BackwardFn<T> fn = [](const TensorImpl<T>& self, std::span<const T> gout,
                          std::span<std::vector<T>*> grads) {
        if (!grads[0]) return;
        const T* y = self.data.data();
        for (std::size_t i = 0; i < gout.size(); ++i) {
            (*grads[0])[i] += gout[i] * y[i] * (T(1) - y[i]);
        }
    };
    return detail::make_result<T>(a.shape(), std::move(out), "sigmoid", {a}, std::move(fn));
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& tensors, int axis) {
    if (tensors.empty()) throw ArgumentError("concat: no tensors");
    const Shape& first = tensors.front().shape();
    const std::size_t ax = normalize_axis(axis, first.size(), "concat");
    Shape os = first;
    os[ax] = 0;
    std::vector<std::size_t> extents;
    for (const auto& t : tensors) {
        const Shape& s = t.shape();
        if (s.size() != first.size()) {
            throw DimensionError("concat: rank mismatch " + shape_str(first) + " vs " +
                                 shape_str(s));
        }
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i != ax && s[i] != first[i]) {
                throw DimensionError("concat: axis " + std::to_string(i) + " differs: " +
                                     shape_str(first) + " vs " + shape_str(s));
            }
        }
        os[ax] += s[ax];
        extents.push_back(s[ax]);
    }
    std::size_t inner = 1;
    for (std::size_t i = ax + 1; i < first.size(); ++i) inner *= first[i];
    std::size_t outer = 1;
    for (std::size_t i = 0; i < ax; ++i) outer *= first[i];
    const std::size_t row = os[ax] * inner;
    std::vector<T> out(shape_numel(os));
    std::size_t offset = 0;
    for (std::size_t k = 0; k < tensors.size(); ++k) {
        const std::size_t chunk = extents[k] * inner;
        const T* src = tensors[k].data().data();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(src + o * chunk, chunk, out.data() + o * row + offset);
        }
        offset += chunk;
    }
    BackwardFn<T> fn = [extents, inner, outer, row](const TensorImpl<T>&,
                                                    std::span<const T> gout,
                                                    std::span<std::vector<T>*> grads) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < extents.size(); ++k) {
            const std::size_t chunk = extents[k] * inner;
            if (grads[k]) {
                T* g = grads[k]->data();
                for (std::size_t o = 0; o < outer; ++o) {
                    const T* src = gout.data() + o * row + off;
                    for (std::size_t i = 0; i < chunk; ++i) g[o * chunk + i] += src[i];
                }
            }
            off += chunk;
        }
    };
    return detail::make_result<T>(std::move(os), std::move(out), "concat", tensors, std::move(fn));
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
    require_rank(input.shape(), 4, "global_avg_pool", "input");
    const auto& s = input.shape();
    const std::size_t nc = s[0] * s[1], plane = s[2] * s[3];
    if (plane == 0) throw DimensionError("global_avg_pool: empty spatial extent");
    std::vector<T> out(nc);
    const T* x = input.data().data();
    for (std::size_t i = 0; i < nc; ++i) {
        T acc = 0;
        for (std::size_t j = 0; j < plane; ++j) acc += x[i * plane + j];
        out[i] = acc / static_cast<T>(plane);
    }
    BackwardFn<T> fn = [nc, plane](const TensorImpl<T>&, std::span<const T> gout,
                                   std::span<std::vector<T>*> grads) {
        if (!grads[0]) return;
        const T inv = T(1) / static_cast<T>(plane);
        for (std::size_t i = 0; i < nc; ++i) {
            for (std::size_t j = 0; j < plane; ++j) (*grads[0])[i * plane + j] += gout[i] * inv;
        }
    };
    return detail::make_result<T>({s[0], s[1]}, std::move(out), "global_avg_pool", {input},
                                  std::move(fn));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& input, Shape shape) {
    if (shape_numel(shape) != input.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(input.shape()) + " as " +
                             shape_str(shape));
    }
    std::vector<T> out(input.data().begin(), input.data().end());
    BackwardFn<T> fn = [](const TensorImpl<T>&, std::span<const T> gout,
                          std::span<std::vector<T>*> grads) {
        if (!grads[0]) return;
        for (std::size_t i = 0; i < gout.size(); ++i) (*grads[0])[i] += gout[i];
    };
    return detail::make_result<T>(std::move(shape), std::move(out), "reshape", {input},
                                  std::move(fn));
}

template <typename T>
Tensor<T> permute(const Tensor<T>& input, const std::vector<std::size_t>& perm) {
    const Shape& s = input.shape();
    const std::size_t r = s.size();
    if (perm.size() != r) {
        throw DimensionError("permute: permutation length " + std::to_string(perm.size()) +
                             " does not match rank of " + shape_str(s));
    }
    std::vector<bool> seen(r, false);
    for (auto p : perm) {
        if (p >= r || seen[p]) throw ArgumentError("permute: invalid permutation");
        seen[p] = true;
    }
    std::vector<std::size_t> in_stride(r, 1);
    for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * s[i];
    Shape os(r);
    std::vector<std::size_t> step(r);
    for (std::size_t i = 0; i < r; ++i) {
        os[i] = s[perm[i]];
        step[i] = in_stride[perm[i]];
    }
    // src[k] is the input offset feeding output element k.
    std::vector<std::size_t> src(input.numel());
    std::vector<std::size_t> idx(r, 0);
    std::size_t off = 0;
    for (std::size_t k = 0; k < src.size(); ++k) {
        src[k] = off;
        for (std::size_t i = r; i-- > 0;) {
            if (++idx[i] < os[i]) {
                off += step[i];
                break;
            }
            off -= step[i] * (os[i] - 1);
            idx[i] = 0;
        }
    }
    std::vector<T> out(input.numel());
    const T* x = input.data().data();
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = x[src[k]];
    BackwardFn<T> fn = [src = std::move(src)](const TensorImpl<T>&, std::span<const T> gout,
                                              std::span<std::vector<T>*> grads) {
        if (!grads[0]) return;
        T* g = grads[0]->data();
        for (std::size_t k = 0; k < gout.size(); ++k) g[src[k]] += gout[k];
    };
    return detail::make_result<T>(std::move(os), std::move(out), "permute", {input},
                                  std::move(fn));
}

template <typename T>
Tensor<T> tokens_from_maps(const Tensor<T>& maps, std::size_t width) {
    require_rank(maps.shape(), 4, "tokens_from_maps", "maps");
    const auto& s = maps.shape();
    if (s[1] != width) {
        throw DimensionError("tokens_from_maps: channel axis is " + std::to_string(s[1]) +
                             ", expected " + std::to_string(width));
    }
    if (s[2] != s[3]) {
        throw DimensionError("tokens_from_maps: maps must be square, got " + shape_str(s));
    }
    auto flat = reshape(maps, {s[0], s[1], s[2] * s[3]});
    return permute(flat, {0, 2, 1});
}

template <typename T>
Tensor<T> maps_from_tokens(const Tensor<T>& tokens, std::size_t side) {
    require_rank(tokens.shape(), 3, "maps_from_tokens", "tokens");
    const auto& s = tokens.shape();
    if (s[1] != side * side) {
        throw DimensionError("maps_from_tokens: " + std::to_string(s[1]) +
                             " tokens cannot form a " + std::to_string(side) + "x" +
                             std::to_string(side) + " map");
    }
    auto swapped = permute(tokens, {0, 2, 1});
    return reshape(swapped, {s[0], s[2], side, side});
}

template <typename T>
Tensor<T> sum(const Tensor<T>& input) {
    T acc = 0;
    for (T v : input.data()) acc += v;
    BackwardFn<T> fn = [](const TensorImpl<T>&, std::span<const T> gout,
                          std::span<std::vector<T>*> grads) {
        if (!grads[0]) return;
        for (auto& g : *grads[0]) g += gout[0];
    };
    return detail::make_result<T>({}, {acc}, "sum", {input}, std::move(fn));
}

template <typename T>
Tensor<T> mean(const Tensor<T>& input) {
    if (input.numel() == 0) throw ArgumentError("mean: empty tensor");
    return scale(sum(input), T(1) / static_cast<T>(input.numel()));
}

template <typename T>
Tensor<T> bce_loss(const Tensor<T>& prob, const Tensor<T>& label) {
    if (prob.numel() == 0) throw ArgumentError("bce_loss: empty batch");
    if (prob.numel() != label.numel()) {
        throw DimensionError("bce_loss: " + std::to_string(prob.numel()) + " probabilities vs " +
                             std::to_string(label.numel()) + " labels");
    }
    const T lo = static_cast<T>(kProbabilityClamp);
    const T hi = T(1) - lo;
    const std::size_t n = prob.numel();
    const T* p = prob.data().data();
    const T* y = label.data().data();
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (y[i] != T(0) && y[i] != T(1)) throw ArgumentError("bce_loss: labels must be 0 or 1");
        const T pc = std::clamp(p[i], lo, hi);
        record_branch(pc != p[i]);
        acc += y[i] * std::log(pc) + (T(1) - y[i]) * std::log(T(1) - pc);
    }
    const T loss = -acc / static_cast<T>(n);
    auto pi = prob.impl();
    auto yi = label.impl();
    BackwardFn<T> fn = [pi, yi, n, lo, hi](const TensorImpl<T>&, std::span<const T> gout,
                                           std::span<std::vector<T>*> grads) {
        if (!grads[0]) return;
        const T* p = pi->data.data();
        const T* y = yi->data.data();
        const T k = -gout[0] / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i) {
            if (p[i] < lo || p[i] > hi) continue;
            (*grads[0])[i] += k * (y[i] / p[i] - (T(1) - y[i]) / (T(1) - p[i]));
        }
    };
    return detail::make_result<T>({}, {loss}, "bce_loss", {prob, label}, std::move(fn));
}

#define DSNET_INSTANTIATE_OPS(T)                                                                 \
    template struct BatchNormState<T>;                                                           \
    template struct LayerNormState<T>;                                                           \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, \
                              std::size_t);                                                      \
    template Tensor<T> maxpool2d(const Tensor<T>&, std::size_t, std::size_t, std::size_t);       \
    template Tensor<T> batchnorm2d(const Tensor<T>&, BatchNormState<T>&, bool);                  \
    template Tensor<T> layernorm(const Tensor<T>&, const LayerNormState<T>&);                    \
    template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);             \
    template Tensor<T> grouped_linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);     \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&, bool);                         \
    template Tensor<T> softmax(const Tensor<T>&, int);                                           \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                  \
    template Tensor<T> subtract(const Tensor<T>&, const Tensor<T>&);                             \
    template Tensor<T> scale(const Tensor<T>&, T);                                               \
    template Tensor<T> relu(const Tensor<T>&);                                                   \
    template Tensor<T> gelu(const Tensor<T>&);                                                   \
    template Tensor<T> sigmoid(const Tensor<T>&);                                                \
    template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                               \
    template Tensor<T> global_avg_pool(const Tensor<T>&);                                        \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                         \
    template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);               \
    template Tensor<T> tokens_from_maps(const Tensor<T>&, std::size_t);                          \
    template Tensor<T> maps_from_tokens(const Tensor<T>&, std::size_t);                          \
    template Tensor<T> sum(const Tensor<T>&);                                                    \
    template Tensor<T> mean(const Tensor<T>&);                                                   \
    template Tensor<T> bce_loss(const Tensor<T>&, const Tensor<T>&);

DSNET_INSTANTIATE_OPS(float)
DSNET_INSTANTIATE_OPS(double)

} // namespace dsnet
