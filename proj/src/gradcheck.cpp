#include "dsnet/gradcheck.hpp"

#include "dsnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>

namespace dsnet {

namespace {

template <typename T>
T scalar_value(const Tensor<T>& y) {
    if (y.numel() != 1) {
        throw ArgumentError("gradcheck: function must return a scalar, got " +
                            shape_str(y.shape()));
    }
    return y.item();
}

// Relative error of one central difference, or nullopt when the probe crossed a kink.
template <typename T>
std::optional<double> probe(const std::function<Tensor<T>()>& eval, Tensor<T>& x, std::size_t i,
                            double step, double analytic, std::uint64_t center) {
    auto values = x.data();
    const T saved = values[i];
    double plus = 0, minus = 0;
    std::uint64_t plus_digest = 0, minus_digest = 0;
    {
        NoGradGuard guard;
        values[i] = static_cast<T>(static_cast<double>(saved) + step);
        {
            BranchRecorder rec;
            plus = static_cast<double>(scalar_value(eval()));
            plus_digest = rec.digest();
        }
        values[i] = static_cast<T>(static_cast<double>(saved) - step);
        {
            BranchRecorder rec;
            minus = static_cast<double>(scalar_value(eval()));
            minus_digest = rec.digest();
        }
    }
    values[i] = saved;
    if (plus_digest != center || minus_digest != center) return std::nullopt;
    const double numeric = (plus - minus) / (2.0 * step);
    const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
    return std::abs(analytic - numeric) / denom;
}

template <typename T>
Tensor<T> recorded(const std::function<Tensor<T>()>& eval, std::uint64_t& digest) {
    BranchRecorder rec;
    auto y = eval();
    digest = rec.digest();
    return y;
}

} // namespace

template <typename T>
GradcheckResult finite_diff_check(const std::function<Tensor<T>(const Tensor<T>&)>& f,
                                  Tensor<T> x, double step, std::size_t max_coords,
                                  std::uint64_t seed) {
    if (!(step > 0)) throw ArgumentError("gradcheck: step must be positive");
    GradcheckResult result;
    x.zero_grad();
    const std::function<Tensor<T>()> eval = [&] { return f(x); };
    std::uint64_t center = 0;
    const Tensor<T> y = recorded(eval, center);
    scalar_value(y);
    if (!x.requires_grad()) return result;
    backward(y);
    if (!x.has_grad()) {
        // Reachable but disconnected: the analytic gradient is identically zero.
        x.impl()->grad.assign(x.numel(), T(0));
    }
    result.has_gradient = true;
    const std::vector<T> analytic(x.grad().begin(), x.grad().end());

    std::vector<std::size_t> coords(x.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > max_coords) {
        std::mt19937_64 rng(seed);
        std::shuffle(coords.begin(), coords.end(), rng);
    }
    for (auto i : coords) {
        if (result.coords_checked == max_coords) break;
        const auto err = probe(eval, x, i, step, static_cast<double>(analytic[i]), center);
        if (!err) {
            ++result.kinks_skipped;
            continue;
        }
        result.max_rel_error = std::max(result.max_rel_error, *err);
        ++result.coords_checked;
    }
    return result;
}

template <typename T>
GradcheckResult finite_diff_check_params(const std::function<Tensor<T>()>& loss,
                                         std::vector<Tensor<T>> params, double step,
                                         std::size_t samples, std::uint64_t seed) {
    if (!(step > 0)) throw ArgumentError("gradcheck: step must be positive");
    if (params.empty()) throw ArgumentError("gradcheck: no parameters to probe");
    for (auto& p : params) p.zero_grad();
    std::uint64_t center = 0;
    const Tensor<T> y = recorded(loss, center);
    scalar_value(y);
    backward(y);
    std::vector<std::vector<T>> analytic;
    for (auto& p : params) {
        if (p.has_grad()) {
            analytic.emplace_back(p.grad().begin(), p.grad().end());
        } else {
            analytic.emplace_back(p.numel(), T(0));
        }
    }
    GradcheckResult result;
    result.has_gradient = true;
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick_tensor(0, params.size() - 1);
    for (std::size_t attempt = 0; result.coords_checked < samples && attempt < 10 * samples;
         ++attempt) {
        const std::size_t t = pick_tensor(rng);
        std::uniform_int_distribution<std::size_t> pick_elem(0, params[t].numel() - 1);
        const std::size_t i = pick_elem(rng);
        const auto err =
            probe(loss, params[t], i, step, static_cast<double>(analytic[t][i]), center);
        if (!err) {
            ++result.kinks_skipped;
            continue;
        }
        result.max_rel_error = std::max(result.max_rel_error, *err);
        ++result.coords_checked;
    }
    return result;
}

template GradcheckResult finite_diff_check(const std::function<Tensor<float>(const Tensor<float>&)>&,
                                           Tensor<float>, double, std::size_t, std::uint64_t);
template GradcheckResult finite_diff_check(
    const std::function<Tensor<double>(const Tensor<double>&)>&, Tensor<double>, double,
    std::size_t, std::uint64_t);
template GradcheckResult finite_diff_check_params(const std::function<Tensor<float>()>&,
                                                  std::vector<Tensor<float>>, double, std::size_t,
                                                  std::uint64_t);
template GradcheckResult finite_diff_check_params(const std::function<Tensor<double>()>&,
                                                  std::vector<Tensor<double>>, double,
                                                  std::size_t, std::uint64_t);

} // namespace dsnet
