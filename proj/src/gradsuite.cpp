#include "dsnet/gradsuite.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <random>

#include "dsnet/gradcheck.hpp"
#include "dsnet/model.hpp"
#include "dsnet/ops.hpp"
#include "dsnet/srm.hpp"

namespace dsnet {

namespace {

using D = Tensor<double>;

class Suite {
public:
    explicit Suite(const GradSuiteOptions& o) : opt_(o), rng_(o.seed) {}

    D leaf(const Shape& shape, double lo = -1, double hi = 1) {
        std::uniform_real_distribution<double> u(lo, hi);
        std::vector<double> v(shape_numel(shape));
        for (auto& x : v) x = u(rng_);
        D t(shape, std::move(v));
        t.set_requires_grad(true);
        return t;
    }

    // Values bounded away from zero so ReLU and max-pool kinks sit far from the probe.
    D leaf_off_zero(const Shape& shape) {
        auto t = leaf(shape);
        for (auto& v : t.data()) v += v >= 0 ? 0.1 : -0.1;
        return t;
    }

    // sum(y * R) for a fixed random R matching y.
    D weighted(const D& y) {
        auto key = shape_str(y.shape());
        auto it = probes_.find(key);
        if (it == probes_.end()) {
            std::uniform_real_distribution<double> u(-1, 1);
            std::vector<double> r(y.numel());
            for (auto& x : r) x = u(rng_);
            it = probes_.emplace(key, D({y.numel(), 1}, std::move(r))).first;
        }
        return sum(linear(reshape(y, {1, y.numel()}), it->second, D()));
    }

    void check(const std::string& family, const std::vector<D>& leaves,
               const std::function<D()>& loss, std::size_t samples = 0) {
        const auto r = finite_diff_check_params<double>(loss, leaves, opt_.step,
                                                        samples ? samples : opt_.samples,
                                                        opt_.seed + results_.size());
        results_.push_back({family, r.max_rel_error, r.coords_checked, r.kinks_skipped});
    }

    Conv<double> conv(std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride,
                      std::size_t pad, bool bias) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(cin * k * k));
        Conv<double> c;
        c.weight = leaf({cout, cin, k, k}, -bound, bound);
        if (bias) c.bias = leaf({cout}, -0.1, 0.1);
        c.stride = stride;
        c.padding = pad;
        return c;
    }

    BatchNormState<double> bn(std::size_t c) {
        auto s = BatchNormState<double>::create(c);
        s.gamma = leaf({c}, 0.5, 1.5);
        s.beta = leaf({c}, -0.2, 0.2);
        return s;
    }

    std::vector<FamilyGradcheck> run();

private:
    GradSuiteOptions opt_;
    std::mt19937_64 rng_;
    std::map<std::string, D> probes_;
    std::vector<FamilyGradcheck> results_;
};

std::vector<D> conv_leaves(const Conv<double>& c) {
    std::vector<D> out{c.weight};
    if (c.bias.defined()) out.push_back(c.bias);
    return out;
}

template <typename... Vs>
std::vector<D> join(Vs&&... parts) {
    std::vector<D> out;
    (out.insert(out.end(), parts.begin(), parts.end()), ...);
    return out;
}

std::vector<FamilyGradcheck> Suite::run() {
    {
        auto x = leaf({2, 3, 6, 6});
        auto c = conv(3, 4, 3, 2, 1, true);
        check("conv2d", join(std::vector<D>{x}, conv_leaves(c)), [&] { return weighted(c(x)); });
    }
    {
        auto x = leaf({2, 3, 5});
        auto w = leaf({5, 4});
        auto b = leaf({4});
        check("linear", {x, w, b}, [&] { return weighted(linear(x, w, b)); });
    }
    {
        auto x = leaf({2, 3, 4, 5});
        auto w = leaf({3, 5, 5});
        auto b = leaf({3, 5});
        check("grouped_linear", {x, w, b}, [&] { return weighted(grouped_linear(x, w, b)); });
    }
    {
        auto a = leaf({2, 3, 4, 5});
        auto b = leaf({2, 3, 6, 5});
        check("matmul", {a, b}, [&] { return weighted(matmul(a, b, true)); });
    }
    {
        auto x = leaf({3, 2, 4, 4});
        auto s = bn(2);
        check("batchnorm2d", {x, s.gamma, s.beta}, [&] { return weighted(batchnorm2d(x, s, true)); });
    }
    {
        auto x = leaf({2, 3, 8});
        auto s = LayerNormState<double>::create(8);
        s.gamma = leaf({8}, 0.5, 1.5);
        s.beta = leaf({8});
        check("layernorm", {x, s.gamma, s.beta}, [&] { return weighted(layernorm(x, s)); });
    }
    {
        auto x = leaf({2, 2, 6, 6});
        check("maxpool2d", {x}, [&] { return weighted(maxpool2d(x)); });
    }
    {
        auto x = leaf_off_zero({3, 7});
        check("relu", {x}, [&] { return weighted(relu(x)); });
    }
    {
        auto x = leaf({3, 7}, -3, 3);
        check("gelu", {x}, [&] { return weighted(gelu(x)); });
    }
    {
        auto x = leaf({3, 6}, -3, 3);
        check("softmax", {x}, [&] { return weighted(softmax(x, -1)); });
    }
    {
        auto x = leaf({6}, -3, 3);
        const D y({6}, std::vector<double>{1, 0, 0, 1, 1, 0});
        check("sigmoid_bce", {x}, [&] { return bce_loss(sigmoid(x), y); });
    }
    {
        auto a = leaf({2, 3, 4, 4});
        auto b = leaf({2, 2, 4, 4});
        check("pool_concat_reshape", {a, b}, [&] {
            auto c = concat<double>({a, b}, 1);
            return weighted(add(global_avg_pool(c), reshape(permute(global_avg_pool(c), {0, 1}), {2, 5})));
        });
    }
    {
        auto x = leaf({1, 256, 2, 2});
        check("tokens", {x}, [&] { return weighted(maps_from_tokens(scale(tokens_from_maps(x, 256), 2.0), 2)); });
    }
    {
        const auto bank = build_filter_bank();
        auto x = leaf({1, 3, 6, 6}, 0, 1);
        check("srm_residuals", {x}, [&] { return weighted(extract_residuals(x, bank)); });
    }
    {
        auto x = leaf({2, 4, 8, 8});
        ModuleA<double> m{conv(4, 6, 3, 1, 1, false), bn(6), conv(6, 6, 3, 1, 1, false), bn(6)};
        check("module_a", {x, m.conv1.weight, m.bn1.gamma, m.bn1.beta, m.conv2.weight, m.bn2.gamma, m.bn2.beta},
              [&] { return weighted(module_a_forward(x, m, true)); });
    }
    {
        auto x = leaf({2, 4, 8, 8});
        ModuleB1<double> m{conv(4, 6, 3, 1, 1, false), bn(6), conv(4, 6, 3, 2, 1, true)};
        check("module_b1", join(std::vector<D>{x, m.conv.weight, m.bn.gamma, m.bn.beta}, conv_leaves(m.down)),
              [&] { return weighted(module_b1_forward(x, m, true)); });
    }
    {
        auto x = leaf({2, 4, 8, 8});
        ModuleB2<double> m{conv(4, 6, 3, 1, 1, false), bn(6)};
        check("module_b2", {x, m.conv.weight, m.bn.gamma, m.bn.beta},
              [&] { return weighted(module_b2_forward(x, m, true)); });
    }
    {
        auto x = leaf({2, 3, 6, 6}, 0, 1);
        ContentHead<double> h{conv(3, 3, 1, 1, 0, true), conv(6, 6, 3, 1, 1, true), conv(6, 6, 3, 1, 1, true)};
        check("content_head", join(std::vector<D>{x}, conv_leaves(h.mix), conv_leaves(h.smooth), conv_leaves(h.refine)),
              [&] { return weighted(content_head_forward(x, h)); });
    }
    {
        const std::size_t heads = 4, dk = 4;
        auto chi = leaf({2, 5, heads * dk});
        auto phi = leaf({2, 5, heads * dk});
        const double bound = 1.0 / std::sqrt(static_cast<double>(dk));
        CmaParams<double> p{leaf({heads, dk, dk}, -bound, bound), leaf({heads, dk}, -0.1, 0.1),
                            leaf({heads, dk, dk}, -bound, bound), leaf({heads, dk}, -0.1, 0.1),
                            leaf({heads, dk, dk}, -bound, bound), leaf({heads, dk}, -0.1, 0.1),
                            leaf({heads, dk, dk}, -bound, bound), leaf({heads, dk}, -0.1, 0.1)};
        check("cma",
              {chi, phi, p.q_chi_weight, p.q_chi_bias, p.k_phi_weight, p.k_phi_bias, p.q_phi_weight,
               p.q_phi_bias, p.k_chi_weight, p.k_chi_bias},
              [&] {
                  auto [a, b] = cma_forward(chi, phi, p, heads);
                  return add(weighted(a), weighted(scale(b, 0.5)));
              });
    }
    {
        ModelConfig cfg;
        cfg.input_side = opt_.input_side;
        cfg.seed = opt_.seed;
        DualStreamNet<double> net(cfg);
        auto block = net.encoders().at(0);
        auto chi = leaf({1, 4, cfg.embed_width});
        auto phi = leaf({1, 4, cfg.embed_width});
        std::vector<D> leaves{chi, phi};
        for (const auto& p : net.parameters()) {
            if (p.name.rfind("encoder.0.", 0) == 0) leaves.push_back(p.tensor);
        }
        check("encoder_block", leaves, [&] {
            auto [a, b] = encoder_block_forward(chi, phi, block, cfg.heads);
            return add(weighted(a), weighted(scale(b, 0.5)));
        });

        const std::size_t s = cfg.input_side;
        std::uniform_real_distribution<double> u(0, 1);
        std::vector<double> pixels(2 * 3 * s * s);
        for (auto& v : pixels) v = u(rng_);
        const D images({2, 3, s, s}, std::move(pixels));
        const D labels({2}, std::vector<double>{1, 0});
        std::vector<D> params;
        for (const auto& p : net.parameters()) params.push_back(p.tensor);
        check("full_model", params,
              [&] { return bce_loss(sigmoid(net.forward(images, true)), labels); }, opt_.model_samples);
    }
    return results_;
}

} // namespace

std::vector<FamilyGradcheck> run_gradcheck_suite(const GradSuiteOptions& options) {
    Suite suite(options);
    return suite.run();
}

} // namespace dsnet
