#include <doctest.h>

#include <cmath>
#include <random>

#include "dsnet/model.hpp"
#include "support.hpp"

using namespace dsnet;
using testing::random_tensor;

namespace {

ModelConfig desk_config(std::size_t side = 32, std::uint64_t seed = 1) {
    ModelConfig c;
    c.input_side = side;
    c.seed = seed;
    return c;
}

Conv<double> random_conv(std::mt19937_64& rng, std::size_t cin, std::size_t cout, std::size_t k,
                         std::size_t stride, std::size_t pad, bool bias) {
    Conv<double> c;
    c.weight = random_tensor<double>({cout, cin, k, k}, rng, -0.3, 0.3);
    if (bias) c.bias = random_tensor<double>({cout}, rng, -0.1, 0.1);
    c.stride = stride;
    c.padding = pad;
    return c;
}

CmaParams<double> random_cma(std::mt19937_64& rng, std::size_t h, std::size_t dk) {
    CmaParams<double> p;
    for (auto* w : {&p.q_chi_weight, &p.k_phi_weight, &p.q_phi_weight, &p.k_chi_weight}) {
        *w = random_tensor<double>({h, dk, dk}, rng, -0.5, 0.5);
    }
    for (auto* b : {&p.q_chi_bias, &p.k_phi_bias, &p.q_phi_bias, &p.k_chi_bias}) {
        *b = random_tensor<double>({h, dk}, rng, -0.1, 0.1);
    }
    return p;
}

Tensor<double> permute_tokens(const Tensor<double>& x, const std::vector<std::size_t>& perm) {
    const auto& s = x.shape();
    Tensor<double> out(s);
    for (std::size_t n = 0; n < s[0]; ++n)
        for (std::size_t t = 0; t < s[1]; ++t)
            for (std::size_t d = 0; d < s[2]; ++d)
                out.data()[(n * s[1] + t) * s[2] + d] = x.data()[(n * s[1] + perm[t]) * s[2] + d];
    return out;
}

} // namespace

TEST_CASE("config validation") {
    auto c = desk_config();
    CHECK_NOTHROW(c.validate());
    CHECK(c.head_width() == 32);

    auto bad = c;
    bad.input_side = 48;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.heads = 7;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.enable_content_stream = false;
    CHECK_THROWS_AS(bad.validate(), ConfigError);  // attention needs both streams
    bad.enable_cma = false;
    CHECK_NOTHROW(bad.validate());
    bad.enable_residual_stream = false;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("module a shapes") {
    std::mt19937_64 rng(31);
    ModuleA<double> m{random_conv(rng, 12, 64, 3, 1, 1, false), BatchNormState<double>::create(64),
                      random_conv(rng, 64, 64, 3, 1, 1, false), BatchNormState<double>::create(64)};
    auto y = module_a_forward(random_tensor<double>({2, 12, 32, 32}, rng), m, true);
    CHECK(y.shape() == Shape{2, 64, 16, 16});
    CHECK_THROWS_AS(module_a_forward(Tensor<double>({2, 12, 15, 15}), m, true), DimensionError);
}

TEST_CASE("module a on zeros is spatially constant") {
    std::mt19937_64 rng(32);
    ModuleA<double> m{random_conv(rng, 3, 4, 3, 1, 1, false), BatchNormState<double>::create(4),
                      random_conv(rng, 4, 4, 3, 1, 1, false), BatchNormState<double>::create(4)};
    for (std::size_t c = 0; c < 4; ++c) {
        m.bn2.beta.data()[c] = 0.1 * static_cast<double>(c) - 0.15;
    }
    auto y = module_a_forward(Tensor<double>({2, 3, 8, 8}), m, true);
    for (std::size_t c = 0; c < 4; ++c) {
        const double expect = std::max(0.0, 0.1 * static_cast<double>(c) - 0.15);
        for (std::size_t i = 0; i < 16; ++i) CHECK(y.data()[c * 16 + i] == doctest::Approx(expect));
    }
}

TEST_CASE("module b1 reduces to b2 without the strided branch") {
    std::mt19937_64 rng(33);
    auto conv = random_conv(rng, 8, 16, 3, 1, 1, false);
    Conv<double> down;
    down.weight = Tensor<double>({16, 8, 3, 3});
    down.bias = Tensor<double>({16});
    down.stride = 2;
    ModuleB1<double> b1{conv, BatchNormState<double>::create(16), down};
    ModuleB2<double> b2{conv, BatchNormState<double>::create(16)};
    auto x = random_tensor<double>({2, 8, 8, 8}, rng);
    auto y1 = module_b1_forward(x, b1, true);
    auto y2 = module_b2_forward(x, b2, true);
    CHECK(y1.shape() == Shape{2, 16, 4, 4});
    CHECK(testing::max_abs_diff(y1, y2) < 1e-14);
}

TEST_CASE("module b2 constant input is constant in the interior") {
    std::mt19937_64 rng(34);
    ModuleB2<double> b2{random_conv(rng, 2, 3, 3, 1, 1, false), BatchNormState<double>::create(3)};
    auto y = module_b2_forward(Tensor<double>({1, 2, 16, 16}, 0.4), b2, false);
    REQUIRE(y.shape() == Shape{1, 3, 8, 8});
    for (std::size_t c = 0; c < 3; ++c) {
        const double ref = y.data()[(c * 8 + 3) * 8 + 3];
        for (std::size_t yy = 2; yy < 7; ++yy)
            for (std::size_t xx = 2; xx < 7; ++xx) CHECK(y.data()[(c * 8 + yy) * 8 + xx] == doctest::Approx(ref));
    }
}

TEST_CASE("content head") {
    std::mt19937_64 rng(35);
    ContentHead<double> head{random_conv(rng, 3, 3, 1, 1, 0, true), random_conv(rng, 6, 6, 3, 1, 1, true),
                             random_conv(rng, 6, 6, 3, 1, 1, true)};
    auto rgb = random_tensor<double>({2, 3, 8, 8}, rng, 0, 1);
    auto out = content_head_forward(rgb, head);
    REQUIRE(out.shape() == Shape{2, 12, 8, 8});

    // Recompose the first six channels from scratch: l = [mix(rgb), rgb], out = l - smooth(l).
    const std::vector<double> rgbv(rgb.data().begin(), rgb.data().end());
    std::size_t oh = 0, ow = 0;
    const std::vector<double> mw(head.mix.weight.data().begin(), head.mix.weight.data().end());
    const std::vector<double> mb(head.mix.bias.data().begin(), head.mix.bias.data().end());
    const auto mixed = testing::naive_conv2d(rgbv, 2, 3, 8, 8, mw, 3, 1, &mb, 1, 0, oh, ow);
    std::vector<double> ell(2 * 6 * 64);
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t i = 0; i < 3 * 64; ++i) {
            ell[n * 384 + i] = mixed[n * 192 + i];
            ell[n * 384 + 192 + i] = rgbv[n * 192 + i];
        }
    const std::vector<double> sw(head.smooth.weight.data().begin(), head.smooth.weight.data().end());
    const std::vector<double> sb(head.smooth.bias.data().begin(), head.smooth.bias.data().end());
    const auto smoothed = testing::naive_conv2d(ell, 2, 6, 8, 8, sw, 6, 3, &sb, 1, 1, oh, ow);
    double worst = 0;
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t i = 0; i < 384; ++i) {
            worst = std::max(worst, std::abs(out.data()[n * 768 + i] - (ell[n * 384 + i] - smoothed[n * 384 + i])));
        }
    CHECK(worst < 1e-10);

    // Identity smoothing taps make the difference map vanish.
    head.smooth.weight = Tensor<double>({6, 6, 3, 3});
    head.smooth.bias = Tensor<double>({6});
    for (std::size_t c = 0; c < 6; ++c) head.smooth.weight.data()[(c * 6 + c) * 9 + 4] = 1.0;
    auto zeroed = content_head_forward(rgb, head);
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t i = 0; i < 384; ++i) CHECK(zeroed.data()[n * 768 + i] == 0.0);
}

TEST_CASE("cma with constant tokens attends uniformly") {
    std::mt19937_64 rng(36);
    const std::size_t t = 5, d = 16, h = 4;
    auto p = random_cma(rng, h, d / h);
    auto chi_tok = random_tensor<double>({1, 1, d}, rng);
    auto phi_tok = random_tensor<double>({1, 1, d}, rng);
    Tensor<double> chi({1, t, d}), phi({1, t, d});
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            chi.data()[i * d + j] = chi_tok.data()[j];
            phi.data()[i * d + j] = phi_tok.data()[j];
        }
    std::vector<Tensor<double>> attn;
    auto [chi_out, phi_out] = cma_forward(chi, phi, p, h, &attn);
    REQUIRE(attn.size() == 2);
    for (const auto& a : attn)
        for (double v : a.data()) CHECK(v == doctest::Approx(1.0 / t).epsilon(1e-12));
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            CHECK(chi_out.data()[i * d + j] == doctest::Approx(chi_tok.data()[j] + phi_tok.data()[j]));
            CHECK(phi_out.data()[i * d + j] == doctest::Approx(phi_tok.data()[j] + chi_tok.data()[j]));
        }
}

TEST_CASE("cma rows sum to one and commute with token permutations") {
    std::mt19937_64 rng(37);
    const std::size_t t = 4, d = 256, h = 8;
    auto p = random_cma(rng, h, d / h);
    auto chi = random_tensor<double>({2, t, d}, rng);
    auto phi = random_tensor<double>({2, t, d}, rng);
    std::vector<Tensor<double>> attn;
    auto [a, b] = cma_forward(chi, phi, p, h, &attn);
    for (const auto& m : attn) {
        REQUIRE(m.shape() == Shape{2, h, t, t});
        for (std::size_t r = 0; r < 2 * h * t; ++r) {
            double total = 0;
            for (std::size_t c = 0; c < t; ++c) total += m.data()[r * t + c];
            CHECK(std::abs(total - 1.0) < 1e-12);
        }
    }
    const std::vector<std::size_t> perm{2, 0, 3, 1};
    auto [pa, pb] = cma_forward(permute_tokens(chi, perm), permute_tokens(phi, perm), p, h);
    CHECK(testing::max_abs_diff(pa, permute_tokens(a, perm)) < 1e-12);
    CHECK(testing::max_abs_diff(pb, permute_tokens(b, perm)) < 1e-12);
    CHECK_THROWS_AS(cma_forward(chi, random_tensor<double>({2, t + 1, d}, rng), p, h), DimensionError);
}

TEST_CASE("zeroed encoder block is the identity") {
    DualStreamNet<double> net(desk_config());
    auto block = net.encoders().at(0);
    zero_encoder_increments(block);
    std::mt19937_64 rng(38);
    auto chi = random_tensor<double>({2, 16, 256}, rng);
    auto phi = random_tensor<double>({2, 16, 256}, rng);
    auto [c, p] = encoder_block_forward(chi, phi, block, 8);
    CHECK(testing::bit_equal(c, chi));
    CHECK(testing::bit_equal(p, phi));
}

TEST_CASE("two distinct encoder blocks differ from one block applied twice") {
    DualStreamNet<double> net(desk_config());
    const auto& e = net.encoders();
    REQUIRE(e.size() == 2);
    std::mt19937_64 rng(39);
    auto chi = random_tensor<double>({1, 16, 256}, rng);
    auto phi = random_tensor<double>({1, 16, 256}, rng);
    auto [c1, p1] = encoder_block_forward(chi, phi, e[0], 8);
    auto [c2, p2] = encoder_block_forward(c1, p1, e[1], 8);
    auto [s2, q2] = encoder_block_forward(c1, p1, e[0], 8);
    CHECK(c2.shape() == Shape{1, 16, 256});
    CHECK(testing::max_abs_diff(c2, s2) > 1e-6);
}

TEST_CASE("forward shapes at desk scale") {
    for (std::size_t s : {32u, 64u}) {
        DualStreamNet<double> net(desk_config(s));
        std::mt19937_64 rng(40);
        ForwardTrace<double> trace;
        auto logits = net.forward(random_tensor<double>({2, 3, s, s}, rng, 0, 1), true, &trace);
        CHECK(logits.shape() == Shape{2});
        CHECK(trace.chi_maps.shape() == Shape{2, 256, s / 8, s / 8});
        CHECK(trace.phi_maps.shape() == Shape{2, 256, s / 8, s / 8});
        CHECK(trace.chi_tokens.shape() == Shape{2, s * s / 64, 256});
        CHECK(trace.chi_final.shape() == Shape{2, 256, s / 32, s / 32});
        CHECK(trace.classifier_input.shape() == Shape{2, 512});
        CHECK(trace.attention.size() == 4);
    }
    DualStreamNet<double> net(desk_config());
    CHECK_THROWS_AS(net.forward(Tensor<double>({1, 3, 64, 64}), false), ConfigError);
}

TEST_CASE("initialization is seeded") {
    DualStreamNet<double> a(desk_config(32, 5)), b(desk_config(32, 5)), c(desk_config(32, 6));
    bool same = true, differs = false;
    for (std::size_t i = 0; i < a.parameters().size(); ++i) {
        same = same && testing::bit_equal(a.parameters()[i].tensor, b.parameters()[i].tensor);
        differs = differs || !testing::bit_equal(a.parameters()[i].tensor, c.parameters()[i].tensor);
    }
    CHECK(same);
    CHECK(differs);

    std::mt19937_64 rng(41);
    auto x = random_tensor<double>({2, 3, 32, 32}, rng, 0, 1);
    CHECK(testing::bit_equal(a.forward(x, false), b.forward(x, false)));
}

TEST_CASE("parameter census") {
    DualStreamNet<float> net(desk_config());
    CHECK(net.parameter_count() == testing::closed_form_parameter_count());
}

TEST_CASE("ablation configurations build and run") {
    struct Variant {
        bool residual, content, cma;
        std::size_t width;
    };
    for (auto v : {Variant{true, false, false, 256}, Variant{false, true, false, 256},
                   Variant{true, true, false, 512}}) {
        auto cfg = desk_config();
        cfg.enable_residual_stream = v.residual;
        cfg.enable_content_stream = v.content;
        cfg.enable_cma = v.cma;
        DualStreamNet<float> net(cfg);
        ForwardTrace<float> trace;
        std::mt19937_64 rng(42);
        net.forward(random_tensor<float>({2, 3, 32, 32}, rng, 0, 1), true, &trace);
        CHECK(trace.classifier_input.shape() == Shape{2, v.width});
        CHECK(net.encoders().empty());
    }
}
