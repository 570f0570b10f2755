// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <sstream>
#include <string>

#include "dsnet/checkpoint.hpp"
#include "dsnet/gradsuite.hpp"
#include "dsnet/metrics.hpp"
#include "dsnet/training.hpp"
#include "support.hpp"

using namespace dsnet;
using testing::bit_equal;
using testing::max_abs_diff;
using testing::random_tensor;

namespace {

// Pinned tolerances and budgets.
constexpr double kOracleTol = 1e-12;
constexpr std::size_t kOracleInstances = 24;
constexpr double kOracleBudget = 60;
constexpr double kGradTol = 1e-4;
constexpr double kGradStep = 1e-5;
constexpr std::size_t kModelGradSamples = 24;
constexpr std::size_t kMinModelGradSamples = 20;
constexpr double kGradBudget = 300;
constexpr double kRowSumTol = 1e-6;
constexpr double kPermutationTol = 1e-5;
constexpr std::size_t kSmokeEpochCap = 200;
constexpr double kSmokeBudget = 600;
constexpr std::size_t kLossWindow = 10;
constexpr std::size_t kAblationEpochs = 5;
constexpr double kBceTol = 1e-6;
constexpr double kTransformTol = 1e-6;

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail += (detail.empty() ? "" : "; ") + std::string("FAILED ") + what;
        }
    }
    void note(const std::string& text) { detail += (detail.empty() ? "" : "; ") + text; }
};

std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2e", v);
    return buf;
}

std::vector<double> values(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

double max_diff(const std::vector<double>& a, std::span<const double> b) {
    if (a.size() != b.size()) return INFINITY;
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

ModelConfig desk(std::size_t side = 32, std::uint64_t seed = 1) {
    ModelConfig c;
    c.input_side = side;
    c.seed = seed;
    return c;
}

Outcome oracle_equivalence() {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(101);
    auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };

    double conv_worst = 0;
    for (std::size_t i = 0; i < kOracleInstances; ++i) {
        const std::size_t n = pick(1, 2), cin = pick(1, 5), cout = pick(1, 5), k = 2 * pick(0, 2) + 1;
        const std::size_t stride = pick(1, 2), pad = pick(0, 2), h = pick(k, 11), w = pick(k, 11);
        auto x = random_tensor<double>({n, cin, h, w}, rng);
        auto wt = random_tensor<double>({cout, cin, k, k}, rng);
        const bool with_bias = pick(0, 1) == 1;
        auto b = with_bias ? random_tensor<double>({cout}, rng) : Tensor<double>();
        const auto bv = with_bias ? values(b) : std::vector<double>{};
        std::size_t oh = 0, ow = 0;
        const auto ref = testing::naive_conv2d(values(x), n, cin, h, w, values(wt), cout, k,
                                               with_bias ? &bv : nullptr, stride, pad, oh, ow);
        auto y = conv2d(x, wt, b, stride, pad);
        const bool shape_ok = y.shape() == Shape{n, cout, oh, ow};
        conv_worst = std::max(conv_worst, shape_ok ? max_diff(ref, y.data()) : INFINITY);
    }
    o.require(conv_worst < kOracleTol, "conv2d");
    o.note("conv2d " + std::to_string(kOracleInstances) + " instances max " + sci(conv_worst));

    double lin_worst = 0;
    for (std::size_t i = 0; i < kOracleInstances; ++i) {
        const std::size_t rows = pick(1, 9), din = pick(1, 40), dout = pick(1, 40);
        auto x = random_tensor<double>({rows, din}, rng);
        auto w = random_tensor<double>({din, dout}, rng);
        auto b = random_tensor<double>({dout}, rng);
        const auto ref = testing::naive_linear(values(x), rows, din, values(w), dout, values(b));
        lin_worst = std::max(lin_worst, max_diff(ref, linear(x, w, b).data()));
    }
    o.require(lin_worst < kOracleTol, "linear");
    o.note("linear max " + sci(lin_worst));

    const auto bank = build_filter_bank();
    double res_worst = 0;
    for (std::size_t i = 0; i < kOracleInstances; ++i) {
        const std::size_t n = pick(1, 2), s = pick(5, 20);
        auto img = random_tensor<double>({n, 3, s, s}, rng, 0, 1);
        const auto ref = testing::naive_residuals(values(img), n, s);
        res_worst = std::max(res_worst, max_diff(ref, extract_residuals(img, bank).data()));
    }
    o.require(res_worst < kOracleTol, "extract_residuals");
    o.note("extract_residuals max " + sci(res_worst));

    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    o.require(secs < kOracleBudget, "runtime budget");
    return o;
}

Outcome gradient_suite() {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    GradSuiteOptions opt;
    opt.input_side = 32;
    opt.step = kGradStep;
    opt.model_samples = kModelGradSamples;
    const auto results = run_gradcheck_suite(opt);
    double worst = 0;
    std::string worst_family;
    for (const auto& r : results) {
        o.require(r.max_rel_error < kGradTol && r.coords_checked > 0, r.family + " " + sci(r.max_rel_error));
        if (r.max_rel_error >= worst) {
            worst = r.max_rel_error;
            worst_family = r.family;
        }
        if (r.family == "full_model") {
            o.require(r.coords_checked >= kMinModelGradSamples, "full model sample count");
            o.note("full model " + std::to_string(r.coords_checked) + " params max " + sci(r.max_rel_error) + " (" +
                   std::to_string(r.kinks_skipped) + " kink-straddling probes redrawn)");
        }
    }
    o.require(results.size() >= 21, "family count");
    o.note(std::to_string(results.size()) + " rows, worst " + worst_family + " " + sci(worst));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    o.require(secs < kGradBudget, "runtime budget");
    return o;
}

Outcome shape_contract() {
    Outcome o;
    for (std::size_t s : {32u, 64u}) {
        DualStreamNet<double> net(desk(s));
        std::mt19937_64 rng(s);
        ForwardTrace<double> trace;
        auto logits = net.forward(random_tensor<double>({2, 3, s, s}, rng, 0, 1), false, &trace);
        const std::string tag = "s=" + std::to_string(s) + " ";
        o.require(trace.chi_maps.shape() == Shape{2, 256, s / 8, s / 8}, tag + "residual maps");
        o.require(trace.phi_maps.shape() == Shape{2, 256, s / 8, s / 8}, tag + "content maps");
        o.require(trace.chi_tokens.shape() == Shape{2, s * s / 64, 256}, tag + "residual tokens");
        o.require(trace.phi_tokens.shape() == Shape{2, s * s / 64, 256}, tag + "content tokens");
        o.require(trace.classifier_input.shape() == Shape{2, 512}, tag + "classifier input");
        o.require(logits.shape() == Shape{2}, tag + "logits");
        o.note(tag + "maps " + shape_str(trace.chi_maps.shape()) + " tokens " + shape_str(trace.chi_tokens.shape()) +
               " head " + shape_str(trace.classifier_input.shape()));
    }
    return o;
}

template <typename T>
Tensor<T> permute_tokens(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
    const auto& s = x.shape();
    Tensor<T> out(s);
    for (std::size_t n = 0; n < s[0]; ++n)
        for (std::size_t t = 0; t < s[1]; ++t)
            for (std::size_t d = 0; d < s[2]; ++d)
                out.data()[(n * s[1] + t) * s[2] + d] = x.data()[(n * s[1] + perm[t]) * s[2] + d];
    return out;
}

template <typename T>
void attention_checks(Outcome& o, const char* tag) {
    DualStreamNet<T> net(desk(32, 7));
    std::mt19937_64 rng(77);
    ForwardTrace<T> trace;
    net.forward(random_tensor<T>({2, 3, 32, 32}, rng, 0, 1), false, &trace);
    double worst_row = 0;
    for (const auto& a : trace.attention) {
        const std::size_t t = a.shape().back();
        const auto v = a.data();
        for (std::size_t r = 0; r < a.numel() / t; ++r) {
            double total = 0;
            for (std::size_t c = 0; c < t; ++c) total += static_cast<double>(v[r * t + c]);
            worst_row = std::max(worst_row, std::abs(total - 1.0));
        }
    }
    o.require(!trace.attention.empty() && worst_row < kRowSumTol, std::string(tag) + " row sums");

    const auto& block = net.encoders().at(0);
    auto chi = random_tensor<T>({2, 16, 256}, rng);
    auto phi = random_tensor<T>({2, 16, 256}, rng);
    std::vector<std::size_t> perm(16);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    auto [a, b] = cma_forward(chi, phi, block.cma, 8);
    auto [pa, pb] = cma_forward(permute_tokens(chi, perm), permute_tokens(phi, perm), block.cma, 8);
    const double perm_err = std::max(max_abs_diff(pa, permute_tokens(a, perm)), max_abs_diff(pb, permute_tokens(b, perm)));
    o.require(perm_err < kPermutationTol, std::string(tag) + " permutation");
    o.note(std::string(tag) + " row-sum dev " + sci(worst_row) + ", permutation dev " + sci(perm_err));
}

Outcome encoder_identity() {
    Outcome o;
    {
        DualStreamNet<double> net(desk(32, 3));
        std::mt19937_64 rng(55);
        auto chi = random_tensor<double>({2, 16, 256}, rng);
        auto phi = random_tensor<double>({2, 16, 256}, rng);
        bool exact = true;
        for (auto block : net.encoders()) {
            zero_encoder_increments(block);
            auto [c, p] = encoder_block_forward(chi, phi, block, 8);
            exact = exact && bit_equal(c, chi) && bit_equal(p, phi);
        }
        o.require(exact, "zeroed blocks are not exact identities");
        o.note(std::to_string(net.encoders().size()) + " zeroed blocks exact identity");
    }
    attention_checks<double>(o, "f64");
    attention_checks<float>(o, "f32");
    return o;
}

Outcome overfit_smoke() {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    const auto corpus = make_synthetic_corpus(8, 32, 2024);
    DualStreamNet<float> net(desk(32, 11));
    TrainConfig cfg;
    cfg.epochs = kSmokeEpochCap;
    cfg.batch_size = 16;
    cfg.seed = 5;
    cfg.precision = Precision::f32;
    double eval_acc = 0;
    TrainCallbacks<float> cb;
    // Stop at the first whole loss window after 100% inference-mode accuracy on the training set.
    cb.should_stop = [&](const EpochRecord& r, DualStreamNet<float>& model) {
        eval_acc = evaluate(model, corpus).acc;
        return eval_acc == 100.0 && r.epoch >= 2 * kLossWindow && r.epoch % kLossWindow == 0;
    };
    const auto report = fit(net, corpus, nullptr, cfg, cb);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    o.require(eval_acc == 100.0, "accuracy " + format_rate(eval_acc));
    const auto& epochs = report.epochs;
    std::vector<double> windows;
    for (std::size_t start = 0; start + kLossWindow <= epochs.size(); start += kLossWindow) {
        double sum = 0;
        for (std::size_t e = start; e < start + kLossWindow; ++e) sum += epochs[e].train_loss;
        windows.push_back(sum / kLossWindow);
    }
    bool monotone = windows.size() >= 2;
    std::string trend;
    for (std::size_t i = 0; i < windows.size(); ++i) {
        if (i > 0) monotone = monotone && windows[i] <= windows[i - 1];
        trend += (i ? " " : "") + sci(windows[i]);
    }
    o.require(monotone, "window loss trend");
    o.require(secs < kSmokeBudget, "runtime budget");
    o.note("100% train accuracy (inference mode) by epoch " + std::to_string(epochs.size()) + " in " +
           std::to_string(static_cast<int>(secs)) + " s; 10-epoch mean losses " + trend);
    return o;
}

Outcome ablation_matrix() {
    Outcome o;
    const auto corpus = make_synthetic_corpus(8, 32, 99);
    struct Variant {
        const char* name;
        bool residual, content, cma;
    };
    for (auto v : {Variant{"residual-only", true, false, false}, Variant{"content-only", false, true, false},
                   Variant{"both-no-cma", true, true, false}, Variant{"full", true, true, true}}) {
        auto mc = desk(32, 13);
        mc.enable_residual_stream = v.residual;
        mc.enable_content_stream = v.content;
        mc.enable_cma = v.cma;
        TrainConfig tc;
        tc.epochs = kAblationEpochs;
        tc.batch_size = 8;
        tc.seed = 3;
        bool finite = false;
        std::size_t ran = 0;
        try {
            DualStreamNet<float> net(mc);
            const auto report = fit(net, corpus, nullptr, tc);
            ran = report.epochs.size();
            finite = std::isfinite(report.initial.train_loss);
            for (const auto& e : report.epochs) finite = finite && std::isfinite(e.train_loss);
            if (v.cma) {
                const auto expected = testing::closed_form_parameter_count();
                o.require(net.parameter_count() == expected, "census " + std::to_string(net.parameter_count()) +
                                                                 " vs " + std::to_string(expected));
                o.note("census " + std::to_string(net.parameter_count()) + " = closed form " +
                       std::to_string(expected));
            }
            o.note(std::string(v.name) + " final loss " + sci(report.epochs.empty() ? NAN : report.epochs.back().train_loss));
        } catch (const std::exception& e) {
            o.require(false, std::string(v.name) + ": " + e.what());
        }
        o.require(finite && ran == kAblationEpochs, std::string(v.name) + " epochs/finite");
    }
    return o;
}

Outcome point_checks() {
    Outcome o;
    const double bce = bce_loss(Tensor<double>({1}, 0.5), Tensor<double>({1}, 1.0)).item();
    o.require(std::abs(bce - std::log(2.0)) <= kBceTol, "bce " + sci(bce));

    // 5 generated all detected, 3 of 4 photographs kept.
    const std::vector<double> logits{2.0, 1.5, 0.3, 4.0, 0.9, -1.0, -2.5, -0.4, 0.8};
    const std::vector<int> labels{1, 1, 1, 1, 1, 0, 0, 0, 0};
    const auto r = metrics_from_logits(logits, labels);
    const auto kv = format_report_kv(r);
    const bool counts = r.tp == 5 && r.fn == 0 && r.tn == 3 && r.fp == 1;
    const bool printed = kv.find("tpr=100.0\n") != std::string::npos && kv.find("tnr=75.0\n") != std::string::npos &&
                         kv.find("acc=88.9\n") != std::string::npos;
    const auto table = format_report_table(r);
    o.require(counts && printed && table.find("88.9") != std::string::npos, "metrics formatting");

    const double lr = lr_at_epoch(30, TrainConfig{});
    o.require(std::abs(lr - 2e-5) <= 1e-12 * 2e-5, "lr_at_epoch(30) " + sci(lr));
    o.note("bce(1,0.5)=" + std::to_string(bce) + ", TPR/TNR/ACC " + format_rate(r.tpr) + "/" + format_rate(r.tnr) + "/" +
           format_rate(r.acc) + ", lr(30)=" + sci(lr));
    return o;
}

Outcome transform_identities() {
    Outcome o;
    std::mt19937_64 rng(8);
    bool exact = true;
    double rot = 0, blur_dev = 0;
    for (std::size_t i = 0; i < 4; ++i) {
        auto img = random_tensor<double>({3, 13 + i, 17}, rng, 0, 1);
        for (auto kind : {EnhanceKind::chromaticity, EnhanceKind::brightness, EnhanceKind::contrast,
                          EnhanceKind::sharpness}) {
            exact = exact && bit_equal(enhance(img, kind, 1.0), img);
        }
        rot = std::max(rot, max_abs_diff(rotate(img, 0.0), img));
        const double c = 0.1 + 0.2 * static_cast<double>(i);
        Image flat({3, 9 + i, 12}, c);
        for (auto kind : {BlurKind::gaussian, BlurKind::mean}) {
            const auto blurred = blur(flat, kind);
            for (double v : blurred.data()) blur_dev = std::max(blur_dev, std::abs(v - c));
        }
    }
    o.require(exact, "enhance factor 1");
    o.require(rot < kTransformTol, "rotate 0");
    o.require(blur_dev < kTransformTol, "blur of constant");

    DualStreamNet<float> net(desk(32, 17));
    const auto data = make_synthetic_corpus(6, 32, 31);
    const auto clean = evaluate(net, data);
    const std::vector<TransformSpec> pinned{{TransformKind::chromaticity, 1.0, 0}, {TransformKind::brightness, 1.0, 0},
                                            {TransformKind::contrast, 1.0, 0},     {TransformKind::sharpness, 1.0, 0},
                                            {TransformKind::rotation, 0.0, 0}};
    const auto rob = robustness_eval(net, data, pinned, 12345);
    bool same = rob.rows.size() == pinned.size();
    for (const auto& row : rob.rows) {
        same = same && row.tp == clean.tp && row.fn == clean.fn && row.tn == clean.tn && row.fp == clean.fp &&
               row.acc == clean.acc && row.tpr == clean.tpr && row.tnr == clean.tnr;
    }
    same = same && rob.average_acc == clean.acc;
    o.require(same, "identity-pinned robustness differs from clean");
    o.note("enhance x1 bit-exact, rotate(0) dev " + sci(rot) + ", blur-on-constant dev " + sci(blur_dev) +
           ", pinned robustness == clean (acc " + format_rate(clean.acc) + ")");
    return o;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome persistence() {
    Outcome o;
    testing::TempDir dir("acceptance");
    const auto data = make_synthetic_corpus(4, 32, 6);
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 4;
    tc.seed = 9;
    tc.precision = Precision::f64;
    for (const char* name : {"a.ckpt", "b.ckpt"}) {
        DualStreamNet<double> net(desk(32, 4));
        OptimizerState<double> state = OptimizerState<double>::create(net.parameters());
        fit(net, data, nullptr, tc, {}, &state);
        save_checkpoint(dir.file(name), net, tc, tc.epochs, &state);
    }
    DualStreamNet<double> untrained(desk(32, 4));
    save_checkpoint(dir.file("u.ckpt"), untrained, tc, 0);
    const auto a = slurp(dir.file("a.ckpt"));
    o.require(!a.empty() && a == slurp(dir.file("b.ckpt")), "repeat training checkpoints differ");
    o.require(a != slurp(dir.file("u.ckpt")), "training did not change the checkpoint");

    DualStreamNet<double> trained(desk(32, 4));
    load_checkpoint(dir.file("a.ckpt"), trained);
    DualStreamNet<double> restored(desk(32, 999));
    load_checkpoint(dir.file("a.ckpt"), restored);
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const auto batch = stack_images<double>(data, idx);
    o.require(bit_equal(trained.forward(batch, false), restored.forward(batch, false)), "round-trip logits");

    DualStreamNet<float> f(desk(32, 4));
    save_checkpoint(dir.file("f.ckpt"), f, TrainConfig{}, 0);
    DualStreamNet<float> g(desk(32, 5));
    load_checkpoint(dir.file("f.ckpt"), g);
    const auto fb = stack_images<float>(data, idx);
    o.require(bit_equal(f.forward(fb, false), g.forward(fb, false)), "f32 round-trip logits");

    std::size_t rejected = 0, tried = 0;
    auto expect_reject = [&](ModelConfig mc) {
        ++tried;
        try {
            DualStreamNet<double> other(mc);
            load_checkpoint(dir.file("a.ckpt"), other);
        } catch (const CheckpointError&) {
            ++rejected;
        }
    };
    expect_reject(desk(64, 4));
    auto no_cma = desk(32, 4);
    no_cma.enable_cma = false;
    expect_reject(no_cma);
    auto heads = desk(32, 4);
    heads.heads = 4;
    expect_reject(heads);
    o.require(rejected == tried, "mismatched loads rejected " + std::to_string(rejected) + "/" + std::to_string(tried));
    o.note("repeat f64 runs byte-identical (" + std::to_string(a.size()) + " bytes), round trip bit-exact, " +
           std::to_string(rejected) + "/" + std::to_string(tried) + " mismatched loads rejected");
    return o;
}

} // namespace

int main() {
    struct Criterion {
        const char* title;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria{
        {"oracle equivalence", oracle_equivalence}, {"gradient suite", gradient_suite},
        {"shape contract", shape_contract},         {"encoder identity and attention", encoder_identity},
        {"overfit smoke test", overfit_smoke},      {"ablation matrix and census", ablation_matrix},
        {"loss and metric point checks", point_checks}, {"transform identities", transform_identities},
        {"determinism and persistence", persistence},
    };
    std::size_t passed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].run();
        } catch (const std::exception& e) {
            o.require(false, std::string("exception: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("criterion %zu %s: %s | %s [%.1f s]\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].title,
                    o.detail.c_str(), secs);
        std::fflush(stdout);
        passed += o.pass;
    }
    std::printf("%zu/%zu criteria passed\n", passed, criteria.size());
    return passed == criteria.size() ? 0 : 1;
}
