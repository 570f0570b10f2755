#include "dsnet/model.hpp"

#include <cmath>
#include <random>
#include <tuple>

namespace dsnet {

void ModelConfig::validate() const {
    if (input_side == 0 || input_side % 32 != 0) {
        throw ConfigError("input_side must be a positive multiple of 32 (got " +
                          std::to_string(input_side) + ")");
    }
    if (heads == 0 || embed_width == 0 || embed_width % heads != 0) {
        throw ConfigError("embed_width (" + std::to_string(embed_width) +
                          ") must be divisible by heads (" + std::to_string(heads) + ")");
    }
    if (!enable_residual_stream && !enable_content_stream) {
        throw ConfigError("at least one stream must be enabled");
    }
    if (enable_cma && !(enable_residual_stream && enable_content_stream)) {
        throw ConfigError("cross attention requires both streams");
    }
    if (channel_plan.size() != 5) {
        throw ConfigError("channel_plan needs 5 widths (got " +
                          std::to_string(channel_plan.size()) + ")");
    }
    for (auto c : channel_plan) {
        if (c == 0) throw ConfigError("channel_plan widths must be positive");
    }
    if (enable_cma && channel_plan[2] != embed_width) {
        throw ConfigError("channel_plan[2] (" + std::to_string(channel_plan[2]) +
                          ") must equal embed_width (" + std::to_string(embed_width) + ")");
    }
    if (mlp_ratio == 0) throw ConfigError("mlp_ratio must be positive");
}

namespace {

template <typename T>
void require_even_extent(const Tensor<T>& x, const char* module) {
    if (x.rank() != 4) {
        throw DimensionError(std::string(module) + ": expected [N, C, H, W], got " +
                             shape_str(x.shape()));
    }
    if (x.shape()[2] % 2 != 0 || x.shape()[3] % 2 != 0) {
        throw DimensionError(std::string(module) + ": spatial extents must be even, got " +
                             shape_str(x.shape()));
    }
}

template <typename T>
class ParameterBuilder {
public:
    ParameterBuilder(std::uint64_t seed, std::vector<NamedTensor<T>>& params,
                     std::vector<NamedTensor<T>>& buffers)
        : rng_(seed), params_(params), buffers_(buffers) {}

    // Uniform in +-1/sqrt(fan_in).
    Tensor<T> weight(const std::string& name, Shape shape, std::size_t fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        std::vector<T> values(shape_numel(shape));
        for (auto& v : values) v = static_cast<T>(dist(rng_));
        return add_param(name, Tensor<T>(std::move(shape), std::move(values)));
    }

    Tensor<T> zeros(const std::string& name, Shape shape) {
        return add_param(name, Tensor<T>::zeros(std::move(shape)));
    }

    Conv<T> conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                 std::size_t stride, std::size_t padding, bool with_bias) {
        Conv<T> c;
        c.weight = weight(name + ".weight", {cout, cin, k, k}, cin * k * k);
        if (with_bias) c.bias = zeros(name + ".bias", {cout});
        c.stride = stride;
        c.padding = padding;
        return c;
    }

    BatchNormState<T> batchnorm(const std::string& name, std::size_t channels) {
        auto s = BatchNormState<T>::create(channels);
        add_param(name + ".gamma", s.gamma);
        add_param(name + ".beta", s.beta);
        buffers_.push_back({name + ".running_mean", s.running_mean});
        buffers_.push_back({name + ".running_var", s.running_var});
        return s;
    }

    LayerNormState<T> layernorm(const std::string& name, std::size_t width) {
        auto s = LayerNormState<T>::create(width);
        add_param(name + ".gamma", s.gamma);
        add_param(name + ".beta", s.beta);
        return s;
    }

    Linear<T> linear(const std::string& name, std::size_t din, std::size_t dout) {
        Linear<T> l;
        l.weight = weight(name + ".weight", {din, dout}, din);
        l.bias = zeros(name + ".bias", {dout});
        return l;
    }

    ModuleA<T> module_a(const std::string& name, std::size_t cin, std::size_t cout) {
        ModuleA<T> m;
        m.conv1 = conv(name + ".conv1", cin, cout, 3, 1, 1, false);
        m.bn1 = batchnorm(name + ".bn1", cout);
        m.conv2 = conv(name + ".conv2", cout, cout, 3, 1, 1, false);
        m.bn2 = batchnorm(name + ".bn2", cout);
        return m;
    }

    ModuleB1<T> module_b1(const std::string& name, std::size_t cin, std::size_t cout) {
        ModuleB1<T> m;
        m.conv = conv(name + ".conv", cin, cout, 3, 1, 1, false);
        m.bn = batchnorm(name + ".bn", cout);
        m.down = conv(name + ".down", cin, cout, 3, 2, 1, true);
        return m;
    }

    ModuleB2<T> module_b2(const std::string& name, std::size_t cin, std::size_t cout) {
        ModuleB2<T> m;
        m.conv = conv(name + ".conv", cin, cout, 3, 1, 1, false);
        m.bn = batchnorm(name + ".bn", cout);
        return m;
    }

private:
    Tensor<T> add_param(const std::string& name, Tensor<T> t) {
        t.set_requires_grad(true);
        params_.push_back({name, t});
        return t;
    }

    std::mt19937_64 rng_;
    std::vector<NamedTensor<T>>& params_;
    std::vector<NamedTensor<T>>& buffers_;
};

// [N, T, D] -> [N, h, T, D/h]
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads) {
    const auto& s = x.shape();
    return permute(reshape(x, {s[0], s[1], heads, s[2] / heads}), {0, 2, 1, 3});
}

// [N, h, T, d] -> [N, T, h*d]
template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x) {
    const auto& s = x.shape();
    return reshape(permute(x, {0, 2, 1, 3}), {s[0], s[2], s[1] * s[3]});
}

template <typename T>
Tensor<T> attend(const Tensor<T>& query_src, const Tensor<T>& key_src, const Tensor<T>& values,
                 const Tensor<T>& qw, const Tensor<T>& qb, const Tensor<T>& kw,
                 const Tensor<T>& kb, std::vector<Tensor<T>>* attention) {
    const std::size_t dk = query_src.shape()[3];
    auto q = grouped_linear(query_src, qw, qb);
    auto k = grouped_linear(key_src, kw, kb);
    auto scores = scale(matmul(q, k, true), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk))));
    auto weights = softmax(scores, -1);
    if (attention) attention->push_back(weights);
    return matmul(weights, values);
}

template <typename T>
Tensor<T> mlp_forward(const Tensor<T>& x, const Mlp<T>& mlp) {
    return mlp.fc2(gelu(mlp.fc1(x)));
}

template <typename T>
void check_shape(const Tensor<T>& t, const Shape& expected, const char* what) {
    if (t.shape() != expected) {
        throw DimensionError(std::string(what) + " has shape " + shape_str(t.shape()) +
                             ", expected " + shape_str(expected));
    }
}

} // namespace

template <typename T>
Tensor<T> module_a_forward(const Tensor<T>& x, ModuleA<T>& m, bool training) {
    require_even_extent(x, "module_a");
    auto y = relu(batchnorm2d(m.conv1(x), m.bn1, training));
    y = relu(batchnorm2d(m.conv2(y), m.bn2, training));
    return maxpool2d(y, 3, 2, 1);
}

template <typename T>
Tensor<T> module_b1_forward(const Tensor<T>& x, ModuleB1<T>& m, bool training) {
    require_even_extent(x, "module_b1");
    auto pooled = maxpool2d(relu(batchnorm2d(m.conv(x), m.bn, training)), 3, 2, 1);
    auto strided = m.down(x);
    if (pooled.shape() != strided.shape()) {
        throw DimensionError("module_b1: branch shapes disagree " + shape_str(pooled.shape()) +
                             " vs " + shape_str(strided.shape()));
    }
    return relu(add(pooled, strided));
}

template <typename T>
Tensor<T> module_b2_forward(const Tensor<T>& x, ModuleB2<T>& m, bool training) {
    require_even_extent(x, "module_b2");
    return maxpool2d(relu(batchnorm2d(m.conv(x), m.bn, training)), 3, 2, 1);
}

template <typename T>
Tensor<T> content_head_forward(const Tensor<T>& rgb, const ContentHead<T>& head) {
    if (rgb.rank() != 4 || rgb.shape()[1] != 3) {
        throw DimensionError("content_head: expected [N, 3, s, s], got " + shape_str(rgb.shape()));
    }
    auto composite = head.mix(rgb);
    auto ell = concat<T>({composite, rgb}, 1);
    auto ell_tilde = subtract(ell, head.smooth(ell));
    return concat<T>({ell_tilde, head.refine(ell_tilde)}, 1);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> cma_increments(const Tensor<T>& chi, const Tensor<T>& phi,
                                               const CmaParams<T>& p, std::size_t heads,
                                               std::vector<Tensor<T>>* attention) {
    if (chi.rank() != 3 || chi.shape() != phi.shape()) {
        throw DimensionError("cma: token tensors must share shape [N, T, D], got " +
                             shape_str(chi.shape()) + " and " + shape_str(phi.shape()));
    }
    if (heads == 0 || chi.shape()[2] % heads != 0) {
        throw ConfigError("cma: token width " + std::to_string(chi.shape()[2]) +
                          " is not divisible by heads " + std::to_string(heads));
    }
    auto chi_h = split_heads(chi, heads);
    auto phi_h = split_heads(phi, heads);
    auto phi_prime = attend(chi_h, phi_h, phi_h, p.q_chi_weight, p.q_chi_bias, p.k_phi_weight,
                            p.k_phi_bias, attention);
    auto chi_prime = attend(phi_h, chi_h, chi_h, p.q_phi_weight, p.q_phi_bias, p.k_chi_weight,
                            p.k_chi_bias, attention);
    return {merge_heads(phi_prime), merge_heads(chi_prime)};
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> cma_forward(const Tensor<T>& chi, const Tensor<T>& phi,
                                            const CmaParams<T>& p, std::size_t heads,
                                            std::vector<Tensor<T>>* attention) {
    auto [to_chi, to_phi] = cma_increments(chi, phi, p, heads, attention);
    return {add(chi, to_chi), add(phi, to_phi)};
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> encoder_block_forward(const Tensor<T>& chi, const Tensor<T>& phi,
                                                      const EncoderBlock<T>& block,
                                                      std::size_t heads,
                                                      std::vector<Tensor<T>>* attention) {
    auto [to_chi, to_phi] = cma_increments(layernorm(chi, block.ln_attn_chi),
                                           layernorm(phi, block.ln_attn_phi), block.cma, heads,
                                           attention);
    auto chi_mid = add(chi, to_chi);
    auto phi_mid = add(phi, to_phi);
    auto chi_out = add(chi_mid, mlp_forward(layernorm(chi_mid, block.ln_mlp_chi), block.mlp_chi));
    auto phi_out = add(phi_mid, mlp_forward(layernorm(phi_mid, block.ln_mlp_phi), block.mlp_phi));
    return {chi_out, phi_out};
}

template <typename T>
void zero_encoder_increments(EncoderBlock<T>& block) {
    auto zero = [](Tensor<T>& t) { std::fill(t.data().begin(), t.data().end(), T(0)); };
    for (auto* t : {&block.cma.q_chi_weight, &block.cma.q_chi_bias, &block.cma.k_phi_weight,
                    &block.cma.k_phi_bias, &block.cma.q_phi_weight, &block.cma.q_phi_bias,
                    &block.cma.k_chi_weight, &block.cma.k_chi_bias, &block.ln_attn_chi.gamma,
                    &block.ln_attn_chi.beta, &block.ln_attn_phi.gamma, &block.ln_attn_phi.beta,
                    &block.mlp_chi.fc2.weight, &block.mlp_chi.fc2.bias, &block.mlp_phi.fc2.weight,
                    &block.mlp_phi.fc2.bias}) {
        zero(*t);
    }
}

template <typename T>
DualStreamNet<T>::DualStreamNet(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    bank_ = build_filter_bank();
    ParameterBuilder<T> b(config_.seed, params_, buffers_);
    const auto& plan = config_.channel_plan;

    if (config_.enable_residual_stream) {
        ResidualStream<T> r;
        r.stem = b.module_a("residual.stem", kResidualChannels, plan[0]);
        r.down1 = b.module_b1("residual.down1", plan[0], plan[1]);
        r.down2 = b.module_b1("residual.down2", plan[1], plan[2]);
        r.post1 = b.module_b1("residual.post1", plan[2], plan[3]);
        r.post2 = b.module_b1("residual.post2", plan[3], plan[4]);
        residual_ = std::move(r);
    }
    if (config_.enable_content_stream) {
        ContentStream<T> c;
        c.head.mix = b.conv("content.head.mix", 3, 3, 1, 1, 0, true);
        c.head.smooth = b.conv("content.head.smooth", 6, 6, 3, 1, 1, true);
        c.head.refine = b.conv("content.head.refine", 6, 6, 3, 1, 1, true);
        c.stem = b.module_a("content.stem", 12, plan[0]);
        c.down1 = b.module_b2("content.down1", plan[0], plan[1]);
        c.down2 = b.module_b2("content.down2", plan[1], plan[2]);
        c.post1 = b.module_b2("content.post1", plan[2], plan[3]);
        c.post2 = b.module_b2("content.post2", plan[3], plan[4]);
        content_ = std::move(c);
    }
    if (config_.enable_cma) {
        const std::size_t width = config_.embed_width;
        const std::size_t h = config_.heads;
        const std::size_t dk = config_.head_width();
        for (std::size_t i = 0; i < config_.encoder_repeats; ++i) {
            const std::string p = "encoder." + std::to_string(i);
            EncoderBlock<T> e;
            e.ln_attn_chi = b.layernorm(p + ".ln_attn_chi", width);
            e.ln_attn_phi = b.layernorm(p + ".ln_attn_phi", width);
            e.cma.q_chi_weight = b.weight(p + ".cma.q_chi.weight", {h, dk, dk}, dk);
            e.cma.q_chi_bias = b.zeros(p + ".cma.q_chi.bias", {h, dk});
            e.cma.k_phi_weight = b.weight(p + ".cma.k_phi.weight", {h, dk, dk}, dk);
            e.cma.k_phi_bias = b.zeros(p + ".cma.k_phi.bias", {h, dk});
            e.cma.q_phi_weight = b.weight(p + ".cma.q_phi.weight", {h, dk, dk}, dk);
            e.cma.q_phi_bias = b.zeros(p + ".cma.q_phi.bias", {h, dk});
            e.cma.k_chi_weight = b.weight(p + ".cma.k_chi.weight", {h, dk, dk}, dk);
            e.cma.k_chi_bias = b.zeros(p + ".cma.k_chi.bias", {h, dk});
            e.ln_mlp_chi = b.layernorm(p + ".ln_mlp_chi", width);
            e.ln_mlp_phi = b.layernorm(p + ".ln_mlp_phi", width);
            const std::size_t hidden = width * config_.mlp_ratio;
            e.mlp_chi.fc1 = b.linear(p + ".mlp_chi.fc1", width, hidden);
            e.mlp_chi.fc2 = b.linear(p + ".mlp_chi.fc2", hidden, width);
            e.mlp_phi.fc1 = b.linear(p + ".mlp_phi.fc1", width, hidden);
            e.mlp_phi.fc2 = b.linear(p + ".mlp_phi.fc2", hidden, width);
            encoders_.push_back(std::move(e));
        }
    }
    classifier_ = b.linear("classifier", config_.classifier_width(), 1);
}

template <typename T>
Tensor<T> DualStreamNet<T>::forward(const Tensor<T>& images, bool training,
                                    ForwardTrace<T>* trace) {
    const std::size_t s = config_.input_side;
    if (images.rank() != 4 || images.shape()[1] != 3 || images.shape()[2] != s ||
        images.shape()[3] != s) {
        throw ConfigError("model expects [N, 3, " + std::to_string(s) + ", " +
                          std::to_string(s) + "] images, got " + shape_str(images.shape()));
    }
    const std::size_t n = images.shape()[0];
    const std::size_t side8 = config_.attention_side();
    const Shape pre_attention{n, config_.channel_plan[2], side8, side8};

    Tensor<T> chi, phi;
    if (residual_) {
        auto& r = *residual_;
        chi = module_a_forward(extract_residuals(images, bank_), r.stem, training);
        chi = module_b1_forward(chi, r.down1, training);
        chi = module_b1_forward(chi, r.down2, training);
        check_shape(chi, pre_attention, "residual stream output");
    }
    if (content_) {
        auto& c = *content_;
        phi = module_a_forward(content_head_forward(images, c.head), c.stem, training);
        phi = module_b2_forward(phi, c.down1, training);
        phi = module_b2_forward(phi, c.down2, training);
        check_shape(phi, pre_attention, "content stream output");
    }
    if (trace) {
        trace->chi_maps = chi;
        trace->phi_maps = phi;
    }

    if (config_.enable_cma) {
        const std::size_t width = config_.embed_width;
        auto chi_tokens = tokens_from_maps(chi, width);
        auto phi_tokens = tokens_from_maps(phi, width);
        const Shape token_shape{n, config_.token_count(), width};
        check_shape(chi_tokens, token_shape, "residual tokens");
        check_shape(phi_tokens, token_shape, "content tokens");
        if (trace) {
            trace->chi_tokens = chi_tokens;
            trace->phi_tokens = phi_tokens;
        }
        for (const auto& block : encoders_) {
            std::tie(chi_tokens, phi_tokens) = encoder_block_forward(
                chi_tokens, phi_tokens, block, config_.heads, trace ? &trace->attention : nullptr);
        }
        chi = maps_from_tokens(chi_tokens, side8);
        phi = maps_from_tokens(phi_tokens, side8);
    }

    std::vector<Tensor<T>> pooled;
    if (residual_) {
        chi = module_b1_forward(chi, residual_->post1, training);
        chi = module_b1_forward(chi, residual_->post2, training);
        pooled.push_back(global_avg_pool(chi));
    }
    if (content_) {
        phi = module_b2_forward(phi, content_->post1, training);
        phi = module_b2_forward(phi, content_->post2, training);
        pooled.push_back(global_avg_pool(phi));
    }
    auto features = pooled.size() == 1 ? pooled.front() : concat(pooled, 1);
    check_shape(features, Shape{n, config_.classifier_width()}, "classifier input");
    if (trace) {
        trace->chi_final = chi;
        trace->phi_final = phi;
        trace->classifier_input = features;
    }
    return reshape(classifier_(features), {n});
}

template <typename T>
std::size_t DualStreamNet<T>::parameter_count() const {
    std::size_t total = 0;
    for (const auto& p : params_) total += p.tensor.numel();
    return total;
}

template <typename T>
void DualStreamNet<T>::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

#define DSNET_INSTANTIATE_MODEL(T)                                                                \
    template Tensor<T> module_a_forward(const Tensor<T>&, ModuleA<T>&, bool);                     \
    template Tensor<T> module_b1_forward(const Tensor<T>&, ModuleB1<T>&, bool);                   \
    template Tensor<T> module_b2_forward(const Tensor<T>&, ModuleB2<T>&, bool);                   \
    template Tensor<T> content_head_forward(const Tensor<T>&, const ContentHead<T>&);             \
    template std::pair<Tensor<T>, Tensor<T>> cma_increments(                                      \
        const Tensor<T>&, const Tensor<T>&, const CmaParams<T>&, std::size_t,                     \
        std::vector<Tensor<T>>*);                                                                 \
    template std::pair<Tensor<T>, Tensor<T>> cma_forward(const Tensor<T>&, const Tensor<T>&,      \
                                                         const CmaParams<T>&, std::size_t,        \
                                                         std::vector<Tensor<T>>*);                \
    template std::pair<Tensor<T>, Tensor<T>> encoder_block_forward(                               \
        const Tensor<T>&, const Tensor<T>&, const EncoderBlock<T>&, std::size_t,                  \
        std::vector<Tensor<T>>*);                                                                 \
    template void zero_encoder_increments(EncoderBlock<T>&);                                      \
    template class DualStreamNet<T>;

DSNET_INSTANTIATE_MODEL(float)
DSNET_INSTANTIATE_MODEL(double)

} // namespace dsnet
