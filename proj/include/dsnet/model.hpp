#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dsnet/ops.hpp"
#include "dsnet/srm.hpp"
#include "dsnet/tensor.hpp"

namespace dsnet {

struct ModelConfig {
    std::size_t input_side = 256;
    std::size_t heads = 8;
    std::size_t embed_width = 256;
    std::size_t encoder_repeats = 2;
    std::size_t mlp_ratio = 4;
    // Module a, first and second downsampling module, then the two post-attention modules.
    std::vector<std::size_t> channel_plan{64, 128, 256, 256, 256};
    bool enable_residual_stream = true;
    bool enable_content_stream = true;
    bool enable_cma = true;
    std::uint64_t seed = 0;

    // Throws ConfigError naming the first violated invariant.
    void validate() const;

    std::size_t head_width() const { return embed_width / heads; }
    std::size_t attention_side() const { return input_side / 8; }
    std::size_t token_count() const { return attention_side() * attention_side(); }
    std::size_t final_side() const { return input_side / 32; }
    std::size_t stream_count() const {
        return static_cast<std::size_t>(enable_residual_stream) +
               static_cast<std::size_t>(enable_content_stream);
    }
    std::size_t classifier_width() const { return channel_plan.back() * stream_count(); }

    bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct NamedTensor {
    std::string name;
    Tensor<T> tensor;
};

template <typename T>
struct Conv {
    Tensor<T> weight;
    Tensor<T> bias;  // undefined when the layer has none
    std::size_t stride = 1;
    std::size_t padding = 1;

    Tensor<T> operator()(const Tensor<T>& x) const {
        return conv2d(x, weight, bias, stride, padding);
    }
};

template <typename T>
struct Linear {
    Tensor<T> weight;  // Din x Dout
    Tensor<T> bias;

    Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
};

// conv-BN-ReLU twice, then 3x3/2 max pooling.
template <typename T>
struct ModuleA {
    Conv<T> conv1;
    BatchNormState<T> bn1;
    Conv<T> conv2;
    BatchNormState<T> bn2;
};

// Pooling branch (conv-BN-ReLU-maxpool) plus strided-conv branch, summed and rectified.
template <typename T>
struct ModuleB1 {
    Conv<T> conv;
    BatchNormState<T> bn;
    Conv<T> down;
};

// conv-BN-ReLU-maxpool.
template <typename T>
struct ModuleB2 {
    Conv<T> conv;
    BatchNormState<T> bn;
};

// 1x1 colour mixing, difference against a 3x3 smoothing, and a 3x3 refinement.
template <typename T>
struct ContentHead {
    Conv<T> mix;
    Conv<T> smooth;
    Conv<T> refine;
};

// Per-head query/key projections, [heads, d_k, d_k] weights and [heads, d_k] biases.
// q_chi/k_phi produce the increment added to the residual tokens; q_phi/k_chi the mirror.
template <typename T>
struct CmaParams {
    Tensor<T> q_chi_weight, q_chi_bias;
    Tensor<T> k_phi_weight, k_phi_bias;
    Tensor<T> q_phi_weight, q_phi_bias;
    Tensor<T> k_chi_weight, k_chi_bias;
};

template <typename T>
struct Mlp {
    Linear<T> fc1;
    Linear<T> fc2;
};

template <typename T>
struct EncoderBlock {
    LayerNormState<T> ln_attn_chi;
    LayerNormState<T> ln_attn_phi;
    CmaParams<T> cma;
    LayerNormState<T> ln_mlp_chi;
    LayerNormState<T> ln_mlp_phi;
    Mlp<T> mlp_chi;
    Mlp<T> mlp_phi;
};

template <typename T>
struct ResidualStream {
    ModuleA<T> stem;
    ModuleB1<T> down1;
    ModuleB1<T> down2;
    ModuleB1<T> post1;
    ModuleB1<T> post2;
};

template <typename T>
struct ContentStream {
    ContentHead<T> head;
    ModuleA<T> stem;
    ModuleB2<T> down1;
    ModuleB2<T> down2;
    ModuleB2<T> post1;
    ModuleB2<T> post2;
};

// Intermediates recorded by DualStreamNet::forward when requested.
template <typename T>
struct ForwardTrace {
    Tensor<T> chi_maps;  // residual stream before attention
    Tensor<T> phi_maps;  // content stream before attention
    Tensor<T> chi_tokens;
    Tensor<T> phi_tokens;
    std::vector<Tensor<T>> attention;  // per block: chi-query map, then phi-query map
    Tensor<T> chi_final;
    Tensor<T> phi_final;
    Tensor<T> classifier_input;
};

template <typename T>
Tensor<T> module_a_forward(const Tensor<T>& x, ModuleA<T>& m, bool training);
template <typename T>
Tensor<T> module_b1_forward(const Tensor<T>& x, ModuleB1<T>& m, bool training);
template <typename T>
Tensor<T> module_b2_forward(const Tensor<T>& x, ModuleB2<T>& m, bool training);
template <typename T>
Tensor<T> content_head_forward(const Tensor<T>& rgb, const ContentHead<T>& head);

// Attention increments for both directions from the same input tokens:
// first = concat_h softmax(Q_chi K_phi^T / sqrt(d_k)) phi, second the mirror with chi as values.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> cma_increments(const Tensor<T>& chi, const Tensor<T>& phi,
                                               const CmaParams<T>& p, std::size_t heads,
                                               std::vector<Tensor<T>>* attention = nullptr);

// chi + increment, phi + increment.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> cma_forward(const Tensor<T>& chi, const Tensor<T>& phi,
                                            const CmaParams<T>& p, std::size_t heads,
                                            std::vector<Tensor<T>>* attention = nullptr);

// Pre-norm block: attention residual, then LN + MLP residual, per stream.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> encoder_block_forward(const Tensor<T>& chi, const Tensor<T>& phi,
                                                      const EncoderBlock<T>& block,
                                                      std::size_t heads,
                                                      std::vector<Tensor<T>>* attention = nullptr);

// Zeroes everything that feeds the block's residual increments: Q/K projections, the
// attention LayerNorm affine (the value path) and the MLP output layer.
template <typename T>
void zero_encoder_increments(EncoderBlock<T>& block);

template <typename T>
class DualStreamNet {
public:
    // Builds and initializes every parameter from config.seed.
    explicit DualStreamNet(ModelConfig config);

    DualStreamNet(const DualStreamNet&) = delete;
    DualStreamNet& operator=(const DualStreamNet&) = delete;
    DualStreamNet(DualStreamNet&&) noexcept = default;
    DualStreamNet& operator=(DualStreamNet&&) noexcept = default;

    const ModelConfig& config() const { return config_; }

    // images [N, 3, s, s] in [0, 1] -> logits [N] (positive = generated).
    Tensor<T> forward(const Tensor<T>& images, bool training, ForwardTrace<T>* trace = nullptr);

    std::vector<NamedTensor<T>>& parameters() { return params_; }
    const std::vector<NamedTensor<T>>& parameters() const { return params_; }
    // Batch-norm running statistics.
    std::vector<NamedTensor<T>>& buffers() { return buffers_; }
    const std::vector<NamedTensor<T>>& buffers() const { return buffers_; }

    std::size_t parameter_count() const;
    void zero_grad();

    std::optional<ResidualStream<T>>& residual() { return residual_; }
    std::optional<ContentStream<T>>& content() { return content_; }
    std::vector<EncoderBlock<T>>& encoders() { return encoders_; }
    Linear<T>& classifier() { return classifier_; }
    const FilterBank& filter_bank() const { return bank_; }

private:
    ModelConfig config_;
    FilterBank bank_;
    std::optional<ResidualStream<T>> residual_;
    std::optional<ContentStream<T>> content_;
    std::vector<EncoderBlock<T>> encoders_;
    Linear<T> classifier_;
    std::vector<NamedTensor<T>> params_;
    std::vector<NamedTensor<T>> buffers_;
};

} // namespace dsnet
