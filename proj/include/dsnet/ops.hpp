#pragma once

#include <cstdint>
#include <vector>

#include "dsnet/tensor.hpp"

namespace dsnet {

// Batch-norm parameters and running statistics for C channels.
template <typename T>
struct BatchNormState {
    Tensor<T> gamma;
    Tensor<T> beta;
    Tensor<T> running_mean;
    Tensor<T> running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    static BatchNormState create(std::size_t channels);
    std::size_t channels() const { return gamma.numel(); }
};

template <typename T>
struct LayerNormState {
    Tensor<T> gamma;
    Tensor<T> beta;
    double eps = 1e-6;

    static LayerNormState create(std::size_t width);
    std::size_t width() const { return gamma.numel(); }
};

// Cross-correlation with zero padding. weight is Cout x Cin x k x k; bias may be undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride = 1, std::size_t padding = 0);

// Padding cells act as -inf; ties route the gradient to the first maximum in row-major order.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input, std::size_t k = 3, std::size_t stride = 2,
                    std::size_t padding = 1);

// Training mode uses batch statistics and updates the running estimates in place.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& input, BatchNormState<T>& state, bool training);

// Normalizes over the last axis.
template <typename T>
Tensor<T> layernorm(const Tensor<T>& tokens, const LayerNormState<T>& state);

// input [..., Din] x weight [Din, Dout] + bias [Dout].
template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias);

// Independent projection per group: input [N, G, T, D], weight [G, D, E], bias [G, E].
template <typename T>
Tensor<T> grouped_linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias);

// Batched product over identical leading axes: [..., M, K] x [..., K, N] (or [..., N, K] when
// transpose_b).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false);

template <typename T>
Tensor<T> softmax(const Tensor<T>& input, int axis);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> subtract(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T>
Tensor<T> relu(const Tensor<T>& a);
// Exact (erf-based) GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& a);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a);

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& tensors, int axis);

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input);

template <typename T>
Tensor<T> reshape(const Tensor<T>& input, Shape shape);

// Output axis i is input axis perm[i].
template <typename T>
Tensor<T> permute(const Tensor<T>& input, const std::vector<std::size_t>& perm);

// [N, C, S, S] -> [N, S*S, C] with C == width.
template <typename T>
Tensor<T> tokens_from_maps(const Tensor<T>& maps, std::size_t width = 256);
// [N, S*S, C] -> [N, C, S, S].
template <typename T>
Tensor<T> maps_from_tokens(const Tensor<T>& tokens, std::size_t side);

template <typename T>
Tensor<T> sum(const Tensor<T>& input);
template <typename T>
Tensor<T> mean(const Tensor<T>& input);

inline constexpr double kProbabilityClamp = 1e-7;

// Mean binary cross entropy; probabilities are clamped to [1e-7, 1 - 1e-7].
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& prob, const Tensor<T>& label);

// While alive, piecewise ops on this thread (ReLU sign, max-pool argmax, BCE clamp) fold the
// branch they took into a digest. Two forward passes with equal digests ran on the same
// smooth piece, which is how the gradient checker tells a kink crossing from a bad gradient.
class BranchRecorder {
public:
    BranchRecorder();
    ~BranchRecorder();
    BranchRecorder(const BranchRecorder&) = delete;
    BranchRecorder& operator=(const BranchRecorder&) = delete;

    std::uint64_t digest() const;

private:
    BranchRecorder* previous_;
    std::uint64_t digest_ = 0xcbf29ce484222325ull;
    friend void record_branch(std::uint64_t);
};

// No-op unless a BranchRecorder is active.
void record_branch(std::uint64_t value);
bool recording_branches();

} // namespace dsnet
