#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dsnet/errors.hpp"

namespace dsnet {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Run-level numeric mode: 64-bit for verification, 32-bit for training.
enum class Precision { f32, f64 };

std::string to_string(Precision p);
Precision parse_precision(const std::string& text);

template <typename T>
struct TensorImpl;

template <typename T>
struct GradNode {
    std::string op;
    std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
    // grads[i] is null when inputs[i] needs no gradient. Implementations accumulate.
    std::function<void(const TensorImpl<T>& out, std::span<const T> grad_out,
                       std::span<std::vector<T>*> grads)>
        backward;
};

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    std::shared_ptr<GradNode<T>> node;

    bool needs_grad() const { return requires_grad || node != nullptr; }
};

bool grad_enabled();

// Disables lineage recording on this thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0));
    Tensor(Shape shape, std::vector<T> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }
    static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    // Negative axes count from the back.
    std::size_t dim(int axis) const;
    std::size_t numel() const { return data().size(); }

    std::span<T> data();
    std::span<const T> data() const;
    T item() const;

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    Tensor& set_requires_grad(bool on);
    bool has_lineage() const { return impl_ && impl_->node != nullptr; }
    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    std::span<const T> grad() const;
    void zero_grad();

    // Same values, no lineage, no grad; the copy owns its storage.
    Tensor detach() const;
    Tensor clone() const { return detach(); }

    const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }
    explicit Tensor(std::shared_ptr<TensorImpl<T>> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<TensorImpl<T>> impl_;
};

// Reverse-mode sweep from a single-element tensor. Leaf gradients accumulate across calls.
template <typename T>
void backward(const Tensor<T>& loss);

namespace detail {

// Wraps freshly computed values in a tensor; records lineage when any input needs a gradient.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::string op,
                      std::vector<Tensor<T>> inputs,
                      std::function<void(const TensorImpl<T>&, std::span<const T>,
                                         std::span<std::vector<T>*>)>
                          backward_fn);

} // namespace detail

extern template class Tensor<float>;
extern template class Tensor<double>;

} // namespace dsnet
