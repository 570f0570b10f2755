#include "dsnet/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace dsnet {

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << 'x';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

std::string to_string(Precision p) { return p == Precision::f64 ? "f64" : "f32"; }

Precision parse_precision(const std::string& text) {
    if (text == "f64" || text == "double" || text == "64") return Precision::f64;
    if (text == "f32" || text == "float" || text == "32") return Precision::f32;
    throw ArgumentError("unknown numeric mode '" + text + "' (expected f32 or f64)");
}

namespace {
thread_local bool t_grad_enabled = true;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : impl_(std::make_shared<TensorImpl<T>>()) {
    impl_->data.assign(shape_numel(shape), fill);
    impl_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : impl_(std::make_shared<TensorImpl<T>>()) {
    if (shape_numel(shape) != data.size()) {
        throw DimensionError("tensor shape " + shape_str(shape) + " holds " +
                             std::to_string(shape_numel(shape)) + " values, got " +
                             std::to_string(data.size()));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
}

template <typename T>
const Shape& Tensor<T>::shape() const {
    static const Shape empty;
    return impl_ ? impl_->shape : empty;
}

template <typename T>
std::size_t Tensor<T>::dim(int axis) const {
    const auto r = static_cast<int>(rank());
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                             shape_str(shape()));
    }
    return shape()[static_cast<std::size_t>(a)];
}

template <typename T>
std::span<T> Tensor<T>::data() {
    if (!impl_) return {};
    return impl_->data;
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
    if (!impl_) return {};
    return impl_->data;
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) {
        throw ArgumentError("item() on tensor of shape " + shape_str(shape()));
    }
    return impl_->data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
    if (!impl_) throw ArgumentError("set_requires_grad on undefined tensor");
    impl_->requires_grad = on;
    return *this;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
    if (!impl_) return {};
    return impl_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
    if (impl_) impl_->grad.clear();
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    if (!impl_) return {};
    return Tensor(impl_->shape, impl_->data);
}

template <typename T>
void backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ArgumentError("backward() needs a single-element loss, got shape " +
                            shape_str(loss.shape()));
    }
    using ImplPtr = std::shared_ptr<TensorImpl<T>>;

    // Iterative post-order DFS over the lineage graph.
    std::vector<TensorImpl<T>*> order;
    std::unordered_set<const TensorImpl<T>*> visited;
    std::vector<std::pair<TensorImpl<T>*, std::size_t>> stack;
    stack.emplace_back(loss.impl().get(), 0);
    visited.insert(loss.impl().get());
    while (!stack.empty()) {
        auto& [impl, next] = stack.back();
        if (impl->node && next < impl->node->inputs.size()) {
            const ImplPtr& child = impl->node->inputs[next++];
            if (child->needs_grad() && visited.insert(child.get()).second) {
                stack.emplace_back(child.get(), 0);
            }
            continue;
        }
        order.push_back(impl);
        stack.pop_back();
    }

    std::unordered_map<const TensorImpl<T>*, std::vector<T>> pending;
    auto* root = loss.impl().get();
    if (root->node) {
        pending[root].assign(1, T(1));
    } else if (root->requires_grad) {
        root->grad.resize(1, T(0));
        root->grad[0] += T(1);
        return;
    } else {
        return;
    }

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl<T>* impl = *it;
        if (!impl->node) continue;
        auto found = pending.find(impl);
        if (found == pending.end()) continue;
        std::vector<T> grad_out = std::move(found->second);
        pending.erase(found);

        auto& inputs = impl->node->inputs;
        std::vector<std::vector<T>*> grads(inputs.size(), nullptr);
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            TensorImpl<T>* in = inputs[i].get();
            if (in->node) {
                auto& buf = pending[in];
                if (buf.empty()) buf.assign(in->data.size(), T(0));
                grads[i] = &buf;
            } else if (in->requires_grad) {
                if (in->grad.empty()) in->grad.assign(in->data.size(), T(0));
                grads[i] = &in->grad;
            }
        }
        impl->node->backward(*impl, grad_out, grads);
    }
}

namespace detail {

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::string op,
                      std::vector<Tensor<T>> inputs,
                      std::function<void(const TensorImpl<T>&, std::span<const T>,
                                         std::span<std::vector<T>*>)>
                          backward_fn) {
    Tensor<T> out(std::move(shape), std::move(data));
    if (!grad_enabled()) return out;
    const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor<T>& t) {
        return t.defined() && t.impl()->needs_grad();
    });
    if (!any) return out;
    auto node = std::make_shared<GradNode<T>>();
    node->op = std::move(op);
    for (auto& t : inputs) {
        node->inputs.push_back(t.defined() ? t.impl() : std::make_shared<TensorImpl<T>>());
    }
    node->backward = std::move(backward_fn);
    out.impl()->node = std::move(node);
    return out;
}

template Tensor<float> make_result(Shape, std::vector<float>, std::string,
                                   std::vector<Tensor<float>>,
                                   std::function<void(const TensorImpl<float>&,
                                                      std::span<const float>,
                                                      std::span<std::vector<float>*>)>);
template Tensor<double> make_result(Shape, std::vector<double>, std::string,
                                    std::vector<Tensor<double>>,
                                    std::function<void(const TensorImpl<double>&,
                                                       std::span<const double>,
                                                       std::span<std::vector<double>*>)>);

} // namespace detail

template class Tensor<float>;
template class Tensor<double>;
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);

} // namespace dsnet
