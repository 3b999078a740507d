#include "plural/tensor.hpp"

#include "plural/errors.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace plural {

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

std::vector<float>& TensorImpl::grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
    return grad;
}

namespace {

thread_local bool t_grad_enabled = true;

void check_shape(const Shape& shape) {
    for (auto e : shape)
        if (e <= 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
}

}  // namespace

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    return full(shape, 0.0f, requires_grad);
}

Tensor Tensor::full(const Shape& shape, float value, bool requires_grad) {
    check_shape(shape);
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = shape;
    impl->data.assign(static_cast<std::size_t>(plural::numel(shape)), value);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::from(const Shape& shape, std::vector<float> values, bool requires_grad) {
    check_shape(shape);
    if (static_cast<std::int64_t>(values.size()) != plural::numel(shape))
        throw ShapeError("value count " + std::to_string(values.size()) +
                         " does not match shape " + to_string(shape));
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = shape;
    impl->data = std::move(values);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(float value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return impl_->shape; }

std::int64_t Tensor::size(int axis) const {
    const int d = dim();
    if (axis < 0) axis += d;
    if (axis < 0 || axis >= d) throw ShapeError("axis out of range for " + to_string(shape()));
    return impl_->shape[static_cast<std::size_t>(axis)];
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

std::span<const float> Tensor::data() const { return impl_->data; }
std::span<float> Tensor::mutable_data() { return impl_->data; }

float Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return impl_->data[0];
}

float Tensor::at(std::initializer_list<std::int64_t> index) const {
    const auto& s = shape();
    if (index.size() != s.size()) throw ShapeError("index rank mismatch for " + to_string(s));
    std::int64_t off = 0;
    std::size_t ax = 0;
    for (auto i : index) {
        if (i < 0 || i >= s[ax]) throw ShapeError("index out of range on axis " + std::to_string(ax));
        off = off * s[ax] + i;
        ++ax;
    }
    return impl_->data[static_cast<std::size_t>(off)];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
}

bool Tensor::has_grad() const { return !impl_->grad.empty(); }
std::span<const float> Tensor::grad() const { return impl_->grad; }
std::span<float> Tensor::mutable_grad() { return impl_->grad_buffer(); }
void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::detach() const { return from(shape(), impl_->data, false); }

Tensor Tensor::clone() const { return from(shape(), impl_->data, impl_->requires_grad && !impl_->node); }

bool Tensor::is_leaf() const { return impl_->node == nullptr; }

void Tensor::backward() const {
    if (numel() != 1) throw ShapeError("backward() needs a scalar loss, got " + to_string(shape()));
    if (!impl_->requires_grad) return;

    // Iterative DFS post-order gives a topological order. Holding owning
    // references keeps intermediates alive while their producers are released.
    std::vector<std::shared_ptr<TensorImpl>> order;
    std::unordered_set<TensorImpl*> seen;
    std::vector<std::pair<std::shared_ptr<TensorImpl>, std::size_t>> stack;
    stack.emplace_back(impl_, 0);
    seen.insert(impl_.get());
    while (!stack.empty()) {
        auto& top = stack.back();
        const auto& node = top.first->node;
        if (node && top.second < node->inputs.size()) {
            std::shared_ptr<TensorImpl> in = node->inputs[top.second++];
            if (in->requires_grad && seen.insert(in.get()).second) stack.emplace_back(std::move(in), 0);
            continue;
        }
        order.push_back(std::move(top.first));
        stack.pop_back();
    }

    impl_->grad_buffer()[0] += 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* t = it->get();
        if (!t->node) continue;
        if (!t->grad.empty()) t->node->backward(*t);
        t->node.reset();
        t->grad.clear();
        t->grad.shrink_to_fit();
    }
}

namespace detail {

Tensor make_result(Shape shape, std::vector<float> data, const std::vector<Tensor>& inputs,
                   BackwardFn backward) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    if (grad_enabled()) {
        bool any = false;
        for (const auto& in : inputs) any = any || (in.defined() && in.requires_grad());
        if (any) {
            auto node = std::make_shared<Node>();
            for (const auto& in : inputs)
                if (in.defined()) node->inputs.push_back(in.shared());
            node->backward = std::move(backward);
            impl->node = std::move(node);
            impl->requires_grad = true;
        }
    }
    return Tensor(std::move(impl));
}

Tensor make_result(Shape shape, std::vector<float> data, std::initializer_list<Tensor> inputs,
                   BackwardFn backward) {
    return make_result(std::move(shape), std::move(data), std::vector<Tensor>(inputs),
                       std::move(backward));
}

}  // namespace detail

}  // namespace plural
