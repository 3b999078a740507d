#pragma once

// Dense row-major float32 tensor with reverse-mode autodiff.
//
// A Tensor is a shared handle: copies alias the same storage. Operations in
// ops.hpp produce new tensors and, when grad mode is on and any input requires
// grad, record a node that knows how to push the output gradient back into its
// inputs. backward() walks those nodes once in reverse topological order and
// then drops them, so leaf grads survive while intermediates are released.

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace plural {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

struct TensorImpl;

// Pushes out.grad into the inputs' grads. Receives the output so closures need
// not capture it (capturing would form a reference cycle).
using BackwardFn = std::function<void(const TensorImpl& out)>;

struct Node {
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    BackwardFn backward;
};

struct TensorImpl {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::shared_ptr<Node> node;

    // Lazily sized to data; callers accumulate into it.
    std::vector<float>& grad_buffer();
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, float value, bool requires_grad = false);
    static Tensor from(const Shape& shape, std::vector<float> values, bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::int64_t size(int axis) const;
    int dim() const { return static_cast<int>(shape().size()); }
    std::int64_t numel() const;

    std::span<const float> data() const;
    // Direct write access for initializers, optimizers and data loaders.
    // Does not interact with the graph.
    std::span<float> mutable_data();
    float item() const;
    float at(std::initializer_list<std::int64_t> index) const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool on);
    bool has_grad() const;
    std::span<const float> grad() const;
    std::span<float> mutable_grad();
    void zero_grad();

    // Same values, no history, never requires grad. Copies storage.
    Tensor detach() const;
    Tensor clone() const;

    bool is_leaf() const;

    // Loss must be a scalar (numel 1).
    void backward() const;

    TensorImpl* impl() const { return impl_.get(); }
    const std::shared_ptr<TensorImpl>& shared() const { return impl_; }

private:
    std::shared_ptr<TensorImpl> impl_;
};

// Grad mode is thread-local. Inference paths wrap themselves in NoGradGuard.
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

namespace detail {

// Builds an op result; records the node only if some input needs grad.
Tensor make_result(Shape shape, std::vector<float> data, std::initializer_list<Tensor> inputs,
                   BackwardFn backward);
Tensor make_result(Shape shape, std::vector<float> data, const std::vector<Tensor>& inputs,
                   BackwardFn backward);

// True when the input participates in the graph and should receive a grad.
inline bool wants_grad(const TensorImpl& t) { return t.requires_grad; }

}  // namespace detail

}  // namespace plural
