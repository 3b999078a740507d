#pragma once

// Differentiable tensor operations. Binary elementwise ops broadcast with
// numpy rules (extents aligned from the right, size-1 axes stretch).

#include "plural/tensor.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace plural::ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& x, float s);
Tensor mul_scalar(const Tensor& x, float s);

Tensor neg(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, float slope);
Tensor silu(const Tensor& x);
Tensor gelu(const Tensor& x);  // tanh approximation
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
Tensor softplus(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor reshape(const Tensor& x, const Shape& shape);
Tensor permute(const Tensor& x, const std::vector<int>& perm);
Tensor concat(const std::vector<Tensor>& parts, int axis);

// a[M,K] x b[K,N]
Tensor matmul(const Tensor& a, const Tensor& b);
// Batched over the leading axis: a[B,M,K] x b[B,K,N], with optional transposes
// of the trailing two axes.
Tensor bmm(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);
// x[..., in] * W[out,in]^T + bias[out]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Cross-correlation; input [N,C,H,W], weight [Co,C,kh,kw], bias [Co] or undefined.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              int padding);
// Non-overlapping window mean, extents must be divisible by the window.
Tensor avg_pool2d(const Tensor& x, int window);
Tensor upsample_nearest2d(const Tensor& x, int factor);

// softmax(x / temperature) over the last axis.
Tensor softmax(const Tensor& x, float temperature = 1.0f);
Tensor log_softmax(const Tensor& x);
// Zero mean / unit variance over one axis, no affine parameters.
Tensor layer_norm(const Tensor& x, int axis, float eps = 1e-5f);

// Weighted mean negative log-likelihood: sum_i w_i * -log softmax(z_i)[y_i] / sum_i w_i.
// logits [R,K]; rows with w_i == 0 contribute nothing. All-zero weights give 0.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets,
                     std::span<const float> weights);

// Rows of table[V,D] selected by indices -> [n, D]; grads scatter-add.
Tensor embedding(const Tensor& table, std::span<const int> indices);

// Inverted dropout. Identity when p == 0.
Tensor dropout(const Tensor& x, float p, std::mt19937_64& rng);

// Multi-head scaled dot-product attention on q,k,v [N,H,L,d].
// key_bias (optional, constant) is additive on scores, shape [N,1,1,L].
// causal masks keys after the query position.
struct AttentionOptions {
    Tensor key_bias;
    bool causal = false;
    float dropout = 0.0f;
    std::mt19937_64* rng = nullptr;
};
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const AttentionOptions& options = {});

Tensor mse(const Tensor& a, const Tensor& b);
Tensor l1(const Tensor& a, const Tensor& b);

}  // namespace plural::ops
