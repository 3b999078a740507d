#include "plural/errors.hpp"
#include "plural/ops.hpp"

#include <cmath>
#include <limits>

namespace plural::ops {
namespace {

using detail::make_result;

}  // namespace

Tensor softmax(const Tensor& x, float temperature) {
    if (!(temperature > 0.0f)) throw std::invalid_argument("softmax temperature must be > 0");
    const std::int64_t k = x.shape().back();
    const std::int64_t rows = x.numel() / k;
    const float inv_t = 1.0f / temperature;
    const auto& xd = x.data();
    std::vector<float> out(xd.size());
    for (std::int64_t r = 0; r < rows; ++r) {
        const float* z = xd.data() + r * k;
        float* y = out.data() + r * k;
        float mx = -std::numeric_limits<float>::infinity();
        for (std::int64_t j = 0; j < k; ++j) mx = std::max(mx, z[j]);
        double s = 0.0;
        for (std::int64_t j = 0; j < k; ++j) {
            y[j] = std::exp((z[j] - mx) * inv_t);
            s += y[j];
        }
        const float inv = static_cast<float>(1.0 / s);
        for (std::int64_t j = 0; j < k; ++j) y[j] *= inv;
    }
    return make_result(x.shape(), std::move(out), {x}, [x, k, rows, inv_t](const TensorImpl& o) {
        auto& gx = x.impl()->grad_buffer();
        for (std::int64_t r = 0; r < rows; ++r) {
            const float* y = o.data.data() + r * k;
            const float* g = o.grad.data() + r * k;
            double dotp = 0.0;
            for (std::int64_t j = 0; j < k; ++j) dotp += g[j] * y[j];
            for (std::int64_t j = 0; j < k; ++j)
                gx[r * k + j] += inv_t * y[j] * (g[j] - static_cast<float>(dotp));
        }
    });
}

Tensor log_softmax(const Tensor& x) {
    const std::int64_t k = x.shape().back();
    const std::int64_t rows = x.numel() / k;
    const auto& xd = x.data();
    std::vector<float> out(xd.size());
    for (std::int64_t r = 0; r < rows; ++r) {
        const float* z = xd.data() + r * k;
        float mx = -std::numeric_limits<float>::infinity();
        for (std::int64_t j = 0; j < k; ++j) mx = std::max(mx, z[j]);
        double s = 0.0;
        for (std::int64_t j = 0; j < k; ++j) s += std::exp(static_cast<double>(z[j] - mx));
        const float lse = mx + static_cast<float>(std::log(s));
        for (std::int64_t j = 0; j < k; ++j) out[r * k + j] = z[j] - lse;
    }
    return make_result(x.shape(), std::move(out), {x}, [x, k, rows](const TensorImpl& o) {
        auto& gx = x.impl()->grad_buffer();
        for (std::int64_t r = 0; r < rows; ++r) {
            const float* g = o.grad.data() + r * k;
            const float* y = o.data.data() + r * k;
            double gs = 0.0;
            for (std::int64_t j = 0; j < k; ++j) gs += g[j];
            for (std::int64_t j = 0; j < k; ++j)
                gx[r * k + j] += g[j] - std::exp(y[j]) * static_cast<float>(gs);
        }
    });
}

Tensor layer_norm(const Tensor& x, int axis, float eps) {
    const int rank = x.dim();
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) throw ShapeError("layer_norm axis out of range for " + to_string(x.shape()));
    const std::int64_t a = x.shape()[axis];
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.shape()[i];
    for (int i = axis + 1; i < rank; ++i) inner *= x.shape()[i];
    const auto& xd = x.data();
    std::vector<float> out(xd.size());
    auto inv_std = std::make_shared<std::vector<float>>(static_cast<std::size_t>(outer * inner));
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < inner; ++i) {
            const std::int64_t base = o * a * inner + i;
            double m = 0.0;
            for (std::int64_t j = 0; j < a; ++j) m += xd[base + j * inner];
            m /= static_cast<double>(a);
            double v = 0.0;
            for (std::int64_t j = 0; j < a; ++j) {
                const double d = xd[base + j * inner] - m;
                v += d * d;
            }
            v /= static_cast<double>(a);
            const double is = 1.0 / std::sqrt(v + eps);
            (*inv_std)[o * inner + i] = static_cast<float>(is);
            for (std::int64_t j = 0; j < a; ++j)
                out[base + j * inner] = static_cast<float>((xd[base + j * inner] - m) * is);
        }
    return make_result(x.shape(), std::move(out), {x}, [x, a, outer, inner, inv_std](const TensorImpl& o) {
        auto& gx = x.impl()->grad_buffer();
        for (std::int64_t oo = 0; oo < outer; ++oo)
            for (std::int64_t i = 0; i < inner; ++i) {
                const std::int64_t base = oo * a * inner + i;
                double gm = 0.0, gy = 0.0;
                for (std::int64_t j = 0; j < a; ++j) {
                    const std::int64_t p = base + j * inner;
                    gm += o.grad[p];
                    gy += static_cast<double>(o.grad[p]) * o.data[p];
                }
                gm /= static_cast<double>(a);
                gy /= static_cast<double>(a);
                const float is = (*inv_std)[oo * inner + i];
                for (std::int64_t j = 0; j < a; ++j) {
                    const std::int64_t p = base + j * inner;
                    gx[p] += is * static_cast<float>(o.grad[p] - gm - o.data[p] * gy);
                }
            }
    });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets,
                     std::span<const float> weights) {
    if (logits.dim() != 2) throw ShapeError("cross_entropy expects [R,K] logits, got " + to_string(logits.shape()));
    const std::int64_t rows = logits.size(0), k = logits.size(1);
    if (static_cast<std::int64_t>(targets.size()) != rows || static_cast<std::int64_t>(weights.size()) != rows)
        throw ShapeError("cross_entropy target/weight count must equal logit rows (" + std::to_string(rows) + ")");
    double wsum = 0.0;
    for (float w : weights) wsum += w;
    const auto& z = logits.data();
    auto probs = std::make_shared<std::vector<float>>(static_cast<std::size_t>(rows * k), 0.0f);
    double total = 0.0;
    for (std::int64_t r = 0; r < rows; ++r) {
        if (weights[r] == 0.0f) continue;
        const int y = targets[r];
        if (y < 0 || y >= k) throw std::out_of_range("cross_entropy target label out of range");
        const float* zr = z.data() + r * k;
        float mx = -std::numeric_limits<float>::infinity();
        for (std::int64_t j = 0; j < k; ++j) mx = std::max(mx, zr[j]);
        double s = 0.0;
        for (std::int64_t j = 0; j < k; ++j) s += std::exp(static_cast<double>(zr[j] - mx));
        const double lse = mx + std::log(s);
        total += weights[r] * (lse - zr[y]);
        for (std::int64_t j = 0; j < k; ++j)
            (*probs)[r * k + j] = static_cast<float>(std::exp(zr[j] - lse));
    }
    const float value = wsum > 0.0 ? static_cast<float>(total / wsum) : 0.0f;
    std::vector<int> tg(targets.begin(), targets.end());
    std::vector<float> wt(weights.begin(), weights.end());
    return make_result({1}, {value}, {logits}, [logits, probs, tg, wt, wsum, rows, k](const TensorImpl& o) {
        if (wsum <= 0.0) return;
        auto& gz = logits.impl()->grad_buffer();
        const float g = o.grad[0] / static_cast<float>(wsum);
        for (std::int64_t r = 0; r < rows; ++r) {
            if (wt[r] == 0.0f) continue;
            const float s = g * wt[r];
            for (std::int64_t j = 0; j < k; ++j) gz[r * k + j] += s * (*probs)[r * k + j];
            gz[r * k + tg[r]] -= s;
        }
    });
}

Tensor embedding(const Tensor& table, std::span<const int> indices) {
    if (table.dim() != 2) throw ShapeError("embedding table must be [V,D]");
    const std::int64_t v = table.size(0), d = table.size(1);
    const auto n = static_cast<std::int64_t>(indices.size());
    if (n == 0) throw ShapeError("embedding lookup of zero indices");
    std::vector<float> out(static_cast<std::size_t>(n * d));
    for (std::int64_t i = 0; i < n; ++i) {
        const int idx = indices[i];
        if (idx < 0 || idx >= v) throw std::out_of_range("embedding index " + std::to_string(idx) + " outside [0," + std::to_string(v) + ")");
        std::copy_n(table.data().begin() + idx * d, d, out.begin() + i * d);
    }
    std::vector<int> ids(indices.begin(), indices.end());
    return make_result({n, d}, std::move(out), {table}, [table, ids, d](const TensorImpl& o) {
        auto& gt = table.impl()->grad_buffer();
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::int64_t j = 0; j < d; ++j) gt[ids[i] * d + j] += o.grad[i * d + j];
    });
}

Tensor dropout(const Tensor& x, float p, std::mt19937_64& rng) {
    if (p <= 0.0f) return x;
    if (p >= 1.0f) throw std::invalid_argument("dropout probability must be < 1");
    std::bernoulli_distribution keep(1.0 - p);
    const float scale = 1.0f / (1.0f - p);
    std::vector<float> m(static_cast<std::size_t>(x.numel()));
    for (auto& v : m) v = keep(rng) ? scale : 0.0f;
    return mul(x, Tensor::from(x.shape(), std::move(m)));
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionOptions& opt) {
    if (q.dim() != 4 || k.dim() != 4 || v.dim() != 4) throw ShapeError("attention expects [N,H,L,d] operands");
    if (q.shape() != k.shape() || k.shape() != v.shape())
        throw ShapeError("attention extent mismatch: q" + to_string(q.shape()) + " k" + to_string(k.shape()) +
                         " v" + to_string(v.shape()));
    const auto n = q.size(0), h = q.size(1), l = q.size(2), d = q.size(3);
    const Tensor q3 = reshape(q, {n * h, l, d});
    const Tensor k3 = reshape(k, {n * h, l, d});
    const Tensor v3 = reshape(v, {n * h, l, d});
    Tensor scores = mul_scalar(bmm(q3, k3, false, true), 1.0f / std::sqrt(static_cast<float>(d)));
    if (opt.key_bias.defined() || opt.causal) {
        scores = reshape(scores, {n, h, l, l});
        if (opt.key_bias.defined()) {
            if (opt.key_bias.shape() != Shape{n, 1, 1, l})
                throw ShapeError("attention key_bias must be [N,1,1,L], got " + to_string(opt.key_bias.shape()));
            scores = add(scores, opt.key_bias);
        }
        if (opt.causal) {
            std::vector<float> cm(static_cast<std::size_t>(l * l), 0.0f);
            for (std::int64_t i = 0; i < l; ++i)
                for (std::int64_t j = i + 1; j < l; ++j) cm[i * l + j] = -1e9f;
            scores = add(scores, Tensor::from({1, 1, l, l}, std::move(cm)));
        }
        scores = reshape(scores, {n * h, l, l});
    }
    Tensor attn = softmax(scores);
    if (opt.dropout > 0.0f && opt.rng) attn = dropout(attn, opt.dropout, *opt.rng);
    return reshape(bmm(attn, v3), {n, h, l, d});
}

}  // namespace plural::ops
