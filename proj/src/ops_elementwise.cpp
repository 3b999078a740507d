#include "plural/errors.hpp"
#include "plural/ops.hpp"

#include <algorithm>
#include <cmath>

namespace plural::ops {
namespace {

using detail::make_result;

struct Broadcast {
    Shape out;
    std::vector<std::int64_t> sa, sb;  // strides into a, b per output axis (0 = stretched)
};

Broadcast broadcast(const Shape& a, const Shape& b) {
    const std::size_t rank = std::max(a.size(), b.size());
    Broadcast r;
    r.out.assign(rank, 1);
    r.sa.assign(rank, 0);
    r.sb.assign(rank, 0);
    std::int64_t stride_a = 1, stride_b = 1;
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t ax = rank - 1 - i;
        const std::int64_t ea = i < a.size() ? a[a.size() - 1 - i] : 1;
        const std::int64_t eb = i < b.size() ? b[b.size() - 1 - i] : 1;
        if (ea != eb && ea != 1 && eb != 1)
            throw ShapeError("cannot broadcast " + to_string(a) + " with " + to_string(b) +
                             " on axis " + std::to_string(ax));
        r.out[ax] = std::max(ea, eb);
        r.sa[ax] = ea == 1 ? 0 : stride_a;
        r.sb[ax] = eb == 1 ? 0 : stride_b;
        stride_a *= ea;
        stride_b *= eb;
    }
    return r;
}

// Calls f(out_index, a_offset, b_offset) for every output element in order.
template <typename F>
void for_each(const Broadcast& bc, F&& f) {
    const std::size_t rank = bc.out.size();
    const std::int64_t inner = bc.out[rank - 1];
    const std::int64_t ia = bc.sa[rank - 1], ib = bc.sb[rank - 1];
    const std::int64_t total = numel(bc.out);
    std::vector<std::int64_t> idx(rank, 0);
    std::int64_t oa = 0, ob = 0;
    for (std::int64_t base = 0; base < total; base += inner) {
        for (std::int64_t j = 0; j < inner; ++j) f(base + j, oa + j * ia, ob + j * ib);
        for (std::size_t ax = rank - 1; ax-- > 0;) {
            if (++idx[ax] < bc.out[ax]) {
                oa += bc.sa[ax];
                ob += bc.sb[ax];
                break;
            }
            oa -= bc.sa[ax] * (bc.out[ax] - 1);
            ob -= bc.sb[ax] * (bc.out[ax] - 1);
            idx[ax] = 0;
        }
    }
}

enum class BinOp { Add, Sub, Mul, Div };

template <BinOp Op>
Tensor binary(const Tensor& a, const Tensor& b) {
    const auto& da = a.data();
    const auto& db = b.data();
    if (a.shape() == b.shape()) {
        std::vector<float> out(da.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
            if constexpr (Op == BinOp::Add) out[i] = da[i] + db[i];
            if constexpr (Op == BinOp::Sub) out[i] = da[i] - db[i];
            if constexpr (Op == BinOp::Mul) out[i] = da[i] * db[i];
            if constexpr (Op == BinOp::Div) out[i] = da[i] / db[i];
        }
        return make_result(a.shape(), std::move(out), {a, b}, [a, b](const TensorImpl& o) {
            const auto& g = o.grad;
            if (a.requires_grad()) {
                auto& ga = a.impl()->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    if constexpr (Op == BinOp::Add || Op == BinOp::Sub) ga[i] += g[i];
                    if constexpr (Op == BinOp::Mul) ga[i] += g[i] * b.impl()->data[i];
                    if constexpr (Op == BinOp::Div) ga[i] += g[i] / b.impl()->data[i];
                }
            }
            if (b.requires_grad()) {
                auto& gb = b.impl()->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    if constexpr (Op == BinOp::Add) gb[i] += g[i];
                    if constexpr (Op == BinOp::Sub) gb[i] -= g[i];
                    if constexpr (Op == BinOp::Mul) gb[i] += g[i] * a.impl()->data[i];
                    if constexpr (Op == BinOp::Div) {
                        const float bv = b.impl()->data[i];
                        gb[i] -= g[i] * a.impl()->data[i] / (bv * bv);
                    }
                }
            }
        });
    }
    const Broadcast bc = broadcast(a.shape(), b.shape());
    std::vector<float> out(static_cast<std::size_t>(numel(bc.out)));
    for_each(bc, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
        const float x = da[ia], y = db[ib];
        if constexpr (Op == BinOp::Add) out[i] = x + y;
        if constexpr (Op == BinOp::Sub) out[i] = x - y;
        if constexpr (Op == BinOp::Mul) out[i] = x * y;
        if constexpr (Op == BinOp::Div) out[i] = x / y;
    });
    return make_result(bc.out, std::move(out), {a, b}, [a, b, bc](const TensorImpl& o) {
        const auto& g = o.grad;
        const auto& xa = a.impl()->data;
        const auto& xb = b.impl()->data;
        const bool need_a = a.requires_grad(), need_b = b.requires_grad();
        std::vector<float>* ga = need_a ? &a.impl()->grad_buffer() : nullptr;
        std::vector<float>* gb = need_b ? &b.impl()->grad_buffer() : nullptr;
        for_each(bc, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
            const float gi = g[i];
            if (ga) {
                if constexpr (Op == BinOp::Add || Op == BinOp::Sub) (*ga)[ia] += gi;
                if constexpr (Op == BinOp::Mul) (*ga)[ia] += gi * xb[ib];
                if constexpr (Op == BinOp::Div) (*ga)[ia] += gi / xb[ib];
            }
            if (gb) {
                if constexpr (Op == BinOp::Add) (*gb)[ib] += gi;
                if constexpr (Op == BinOp::Sub) (*gb)[ib] -= gi;
                if constexpr (Op == BinOp::Mul) (*gb)[ib] += gi * xa[ia];
                if constexpr (Op == BinOp::Div) (*gb)[ib] -= gi * xa[ia] / (xb[ib] * xb[ib]);
            }
        });
    });
}

// y = f(x); dy/dx = df(x, y).
template <typename F, typename DF>
Tensor unary(const Tensor& x, F f, DF df) {
    const auto& dx = x.data();
    std::vector<float> out(dx.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(dx[i]);
    return make_result(x.shape(), std::move(out), {x}, [x, df](const TensorImpl& o) {
        auto& gx = x.impl()->grad_buffer();
        const auto& xv = x.impl()->data;
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i] * df(xv[i], o.data[i]);
    });
}

float sigmoidf(float v) { return v >= 0 ? 1.0f / (1.0f + std::exp(-v)) : std::exp(v) / (1.0f + std::exp(v)); }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary<BinOp::Add>(a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary<BinOp::Sub>(a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary<BinOp::Mul>(a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary<BinOp::Div>(a, b); }

Tensor add_scalar(const Tensor& x, float s) {
    return unary(x, [s](float v) { return v + s; }, [](float, float) { return 1.0f; });
}
Tensor mul_scalar(const Tensor& x, float s) {
    return unary(x, [s](float v) { return v * s; }, [s](float, float) { return s; });
}
Tensor neg(const Tensor& x) { return mul_scalar(x, -1.0f); }

Tensor relu(const Tensor& x) {
    return unary(x, [](float v) { return v > 0 ? v : 0.0f; },
                 [](float v, float) { return v > 0 ? 1.0f : 0.0f; });
}

Tensor leaky_relu(const Tensor& x, float slope) {
    return unary(x, [slope](float v) { return v > 0 ? v : slope * v; },
                 [slope](float v, float) { return v > 0 ? 1.0f : slope; });
}

Tensor silu(const Tensor& x) {
    return unary(x, [](float v) { return v * sigmoidf(v); },
                 [](float v, float) {
                     const float s = sigmoidf(v);
                     return s * (1.0f + v * (1.0f - s));
                 });
}

Tensor gelu(const Tensor& x) {
    constexpr float c = 0.7978845608028654f;  // sqrt(2/pi)
    return unary(
        x,
        [](float v) { return 0.5f * v * (1.0f + std::tanh(c * (v + 0.044715f * v * v * v))); },
        [](float v, float) {
            const float u = c * (v + 0.044715f * v * v * v);
            const float t = std::tanh(u);
            const float du = c * (1.0f + 3.0f * 0.044715f * v * v);
            return 0.5f * (1.0f + t) + 0.5f * v * (1.0f - t * t) * du;
        });
}

Tensor sigmoid(const Tensor& x) {
    return unary(x, sigmoidf, [](float, float y) { return y * (1.0f - y); });
}

Tensor tanh(const Tensor& x) {
    return unary(x, [](float v) { return std::tanh(v); }, [](float, float y) { return 1.0f - y * y; });
}

Tensor exp(const Tensor& x) {
    return unary(x, [](float v) { return std::exp(v); }, [](float, float y) { return y; });
}

Tensor log(const Tensor& x) {
    return unary(x, [](float v) { return std::log(v); }, [](float v, float) { return 1.0f / v; });
}

Tensor abs(const Tensor& x) {
    return unary(x, [](float v) { return std::fabs(v); },
                 [](float v, float) { return v > 0 ? 1.0f : (v < 0 ? -1.0f : 0.0f); });
}

Tensor square(const Tensor& x) {
    return unary(x, [](float v) { return v * v; }, [](float v, float) { return 2.0f * v; });
}

Tensor softplus(const Tensor& x) {
    return unary(x, [](float v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
                 [](float v, float) { return sigmoidf(v); });
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (float v : x.data()) s += v;
    return make_result({1}, {static_cast<float>(s)}, {x}, [x](const TensorImpl& o) {
        auto& gx = x.impl()->grad_buffer();
        const float g = o.grad[0];
        for (auto& v : gx) v += g;
    });
}

Tensor mean(const Tensor& x) { return mul_scalar(sum(x), 1.0f / static_cast<float>(x.numel())); }

Tensor reshape(const Tensor& x, const Shape& shape) {
    if (numel(shape) != x.numel())
        throw ShapeError("reshape " + to_string(x.shape()) + " -> " + to_string(shape));
    std::vector<float> out(x.data().begin(), x.data().end());
    return make_result(shape, std::move(out), {x}, [x](const TensorImpl& o) {
        auto& gx = x.impl()->grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i];
    });
}

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
    const Shape& in = x.shape();
    const std::size_t rank = in.size();
    if (perm.size() != rank) throw ShapeError("permute rank mismatch for " + to_string(in));
    std::vector<std::int64_t> in_stride(rank, 1);
    for (std::size_t i = rank - 1; i-- > 0;) in_stride[i] = in_stride[i + 1] * in[i + 1];
    Shape out_shape(rank);
    std::vector<std::int64_t> src_stride(rank);
    std::vector<bool> used(rank, false);
    for (std::size_t i = 0; i < rank; ++i) {
        const int p = perm[i];
        if (p < 0 || static_cast<std::size_t>(p) >= rank || used[p])
            throw ShapeError("invalid permutation for " + to_string(in));
        used[p] = true;
        out_shape[i] = in[p];
        src_stride[i] = in_stride[p];
    }
    // Map output flat index -> input flat index once; reused by backward.
    auto map = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(x.numel()));
    {
        std::vector<std::int64_t> idx(rank, 0);
        std::int64_t off = 0;
        for (std::size_t i = 0; i < map->size(); ++i) {
            (*map)[i] = off;
            for (std::size_t ax = rank; ax-- > 0;) {
                if (++idx[ax] < out_shape[ax]) {
                    off += src_stride[ax];
                    break;
                }
                off -= src_stride[ax] * (out_shape[ax] - 1);
                idx[ax] = 0;
            }
        }
    }
    const auto& xd = x.data();
    std::vector<float> out(map->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[(*map)[i]];
    return make_result(out_shape, std::move(out), {x}, [x, map](const TensorImpl& o) {
        auto& gx = x.impl()->grad_buffer();
        for (std::size_t i = 0; i < map->size(); ++i) gx[(*map)[i]] += o.grad[i];
    });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat of nothing");
    const Shape& first = parts.front().shape();
    const int rank = static_cast<int>(first.size());
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) throw ShapeError("concat axis out of range");
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        if (static_cast<int>(p.shape().size()) != rank) throw ShapeError("concat rank mismatch");
        for (int a = 0; a < rank; ++a)
            if (a != axis && p.shape()[a] != first[a])
                throw ShapeError("concat extent mismatch on axis " + std::to_string(a));
        out_shape[axis] += p.shape()[axis];
    }
    std::int64_t outer = 1, inner = 1;
    for (int a = 0; a < axis; ++a) outer *= first[a];
    for (int a = axis + 1; a < rank; ++a) inner *= first[a];
    const std::int64_t out_row = out_shape[axis] * inner;
    std::vector<float> out(static_cast<std::size_t>(numel(out_shape)));
    std::int64_t col = 0;
    for (const auto& p : parts) {
        const std::int64_t row = p.shape()[axis] * inner;
        for (std::int64_t o = 0; o < outer; ++o)
            std::copy_n(p.data().begin() + o * row, row, out.begin() + o * out_row + col);
        col += row;
    }
    return make_result(out_shape, std::move(out), parts, [parts, outer, inner, out_row, axis](const TensorImpl& o) {
        std::int64_t c = 0;
        for (const auto& p : parts) {
            const std::int64_t row = p.shape()[axis] * inner;
            if (p.requires_grad()) {
                auto& gp = p.impl()->grad_buffer();
                for (std::int64_t r = 0; r < outer; ++r)
                    for (std::int64_t j = 0; j < row; ++j) gp[r * row + j] += o.grad[r * out_row + c + j];
            }
            c += row;
        }
    });
}

Tensor mse(const Tensor& a, const Tensor& b) { return mean(square(sub(a, b))); }
Tensor l1(const Tensor& a, const Tensor& b) { return mean(abs(sub(a, b))); }

}  // namespace plural::ops
