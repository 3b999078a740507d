#include "plural/errors.hpp"
#include "plural/kernels.hpp"
#include "plural/ops.hpp"

#include <algorithm>
#include <utility>

namespace plural::ops {
namespace {

using detail::make_result;
using kernels::gemm;

void require_rank(const Tensor& t, int rank, const char* what) {
    if (t.dim() != rank)
        throw ShapeError(std::string(what) + " expects rank " + std::to_string(rank) + ", got " +
                         to_string(t.shape()));
}

struct ConvGeom {
    std::int64_t n, c, h, w, co, kh, kw, ho, wo;
    int stride, pad;
    std::int64_t ckk() const { return c * kh * kw; }
    std::int64_t hw_out() const { return ho * wo; }
    bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

// Output columns [lo, hi) read inside the input row for kernel column kj.
std::pair<std::int64_t, std::int64_t> valid_cols(const ConvGeom& g, std::int64_t kj) {
    const std::int64_t off = kj - g.pad;
    std::int64_t lo = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
    std::int64_t hi = g.w - off <= 0 ? 0 : (g.w - off + g.stride - 1) / g.stride;
    hi = std::min(hi, g.wo);
    lo = std::min(lo, hi);
    return {lo, hi};
}

void im2col(const float* x, const ConvGeom& g, float* cols) {
    for (std::int64_t c = 0; c < g.c; ++c)
        for (std::int64_t ki = 0; ki < g.kh; ++ki)
            for (std::int64_t kj = 0; kj < g.kw; ++kj) {
                float* row = cols + ((c * g.kh + ki) * g.kw + kj) * g.hw_out();
                const float* plane = x + c * g.h * g.w;
                const auto [lo, hi] = valid_cols(g, kj);
                const std::int64_t off = kj - g.pad;
                for (std::int64_t oy = 0; oy < g.ho; ++oy) {
                    const std::int64_t iy = oy * g.stride - g.pad + ki;
                    float* dst = row + oy * g.wo;
                    if (iy < 0 || iy >= g.h) {
                        std::fill_n(dst, g.wo, 0.0f);
                        continue;
                    }
                    const float* src = plane + iy * g.w + off;
                    std::fill(dst, dst + lo, 0.0f);
                    if (g.stride == 1) {
                        std::copy(src + lo, src + hi, dst + lo);
                    } else {
                        for (std::int64_t ox = lo; ox < hi; ++ox) dst[ox] = src[ox * g.stride];
                    }
                    std::fill(dst + hi, dst + g.wo, 0.0f);
                }
            }
}

void col2im_add(const float* cols, const ConvGeom& g, float* x) {
    for (std::int64_t c = 0; c < g.c; ++c)
        for (std::int64_t ki = 0; ki < g.kh; ++ki)
            for (std::int64_t kj = 0; kj < g.kw; ++kj) {
                const float* row = cols + ((c * g.kh + ki) * g.kw + kj) * g.hw_out();
                float* plane = x + c * g.h * g.w;
                const auto [lo, hi] = valid_cols(g, kj);
                const std::int64_t off = kj - g.pad;
                for (std::int64_t oy = 0; oy < g.ho; ++oy) {
                    const std::int64_t iy = oy * g.stride - g.pad + ki;
                    if (iy < 0 || iy >= g.h) continue;
                    const float* src = row + oy * g.wo;
                    float* dst = plane + iy * g.w + off;
                    for (std::int64_t ox = lo; ox < hi; ++ox) dst[ox * g.stride] += src[ox];
                }
            }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul lhs");
    require_rank(b, 2, "matmul rhs");
    const auto m = a.size(0), k = a.size(1), n = b.size(1);
    if (b.size(0) != k)
        throw ShapeError("matmul inner extent mismatch: " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
    std::vector<float> out(static_cast<std::size_t>(m * n));
    gemm(false, false, m, n, k, 1.0f, a.data().data(), k, b.data().data(), n, 0.0f, out.data(), n);
    return make_result({m, n}, std::move(out), {a, b}, [a, b, m, n, k](const TensorImpl& o) {
        if (a.requires_grad())
            gemm(false, true, m, k, n, 1.0f, o.grad.data(), n, b.impl()->data.data(), n, 1.0f,
                 a.impl()->grad_buffer().data(), k);
        if (b.requires_grad())
            gemm(true, false, k, n, m, 1.0f, a.impl()->data.data(), k, o.grad.data(), n, 1.0f,
                 b.impl()->grad_buffer().data(), n);
    });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool ta, bool tb) {
    require_rank(a, 3, "bmm lhs");
    require_rank(b, 3, "bmm rhs");
    const auto batch = a.size(0);
    if (b.size(0) != batch) throw ShapeError("bmm batch extent mismatch on axis 0");
    const auto m = ta ? a.size(2) : a.size(1);
    const auto k = ta ? a.size(1) : a.size(2);
    const auto kb = tb ? b.size(2) : b.size(1);
    const auto n = tb ? b.size(1) : b.size(2);
    if (k != kb)
        throw ShapeError("bmm inner extent mismatch: " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
    const std::int64_t lda = a.size(2), ldb = b.size(2);
    const std::int64_t sa = a.size(1) * a.size(2), sb = b.size(1) * b.size(2);
    std::vector<float> out(static_cast<std::size_t>(batch * m * n));
    for (std::int64_t i = 0; i < batch; ++i)
        gemm(ta, tb, m, n, k, 1.0f, a.data().data() + i * sa, lda, b.data().data() + i * sb, ldb,
             0.0f, out.data() + i * m * n, n);
    return make_result({batch, m, n}, std::move(out), {a, b},
                       [=](const TensorImpl& o) {
                           const float* ad = a.impl()->data.data();
                           const float* bd = b.impl()->data.data();
                           float* ga = a.requires_grad() ? a.impl()->grad_buffer().data() : nullptr;
                           float* gb = b.requires_grad() ? b.impl()->grad_buffer().data() : nullptr;
                           for (std::int64_t i = 0; i < batch; ++i) {
                               const float* g = o.grad.data() + i * m * n;
                               if (ga) {
                                   if (!ta)
                                       gemm(false, !tb, m, k, n, 1.0f, g, n, bd + i * sb, ldb, 1.0f,
                                            ga + i * sa, lda);
                                   else
                                       gemm(tb, true, k, m, n, 1.0f, bd + i * sb, ldb, g, n, 1.0f,
                                            ga + i * sa, lda);
                               }
                               if (gb) {
                                   if (!tb)
                                       gemm(!ta, false, k, n, m, 1.0f, ad + i * sa, lda, g, n, 1.0f,
                                            gb + i * sb, ldb);
                                   else
                                       gemm(true, ta, n, k, m, 1.0f, g, n, ad + i * sa, lda, 1.0f,
                                            gb + i * sb, ldb);
                               }
                           }
                       });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    require_rank(weight, 2, "linear weight");
    const auto out_f = weight.size(0), in_f = weight.size(1);
    if (x.shape().back() != in_f)
        throw ShapeError("linear input features " + std::to_string(x.shape().back()) +
                         " != weight in-features " + std::to_string(in_f));
    if (bias.defined() && bias.numel() != out_f) throw ShapeError("linear bias extent mismatch");
    const std::int64_t rows = x.numel() / in_f;
    Shape out_shape = x.shape();
    out_shape.back() = out_f;
    std::vector<float> out(static_cast<std::size_t>(rows * out_f));
    gemm(false, true, rows, out_f, in_f, 1.0f, x.data().data(), in_f, weight.data().data(), in_f,
         0.0f, out.data(), out_f);
    if (bias.defined())
        for (std::int64_t r = 0; r < rows; ++r)
            kernels::axpy(out_f, 1.0f, bias.data().data(), out.data() + r * out_f);
    std::vector<Tensor> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    return make_result(out_shape, std::move(out), inputs,
                       [x, weight, bias, rows, in_f, out_f](const TensorImpl& o) {
                           const float* g = o.grad.data();
                           if (x.requires_grad())
                               gemm(false, false, rows, in_f, out_f, 1.0f, g, out_f,
                                    weight.impl()->data.data(), in_f, 1.0f,
                                    x.impl()->grad_buffer().data(), in_f);
                           if (weight.requires_grad())
                               gemm(true, false, out_f, in_f, rows, 1.0f, g, out_f,
                                    x.impl()->data.data(), in_f, 1.0f,
                                    weight.impl()->grad_buffer().data(), in_f);
                           if (bias.defined() && bias.requires_grad()) {
                               float* gb = bias.impl()->grad_buffer().data();
                               for (std::int64_t r = 0; r < rows; ++r)
                                   kernels::axpy(out_f, 1.0f, g + r * out_f, gb);
                           }
                       });
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              int padding) {
    require_rank(input, 4, "conv2d input");
    require_rank(weight, 4, "conv2d weight");
    if (stride < 1 || padding < 0) throw ShapeError("conv2d stride must be >= 1 and padding >= 0");
    ConvGeom g{};
    g.n = input.size(0);
    g.c = input.size(1);
    g.h = input.size(2);
    g.w = input.size(3);
    g.co = weight.size(0);
    g.kh = weight.size(2);
    g.kw = weight.size(3);
    g.stride = stride;
    g.pad = padding;
    if (weight.size(1) != g.c)
        throw ShapeError("conv2d channel mismatch on axis 1: input has " + std::to_string(g.c) +
                         ", weight expects " + std::to_string(weight.size(1)));
    if (bias.defined() && bias.numel() != g.co)
        throw ShapeError("conv2d bias extent " + std::to_string(bias.numel()) +
                         " != output channels " + std::to_string(g.co));
    if (g.h + 2 * padding < g.kh) throw ShapeError("conv2d kernel taller than padded input (axis 2)");
    if (g.w + 2 * padding < g.kw) throw ShapeError("conv2d kernel wider than padded input (axis 3)");
    g.ho = (g.h + 2 * padding - g.kh) / stride + 1;
    g.wo = (g.w + 2 * padding - g.kw) / stride + 1;

    const std::int64_t in_sz = g.c * g.h * g.w, out_sz = g.co * g.hw_out();
    std::vector<float> out(static_cast<std::size_t>(g.n * out_sz));
    std::vector<float> cols(g.pointwise() ? 0 : static_cast<std::size_t>(g.ckk() * g.hw_out()));
    const float* wd = weight.data().data();
    for (std::int64_t n = 0; n < g.n; ++n) {
        const float* xn = input.data().data() + n * in_sz;
        const float* src = xn;
        if (!g.pointwise()) {
            im2col(xn, g, cols.data());
            src = cols.data();
        }
        float* yn = out.data() + n * out_sz;
        gemm(false, false, g.co, g.hw_out(), g.ckk(), 1.0f, wd, g.ckk(), src, g.hw_out(), 0.0f, yn,
             g.hw_out());
        if (bias.defined())
            for (std::int64_t c = 0; c < g.co; ++c) {
                const float bv = bias.data()[c];
                float* plane = yn + c * g.hw_out();
                for (std::int64_t i = 0; i < g.hw_out(); ++i) plane[i] += bv;
            }
    }
    std::vector<Tensor> inputs{input, weight};
    if (bias.defined()) inputs.push_back(bias);
    return make_result({g.n, g.co, g.ho, g.wo}, std::move(out), inputs,
                       [input, weight, bias, g, in_sz, out_sz](const TensorImpl& o) {
                           const bool need_x = input.requires_grad();
                           const bool need_w = weight.requires_grad();
                           std::vector<float> cols(g.pointwise() ? 0 : static_cast<std::size_t>(g.ckk() * g.hw_out()));
                           std::vector<float> dcols(cols.size());
                           const float* wd = weight.impl()->data.data();
                           float* gw = need_w ? weight.impl()->grad_buffer().data() : nullptr;
                           float* gx = need_x ? input.impl()->grad_buffer().data() : nullptr;
                           for (std::int64_t n = 0; n < g.n; ++n) {
                               const float* gn = o.grad.data() + n * out_sz;
                               const float* xn = input.impl()->data.data() + n * in_sz;
                               if (need_w) {
                                   const float* src = xn;
                                   if (!g.pointwise()) {
                                       im2col(xn, g, cols.data());
                                       src = cols.data();
                                   }
                                   gemm(false, true, g.co, g.ckk(), g.hw_out(), 1.0f, gn, g.hw_out(),
                                        src, g.hw_out(), 1.0f, gw, g.ckk());
                               }
                               if (need_x) {
                                   if (g.pointwise()) {
                                       gemm(true, false, g.ckk(), g.hw_out(), g.co, 1.0f, wd, g.ckk(),
                                            gn, g.hw_out(), 1.0f, gx + n * in_sz, g.hw_out());
                                   } else {
                                       gemm(true, false, g.ckk(), g.hw_out(), g.co, 1.0f, wd, g.ckk(),
                                            gn, g.hw_out(), 0.0f, dcols.data(), g.hw_out());
                                       col2im_add(dcols.data(), g, gx + n * in_sz);
                                   }
                               }
                           }
                           if (bias.defined() && bias.requires_grad()) {
                               auto& gb = bias.impl()->grad_buffer();
                               for (std::int64_t n = 0; n < g.n; ++n)
                                   for (std::int64_t c = 0; c < g.co; ++c) {
                                       const float* plane = o.grad.data() + n * out_sz + c * g.hw_out();
                                       double s = 0.0;
                                       for (std::int64_t i = 0; i < g.hw_out(); ++i) s += plane[i];
                                       gb[c] += static_cast<float>(s);
                                   }
                           }
                       });
}

Tensor avg_pool2d(const Tensor& x, int window) {
    require_rank(x, 4, "avg_pool2d input");
    const auto n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
    if (window < 1 || h % window || w % window)
        throw ShapeError("avg_pool2d extents " + to_string(x.shape()) + " not divisible by window " +
                         std::to_string(window));
    const auto ho = h / window, wo = w / window;
    const float inv = 1.0f / static_cast<float>(window * window);
    std::vector<float> out(static_cast<std::size_t>(n * c * ho * wo), 0.0f);
    const auto& xd = x.data();
    for (std::int64_t p = 0; p < n * c; ++p)
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t xx = 0; xx < w; ++xx)
                out[(p * ho + y / window) * wo + xx / window] += xd[(p * h + y) * w + xx] * inv;
    return make_result({n, c, ho, wo}, std::move(out), {x}, [x, n, c, h, w, ho, wo, window, inv](const TensorImpl& o) {
        auto& gx = x.impl()->grad_buffer();
        for (std::int64_t p = 0; p < n * c; ++p)
            for (std::int64_t y = 0; y < h; ++y)
                for (std::int64_t xx = 0; xx < w; ++xx)
                    gx[(p * h + y) * w + xx] += o.grad[(p * ho + y / window) * wo + xx / window] * inv;
    });
}

Tensor upsample_nearest2d(const Tensor& x, int factor) {
    require_rank(x, 4, "upsample input");
    if (factor < 1) throw ShapeError("upsample factor must be >= 1");
    const auto n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
    const auto ho = h * factor, wo = w * factor;
    std::vector<float> out(static_cast<std::size_t>(n * c * ho * wo));
    const auto& xd = x.data();
    for (std::int64_t p = 0; p < n * c; ++p)
        for (std::int64_t y = 0; y < ho; ++y)
            for (std::int64_t xx = 0; xx < wo; ++xx)
                out[(p * ho + y) * wo + xx] = xd[(p * h + y / factor) * w + xx / factor];
    return make_result({n, c, ho, wo}, std::move(out), {x}, [x, n, c, h, w, ho, wo, factor](const TensorImpl& o) {
        auto& gx = x.impl()->grad_buffer();
        for (std::int64_t p = 0; p < n * c; ++p)
            for (std::int64_t y = 0; y < ho; ++y)
                for (std::int64_t xx = 0; xx < wo; ++xx)
                    gx[(p * h + y / factor) * w + xx / factor] += o.grad[(p * ho + y) * wo + xx];
    });
}

}  // namespace plural::ops
