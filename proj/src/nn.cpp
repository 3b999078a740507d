#include "plural/nn.hpp"

#include "plural/errors.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>

namespace plural::nn {

void init_normal(Tensor& t, float std, Rng& rng) {
    std::normal_distribution<float> dist(0.0f, std);
    for (auto& v : t.mutable_data()) v = dist(rng);
}

Conv2d::Conv2d(int in_ch, int out_ch, int kernel, int stride_, Rng& rng, bool with_bias, float gain)
    : stride(stride_), padding((kernel - 1) / 2) {
    if (kernel % 2 == 0) throw ShapeError("conv kernel extents must be odd");
    weight = Tensor::zeros({out_ch, in_ch, kernel, kernel}, true);
    init_normal(weight, gain * std::sqrt(2.0f / static_cast<float>(in_ch * kernel * kernel)), rng);
    if (with_bias) bias = Tensor::zeros({out_ch}, true);
}

Tensor Conv2d::forward(const Tensor& x) const { return ops::conv2d(x, weight, bias, stride, padding); }

void Conv2d::collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".weight", weight});
    if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

Linear::Linear(int in_f, int out_f, Rng& rng, bool with_bias, float std) {
    weight = Tensor::zeros({out_f, in_f}, true);
    if (std > 0.0f) init_normal(weight, std, rng);
    if (with_bias) bias = Tensor::zeros({out_f}, true);
}

Tensor Linear::forward(const Tensor& x) const { return ops::linear(x, weight, bias); }

void Linear::collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".weight", weight});
    if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

LayerNorm::LayerNorm(int features, Axis axis_) : axis(axis_) {
    const Shape s = axis == Axis::Channels ? Shape{1, features, 1, 1} : Shape{features};
    gamma = Tensor::full(s, 1.0f, true);
    beta = Tensor::zeros(s, true);
}

Tensor LayerNorm::forward(const Tensor& x) const {
    const Tensor n = ops::layer_norm(x, axis == Axis::Channels ? 1 : -1);
    return ops::add(ops::mul(n, gamma), beta);
}

void LayerNorm::collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
}

Adam::Adam(ParamList params, AdamOptions options) : params_(std::move(params)), options_(options) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(params_[i].tensor.numel(), 0.0f);
        v_[i].assign(params_[i].tensor.numel(), 0.0f);
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(static_cast<double>(options_.beta1), static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(static_cast<double>(options_.beta2), static_cast<double>(t_));
    const float step_size = static_cast<float>(options_.lr / bc1);
    const float inv_bc2 = static_cast<float>(1.0 / bc2);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i].tensor;
        if (!p.has_grad()) {
            spdlog::warn("adam: parameter '{}' has no gradient; skipped", params_[i].name);
            continue;
        }
        auto w = p.mutable_data();
        const auto g = p.grad();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = options_.beta1 * m[j] + (1.0f - options_.beta1) * g[j];
            v[j] = options_.beta2 * v[j] + (1.0f - options_.beta2) * g[j] * g[j];
            w[j] -= step_size * m[j] / (std::sqrt(v[j] * inv_bc2) + options_.eps);
        }
    }
}

void Adam::zero_grad() { nn::zero_grad(params_); }

float cosine_lr(float base, long step, long total, float floor) {
    const double p = total > 1 ? static_cast<double>(step) / static_cast<double>(total - 1) : 1.0;
    return static_cast<float>(base * (floor + (1.0 - floor) * 0.5 * (1.0 + std::cos(M_PI * std::min(p, 1.0)))));
}

void zero_grad(const ParamList& params) {
    for (auto p : params) p.tensor.zero_grad();
}

void set_requires_grad(const ParamList& params, bool on) {
    for (auto p : params) p.tensor.set_requires_grad(on);
}

std::size_t parameter_count(const ParamList& params) {
    std::size_t n = 0;
    for (const auto& p : params) n += static_cast<std::size_t>(p.tensor.numel());
    return n;
}

}  // namespace plural::nn
