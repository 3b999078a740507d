#pragma once

// Parameterized layers and the Adam optimizer.

#include "plural/ops.hpp"
#include "plural/rng.hpp"

#include <string>
#include <vector>

namespace plural::nn {

struct NamedParam {
    std::string name;
    Tensor tensor;
};
using ParamList = std::vector<NamedParam>;

// Fills with N(0, std^2).
void init_normal(Tensor& t, float std, Rng& rng);

class Conv2d {
public:
    Conv2d() = default;
    // Weights ~ N(0, gain^2 * 2 / fan_in); bias zero.
    Conv2d(int in_ch, int out_ch, int kernel, int stride, Rng& rng, bool with_bias = true,
           float gain = 1.0f);
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, ParamList& out) const;

    Tensor weight, bias;
    int stride = 1, padding = 0;
};

class Linear {
public:
    Linear() = default;
    Linear(int in_f, int out_f, Rng& rng, bool with_bias = true, float std = 0.02f);
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, ParamList& out) const;

    Tensor weight, bias;
};

// Per-position normalization over the feature axis with learned scale/shift.
// Channels: input is [N,C,H,W] and C is normalized. Last: the trailing axis.
class LayerNorm {
public:
    enum class Axis { Channels, Last };
    LayerNorm() = default;
    LayerNorm(int features, Axis axis);
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, ParamList& out) const;

    Tensor gamma, beta;
    Axis axis = Axis::Last;
};

struct AdamOptions {
    float lr = 1e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.95f;
    float eps = 1e-8f;
};

class Adam {
public:
    Adam(ParamList params, AdamOptions options);
    // Parameters without a populated grad are skipped with a warning.
    void step();
    void zero_grad();
    const AdamOptions& options() const { return options_; }
    void set_lr(float lr) { options_.lr = lr; }
    long steps() const { return t_; }

private:
    ParamList params_;
    AdamOptions options_;
    std::vector<std::vector<float>> m_, v_;
    long t_ = 0;
};

// Cosine decay from base to floor * base over total steps.
float cosine_lr(float base, long step, long total, float floor = 0.1f);

void zero_grad(const ParamList& params);
void set_requires_grad(const ParamList& params, bool on);
std::size_t parameter_count(const ParamList& params);

}  // namespace plural::nn
