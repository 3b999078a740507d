#include "plural/mask.hpp"

#include "plural/errors.hpp"
#include "plural/image_io.hpp"
#include "plural/ops.hpp"
#include "plural/rng.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace plural {

MaskGrid::MaskGrid(int height, int width, bool visible)
    : h_(height), w_(width), v_(static_cast<std::size_t>(height) * width, visible ? 1 : 0) {
    if (height <= 0 || width <= 0) throw ShapeError("mask extents must be positive");
}

std::int64_t MaskGrid::visible_count() const {
    return std::count(v_.begin(), v_.end(), std::uint8_t{1});
}

double MaskGrid::visible_fraction() const {
    return v_.empty() ? 0.0 : static_cast<double>(visible_count()) / static_cast<double>(v_.size());
}

Tensor mask_tensor(std::span<const MaskGrid> masks) {
    if (masks.empty()) throw ShapeError("mask batch is empty");
    const int h = masks[0].height(), w = masks[0].width();
    std::vector<float> v;
    v.reserve(masks.size() * h * w);
    for (const auto& m : masks) {
        if (m.height() != h || m.width() != w) throw ShapeError("mask batch extents differ");
        for (auto b : m.values()) v.push_back(b ? 1.0f : 0.0f);
    }
    return Tensor::from({static_cast<std::int64_t>(masks.size()), 1, h, w}, std::move(v));
}

std::vector<int> window_counts(const MaskGrid& mask, int kernel, int stride, int padding) {
    const int h = mask.height(), w = mask.width();
    const int ho = (h + 2 * padding - kernel) / stride + 1;
    const int wo = (w + 2 * padding - kernel) / stride + 1;
    std::vector<int> out(static_cast<std::size_t>(ho) * wo, 0);
    for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
            int c = 0;
            for (int ky = 0; ky < kernel; ++ky) {
                const int y = oy * stride - padding + ky;
                if (y < 0 || y >= h) continue;
                for (int kx = 0; kx < kernel; ++kx) {
                    const int x = ox * stride - padding + kx;
                    if (x >= 0 && x < w && mask.at(y, x)) ++c;
                }
            }
            out[static_cast<std::size_t>(oy) * wo + ox] = c;
        }
    return out;
}

namespace {

void check_masks(const Tensor& input, std::span<const MaskGrid> masks) {
    if (input.dim() != 4) throw ShapeError("masked convolution expects [N,C,H,W], got " + to_string(input.shape()));
    if (masks.size() != 1 && static_cast<std::int64_t>(masks.size()) != input.size(0))
        throw ShapeError("mask count " + std::to_string(masks.size()) + " does not match batch extent " +
                         std::to_string(input.size(0)));
    for (const auto& m : masks) {
        if (m.height() != input.size(2))
            throw ShapeError("mask height " + std::to_string(m.height()) + " != input extent on axis 2 (" +
                             std::to_string(input.size(2)) + ")");
        if (m.width() != input.size(3))
            throw ShapeError("mask width " + std::to_string(m.width()) + " != input extent on axis 3 (" +
                             std::to_string(input.size(3)) + ")");
    }
}

std::vector<MaskGrid> expand(std::span<const MaskGrid> masks, std::int64_t n) {
    if (masks.size() == 1) return std::vector<MaskGrid>(static_cast<std::size_t>(n), masks[0]);
    return {masks.begin(), masks.end()};
}

// Shared body of both masked convolutions. `pass(count)` decides whether a
// window produces output.
template <typename Pass>
PartialConvOutput masked_conv(const Tensor& input, std::span<const MaskGrid> masks_in,
                              const Tensor& weight, const Tensor& bias, int stride, int padding,
                              Pass pass) {
    check_masks(input, masks_in);
    const auto batch = expand(masks_in, input.size(0));
    const int k = static_cast<int>(weight.size(2));
    if (weight.size(3) != k) throw ShapeError("masked convolution needs square kernels");
    const Tensor m = mask_tensor(batch);
    const Tensor y = ops::conv2d(ops::mul(input, m), weight, Tensor{}, stride, padding);
    const auto ho = y.size(2), wo = y.size(3);
    std::vector<float> scale, ind;
    scale.reserve(batch.size() * ho * wo);
    ind.reserve(scale.capacity());
    PartialConvOutput out;
    for (const auto& mk : batch) {
        const auto counts = window_counts(mk, k, stride, padding);
        MaskGrid next(static_cast<int>(ho), static_cast<int>(wo), false);
        for (std::size_t i = 0; i < counts.size(); ++i) {
            const bool on = pass(counts[i]);
            scale.push_back(on ? 1.0f / static_cast<float>(counts[i]) : 0.0f);
            ind.push_back(on ? 1.0f : 0.0f);
            next.set(static_cast<int>(i / wo), static_cast<int>(i % wo), on);
        }
        out.masks.push_back(std::move(next));
    }
    const Shape s{static_cast<std::int64_t>(batch.size()), 1, ho, wo};
    Tensor f = ops::mul(y, Tensor::from(s, std::move(scale)));
    if (bias.defined())
        f = ops::add(f, ops::mul(ops::reshape(bias, {1, bias.numel(), 1, 1}), Tensor::from(s, std::move(ind))));
    out.features = f;
    return out;
}

void check_alpha(float alpha) {
    if (!(alpha > 0.0f && alpha <= 1.0f))
        throw std::invalid_argument("alpha must lie in (0, 1], got " + std::to_string(alpha));
}

}  // namespace

PartialConvOutput partial_conv(const Tensor& input, std::span<const MaskGrid> masks,
                               const Tensor& weight, const Tensor& bias, int stride, int padding) {
    return masked_conv(input, masks, weight, bias, stride, padding, [](int c) { return c > 0; });
}

PartialConvOutput partial_conv(const Tensor& input, const MaskGrid& mask, const Tensor& weight,
                               const Tensor& bias, int stride, int padding) {
    return partial_conv(input, std::span<const MaskGrid>(&mask, 1), weight, bias, stride, padding);
}

Tensor restrictive_conv(const Tensor& input, std::span<const MaskGrid> masks, const Tensor& weight,
                        const Tensor& bias, float alpha) {
    check_alpha(alpha);
    const int k = static_cast<int>(weight.size(2));
    const double area = static_cast<double>(k) * k;
    return masked_conv(input, masks, weight, bias, 1, (k - 1) / 2,
                       [=](int c) { return c > 0 && static_cast<double>(c) / area >= alpha; })
        .features;
}

Tensor restrictive_conv(const Tensor& input, const MaskGrid& mask, const Tensor& weight,
                        const Tensor& bias, float alpha) {
    return restrictive_conv(input, std::span<const MaskGrid>(&mask, 1), weight, bias, alpha);
}

MaskGrid downsample_mask(const MaskGrid& mask, float alpha, int window) {
    check_alpha(alpha);
    if (window < 1 || mask.height() % window || mask.width() % window)
        throw ShapeError("mask extents " + std::to_string(mask.height()) + "x" + std::to_string(mask.width()) +
                         " not divisible by window " + std::to_string(window));
    const int ho = mask.height() / window, wo = mask.width() / window;
    const double area = static_cast<double>(window) * window;
    MaskGrid out(ho, wo, false);
    for (int y = 0; y < ho; ++y)
        for (int x = 0; x < wo; ++x) {
            int c = 0;
            for (int dy = 0; dy < window; ++dy)
                for (int dx = 0; dx < window; ++dx) c += mask.at(y * window + dy, x * window + dx);
            out.set(y, x, static_cast<double>(c) / area >= alpha);
        }
    return out;
}

MaskPyramid build_pyramid(const MaskGrid& mask, float alpha, int stages) {
    if (stages < 0) throw std::invalid_argument("stages must be >= 0");
    const int div = 1 << stages;
    if (mask.height() % div || mask.width() % div)
        throw ShapeError("mask extents not divisible by 2^" + std::to_string(stages));
    MaskPyramid p;
    p.alpha = alpha;
    p.levels.push_back(mask);
    for (int s = 0; s < stages; ++s) p.levels.push_back(downsample_mask(p.levels.back(), alpha, 2));
    return p;
}

MaskSpec parse_mask_spec(const std::string& text) {
    if (text == "small-random") return {MaskKind::SmallRandom, 0.8};
    if (text == "large-random") return {MaskKind::LargeRandom, 0.8};
    if (text == "box80") return {MaskKind::Box80, 0.8};
    for (const std::string prefix : {"custom-box:", "custom-box("}) {
        if (text.rfind(prefix, 0) == 0) {
            std::string num = text.substr(prefix.size());
            if (!num.empty() && num.back() == ')') num.pop_back();
            double f = 0.0;
            try {
                f = std::stod(num);
            } catch (const std::exception&) {
                throw ConfigError("bad custom-box fraction in '" + text + "'");
            }
            if (!(f > 0.0 && f <= 1.0)) throw ConfigError("custom-box fraction must lie in (0,1]");
            return {MaskKind::CustomBox, f};
        }
    }
    throw ConfigError("unknown mask kind '" + text + "' (small-random | large-random | box80 | custom-box:<frac>)");
}

std::string to_string(const MaskSpec& spec) {
    switch (spec.kind) {
        case MaskKind::SmallRandom: return "small-random";
        case MaskKind::LargeRandom: return "large-random";
        case MaskKind::Box80: return "box80";
        case MaskKind::CustomBox: {
            std::ostringstream os;
            os << "custom-box:" << spec.box_fraction;
            return os.str();
        }
    }
    return "?";
}

namespace {

MaskGrid centered_box(int h, int w, double frac) {
    MaskGrid m(h, w, true);
    const int bh = static_cast<int>(std::floor(frac * h));
    const int bw = static_cast<int>(std::floor(frac * w));
    const int top = (h - bh) / 2, left = (w - bw) / 2;
    for (int y = top; y < top + bh; ++y)
        for (int x = left; x < left + bw; ++x) m.set(y, x, false);
    return m;
}

class HolePainter {
public:
    HolePainter(MaskGrid& m, std::int64_t target) : m_(m), target_(target) {
        masked_ = static_cast<std::int64_t>(m.height()) * m.width() - m.visible_count();
    }
    bool done() const { return masked_ >= target_; }
    void clear(int y, int x) {
        if (y < 0 || x < 0 || y >= m_.height() || x >= m_.width() || !m_.at(y, x)) return;
        m_.set(y, x, false);
        ++masked_;
    }
    void disc(double cy, double cx, double r) {
        const int y0 = static_cast<int>(std::floor(cy - r)), y1 = static_cast<int>(std::ceil(cy + r));
        const int x0 = static_cast<int>(std::floor(cx - r)), x1 = static_cast<int>(std::ceil(cx + r));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x)
                if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) clear(y, x);
    }

private:
    MaskGrid& m_;
    std::int64_t target_;
    std::int64_t masked_ = 0;
};

MaskGrid random_holes(int h, int w, double lo, double hi, Rng& rng, const StrokeParams& sp) {
    MaskGrid m(h, w, true);
    const double target_frac = lo + (hi - lo) * uniform01(rng);
    const auto target = static_cast<std::int64_t>(std::ceil(target_frac * h * w));
    HolePainter paint(m, target);
    auto uni = [&](double a, double b) { return a + (b - a) * uniform01(rng); };
    const double extent = std::max(h, w), small = std::min(h, w);
    while (!paint.done()) {
        if (uniform01(rng) < sp.rect_probability) {
            const int rh = std::max(1, static_cast<int>(uni(sp.min_rect, sp.max_rect) * h));
            const int rw = std::max(1, static_cast<int>(uni(sp.min_rect, sp.max_rect) * w));
            const int top = static_cast<int>(uni(0, h - rh + 1));
            const int left = static_cast<int>(uni(0, w - rw + 1));
            for (int y = top; y < top + rh && !paint.done(); ++y)
                for (int x = left; x < left + rw && !paint.done(); ++x) paint.clear(y, x);
            continue;
        }
        const int verts = sp.min_vertices + static_cast<int>(uniform01(rng) * (sp.max_vertices - sp.min_vertices + 1));
        const double radius = std::max(1.0, uni(sp.min_radius, sp.max_radius) * small);
        double cy = uni(0, h), cx = uni(0, w);
        double heading = uni(0, 2.0 * 3.14159265358979323846);
        for (int v = 0; v < verts && !paint.done(); ++v) {
            heading += uni(-1.2, 1.2);
            const double len = uni(sp.min_step, sp.max_step) * extent;
            const double ny = std::clamp(cy + len * std::sin(heading), 0.0, h - 1.0);
            const double nx = std::clamp(cx + len * std::cos(heading), 0.0, w - 1.0);
            const int steps = std::max(1, static_cast<int>(std::ceil(std::hypot(ny - cy, nx - cx))));
            for (int s = 0; s <= steps && !paint.done(); ++s) {
                const double t = static_cast<double>(s) / steps;
                paint.disc(cy + t * (ny - cy), cx + t * (nx - cx), radius);
            }
            cy = ny;
            cx = nx;
        }
    }
    return m;
}

}  // namespace

MaskGrid generate_mask(const MaskSpec& spec, int height, int width, std::uint64_t seed,
                       const StrokeParams& params) {
    Rng rng(derive_seed(seed, 0x4D41534BULL));
    switch (spec.kind) {
        case MaskKind::Box80: return centered_box(height, width, 0.8);
        case MaskKind::CustomBox: return centered_box(height, width, spec.box_fraction);
        case MaskKind::SmallRandom: return random_holes(height, width, 0.10, 0.30, rng, params);
        case MaskKind::LargeRandom: return random_holes(height, width, 0.40, 0.70, rng, params);
    }
    throw std::logic_error("unhandled mask kind");
}

void write_mask_pgm(const std::filesystem::path& path, const MaskGrid& mask) {
    RawImage img;
    img.width = mask.width();
    img.height = mask.height();
    img.channels = 1;
    img.bytes.reserve(mask.values().size());
    for (auto v : mask.values()) img.bytes.push_back(v ? 255 : 0);
    write_netpbm(path, img);
}

MaskGrid read_mask_pgm(const std::filesystem::path& path) {
    const RawImage img = read_netpbm(path);
    if (img.channels != 1) throw std::runtime_error("mask '" + path.string() + "' is not a PGM (P5) image");
    MaskGrid m(img.height, img.width, false);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) m.set(y, x, img.bytes[static_cast<std::size_t>(y) * img.width + x] >= 128);
    return m;
}

}  // namespace plural
