#pragma once

// Binary visibility masks and the mask-aware convolutions.
//
// Convention: 1 = visible pixel, 0 = hole. For a k x k window W,
//   count(W) = number of visible mask pixels (zero padding counts as hidden)
//   partial:      out = conv(X*M) / count + b   if count > 0,           else 0
//                 updated mask = [count > 0]
//   restrictive:  out = conv(X*M) / count + b   if count / k^2 >= alpha, else 0
//                 mask unchanged
// Downsampling a mask by a window s: coarse cell = [visible / s^2 >= alpha].

#include "plural/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace plural {

class MaskGrid {
public:
    MaskGrid() = default;
    MaskGrid(int height, int width, bool visible = true);

    int height() const { return h_; }
    int width() const { return w_; }
    bool at(int y, int x) const { return v_[static_cast<std::size_t>(y) * w_ + x] != 0; }
    void set(int y, int x, bool visible) { v_[static_cast<std::size_t>(y) * w_ + x] = visible ? 1 : 0; }
    std::span<const std::uint8_t> values() const { return v_; }

    std::int64_t visible_count() const;
    double visible_fraction() const;
    bool all_visible() const { return visible_count() == static_cast<std::int64_t>(v_.size()); }
    bool none_visible() const { return visible_count() == 0; }

    bool operator==(const MaskGrid&) const = default;

private:
    int h_ = 0, w_ = 0;
    std::vector<std::uint8_t> v_;
};

struct MaskPyramid {
    std::vector<MaskGrid> levels;  // levels[0] = input resolution
    float alpha = 0.5f;
    const MaskGrid& token_mask() const { return levels.back(); }
};

// [N,1,H,W] float tensor of 0/1 for a batch of masks.
Tensor mask_tensor(std::span<const MaskGrid> masks);

// Visible-pixel count for each k x k window at the given stride/padding.
std::vector<int> window_counts(const MaskGrid& mask, int kernel, int stride, int padding);

struct PartialConvOutput {
    Tensor features;
    std::vector<MaskGrid> masks;  // one updated mask per batch item
};

// One mask per batch item, or a single mask shared by the whole batch.
PartialConvOutput partial_conv(const Tensor& input, std::span<const MaskGrid> masks,
                               const Tensor& weight, const Tensor& bias, int stride, int padding);
PartialConvOutput partial_conv(const Tensor& input, const MaskGrid& mask, const Tensor& weight,
                               const Tensor& bias, int stride, int padding);

// Stride 1, same padding. alpha must lie in (0, 1].
Tensor restrictive_conv(const Tensor& input, std::span<const MaskGrid> masks, const Tensor& weight,
                        const Tensor& bias, float alpha);
Tensor restrictive_conv(const Tensor& input, const MaskGrid& mask, const Tensor& weight,
                        const Tensor& bias, float alpha);

MaskGrid downsample_mask(const MaskGrid& mask, float alpha, int window = 2);
MaskPyramid build_pyramid(const MaskGrid& mask, float alpha, int stages);

enum class MaskKind { SmallRandom, LargeRandom, Box80, CustomBox };

struct MaskSpec {
    MaskKind kind = MaskKind::Box80;
    double box_fraction = 0.8;  // CustomBox only
};

// Accepts small-random, large-random, box80, custom-box:<frac> or custom-box(<frac>).
MaskSpec parse_mask_spec(const std::string& text);
std::string to_string(const MaskSpec& spec);

// Stroke and rectangle parameters for the random kinds (fractions of the
// image extent). Defaults are documented in docs/config.md.
struct StrokeParams {
    int min_vertices = 4, max_vertices = 10;
    double min_step = 0.05, max_step = 0.25;
    double min_radius = 0.02, max_radius = 0.07;
    double rect_probability = 0.3;
    double min_rect = 0.1, max_rect = 0.4;
};

// Random kinds fill until the masked fraction reaches a target drawn from
// [0.10, 0.30] (small) or [0.40, 0.70] (large).
MaskGrid generate_mask(const MaskSpec& spec, int height, int width, std::uint64_t seed,
                       const StrokeParams& params = {});

// PGM P5, 255 = visible, 0 = masked. Reading thresholds at 128.
void write_mask_pgm(const std::filesystem::path& path, const MaskGrid& mask);
MaskGrid read_mask_pgm(const std::filesystem::path& path);

}  // namespace plural
