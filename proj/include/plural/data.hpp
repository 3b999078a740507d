#pragma once

// Procedural image corpora and conversion between byte images and tensors.
// Pixel bytes b map to b / 127.5 - 1 so values lie in [-1, 1].

#include "plural/image_io.hpp"
#include "plural/rng.hpp"
#include "plural/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace plural {

enum class DatasetKind { Gradients, Shapes, Textures, Mixed };

DatasetKind parse_dataset_kind(const std::string& text);
std::string to_string(DatasetKind kind);

struct ImageSet {
    int height = 0, width = 0;
    std::vector<Tensor> images;  // each [3,H,W]

    std::size_t size() const { return images.size(); }
    // Stacks the selected images into [N,3,H,W].
    Tensor batch(std::span<const int> indices) const;
};

struct Corpus {
    std::vector<RawImage> raw;
    std::vector<DatasetKind> classes;  // per image; never Mixed
    ImageSet images() const;
};

// Uniform indices with replacement.
std::vector<int> draw_batch(Rng& rng, std::size_t count, int batch);

// Mixed corpora cycle through the three classes before shuffling, so class
// counts differ by at most one.
Corpus make_dataset(DatasetKind kind, int count, int extent, std::uint64_t seed);

Tensor to_tensor(const RawImage& image);  // [3,H,W]; grey images are replicated
RawImage to_raw(const Tensor& image);     // [3,H,W], clamped to [-1,1] and rounded

// Writes img_00000.ppm ... in order.
void write_corpus(const std::filesystem::path& dir, const Corpus& corpus);
// Reads every .ppm in the directory, sorted by file name. All must share extents.
ImageSet read_image_dir(const std::filesystem::path& dir);

}  // namespace plural
