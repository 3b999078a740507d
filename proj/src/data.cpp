#include "plural/data.hpp"

#include "plural/errors.hpp"
#include "plural/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

namespace plural {

namespace {

using Color = std::array<double, 3>;

Color random_color(Rng& rng) { return {uniform01(rng), uniform01(rng), uniform01(rng)}; }

Color lerp(const Color& a, const Color& b, double t) {
    return {a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t};
}

std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L));
}

RawImage blank(int extent) {
    RawImage img;
    img.width = img.height = extent;
    img.channels = 3;
    img.bytes.resize(static_cast<std::size_t>(extent) * extent * 3);
    return img;
}

void put(RawImage& img, int y, int x, const Color& c) {
    auto* p = &img.bytes[(static_cast<std::size_t>(y) * img.width + x) * 3];
    for (int k = 0; k < 3; ++k) p[k] = to_byte(c[k]);
}

RawImage gradient_image(int extent, Rng& rng) {
    const Color a = random_color(rng), b = random_color(rng);
    const double theta = 2.0 * std::numbers::pi * uniform01(rng);
    const double span = 0.5 + uniform01(rng);  // ramp length in image extents
    const double cx = std::cos(theta), cy = std::sin(theta);
    RawImage img = blank(extent);
    for (int y = 0; y < extent; ++y)
        for (int x = 0; x < extent; ++x) {
            const double u = (x + 0.5) / extent - 0.5, v = (y + 0.5) / extent - 0.5;
            const double t = std::clamp((u * cx + v * cy) / span + 0.5, 0.0, 1.0);
            put(img, y, x, lerp(a, b, t));
        }
    return img;
}

struct Shape2d {
    bool ellipse;
    double cx, cy, rx, ry;
    Color color;
    bool inside(double x, double y) const {
        const double dx = (x - cx) / rx, dy = (y - cy) / ry;
        return ellipse ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
    }
};

RawImage shapes_image(int extent, Rng& rng) {
    const Color bg = random_color(rng);
    const int count = 1 + static_cast<int>(uniform01(rng) * 3);
    std::vector<Shape2d> shapes;
    for (int i = 0; i < count; ++i) {
        Shape2d s;
        s.ellipse = uniform01(rng) < 0.5;
        s.cx = 0.2 + 0.6 * uniform01(rng);
        s.cy = 0.2 + 0.6 * uniform01(rng);
        s.rx = 0.1 + 0.25 * uniform01(rng);
        s.ry = 0.1 + 0.25 * uniform01(rng);
        s.color = random_color(rng);
        shapes.push_back(s);
    }
    constexpr int kSuper = 4;
    RawImage img = blank(extent);
    for (int y = 0; y < extent; ++y)
        for (int x = 0; x < extent; ++x) {
            Color acc{0, 0, 0};
            for (int sy = 0; sy < kSuper; ++sy)
                for (int sx = 0; sx < kSuper; ++sx) {
                    const double u = (x + (sx + 0.5) / kSuper) / extent;
                    const double v = (y + (sy + 0.5) / kSuper) / extent;
                    Color c = bg;
                    for (const auto& s : shapes)
                        if (s.inside(u, v)) c = s.color;
                    for (int k = 0; k < 3; ++k) acc[k] += c[k];
                }
            for (auto& c : acc) c /= kSuper * kSuper;
            put(img, y, x, acc);
        }
    return img;
}

// Two octaves of smoothstep-interpolated value noise blended between two colors.
RawImage texture_image(int extent, Rng& rng) {
    const Color a = random_color(rng), b = random_color(rng);
    struct Octave {
        int cells;
        double weight;
        std::vector<double> lattice;
    };
    std::vector<Octave> octaves{{4, 0.7, {}}, {8, 0.3, {}}};
    for (auto& o : octaves) {
        o.lattice.resize(static_cast<std::size_t>(o.cells + 1) * (o.cells + 1));
        for (auto& v : o.lattice) v = uniform01(rng);
    }
    auto smooth = [](double t) { return t * t * (3.0 - 2.0 * t); };
    RawImage img = blank(extent);
    for (int y = 0; y < extent; ++y)
        for (int x = 0; x < extent; ++x) {
            double value = 0.0;
            for (const auto& o : octaves) {
                const double u = (x + 0.5) / extent * o.cells, v = (y + 0.5) / extent * o.cells;
                const int i = std::min(static_cast<int>(u), o.cells - 1);
                const int j = std::min(static_cast<int>(v), o.cells - 1);
                const double fu = smooth(u - i), fv = smooth(v - j);
                auto at = [&](int jj, int ii) { return o.lattice[static_cast<std::size_t>(jj) * (o.cells + 1) + ii]; };
                const double top = at(j, i) + (at(j, i + 1) - at(j, i)) * fu;
                const double bot = at(j + 1, i) + (at(j + 1, i + 1) - at(j + 1, i)) * fu;
                value += o.weight * (top + (bot - top) * fv);
            }
            put(img, y, x, lerp(a, b, value));
        }
    return img;
}

}  // namespace

DatasetKind parse_dataset_kind(const std::string& text) {
    if (text == "gradients") return DatasetKind::Gradients;
    if (text == "shapes") return DatasetKind::Shapes;
    if (text == "textures") return DatasetKind::Textures;
    if (text == "mixed") return DatasetKind::Mixed;
    throw ConfigError("unknown dataset kind '" + text + "'");
}

std::string to_string(DatasetKind kind) {
    switch (kind) {
        case DatasetKind::Gradients: return "gradients";
        case DatasetKind::Shapes: return "shapes";
        case DatasetKind::Textures: return "textures";
        case DatasetKind::Mixed: return "mixed";
    }
    return "?";
}

std::vector<int> draw_batch(Rng& rng, std::size_t count, int batch) {
    std::vector<int> idx(static_cast<std::size_t>(batch));
    for (auto& i : idx) i = static_cast<int>(uniform01(rng) * static_cast<double>(count));
    return idx;
}

Tensor ImageSet::batch(std::span<const int> indices) const {
    const auto per = static_cast<std::size_t>(3) * height * width;
    std::vector<float> values(per * indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto src = images.at(static_cast<std::size_t>(indices[i])).data();
        std::copy(src.begin(), src.end(), values.begin() + static_cast<std::ptrdiff_t>(i * per));
    }
    return Tensor::from({static_cast<std::int64_t>(indices.size()), 3, height, width}, std::move(values));
}

ImageSet Corpus::images() const {
    ImageSet set;
    if (!raw.empty()) {
        set.height = raw.front().height;
        set.width = raw.front().width;
    }
    for (const auto& r : raw) set.images.push_back(to_tensor(r));
    return set;
}

Corpus make_dataset(DatasetKind kind, int count, int extent, std::uint64_t seed) {
    if (count < 1) throw ConfigError("dataset count must be >= 1");
    if (extent < 4) throw ConfigError("dataset extent must be >= 4");
    std::vector<DatasetKind> classes(static_cast<std::size_t>(count), kind);
    if (kind == DatasetKind::Mixed) {
        constexpr std::array<DatasetKind, 3> cycle{DatasetKind::Gradients, DatasetKind::Shapes,
                                                   DatasetKind::Textures};
        for (int i = 0; i < count; ++i) classes[static_cast<std::size_t>(i)] = cycle[static_cast<std::size_t>(i % 3)];
        Rng shuffle_rng(derive_seed(seed, 0xC1A55));
        for (std::size_t i = classes.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(uniform01(shuffle_rng) * static_cast<double>(i));
            std::swap(classes[i - 1], classes[j]);
        }
    }
    Corpus corpus;
    corpus.classes = classes;
    for (int i = 0; i < count; ++i) {
        Rng rng(derive_seed(seed, {0x1A6E, static_cast<std::uint64_t>(i)}));
        switch (classes[static_cast<std::size_t>(i)]) {
            case DatasetKind::Gradients: corpus.raw.push_back(gradient_image(extent, rng)); break;
            case DatasetKind::Shapes: corpus.raw.push_back(shapes_image(extent, rng)); break;
            default: corpus.raw.push_back(texture_image(extent, rng)); break;
        }
    }
    return corpus;
}

Tensor to_tensor(const RawImage& image) {
    if (image.channels != 1 && image.channels != 3) throw ShapeError("images must have 1 or 3 channels");
    const auto hw = static_cast<std::size_t>(image.height) * image.width;
    std::vector<float> values(hw * 3);
    for (std::size_t p = 0; p < hw; ++p)
        for (int c = 0; c < 3; ++c) {
            const int src = image.channels == 3 ? c : 0;
            values[static_cast<std::size_t>(c) * hw + p] =
                static_cast<float>(image.bytes[p * image.channels + src]) / 127.5f - 1.0f;
        }
    return Tensor::from({3, image.height, image.width}, std::move(values));
}

RawImage to_raw(const Tensor& image) {
    if (image.dim() != 3 || image.size(0) != 3) throw ShapeError("expected [3,H,W], got " + to_string(image.shape()));
    RawImage out;
    out.height = static_cast<int>(image.size(1));
    out.width = static_cast<int>(image.size(2));
    out.channels = 3;
    const auto hw = static_cast<std::size_t>(out.height) * out.width;
    out.bytes.resize(hw * 3);
    const auto d = image.data();
    for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t c = 0; c < 3; ++c) {
            const double v = std::clamp(static_cast<double>(d[c * hw + p]), -1.0, 1.0);
            out.bytes[p * 3 + c] = static_cast<std::uint8_t>(std::lround((v + 1.0) * 127.5));
        }
    return out;
}

void write_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < corpus.raw.size(); ++i)
        write_netpbm(dir / fmt::format("img_{:05d}.ppm", i), corpus.raw[i]);
}

ImageSet read_image_dir(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    ImageSet set;
    for (const auto& f : files) {
        const RawImage raw = read_netpbm(f);
        if (set.images.empty()) {
            set.height = raw.height;
            set.width = raw.width;
        } else if (raw.height != set.height || raw.width != set.width) {
            throw ShapeError(fmt::format("{} is {}x{}, expected {}x{}", f.string(), raw.width, raw.height,
                                         set.width, set.height));
        }
        set.images.push_back(to_tensor(raw));
    }
    return set;
}

}  // namespace plural
