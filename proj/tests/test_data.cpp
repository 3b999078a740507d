#include "plural/data.hpp"

#include "plural/errors.hpp"

#include "doctest.h"

#include <filesystem>
#include <map>

using namespace plural;

TEST_CASE("same seed gives byte-identical corpora") {
    const Corpus a = make_dataset(DatasetKind::Mixed, 12, 16, 3);
    const Corpus b = make_dataset(DatasetKind::Mixed, 12, 16, 3);
    for (std::size_t i = 0; i < a.raw.size(); ++i) CHECK(a.raw[i].bytes == b.raw[i].bytes);
    const Corpus c = make_dataset(DatasetKind::Mixed, 12, 16, 4);
    CHECK(a.raw[0].bytes != c.raw[0].bytes);
}

TEST_CASE("pixel values lie in [-1, 1]") {
    for (auto kind : {DatasetKind::Gradients, DatasetKind::Shapes, DatasetKind::Textures}) {
        const ImageSet set = make_dataset(kind, 5, 16, 1).images();
        for (const auto& img : set.images)
            for (float v : img.data()) {
                CHECK(v >= -1.0f);
                CHECK(v <= 1.0f);
            }
    }
    RawImage raw;
    raw.width = raw.height = 1;
    raw.channels = 3;
    raw.bytes = {0, 255, 128};
    const Tensor t = to_tensor(raw);
    CHECK(t.data()[0] == -1.0f);
    CHECK(t.data()[1] == 1.0f);
    CHECK(to_raw(t).bytes == raw.bytes);
}

TEST_CASE("mixed corpus of 500 is balanced within 10%") {
    const Corpus c = make_dataset(DatasetKind::Mixed, 500, 8, 9);
    std::map<DatasetKind, int> counts;
    for (auto k : c.classes) ++counts[k];
    CHECK(counts.size() == 3);
    for (const auto& [kind, n] : counts) CHECK(std::abs(n - 500.0 / 3.0) <= 0.1 * 500.0 / 3.0);
}

TEST_CASE("corpus round-trips through PPM files") {
    const auto dir = std::filesystem::temp_directory_path() / "plural_test_corpus";
    std::filesystem::remove_all(dir);
    const Corpus c = make_dataset(DatasetKind::Shapes, 4, 16, 2);
    write_corpus(dir, c);
    const ImageSet back = read_image_dir(dir);
    const ImageSet direct = c.images();
    REQUIRE(back.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        const auto a = back.images[i].data(), b = direct.images[i].data();
        CHECK(std::equal(a.begin(), a.end(), b.begin()));
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("batch stacking and argument validation") {
    const ImageSet set = make_dataset(DatasetKind::Gradients, 3, 8, 1).images();
    const std::vector<int> idx{2, 0};
    const Tensor b = set.batch(idx);
    CHECK(b.shape() == Shape{2, 3, 8, 8});
    CHECK(b.data()[0] == set.images[2].data()[0]);
    CHECK_THROWS_AS(make_dataset(DatasetKind::Mixed, 0, 8, 1), ConfigError);
    CHECK_THROWS_AS(parse_dataset_kind("faces"), ConfigError);
    CHECK(parse_dataset_kind("textures") == DatasetKind::Textures);
}
