#include "plural/checkpoint.hpp"

#include "plural/errors.hpp"

#include <fmt/format.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace plural {

static_assert(std::endian::native == std::endian::little, "MGRD I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'M', 'G', 'R', 'D'};

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}
    template <typename T>
    T get() {
        T v;
        std::memcpy(&v, take(sizeof(T)), sizeof(T));
        return v;
    }
    const char* take(std::size_t n) {
        if (pos_ + n > bytes_.size()) throw CheckpointError("checkpoint truncated");
        const char* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const nn::ParamList& entries) {
    std::string out(kMagic, 4);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
        out += e.name;
        put<std::uint32_t>(out, static_cast<std::uint32_t>(e.tensor.dim()));
        for (auto d : e.tensor.shape()) put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
        const auto data = e.tensor.data();
        out.append(reinterpret_cast<const char*>(data.data()), data.size_bytes());
    }
    return out;
}

void write_checkpoint(const std::filesystem::path& path, const nn::ParamList& entries) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open " + path.string() + " for writing");
    const std::string bytes = encode_checkpoint(entries);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw CheckpointError("write failed for " + path.string());
}

TensorMap decode_checkpoint(const std::string& bytes) {
    Reader r(bytes);
    if (std::memcmp(r.take(4), kMagic, 4) != 0) throw CheckpointError("not an MGRD checkpoint");
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw CheckpointError(fmt::format("unsupported MGRD version {}", version));
    const auto count = r.get<std::uint32_t>();
    TensorMap out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = r.get<std::uint32_t>();
        std::string name(r.take(len), len);
        const auto rank = r.get<std::uint32_t>();
        if (rank > 8) throw CheckpointError(fmt::format("entry '{}' has implausible rank {}", name, rank));
        Shape shape;
        for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<std::int64_t>(r.get<std::uint64_t>()));
        std::vector<float> values(static_cast<std::size_t>(numel(shape)));
        std::memcpy(values.data(), r.take(values.size() * sizeof(float)), values.size() * sizeof(float));
        out[name] = Tensor::from(shape, std::move(values));
    }
    if (!r.done()) throw CheckpointError("trailing bytes after last checkpoint entry");
    return out;
}

TensorMap read_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return decode_checkpoint(ss.str());
}

void load_params(const TensorMap& source, const nn::ParamList& params) {
    for (const auto& p : params) {
        const auto it = source.find(p.name);
        if (it == source.end()) throw CheckpointError("checkpoint lacks parameter '" + p.name + "'");
        if (it->second.shape() != p.tensor.shape())
            throw CheckpointError(fmt::format("parameter '{}' has extents {} in the checkpoint but {} in the model",
                                              p.name, to_string(it->second.shape()),
                                              to_string(p.tensor.shape())));
        const auto src = it->second.data();
        auto dst = Tensor(p.tensor).mutable_data();
        std::copy(src.begin(), src.end(), dst.begin());
    }
}

Tensor meta_tensor(std::initializer_list<int> values) {
    std::vector<float> v;
    for (int x : values) v.push_back(static_cast<float>(x));
    const Shape shape{static_cast<std::int64_t>(v.size())};
    return Tensor::from(shape, std::move(v));
}

void check_meta(const TensorMap& source, const std::string& name, std::initializer_list<int> expected,
                std::initializer_list<const char*> labels) {
    const auto it = source.find(name);
    if (it == source.end()) throw CheckpointError("checkpoint lacks metadata '" + name + "'");
    const auto got = it->second.data();
    if (got.size() != expected.size())
        throw CheckpointError(fmt::format("metadata '{}' has {} fields, expected {}", name, got.size(), expected.size()));
    auto label = labels.begin();
    std::size_t i = 0;
    for (int want : expected) {
        const int have = static_cast<int>(got[i]);
        if (have != want)
            throw CheckpointError(fmt::format("checkpoint {} is {} but the config expects {}",
                                              label != labels.end() ? *label : name.c_str(), have, want));
        ++i;
        if (label != labels.end()) ++label;
    }
}

}  // namespace plural
