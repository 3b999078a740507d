#include "plural/image_io.hpp"

#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace plural {
namespace {

// Reads one header token, skipping whitespace and '#' comments.
std::string next_token(const std::string& s, std::size_t& pos) {
    for (;;) {
        while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
        if (pos < s.size() && s[pos] == '#') {
            while (pos < s.size() && s[pos] != '\n') ++pos;
            continue;
        }
        break;
    }
    const std::size_t start = pos;
    while (pos < s.size() && !std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    if (start == pos) throw std::runtime_error("netpbm: truncated header");
    return s.substr(start, pos - start);
}

int parse_positive(const std::string& tok, const char* what) {
    std::size_t used = 0;
    int v = 0;
    try {
        v = std::stoi(tok, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != tok.size() || v <= 0) throw std::runtime_error(std::string("netpbm: bad ") + what + " '" + tok + "'");
    return v;
}

}  // namespace

RawImage parse_netpbm(const std::string& s) {
    std::size_t pos = 0;
    const std::string magic = next_token(s, pos);
    RawImage img;
    if (magic == "P5") {
        img.channels = 1;
    } else if (magic == "P6") {
        img.channels = 3;
    } else {
        throw std::runtime_error("netpbm: unsupported magic '" + magic + "' (need P5 or P6)");
    }
    img.width = parse_positive(next_token(s, pos), "width");
    img.height = parse_positive(next_token(s, pos), "height");
    const int maxval = parse_positive(next_token(s, pos), "maxval");
    if (maxval != 255) throw std::runtime_error("netpbm: only maxval 255 is supported");
    if (pos >= s.size()) throw std::runtime_error("netpbm: missing raster");
    ++pos;  // single whitespace byte after maxval
    const std::size_t n = static_cast<std::size_t>(img.width) * img.height * img.channels;
    if (s.size() - pos < n) throw std::runtime_error("netpbm: raster shorter than header promises");
    img.bytes.assign(s.begin() + static_cast<std::ptrdiff_t>(pos), s.begin() + static_cast<std::ptrdiff_t>(pos + n));
    return img;
}

RawImage read_netpbm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open image '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_netpbm(ss.str());
}

std::string encode_netpbm(const RawImage& img) {
    if (img.channels != 1 && img.channels != 3) throw std::runtime_error("netpbm: channels must be 1 or 3");
    if (img.bytes.size() != static_cast<std::size_t>(img.width) * img.height * img.channels)
        throw std::runtime_error("netpbm: byte count does not match extents");
    std::string out = (img.channels == 1 ? "P5\n" : "P6\n") + std::to_string(img.width) + " " +
                      std::to_string(img.height) + "\n255\n";
    out.append(img.bytes.begin(), img.bytes.end());
    return out;
}

void write_netpbm(const std::filesystem::path& path, const RawImage& img) {
    const std::string data = encode_netpbm(img);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write image '" + path.string() + "'");
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
}

}  // namespace plural
