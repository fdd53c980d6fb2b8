#include "far/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "far/config.hpp"

namespace far {

std::string encode_pnm(const Image& img) {
    require(img.channels == 1 || img.channels == 3, "encode_pnm: only 1 or 3 channels are supported");
    std::ostringstream out;
    out << (img.channels == 1 ? "P5" : "P6") << '\n' << img.width << ' ' << img.height << "\n255\n";
    std::string body(static_cast<std::size_t>(img.data.size()), '\0');
    for (Index i = 0; i < img.data.size(); ++i) {
        const double v = std::clamp(img.data[i], 0.0, 1.0);
        body[std::size_t(i)] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
    }
    return out.str() + body;
}

Image decode_pnm(const std::string& bytes) {
    std::istringstream in(bytes);
    std::string magic;
    Index w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (!in || (magic != "P5" && magic != "P6") || w < 1 || h < 1 || maxval != 255)
        throw FormatError("decode_pnm: unsupported or malformed header");
    in.get();
    const Index c = magic == "P5" ? 1 : 3;
    const auto offset = static_cast<std::size_t>(in.tellg());
    if (bytes.size() - offset != static_cast<std::size_t>(w * h * c)) throw FormatError("decode_pnm: truncated pixel data");
    Image img(h, w, c);
    for (Index i = 0; i < img.data.size(); ++i)
        img.data[i] = double(static_cast<unsigned char>(bytes[offset + std::size_t(i)])) / 255.0;
    return img;
}

void write_pnm(const std::filesystem::path& path, const Image& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open '" + path.string() + "' for writing");
    const std::string bytes = encode_pnm(img);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw FormatError("failed writing '" + path.string() + "'");
}

Image read_pnm(const std::filesystem::path& path) { return decode_pnm(read_text_file(path)); }

} // namespace far
