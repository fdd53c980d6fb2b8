#include "far/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include <zlib.h>

namespace far {

namespace {

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(char(v & 0xff));
    out.push_back(char((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    std::string_view take(std::size_t n) {
        if (n > bytes_.size() - pos_) throw FormatError("checkpoint: truncated file");
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::uint32_t u32() {
        const auto s = take(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(s[std::size_t(i)])) << (8 * i);
        return v;
    }

    std::uint16_t u16() {
        const auto s = take(2);
        return std::uint16_t(static_cast<unsigned char>(s[0]) | (static_cast<unsigned char>(s[1]) << 8));
    }

    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

} // namespace

std::size_t NamedTensor::numel() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

std::uint32_t crc32_of(std::string_view bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
    return static_cast<std::uint32_t>(crc);
}

std::string Container::serialize() const {
    std::string out = "FAR1";
    put_u16(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(metadata.size()));
    out += metadata;
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        if (t.numel() != t.values.size()) throw FormatError("checkpoint: tensor '" + t.name + "' size mismatch");
        put_u32(out, static_cast<std::uint32_t>(t.name.size()));
        out += t.name;
        put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
        for (auto d : t.dims) put_u32(out, d);
        for (float v : t.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
    }
    put_u32(out, crc32_of(out));
    return out;
}

Container Container::parse(std::string_view bytes) {
    if (bytes.size() < 4 + 2 + 4 + 4 + 4) throw FormatError("checkpoint: truncated file");
    const auto body = bytes.substr(0, bytes.size() - 4);
    Reader tail(bytes.substr(bytes.size() - 4));
    if (tail.u32() != crc32_of(body)) throw FormatError("checkpoint: CRC32 mismatch (corrupt file)");
    if (bytes.substr(0, 4) != "FAR1") throw FormatError("checkpoint: bad magic");

    Reader r(body);
    r.take(4);
    const auto version = r.u16();
    if (version != kVersion)
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    Container c;
    c.metadata = std::string(r.take(r.u32()));
    const auto count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        t.name = std::string(r.take(r.u32()));
        const auto rank = r.u32();
        if (rank > 8) throw FormatError("checkpoint: implausible tensor rank");
        for (std::uint32_t k = 0; k < rank; ++k) t.dims.push_back(r.u32());
        const std::size_t n = t.numel();
        if (n > r.remaining() / 4) throw FormatError("checkpoint: truncated tensor payload");
        t.values.resize(n);
        for (auto& v : t.values) v = std::bit_cast<float>(r.u32());
        c.tensors.push_back(std::move(t));
    }
    if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes");
    return c;
}

void Container::save(const std::filesystem::path& path) const {
    const std::string bytes = serialize();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write '" + path.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write failed for '" + path.string() + "'");
}

Container Container::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

const NamedTensor& Container::get(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return t;
    throw FormatError("checkpoint: missing tensor '" + name + "'");
}

bool Container::contains(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return true;
    return false;
}

} // namespace far
