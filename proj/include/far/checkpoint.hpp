#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "far/tensor.hpp"

namespace far {

/// fp32 tensor with a name and shape, as stored in a FAR1 container.
struct NamedTensor {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> values;

    std::size_t numel() const;

    template <typename Scalar>
    static NamedTensor from(std::string name, const Mat<Scalar>& m) {
        NamedTensor t;
        t.name = std::move(name);
        t.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
        t.values.resize(static_cast<std::size_t>(m.size()));
        for (Index i = 0; i < m.size(); ++i) t.values[std::size_t(i)] = static_cast<float>(m.data()[i]);
        return t;
    }

    /// Copies into `m`, which must already have the stored shape.
    template <typename Scalar>
    void copy_to(Mat<Scalar>& m) const {
        if (dims.size() != 2 || dims[0] != std::uint32_t(m.rows()) || dims[1] != std::uint32_t(m.cols()))
            throw FormatError("tensor '" + name + "' has unexpected shape");
        for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(values[std::size_t(i)]);
    }
};

/// Versioned little-endian container:
///   "FAR1" | u16 version | u32 metadata length | metadata bytes |
///   u32 tensor count | per tensor: u32 name length, name, u32 rank, u32 dims[rank], f32 payload |
///   u32 CRC32 of every preceding byte.
struct Container {
    static constexpr std::uint16_t kVersion = 1;

    std::string metadata;
    std::vector<NamedTensor> tensors;

    std::string serialize() const;
    static Container parse(std::string_view bytes);

    void save(const std::filesystem::path& path) const;
    static Container load(const std::filesystem::path& path);

    const NamedTensor& get(const std::string& name) const;
    bool contains(const std::string& name) const;
    void add(NamedTensor t) { tensors.push_back(std::move(t)); }
};

std::uint32_t crc32_of(std::string_view bytes);

} // namespace far
