#pragma once

// Flat binary checkpoint: magic "FYTC", u32 version, u64 entry count, then
// per entry: u64 name length, UTF-8 name, u64 rank, u64 extents, f32 payload.
// All integers and floats little-endian.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "fireyolo/tensor.hpp"

namespace fy {

inline constexpr char kCheckpointMagic[4] = {'F', 'Y', 'T', 'C'};
inline constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void write_le(std::ostream& os, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));  // x86: already LE
}

template <typename T>
T read_le(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path,
                            const std::vector<std::pair<std::string, TensorPtr>>& entries) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open for write: " + path);
    os.write(kCheckpointMagic, 4);
    detail::write_le<uint32_t>(os, kCheckpointVersion);
    detail::write_le<uint64_t>(os, entries.size());
    for (const auto& [name, t] : entries) {
        detail::write_le<uint64_t>(os, name.size());
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_le<uint64_t>(os, t->shape.size());
        for (long e : t->shape) detail::write_le<uint64_t>(os, static_cast<uint64_t>(e));
        os.write(reinterpret_cast<const char*>(t->data.data()),
                 static_cast<std::streamsize>(t->data.size() * sizeof(float)));
    }
    if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

inline std::map<std::string, TensorPtr> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    uint32_t version = detail::read_le<uint32_t>(is);
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    uint64_t count = detail::read_le<uint64_t>(is);
    std::map<std::string, TensorPtr> out;
    for (uint64_t i = 0; i < count; ++i) {
        uint64_t nlen = detail::read_le<uint64_t>(is);
        std::string name(nlen, '\0');
        is.read(name.data(), static_cast<std::streamsize>(nlen));
        uint64_t rank = detail::read_le<uint64_t>(is);
        std::vector<long> shape(rank);
        for (auto& e : shape) e = static_cast<long>(detail::read_le<uint64_t>(is));
        auto t = Tensor::create(shape);
        is.read(reinterpret_cast<char*>(t->data.data()),
                static_cast<std::streamsize>(t->data.size() * sizeof(float)));
        if (!is) throw std::runtime_error("checkpoint: truncated payload for " + name);
        if (out.count(name)) throw std::runtime_error("checkpoint: duplicate entry " + name);
        out[name] = t;
    }
    return out;
}

}  // namespace fy
