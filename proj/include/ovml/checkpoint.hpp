#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ovml/parameter.hpp"
#include "ovml/rng.hpp"

namespace ovml {

// Flat binary checkpoint: header (magic, format version, parameter count)
// followed by one record per parameter in registration order:
//   u32 name length, name bytes, u32 ndims, u32 dims[], f32 data[] (row-major).
// All integers and floats little-endian.

inline constexpr std::uint32_t kCheckpointMagic = 0x4f564d4c;  // "OVML"
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}

class ByteReader {
public:
    ByteReader(const std::string& bytes) : bytes_(bytes) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }

    float f32() {
        const std::uint32_t bits = u32();
        float f;
        std::memcpy(&f, &bits, 4);
        return f;
    }

    std::string str(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool exhausted() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw std::runtime_error("truncated file");
    }
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

// Writes atomically: temp file in the same directory, then rename.
inline void write_file_bytes(const std::string& path, const std::string& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write file: " + tmp);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace detail

template <typename T>
std::string serialize_checkpoint(const ParameterStore<T>& store) {
    std::string out;
    detail::put_u32(out, kCheckpointMagic);
    detail::put_u32(out, kCheckpointVersion);
    detail::put_u64(out, store.size());
    for (std::size_t i = 0; i < store.size(); ++i) {
        const Parameter<T>& p = store.at(i);
        detail::put_u32(out, static_cast<std::uint32_t>(p.name.size()));
        out.append(p.name);
        detail::put_u32(out, static_cast<std::uint32_t>(p.values.dims().size()));
        for (int d : p.values.dims()) detail::put_u32(out, static_cast<std::uint32_t>(d));
        for (std::size_t j = 0; j < p.values.numel(); ++j)
            detail::put_f32(out, static_cast<float>(p.values[j]));
    }
    return out;
}

template <typename T>
void save_checkpoint(const ParameterStore<T>& store, const std::string& path) {
    detail::write_file_bytes(path, serialize_checkpoint(store));
}

// Loads parameter values into an already constructed store. Shapes and
// names must match exactly.
template <typename T>
void load_checkpoint(ParameterStore<T>& store, const std::string& path) {
    const std::string bytes = detail::read_file_bytes(path);
    detail::ByteReader r(bytes);
    if (r.u32() != kCheckpointMagic) throw std::runtime_error("not a checkpoint file: " + path);
    if (r.u32() != kCheckpointVersion) throw std::runtime_error("checkpoint version mismatch");
    const std::uint64_t count = r.u64();
    if (count != store.size()) throw std::runtime_error("checkpoint parameter count mismatch");
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = r.u32();
        const std::string name = r.str(name_len);
        Parameter<T>& p = store.get(name);
        const std::uint32_t ndims = r.u32();
        std::vector<int> dims(ndims);
        for (auto& d : dims) d = static_cast<int>(r.u32());
        if (dims != p.values.dims())
            throw std::runtime_error("checkpoint shape mismatch for " + name);
        for (std::size_t j = 0; j < p.values.numel(); ++j) p.values[j] = static_cast<T>(r.f32());
        if (!p.trainable && p.frozen_snapshot) p.frozen_snapshot = p.values;
    }
    if (!r.exhausted()) throw std::runtime_error("trailing bytes in checkpoint");
}

inline std::uint64_t checkpoint_file_hash(const std::string& path) {
    const std::string bytes = detail::read_file_bytes(path);
    return fnv1a64_bytes(bytes.data(), bytes.size());
}

template <typename T>
std::uint64_t checkpoint_hash(const ParameterStore<T>& store) {
    const std::string bytes = serialize_checkpoint(store);
    return fnv1a64_bytes(bytes.data(), bytes.size());
}

}  // namespace ovml
