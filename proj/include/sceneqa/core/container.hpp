#pragma once

// Versioned binary container for named tensors.
//
// Layout (all integers little endian):
//   magic "SQTC" | u32 version | u32 meta_len | meta bytes (JSON)
//   u32 entry_count
//   per entry: u32 name_len | name | u8 dtype (0=f32, 1=f64)
//              u32 rows | u32 cols | u64 byte_len | raw values
//   trailer:   u64 payload_len | u64 fnv1a64(payload)
// The payload covers everything before the trailer. Loading verifies magic,
// version, payload length and checksum before touching any entry.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "sceneqa/core/error.hpp"

namespace sceneqa {

struct TensorBlob {
    int rows = 0;
    int cols = 0;
    bool f64 = true;
    std::vector<double> values;  // held as double regardless of stored width
};

namespace detail {

constexpr std::uint32_t kContainerVersion = 1;

inline std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

template <class T>
void put_le(std::string& out, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i)
        out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

template <class T>
T get_le(const std::string& in, std::size_t& off) {
    if (off + sizeof(T) > in.size()) throw IntegrityError("container: truncated payload");
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[off + i])) << (8 * i);
    off += sizeof(T);
    return static_cast<T>(v);
}

inline void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_le(out, bits);
}

inline void put_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_le(out, bits);
}

inline float get_f32(const std::string& in, std::size_t& off) {
    std::uint32_t bits = get_le<std::uint32_t>(in, off);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

inline double get_f64(const std::string& in, std::size_t& off) {
    std::uint64_t bits = get_le<std::uint64_t>(in, off);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace detail

inline void save_container(const std::string& path, const std::map<std::string, TensorBlob>& tensors,
                           const std::string& meta_json) {
    std::string payload;
    payload += "SQTC";
    detail::put_le<std::uint32_t>(payload, detail::kContainerVersion);
    detail::put_le<std::uint32_t>(payload, static_cast<std::uint32_t>(meta_json.size()));
    payload += meta_json;
    detail::put_le<std::uint32_t>(payload, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, blob] : tensors) {
        detail::put_le<std::uint32_t>(payload, static_cast<std::uint32_t>(name.size()));
        payload += name;
        payload.push_back(blob.f64 ? char(1) : char(0));
        detail::put_le<std::uint32_t>(payload, static_cast<std::uint32_t>(blob.rows));
        detail::put_le<std::uint32_t>(payload, static_cast<std::uint32_t>(blob.cols));
        std::uint64_t byte_len =
            static_cast<std::uint64_t>(blob.values.size()) * (blob.f64 ? 8 : 4);
        detail::put_le<std::uint64_t>(payload, byte_len);
        for (double v : blob.values) {
            if (blob.f64)
                detail::put_f64(payload, v);
            else
                detail::put_f32(payload, static_cast<float>(v));
        }
    }
    std::string trailer;
    detail::put_le<std::uint64_t>(trailer, static_cast<std::uint64_t>(payload.size()));
    detail::put_le<std::uint64_t>(trailer, detail::fnv1a64(payload));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("container: cannot open '" + path + "' for writing");
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    out.write(trailer.data(), static_cast<std::streamsize>(trailer.size()));
    if (!out) throw DataError("container: write to '" + path + "' failed");
}

inline std::map<std::string, TensorBlob> load_container(const std::string& path,
                                                        std::string* meta_json_out = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("container: cannot open '" + path + "'");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (bytes.size() < 4 + 4 + 16) throw IntegrityError("container: file too short");
    std::string payload = bytes.substr(0, bytes.size() - 16);
    std::size_t toff = bytes.size() - 16;
    std::uint64_t stored_len = detail::get_le<std::uint64_t>(bytes, toff);
    std::uint64_t stored_sum = detail::get_le<std::uint64_t>(bytes, toff);
    if (stored_len != payload.size())
        throw IntegrityError("container: payload length mismatch (stored " +
                             std::to_string(stored_len) + ", actual " +
                             std::to_string(payload.size()) + ")");
    if (stored_sum != detail::fnv1a64(payload))
        throw IntegrityError("container: checksum mismatch, file is corrupt");

    std::size_t off = 0;
    if (payload.compare(0, 4, "SQTC") != 0)
        throw IntegrityError("container: bad magic, not a tensor container");
    off = 4;
    std::uint32_t version = detail::get_le<std::uint32_t>(payload, off);
    if (version != detail::kContainerVersion)
        throw IntegrityError("container: unsupported version " + std::to_string(version));
    std::uint32_t meta_len = detail::get_le<std::uint32_t>(payload, off);
    if (off + meta_len > payload.size()) throw IntegrityError("container: truncated metadata");
    if (meta_json_out) *meta_json_out = payload.substr(off, meta_len);
    off += meta_len;

    std::uint32_t count = detail::get_le<std::uint32_t>(payload, off);
    std::map<std::string, TensorBlob> out;
    for (std::uint32_t e = 0; e < count; ++e) {
        std::uint32_t name_len = detail::get_le<std::uint32_t>(payload, off);
        if (off + name_len > payload.size()) throw IntegrityError("container: truncated name");
        std::string name = payload.substr(off, name_len);
        off += name_len;
        std::uint8_t dtype = detail::get_le<std::uint8_t>(payload, off);
        if (dtype > 1) throw IntegrityError("container: unknown dtype for '" + name + "'");
        TensorBlob blob;
        blob.f64 = dtype == 1;
        blob.rows = static_cast<int>(detail::get_le<std::uint32_t>(payload, off));
        blob.cols = static_cast<int>(detail::get_le<std::uint32_t>(payload, off));
        std::uint64_t byte_len = detail::get_le<std::uint64_t>(payload, off);
        std::uint64_t expect =
            static_cast<std::uint64_t>(blob.rows) * blob.cols * (blob.f64 ? 8 : 4);
        if (byte_len != expect)
            throw IntegrityError("container: entry '" + name + "' length does not match shape");
        std::size_t n = static_cast<std::size_t>(blob.rows) * blob.cols;
        blob.values.reserve(n);
        for (std::size_t i = 0; i < n; ++i)
            blob.values.push_back(blob.f64 ? detail::get_f64(payload, off)
                                           : static_cast<double>(detail::get_f32(payload, off)));
        out.emplace(std::move(name), std::move(blob));
    }
    return out;
}

}  // namespace sceneqa
