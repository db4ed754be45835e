#pragma once

// Binary checkpoint format for model parameters.
//
// Layout (all integers little-endian regardless of host):
//   magic   4 bytes  "UNXT"
//   version u32      currently 1
//   count   u64      number of tensors
//   per tensor:
//     name_len u32, name bytes (UTF-8, no terminator)
//     rank     u32, dims u64 x rank
//     data     numel x 32-bit IEEE-754 little-endian values
//
// Values are always stored in 32 bits; saving a 64-bit model narrows them.
// Loading validates the whole file against the target model before touching
// any parameter, so a failed load leaves the model unchanged. Window sizes
// are not part of any tensor shape, so a classification-mode checkpoint
// loads into a dense-mode model of the same variant without change.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "uninext/model.hpp"

namespace uninext {

inline constexpr char kCheckpointMagic[4] = {'U', 'N', 'X', 'T'};
inline constexpr uint32_t kCheckpointVersion = 1;

// Distinct load-error types so callers can tell a corrupt or foreign file
// from a structurally mismatched model without parsing messages.
struct CheckpointError : Error {
    explicit CheckpointError(const std::string& msg) : Error("checkpoint error: " + msg) {}
};
struct CheckpointIoError : CheckpointError {
    explicit CheckpointIoError(const std::string& msg) : CheckpointError("io: " + msg) {}
};
struct CheckpointMagicError : CheckpointError {
    explicit CheckpointMagicError(const std::string& msg) : CheckpointError("magic: " + msg) {}
};
struct CheckpointVersionError : CheckpointError {
    explicit CheckpointVersionError(const std::string& msg)
        : CheckpointError("version: " + msg) {}
};
struct CheckpointNameError : CheckpointError {
    explicit CheckpointNameError(const std::string& msg) : CheckpointError("name: " + msg) {}
};
struct CheckpointDimError : CheckpointError {
    explicit CheckpointDimError(const std::string& msg) : CheckpointError("dims: " + msg) {}
};

namespace detail {

inline void put_u32(std::ostream& os, uint32_t v) {
    const unsigned char b[4] = {
        static_cast<unsigned char>(v & 0xff),
        static_cast<unsigned char>((v >> 8) & 0xff),
        static_cast<unsigned char>((v >> 16) & 0xff),
        static_cast<unsigned char>((v >> 24) & 0xff),
    };
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, uint64_t v) {
    put_u32(os, static_cast<uint32_t>(v & 0xffffffffull));
    put_u32(os, static_cast<uint32_t>(v >> 32));
}

inline void put_f32(std::ostream& os, float v) {
    uint32_t bits = 0;
    std::memcpy(&bits, &v, 4);
    put_u32(os, bits);
}

inline void need_bytes(std::istream& is, char* dst, size_t n, const char* what) {
    if (!is.read(dst, static_cast<std::streamsize>(n))) {
        throw CheckpointIoError(std::string("truncated file while reading ") + what);
    }
}

inline uint32_t get_u32(std::istream& is, const char* what) {
    unsigned char b[4];
    need_bytes(is, reinterpret_cast<char*>(b), 4, what);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline uint64_t get_u64(std::istream& is, const char* what) {
    const uint64_t lo = get_u32(is, what);
    const uint64_t hi = get_u32(is, what);
    return lo | (hi << 32);
}

inline float get_f32(std::istream& is, const char* what) {
    const uint32_t bits = get_u32(is, what);
    float v = 0.0f;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace detail

template <typename T>
void checkpoint_save(const Model<T>& m, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointIoError("cannot open '" + path + "' for writing");
    os.write(kCheckpointMagic, 4);
    detail::put_u32(os, kCheckpointVersion);
    detail::put_u64(os, static_cast<uint64_t>(m.params.size()));
    for (const auto& p : m.params) {
        detail::put_u32(os, static_cast<uint32_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        const Dims d = p.value.dims();
        detail::put_u32(os, static_cast<uint32_t>(d.size()));
        for (int64_t v : d) detail::put_u64(os, static_cast<uint64_t>(v));
        const T* src = p.value.data();
        for (int64_t i = 0; i < p.value.numel(); ++i) {
            detail::put_f32(os, static_cast<float>(src[i]));
        }
    }
    if (!os) throw CheckpointIoError("write to '" + path + "' failed");
}

template <typename T>
void checkpoint_load(const std::string& path, Model<T>& m) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointIoError("cannot open '" + path + "' for reading");

    char magic[4];
    detail::need_bytes(is, magic, 4, "magic");
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0) {
        throw CheckpointMagicError("'" + path + "' does not start with UNXT");
    }
    const uint32_t version = detail::get_u32(is, "version");
    if (version != kCheckpointVersion) {
        throw CheckpointVersionError("file has version " + std::to_string(version) +
                                     ", expected " + std::to_string(kCheckpointVersion));
    }
    const uint64_t count = detail::get_u64(is, "tensor count");
    if (count != m.params.size()) {
        throw CheckpointNameError("file holds " + std::to_string(count) +
                                  " tensors but the model has " +
                                  std::to_string(m.params.size()));
    }

    // Parse and validate everything into staging storage first so a failed
    // load cannot leave the model half-assigned.
    std::vector<std::vector<T>> staged(m.params.size());
    for (size_t i = 0; i < m.params.size(); ++i) {
        const Param<T>& p = m.params[i];
        const uint32_t name_len = detail::get_u32(is, "tensor name length");
        if (name_len > 4096) {
            throw CheckpointIoError("implausible name length " + std::to_string(name_len) +
                                    " for tensor " + std::to_string(i));
        }
        std::string name(name_len, '\0');
        detail::need_bytes(is, name.data(), name_len, "tensor name");
        if (name != p.name) {
            throw CheckpointNameError("tensor " + std::to_string(i) + " is named '" + name +
                                      "' in the file but '" + p.name + "' in the model");
        }
        const uint32_t rank = detail::get_u32(is, "tensor rank");
        if (rank > 16) {
            throw CheckpointIoError("implausible rank " + std::to_string(rank) +
                                    " for tensor '" + name + "'");
        }
        Dims dims(rank);
        for (uint32_t r = 0; r < rank; ++r) {
            dims[r] = static_cast<int64_t>(detail::get_u64(is, "tensor dims"));
        }
        if (dims != p.value.dims()) {
            throw CheckpointDimError("tensor '" + name + "' has dims " + dims_str(dims) +
                                     " in the file but " + dims_str(p.value.dims()) +
                                     " in the model");
        }
        auto& dst = staged[i];
        dst.resize(static_cast<size_t>(p.value.numel()));
        for (auto& v : dst) v = static_cast<T>(detail::get_f32(is, "tensor data"));
    }
    if (is.peek() != std::char_traits<char>::eof()) {
        throw CheckpointIoError("trailing bytes after the last tensor in '" + path + "'");
    }

    for (size_t i = 0; i < m.params.size(); ++i) {
        T* dst = m.params[i].value.data();
        const auto& src = staged[i];
        std::copy(src.begin(), src.end(), dst);
    }
}

}  // namespace uninext
