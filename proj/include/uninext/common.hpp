#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace uninext {

// Error taxonomy. Shape/usage/config errors indicate caller mistakes,
// numeric errors indicate non-finite values or failed checks at runtime.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error("shape error: " + msg) {}
};
struct UsageError : Error {
    explicit UsageError(const std::string& msg) : Error("usage error: " + msg) {}
};
struct StateError : Error {
    explicit StateError(const std::string& msg) : Error("state error: " + msg) {}
};
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error("numeric error: " + msg) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

using Dims = std::vector<int64_t>;

inline int64_t numel_of(const Dims& dims) {
    int64_t n = 1;
    for (int64_t d : dims) n *= d;
    return n;
}

inline Dims row_major_strides(const Dims& dims) {
    Dims s(dims.size());
    int64_t acc = 1;
    for (size_t i = dims.size(); i-- > 0;) {
        s[i] = acc;
        acc *= dims[i];
    }
    return s;
}

inline std::string dims_str(const Dims& dims) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < dims.size(); ++i) {
        if (i) os << ",";
        os << dims[i];
    }
    os << "]";
    return os.str();
}

// Trailing-aligned broadcast of two shapes. Throws if incompatible.
inline Dims broadcast_dims(const Dims& a, const Dims& b, const char* op) {
    size_t rank = std::max(a.size(), b.size());
    Dims out(rank);
    for (size_t i = 0; i < rank; ++i) {
        int64_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        int64_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (da != db && da != 1 && db != 1) {
            throw ShapeError(std::string(op) + ": cannot broadcast " + dims_str(a) +
                             " with " + dims_str(b));
        }
        out[i] = std::max(da, db);
    }
    return out;
}

}  // namespace uninext
