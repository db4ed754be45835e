#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <vector>

#include "uninext/common.hpp"
#include "uninext/rng.hpp"

namespace uninext {

// Dense row-major tensor with value semantics over shared storage.
// Copies alias the same buffer; clone() makes the data private.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Dims dims)
        : dims_(std::move(dims)),
          data_(std::make_shared<std::vector<T>>(check_numel_(dims_), T(0))) {}

    Tensor(Dims dims, std::vector<T> values) : dims_(std::move(dims)) {
        if (static_cast<int64_t>(values.size()) != check_numel_(dims_)) {
            throw ShapeError("tensor init: " + dims_str(dims_) + " needs " +
                             std::to_string(numel_of(dims_)) + " values, got " +
                             std::to_string(values.size()));
        }
        data_ = std::make_shared<std::vector<T>>(std::move(values));
    }

    static Tensor zeros(Dims dims) { return Tensor(std::move(dims)); }

    static Tensor full(Dims dims, T v) {
        Tensor t(std::move(dims));
        std::fill(t.data(), t.data() + t.numel(), v);
        return t;
    }

    static Tensor scalar(T v) { return full({}, v); }

    static Tensor normal(Dims dims, Rng& rng, double mean = 0.0, double sigma = 1.0) {
        Tensor t(std::move(dims));
        T* p = t.data();
        for (int64_t i = 0; i < t.numel(); ++i) p[i] = static_cast<T>(rng.next_normal(mean, sigma));
        return t;
    }

    static Tensor trunc_normal(Dims dims, Rng& rng, double mean = 0.0, double sigma = 0.02) {
        Tensor t(std::move(dims));
        T* p = t.data();
        for (int64_t i = 0; i < t.numel(); ++i)
            p[i] = static_cast<T>(rng.next_trunc_normal(mean, sigma));
        return t;
    }

    static Tensor uniform(Dims dims, Rng& rng, double lo, double hi) {
        Tensor t(std::move(dims));
        T* p = t.data();
        for (int64_t i = 0; i < t.numel(); ++i) p[i] = static_cast<T>(rng.next_uniform(lo, hi));
        return t;
    }

    bool defined() const { return data_ != nullptr; }
    const Dims& dims() const { return dims_; }
    int64_t rank() const { return static_cast<int64_t>(dims_.size()); }
    int64_t dim(int64_t i) const { return dims_.at(static_cast<size_t>(i)); }
    int64_t numel() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }

    T* data() { return data_->data(); }
    const T* data() const { return data_->data(); }

    T& operator[](int64_t i) { return (*data_)[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return (*data_)[static_cast<size_t>(i)]; }

    // Multi-index access for tests and small-scale code; not for hot loops.
    template <typename... I>
    T& at(I... idx) {
        return (*data_)[offset_of_(std::initializer_list<int64_t>{static_cast<int64_t>(idx)...})];
    }
    template <typename... I>
    const T& at(I... idx) const {
        return (*data_)[offset_of_(std::initializer_list<int64_t>{static_cast<int64_t>(idx)...})];
    }

    Tensor clone() const {
        Tensor t;
        t.dims_ = dims_;
        t.data_ = std::make_shared<std::vector<T>>(*data_);
        return t;
    }

    // Same dims, data reinterpreted in a new shape (shared storage).
    Tensor reshaped(Dims dims) const {
        if (numel_of(dims) != numel()) {
            throw ShapeError("reshape: " + dims_str(dims_) + " to " + dims_str(dims) +
                             " changes element count");
        }
        Tensor t;
        t.dims_ = std::move(dims);
        t.data_ = data_;
        return t;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> t(dims_);
        const T* src = data();
        U* dst = t.data();
        for (int64_t i = 0; i < numel(); ++i) dst[i] = static_cast<U>(src[i]);
        return t;
    }

    bool all_finite() const {
        const T* p = data();
        for (int64_t i = 0; i < numel(); ++i)
            if (!std::isfinite(static_cast<double>(p[i]))) return false;
        return true;
    }

private:
    static int64_t check_numel_(const Dims& dims) {
        for (int64_t d : dims) {
            if (d < 0) throw ShapeError("tensor init: negative extent in " + dims_str(dims));
        }
        return numel_of(dims);
    }

    size_t offset_of_(std::initializer_list<int64_t> idx) const {
        if (static_cast<int64_t>(idx.size()) != rank()) {
            throw UsageError("tensor at(): " + std::to_string(idx.size()) +
                             " indices for rank " + std::to_string(rank()));
        }
        int64_t off = 0;
        auto it = idx.begin();
        for (size_t i = 0; i < dims_.size(); ++i, ++it) off = off * dims_[i] + *it;
        return static_cast<size_t>(off);
    }

    Dims dims_;
    std::shared_ptr<std::vector<T>> data_;
};

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.dims() != b.dims()) {
        throw ShapeError("max_abs_diff: " + dims_str(a.dims()) + " vs " + dims_str(b.dims()));
    }
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    }
    return m;
}

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.dims() != b.dims()) return false;
    for (int64_t i = 0; i < a.numel(); ++i) {
        if (std::memcmp(&a[i], &b[i], sizeof(T)) != 0) return false;
    }
    return true;
}

}  // namespace uninext
