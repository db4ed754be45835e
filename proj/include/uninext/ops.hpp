#pragma once

// Validated recording API over the tape. Every function checks shapes/attrs
// and throws ShapeError/UsageError naming the primitive before anything is
// recorded; kernels may then assume well-formed inputs.

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "uninext/autodiff.hpp"

namespace uninext {

namespace detail {
template <typename T>
Tape<T>& same_tape(const char* op, std::initializer_list<Var<T>> vs) {
    Tape<T>* t = nullptr;
    for (const Var<T>& v : vs) {
        if (!v.valid()) throw UsageError(std::string(op) + ": unbound input Var");
        if (t == nullptr) t = v.tape;
        if (v.tape != t) throw UsageError(std::string(op) + ": inputs from different tapes");
    }
    return *t;
}
}  // namespace detail

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    Tape<T>& t = detail::same_tape<T>("add", {a, b});
    broadcast_dims(a.dims(), b.dims(), "add");
    return t.apply(OpKind::kAdd, {a, b});
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
    Tape<T>& t = detail::same_tape<T>("sub", {a, b});
    broadcast_dims(a.dims(), b.dims(), "sub");
    return t.apply(OpKind::kSub, {a, b});
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    Tape<T>& t = detail::same_tape<T>("mul", {a, b});
    broadcast_dims(a.dims(), b.dims(), "mul");
    return t.apply(OpKind::kMul, {a, b});
}

template <typename T>
Var<T> scale(Var<T> a, double alpha) {
    Tape<T>& t = detail::same_tape<T>("scale", {a});
    return t.apply(OpKind::kScale, {a}, ScaleAttrs{alpha});
}

template <typename T>
Var<T> exp(Var<T> a) {
    return detail::same_tape<T>("exp", {a}).apply(OpKind::kExp, {a});
}
template <typename T>
Var<T> reciprocal(Var<T> a) {
    return detail::same_tape<T>("reciprocal", {a}).apply(OpKind::kReciprocal, {a});
}
template <typename T>
Var<T> sqrt(Var<T> a) {
    return detail::same_tape<T>("sqrt", {a}).apply(OpKind::kSqrt, {a});
}
template <typename T>
Var<T> gelu(Var<T> a) {
    return detail::same_tape<T>("gelu", {a}).apply(OpKind::kGelu, {a});
}

// Batched matmul: (..., M, K) x (..., K, N); the right operand either shares
// the left operand's leading dims or is rank-2 (a shared weight).
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
    Tape<T>& t = detail::same_tape<T>("matmul", {a, b});
    const Dims &da = a.dims(), &db = b.dims();
    const bool ok_rank = da.size() >= 2 && (db.size() == 2 || db.size() == da.size());
    bool ok = ok_rank && da.back() == db[db.size() - 2];
    if (ok && db.size() == da.size() && da.size() > 2) {
        ok = std::equal(da.begin(), da.end() - 2, db.begin());
    }
    if (!ok) {
        throw ShapeError("matmul: incompatible operands " + dims_str(da) + " x " + dims_str(db));
    }
    return t.apply(OpKind::kMatmul, {a, b});
}

namespace detail {
inline ReduceAttrs make_reduce_attrs(const char* op, const Dims& in, std::vector<int> axes,
                                     bool keepdims) {
    const int rank = static_cast<int>(in.size());
    if (axes.empty()) {
        for (int i = 0; i < rank; ++i) axes.push_back(i);
    }
    std::set<int> norm;
    for (int ax : axes) {
        if (ax < 0) ax += rank;
        if (ax < 0 || ax >= rank) {
            throw UsageError(std::string(op) + ": axis out of range for rank " +
                             std::to_string(rank));
        }
        norm.insert(ax);
    }
    return ReduceAttrs{std::vector<int>(norm.begin(), norm.end()), keepdims};
}
}  // namespace detail

template <typename T>
Var<T> reduce_sum(Var<T> a, std::vector<int> axes = {}, bool keepdims = false) {
    Tape<T>& t = detail::same_tape<T>("reduce_sum", {a});
    return t.apply(OpKind::kReduceSum, {a},
                   detail::make_reduce_attrs("reduce_sum", a.dims(), std::move(axes), keepdims));
}

template <typename T>
Var<T> reduce_mean(Var<T> a, std::vector<int> axes = {}, bool keepdims = false) {
    Tape<T>& t = detail::same_tape<T>("reduce_mean", {a});
    return t.apply(OpKind::kReduceMean, {a},
                   detail::make_reduce_attrs("reduce_mean", a.dims(), std::move(axes), keepdims));
}

template <typename T>
Var<T> broadcast_to(Var<T> a, Dims dims) {
    Tape<T>& t = detail::same_tape<T>("broadcast_to", {a});
    const Dims& in = a.dims();
    bool ok = in.size() <= dims.size();
    if (ok) {
        const size_t off = dims.size() - in.size();
        for (size_t i = 0; i < in.size(); ++i) {
            if (in[i] != 1 && in[i] != dims[off + i]) ok = false;
        }
    }
    if (!ok) {
        throw ShapeError("broadcast_to: cannot expand " + dims_str(in) + " to " + dims_str(dims));
    }
    return t.apply(OpKind::kBroadcastTo, {a}, DimsAttrs{std::move(dims)});
}

template <typename T>
Var<T> transpose(Var<T> a, std::vector<int> perm) {
    Tape<T>& t = detail::same_tape<T>("transpose", {a});
    const int rank = static_cast<int>(a.rank());
    std::vector<bool> seen(static_cast<size_t>(rank), false);
    bool ok = static_cast<int>(perm.size()) == rank;
    if (ok) {
        for (int p : perm) {
            if (p < 0 || p >= rank || seen[static_cast<size_t>(p)]) {
                ok = false;
                break;
            }
            seen[static_cast<size_t>(p)] = true;
        }
    }
    if (!ok) {
        throw UsageError("transpose: invalid permutation for rank " + std::to_string(rank));
    }
    return t.apply(OpKind::kTranspose, {a}, PermAttrs{std::move(perm)});
}

template <typename T>
Var<T> reshape(Var<T> a, Dims dims) {
    Tape<T>& t = detail::same_tape<T>("reshape", {a});
    if (numel_of(dims) != a.val().numel()) {
        throw ShapeError("reshape: " + dims_str(a.dims()) + " to " + dims_str(dims) +
                         " changes element count");
    }
    return t.apply(OpKind::kReshape, {a}, DimsAttrs{std::move(dims)});
}

template <typename T>
Var<T> slice(Var<T> a, Dims start, Dims extent) {
    Tape<T>& t = detail::same_tape<T>("slice", {a});
    const Dims& in = a.dims();
    bool ok = start.size() == in.size() && extent.size() == in.size();
    if (ok) {
        for (size_t d = 0; d < in.size(); ++d) {
            if (start[d] < 0 || extent[d] < 0 || start[d] + extent[d] > in[d]) ok = false;
        }
    }
    if (!ok) {
        throw ShapeError("slice: window start " + dims_str(start) + " extent " +
                         dims_str(extent) + " out of bounds for " + dims_str(in));
    }
    return t.apply(OpKind::kSlice, {a}, SliceAttrs{std::move(start), std::move(extent)});
}

template <typename T>
Var<T> pad(Var<T> a, Dims lo, Dims hi) {
    Tape<T>& t = detail::same_tape<T>("pad", {a});
    const Dims& in = a.dims();
    bool ok = lo.size() == in.size() && hi.size() == in.size();
    if (ok) {
        for (size_t d = 0; d < in.size(); ++d) {
            if (lo[d] < 0 || hi[d] < 0) ok = false;
        }
    }
    if (!ok) {
        throw ShapeError("pad: invalid amounts lo " + dims_str(lo) + " hi " + dims_str(hi) +
                         " for " + dims_str(in));
    }
    return t.apply(OpKind::kPad, {a}, PadAttrs{std::move(lo), std::move(hi)});
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, int axis) {
    if (parts.empty()) throw UsageError("concat: no inputs");
    Tape<T>* tp = parts[0].tape;
    const Dims& d0 = parts[0].dims();
    const int rank = static_cast<int>(d0.size());
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) {
        throw UsageError("concat: axis out of range for rank " + std::to_string(rank));
    }
    for (const Var<T>& p : parts) {
        detail::same_tape<T>("concat", {parts[0], p});
        const Dims& d = p.dims();
        bool ok = static_cast<int>(d.size()) == rank;
        if (ok) {
            for (int i = 0; i < rank; ++i) {
                if (i != axis && d[i] != d0[i]) ok = false;
            }
        }
        if (!ok) {
            throw ShapeError("concat: part " + dims_str(d) + " mismatches " + dims_str(d0) +
                             " outside axis " + std::to_string(axis));
        }
    }
    return tp->apply(OpKind::kConcat, parts, ConcatAttrs{axis});
}

// x (B, Cin, H, W), w (Cout, Cin/groups, kh, kw), optional bias (Cout).
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> bias, int64_t stride_h, int64_t stride_w, int64_t pad_h,
              int64_t pad_w, int64_t groups = 1) {
    const bool has_bias = bias.valid();
    Tape<T>& t = has_bias ? detail::same_tape<T>("conv2d", {x, w, bias})
                          : detail::same_tape<T>("conv2d", {x, w});
    const Dims &dx = x.dims(), &dw = w.dims();
    if (dx.size() != 4 || dw.size() != 4) {
        throw ShapeError("conv2d: needs rank-4 input and weight, got " + dims_str(dx) + " and " +
                         dims_str(dw));
    }
    if (stride_h < 1 || stride_w < 1 || pad_h < 0 || pad_w < 0 || groups < 1) {
        throw UsageError("conv2d: invalid stride/pad/groups");
    }
    if (dx[1] % groups != 0 || dw[0] % groups != 0 || dw[1] != dx[1] / groups) {
        throw ShapeError("conv2d: channel mismatch for input " + dims_str(dx) + ", weight " +
                         dims_str(dw) + ", groups " + std::to_string(groups));
    }
    if (has_bias && bias.dims() != Dims{dw[0]}) {
        throw ShapeError("conv2d: bias " + dims_str(bias.dims()) + " must be [" +
                         std::to_string(dw[0]) + "]");
    }
    if (dx[2] + 2 * pad_h < dw[2] || dx[3] + 2 * pad_w < dw[3]) {
        throw ShapeError("conv2d: kernel " + dims_str(dw) + " larger than padded input " +
                         dims_str(dx));
    }
    const ConvAttrs attrs{stride_h, stride_w, pad_h, pad_w, groups};
    if (has_bias) return t.apply(OpKind::kConv2d, {x, w, bias}, attrs);
    return t.apply(OpKind::kConv2d, {x, w}, attrs);
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> bias, int64_t stride, int64_t pad, int64_t groups = 1) {
    return conv2d(x, w, bias, stride, stride, pad, pad, groups);
}

template <typename T>
Var<T> avg_pool(Var<T> x, int64_t kh, int64_t kw, int64_t stride_h, int64_t stride_w,
                int64_t pad_h, int64_t pad_w) {
    Tape<T>& t = detail::same_tape<T>("avg_pool", {x});
    const Dims& dx = x.dims();
    if (dx.size() != 4) throw ShapeError("avg_pool: needs rank-4 input, got " + dims_str(dx));
    if (kh < 1 || kw < 1 || stride_h < 1 || stride_w < 1 || pad_h < 0 || pad_w < 0) {
        throw UsageError("avg_pool: invalid kernel/stride/pad");
    }
    if (pad_h >= kh || pad_w >= kw) {
        throw UsageError("avg_pool: padding must be smaller than the kernel");
    }
    if (dx[2] + 2 * pad_h < kh || dx[3] + 2 * pad_w < kw) {
        throw ShapeError("avg_pool: kernel larger than padded input " + dims_str(dx));
    }
    return t.apply(OpKind::kAvgPool, {x}, PoolAttrs{kh, kw, stride_h, stride_w, pad_h, pad_w});
}

// Normalizes the last axis; gamma/beta are [C].
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, double eps = 1e-6) {
    Tape<T>& t = detail::same_tape<T>("layer_norm", {x, gamma, beta});
    const Dims& dx = x.dims();
    if (dx.empty()) throw ShapeError("layer_norm: scalar input");
    const int64_t C = dx.back();
    if (gamma.dims() != Dims{C} || beta.dims() != Dims{C}) {
        throw ShapeError("layer_norm: gamma " + dims_str(gamma.dims()) + " and beta " +
                         dims_str(beta.dims()) + " must be [" + std::to_string(C) + "]");
    }
    return t.apply(OpKind::kLayerNorm, {x, gamma, beta}, NormAttrs{eps});
}

template <typename T>
Var<T> softmax(Var<T> x, int axis = -1) {
    Tape<T>& t = detail::same_tape<T>("softmax", {x});
    const int rank = static_cast<int>(x.rank());
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) {
        throw UsageError("softmax: axis out of range for rank " + std::to_string(rank));
    }
    return t.apply(OpKind::kSoftmax, {x}, SoftmaxAttrs{axis});
}

// Cyclic shift of the two trailing spatial axes of (B, C, H, W).
template <typename T>
Var<T> roll(Var<T> x, int64_t shift_h, int64_t shift_w) {
    Tape<T>& t = detail::same_tape<T>("roll", {x});
    if (x.rank() != 4) throw ShapeError("roll: needs rank-4 input, got " + dims_str(x.dims()));
    return t.apply(OpKind::kRoll, {x}, RollAttrs{shift_h, shift_w});
}

// Mean softmax cross-entropy of logits (B, K) against integer labels.
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::vector<int32_t> labels) {
    Tape<T>& t = detail::same_tape<T>("cross_entropy", {logits});
    const Dims& d = logits.dims();
    if (d.size() != 2) {
        throw ShapeError("cross_entropy: logits must be rank-2, got " + dims_str(d));
    }
    if (static_cast<int64_t>(labels.size()) != d[0]) {
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                         std::to_string(d[0]));
    }
    for (int32_t l : labels) {
        if (l < 0 || l >= d[1]) {
            throw UsageError("cross_entropy: label " + std::to_string(l) +
                             " out of range for " + std::to_string(d[1]) + " classes");
        }
    }
    return t.apply(OpKind::kCrossEntropy, {logits}, CrossEntropyAttrs{std::move(labels)});
}

template <typename T>
Var<T> operator+(Var<T> a, Var<T> b) {
    return add(a, b);
}
template <typename T>
Var<T> operator-(Var<T> a, Var<T> b) {
    return sub(a, b);
}
template <typename T>
Var<T> operator*(Var<T> a, Var<T> b) {
    return mul(a, b);
}
template <typename T>
Var<T> operator*(Var<T> a, double alpha) {
    return scale(a, alpha);
}
template <typename T>
Var<T> operator*(double alpha, Var<T> a) {
    return scale(a, alpha);
}

// Generic dispatch by primitive id; the long way to spell the named ops.
template <typename T>
Var<T> forward_primitive(Tape<T>& tape, OpKind kind, const std::vector<Var<T>>& in,
                         const Attrs& attrs = {}) {
    for (const Var<T>& v : in) {
        if (v.valid() && v.tape != &tape) {
            throw UsageError(std::string(op_name(kind)) + ": input is not a node of this tape");
        }
    }
    auto need = [&](size_t n) {
        if (in.size() != n) {
            throw UsageError(std::string(op_name(kind)) + ": expected " + std::to_string(n) +
                             " inputs, got " + std::to_string(in.size()));
        }
    };
    try {
        switch (kind) {
        case OpKind::kLeaf:
            throw UsageError("forward_primitive: leaf nodes are created with Tape::leaf");
        case OpKind::kAdd:
            need(2);
            return add(in[0], in[1]);
        case OpKind::kSub:
            need(2);
            return sub(in[0], in[1]);
        case OpKind::kMul:
            need(2);
            return mul(in[0], in[1]);
        case OpKind::kScale:
            need(1);
            return scale(in[0], std::get<ScaleAttrs>(attrs).alpha);
        case OpKind::kExp:
            need(1);
            return exp(in[0]);
        case OpKind::kReciprocal:
            need(1);
            return reciprocal(in[0]);
        case OpKind::kSqrt:
            need(1);
            return sqrt(in[0]);
        case OpKind::kGelu:
            need(1);
            return gelu(in[0]);
        case OpKind::kMatmul:
            need(2);
            return matmul(in[0], in[1]);
        case OpKind::kReduceSum: {
            need(1);
            const auto& a = std::get<ReduceAttrs>(attrs);
            return reduce_sum(in[0], a.axes, a.keepdims);
        }
        case OpKind::kReduceMean: {
            need(1);
            const auto& a = std::get<ReduceAttrs>(attrs);
            return reduce_mean(in[0], a.axes, a.keepdims);
        }
        case OpKind::kBroadcastTo:
            need(1);
            return broadcast_to(in[0], std::get<DimsAttrs>(attrs).dims);
        case OpKind::kTranspose:
            need(1);
            return transpose(in[0], std::get<PermAttrs>(attrs).perm);
        case OpKind::kReshape:
            need(1);
            return reshape(in[0], std::get<DimsAttrs>(attrs).dims);
        case OpKind::kSlice: {
            need(1);
            const auto& a = std::get<SliceAttrs>(attrs);
            return slice(in[0], a.start, a.extent);
        }
        case OpKind::kPad: {
            need(1);
            const auto& a = std::get<PadAttrs>(attrs);
            return pad(in[0], a.lo, a.hi);
        }
        case OpKind::kConcat:
            return concat(in, std::get<ConcatAttrs>(attrs).axis);
        case OpKind::kConv2d: {
            if (in.size() != 2 && in.size() != 3) {
                throw UsageError("conv2d: expected 2 or 3 inputs, got " +
                                 std::to_string(in.size()));
            }
            const auto& a = std::get<ConvAttrs>(attrs);
            Var<T> bias = in.size() == 3 ? in[2] : Var<T>{};
            return conv2d(in[0], in[1], bias, a.stride_h, a.stride_w, a.pad_h, a.pad_w, a.groups);
        }
        case OpKind::kAvgPool: {
            need(1);
            const auto& a = std::get<PoolAttrs>(attrs);
            return avg_pool(in[0], a.kh, a.kw, a.stride_h, a.stride_w, a.pad_h, a.pad_w);
        }
        case OpKind::kLayerNorm:
            need(3);
            return layer_norm(in[0], in[1], in[2], std::get<NormAttrs>(attrs).eps);
        case OpKind::kSoftmax:
            need(1);
            return softmax(in[0], std::get<SoftmaxAttrs>(attrs).axis);
        case OpKind::kRoll: {
            need(1);
            const auto& a = std::get<RollAttrs>(attrs);
            return roll(in[0], a.shift_h, a.shift_w);
        }
        case OpKind::kCrossEntropy:
            need(1);
            return cross_entropy(in[0], std::get<CrossEntropyAttrs>(attrs).labels);
        }
    } catch (const std::bad_variant_access&) {
        throw UsageError(std::string(op_name(kind)) + ": wrong attribute payload");
    }
    throw UsageError("forward_primitive: unknown primitive id " +
                     std::to_string(static_cast<int32_t>(kind)));
}

}  // namespace uninext
