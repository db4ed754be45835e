#pragma once

// Value-level forward/backward kernels for every autodiff primitive.
// Recording and tape replay both funnel through eval_op, so replayed values
// are bit-identical to recorded ones by construction. Backward kernels
// accumulate (+=) into pre-allocated, zero-initialized parent grad buffers.
//
// Determinism notes: every accumulation loop runs in a fixed ascending order,
// and the build disables FP contraction, so results are reproducible at the
// bit level across runs. Matrix products accumulate k-ascending; the im2col
// convolution path therefore matches a naive 7-loop convolution exactly
// (bias first, then (ci, kh, kw)-ascending products).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <variant>
#include <vector>

#include "uninext/common.hpp"
#include "uninext/tensor.hpp"

namespace uninext {

enum class OpKind : int32_t {
    kLeaf = 0,
    kAdd,
    kSub,
    kMul,
    kScale,
    kExp,
    kReciprocal,
    kSqrt,
    kGelu,
    kMatmul,
    kReduceSum,
    kReduceMean,
    kBroadcastTo,
    kTranspose,
    kReshape,
    kSlice,
    kPad,
    kConcat,
    kConv2d,
    kAvgPool,
    kLayerNorm,
    kSoftmax,
    kRoll,
    kCrossEntropy,
};

inline const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::kLeaf: return "leaf";
        case OpKind::kAdd: return "add";
        case OpKind::kSub: return "sub";
        case OpKind::kMul: return "mul";
        case OpKind::kScale: return "scale";
        case OpKind::kExp: return "exp";
        case OpKind::kReciprocal: return "reciprocal";
        case OpKind::kSqrt: return "sqrt";
        case OpKind::kGelu: return "gelu";
        case OpKind::kMatmul: return "matmul";
        case OpKind::kReduceSum: return "reduce_sum";
        case OpKind::kReduceMean: return "reduce_mean";
        case OpKind::kBroadcastTo: return "broadcast_to";
        case OpKind::kTranspose: return "transpose";
        case OpKind::kReshape: return "reshape";
        case OpKind::kSlice: return "slice";
        case OpKind::kPad: return "pad";
        case OpKind::kConcat: return "concat";
        case OpKind::kConv2d: return "conv2d";
        case OpKind::kAvgPool: return "avg_pool";
        case OpKind::kLayerNorm: return "layer_norm";
        case OpKind::kSoftmax: return "softmax";
        case OpKind::kRoll: return "roll";
        case OpKind::kCrossEntropy: return "cross_entropy";
    }
    return "?";
}

struct ScaleAttrs {
    double alpha;
};
struct ReduceAttrs {
    std::vector<int> axes;  // normalized, sorted, unique
    bool keepdims;
};
struct DimsAttrs {
    Dims dims;
};
struct PermAttrs {
    std::vector<int> perm;
};
struct SliceAttrs {
    Dims start, extent;
};
struct PadAttrs {
    Dims lo, hi;
};
struct ConcatAttrs {
    int axis;
};
struct ConvAttrs {
    int64_t stride_h, stride_w, pad_h, pad_w, groups;
};
struct PoolAttrs {
    int64_t kh, kw, stride_h, stride_w, pad_h, pad_w;
};
struct NormAttrs {
    double eps;
};
struct SoftmaxAttrs {
    int axis;  // normalized
};
struct RollAttrs {
    int64_t shift_h, shift_w;
};
struct CrossEntropyAttrs {
    std::vector<int32_t> labels;
};

using Attrs = std::variant<std::monostate, ScaleAttrs, ReduceAttrs, DimsAttrs, PermAttrs,
                           SliceAttrs, PadAttrs, ConcatAttrs, ConvAttrs, PoolAttrs, NormAttrs,
                           SoftmaxAttrs, RollAttrs, CrossEntropyAttrs>;

namespace detail {

// Strides of `in_dims` aligned to the (broadcast) `out_dims`, 0 on expanded axes.
inline Dims effective_strides(const Dims& in_dims, const Dims& out_dims) {
    Dims s(out_dims.size(), 0);
    Dims in_strides = row_major_strides(in_dims);
    size_t off = out_dims.size() - in_dims.size();
    for (size_t i = 0; i < in_dims.size(); ++i) {
        s[off + i] = (in_dims[i] == 1 && out_dims[off + i] != 1) ? 0 : in_strides[i];
    }
    return s;
}

// Row-major odometer over `dims`, tracking one offset per stride set.
// f receives (flat_out_index, offsets_array).
template <size_t NS, class F>
void nd_loop(const Dims& dims, const std::array<const Dims*, NS>& strides, F&& f) {
    const int64_t n = numel_of(dims);
    const size_t r = dims.size();
    std::vector<int64_t> idx(r, 0);
    std::array<int64_t, NS> off{};
    for (int64_t i = 0; i < n; ++i) {
        f(i, off);
        for (size_t d = r; d-- > 0;) {
            ++idx[d];
            for (size_t s = 0; s < NS; ++s) off[s] += (*strides[s])[d];
            if (idx[d] < dims[d]) break;
            for (size_t s = 0; s < NS; ++s) off[s] -= (*strides[s])[d] * dims[d];
            idx[d] = 0;
        }
    }
}

// C[M,N] (+)= op(A) * op(B). Layouts: A is [M,K] ([K,M] if ta), B is [K,N]
// ([N,K] if tb). All variants accumulate k-ascending per output element.
template <typename T>
void mm(const T* a, const T* b, T* c, int64_t M, int64_t K, int64_t N, bool ta, bool tb,
        bool acc) {
    if (!acc) std::fill(c, c + M * N, T(0));
    if (!ta && !tb) {
        for (int64_t i = 0; i < M; ++i) {
            T* crow = c + i * N;
            for (int64_t k = 0; k < K; ++k) {
                const T av = a[i * K + k];
                const T* brow = b + k * N;
                for (int64_t j = 0; j < N; ++j) crow[j] += av * brow[j];
            }
        }
    } else if (!ta && tb) {
        for (int64_t i = 0; i < M; ++i) {
            const T* arow = a + i * K;
            for (int64_t j = 0; j < N; ++j) {
                const T* brow = b + j * K;
                T s = 0;
                for (int64_t k = 0; k < K; ++k) s += arow[k] * brow[k];
                c[i * N + j] += s;
            }
        }
    } else if (ta && !tb) {
        for (int64_t k = 0; k < K; ++k) {
            const T* arow = a + k * M;
            const T* brow = b + k * N;
            for (int64_t i = 0; i < M; ++i) {
                const T av = arow[i];
                T* crow = c + i * N;
                for (int64_t j = 0; j < N; ++j) crow[j] += av * brow[j];
            }
        }
    } else {
        throw UsageError("mm: simultaneous transpose of both operands is unsupported");
    }
}

template <typename T>
void im2col(const T* x, int64_t Cin, int64_t H, int64_t W, int64_t kh, int64_t kw, int64_t sh,
            int64_t sw, int64_t ph, int64_t pw, int64_t Hout, int64_t Wout, T* col) {
    int64_t idx = 0;
    for (int64_t ci = 0; ci < Cin; ++ci) {
        for (int64_t ki = 0; ki < kh; ++ki) {
            for (int64_t kj = 0; kj < kw; ++kj) {
                for (int64_t ho = 0; ho < Hout; ++ho) {
                    const int64_t h = ho * sh - ph + ki;
                    const bool hin = h >= 0 && h < H;
                    const T* xrow = x + (ci * H + h) * W;
                    for (int64_t wo = 0; wo < Wout; ++wo) {
                        const int64_t w = wo * sw - pw + kj;
                        col[idx++] = (hin && w >= 0 && w < W) ? xrow[w] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_acc(const T* col, int64_t Cin, int64_t H, int64_t W, int64_t kh, int64_t kw,
                int64_t sh, int64_t sw, int64_t ph, int64_t pw, int64_t Hout, int64_t Wout,
                T* x) {
    int64_t idx = 0;
    for (int64_t ci = 0; ci < Cin; ++ci) {
        for (int64_t ki = 0; ki < kh; ++ki) {
            for (int64_t kj = 0; kj < kw; ++kj) {
                for (int64_t ho = 0; ho < Hout; ++ho) {
                    const int64_t h = ho * sh - ph + ki;
                    const bool hin = h >= 0 && h < H;
                    T* xrow = x + (ci * H + h) * W;
                    for (int64_t wo = 0; wo < Wout; ++wo) {
                        const int64_t w = wo * sw - pw + kj;
                        if (hin && w >= 0 && w < W) xrow[w] += col[idx];
                        ++idx;
                    }
                }
            }
        }
    }
}

template <typename T>
T gelu_cdf(T x) {
    return T(0.5) * (T(1) + std::erf(x * T(0.70710678118654752440L)));
}
template <typename T>
T gelu_pdf(T x) {
    return std::exp(T(-0.5) * x * x) * T(0.39894228040143267794L);
}

inline Dims conv_out_dims(const Dims& x, const Dims& w, const ConvAttrs& a) {
    const int64_t Hout = (x[2] + 2 * a.pad_h - w[2]) / a.stride_h + 1;
    const int64_t Wout = (x[3] + 2 * a.pad_w - w[3]) / a.stride_w + 1;
    return {x[0], w[0], Hout, Wout};
}

inline Dims pool_out_dims(const Dims& x, const PoolAttrs& a) {
    const int64_t Hout = (x[2] + 2 * a.pad_h - a.kh) / a.stride_h + 1;
    const int64_t Wout = (x[3] + 2 * a.pad_w - a.kw) / a.stride_w + 1;
    return {x[0], x[1], Hout, Wout};
}

inline Dims reduce_out_dims(const Dims& in, const ReduceAttrs& a) {
    Dims out;
    size_t ai = 0;
    for (size_t d = 0; d < in.size(); ++d) {
        const bool reduced = ai < a.axes.size() && a.axes[ai] == static_cast<int>(d);
        if (reduced) {
            ++ai;
            if (a.keepdims) out.push_back(1);
        } else {
            out.push_back(in[d]);
        }
    }
    return out;
}

// Strides that map an input-dims odometer onto the reduced output buffer.
inline Dims reduce_out_strides(const Dims& in, const ReduceAttrs& a) {
    const Dims out = reduce_out_dims(in, a);
    Dims out_strides = row_major_strides(out);
    Dims s(in.size(), 0);
    size_t ai = 0, oi = 0;
    for (size_t d = 0; d < in.size(); ++d) {
        const bool reduced = ai < a.axes.size() && a.axes[ai] == static_cast<int>(d);
        if (reduced) {
            ++ai;
            if (a.keepdims) ++oi;  // stride stays 0
        } else {
            s[d] = out_strides[oi++];
        }
    }
    return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Forward evaluation. Computes output dims and values from inputs + attrs.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> eval_op(OpKind kind, const std::vector<Tensor<T>>& in, const Attrs& attrs) {
    using detail::nd_loop;
    switch (kind) {
        case OpKind::kLeaf:
            throw UsageError("eval_op: leaf has no forward rule");

        case OpKind::kAdd:
        case OpKind::kSub:
        case OpKind::kMul: {
            const Tensor<T>&a = in[0], &b = in[1];
            if (a.dims() == b.dims()) {  // fast contiguous path
                Tensor<T> out(a.dims());
                const T *pa = a.data(), *pb = b.data();
                T* po = out.data();
                const int64_t n = out.numel();
                if (kind == OpKind::kAdd)
                    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
                else if (kind == OpKind::kSub)
                    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
                else
                    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
                return out;
            }
            Dims od = broadcast_dims(a.dims(), b.dims(), op_name(kind));
            Tensor<T> out(od);
            const Dims sa = detail::effective_strides(a.dims(), od);
            const Dims sb = detail::effective_strides(b.dims(), od);
            const T *pa = a.data(), *pb = b.data();
            T* po = out.data();
            std::array<const Dims*, 2> st{&sa, &sb};
            if (kind == OpKind::kAdd)
                nd_loop(od, st, [&](int64_t i, const auto& o) { po[i] = pa[o[0]] + pb[o[1]]; });
            else if (kind == OpKind::kSub)
                nd_loop(od, st, [&](int64_t i, const auto& o) { po[i] = pa[o[0]] - pb[o[1]]; });
            else
                nd_loop(od, st, [&](int64_t i, const auto& o) { po[i] = pa[o[0]] * pb[o[1]]; });
            return out;
        }

        case OpKind::kScale: {
            const T alpha = static_cast<T>(std::get<ScaleAttrs>(attrs).alpha);
            Tensor<T> out(in[0].dims());
            const T* pa = in[0].data();
            T* po = out.data();
            for (int64_t i = 0; i < out.numel(); ++i) po[i] = alpha * pa[i];
            return out;
        }

        case OpKind::kExp:
        case OpKind::kReciprocal:
        case OpKind::kSqrt:
        case OpKind::kGelu: {
            Tensor<T> out(in[0].dims());
            const T* pa = in[0].data();
            T* po = out.data();
            const int64_t n = out.numel();
            if (kind == OpKind::kExp)
                for (int64_t i = 0; i < n; ++i) po[i] = std::exp(pa[i]);
            else if (kind == OpKind::kReciprocal)
                for (int64_t i = 0; i < n; ++i) po[i] = T(1) / pa[i];
            else if (kind == OpKind::kSqrt)
                for (int64_t i = 0; i < n; ++i) po[i] = std::sqrt(pa[i]);
            else
                for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * detail::gelu_cdf(pa[i]);
            return out;
        }

        case OpKind::kMatmul: {
            const Tensor<T>&a = in[0], &b = in[1];
            const int64_t M = a.dim(a.rank() - 2), K = a.dim(a.rank() - 1);
            const int64_t N = b.dim(b.rank() - 1);
            const int64_t batch = a.numel() / (M * K);
            Dims od(a.dims().begin(), a.dims().end() - 1);
            od.push_back(N);
            Tensor<T> out(od);
            const bool shared_b = b.rank() == 2;
            for (int64_t bi = 0; bi < batch; ++bi) {
                detail::mm(a.data() + bi * M * K, b.data() + (shared_b ? 0 : bi * K * N),
                           out.data() + bi * M * N, M, K, N, false, false, false);
            }
            return out;
        }

        case OpKind::kReduceSum:
        case OpKind::kReduceMean: {
            const auto& a = std::get<ReduceAttrs>(attrs);
            const Dims& id = in[0].dims();
            Tensor<T> out(detail::reduce_out_dims(id, a));
            const Dims so = detail::reduce_out_strides(id, a);
            const Dims si = row_major_strides(id);
            const T* pa = in[0].data();
            T* po = out.data();
            std::array<const Dims*, 1> st{&so};
            nd_loop(id, st, [&](int64_t i, const auto& o) { po[o[0]] += pa[i]; });
            if (kind == OpKind::kReduceMean) {
                const T inv = T(1) / static_cast<T>(in[0].numel() / std::max<int64_t>(out.numel(), 1));
                for (int64_t i = 0; i < out.numel(); ++i) po[i] *= inv;
            }
            (void)si;
            return out;
        }

        case OpKind::kBroadcastTo: {
            const Dims& od = std::get<DimsAttrs>(attrs).dims;
            Tensor<T> out(od);
            const Dims sa = detail::effective_strides(in[0].dims(), od);
            const T* pa = in[0].data();
            T* po = out.data();
            std::array<const Dims*, 1> st{&sa};
            nd_loop(od, st, [&](int64_t i, const auto& o) { po[i] = pa[o[0]]; });
            return out;
        }

        case OpKind::kTranspose: {
            const auto& perm = std::get<PermAttrs>(attrs).perm;
            const Dims& id = in[0].dims();
            const Dims is = row_major_strides(id);
            Dims od(id.size()), sa(id.size());
            for (size_t j = 0; j < id.size(); ++j) {
                od[j] = id[perm[j]];
                sa[j] = is[perm[j]];
            }
            Tensor<T> out(od);
            const T* pa = in[0].data();
            T* po = out.data();
            std::array<const Dims*, 1> st{&sa};
            nd_loop(od, st, [&](int64_t i, const auto& o) { po[i] = pa[o[0]]; });
            return out;
        }

        case OpKind::kReshape:
            return in[0].reshaped(std::get<DimsAttrs>(attrs).dims).clone();

        case OpKind::kSlice: {
            const auto& a = std::get<SliceAttrs>(attrs);
            const Dims is = row_major_strides(in[0].dims());
            int64_t base = 0;
            for (size_t d = 0; d < a.start.size(); ++d) base += a.start[d] * is[d];
            Tensor<T> out(a.extent);
            const T* pa = in[0].data() + base;
            T* po = out.data();
            std::array<const Dims*, 1> st{&is};
            nd_loop(a.extent, st, [&](int64_t i, const auto& o) { po[i] = pa[o[0]]; });
            return out;
        }

        case OpKind::kPad: {
            const auto& a = std::get<PadAttrs>(attrs);
            const Dims& id = in[0].dims();
            Dims od(id.size());
            for (size_t d = 0; d < id.size(); ++d) od[d] = id[d] + a.lo[d] + a.hi[d];
            Tensor<T> out(od);
            const Dims os = row_major_strides(od);
            int64_t base = 0;
            for (size_t d = 0; d < od.size(); ++d) base += a.lo[d] * os[d];
            const T* pa = in[0].data();
            T* po = out.data() + base;
            std::array<const Dims*, 1> st{&os};
            nd_loop(id, st, [&](int64_t i, const auto& o) { po[o[0]] = pa[i]; });
            return out;
        }

        case OpKind::kConcat: {
            const int axis = std::get<ConcatAttrs>(attrs).axis;
            const Dims& d0 = in[0].dims();
            int64_t axis_total = 0;
            for (const auto& t : in) axis_total += t.dim(axis);
            Dims od = d0;
            od[axis] = axis_total;
            Tensor<T> out(od);
            int64_t outer = 1, inner = 1;
            for (int i = 0; i < axis; ++i) outer *= d0[i];
            for (size_t i = axis + 1; i < d0.size(); ++i) inner *= d0[i];
            T* po = out.data();
            int64_t off = 0;
            const int64_t out_row = axis_total * inner;
            for (const auto& t : in) {
                const int64_t part = t.dim(axis) * inner;
                const T* pa = t.data();
                for (int64_t r = 0; r < outer; ++r) {
                    std::copy(pa + r * part, pa + (r + 1) * part, po + r * out_row + off);
                }
                off += part;
            }
            return out;
        }

        case OpKind::kConv2d: {
            const auto& a = std::get<ConvAttrs>(attrs);
            const Tensor<T>&x = in[0], &w = in[1];
            const bool has_bias = in.size() == 3;
            const Dims od = detail::conv_out_dims(x.dims(), w.dims(), a);
            const int64_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
            const int64_t Cout = w.dim(0), Cg = w.dim(1), kh = w.dim(2), kw = w.dim(3);
            const int64_t Hout = od[2], Wout = od[3], HW = Hout * Wout;
            Tensor<T> out(od);
            T* po = out.data();
            const T* pb = has_bias ? in[2].data() : nullptr;
            if (a.groups == 1) {
                std::vector<T> col(static_cast<size_t>(Cin * kh * kw * HW));
                for (int64_t b = 0; b < B; ++b) {
                    detail::im2col(x.data() + b * Cin * H * W, Cin, H, W, kh, kw, a.stride_h,
                                   a.stride_w, a.pad_h, a.pad_w, Hout, Wout, col.data());
                    T* ob = po + b * Cout * HW;
                    for (int64_t co = 0; co < Cout; ++co) {
                        std::fill(ob + co * HW, ob + (co + 1) * HW, pb ? pb[co] : T(0));
                    }
                    detail::mm(w.data(), col.data(), ob, Cout, Cin * kh * kw, HW, false, false,
                               true);
                }
            } else if (a.groups == Cin && Cout == Cin && Cg == 1) {
                for (int64_t b = 0; b < B; ++b) {
                    for (int64_t c = 0; c < Cin; ++c) {
                        const T* xc = x.data() + (b * Cin + c) * H * W;
                        const T* wc = w.data() + c * kh * kw;
                        T* oc = po + (b * Cin + c) * HW;
                        for (int64_t ho = 0; ho < Hout; ++ho) {
                            for (int64_t wo = 0; wo < Wout; ++wo) {
                                T acc = pb ? pb[c] : T(0);
                                for (int64_t ki = 0; ki < kh; ++ki) {
                                    const int64_t h = ho * a.stride_h - a.pad_h + ki;
                                    if (h < 0 || h >= H) continue;
                                    for (int64_t kj = 0; kj < kw; ++kj) {
                                        const int64_t ww = wo * a.stride_w - a.pad_w + kj;
                                        if (ww < 0 || ww >= W) continue;
                                        acc += xc[h * W + ww] * wc[ki * kw + kj];
                                    }
                                }
                                oc[ho * Wout + wo] = acc;
                            }
                        }
                    }
                }
            } else {
                const int64_t co_per_g = Cout / a.groups;
                for (int64_t b = 0; b < B; ++b) {
                    for (int64_t co = 0; co < Cout; ++co) {
                        const int64_t g = co / co_per_g;
                        T* oc = po + (b * Cout + co) * HW;
                        for (int64_t ho = 0; ho < Hout; ++ho) {
                            for (int64_t wo = 0; wo < Wout; ++wo) {
                                T acc = pb ? pb[co] : T(0);
                                for (int64_t ci = 0; ci < Cg; ++ci) {
                                    const T* xc = x.data() + (b * Cin + g * Cg + ci) * H * W;
                                    const T* wc = w.data() + ((co * Cg + ci) * kh) * kw;
                                    for (int64_t ki = 0; ki < kh; ++ki) {
                                        const int64_t h = ho * a.stride_h - a.pad_h + ki;
                                        if (h < 0 || h >= H) continue;
                                        for (int64_t kj = 0; kj < kw; ++kj) {
                                            const int64_t ww = wo * a.stride_w - a.pad_w + kj;
                                            if (ww < 0 || ww >= W) continue;
                                            acc += xc[h * W + ww] * wc[ki * kw + kj];
                                        }
                                    }
                                }
                                oc[ho * Wout + wo] = acc;
                            }
                        }
                    }
                }
            }
            return out;
        }

        case OpKind::kAvgPool: {
            const auto& a = std::get<PoolAttrs>(attrs);
            const Tensor<T>& x = in[0];
            const Dims od = detail::pool_out_dims(x.dims(), a);
            const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
            const int64_t Hout = od[2], Wout = od[3];
            Tensor<T> out(od);
            T* po = out.data();
            for (int64_t b = 0; b < B; ++b) {
                for (int64_t c = 0; c < C; ++c) {
                    const T* xc = x.data() + (b * C + c) * H * W;
                    T* oc = po + (b * C + c) * Hout * Wout;
                    for (int64_t ho = 0; ho < Hout; ++ho) {
                        for (int64_t wo = 0; wo < Wout; ++wo) {
                            const int64_t h0 = std::max<int64_t>(ho * a.stride_h - a.pad_h, 0);
                            const int64_t h1 =
                                std::min<int64_t>(ho * a.stride_h - a.pad_h + a.kh, H);
                            const int64_t w0 = std::max<int64_t>(wo * a.stride_w - a.pad_w, 0);
                            const int64_t w1 =
                                std::min<int64_t>(wo * a.stride_w - a.pad_w + a.kw, W);
                            T acc = 0;
                            for (int64_t h = h0; h < h1; ++h)
                                for (int64_t ww = w0; ww < w1; ++ww) acc += xc[h * W + ww];
                            const int64_t cnt = (h1 - h0) * (w1 - w0);  // pad cells excluded
                            oc[ho * Wout + wo] = acc / static_cast<T>(cnt);
                        }
                    }
                }
            }
            return out;
        }

        case OpKind::kLayerNorm: {
            const T eps = static_cast<T>(std::get<NormAttrs>(attrs).eps);
            const Tensor<T>&x = in[0], &gamma = in[1], &beta = in[2];
            const int64_t C = x.dim(x.rank() - 1);
            const int64_t rows = x.numel() / C;
            Tensor<T> out(x.dims());
            const T *px = x.data(), *pg = gamma.data(), *pbeta = beta.data();
            T* po = out.data();
            for (int64_t r = 0; r < rows; ++r) {
                const T* xr = px + r * C;
                T* yr = po + r * C;
                T mean = 0;
                for (int64_t c = 0; c < C; ++c) mean += xr[c];
                mean /= static_cast<T>(C);
                T var = 0;
                for (int64_t c = 0; c < C; ++c) {
                    const T d = xr[c] - mean;
                    var += d * d;
                }
                var /= static_cast<T>(C);  // population variance
                const T inv = T(1) / std::sqrt(var + eps);
                for (int64_t c = 0; c < C; ++c) {
                    yr[c] = (xr[c] - mean) * inv * pg[c] + pbeta[c];
                }
            }
            return out;
        }

        case OpKind::kSoftmax: {
            const int axis = std::get<SoftmaxAttrs>(attrs).axis;
            const Tensor<T>& x = in[0];
            const Dims& d = x.dims();
            int64_t outer = 1, inner = 1;
            for (int i = 0; i < axis; ++i) outer *= d[i];
            for (size_t i = axis + 1; i < d.size(); ++i) inner *= d[i];
            const int64_t n = d[axis];
            Tensor<T> out(d);
            const T* px = x.data();
            T* po = out.data();
            for (int64_t o = 0; o < outer; ++o) {
                for (int64_t ii = 0; ii < inner; ++ii) {
                    const int64_t base = o * n * inner + ii;
                    T m = px[base];
                    for (int64_t j = 1; j < n; ++j) m = std::max(m, px[base + j * inner]);
                    T sum = 0;
                    for (int64_t j = 0; j < n; ++j) {
                        const T e = std::exp(px[base + j * inner] - m);
                        po[base + j * inner] = e;
                        sum += e;
                    }
                    const T inv = T(1) / sum;
                    for (int64_t j = 0; j < n; ++j) po[base + j * inner] *= inv;
                }
            }
            return out;
        }

        case OpKind::kRoll: {
            const auto& a = std::get<RollAttrs>(attrs);
            const Tensor<T>& x = in[0];
            const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
            Tensor<T> out(x.dims());
            const T* px = x.data();
            T* po = out.data();
            const int64_t sh = ((a.shift_h % H) + H) % H;
            const int64_t sw = ((a.shift_w % W) + W) % W;
            for (int64_t bc = 0; bc < B * C; ++bc) {
                const T* xp = px + bc * H * W;
                T* op = po + bc * H * W;
                for (int64_t h = 0; h < H; ++h) {
                    const int64_t hs = (h - sh + H) % H;  // out[h] = in[h - shift]
                    for (int64_t w = 0; w < W; ++w) {
                        op[h * W + w] = xp[hs * W + (w - sw + W) % W];
                    }
                }
            }
            return out;
        }

        case OpKind::kCrossEntropy: {
            const auto& labels = std::get<CrossEntropyAttrs>(attrs).labels;
            const Tensor<T>& z = in[0];
            const int64_t B = z.dim(0), K = z.dim(1);
            T loss = 0;
            for (int64_t b = 0; b < B; ++b) {
                const T* zr = z.data() + b * K;
                T m = zr[0];
                for (int64_t k = 1; k < K; ++k) m = std::max(m, zr[k]);
                T sum = 0;
                for (int64_t k = 0; k < K; ++k) sum += std::exp(zr[k] - m);
                loss += std::log(sum) + m - zr[labels[b]];
            }
            Tensor<T> out(Dims{});
            out[0] = loss / static_cast<T>(B);
            return out;
        }
    }
    throw UsageError("eval_op: unknown primitive id " +
                     std::to_string(static_cast<int32_t>(kind)));
}

// ---------------------------------------------------------------------------
// Backward. `g` is d(root)/d(node), `y` the recorded node value; accumulates
// into parent grad buffers `gin` (same dims as the corresponding parent).
// ---------------------------------------------------------------------------
template <typename T>
void backward_op(OpKind kind, const Tensor<T>& y, const Tensor<T>& g,
                 const std::vector<Tensor<T>>& in, const Attrs& attrs,
                 const std::vector<Tensor<T>*>& gin) {
    using detail::nd_loop;
    switch (kind) {
        case OpKind::kLeaf:
            return;

        case OpKind::kAdd:
        case OpKind::kSub:
        case OpKind::kMul: {
            const Tensor<T>&a = in[0], &b = in[1];
            const Dims& od = y.dims();
            const Dims sa = detail::effective_strides(a.dims(), od);
            const Dims sb = detail::effective_strides(b.dims(), od);
            const T *pa = a.data(), *pb = b.data(), *pg = g.data();
            T *ga = gin[0]->data(), *gb = gin[1]->data();
            std::array<const Dims*, 2> st{&sa, &sb};
            if (kind == OpKind::kAdd) {
                nd_loop(od, st, [&](int64_t i, const auto& o) {
                    ga[o[0]] += pg[i];
                    gb[o[1]] += pg[i];
                });
            } else if (kind == OpKind::kSub) {
                nd_loop(od, st, [&](int64_t i, const auto& o) {
                    ga[o[0]] += pg[i];
                    gb[o[1]] -= pg[i];
                });
            } else {
                nd_loop(od, st, [&](int64_t i, const auto& o) {
                    ga[o[0]] += pg[i] * pb[o[1]];
                    gb[o[1]] += pg[i] * pa[o[0]];
                });
            }
            return;
        }

        case OpKind::kScale: {
            const T alpha = static_cast<T>(std::get<ScaleAttrs>(attrs).alpha);
            const T* pg = g.data();
            T* ga = gin[0]->data();
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += alpha * pg[i];
            return;
        }

        case OpKind::kExp: {
            const T *pg = g.data(), *py = y.data();
            T* ga = gin[0]->data();
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += pg[i] * py[i];
            return;
        }
        case OpKind::kReciprocal: {
            const T *pg = g.data(), *py = y.data();
            T* ga = gin[0]->data();
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] -= pg[i] * py[i] * py[i];
            return;
        }
        case OpKind::kSqrt: {
            const T *pg = g.data(), *py = y.data();
            T* ga = gin[0]->data();
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += pg[i] / (T(2) * py[i]);
            return;
        }
        case OpKind::kGelu: {
            const T *pg = g.data(), *px = in[0].data();
            T* ga = gin[0]->data();
            for (int64_t i = 0; i < g.numel(); ++i) {
                const T x = px[i];
                ga[i] += pg[i] * (detail::gelu_cdf(x) + x * detail::gelu_pdf(x));
            }
            return;
        }

        case OpKind::kMatmul: {
            const Tensor<T>&a = in[0], &b = in[1];
            const int64_t M = a.dim(a.rank() - 2), K = a.dim(a.rank() - 1);
            const int64_t N = b.dim(b.rank() - 1);
            const int64_t batch = a.numel() / (M * K);
            const bool shared_b = b.rank() == 2;
            for (int64_t bi = 0; bi < batch; ++bi) {
                const T* ab = a.data() + bi * M * K;
                const T* bb = b.data() + (shared_b ? 0 : bi * K * N);
                const T* gb = g.data() + bi * M * N;
                // dA = g * B^T ; dB = A^T * g
                detail::mm(gb, bb, gin[0]->data() + bi * M * K, M, N, K, false, true, true);
                detail::mm(ab, gb, gin[1]->data() + (shared_b ? 0 : bi * K * N), K, M, N, true,
                           false, true);
            }
            return;
        }

        case OpKind::kReduceSum:
        case OpKind::kReduceMean: {
            const auto& a = std::get<ReduceAttrs>(attrs);
            const Dims& id = in[0].dims();
            const Dims so = detail::reduce_out_strides(id, a);
            const T* pg = g.data();
            T* ga = gin[0]->data();
            const T inv = kind == OpKind::kReduceMean
                              ? T(1) / static_cast<T>(in[0].numel() /
                                                      std::max<int64_t>(y.numel(), 1))
                              : T(1);
            std::array<const Dims*, 1> st{&so};
            nd_loop(id, st, [&](int64_t i, const auto& o) { ga[i] += pg[o[0]] * inv; });
            return;
        }

        case OpKind::kBroadcastTo: {
            const Dims& od = y.dims();
            const Dims sa = detail::effective_strides(in[0].dims(), od);
            const T* pg = g.data();
            T* ga = gin[0]->data();
            std::array<const Dims*, 1> st{&sa};
            nd_loop(od, st, [&](int64_t i, const auto& o) { ga[o[0]] += pg[i]; });
            return;
        }

        case OpKind::kTranspose: {
            const auto& perm = std::get<PermAttrs>(attrs).perm;
            const Dims& id = in[0].dims();
            const Dims is = row_major_strides(id);
            Dims od(id.size()), sa(id.size());
            for (size_t j = 0; j < id.size(); ++j) {
                od[j] = id[perm[j]];
                sa[j] = is[perm[j]];
            }
            const T* pg = g.data();
            T* ga = gin[0]->data();
            std::array<const Dims*, 1> st{&sa};
            nd_loop(od, st, [&](int64_t i, const auto& o) { ga[o[0]] += pg[i]; });
            return;
        }

        case OpKind::kReshape: {
            const T* pg = g.data();
            T* ga = gin[0]->data();
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += pg[i];
            return;
        }

        case OpKind::kSlice: {
            const auto& a = std::get<SliceAttrs>(attrs);
            const Dims is = row_major_strides(in[0].dims());
            int64_t base = 0;
            for (size_t d = 0; d < a.start.size(); ++d) base += a.start[d] * is[d];
            const T* pg = g.data();
            T* ga = gin[0]->data() + base;
            std::array<const Dims*, 1> st{&is};
            nd_loop(a.extent, st, [&](int64_t i, const auto& o) { ga[o[0]] += pg[i]; });
            return;
        }

        case OpKind::kPad: {
            const auto& a = std::get<PadAttrs>(attrs);
            const Dims& id = in[0].dims();
            const Dims os = row_major_strides(y.dims());
            int64_t base = 0;
            for (size_t d = 0; d < id.size(); ++d) base += a.lo[d] * os[d];
            const T* pg = g.data() + base;
            T* ga = gin[0]->data();
            std::array<const Dims*, 1> st{&os};
            nd_loop(id, st, [&](int64_t i, const auto& o) { ga[i] += pg[o[0]]; });
            return;
        }

        case OpKind::kConcat: {
            const int axis = std::get<ConcatAttrs>(attrs).axis;
            const Dims& d0 = in[0].dims();
            int64_t outer = 1, inner = 1;
            for (int i = 0; i < axis; ++i) outer *= d0[i];
            for (size_t i = axis + 1; i < d0.size(); ++i) inner *= d0[i];
            const int64_t out_row = y.dim(axis) * inner;
            const T* pg = g.data();
            int64_t off = 0;
            for (size_t p = 0; p < in.size(); ++p) {
                const int64_t part = in[p].dim(axis) * inner;
                T* ga = gin[p]->data();
                for (int64_t r = 0; r < outer; ++r) {
                    const T* src = pg + r * out_row + off;
                    T* dst = ga + r * part;
                    for (int64_t i = 0; i < part; ++i) dst[i] += src[i];
                }
                off += part;
            }
            return;
        }

        case OpKind::kConv2d: {
            const auto& a = std::get<ConvAttrs>(attrs);
            const Tensor<T>&x = in[0], &w = in[1];
            const bool has_bias = in.size() == 3;
            const int64_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
            const int64_t Cout = w.dim(0), Cg = w.dim(1), kh = w.dim(2), kw = w.dim(3);
            const int64_t Hout = y.dim(2), Wout = y.dim(3), HW = Hout * Wout;
            const T* pg = g.data();
            if (has_bias) {
                T* gb = gin[2]->data();
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t co = 0; co < Cout; ++co) {
                        const T* gr = pg + (b * Cout + co) * HW;
                        T acc = 0;
                        for (int64_t i = 0; i < HW; ++i) acc += gr[i];
                        gb[co] += acc;
                    }
            }
            if (a.groups == 1) {
                const int64_t CKK = Cin * kh * kw;
                std::vector<T> col(static_cast<size_t>(CKK * HW));
                std::vector<T> colg(static_cast<size_t>(CKK * HW));
                for (int64_t b = 0; b < B; ++b) {
                    const T* gb = pg + b * Cout * HW;
                    detail::im2col(x.data() + b * Cin * H * W, Cin, H, W, kh, kw, a.stride_h,
                                   a.stride_w, a.pad_h, a.pad_w, Hout, Wout, col.data());
                    detail::mm(gb, col.data(), gin[1]->data(), Cout, HW, CKK, false, true, true);
                    detail::mm(w.data(), gb, colg.data(), CKK, Cout, HW, true, false, false);
                    detail::col2im_acc(colg.data(), Cin, H, W, kh, kw, a.stride_h, a.stride_w,
                                       a.pad_h, a.pad_w, Hout, Wout,
                                       gin[0]->data() + b * Cin * H * W);
                }
            } else {
                const int64_t co_per_g = Cout / a.groups;
                T* gx = gin[0]->data();
                T* gw = gin[1]->data();
                for (int64_t b = 0; b < B; ++b) {
                    for (int64_t co = 0; co < Cout; ++co) {
                        const int64_t grp = co / co_per_g;
                        const T* gr = pg + (b * Cout + co) * HW;
                        for (int64_t ci = 0; ci < Cg; ++ci) {
                            const int64_t cin = grp * Cg + ci;
                            const T* xc = x.data() + (b * Cin + cin) * H * W;
                            T* gxc = gx + (b * Cin + cin) * H * W;
                            const T* wc = w.data() + (co * Cg + ci) * kh * kw;
                            T* gwc = gw + (co * Cg + ci) * kh * kw;
                            for (int64_t ho = 0; ho < Hout; ++ho) {
                                for (int64_t wo = 0; wo < Wout; ++wo) {
                                    const T gv = gr[ho * Wout + wo];
                                    for (int64_t ki = 0; ki < kh; ++ki) {
                                        const int64_t h = ho * a.stride_h - a.pad_h + ki;
                                        if (h < 0 || h >= H) continue;
                                        for (int64_t kj = 0; kj < kw; ++kj) {
                                            const int64_t ww = wo * a.stride_w - a.pad_w + kj;
                                            if (ww < 0 || ww >= W) continue;
                                            gxc[h * W + ww] += gv * wc[ki * kw + kj];
                                            gwc[ki * kw + kj] += gv * xc[h * W + ww];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            return;
        }

        case OpKind::kAvgPool: {
            const auto& a = std::get<PoolAttrs>(attrs);
            const Tensor<T>& x = in[0];
            const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
            const int64_t Hout = y.dim(2), Wout = y.dim(3);
            const T* pg = g.data();
            T* ga = gin[0]->data();
            for (int64_t bc = 0; bc < B * C; ++bc) {
                const T* gr = pg + bc * Hout * Wout;
                T* gx = ga + bc * H * W;
                for (int64_t ho = 0; ho < Hout; ++ho) {
                    for (int64_t wo = 0; wo < Wout; ++wo) {
                        const int64_t h0 = std::max<int64_t>(ho * a.stride_h - a.pad_h, 0);
                        const int64_t h1 = std::min<int64_t>(ho * a.stride_h - a.pad_h + a.kh, H);
                        const int64_t w0 = std::max<int64_t>(wo * a.stride_w - a.pad_w, 0);
                        const int64_t w1 = std::min<int64_t>(wo * a.stride_w - a.pad_w + a.kw, W);
                        const T gv = gr[ho * Wout + wo] / static_cast<T>((h1 - h0) * (w1 - w0));
                        for (int64_t h = h0; h < h1; ++h)
                            for (int64_t ww = w0; ww < w1; ++ww) gx[h * W + ww] += gv;
                    }
                }
            }
            return;
        }

        case OpKind::kLayerNorm: {
            const T eps = static_cast<T>(std::get<NormAttrs>(attrs).eps);
            const Tensor<T>&x = in[0], &gamma = in[1];
            const int64_t C = x.dim(x.rank() - 1);
            const int64_t rows = x.numel() / C;
            const T *px = x.data(), *pgam = gamma.data(), *pg = g.data();
            T *gx = gin[0]->data(), *ggam = gin[1]->data(), *gbeta = gin[2]->data();
            std::vector<T> xhat(static_cast<size_t>(C));
            for (int64_t r = 0; r < rows; ++r) {
                const T* xr = px + r * C;
                const T* gr = pg + r * C;
                T* gxr = gx + r * C;
                T mean = 0;
                for (int64_t c = 0; c < C; ++c) mean += xr[c];
                mean /= static_cast<T>(C);
                T var = 0;
                for (int64_t c = 0; c < C; ++c) {
                    const T d = xr[c] - mean;
                    var += d * d;
                }
                var /= static_cast<T>(C);
                const T inv = T(1) / std::sqrt(var + eps);
                T m1 = 0, m2 = 0;
                for (int64_t c = 0; c < C; ++c) {
                    xhat[c] = (xr[c] - mean) * inv;
                    const T h = gr[c] * pgam[c];
                    m1 += h;
                    m2 += h * xhat[c];
                }
                m1 /= static_cast<T>(C);
                m2 /= static_cast<T>(C);
                for (int64_t c = 0; c < C; ++c) {
                    const T h = gr[c] * pgam[c];
                    gxr[c] += (h - m1 - xhat[c] * m2) * inv;
                    ggam[c] += gr[c] * xhat[c];
                    gbeta[c] += gr[c];
                }
            }
            return;
        }

        case OpKind::kSoftmax: {
            const int axis = std::get<SoftmaxAttrs>(attrs).axis;
            const Dims& d = y.dims();
            int64_t outer = 1, inner = 1;
            for (int i = 0; i < axis; ++i) outer *= d[i];
            for (size_t i = axis + 1; i < d.size(); ++i) inner *= d[i];
            const int64_t n = d[axis];
            const T *py = y.data(), *pg = g.data();
            T* ga = gin[0]->data();
            for (int64_t o = 0; o < outer; ++o) {
                for (int64_t ii = 0; ii < inner; ++ii) {
                    const int64_t base = o * n * inner + ii;
                    T dot = 0;
                    for (int64_t j = 0; j < n; ++j)
                        dot += pg[base + j * inner] * py[base + j * inner];
                    for (int64_t j = 0; j < n; ++j) {
                        const int64_t k = base + j * inner;
                        ga[k] += py[k] * (pg[k] - dot);
                    }
                }
            }
            return;
        }

        case OpKind::kRoll: {
            const auto& a = std::get<RollAttrs>(attrs);
            const int64_t B = y.dim(0), C = y.dim(1), H = y.dim(2), W = y.dim(3);
            const T* pg = g.data();
            T* ga = gin[0]->data();
            const int64_t sh = ((a.shift_h % H) + H) % H;
            const int64_t sw = ((a.shift_w % W) + W) % W;
            for (int64_t bc = 0; bc < B * C; ++bc) {
                const T* gp = pg + bc * H * W;
                T* xp = ga + bc * H * W;
                for (int64_t h = 0; h < H; ++h) {
                    const int64_t hs = (h - sh + H) % H;
                    for (int64_t w = 0; w < W; ++w) {
                        xp[hs * W + (w - sw + W) % W] += gp[h * W + w];
                    }
                }
            }
            return;
        }

        case OpKind::kCrossEntropy: {
            const auto& labels = std::get<CrossEntropyAttrs>(attrs).labels;
            const Tensor<T>& z = in[0];
            const int64_t B = z.dim(0), K = z.dim(1);
            const T g0 = g[0] / static_cast<T>(B);
            T* gz = gin[0]->data();
            for (int64_t b = 0; b < B; ++b) {
                const T* zr = z.data() + b * K;
                T m = zr[0];
                for (int64_t k = 1; k < K; ++k) m = std::max(m, zr[k]);
                T sum = 0;
                for (int64_t k = 0; k < K; ++k) sum += std::exp(zr[k] - m);
                const T inv = T(1) / sum;
                for (int64_t k = 0; k < K; ++k) {
                    const T p = std::exp(zr[k] - m) * inv;
                    gz[b * K + k] += g0 * (p - (k == labels[b] ? T(1) : T(0)));
                }
            }
            return;
        }
    }
    throw UsageError("backward_op: unknown primitive id " +
                     std::to_string(static_cast<int32_t>(kind)));
}

}  // namespace uninext
