#pragma once

// Layout-aware NN layer: FeatureMap/TokenMap strong types, the phi / phi-tilde
// converters between them, window/stripe partitioning, cyclic shifts, and thin
// validated wrappers (linear, conv, pooling) used by every mixer.

#include "uninext/ops.hpp"

namespace uninext {

// (B, C, H, W) spatial layout.
template <typename T>
struct FeatureMap {
    Var<T> v;
    int64_t batch() const { return v.dim(0); }
    int64_t channels() const { return v.dim(1); }
    int64_t height() const { return v.dim(2); }
    int64_t width() const { return v.dim(3); }
};

// (B, N, C) token layout; carries the spatial extents with N == h*w.
template <typename T>
struct TokenMap {
    Var<T> v;
    int64_t h = 0, w = 0;
    int64_t batch() const { return v.dim(0); }
    int64_t tokens() const { return v.dim(1); }
    int64_t channels() const { return v.dim(2); }
};

// Windowed tokens (B*nh*nw, wh*ww, C) plus the grid needed to reverse.
template <typename T>
struct Windowed {
    Var<T> v;
    int64_t batch = 0, grid_h = 0, grid_w = 0, wh = 0, ww = 0;
    int64_t window_count() const { return (grid_h / wh) * (grid_w / ww); }
    int64_t window_tokens() const { return wh * ww; }
};

enum class Orientation { kHorizontal, kVertical };

template <typename T>
FeatureMap<T> as_feature_map(Var<T> v) {
    if (v.rank() != 4) {
        throw ShapeError("feature map must be rank-4 (B,C,H,W), got " + dims_str(v.dims()));
    }
    return FeatureMap<T>{v};
}

// phi: (B, C, H, W) -> (B, N, C), tokens in row-major spatial order.
template <typename T>
TokenMap<T> spatial_token_convert(const FeatureMap<T>& x) {
    const int64_t B = x.batch(), C = x.channels(), H = x.height(), W = x.width();
    Var<T> flat = reshape(x.v, {B, C, H * W});
    return TokenMap<T>{transpose(flat, {0, 2, 1}), H, W};
}

// phi-tilde: (B, N, C) -> (B, C, H, W); exact inverse of phi.
template <typename T>
FeatureMap<T> spatial_token_convert(const TokenMap<T>& t) {
    const int64_t B = t.batch(), N = t.tokens(), C = t.channels();
    if (N != t.h * t.w) {
        throw ShapeError("spatial_token_convert: " + std::to_string(N) + " tokens != " +
                         std::to_string(t.h) + "x" + std::to_string(t.w));
    }
    Var<T> tr = transpose(t.v, {0, 2, 1});
    return FeatureMap<T>{reshape(tr, {B, C, t.h, t.w})};
}

template <typename T>
TokenMap<T> to_tokens(const FeatureMap<T>& x) {
    return spatial_token_convert(x);
}
template <typename T>
FeatureMap<T> to_feature(const TokenMap<T>& t) {
    return spatial_token_convert(t);
}

// Rectangular window partition; extents must already be multiples of (wh,ww).
template <typename T>
Windowed<T> window_partition(const FeatureMap<T>& x, int64_t wh, int64_t ww) {
    const int64_t B = x.batch(), C = x.channels(), H = x.height(), W = x.width();
    if (wh < 1 || ww < 1) throw UsageError("window_partition: window must be >= 1");
    if (H % wh != 0 || W % ww != 0) {
        throw ShapeError("window_partition: extents " + std::to_string(H) + "x" +
                         std::to_string(W) + " not divisible by window " + std::to_string(wh) +
                         "x" + std::to_string(ww) + " (pad first)");
    }
    const int64_t nh = H / wh, nw = W / ww;
    Var<T> r = reshape(x.v, {B, C, nh, wh, nw, ww});
    Var<T> p = transpose(r, {0, 2, 4, 3, 5, 1});  // (B, nh, nw, wh, ww, C)
    return Windowed<T>{reshape(p, {B * nh * nw, wh * ww, C}), B, H, W, wh, ww};
}

template <typename T>
Windowed<T> window_partition(const FeatureMap<T>& x, int64_t w) {
    return window_partition(x, w, w);
}

template <typename T>
FeatureMap<T> window_reverse(const Windowed<T>& win) {
    const int64_t B = win.batch, H = win.grid_h, W = win.grid_w, wh = win.wh, ww = win.ww;
    const int64_t nh = H / wh, nw = W / ww;
    const int64_t C = win.v.dim(2);
    Var<T> r = reshape(win.v, {B, nh, nw, wh, ww, C});
    Var<T> p = transpose(r, {0, 5, 1, 3, 2, 4});  // (B, C, nh, wh, nw, ww)
    return FeatureMap<T>{reshape(p, {B, C, H, W})};
}

// Horizontal stripes are (sw x W) windows, vertical are (H x sw).
template <typename T>
Windowed<T> stripe_partition(const FeatureMap<T>& x, int64_t sw, Orientation o) {
    if (o == Orientation::kHorizontal) return window_partition(x, sw, x.width());
    return window_partition(x, x.height(), sw);
}

template <typename T>
FeatureMap<T> stripe_reverse(const Windowed<T>& win) {
    return window_reverse(win);
}

// Torus roll of the spatial axes.
template <typename T>
FeatureMap<T> cyclic_shift(const FeatureMap<T>& x, int64_t sh, int64_t sw) {
    return FeatureMap<T>{roll(x.v, sh, sw)};
}

// Zero-pad bottom/right so extents reach multiples of (mh, mw).
template <typename T>
FeatureMap<T> pad_to_multiple(const FeatureMap<T>& x, int64_t mh, int64_t mw) {
    const int64_t H = x.height(), W = x.width();
    const int64_t ph = (mh - H % mh) % mh, pw = (mw - W % mw) % mw;
    if (ph == 0 && pw == 0) return x;
    return FeatureMap<T>{pad(x.v, {0, 0, 0, 0}, {0, 0, ph, pw})};
}

template <typename T>
FeatureMap<T> crop_to(const FeatureMap<T>& x, int64_t H, int64_t W) {
    if (x.height() == H && x.width() == W) return x;
    return FeatureMap<T>{slice(x.v, {0, 0, 0, 0}, {x.batch(), x.channels(), H, W})};
}

// Per-token affine map; weight is (Cin, Cout) so y = x . W + b.
template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias) {
    if (weight.rank() != 2 || x.dims().back() != weight.dim(0)) {
        throw ShapeError("linear: input " + dims_str(x.dims()) + " incompatible with weight " +
                         dims_str(weight.dims()));
    }
    Var<T> y = matmul(x, weight);
    if (bias.valid()) {
        if (bias.dims() != Dims{weight.dim(1)}) {
            throw ShapeError("linear: bias " + dims_str(bias.dims()) + " must be [" +
                             std::to_string(weight.dim(1)) + "]");
        }
        y = add(y, bias);
    }
    return y;
}

template <typename T>
TokenMap<T> linear(const TokenMap<T>& x, Var<T> weight, Var<T> bias) {
    return TokenMap<T>{linear(x.v, weight, bias), x.h, x.w};
}

// LayerNorm over the channel (last) axis of a token map.
template <typename T>
TokenMap<T> layer_norm(const TokenMap<T>& x, Var<T> gamma, Var<T> beta, double eps = 1e-6) {
    return TokenMap<T>{layer_norm(x.v, gamma, beta, eps), x.h, x.w};
}

template <typename T>
FeatureMap<T> conv2d(const FeatureMap<T>& x, Var<T> w, Var<T> b, int64_t stride, int64_t pad,
                     int64_t groups = 1) {
    return FeatureMap<T>{conv2d(x.v, w, b, stride, stride, pad, pad, groups)};
}

// The 3x3/s1/p1 mean filter with pad cells excluded from each divisor.
template <typename T>
FeatureMap<T> avg_pool3(const FeatureMap<T>& x) {
    return FeatureMap<T>{avg_pool(x.v, 3, 3, 1, 1, 1, 1)};
}

template <typename T>
FeatureMap<T> gelu(const FeatureMap<T>& x) {
    return FeatureMap<T>{gelu(x.v)};
}
template <typename T>
TokenMap<T> gelu(const TokenMap<T>& x) {
    return TokenMap<T>{gelu(x.v), x.h, x.w};
}

}  // namespace uninext
