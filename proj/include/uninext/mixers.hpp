#pragma once

// The six interchangeable spatial token mixers plus the embedded-convolution
// (EC) fusion rule. Every mixer maps a FeatureMap (B,C,H,W) to the same dims.
//
// Attention mixers share one masked-window core. Non-divisible extents are
// zero-padded bottom/right and padded tokens are masked out of every softmax
// with a -1e9 logit offset (finite, so no NaN; the weight underflows to an
// exact 0). Window sizes are clamped to the map extents, which makes
// "window >= map" the global-attention mode with no separate code path.

#include <string>
#include <vector>

#include "uninext/nn.hpp"

namespace uninext {

enum class MixerKind {
    kPooling,
    kDWConv7,
    kSpatialReduction,
    kLocalWindow,
    kShiftWindow,
    kCrossShapedWindow,
};

inline const char* mixer_name(MixerKind k) {
    switch (k) {
        case MixerKind::kPooling: return "pooling";
        case MixerKind::kDWConv7: return "dwconv7";
        case MixerKind::kSpatialReduction: return "spatial-reduction";
        case MixerKind::kLocalWindow: return "local-window";
        case MixerKind::kShiftWindow: return "shift-window";
        case MixerKind::kCrossShapedWindow: return "cross-shaped-window";
    }
    return "?";
}

inline bool mixer_is_attention(MixerKind k) {
    return k == MixerKind::kSpatialReduction || k == MixerKind::kLocalWindow ||
           k == MixerKind::kShiftWindow || k == MixerKind::kCrossShapedWindow;
}

inline MixerKind parse_mixer(const std::string& s) {
    for (MixerKind k : {MixerKind::kPooling, MixerKind::kDWConv7, MixerKind::kSpatialReduction,
                        MixerKind::kLocalWindow, MixerKind::kShiftWindow,
                        MixerKind::kCrossShapedWindow}) {
        if (s == mixer_name(k)) return k;
    }
    throw ConfigError("unknown mixer kind '" + s + "'");
}

// Per-block attention parameters, bound to a tape. Weights are (C, C) with
// (C) biases; `window` < 1 means global (whole map).
template <typename T>
struct AttentionVars {
    int64_t heads = 1;
    int64_t window = -1;
    Var<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

// Embedded-convolution branch: depthwise 3x3 (w: (C,1,3,3), b: (C)).
template <typename T>
struct EcVars {
    bool enabled = false;
    bool pre_projection = false;  // add dwconv(V) before the output projection
    Var<T> w, b;
};

// Spatial-reduction parameters: r x r stride-r conv + LN (used when ratio>1).
template <typename T>
struct SrVars {
    int64_t ratio = 1;
    Var<T> w, b;          // (C, C, r, r), (C)
    Var<T> gamma, beta;   // (C)
};

// Softmax weights and window bookkeeping captured for tests/analysis.
template <typename T>
struct AttentionTrace {
    Tensor<T> weights;             // (B, nw, heads, n, n)
    std::vector<int32_t> cell_ids; // region id per padded grid cell, -1 = pad
    int64_t grid_h = 0, grid_w = 0, wh = 0, ww = 0, shift_h = 0, shift_w = 0;
};

namespace detail {

// Region ids on the padded grid after rolling by (-sh, -sw). A cell that
// sourced a zero-pad location gets -1; real cells get a 2x2 torus-quadrant id
// (whether their row/column wrapped during the roll), which is exactly the
// pre-shift contiguity partition the shifted-window mask needs.
inline std::vector<int32_t> shifted_cell_ids(int64_t H, int64_t W, int64_t Hp, int64_t Wp,
                                             int64_t sh, int64_t sw) {
    std::vector<int32_t> ids(static_cast<size_t>(Hp * Wp));
    for (int64_t h = 0; h < Hp; ++h) {
        for (int64_t w = 0; w < Wp; ++w) {
            const int64_t oh = (h + sh) % Hp;
            const int64_t ow = (w + sw) % Wp;
            int32_t id;
            if (oh >= H || ow >= W) {
                id = -1;
            } else {
                const int32_t bh = (sh > 0 && h >= Hp - sh) ? 1 : 0;
                const int32_t bw = (sw > 0 && w >= Wp - sw) ? 1 : 0;
                id = bh * 2 + bw;
            }
            ids[static_cast<size_t>(h * Wp + w)] = id;
        }
    }
    return ids;
}

// Pad-only ids (no shift): 0 for real cells, -1 for padded ones; empty when
// nothing is padded so callers can skip masking entirely.
inline std::vector<int32_t> pad_cell_ids(int64_t H, int64_t W, int64_t Hp, int64_t Wp) {
    if (Hp == H && Wp == W) return {};
    return shifted_cell_ids(H, W, Hp, Wp, 0, 0);
}

// Gather per-window token ids in window_partition order: (nw, n).
inline std::vector<int32_t> partition_cell_ids(const std::vector<int32_t>& grid, int64_t Hp,
                                               int64_t Wp, int64_t wh, int64_t ww) {
    const int64_t nh = Hp / wh, nw = Wp / ww;
    std::vector<int32_t> out;
    out.reserve(static_cast<size_t>(nh * nw * wh * ww));
    for (int64_t wr = 0; wr < nh; ++wr) {
        for (int64_t wc = 0; wc < nw; ++wc) {
            for (int64_t i = 0; i < wh; ++i) {
                for (int64_t j = 0; j < ww; ++j) {
                    out.push_back(grid[static_cast<size_t>((wr * wh + i) * Wp + wc * ww + j)]);
                }
            }
        }
    }
    return out;
}

// Additive mask (NW, 1, n, n): 0 where key j is a real token of query i's
// region, -1e9 otherwise. Returns an undefined tensor if nothing is blocked.
template <typename T>
Tensor<T> window_mask(const std::vector<int32_t>& win_ids, int64_t NW, int64_t n) {
    bool blocked = false;
    for (int64_t w = 0; w < NW && !blocked; ++w) {
        const int32_t first = win_ids[static_cast<size_t>(w * n)];
        for (int64_t t = 0; t < n; ++t) {
            const int32_t id = win_ids[static_cast<size_t>(w * n + t)];
            if (id != first || id < 0) {
                blocked = true;
                break;
            }
        }
    }
    if (!blocked) return Tensor<T>();
    Tensor<T> mask({NW, 1, n, n});
    T* m = mask.data();
    for (int64_t w = 0; w < NW; ++w) {
        const int32_t* ids = win_ids.data() + w * n;
        T* mw = m + w * n * n;
        for (int64_t i = 0; i < n; ++i) {
            for (int64_t j = 0; j < n; ++j) {
                const bool ok = ids[j] >= 0 && ids[i] == ids[j];
                mw[i * n + j] = ok ? T(0) : T(-1e9);
            }
        }
    }
    return mask;
}

// Masked multi-head attention over rectangular windows of one shared grid.
// q/k/v are (B, C, Hp, Wp) with extents divisible by (wh, ww); returns the
// attended map on the same grid.
template <typename T>
FeatureMap<T> windowed_mha(const FeatureMap<T>& q, const FeatureMap<T>& k, const FeatureMap<T>& v,
                           int64_t heads, int64_t wh, int64_t ww,
                           const std::vector<int32_t>& cell_ids,
                           AttentionTrace<T>* trace = nullptr) {
    const int64_t B = q.batch(), C = q.channels(), Hp = q.height(), Wp = q.width();
    const int64_t D = C / heads;
    const int64_t NW = (Hp / wh) * (Wp / ww), n = wh * ww;

    auto heads_of = [&](const FeatureMap<T>& m) {
        Windowed<T> w = window_partition(m, wh, ww);            // (B*NW, n, C)
        Var<T> r = reshape(w.v, {B, NW, n, heads, D});
        return transpose(r, {0, 1, 3, 2, 4});                   // (B, NW, heads, n, D)
    };
    Var<T> qh = heads_of(q), kh = heads_of(k), vh = heads_of(v);
    Var<T> logits = matmul(qh, transpose(kh, {0, 1, 2, 4, 3}));  // (B, NW, heads, n, n)

    std::vector<int32_t> win_ids;
    if (!cell_ids.empty()) {
        win_ids = partition_cell_ids(cell_ids, Hp, Wp, wh, ww);
        Tensor<T> mask = window_mask<T>(win_ids, NW, n);
        if (mask.defined()) logits = add(logits, q.v.tape->leaf(std::move(mask)));
    }
    Var<T> attn = softmax(logits, -1);
    if (trace != nullptr) {
        trace->weights = attn.val();
        trace->cell_ids = cell_ids;
        trace->grid_h = Hp;
        trace->grid_w = Wp;
        trace->wh = wh;
        trace->ww = ww;
    }
    Var<T> ctx = matmul(attn, vh);                        // (B, NW, heads, n, D)
    Var<T> merged = reshape(transpose(ctx, {0, 1, 3, 2, 4}), {B * NW, n, C});
    return window_reverse(Windowed<T>{merged, B, Hp, Wp, wh, ww});
}

inline void check_heads(const char* op, int64_t C, int64_t heads) {
    if (heads < 1 || C % heads != 0) {
        throw ConfigError(std::string(op) + ": channels " + std::to_string(C) +
                          " not divisible by heads " + std::to_string(heads));
    }
}

// Q/K/V token projections from the full-resolution tokens (Q pre-scaled by
// the attention logit scale 1/sqrt(D)).
template <typename T>
struct Qkv {
    TokenMap<T> q, k, v;
};
template <typename T>
Qkv<T> project_qkv(const TokenMap<T>& tokens, const AttentionVars<T>& p) {
    const int64_t D = tokens.channels() / p.heads;
    TokenMap<T> q = linear(tokens, p.wq, p.bq);
    q.v = scale(q.v, 1.0 / std::sqrt(static_cast<double>(D)));
    return Qkv<T>{q, linear(tokens, p.wk, p.bk), linear(tokens, p.wv, p.bv)};
}

}  // namespace detail

// The depthwise 3x3 EC branch over an operand kept in spatial layout.
template <typename T>
FeatureMap<T> ec_branch(const FeatureMap<T>& operand, const EcVars<T>& ec) {
    if (operand.channels() != ec.w.dim(0)) {
        throw ShapeError("ec_fuse: operand channels " + std::to_string(operand.channels()) +
                         " != kernel channels " + std::to_string(ec.w.dim(0)));
    }
    return conv2d(operand, ec.w, ec.b, 1, 1, operand.channels());
}

// Elementwise sum of the mixer output and the depthwise-convolved operand
// (the mixer input for non-attention kinds, full-layout V for attention).
template <typename T>
FeatureMap<T> ec_fuse(const FeatureMap<T>& mixer_out, const FeatureMap<T>& operand,
                      const EcVars<T>& ec) {
    if (!ec.enabled) return mixer_out;
    return FeatureMap<T>{add(mixer_out.v, ec_branch(operand, ec).v)};
}

// avg_pool3x3(x) - x.
template <typename T>
FeatureMap<T> pooling_mixer(const FeatureMap<T>& x) {
    return FeatureMap<T>{sub(avg_pool3(x).v, x.v)};
}

// Depthwise 7x7, pad 3.
template <typename T>
FeatureMap<T> dwconv7_mixer(const FeatureMap<T>& x, Var<T> w, Var<T> b) {
    return conv2d(x, w, b, 1, 3, x.channels());
}

// Window attention per Eq.-style masked softmax; `window` < 1 or >= map
// extent means global. EC branch is dwconv(V) in full spatial layout.
template <typename T>
FeatureMap<T> local_window_attention(const FeatureMap<T>& x, const AttentionVars<T>& p,
                                     const EcVars<T>& ec, AttentionTrace<T>* trace = nullptr) {
    const int64_t C = x.channels(), H = x.height(), W = x.width();
    detail::check_heads("local_window_attention", C, p.heads);
    const int64_t wh = p.window < 1 ? H : std::min<int64_t>(p.window, H);
    const int64_t ww = p.window < 1 ? W : std::min<int64_t>(p.window, W);

    detail::Qkv<T> qkv = detail::project_qkv(spatial_token_convert(x), p);
    FeatureMap<T> vmap = spatial_token_convert(qkv.v);
    FeatureMap<T> qp = pad_to_multiple(spatial_token_convert(qkv.q), wh, ww);
    FeatureMap<T> kp = pad_to_multiple(spatial_token_convert(qkv.k), wh, ww);
    FeatureMap<T> vp = pad_to_multiple(vmap, wh, ww);

    const std::vector<int32_t> ids = detail::pad_cell_ids(H, W, qp.height(), qp.width());
    FeatureMap<T> attended = detail::windowed_mha(qp, kp, vp, p.heads, wh, ww, ids, trace);
    TokenMap<T> out_tok = spatial_token_convert(crop_to(attended, H, W));
    if (ec.enabled && ec.pre_projection) {
        out_tok.v = add(out_tok.v, spatial_token_convert(ec_branch(vmap, ec)).v);
    }
    FeatureMap<T> out = spatial_token_convert(linear(out_tok, p.wo, p.bo));
    if (ec.enabled && !ec.pre_projection) return ec_fuse(out, vmap, ec);
    return out;
}

// Swin-style alternation: roll by -floor(w/2), masked window attention where
// tokens from different pre-shift regions cannot see each other, roll back.
// Axes already covered by one window do not shift (a torus roll of a single
// global window would be a no-op wrapped in needless masking).
template <typename T>
FeatureMap<T> shift_window_attention(const FeatureMap<T>& x, const AttentionVars<T>& p,
                                     bool shifted, const EcVars<T>& ec,
                                     AttentionTrace<T>* trace = nullptr) {
    const int64_t C = x.channels(), H = x.height(), W = x.width();
    detail::check_heads("shift_window_attention", C, p.heads);
    const int64_t wh = p.window < 1 ? H : std::min<int64_t>(p.window, H);
    const int64_t ww = p.window < 1 ? W : std::min<int64_t>(p.window, W);
    const int64_t sh = (shifted && wh < H) ? wh / 2 : 0;
    const int64_t sw = (shifted && ww < W) ? ww / 2 : 0;

    detail::Qkv<T> qkv = detail::project_qkv(spatial_token_convert(x), p);
    FeatureMap<T> vmap = spatial_token_convert(qkv.v);
    auto place = [&](const TokenMap<T>& t) {
        FeatureMap<T> m = pad_to_multiple(spatial_token_convert(t), wh, ww);
        if (sh != 0 || sw != 0) m = cyclic_shift(m, -sh, -sw);
        return m;
    };
    FeatureMap<T> qp = place(qkv.q), kp = place(qkv.k), vp = place(qkv.v);

    std::vector<int32_t> ids =
        (sh != 0 || sw != 0)
            ? detail::shifted_cell_ids(H, W, qp.height(), qp.width(), sh, sw)
            : detail::pad_cell_ids(H, W, qp.height(), qp.width());
    FeatureMap<T> attended = detail::windowed_mha(qp, kp, vp, p.heads, wh, ww, ids, trace);
    if (trace != nullptr) {
        trace->shift_h = sh;
        trace->shift_w = sw;
    }
    if (sh != 0 || sw != 0) attended = cyclic_shift(attended, sh, sw);
    TokenMap<T> out_tok = spatial_token_convert(crop_to(attended, H, W));
    if (ec.enabled && ec.pre_projection) {
        out_tok.v = add(out_tok.v, spatial_token_convert(ec_branch(vmap, ec)).v);
    }
    FeatureMap<T> out = spatial_token_convert(linear(out_tok, p.wo, p.bo));
    if (ec.enabled && !ec.pre_projection) return ec_fuse(out, vmap, ec);
    return out;
}

// Half the heads attend within sw x W horizontal stripes on the first channel
// half, the rest within H x sw vertical stripes on the second half; stripe
// width < 1 means global for both groups.
template <typename T>
FeatureMap<T> cross_shaped_window_attention(const FeatureMap<T>& x, const AttentionVars<T>& p,
                                            int64_t stripe_width, const EcVars<T>& ec,
                                            AttentionTrace<T>* trace_h = nullptr,
                                            AttentionTrace<T>* trace_v = nullptr) {
    const int64_t C = x.channels(), H = x.height(), W = x.width();
    detail::check_heads("cross_shaped_window_attention", C, p.heads);
    if (p.heads % 2 != 0) {
        throw ConfigError("cross_shaped_window_attention: heads must be even, got " +
                          std::to_string(p.heads));
    }
    detail::Qkv<T> qkv = detail::project_qkv(spatial_token_convert(x), p);
    FeatureMap<T> vmap = spatial_token_convert(qkv.v);

    const int64_t Ch = C / 2;
    auto half = [&](const TokenMap<T>& t, int64_t part) {
        Var<T> s = slice(t.v, {0, 0, part * Ch}, {t.batch(), t.tokens(), Ch});
        return spatial_token_convert(TokenMap<T>{s, t.h, t.w});
    };

    auto run_group = [&](int64_t part, Orientation o, AttentionTrace<T>* trace) {
        FeatureMap<T> qg = half(qkv.q, part), kg = half(qkv.k, part), vg = half(qkv.v, part);
        int64_t wh, ww;
        if (o == Orientation::kHorizontal) {
            wh = stripe_width < 1 ? H : std::min<int64_t>(stripe_width, H);
            ww = W;
        } else {
            wh = H;
            ww = stripe_width < 1 ? W : std::min<int64_t>(stripe_width, W);
        }
        FeatureMap<T> qp = pad_to_multiple(qg, wh, ww);
        FeatureMap<T> kp = pad_to_multiple(kg, wh, ww);
        FeatureMap<T> vp = pad_to_multiple(vg, wh, ww);
        const std::vector<int32_t> ids = detail::pad_cell_ids(H, W, qp.height(), qp.width());
        FeatureMap<T> att =
            detail::windowed_mha(qp, kp, vp, p.heads / 2, wh, ww, ids, trace);
        return crop_to(att, H, W);
    };
    FeatureMap<T> horizontal = run_group(0, Orientation::kHorizontal, trace_h);
    FeatureMap<T> vertical = run_group(1, Orientation::kVertical, trace_v);
    Var<T> merged = concat<T>({horizontal.v, vertical.v}, 1);
    TokenMap<T> out_tok = spatial_token_convert(FeatureMap<T>{merged});
    if (ec.enabled && ec.pre_projection) {
        out_tok.v = add(out_tok.v, spatial_token_convert(ec_branch(vmap, ec)).v);
    }
    FeatureMap<T> out = spatial_token_convert(linear(out_tok, p.wo, p.bo));
    if (ec.enabled && !ec.pre_projection) return ec_fuse(out, vmap, ec);
    return out;
}

// Q from full-resolution tokens; K,V from tokens reduced by an r x r stride-r
// conv + LN. r == 1 skips the reduction entirely (global attention); r larger
// than the map clamps to a single key token via bottom/right zero padding.
template <typename T>
FeatureMap<T> sra_attention_mixer(const FeatureMap<T>& x, const AttentionVars<T>& p,
                                  const SrVars<T>& sr, const EcVars<T>& ec) {
    const int64_t B = x.batch(), C = x.channels(), H = x.height(), W = x.width();
    detail::check_heads("sra_attention_mixer", C, p.heads);
    if (sr.ratio < 1) throw ConfigError("sra_attention_mixer: reduction ratio must be >= 1");
    const int64_t D = C / p.heads;

    TokenMap<T> tokens = spatial_token_convert(x);
    TokenMap<T> q = linear(tokens, p.wq, p.bq);
    q.v = scale(q.v, 1.0 / std::sqrt(static_cast<double>(D)));

    // Full-resolution V serves as the EC operand and, when there is no
    // reduction, as the attention V; with reduction and EC disabled it would
    // be dead work, so it is materialized only when used.
    TokenMap<T> v_full;
    if (ec.enabled || sr.ratio == 1) v_full = linear(tokens, p.wv, p.bv);

    TokenMap<T> k, v_att;
    if (sr.ratio > 1) {
        FeatureMap<T> xp = pad_to_multiple(x, sr.ratio, sr.ratio);
        FeatureMap<T> red = conv2d(xp, sr.w, sr.b, sr.ratio, 0);
        TokenMap<T> red_tok = layer_norm(spatial_token_convert(red), sr.gamma, sr.beta);
        k = linear(red_tok, p.wk, p.bk);
        v_att = linear(red_tok, p.wv, p.bv);  // shares phi_v with the EC operand
    } else {
        k = linear(tokens, p.wk, p.bk);
        v_att = v_full;
    }

    auto heads_of = [&](const TokenMap<T>& t) {
        Var<T> r = reshape(t.v, {B, t.tokens(), p.heads, D});
        return transpose(r, {0, 2, 1, 3});  // (B, heads, N, D)
    };
    Var<T> qh = heads_of(q), kh = heads_of(k), vh = heads_of(v_att);
    Var<T> logits = matmul(qh, transpose(kh, {0, 1, 3, 2}));  // (B, heads, N, M)
    Var<T> attn = softmax(logits, -1);
    Var<T> ctx = matmul(attn, vh);                            // (B, heads, N, D)
    TokenMap<T> out_tok{reshape(transpose(ctx, {0, 2, 1, 3}), {B, H * W, C}), H, W};
    if (ec.enabled && ec.pre_projection) {
        FeatureMap<T> vmap = spatial_token_convert(v_full);
        out_tok.v = add(out_tok.v, spatial_token_convert(ec_branch(vmap, ec)).v);
    }
    FeatureMap<T> out = spatial_token_convert(linear(out_tok, p.wo, p.bo));
    if (ec.enabled && !ec.pre_projection) return ec_fuse(out, spatial_token_convert(v_full), ec);
    return out;
}

}  // namespace uninext
