#pragma once

// Model assembly: variant configuration, named-parameter store with
// deterministic seeded init, and the forward graph builders for stem,
// downsampling, unified blocks (mixer + EC, ICMLP + HdC, PC) and the
// classification head.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "uninext/mixers.hpp"

namespace uninext {

struct Toggles {
    bool hdc = true;
    bool ec = true;
    bool pc = true;
    bool stem = true;  // off = single conv+LN+GELU stem
};

enum class Mode { kClassification, kDense };

inline const char* mode_name(Mode m) {
    return m == Mode::kClassification ? "classification" : "dense";
}

struct VariantConfig {
    std::string name = "custom";
    int64_t stem_channels = 32;
    std::array<int64_t, 4> stage_channels{64, 128, 256, 512};
    std::array<int64_t, 4> depths{2, 2, 18, 2};
    std::array<int64_t, 4> heads{2, 4, 8, 16};
    int64_t mlp_ratio = 4;
    // Window size per stage; -1 means global. Stage 4 is global in both modes.
    std::array<int64_t, 4> window_cls{7, 7, 7, -1};
    std::array<int64_t, 4> window_dense{11, 11, 11, -1};
    std::array<int64_t, 4> sr_ratios{8, 4, 2, 1};
    std::array<int64_t, 4> stripe_widths{1, 2, 7, -1};
    MixerKind mixer = MixerKind::kLocalWindow;
    Toggles toggles;
    Mode mode = Mode::kClassification;
    bool ec_pre_projection = false;
    int64_t num_classes = 1000;
    double drop_path_rate = 0.0;
    uint64_t seed = 0;

    int64_t window(int stage) const {
        return mode == Mode::kDense ? window_dense[static_cast<size_t>(stage)]
                                    : window_cls[static_cast<size_t>(stage)];
    }
};

inline void validate_config(const VariantConfig& cfg) {
    if (cfg.stem_channels < 1 || cfg.num_classes < 1 || cfg.mlp_ratio < 1) {
        throw ConfigError("config: stem channels, classes and mlp ratio must be positive");
    }
    for (int s = 0; s < 4; ++s) {
        const auto i = static_cast<size_t>(s);
        if (cfg.stage_channels[i] < 1 || cfg.depths[i] < 1 || cfg.heads[i] < 1) {
            throw ConfigError("config: stage " + std::to_string(s + 1) +
                              " channels/depth/heads must be positive");
        }
        if (cfg.stage_channels[i] % cfg.heads[i] != 0) {
            throw ConfigError("config: stage " + std::to_string(s + 1) + " channels " +
                              std::to_string(cfg.stage_channels[i]) + " not divisible by heads " +
                              std::to_string(cfg.heads[i]));
        }
        if (cfg.mixer == MixerKind::kCrossShapedWindow && cfg.heads[i] % 2 != 0) {
            throw ConfigError("config: cross-shaped-window needs even heads, stage " +
                              std::to_string(s + 1) + " has " + std::to_string(cfg.heads[i]));
        }
        if (cfg.sr_ratios[i] < 1) throw ConfigError("config: reduction ratios must be >= 1");
    }
    if (cfg.drop_path_rate < 0.0 || cfg.drop_path_rate >= 1.0) {
        throw ConfigError("config: drop_path_rate must be in [0, 1)");
    }
}

inline VariantConfig make_variant(const std::string& name) {
    VariantConfig cfg;
    cfg.name = name;
    if (name == "T") {
        cfg.stem_channels = 32;
        cfg.stage_channels = {64, 128, 256, 512};
        cfg.heads = {2, 4, 8, 16};
    } else if (name == "S") {
        cfg.stem_channels = 48;
        cfg.stage_channels = {96, 192, 384, 768};
        cfg.heads = {3, 6, 12, 24};
    } else if (name == "B") {
        cfg.stem_channels = 64;
        cfg.stage_channels = {128, 256, 512, 1024};
        cfg.heads = {4, 8, 16, 32};
    } else {
        throw ConfigError("unknown variant '" + name + "' (expected T, S or B)");
    }
    cfg.depths = {2, 2, 18, 2};
    return cfg;
}

// Small configuration for tests and desk-scale training.
inline VariantConfig tiny_config() {
    VariantConfig cfg;
    cfg.name = "tiny";
    cfg.stem_channels = 8;
    cfg.stage_channels = {8, 16, 32, 64};
    cfg.depths = {1, 1, 2, 1};
    cfg.heads = {2, 2, 4, 8};
    cfg.num_classes = 4;
    return cfg;
}

// ---------------------------------------------------------------------------
// Parameter store and structural references (indices into the store).
// ---------------------------------------------------------------------------
struct LnRef {
    int32_t gamma = -1, beta = -1;
};
struct WRef {
    int32_t w = -1, b = -1;
};
struct MixerRefs {
    WRef q, k, v, o;   // attention projections
    WRef dw;           // dwconv7 kernel
    WRef sr;           // spatial-reduction conv
    LnRef sr_ln;
    WRef ec;           // embedded-convolution kernel
};
struct BlockRefs {
    LnRef ln1, ln2;
    MixerRefs mixer;
    WRef fc1, fc2;
    WRef hdc;
    LnRef hdc_ln;
    WRef pc;
};
struct StageRefs {
    WRef down;
    LnRef down_ln;
    std::vector<BlockRefs> blocks;
};
struct ModelRefs {
    std::vector<WRef> stem_convs;
    std::vector<LnRef> stem_lns;
    std::array<StageRefs, 4> stages;
    LnRef norm;
    WRef head;
};

template <typename T>
struct Param {
    std::string name;
    Tensor<T> value;
    bool decay = true;  // false for LN affine and biases
};

template <typename T>
class Model {
public:
    explicit Model(const VariantConfig& cfg, double init_sigma = 0.02) : config(cfg) {
        validate_config(cfg);
        build_(init_sigma);
    }

    VariantConfig config;
    std::vector<Param<T>> params;
    ModelRefs refs;

    int64_t param_count() const {
        int64_t n = 0;
        for (const auto& p : params) n += p.value.numel();
        return n;
    }

    Param<T>* find(const std::string& name) {
        for (auto& p : params) {
            if (p.name == name) return &p;
        }
        return nullptr;
    }

    // Registers every parameter as a leaf, in registration order.
    std::vector<Var<T>> bind(Tape<T>& tape) const {
        std::vector<Var<T>> vars;
        vars.reserve(params.size());
        for (const auto& p : params) vars.push_back(tape.leaf(p.value));
        return vars;
    }

private:
    enum class Init { kTruncNormal, kZeros, kOnes };

    int32_t register_(const std::string& name, Dims dims, Init init, bool decay,
                      double sigma) {
        // Each parameter draws from its own substream keyed by registration
        // index, so values depend only on (seed, index, shape).
        Rng rng = Rng(config.seed).split(static_cast<uint64_t>(params.size()) + 1);
        Tensor<T> t;
        switch (init) {
            case Init::kTruncNormal: t = Tensor<T>::trunc_normal(dims, rng, 0.0, sigma); break;
            case Init::kZeros: t = Tensor<T>::zeros(dims); break;
            case Init::kOnes: t = Tensor<T>::full(dims, T(1)); break;
        }
        params.push_back(Param<T>{name, std::move(t), decay});
        return static_cast<int32_t>(params.size() - 1);
    }

    WRef reg_linear_(const std::string& base, int64_t cin, int64_t cout, double sigma) {
        WRef r;
        r.w = register_(base + ".w", {cin, cout}, Init::kTruncNormal, true, sigma);
        r.b = register_(base + ".b", {cout}, Init::kZeros, false, sigma);
        return r;
    }

    WRef reg_conv_(const std::string& base, int64_t cout, int64_t cin_g, int64_t k,
                   double sigma) {
        WRef r;
        r.w = register_(base + ".w", {cout, cin_g, k, k}, Init::kTruncNormal, true, sigma);
        r.b = register_(base + ".b", {cout}, Init::kZeros, false, sigma);
        return r;
    }

    LnRef reg_ln_(const std::string& base, int64_t c) {
        LnRef r;
        r.gamma = register_(base + ".g", {c}, Init::kOnes, false, 0.0);
        r.beta = register_(base + ".b", {c}, Init::kZeros, false, 0.0);
        return r;
    }

    void build_(double sigma) {
        const VariantConfig& c = config;
        // Stem: full form is three 3x3 convs (s2,s1,s1), each + LN + GELU;
        // reduced form (toggle off) is the first conv + LN + GELU only.
        const int n_stem = c.toggles.stem ? 3 : 1;
        for (int i = 0; i < n_stem; ++i) {
            const int64_t cin = i == 0 ? 3 : c.stem_channels;
            refs.stem_convs.push_back(
                reg_conv_("stem.conv" + std::to_string(i + 1), c.stem_channels, cin, 3, sigma));
            refs.stem_lns.push_back(reg_ln_("stem.ln" + std::to_string(i + 1), c.stem_channels));
        }
        int64_t prev = c.stem_channels;
        for (int s = 0; s < 4; ++s) {
            const auto si = static_cast<size_t>(s);
            StageRefs& st = refs.stages[si];
            const int64_t C = c.stage_channels[si];
            const std::string sp = "stages." + std::to_string(s + 1);
            st.down = reg_conv_(sp + ".down", C, prev, 3, sigma);
            st.down_ln = reg_ln_(sp + ".down_ln", C);
            prev = C;
            for (int64_t b = 0; b < c.depths[si]; ++b) {
                const std::string bp = sp + ".blocks." + std::to_string(b + 1);
                BlockRefs br;
                br.ln1 = reg_ln_(bp + ".ln1", C);
                if (mixer_is_attention(c.mixer)) {
                    br.mixer.q = reg_linear_(bp + ".mixer.q", C, C, sigma);
                    br.mixer.k = reg_linear_(bp + ".mixer.k", C, C, sigma);
                    br.mixer.v = reg_linear_(bp + ".mixer.v", C, C, sigma);
                    br.mixer.o = reg_linear_(bp + ".mixer.o", C, C, sigma);
                    if (c.mixer == MixerKind::kSpatialReduction && c.sr_ratios[si] > 1) {
                        const int64_t r = c.sr_ratios[si];
                        br.mixer.sr.w = register_(bp + ".mixer.sr.w", {C, C, r, r},
                                                  Init::kTruncNormal, true, sigma);
                        br.mixer.sr.b = register_(bp + ".mixer.sr.b", {C}, Init::kZeros, false,
                                                  sigma);
                        br.mixer.sr_ln = reg_ln_(bp + ".mixer.sr_ln", C);
                    }
                } else if (c.mixer == MixerKind::kDWConv7) {
                    br.mixer.dw.w = register_(bp + ".mixer.dw.w", {C, 1, 7, 7},
                                              Init::kTruncNormal, true, sigma);
                    br.mixer.dw.b = register_(bp + ".mixer.dw.b", {C}, Init::kZeros, false, sigma);
                }
                if (c.toggles.ec) {
                    br.mixer.ec.w = register_(bp + ".mixer.ec.w", {C, 1, 3, 3},
                                              Init::kTruncNormal, true, sigma);
                    br.mixer.ec.b = register_(bp + ".mixer.ec.b", {C}, Init::kZeros, false, sigma);
                }
                br.ln2 = reg_ln_(bp + ".ln2", C);
                const int64_t RC = c.mlp_ratio * C;
                br.fc1 = reg_linear_(bp + ".mlp.fc1", C, RC, sigma);
                if (c.toggles.hdc) {
                    br.hdc.w = register_(bp + ".mlp.hdc.w", {RC, 1, 3, 3}, Init::kTruncNormal,
                                         true, sigma);
                    br.hdc.b = register_(bp + ".mlp.hdc.b", {RC}, Init::kZeros, false, sigma);
                    br.hdc_ln = reg_ln_(bp + ".mlp.hdc_ln", RC);
                }
                br.fc2 = reg_linear_(bp + ".mlp.fc2", RC, C, sigma);
                if (c.toggles.pc) {
                    br.pc.w = register_(bp + ".pc.w", {C, 1, 3, 3}, Init::kTruncNormal, true,
                                        sigma);
                    br.pc.b = register_(bp + ".pc.b", {C}, Init::kZeros, false, sigma);
                }
                st.blocks.push_back(br);
            }
        }
        refs.norm = reg_ln_("norm", c.stage_channels[3]);
        refs.head = reg_linear_("head", c.stage_channels[3], c.num_classes, sigma);
    }
};

// Convenience accessor: .at(-1) yields an unbound Var (absent bias/params).
template <typename T>
struct BoundParams {
    const std::vector<Var<T>>& v;
    Var<T> at(int32_t i) const {
        return i < 0 ? Var<T>{} : v[static_cast<size_t>(i)];
    }
};

// ---------------------------------------------------------------------------
// Forward builders.
// ---------------------------------------------------------------------------
namespace detail {
template <typename T>
TokenMap<T> ln_tokens(const TokenMap<T>& t, const BoundParams<T>& bp, const LnRef& r) {
    return layer_norm(t, bp.at(r.gamma), bp.at(r.beta));
}

// conv -> LN -> GELU in token space, returned as a feature map.
template <typename T>
FeatureMap<T> conv_ln_gelu(const FeatureMap<T>& x, const BoundParams<T>& bp, const WRef& cw,
                           const LnRef& ln, int64_t stride) {
    FeatureMap<T> y = conv2d(x, bp.at(cw.w), bp.at(cw.b), stride, 1);
    TokenMap<T> t = gelu(ln_tokens(spatial_token_convert(y), bp, ln));
    return spatial_token_convert(t);
}
}  // namespace detail

template <typename T>
FeatureMap<T> stem_forward(const Model<T>& m, const BoundParams<T>& bp, const FeatureMap<T>& img) {
    if (img.channels() != 3) {
        throw ShapeError("stem: expected 3 input channels, got " + std::to_string(img.channels()));
    }
    if (img.height() % 2 != 0 || img.width() % 2 != 0) {
        throw ShapeError("stem: input extents must be even, got " + std::to_string(img.height()) +
                         "x" + std::to_string(img.width()));
    }
    FeatureMap<T> x = img;
    for (size_t i = 0; i < m.refs.stem_convs.size(); ++i) {
        x = detail::conv_ln_gelu(x, bp, m.refs.stem_convs[i], m.refs.stem_lns[i],
                                 i == 0 ? 2 : 1);
    }
    return x;
}

// 3x3 stride-2 pad-1 conv to the stage width, then LN.
template <typename T>
FeatureMap<T> downsample_forward(const BoundParams<T>& bp, const StageRefs& st,
                                 const FeatureMap<T>& x) {
    FeatureMap<T> y = conv2d(x, bp.at(st.down.w), bp.at(st.down.b), 2, 1);
    return spatial_token_convert(
        detail::ln_tokens(spatial_token_convert(y), bp, st.down_ln));
}

// ICMLP: expand C -> R*C; optional HdC branch h += GELU(LN(phi(dwconv(phi~(h)))));
// GELU; project back to C.
template <typename T>
TokenMap<T> icmlp_forward(const BoundParams<T>& bp, const BlockRefs& br, bool hdc_enabled,
                          const TokenMap<T>& x) {
    TokenMap<T> h = linear(x, bp.at(br.fc1.w), bp.at(br.fc1.b));
    if (hdc_enabled) {
        FeatureMap<T> hm = spatial_token_convert(h);
        FeatureMap<T> cm = conv2d(hm, bp.at(br.hdc.w), bp.at(br.hdc.b), 1, 1, hm.channels());
        TokenMap<T> ct = detail::ln_tokens(spatial_token_convert(cm), bp, br.hdc_ln);
        h.v = add(h.v, gelu(ct).v);
    }
    h = gelu(h);
    return linear(h, bp.at(br.fc2.w), bp.at(br.fc2.b));
}

// PC: x + phi(dwconv3x3(phi~(x))); disabled -> identity.
template <typename T>
FeatureMap<T> post_convolution(const BoundParams<T>& bp, const BlockRefs& br, bool enabled,
                               const FeatureMap<T>& x) {
    if (!enabled) return x;
    FeatureMap<T> c = conv2d(x, bp.at(br.pc.w), bp.at(br.pc.b), 1, 1, x.channels());
    return FeatureMap<T>{add(x.v, c.v)};
}

template <typename T>
TokenMap<T> post_convolution(const BoundParams<T>& bp, const BlockRefs& br, bool enabled,
                             const TokenMap<T>& x) {
    if (x.tokens() != x.h * x.w) {
        throw ShapeError("post_convolution: " + std::to_string(x.tokens()) + " tokens != " +
                         std::to_string(x.h) + "x" + std::to_string(x.w));
    }
    if (!enabled) return x;
    return spatial_token_convert(
        post_convolution(bp, br, enabled, spatial_token_convert(x)));
}

template <typename T>
FeatureMap<T> apply_mixer(const Model<T>& m, const BoundParams<T>& bp, const BlockRefs& br,
                          int stage, int64_t block_idx, const FeatureMap<T>& mixin) {
    const VariantConfig& c = m.config;
    const auto si = static_cast<size_t>(stage);
    EcVars<T> ec{c.toggles.ec, c.ec_pre_projection, bp.at(br.mixer.ec.w), bp.at(br.mixer.ec.b)};
    if (c.mixer == MixerKind::kPooling) {
        return ec_fuse(pooling_mixer(mixin), mixin, ec);
    }
    if (c.mixer == MixerKind::kDWConv7) {
        return ec_fuse(dwconv7_mixer(mixin, bp.at(br.mixer.dw.w), bp.at(br.mixer.dw.b)), mixin,
                       ec);
    }
    AttentionVars<T> p{c.heads[si], c.window(stage),
                       bp.at(br.mixer.q.w), bp.at(br.mixer.q.b),
                       bp.at(br.mixer.k.w), bp.at(br.mixer.k.b),
                       bp.at(br.mixer.v.w), bp.at(br.mixer.v.b),
                       bp.at(br.mixer.o.w), bp.at(br.mixer.o.b)};
    switch (c.mixer) {
        case MixerKind::kLocalWindow:
            return local_window_attention(mixin, p, ec);
        case MixerKind::kShiftWindow:
            // Alternation starts unshifted within each stage.
            return shift_window_attention(mixin, p, block_idx % 2 == 1, ec);
        case MixerKind::kCrossShapedWindow: {
            int64_t sw = c.stripe_widths[si];
            if (stage == 3) sw = -1;  // stage 4 is global
            return cross_shaped_window_attention(mixin, p, sw, ec);
        }
        case MixerKind::kSpatialReduction: {
            SrVars<T> sr{c.sr_ratios[si], bp.at(br.mixer.sr.w), bp.at(br.mixer.sr.b),
                         bp.at(br.mixer.sr_ln.gamma), bp.at(br.mixer.sr_ln.beta)};
            return sra_attention_mixer(mixin, p, sr, ec);
        }
        default:
            throw UsageError("apply_mixer: unhandled mixer kind");
    }
}

struct ForwardOptions {
    bool training = false;
    Rng* droppath = nullptr;  // consulted only when training with rate > 0
};

template <typename T>
struct ForwardResult {
    Var<T> logits;
    std::array<Var<T>, 4> stage_outputs;  // (B, C_i, H_i, W_i) feature maps
    std::vector<Var<T>> param_vars;       // leaves in parameter order
};

// y = x + mixer branch; z = y + ICMLP branch; out = PC(z).
template <typename T>
FeatureMap<T> unified_block_forward(const Model<T>& m, const BoundParams<T>& bp,
                                    const BlockRefs& br, int stage, int64_t block_idx,
                                    const FeatureMap<T>& x, double drop_rate = 0.0,
                                    Rng* droppath = nullptr) {
    auto keep = [&](Var<T> branch) {
        if (drop_rate <= 0.0 || droppath == nullptr) return branch;
        const bool kept = droppath->next_uniform() >= drop_rate;
        return scale(branch, kept ? 1.0 / (1.0 - drop_rate) : 0.0);
    };
    TokenMap<T> t1 = detail::ln_tokens(spatial_token_convert(x), bp, br.ln1);
    FeatureMap<T> mixed = apply_mixer(m, bp, br, stage, block_idx, spatial_token_convert(t1));
    FeatureMap<T> y{add(x.v, keep(mixed.v))};

    TokenMap<T> t2 = detail::ln_tokens(spatial_token_convert(y), bp, br.ln2);
    TokenMap<T> mlp = icmlp_forward(bp, br, m.config.toggles.hdc, t2);
    FeatureMap<T> z{add(y.v, keep(spatial_token_convert(mlp).v))};

    return post_convolution(bp, br, m.config.toggles.pc, z);
}

// Core forward over an already-bound parameter list (leaves in registration
// order); used directly when the caller owns the leaves (gradient checks).
template <typename T>
ForwardResult<T> model_forward_bound(const Model<T>& m, Var<T> image,
                                     std::vector<Var<T>> bound, const ForwardOptions& opt = {}) {
    if (image.rank() != 4 || image.dim(1) != 3) {
        throw ShapeError("model_forward: image must be (B,3,H,W), got " + dims_str(image.dims()));
    }
    if (image.dim(2) % 32 != 0 || image.dim(3) % 32 != 0) {
        throw ShapeError("model_forward: extents " + std::to_string(image.dim(2)) + "x" +
                         std::to_string(image.dim(3)) + " must be divisible by 32");
    }
    if (bound.size() != m.params.size()) {
        throw UsageError("model_forward: expected " + std::to_string(m.params.size()) +
                         " bound parameters, got " + std::to_string(bound.size()));
    }
    ForwardResult<T> out;
    out.param_vars = std::move(bound);
    BoundParams<T> bp{out.param_vars};

    const int64_t total_blocks = m.config.depths[0] + m.config.depths[1] + m.config.depths[2] +
                                 m.config.depths[3];
    int64_t block_counter = 0;
    FeatureMap<T> x = stem_forward(m, bp, FeatureMap<T>{image});
    for (int s = 0; s < 4; ++s) {
        const StageRefs& st = m.refs.stages[static_cast<size_t>(s)];
        x = downsample_forward(bp, st, x);
        for (size_t b = 0; b < st.blocks.size(); ++b) {
            double rate = 0.0;
            if (opt.training && m.config.drop_path_rate > 0.0 && total_blocks > 1) {
                rate = m.config.drop_path_rate * static_cast<double>(block_counter) /
                       static_cast<double>(total_blocks - 1);
            }
            x = unified_block_forward(m, bp, st.blocks[b], s, static_cast<int64_t>(b), x, rate,
                                      opt.training ? opt.droppath : nullptr);
            ++block_counter;
        }
        out.stage_outputs[static_cast<size_t>(s)] = x.v;
    }
    TokenMap<T> tokens = detail::ln_tokens(spatial_token_convert(x), bp, m.refs.norm);
    Var<T> pooled = reduce_mean(tokens.v, {1});  // (B, C)
    out.logits = linear(pooled, bp.at(m.refs.head.w), bp.at(m.refs.head.b));
    return out;
}

template <typename T>
ForwardResult<T> model_forward(const Model<T>& m, Tape<T>& tape, Var<T> image,
                               const ForwardOptions& opt = {}) {
    return model_forward_bound(m, image, m.bind(tape), opt);
}

// Inference without a persistent whole-model tape: each segment runs on its
// own short-lived tape so peak memory stays near the largest stage.
template <typename T>
Tensor<T> infer_logits(const Model<T>& m, const Tensor<T>& image) {
    if (image.rank() != 4 || image.dim(1) != 3) {
        throw ShapeError("infer_logits: image must be (B,3,H,W), got " + dims_str(image.dims()));
    }
    if (image.dim(2) % 32 != 0 || image.dim(3) % 32 != 0) {
        throw ShapeError("infer_logits: extents " + std::to_string(image.dim(2)) + "x" +
                         std::to_string(image.dim(3)) + " must be divisible by 32");
    }
    Tensor<T> cur = image;
    auto segment = [&](auto&& fn) {
        Tape<T> tape;
        std::vector<Var<T>> vars = m.bind(tape);
        BoundParams<T> bp{vars};
        cur = fn(tape, bp).clone();  // clone() detaches from the dying tape
    };
    segment([&](Tape<T>& tape, BoundParams<T>& bp) {
        return stem_forward(m, bp, FeatureMap<T>{tape.leaf(cur)}).v.val();
    });
    for (int s = 0; s < 4; ++s) {
        segment([&](Tape<T>& tape, BoundParams<T>& bp) {
            const StageRefs& st = m.refs.stages[static_cast<size_t>(s)];
            FeatureMap<T> x = downsample_forward(bp, st, FeatureMap<T>{tape.leaf(cur)});
            for (size_t b = 0; b < st.blocks.size(); ++b) {
                x = unified_block_forward(m, bp, st.blocks[b], s, static_cast<int64_t>(b), x);
            }
            return x.v.val();
        });
    }
    Tape<T> tape;
    std::vector<Var<T>> vars = m.bind(tape);
    BoundParams<T> bp{vars};
    TokenMap<T> tokens =
        detail::ln_tokens(spatial_token_convert(FeatureMap<T>{tape.leaf(cur)}), bp, m.refs.norm);
    Var<T> pooled = reduce_mean(tokens.v, {1});
    return linear(pooled, bp.at(m.refs.head.w), bp.at(m.refs.head.b)).val().clone();
}

// Zero the terminal weight of every additive branch so each unified block
// becomes an exact identity (mixer output, EC, MLP fc2, PC). Only meaningful
// for mixers whose main branch ends in a weighted map.
template <typename T>
void zero_additive_branch_terminals(Model<T>& m) {
    if (m.config.mixer == MixerKind::kPooling) {
        throw UsageError("zero_additive_branch_terminals: pooling mixer has no terminal weight");
    }
    auto zero = [&](int32_t idx) {
        if (idx < 0) return;
        Tensor<T>& t = m.params[static_cast<size_t>(idx)].value;
        std::fill(t.data(), t.data() + t.numel(), T(0));
    };
    for (auto& st : m.refs.stages) {
        for (auto& br : st.blocks) {
            zero(br.mixer.o.w);
            zero(br.mixer.o.b);
            zero(br.mixer.dw.w);
            zero(br.mixer.dw.b);
            zero(br.mixer.ec.w);
            zero(br.mixer.ec.b);
            zero(br.fc2.w);
            zero(br.fc2.b);
            zero(br.pc.w);
            zero(br.pc.b);
        }
    }
}

}  // namespace uninext
