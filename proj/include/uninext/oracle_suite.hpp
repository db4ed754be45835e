#pragma once

// Gradient-oracle suite: finite-difference validation of every primitive
// operation and every composite (the six mixers, the ICMLP, a full unified
// block, and a tiny end-to-end model) over many random seeds per target, in
// both 64-bit and 32-bit storage.
//
// Every check compares reverse-mode gradients against a five-point central
// difference whose objective is evaluated in 64-bit storage at exactly
// upcast probe points (grad_check_f64ref). Evaluating the reference in the
// graph's own storage would, at 32 bits, divide the objective's rounding
// noise by the step size and swamp the gradients under test; the 64-bit
// reference isolates the reverse-mode arithmetic itself. 64-bit gradients
// must agree to 1e-5 relative and 32-bit gradients to 1e-3, over every
// probed coordinate of every seed.

#include <chrono>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <type_traits>
#include <vector>

#include "uninext/model.hpp"

namespace uninext {

struct OracleCase {
    std::string target;
    std::string dtype;  // "f64" | "f32"
    int seeds = 0;
    double max_err = 0.0;
    double tol = 0.0;
    bool pass = false;
    double seconds = 0.0;
};

struct OracleOptions {
    int seeds = 20;
    bool include_f64 = true;
    bool include_f32 = true;
    std::ostream* log = nullptr;  // per-target progress lines
};

inline std::vector<std::string> oracle_targets() {
    return {
        "op.add",          "op.sub",        "op.mul",         "op.scale",
        "op.exp",          "op.reciprocal", "op.sqrt",        "op.gelu",
        "op.matmul",       "op.reduce_sum", "op.reduce_mean", "op.broadcast_to",
        "op.transpose",    "op.reshape",    "op.slice",       "op.pad",
        "op.concat",       "op.conv2d",     "op.conv2d-grouped", "op.avg_pool",
        "op.layer_norm",   "op.softmax",    "op.roll",        "op.cross_entropy",
        "mixer.pooling",   "mixer.dwconv7", "mixer.spatial-reduction",
        "mixer.local-window", "mixer.shift-window", "mixer.cross-shaped-window",
        "block.icmlp",     "block.unified", "model.tiny",
    };
}

namespace oracle_detail {

inline uint64_t mix(uint64_t seed, uint64_t salt) {
    return seed * 0x9e3779b97f4a7c15ull + salt;
}

template <typename T>
Tensor<T> rnd(const Dims& d, uint64_t seed, double sigma = 1.0) {
    Rng rng(seed);
    return Tensor<T>::normal(d, rng, 0.0, sigma);
}

template <typename T>
Tensor<T> rnd_uniform(const Dims& d, uint64_t seed, double lo, double hi) {
    Rng rng(seed);
    return Tensor<T>::uniform(d, rng, lo, hi);
}

// sum(y * fixed random weights): O(1) per-coordinate gradients, so no
// coordinate's contribution is diluted by the readout.
template <typename T>
Var<T> dot_readout(Tape<T>& t, Var<T> y, uint64_t seed) {
    Rng rng(seed, 0xd07);
    Tensor<T> w = Tensor<T>::normal(y.dims(), rng);
    return reduce_sum(mul(y, t.leaf(w)));
}

// The five-point stencil handles curvature (the GELU tail's third derivative
// puts the plain central difference near 1e-4 at usable steps), eps 2e-4
// keeps its fourth-order term negligible, and min_grad skips coordinates
// whose gradient both sides agree is negligible:
//   64-bit: only mathematically-zero gradients (e.g. the attention key bias,
//     which a softmax row shift cancels exactly) — those measure rounding
//     dust against rounding dust.
//   32-bit: the analytic side carries the graph's own 32-bit accumulation
//     noise, absolute ~1e-6 for unit-scale activations, so a coordinate
//     whose true gradient sits below 1e-2 would measure that noise rather
//     than the reverse-mode arithmetic.
template <typename T>
GradCheckOptions options_for(const std::string& name, uint64_t seed) {
    GradCheckOptions o;
    const bool composite = name.rfind("op.", 0) != 0;
    const bool full_model = name == "model.tiny";
    o.sample_seed = mix(seed, 0x5a5a);
    o.max_coords = full_model ? 128 : (composite ? 192 : 0);
    o.eps = 2e-4;
    o.high_order = true;
    o.min_grad = std::is_same_v<T, float> ? 1e-2 : 1e-5;
    return o;
}

// Shared leaf layout for the attention mixers:
//   [x, wq, bq, wk, bk, wv, bv, wo, bo, ec.w, ec.b, <extra...>]
template <typename T>
std::vector<Tensor<T>> attention_points(uint64_t seed, int64_t C) {
    std::vector<Tensor<T>> pts;
    pts.push_back(rnd<T>({1, C, 7, 9}, mix(seed, 1)));
    for (int i = 0; i < 4; ++i) {
        pts.push_back(rnd<T>({C, C}, mix(seed, 2 + 2 * static_cast<uint64_t>(i)), 0.3));
        pts.push_back(rnd<T>({C}, mix(seed, 3 + 2 * static_cast<uint64_t>(i)), 0.2));
    }
    pts.push_back(rnd<T>({C, 1, 3, 3}, mix(seed, 10), 0.3));
    pts.push_back(rnd<T>({C}, mix(seed, 11), 0.2));
    return pts;
}

template <typename T>
AttentionVars<T> attention_vars(const std::vector<Var<T>>& l, int64_t heads, int64_t window) {
    return AttentionVars<T>{heads, window, l[1], l[2], l[3], l[4], l[5], l[6], l[7], l[8]};
}

template <typename T>
EcVars<T> ec_vars(const std::vector<Var<T>>& l, size_t at) {
    return EcVars<T>{true, false, l[at], l[at + 1]};
}

inline VariantConfig block_oracle_config(uint64_t seed) {
    VariantConfig cfg;
    cfg.name = "oracle-block";
    cfg.stem_channels = 4;
    cfg.stage_channels = {4, 8, 8, 8};
    cfg.depths = {1, 1, 1, 1};
    cfg.heads = {1, 2, 2, 2};
    cfg.num_classes = 4;
    cfg.mixer = MixerKind::kLocalWindow;
    cfg.seed = seed;
    return cfg;
}

// Storage-matched structural shell for a precision-generic builder. The
// shell's parameter values are never read — values flow through the bound
// leaves — only its config and reference indices matter, and those are
// identical across storage types.
template <typename U, typename T>
const Model<U>& pick_model(const Model<T>& m, const std::optional<Model<double>>& md) {
    if constexpr (std::is_same_v<U, T>) {
        return m;
    } else {
        return *md;
    }
}

}  // namespace oracle_detail

// Runs one named target at one seed; returns the max relative gradient error.
template <typename T>
double run_oracle_target(const std::string& name, uint64_t seed,
                         const GradCheckOptions* override_opt = nullptr) {
    using oracle_detail::dot_readout;
    using oracle_detail::mix;
    using oracle_detail::rnd;
    using oracle_detail::rnd_uniform;
    const GradCheckOptions opt =
        override_opt != nullptr ? *override_opt : oracle_detail::options_for<T>(name, seed);

    // --- primitives -------------------------------------------------------
    if (name == "op.add") {
        std::vector<Tensor<T>> pts{rnd<T>({2, 3, 4}, mix(seed, 1)), rnd<T>({3, 1}, mix(seed, 2))};
        return grad_check_f64ref<T>(
            [seed]<typename U>(Tape<U>& t, const std::vector<Var<U>>& l) {
                return dot_readout(t, add(l[0], l[1]), mix(seed, 3));
            },
            pts, opt);
    }
    if (name == "op.sub") {
        std::vector<Tensor<T>> pts{rnd<T>({3, 4}, mix(seed, 1)), rnd<T>({2, 3, 4}, mix(seed, 2))};
        return grad_check_f64ref<T>(
            [seed]<typename U>(Tape<U>& t, const std::vector<Var<U>>& l) {
                return dot_readout(t, sub(l[0], l[1]), mix(seed, 3));
            },
            pts, opt);
    }
    if (name == "op.mul") {
        std::vector<Tensor<T>> pts{rnd<T>({2, 3, 4}, mix(seed, 1)), rnd<T>({2, 1, 4}, mix(seed, 2))};
        return grad_check_f64ref<T>(
            [seed]<typename U>(Tape<U>& t, const std::vector<Var<U>>& l) {
                return dot_readout(t, mul(l[0], l[1]), mix(seed, 3));
            },
            pts, opt);
    }
    if (name == "op.scale") {
        std::vector<Tensor<T>> pts{rnd<T>({3, 5}, mix(seed, 1))};
        return grad_check_f64ref<T>(
            [seed]<typename U>(Tape<U>& t, const std::vector<Var<U>>& l) {
                return dot_readout(t, scale(l[0], -1.7), mix(seed, 3));
            },
            pts, opt);
    }
    if (name == "op.exp") {
        std::vector<Tensor<T>> pts{rnd<T>({2, 5}, mix(seed, 1), 0.5)};
        return grad_check_f64ref<T>(
            [seed]<typename U>(Tape<U>& t, const std::vector<Var<U>>& l) {
                return dot_readout(t, exp(l[0]), mix(seed, 3));
            },
            pts, opt);
    }
    if (name == "op.reciprocal") {
        std::vector<Tensor<T>> pts{rnd_uniform<T>({2, 5}, mix(seed, 1), 0.5, 1.5)};
        return grad_check_f64ref<T>(
            [seed]<typename U>(Tape<U>& t, const std::vector<Var<U>>& l) {
                return dot_readout(t, reciprocal(l[0]), mix(seed, 3));
            },
            pts, opt);
    }
    if (name == "op.sqrt") {
        std::vector<Tensor<T>> pts{rnd_uniform<T>({2, 5}, mix(seed, 1), 0.25, 4.0)};
        return grad_check_f64ref<T>(
            [seed]<typename U>(Tape<U>& t, const std::vector<Var<U>>& l) {
                return dot_readout(t, sqrt(l[0]), mix(seed, 3));
            },
            pts, opt);
    }
    if (name == "op.gelu") {
        std::vector<Tensor<T>> pts{rnd<T>({2, 7}, mix(seed, 1))};
        return grad_check_f64ref<T>(
            [seed]<typename U>(Tape<U>& t, const std::vector<Var<U>>& l) {
                return dot_readout(t, gelu(l[0]), mix(seed, 3));
            },
            pts, opt);
    }
    if (name == "op.matmul") {
        std::vector<Tensor<T>> pts{rnd<T>({2, 3, 4}, mix(seed, 1)), rnd<T>({4, 5}, mix(seed, 2))};
        return grad_check_f64ref<T>(
            [seed]<typename U>(Tape<U>& t, const std::vector<Var<U>>& l) {
                return dot_readout(t, matmul(l[0], l[1]), mix(seed, 3));
            },
            pts, opt);
    }
    if (name == "op.reduce_sum") {
        std::vector<Tensor<T>> pts{rnd<T>({2, 3, 4}, mix(seed, 1))};
        return grad_check_f64ref<T>(
            [seed]<typename U>(Tape<U>& t, const std::vector<Var<U>>& l) {
                return dot_readout(t, reduce_sum(l[0], {0, 2}), mix(seed, 3));
            },
            pts, opt);
    }
    if (name == "op.reduce_mean") {
        std::vector<Tensor<T>> pts{rnd<T>({2, 3, 4}, mix(seed, 1))};
        return grad_check_f64ref<T>(
            [seed]<typename U>(Tape<U>& t, const std::vector<Var<U>>& l) {
                return dot_readout(t, reduce_mean(l[0], {1}, true), mix(seed, 3));
            },
            pts, opt);
    }
    if (name == "op.broadcast_to") {
        std::vector<Tensor<T>> pts{rnd<T>({3, 1}, mix(seed, 1))};
        return grad_check_f64ref<T>(
            [seed]<typename U>(Tape<U>& t, const std::vector<Var<U>>& l) {
                return dot_readout(t, broadcast_to(l[0], {2, 3, 4}), mix(seed, 3));
            },
            pts, opt);
    }
    if (name == "op.transpose") {
        std::vector<Tensor<T>> pts{rnd<T>({2, 3, 4}, mix(seed, 1))};
        return grad_check_f64ref<T>(
            [seed]<typename U>(Tape<U>& t, const std::vector<Var<U>>& l) {
                return dot_readout(t, transpose(l[0], {2, 0, 1}), mix(seed, 3));
            },
            pts, opt);
    }
    if (name == "op.reshape") {
        std::vector<Tensor<T>> pts{rnd<T>({2, 3, 4}, mix(seed, 1))};
        return grad_check_f64ref<T>(
            [seed]<typename U>(Tape<U>& t, const std::vector<Var<U>>& l) {
                return dot_readout(t, reshape(l[0], {4, 6}), mix(seed, 3));
            },
            pts, opt);
    }
    if (name == "op.slice") {
        std::vector<Tensor<T>> pts{rnd<T>({2, 5, 6}, mix(seed, 1))};
        return grad_check_f64ref<T>(
            [seed]<typename U>(Tape<U>& t, const std::vector<Var<U>>& l) {
                return dot_readout(t, slice(l[0], {0, 1, 2}, {2, 3, 3}), mix(seed, 3));
            },
            pts, opt);
    }
    if (name == "op.pad") {
        std::vector<Tensor<T>> pts{rnd<T>({2, 3, 3}, mix(seed, 1))};
        return grad_check_f64ref<T>(
            [seed]<typename U>(Tape<U>& t, const std::vector<Var<U>>& l) {
                return dot_readout(t, pad(l[0], {0, 1, 1}, {0, 0, 2}), mix(seed, 3));
            },
            pts, opt);
    }
    if (name == "op.concat") {
        std::vector<Tensor<T>> pts{rnd<T>({2, 3, 4}, mix(seed, 1)), rnd<T>({2, 1, 4}, mix(seed, 2))};
        return grad_check_f64ref<T>(
            [seed]<typename U>(Tape<U>& t, const std::vector<Var<U>>& l) {
                return dot_readout(t, concat<U>({l[0], l[1]}, 1), mix(seed, 3));
            },
            pts, opt);
    }
    if (name == "op.conv2d") {
        std::vector<Tensor<T>> pts{rnd<T>({1, 3, 6, 7}, mix(seed, 1)),
                                   rnd<T>({4, 3, 3, 3}, mix(seed, 2), 0.4),
                                   rnd<T>({4}, mix(seed, 3), 0.2)};
        return grad_check_f64ref<T>(
            [seed]<typename U>(Tape<U>& t, const std::vector<Var<U>>& l) {
                return dot_readout(t, conv2d(l[0], l[1], l[2], 1, 1), mix(seed, 4));
            },
            pts, opt);
    }
    if (name == "op.conv2d-grouped") {
        std::vector<Tensor<T>> pts{rnd<T>({1, 4, 7, 8}, mix(seed, 1)),
                                   rnd<T>({6, 2, 3, 3}, mix(seed, 2), 0.4),
                                   rnd<T>({6}, mix(seed, 3), 0.2)};
        return grad_check_f64ref<T>(
            [seed]<typename U>(Tape<U>& t, const std::vector<Var<U>>& l) {
                return dot_readout(t, conv2d(l[0], l[1], l[2], 2, 1, 2), mix(seed, 4));
            },
            pts, opt);
    }
    if (name == "op.avg_pool") {
        std::vector<Tensor<T>> pts{rnd<T>({1, 3, 7, 8}, mix(seed, 1))};
        return grad_check_f64ref<T>(
            [seed]<typename U>(Tape<U>& t, const std::vector<Var<U>>& l) {
                return dot_readout(t, avg_pool(l[0], 3, 3, 2, 2, 1, 1), mix(seed, 3));
            },
            pts, opt);
    }
    if (name == "op.layer_norm") {
        std::vector<Tensor<T>> pts{rnd<T>({2, 5, 6}, mix(seed, 1)),
                                   rnd_uniform<T>({6}, mix(seed, 2), 0.5, 1.5),
                                   rnd<T>({6}, mix(seed, 3), 0.2)};
        return grad_check_f64ref<T>(
            [seed]<typename U>(Tape<U>& t, const std::vector<Var<U>>& l) {
                return dot_readout(t, layer_norm(l[0], l[1], l[2]), mix(seed, 4));
            },
            pts, opt);
    }
    if (name == "op.softmax") {
        std::vector<Tensor<T>> pts{rnd<T>({2, 3, 5}, mix(seed, 1), 2.0)};
        return grad_check_f64ref<T>(
            [seed]<typename U>(Tape<U>& t, const std::vector<Var<U>>& l) {
                return dot_readout(t, softmax(l[0]), mix(seed, 3));
            },
            pts, opt);
    }
    if (name == "op.roll") {
        std::vector<Tensor<T>> pts{rnd<T>({1, 3, 5, 6}, mix(seed, 1))};
        return grad_check_f64ref<T>(
            [seed]<typename U>(Tape<U>& t, const std::vector<Var<U>>& l) {
                return dot_readout(t, roll(l[0], 2, 3), mix(seed, 3));
            },
            pts, opt);
    }
    if (name == "op.cross_entropy") {
        std::vector<Tensor<T>> pts{rnd<T>({5, 7}, mix(seed, 1), 2.0)};
        Rng lr(mix(seed, 9));
        std::vector<int32_t> labels(5);
        for (auto& v : labels) v = static_cast<int32_t>(lr.next_index(7));
        return grad_check_f64ref<T>(
            [labels]<typename U>(Tape<U>&, const std::vector<Var<U>>& l) {
                return cross_entropy(l[0], labels);
            },
            pts, opt);
    }

    // --- mixers (C=8, heads=2, 7x9 map so window/stripe paths pad) ---------
    const int64_t C = 8;
    if (name == "mixer.pooling") {
        std::vector<Tensor<T>> pts{rnd<T>({1, C, 7, 9}, mix(seed, 1)),
                                   rnd<T>({C, 1, 3, 3}, mix(seed, 2), 0.3),
                                   rnd<T>({C}, mix(seed, 3), 0.2)};
        return grad_check_f64ref<T>(
            [seed]<typename U>(Tape<U>& t, const std::vector<Var<U>>& l) {
                FeatureMap<U> x{l[0]};
                EcVars<U> ec{true, false, l[1], l[2]};
                return dot_readout(t, ec_fuse(pooling_mixer(x), x, ec).v, mix(seed, 4));
            },
            pts, opt);
    }
    if (name == "mixer.dwconv7") {
        std::vector<Tensor<T>> pts{rnd<T>({1, C, 7, 9}, mix(seed, 1)),
                                   rnd<T>({C, 1, 7, 7}, mix(seed, 2), 0.3),
                                   rnd<T>({C}, mix(seed, 3), 0.2),
                                   rnd<T>({C, 1, 3, 3}, mix(seed, 4), 0.3),
                                   rnd<T>({C}, mix(seed, 5), 0.2)};
        return grad_check_f64ref<T>(
            [seed]<typename U>(Tape<U>& t, const std::vector<Var<U>>& l) {
                FeatureMap<U> x{l[0]};
                EcVars<U> ec{true, false, l[3], l[4]};
                return dot_readout(t, ec_fuse(dwconv7_mixer(x, l[1], l[2]), x, ec).v,
                                   mix(seed, 6));
            },
            pts, opt);
    }
    if (name == "mixer.local-window" || name == "mixer.shift-window" ||
        name == "mixer.cross-shaped-window") {
        std::vector<Tensor<T>> pts = oracle_detail::attention_points<T>(seed, C);
        return grad_check_f64ref<T>(
            [seed, name]<typename U>(Tape<U>& t, const std::vector<Var<U>>& l) {
                FeatureMap<U> x{l[0]};
                EcVars<U> ec = oracle_detail::ec_vars(l, 9);
                FeatureMap<U> out;
                if (name == "mixer.local-window") {
                    out = local_window_attention(x, oracle_detail::attention_vars(l, 2, 3), ec);
                } else if (name == "mixer.shift-window") {
                    out = shift_window_attention(x, oracle_detail::attention_vars(l, 2, 3), true,
                                                 ec);
                } else {
                    out = cross_shaped_window_attention(
                        x, oracle_detail::attention_vars(l, 2, -1), 2, ec);
                }
                return dot_readout(t, out.v, mix(seed, 20));
            },
            pts, opt);
    }
    if (name == "mixer.spatial-reduction") {
        std::vector<Tensor<T>> pts = oracle_detail::attention_points<T>(seed, C);
        pts.push_back(rnd<T>({C, C, 2, 2}, mix(seed, 30), 0.3));
        pts.push_back(rnd<T>({C}, mix(seed, 31), 0.2));
        pts.push_back(rnd_uniform<T>({C}, mix(seed, 32), 0.5, 1.5));
        pts.push_back(rnd<T>({C}, mix(seed, 33), 0.2));
        return grad_check_f64ref<T>(
            [seed]<typename U>(Tape<U>& t, const std::vector<Var<U>>& l) {
                FeatureMap<U> x{l[0]};
                EcVars<U> ec = oracle_detail::ec_vars(l, 9);
                SrVars<U> sr{2, l[11], l[12], l[13], l[14]};
                FeatureMap<U> out =
                    sra_attention_mixer(x, oracle_detail::attention_vars(l, 2, -1), sr, ec);
                return dot_readout(t, out.v, mix(seed, 34));
            },
            pts, opt);
    }

    // --- composites above the mixer level -----------------------------------
    if (name == "block.icmlp") {
        const int64_t Ci = 6, R = 2;
        std::vector<Tensor<T>> pts{rnd<T>({1, Ci, 5, 6}, mix(seed, 1)),
                                   rnd<T>({Ci, R * Ci}, mix(seed, 2), 0.3),
                                   rnd<T>({R * Ci}, mix(seed, 3), 0.2),
                                   rnd<T>({R * Ci, 1, 3, 3}, mix(seed, 4), 0.3),
                                   rnd<T>({R * Ci}, mix(seed, 5), 0.2),
                                   rnd_uniform<T>({R * Ci}, mix(seed, 6), 0.5, 1.5),
                                   rnd<T>({R * Ci}, mix(seed, 7), 0.2),
                                   rnd<T>({R * Ci, Ci}, mix(seed, 8), 0.3),
                                   rnd<T>({Ci}, mix(seed, 9), 0.2)};
        return grad_check_f64ref<T>(
            [seed]<typename U>(Tape<U>& t, const std::vector<Var<U>>& l) {
                std::vector<Var<U>> vars(l.begin() + 1, l.end());
                BoundParams<U> bp{vars};
                BlockRefs br;
                br.fc1 = {0, 1};
                br.hdc = {2, 3};
                br.hdc_ln = {4, 5};
                br.fc2 = {6, 7};
                TokenMap<U> tok = spatial_token_convert(FeatureMap<U>{l[0]});
                return dot_readout(t, icmlp_forward(bp, br, true, tok).v, mix(seed, 10));
            },
            pts, opt);
    }
    if (name == "block.unified") {
        const VariantConfig cfg = oracle_detail::block_oracle_config(seed);
        Model<T> m(cfg, 0.25);
        std::optional<Model<double>> md;
        if constexpr (!std::is_same_v<T, double>) md.emplace(cfg, 0.25);
        std::vector<Tensor<T>> pts;
        pts.push_back(rnd<T>({1, cfg.stage_channels[2], 8, 9}, mix(seed, 1)));
        for (const auto& p : m.params) pts.push_back(p.value);
        return grad_check_f64ref<T>(
            [seed, &m, &md]<typename U>(Tape<U>& t, const std::vector<Var<U>>& l) {
                const Model<U>& mu = oracle_detail::pick_model<U>(m, md);
                std::vector<Var<U>> bound(l.begin() + 1, l.end());
                BoundParams<U> bp{bound};
                FeatureMap<U> out = unified_block_forward(mu, bp, mu.refs.stages[2].blocks[0], 2,
                                                          0, FeatureMap<U>{l[0]});
                return dot_readout(t, out.v, mix(seed, 2));
            },
            pts, opt);
    }
    if (name == "model.tiny") {
        VariantConfig cfg = tiny_config();
        cfg.mixer = MixerKind::kShiftWindow;
        cfg.seed = seed;
        Model<T> m(cfg, 0.2);
        std::optional<Model<double>> md;
        if constexpr (!std::is_same_v<T, double>) md.emplace(cfg, 0.2);
        std::vector<Tensor<T>> pts;
        pts.push_back(rnd<T>({1, 3, 32, 32}, mix(seed, 1), 0.5));
        for (const auto& p : m.params) pts.push_back(p.value);
        return grad_check_f64ref<T>(
            [seed, &m, &md]<typename U>(Tape<U>& t, const std::vector<Var<U>>& l) {
                const Model<U>& mu = oracle_detail::pick_model<U>(m, md);
                std::vector<Var<U>> bound(l.begin() + 1, l.end());
                ForwardResult<U> r = model_forward_bound(mu, l[0], std::move(bound));
                return dot_readout(t, r.logits, mix(seed, 2));
            },
            pts, opt);
    }
    throw UsageError("run_oracle_target: unknown target '" + name + "'");
}

inline std::vector<OracleCase> run_oracle_suite(const OracleOptions& opt = {}) {
    if (opt.seeds < 1) throw UsageError("run_oracle_suite: need seeds >= 1");
    std::vector<OracleCase> out;
    auto run_all = [&](auto tag, const char* dtype, double tol) {
        using T = decltype(tag);
        for (const std::string& name : oracle_targets()) {
            OracleCase c;
            c.target = name;
            c.dtype = dtype;
            c.seeds = opt.seeds;
            c.tol = tol;
            const auto t0 = std::chrono::steady_clock::now();
            for (int s = 0; s < opt.seeds; ++s) {
                c.max_err = std::max(c.max_err,
                                     run_oracle_target<T>(name, static_cast<uint64_t>(s)));
            }
            c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                            .count();
            c.pass = c.max_err <= c.tol;
            if (opt.log) {
                *opt.log << (c.pass ? "ok   " : "FAIL ") << std::left << std::setw(28)
                         << c.target << " " << c.dtype << "  max_err=" << std::scientific
                         << std::setprecision(2) << c.max_err << "  tol=" << c.tol
                         << std::defaultfloat << "  (" << std::fixed << std::setprecision(1)
                         << c.seconds << "s)" << std::defaultfloat << "\n";
            }
            out.push_back(c);
        }
    };
    if (opt.include_f64) run_all(double{}, "f64", 1e-5);
    if (opt.include_f32) run_all(float{}, "f32", 1e-3);
    return out;
}

}  // namespace uninext
