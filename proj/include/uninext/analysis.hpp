#pragma once

// Analytic parameter/MAC accounting and the effective-receptive-field probe.
//
// The accounting walks the model structure arithmetically — no tensors are
// allocated and no forward pass runs — so `analyze` on any variant finishes
// in microseconds and its totals are pure integer arithmetic, identical on
// every platform. Per-record names follow the model's parameter naming
// scheme ("stages.2.blocks.1.mixer.q", ...) so breakdowns line up with
// checkpoints and with Model::find.
//
// Conventions:
//   - MACs count multiply-accumulates (1 MAC = 1 "FLOP" in the usual
//     backbone-table convention); `double_macs` doubles every count for the
//     strict mul+add convention.
//   - conv: k_h*k_w*(Cin/groups)*Cout*Hout*Wout; linear: N*Cin*Cout;
//     attention: the QK^T and PV matmuls, 2*windows*heads*n^2*D with n the
//     window token count (reduced-key attention: 2*heads*N*M*D).
//   - LayerNorm/GELU/softmax/pooling are zero-MAC; their scalar work is
//     reported separately in the `elementwise` column (output element count,
//     kernel-accumulation count for pooling).
//   - Counts are per image (batch 1) and track what actually executes,
//     including window padding: partial windows cost a full window.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "model.hpp"

namespace uninext {

struct FlopRecord {
    std::string name;
    std::string kind;  // conv | linear | attention | layernorm | gelu | softmax | pool
    int64_t macs = 0;
    int64_t params = 0;
    int64_t elementwise = 0;  // scalar op count for zero-MAC layers
};

struct FlopReport {
    int64_t height = 0;
    int64_t width = 0;
    bool doubled = false;  // MACs doubled to strict mul+add counts
    std::vector<FlopRecord> records;
    int64_t total_macs = 0;
    int64_t total_params = 0;
    int64_t total_elementwise = 0;

    // CSV with columns name,kind,macs,params plus a trailing total row.
    std::string to_csv() const {
        std::ostringstream os;
        os << "name,kind,macs,params\n";
        for (const auto& r : records)
            os << r.name << ',' << r.kind << ',' << r.macs << ',' << r.params << '\n';
        os << "total,," << total_macs << ',' << total_params << '\n';
        return os.str();
    }
};

struct AnalysisOptions {
    bool double_macs = false;
};

namespace detail {

inline int64_t conv_extent(int64_t in, int64_t k, int64_t s, int64_t p) {
    return (in + 2 * p - k) / s + 1;
}

inline int64_t ceil_div(int64_t a, int64_t b) { return (a + b - 1) / b; }

class ReportBuilder {
public:
    explicit ReportBuilder(FlopReport& r) : r_(r) {}

    void add(const std::string& name, const std::string& kind, int64_t macs, int64_t params,
             int64_t elementwise = 0) {
        r_.records.push_back({name, kind, macs, params, elementwise});
        r_.total_macs += macs;
        r_.total_params += params;
        r_.total_elementwise += elementwise;
    }
    void conv(const std::string& name, int64_t cin_g, int64_t cout, int64_t k, int64_t hout,
              int64_t wout) {
        add(name, "conv", k * k * cin_g * cout * hout * wout, k * k * cin_g * cout + cout);
    }
    void linear(const std::string& name, int64_t n, int64_t cin, int64_t cout,
                int64_t extra_macs = 0) {
        add(name, "linear", n * cin * cout + extra_macs, cin * cout + cout);
    }
    void layer_norm(const std::string& name, int64_t n, int64_t c) {
        add(name, "layernorm", 0, 2 * c, n * c);
    }
    void gelu(const std::string& name, int64_t elems) { add(name, "gelu", 0, 0, elems); }
    void softmax(const std::string& name, int64_t elems) { add(name, "softmax", 0, 0, elems); }
    void pool(const std::string& name, int64_t elems) { add(name, "pool", 0, 0, elems); }

private:
    FlopReport& r_;
};

// MACs of the score and context matmuls for one windowed-attention grid:
// ceil(H/wh)*ceil(W/ww) windows of n = wh*ww tokens, `heads` heads of width D.
inline int64_t window_attention_macs(int64_t H, int64_t W, int64_t wh, int64_t ww, int64_t heads,
                                     int64_t D, int64_t* softmax_elems) {
    const int64_t nw = ceil_div(H, wh) * ceil_div(W, ww);
    const int64_t n = wh * ww;
    if (softmax_elems != nullptr) *softmax_elems += nw * heads * n * n;
    return 2 * nw * heads * n * n * D;
}

}  // namespace detail

// Pure structural walk of a configuration: per-layer MACs at the given input
// resolution and exact parameter counts. Never builds tensors.
inline FlopReport analyze(const VariantConfig& cfg, int64_t height, int64_t width,
                          const AnalysisOptions& opt = {}) {
    validate_config(cfg);
    if (height <= 0 || width <= 0 || height % 32 != 0 || width % 32 != 0)
        throw UsageError("analyze: input extents must be positive multiples of 32, got " +
                         std::to_string(height) + "x" + std::to_string(width));

    FlopReport rep;
    rep.height = height;
    rep.width = width;
    detail::ReportBuilder b(rep);

    // Stem: conv s2 + LN + GELU, then twice more at stride 1 when enabled.
    int64_t h = detail::conv_extent(height, 3, 2, 1);
    int64_t w = detail::conv_extent(width, 3, 2, 1);
    const int64_t C0 = cfg.stem_channels;
    const int convs = cfg.toggles.stem ? 3 : 1;
    for (int i = 1; i <= convs; ++i) {
        const std::string n = std::to_string(i);
        b.conv("stem.conv" + n, i == 1 ? 3 : C0, C0, 3, h, w);
        b.layer_norm("stem.ln" + n, h * w, C0);
        b.gelu("stem.gelu" + n, h * w * C0);
    }

    int64_t prev = C0;
    for (int s = 0; s < 4; ++s) {
        const std::string sp = "stages." + std::to_string(s + 1);
        const int64_t C = cfg.stage_channels[static_cast<size_t>(s)];
        const int64_t heads = cfg.heads[static_cast<size_t>(s)];
        const int64_t D = C / heads;
        h = detail::conv_extent(h, 3, 2, 1);
        w = detail::conv_extent(w, 3, 2, 1);
        const int64_t N = h * w;
        b.conv(sp + ".down", prev, C, 3, h, w);
        b.layer_norm(sp + ".down_ln", N, C);

        const int64_t win = cfg.window(s);
        const int64_t RC = cfg.mlp_ratio * C;
        for (int64_t blk = 0; blk < cfg.depths[static_cast<size_t>(s)]; ++blk) {
            const std::string bp = sp + ".blocks." + std::to_string(blk + 1);
            b.layer_norm(bp + ".ln1", N, C);

            if (cfg.mixer == MixerKind::kPooling) {
                // 3x3 average pool (exclude-pad) minus identity: adds only.
                b.pool(bp + ".mixer.pool", 9 * N * C);
            } else if (cfg.mixer == MixerKind::kDWConv7) {
                b.conv(bp + ".mixer.dw", 1, C, 7, h, w);
            } else {
                int64_t softmax_elems = 0;
                int64_t attn_macs = 0;
                int64_t v_tokens = N;  // token count the V projection runs on
                if (cfg.mixer == MixerKind::kSpatialReduction) {
                    const int64_t r = cfg.sr_ratios[static_cast<size_t>(s)];
                    int64_t M = N;
                    if (r > 1) {
                        const int64_t hr = detail::ceil_div(h, r);
                        const int64_t wr = detail::ceil_div(w, r);
                        M = hr * wr;
                        b.conv(bp + ".mixer.sr", C, C, r, hr, wr);
                        b.layer_norm(bp + ".mixer.sr_ln", M, C);
                        // Reduced-path V projection; the full-resolution one
                        // is the EC operand and exists only when EC is on.
                        v_tokens = cfg.toggles.ec ? N + M : M;
                    }
                    b.linear(bp + ".mixer.k", M, C, C);
                    softmax_elems = heads * N * M;
                    attn_macs = 2 * heads * N * M * D;
                } else if (cfg.mixer == MixerKind::kCrossShapedWindow) {
                    b.linear(bp + ".mixer.k", N, C, C);
                    // Heads split between horizontal and vertical stripes;
                    // stage 4 runs both halves globally.
                    const int64_t sw = s == 3 ? -1 : cfg.stripe_widths[static_cast<size_t>(s)];
                    const int64_t swh = sw < 1 ? h : std::min(sw, h);
                    const int64_t sww = sw < 1 ? w : std::min(sw, w);
                    attn_macs =
                        detail::window_attention_macs(h, w, swh, w, heads / 2, D, &softmax_elems) +
                        detail::window_attention_macs(h, w, h, sww, heads / 2, D, &softmax_elems);
                } else {  // local window / shift window
                    b.linear(bp + ".mixer.k", N, C, C);
                    const int64_t wh = win < 1 ? h : std::min(win, h);
                    const int64_t ww = win < 1 ? w : std::min(win, w);
                    attn_macs = detail::window_attention_macs(h, w, wh, ww, heads, D,
                                                              &softmax_elems);
                }
                b.linear(bp + ".mixer.q", N, C, C);
                b.linear(bp + ".mixer.v", v_tokens, C, C);
                b.add(bp + ".mixer.attn", "attention", attn_macs, 0);
                b.softmax(bp + ".mixer.softmax", softmax_elems);
                b.linear(bp + ".mixer.o", N, C, C);
            }
            // EC: depthwise 3x3 on V (attention mixers) or the mixer input.
            if (cfg.toggles.ec) b.conv(bp + ".mixer.ec", 1, C, 3, h, w);

            b.layer_norm(bp + ".ln2", N, C);
            b.linear(bp + ".mlp.fc1", N, C, RC);
            if (cfg.toggles.hdc) {
                b.conv(bp + ".mlp.hdc", 1, RC, 3, h, w);
                b.layer_norm(bp + ".mlp.hdc_ln", N, RC);
                b.gelu(bp + ".mlp.hdc_gelu", N * RC);
            }
            b.gelu(bp + ".mlp.gelu", N * RC);
            b.linear(bp + ".mlp.fc2", N, RC, C);
            if (cfg.toggles.pc) b.conv(bp + ".pc", 1, C, 3, h, w);
        }
        prev = C;
    }

    b.layer_norm("norm", h * w, prev);
    b.pool("head.pool", h * w * prev);
    b.linear("head", 1, prev, cfg.num_classes);

    if (opt.double_macs) {
        rep.doubled = true;
        for (auto& r : rep.records) r.macs *= 2;
        rep.total_macs *= 2;
    }
    return rep;
}

// Exact element count of every trainable tensor, from the configuration.
inline int64_t count_params(const VariantConfig& cfg) { return analyze(cfg, 32, 32).total_params; }

// The same count from a built model (cross-checks the analytic walk).
template <typename T>
int64_t count_params(const Model<T>& m) {
    int64_t total = 0;
    for (const auto& p : m.params) total += p.value.numel();
    return total;
}

template <typename T>
FlopReport count_flops(const Model<T>& m, int64_t height, int64_t width,
                       const AnalysisOptions& opt = {}) {
    return analyze(m.config, height, width, opt);
}

// ---------------------------------------------------------------------------
// Effective receptive field
// ---------------------------------------------------------------------------

// Input-gradient saliency of a central feature-map unit, averaged over
// images: non-negative, max-normalized grid at input resolution.
struct ErfMap {
    int64_t height = 0;
    int64_t width = 0;
    int stage = 0;  // 1-4 when probed through a model stage, 0 for a custom map
    int64_t images = 0;
    Toggles toggles{};
    std::vector<double> grid;  // height*width row-major

    double at(int64_t i, int64_t j) const {
        return grid[static_cast<size_t>(i * width + j)];
    }

    std::string to_csv() const {
        std::ostringstream os;
        os << std::setprecision(9);
        for (int64_t i = 0; i < height; ++i) {
            for (int64_t j = 0; j < width; ++j) {
                if (j != 0) os << ',';
                os << at(i, j);
            }
            os << '\n';
        }
        return os.str();
    }

    // Binary 8-bit PGM (P5), values scaled to 0-255.
    std::string to_pgm() const {
        std::ostringstream os;
        os << "P5\n" << width << ' ' << height << "\n255\n";
        for (double v : grid) {
            const double c = std::min(1.0, std::max(0.0, v));
            os << static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0)));
        }
        return os.str();
    }
};

// Smallest radius (Euclidean, in pixels from the central cell) whose disk
// holds at least `mass` of the total saliency. 0 for an empty map.
inline double erf_spread_radius(const ErfMap& map, double mass = 0.95) {
    if (mass <= 0.0 || mass > 1.0) throw UsageError("erf_spread_radius: mass must be in (0, 1]");
    const int64_t ch = map.height / 2, cw = map.width / 2;
    // Bucket saliency by integer squared distance, then sweep shells outward.
    std::vector<std::pair<int64_t, double>> shells;
    shells.reserve(map.grid.size());
    double total = 0.0;
    for (int64_t i = 0; i < map.height; ++i) {
        for (int64_t j = 0; j < map.width; ++j) {
            const double v = map.at(i, j);
            total += v;
            shells.emplace_back((i - ch) * (i - ch) + (j - cw) * (j - cw), v);
        }
    }
    if (total <= 0.0) return 0.0;
    std::sort(shells.begin(), shells.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    const double target = mass * total;
    double acc = 0.0;
    size_t i = 0;
    while (i < shells.size()) {
        const int64_t d2 = shells[i].first;
        while (i < shells.size() && shells[i].first == d2) acc += shells[i++].second;
        if (acc >= target) return std::sqrt(static_cast<double>(d2));
    }
    return std::sqrt(static_cast<double>(shells.back().first));
}

// Core probe: for each of the first `samples` images, run `fwd` to a feature
// map, backpropagate the sum of the spatially central position's channels,
// and accumulate the input gradient's channel-summed absolute value. Images
// are processed and merged in batch order.
//
// fwd: (Tape<T>&, Var<T> image (1,3,H,W)) -> Var<T> feature map (1,C,h,w)
template <typename T, typename Fn>
ErfMap erf_probe(const Tensor<T>& images, int64_t samples, Fn&& fwd) {
    const Dims& d = images.dims();
    if (d.size() != 4 || d[1] != 3)
        throw ShapeError("erf_probe: images must be (B, 3, H, W)");
    const int64_t B = std::min<int64_t>(samples, d[0]);
    if (B < 1) throw UsageError("erf_probe: need at least one image");
    const int64_t H = d[2], W = d[3];

    ErfMap map;
    map.height = H;
    map.width = W;
    map.images = B;
    map.grid.assign(static_cast<size_t>(H * W), 0.0);

    for (int64_t img = 0; img < B; ++img) {
        Tensor<T> one({1, 3, H, W});
        std::copy_n(images.data() + img * 3 * H * W, 3 * H * W, one.data());

        Tape<T> tape;
        Var<T> x = tape.leaf(one);
        Var<T> fm = fwd(tape, x);
        const Dims fd = fm.dims();
        if (fd.size() != 4 || fd[0] != 1)
            throw ShapeError("erf_probe: probe output must be a (1, C, h, w) feature map");
        const int64_t C = fd[1], fh = fd[2], fw = fd[3];

        // Select the central position by masking: differentiable and exact.
        Tensor<T> mask = Tensor<T>::zeros(fd);
        for (int64_t c = 0; c < C; ++c)
            mask[(c * fh + fh / 2) * fw + fw / 2] = static_cast<T>(1);
        Var<T> score = reduce_sum(mul(fm, tape.leaf(mask)));
        tape.backward(score);

        Tensor<T> g = tape.grad(x);
        for (int64_t i = 0; i < H; ++i) {
            for (int64_t j = 0; j < W; ++j) {
                double a = 0.0;
                for (int64_t c = 0; c < 3; ++c)
                    a += std::abs(static_cast<double>(g[(c * H + i) * W + j]));
                map.grid[static_cast<size_t>(i * W + j)] += a;
            }
        }
    }

    double mx = 0.0;
    for (double& v : map.grid) {
        v /= static_cast<double>(B);
        mx = std::max(mx, v);
    }
    if (mx > 0.0)
        for (double& v : map.grid) v /= mx;
    return map;
}

// Probe a model stage's output (stages numbered 1-4).
template <typename T>
ErfMap compute_erf(const Model<T>& m, const Tensor<T>& images, int stage, int64_t samples) {
    if (stage < 1 || stage > 4)
        throw UsageError("compute_erf: stage must be in 1..4, got " + std::to_string(stage));
    ErfMap map = erf_probe(images, samples, [&m, stage](Tape<T>& tape, Var<T> x) {
        ForwardResult<T> r = model_forward(m, tape, x);
        return r.stage_outputs[static_cast<size_t>(stage - 1)];
    });
    map.stage = stage;
    map.toggles = m.config.toggles;
    return map;
}

struct ErfLadderStep {
    std::string label;  // "base", "+hdc", "+ec", "+pc"
    Toggles toggles{};
    ErfMap map;
    double radius = 0.0;  // 95%-mass spread radius
};

// Base -> +HdC -> +EC -> +PC ablation of one stage's receptive field.
//
// Controlled transplant: a donor model carries all three branches, and each
// rung copies the donor's weights for every module it shares, so consecutive
// maps differ only by the branch just enabled. (Re-drawing all weights per
// rung buries the effect in initialization noise, because toggles shift
// every registration index and therefore every draw.)
template <typename T>
std::vector<ErfLadderStep> erf_toggle_ladder(const VariantConfig& base_cfg,
                                             const Tensor<T>& images, int stage,
                                             int64_t samples, double init_sigma = 0.1) {
    VariantConfig dcfg = base_cfg;
    dcfg.toggles.hdc = dcfg.toggles.ec = dcfg.toggles.pc = true;
    Model<T> donor(dcfg, init_sigma);
    std::map<std::string, Tensor<T>> bank;
    for (const auto& p : donor.params) bank.emplace(p.name, p.value);

    const bool stem = base_cfg.toggles.stem;
    const struct {
        const char* label;
        Toggles toggles;
    } rungs[4] = {
        {"base", {false, false, false, stem}},
        {"+hdc", {true, false, false, stem}},
        {"+ec", {true, true, false, stem}},
        {"+pc", {true, true, true, stem}},
    };

    std::vector<ErfLadderStep> out;
    out.reserve(4);
    for (const auto& rung : rungs) {
        VariantConfig cfg = dcfg;
        cfg.toggles = rung.toggles;
        Model<T> m(cfg, init_sigma);
        for (auto& p : m.params) {
            auto it = bank.find(p.name);
            if (it != bank.end()) p.value = it->second.clone();
        }
        ErfLadderStep step;
        step.label = rung.label;
        step.toggles = rung.toggles;
        step.map = compute_erf(m, images, stage, samples);
        step.radius = erf_spread_radius(step.map, 0.95);
        out.push_back(std::move(step));
    }
    return out;
}

}  // namespace uninext
