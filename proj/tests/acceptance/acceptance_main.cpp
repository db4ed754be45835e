// Acceptance gate. Each invocation measures one numbered criterion end to end
// and prints a single verdict line:
//
//     criterion N: PASS|FAIL (12.3s, budget 120s)
//
// preceded by indented detail lines showing every measured quantity next to
// its reference value. Exit status is 0 on PASS, 1 on FAIL, 64 on misuse.
//
//   1  parameter totals of the T/S/B variants vs the reference sizes
//   2  MAC totals: T at 224^2 and dense-mode T at 800x1280 vs references
//   3  toggle-ladder cost monotonicity + forward/backward of every rung
//   4  finite-difference gradient oracle over every op, mixer and the model
//   5  exact structural invariants (roundtrips, masks, identities, files)
//   6  receptive-field probe: soundness, exact conv supports, toggle ladder
//   7  learnability of the synthetic dataset under all six mixers
//   8  classification -> dense checkpoint transfer at 352^2

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "uninext/analysis.hpp"
#include "uninext/checkpoint.hpp"
#include "uninext/oracle_suite.hpp"
#include "uninext/train.hpp"

namespace u = uninext;
using u::Dims;
using u::Rng;
using u::Tape;
using u::Tensor;
using u::Var;

namespace {

double now_s() {
    using clock = std::chrono::steady_clock;
    static const clock::time_point t0 = clock::now();
    return std::chrono::duration<double>(clock::now() - t0).count();
}

// Collects sub-check verdicts; every line of evidence is printed as it lands.
class Gate {
  public:
    void check(bool ok, const std::string& detail) {
        std::cout << "  " << (ok ? "ok  " : "FAIL") << "  " << detail << "\n";
        ok_ = ok_ && ok;
    }
    void note(const std::string& detail) { std::cout << "        " << detail << "\n"; }
    bool ok() const { return ok_; }

  private:
    bool ok_ = true;
};

std::string fmt(double v, int prec = 3) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(prec);
    os << v;
    return os.str();
}

bool within(double measured, double reference, double rel_tol) {
    return std::abs(measured - reference) <= rel_tol * reference;
}

// The five cumulative toggle configurations, plain backbone to full model.
struct Rung {
    const char* label;
    u::Toggles toggles;
};
constexpr Rung kLadder[5] = {
    {"base", {false, false, false, false}}, {"+hdc", {true, false, false, false}},
    {"+ec", {true, true, false, false}},    {"+pc", {true, true, true, false}},
    {"+stem", {true, true, true, true}},
};

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

struct TmpFile {
    std::string path;
    explicit TmpFile(const std::string& name) {
        path = (std::filesystem::temp_directory_path() /
                ("uninext_acceptance_" + std::to_string(::getpid()) + "_" + name))
                   .string();
    }
    ~TmpFile() {
        std::error_code ec;
        std::filesystem::remove(path, ec);
    }
};

// ---------------------------------------------------------------------------
// 1. Parameter totals.
// ---------------------------------------------------------------------------
bool criterion_params(Gate& g) {
    const struct {
        const char* name;
        double reference;
    } rows[3] = {{"T", 24e6}, {"S", 51e6}, {"B", 91e6}};
    for (const auto& row : rows) {
        const double t0 = now_s();
        u::VariantConfig cfg = u::make_variant(row.name);
        cfg.mixer = u::MixerKind::kLocalWindow;
        const int64_t params = u::count_params(cfg);
        const double dt = now_s() - t0;
        const double dev = (static_cast<double>(params) - row.reference) / row.reference;
        g.check(within(static_cast<double>(params), row.reference, 0.05) && dt < 1.0,
                std::string(row.name) + ": " + std::to_string(params) + " params vs reference " +
                    fmt(row.reference, 0) + " (" + fmt(100.0 * dev, 2) + "%, tol 5%), " +
                    fmt(dt) + "s");
    }
    return g.ok();
}

// ---------------------------------------------------------------------------
// 2. MAC totals.
// ---------------------------------------------------------------------------
bool criterion_macs(Gate& g) {
    u::VariantConfig cls = u::make_variant("T");
    const int64_t macs_cls = u::analyze(cls, 224, 224).total_macs;
    const double dev_cls = (static_cast<double>(macs_cls) - 4.3e9) / 4.3e9;
    g.check(within(static_cast<double>(macs_cls), 4.3e9, 0.10),
            "T classification 224x224: " + std::to_string(macs_cls) + " MACs vs reference 4.3e9 (" +
                fmt(100.0 * dev_cls, 2) + "%, tol 10%)");

    u::VariantConfig dense = cls;
    dense.mode = u::Mode::kDense;
    const int64_t macs_dense = u::analyze(dense, 800, 1280).total_macs;
    const double dev_dense = (static_cast<double>(macs_dense) - 266e9) / 266e9;
    g.check(within(static_cast<double>(macs_dense), 266e9, 0.10),
            "T dense 800x1280: " + std::to_string(macs_dense) + " MACs vs reference 266e9 (" +
                fmt(100.0 * dev_dense, 2) + "%, tol 10%)");
    g.note("the dense reference covers a full detection system; the backbone alone");
    g.note("accounts for ~97.6e9 of it, so this sub-check fails by design");
    return g.ok();
}

// ---------------------------------------------------------------------------
// 3. Toggle ladder: monotone analytic costs + working forward/backward.
// ---------------------------------------------------------------------------
bool criterion_ladder(Gate& g) {
    Rng rng(97);
    const Tensor<float> img = Tensor<float>::normal({1, 3, 64, 64}, rng, 0.45, 0.2);
    int64_t prev_params = -1, prev_macs = -1, hdc_step = -1;
    for (int i = 0; i < 5; ++i) {
        u::VariantConfig cfg = u::make_variant("T");
        cfg.toggles = kLadder[i].toggles;
        const int64_t params = u::count_params(cfg);
        const int64_t macs = u::analyze(cfg, 224, 224).total_macs;
        if (i == 1) hdc_step = params - prev_params;
        const bool monotone = i == 0 || (params >= prev_params && macs >= prev_macs);

        u::Model<float> m(cfg, 0.05);
        Tape<float> tape;
        u::ForwardResult<float> r = u::model_forward(m, tape, tape.leaf(img));
        bool finite = r.logits.val().all_finite();
        tape.backward(u::reduce_sum(u::mul(r.logits, r.logits)));
        for (const Var<float>& p : r.param_vars) finite = finite && tape.grad(p).all_finite();

        g.check(monotone && finite,
                std::string(kLadder[i].label) + ": " + std::to_string(params) + " params, " +
                    std::to_string(macs) + " MACs at 224x224, forward/backward at 64x64 " +
                    (finite ? "finite" : "NON-FINITE") +
                    (monotone ? "" : ", COST DECREASED"));
        prev_params = params;
        prev_macs = macs;
    }
    g.check(hdc_step >= 0 && hdc_step <= 500000,
            "hdc increment " + std::to_string(hdc_step) + " params <= 500000");
    return g.ok();
}

// ---------------------------------------------------------------------------
// 4. Gradient oracles.
// ---------------------------------------------------------------------------
bool criterion_gradients(Gate& g) {
    u::OracleOptions oo;  // 20 seeds per target, 64-bit and 32-bit batteries
    oo.log = &std::cout;
    const std::vector<u::OracleCase> cases = u::run_oracle_suite(oo);
    int fails = 0;
    double worst64 = 0.0, worst32 = 0.0;
    for (const auto& c : cases) {
        fails += c.pass ? 0 : 1;
        (c.dtype == "f64" ? worst64 : worst32) = std::max(
            c.dtype == "f64" ? worst64 : worst32, c.max_err);
    }
    g.check(fails == 0, std::to_string(cases.size()) + " target/precision cases x " +
                            std::to_string(oo.seeds) + " seeds: " + std::to_string(fails) +
                            " over tolerance (worst 64-bit " + fmt(worst64 * 1e6, 3) +
                            "e-6 vs 1e-5, worst 32-bit " + fmt(worst32 * 1e4, 3) +
                            "e-4 vs 1e-3)");
    return g.ok();
}

// ---------------------------------------------------------------------------
// 5. Exact invariants.
// ---------------------------------------------------------------------------
bool criterion_invariants(Gate& g) {
    Rng rng(211);

    {  // Token/window/stripe roundtrips reproduce the input bit for bit.
        const Tensor<double> xt = Tensor<double>::normal({2, 6, 6, 8}, rng);
        Tape<double> tape;
        u::FeatureMap<double> x{tape.leaf(xt)};
        const Tensor<double> phi =
            u::spatial_token_convert(u::spatial_token_convert(x)).v.val();
        const Tensor<double> win = u::window_reverse(u::window_partition(x, 3, 4)).v.val();
        const Tensor<double> hs =
            u::stripe_reverse(u::stripe_partition(x, 2, u::Orientation::kHorizontal)).v.val();
        const Tensor<double> vs =
            u::stripe_reverse(u::stripe_partition(x, 4, u::Orientation::kVertical)).v.val();
        g.check(u::bitwise_equal(phi, xt), "token conversion roundtrip bit-exact");
        g.check(u::bitwise_equal(win, xt), "3x4 window partition roundtrip bit-exact");
        g.check(u::bitwise_equal(hs, xt) && u::bitwise_equal(vs, xt),
                "horizontal/vertical stripe roundtrips bit-exact");
    }

    auto attn_vars = [&rng](Tape<double>& t, int64_t c, int64_t heads,
                            int64_t window) {
        auto w = [&] { return t.leaf(Tensor<double>::normal({c, c}, rng, 0.0, 0.4)); };
        auto b = [&] { return t.leaf(Tensor<double>::normal({c}, rng, 0.0, 0.2)); };
        return u::AttentionVars<double>{heads, window, w(), b(), w(), b(), w(), b(), w(), b()};
    };

    {  // Attention rows are probability distributions even across masked pads.
        Tape<double> tape;
        u::FeatureMap<double> x{tape.leaf(Tensor<double>::normal({1, 6, 5, 4}, rng, 0.0, 0.8))};
        u::AttentionTrace<double> trace;
        (void)u::shift_window_attention(x, attn_vars(tape, 6, 3, 2), true,
                                        u::EcVars<double>{}, &trace);
        double worst = 0.0;
        const int64_t n = trace.weights.dim(4);
        for (int64_t r = 0; r < trace.weights.numel() / n; ++r) {
            double s = 0.0;
            for (int64_t j = 0; j < n; ++j) s += trace.weights[r * n + j];
            worst = std::max(worst, std::abs(s - 1.0));
        }
        g.check(worst < 1e-6, "shifted+padded attention row sums within " +
                                  fmt(worst * 1e9, 3) + "e-9 of 1 (tol 1e-6)");
    }

    {  // Global attention commutes with token permutations (torus roll).
        Tape<double> tape;
        u::FeatureMap<double> x{tape.leaf(Tensor<double>::normal({1, 6, 4, 4}, rng, 0.0, 0.8))};
        u::AttentionVars<double> vars = attn_vars(tape, 6, 3, -1);
        Var<double> y = u::local_window_attention(x, vars, u::EcVars<double>{}).v;
        Var<double> y_roll =
            u::local_window_attention(u::cyclic_shift(x, 1, 2), vars, u::EcVars<double>{}).v;
        Var<double> roll_y = u::cyclic_shift(u::FeatureMap<double>{y}, 1, 2).v;
        const double diff = u::max_abs_diff(y_roll.val(), roll_y.val());
        g.check(diff < 1e-6, "permutation equivariance of unmasked attention: max diff " +
                                 fmt(diff * 1e12, 3) + "e-12 (tol 1e-6)");
    }

    {  // Zeroed branch terminals make the unified block an exact identity.
        bool all_exact = true;
        for (u::MixerKind kind :
             {u::MixerKind::kLocalWindow, u::MixerKind::kShiftWindow,
              u::MixerKind::kCrossShapedWindow, u::MixerKind::kSpatialReduction,
              u::MixerKind::kDWConv7}) {
            u::VariantConfig cfg = u::tiny_config();
            cfg.mixer = kind;
            u::Model<float> m(cfg);
            u::zero_additive_branch_terminals(m);
            Tape<float> tape;
            std::vector<Var<float>> bound = m.bind(tape);
            u::BoundParams<float> bp{bound};
            Rng r2(7);
            const Tensor<float> xt = Tensor<float>::normal({2, 16, 4, 4}, r2);
            u::FeatureMap<float> y = u::unified_block_forward(
                m, bp, m.refs.stages[1].blocks[0], 1, 0, u::FeatureMap<float>{tape.leaf(xt)});
            all_exact = all_exact && u::bitwise_equal(y.v.val(), xt);
        }
        g.check(all_exact, "zero-terminal unified block is the exact identity (5 mixers)");
    }

    {  // Shift flag off reproduces plain window attention exactly.
        Tape<double> tape;
        u::FeatureMap<double> x{tape.leaf(Tensor<double>::normal({2, 6, 5, 4}, rng, 0.0, 0.8))};
        u::AttentionVars<double> vars = attn_vars(tape, 6, 3, 2);
        Var<double> a = u::local_window_attention(x, vars, u::EcVars<double>{}).v;
        Var<double> b = u::shift_window_attention(x, vars, false, u::EcVars<double>{}).v;
        g.check(u::bitwise_equal(a.val(), b.val()),
                "shift=0 window attention equals the unshifted mixer bit for bit");
    }

    {  // Checkpoint save -> load -> save reproduces the file byte for byte.
        u::VariantConfig cfg = u::tiny_config();
        cfg.seed = 5;
        u::Model<float> a(cfg, 0.05);
        TmpFile f1("c5_a.ckpt"), f2("c5_b.ckpt");
        u::checkpoint_save(a, f1.path);
        cfg.seed = 6;
        u::Model<float> b(cfg, 0.01);
        u::checkpoint_load(f1.path, b);
        u::checkpoint_save(b, f2.path);
        const std::string bytes1 = read_file(f1.path), bytes2 = read_file(f2.path);
        g.check(!bytes1.empty() && bytes1 == bytes2,
                "checkpoint roundtrip byte-identical (" + std::to_string(bytes1.size()) +
                    " bytes)");
    }
    return g.ok();
}

// ---------------------------------------------------------------------------
// 6. Receptive-field probe.
// ---------------------------------------------------------------------------

// Sum of the probed stage's central column, for brute-force comparison.
double center_score(const u::Model<double>& m, const Tensor<double>& img, int stage) {
    Tape<double> tape;
    u::ForwardResult<double> r = u::model_forward(m, tape, tape.leaf(img));
    const Tensor<double> fm = r.stage_outputs[static_cast<size_t>(stage - 1)].val();
    const Dims d = fm.dims();
    double s = 0.0;
    for (int64_t c = 0; c < d[1]; ++c) s += fm[(c * d[2] + d[2] / 2) * d[3] + d[3] / 2];
    return s;
}

bool criterion_erf(Gate& g) {
    {  // One 3x3 convolution: saliency support is exactly the 3x3 neighborhood.
        Rng rng(11);
        const Tensor<double> w = Tensor<double>::normal({2, 3, 3, 3}, rng);
        const Tensor<double> bias = Tensor<double>::zeros({2});
        const Tensor<double> imgs = Tensor<double>::normal({3, 3, 16, 16}, rng, 0.0, 0.5);
        const u::ErfMap map = u::erf_probe(imgs, 3, [&](Tape<double>& t, Var<double> x) {
            return u::conv2d(u::FeatureMap<double>{x}, t.leaf(w), t.leaf(bias), 1, 1).v;
        });
        bool exact = true;
        for (int64_t i = 0; i < 16; ++i) {
            for (int64_t j = 0; j < 16; ++j) {
                const bool inside = std::abs(i - 8) <= 1 && std::abs(j - 8) <= 1;
                exact = exact && (inside ? map.at(i, j) > 0.0 : map.at(i, j) == 0.0);
            }
        }
        g.check(exact, "single 3x3 convolution: support exactly 3x3");
    }
    {  // Two stacked 3x3 convolutions: support grows to exactly 5x5.
        Rng rng(12);
        const Tensor<double> w1 = Tensor<double>::normal({4, 3, 3, 3}, rng);
        const Tensor<double> w2 = Tensor<double>::normal({2, 4, 3, 3}, rng);
        const Tensor<double> b1 = Tensor<double>::zeros({4});
        const Tensor<double> b2 = Tensor<double>::zeros({2});
        const Tensor<double> imgs = Tensor<double>::normal({2, 3, 16, 16}, rng, 0.0, 0.5);
        const u::ErfMap map = u::erf_probe(imgs, 2, [&](Tape<double>& t, Var<double> x) {
            u::FeatureMap<double> h =
                u::conv2d(u::FeatureMap<double>{x}, t.leaf(w1), t.leaf(b1), 1, 1);
            return u::conv2d(h, t.leaf(w2), t.leaf(b2), 1, 1).v;
        });
        bool exact = true;
        for (int64_t i = 0; i < 16; ++i) {
            for (int64_t j = 0; j < 16; ++j) {
                const bool inside = std::abs(i - 8) <= 2 && std::abs(j - 8) <= 2;
                exact = exact && (inside ? map.at(i, j) > 0.0 : map.at(i, j) == 0.0);
            }
        }
        g.check(exact, "two stacked 3x3 convolutions: support exactly 5x5");
    }

    {  // Every salient pixel influences the score under brute-force
       // perturbation, and every inert pixel has zero saliency.
        u::VariantConfig cfg = u::tiny_config();
        cfg.toggles = {false, false, false, false};
        u::Model<double> m(cfg, 0.1);
        Rng rng(3);
        Tensor<double> imgs = Tensor<double>::normal({1, 3, 32, 32}, rng, 0.45, 0.2);
        const u::ErfMap map = u::compute_erf(m, imgs, 1, 1);
        const double f0 = center_score(m, imgs, 1);
        bool sound = true;
        int inside = 0, outside = 0;
        for (int64_t i = 0; i < 32 && sound; ++i) {
            for (int64_t j = 0; j < 32; ++j) {
                Tensor<double> pert = imgs.clone();
                for (int64_t c = 0; c < 3; ++c) pert[(c * 32 + i) * 32 + j] += 0.5;
                const bool depends = center_score(m, pert, 1) != f0;
                if (map.at(i, j) > 0.0 && !depends) {
                    sound = false;
                    break;
                }
                if (!depends && map.at(i, j) != 0.0) {
                    sound = false;
                    break;
                }
                inside += depends;
                outside += !depends;
            }
        }
        g.check(sound && inside > 0 && outside > 0,
                "stage-1 saliency inside the brute-force dependency set (" +
                    std::to_string(inside) + " active / " + std::to_string(outside) +
                    " inert pixels)");
    }

    {  // Adding HdC, EC and PC branches must not shrink the spread radius.
        u::VariantConfig dcfg = u::tiny_config();
        dcfg.mixer = u::MixerKind::kLocalWindow;
        dcfg.mode = u::Mode::kDense;
        dcfg.toggles = {true, true, true, false};
        dcfg.depths[2] = 4;
        dcfg.seed = 0;
        Rng rng(21);
        Tensor<float> imgs = Tensor<float>::normal({32, 3, 64, 64}, rng, 0.0, 0.5);
        const auto ladder = u::erf_toggle_ladder(dcfg, imgs, 3, 32, 0.1);
        bool monotone = ladder.size() == 4;
        double prev = -1.0;
        std::string radii;
        for (const auto& step : ladder) {
            monotone = monotone && step.radius >= prev;
            prev = step.radius;
            radii += (radii.empty() ? "" : " -> ") + fmt(step.radius);
        }
        g.check(monotone && prev > 0.0,
                "stage-3 spread radius over 32 images non-decreasing: " + radii);
    }
    return g.ok();
}

// ---------------------------------------------------------------------------
// 7. Learnability.
// ---------------------------------------------------------------------------
bool criterion_learnability(Gate& g) {
    const auto ds = u::make_synth_dataset<float>(64, 32, 4, 5);
    for (u::MixerKind kind :
         {u::MixerKind::kPooling, u::MixerKind::kDWConv7, u::MixerKind::kSpatialReduction,
          u::MixerKind::kLocalWindow, u::MixerKind::kShiftWindow,
          u::MixerKind::kCrossShapedWindow}) {
        const double t0 = now_s();
        u::VariantConfig cfg = u::tiny_config();
        cfg.mixer = kind;
        u::Model<float> m(cfg);
        u::TrainConfig tc;
        tc.steps = 300;
        tc.batch_size = 8;
        tc.base_lr = 1e-3;
        tc.warmup_steps = 20;
        const auto hist = u::train_loop(m, ds, tc);
        double late_acc = 0.0;
        for (size_t i = hist.size() - 20; i < hist.size(); ++i) late_acc += hist[i].accuracy;
        late_acc /= 20.0;
        const double bar = kind == u::MixerKind::kLocalWindow ? 0.95 : 0.90;
        g.check(late_acc >= bar, std::string(u::mixer_name(kind)) + ": last-20-step accuracy " +
                                     fmt(late_acc) + " vs bar " + fmt(bar, 2) + " (" +
                                     fmt(now_s() - t0, 1) + "s)");
    }
    return g.ok();
}

// ---------------------------------------------------------------------------
// 8. Classification -> dense transfer.
// ---------------------------------------------------------------------------
bool criterion_mode_transfer(Gate& g) {
    u::VariantConfig cls = u::tiny_config();
    cls.mixer = u::MixerKind::kLocalWindow;
    cls.seed = 12;
    u::Model<float> trained(cls, 0.05);
    TmpFile f("c8.ckpt");
    u::checkpoint_save(trained, f.path);

    u::VariantConfig dense = cls;
    dense.mode = u::Mode::kDense;
    u::Model<float> loaded(dense, 0.01);
    try {
        u::checkpoint_load(f.path, loaded);
        g.check(true, "classification checkpoint loads into dense mode unchanged (" +
                          std::to_string(loaded.params.size()) + " tensors)");
    } catch (const u::CheckpointError& e) {
        g.check(false, std::string("checkpoint rejected: ") + e.what());
        return g.ok();
    }

    Rng rng(8);
    const Tensor<float> img = Tensor<float>::normal({1, 3, 352, 352}, rng, 0.45, 0.2);
    const Tensor<float> logits = u::infer_logits(loaded, img);
    g.check(logits.all_finite() && logits.dims() == (Dims{1, 4}),
            "dense-mode logits at 352x352 finite, dims " + u::dims_str(logits.dims()));

    u::Model<float> assigned(dense, 0.01);
    for (size_t i = 0; i < trained.params.size(); ++i) {
        assigned.params[i].value = trained.params[i].value.clone();
    }
    const Tensor<float> want = u::infer_logits(assigned, img);
    g.check(u::bitwise_equal(logits, want),
            "loaded and directly-assigned dense models agree bit for bit");
    return g.ok();
}

}  // namespace

int main(int argc, char** argv) {
    if (argc != 3 || std::string(argv[1]) != "--criterion") {
        std::cerr << "usage: acceptance --criterion N   (N in 1..8)\n";
        return 64;
    }
    const int n = std::atoi(argv[2]);
    if (n < 1 || n > 8) {
        std::cerr << "usage: acceptance --criterion N   (N in 1..8)\n";
        return 64;
    }

    // Per-criterion wall-clock budgets, seconds.
    const double budgets[9] = {0, 3, 5, 120, 600, 120, 600, 1800, 60};
    bool (*runners[9])(Gate&) = {nullptr,
                                 criterion_params,
                                 criterion_macs,
                                 criterion_ladder,
                                 criterion_gradients,
                                 criterion_invariants,
                                 criterion_erf,
                                 criterion_learnability,
                                 criterion_mode_transfer};

    Gate gate;
    const double t0 = now_s();
    bool ok = false;
    try {
        ok = runners[n](gate);
    } catch (const std::exception& e) {
        gate.check(false, std::string("unexpected exception: ") + e.what());
    }
    const double dt = now_s() - t0;
    if (dt >= budgets[n]) {
        gate.check(false, "runtime " + fmt(dt, 1) + "s exceeds the " + fmt(budgets[n], 0) +
                              "s budget");
        ok = false;
    }
    std::cout << "criterion " << n << ": " << (ok && gate.ok() ? "PASS" : "FAIL") << " ("
              << fmt(dt, 1) << "s, budget " << fmt(budgets[n], 0) << "s)\n";
    return ok && gate.ok() ? 0 : 1;
}
