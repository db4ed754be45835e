// Analytic parameter/MAC accounting and the effective-receptive-field probe.
//
// The frozen totals below were hand-derived from the layer-shape arithmetic
// (independently of the walker) and are asserted exactly; the acceptance
// bands around published costs are checked on top of them.

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "uninext/analysis.hpp"

namespace u = uninext;
using u::Dims;
using u::Rng;
using u::Tape;
using u::Tensor;
using u::Var;

namespace {

const u::FlopRecord& find_record(const u::FlopReport& r, const std::string& name) {
    for (const auto& rec : r.records)
        if (rec.name == name) return rec;
    ADD_FAILURE() << "missing record " << name;
    static u::FlopRecord none;
    return none;
}

bool has_record(const u::FlopReport& r, const std::string& name) {
    for (const auto& rec : r.records)
        if (rec.name == name) return true;
    return false;
}

// name -> param count keyed by the dotted prefix (name minus ".w"/".b"/".g").
template <typename T>
std::map<std::string, int64_t> model_param_map(const u::Model<T>& m) {
    std::map<std::string, int64_t> out;
    for (const auto& p : m.params) {
        const size_t dot = p.name.rfind('.');
        out[p.name.substr(0, dot)] += p.value.numel();
    }
    return out;
}

std::map<std::string, int64_t> report_param_map(const u::FlopReport& r) {
    std::map<std::string, int64_t> out;
    for (const auto& rec : r.records)
        if (rec.params > 0) out[rec.name] += rec.params;
    return out;
}

Tensor<double> random_images(int64_t b, int64_t s, uint64_t seed) {
    Rng rng(seed);
    return Tensor<double>::normal({b, 3, s, s}, rng, 0.0, 0.5);
}

}  // namespace

TEST(Counting, HandCountedPrimitives) {
    u::FlopReport rep;
    u::detail::ReportBuilder b(rep);
    b.linear("fc", 1, 4, 8);
    b.conv("dw", 1, 16, 3, 5, 5);
    b.conv("c", 1, 1, 3, 4, 4);
    EXPECT_EQ(find_record(rep, "fc").params, 40);
    EXPECT_EQ(find_record(rep, "dw").params, 160);
    EXPECT_EQ(find_record(rep, "c").macs, 144);
    EXPECT_EQ(rep.total_params, 40 + 160 + 10);
}

TEST(Counting, VariantParameterTotals) {
    const int64_t expected[3] = {23529256, 52186312, 92105320};
    const double published[3] = {24e6, 51e6, 91e6};
    const char* names[3] = {"T", "S", "B"};
    for (int i = 0; i < 3; ++i) {
        u::VariantConfig cfg = u::make_variant(names[i]);
        const int64_t total = u::count_params(cfg);
        EXPECT_EQ(total, expected[i]) << names[i];
        EXPECT_LT(std::abs(total - published[i]) / published[i], 0.05) << names[i];
    }
}

TEST(Counting, MacTotalsClassificationAndDense) {
    u::VariantConfig cfg = u::make_variant("T");
    const u::FlopReport cls = u::analyze(cfg, 224, 224);
    EXPECT_EQ(cls.total_macs, 4409577472LL);
    EXPECT_LT(std::abs(cls.total_macs - 4.3e9) / 4.3e9, 0.10);

    cfg.mode = u::Mode::kDense;
    const u::FlopReport dense = u::analyze(cfg, 800, 1280);
    EXPECT_EQ(dense.total_macs, 97576629760LL);
    // Params never depend on resolution or window mode.
    EXPECT_EQ(dense.total_params, cls.total_params);
}

TEST(Counting, ToggleLadderCostsAreFrozenAndMonotone) {
    struct Step {
        u::Toggles t;
        int64_t params;
        int64_t macs;
    };
    const Step ladder[5] = {
        {{false, false, false, false}, 23101544, 4094371840LL},
        {{true, false, false, false}, 23390312, 4150368256LL},
        {{true, true, false, false}, 23450472, 4164367360LL},
        {{true, true, true, false}, 23510632, 4178366464LL},
        {{true, true, true, true}, 23529256, 4409577472LL},
    };
    int64_t prev_params = 0, prev_macs = 0;
    for (const Step& s : ladder) {
        u::VariantConfig cfg = u::make_variant("T");
        cfg.toggles = s.t;
        const u::FlopReport r = u::analyze(cfg, 224, 224);
        EXPECT_EQ(r.total_params, s.params);
        EXPECT_EQ(r.total_macs, s.macs);
        EXPECT_GT(r.total_params, prev_params);
        EXPECT_GT(r.total_macs, prev_macs);
        prev_params = r.total_params;
        prev_macs = r.total_macs;
    }
    // The HdC step stays under half a million parameters.
    EXPECT_EQ(ladder[1].params - ladder[0].params, 288768);
    EXPECT_LE(ladder[1].params - ladder[0].params, 500000);
}

TEST(Counting, ReportInvariants) {
    u::VariantConfig cfg = u::make_variant("T");
    const u::FlopReport r = u::analyze(cfg, 224, 224);
    int64_t macs = 0, params = 0, ew = 0;
    for (const auto& rec : r.records) {
        macs += rec.macs;
        params += rec.params;
        ew += rec.elementwise;
        EXPECT_GE(rec.macs, 0);
        EXPECT_GE(rec.params, 0);
    }
    EXPECT_EQ(macs, r.total_macs);
    EXPECT_EQ(params, r.total_params);
    EXPECT_EQ(ew, r.total_elementwise);
    EXPECT_GT(ew, 0);

    // Doubling affects MACs only.
    u::AnalysisOptions opt;
    opt.double_macs = true;
    const u::FlopReport d = u::analyze(cfg, 224, 224, opt);
    EXPECT_TRUE(d.doubled);
    EXPECT_EQ(d.total_macs, 2 * r.total_macs);
    EXPECT_EQ(d.total_params, r.total_params);
    EXPECT_EQ(d.total_elementwise, r.total_elementwise);

    // Identical across repeated runs, and params identical across resolutions.
    const u::FlopReport again = u::analyze(cfg, 224, 224);
    ASSERT_EQ(again.records.size(), r.records.size());
    for (size_t i = 0; i < r.records.size(); ++i) {
        EXPECT_EQ(again.records[i].name, r.records[i].name);
        EXPECT_EQ(again.records[i].macs, r.records[i].macs);
    }
    EXPECT_EQ(u::analyze(cfg, 32, 32).total_params, r.total_params);

    EXPECT_THROW(u::analyze(cfg, 100, 224), u::UsageError);
    EXPECT_THROW(u::analyze(cfg, 224, 0), u::UsageError);
}

TEST(Counting, CsvSerialization) {
    u::VariantConfig cfg = u::tiny_config();
    const u::FlopReport r = u::analyze(cfg, 32, 32);
    const std::string csv = r.to_csv();
    EXPECT_EQ(csv.rfind("name,kind,macs,params\n", 0), 0u);
    const std::string total_row = "total,," + std::to_string(r.total_macs) + ',' +
                                  std::to_string(r.total_params) + '\n';
    EXPECT_NE(csv.find(total_row), std::string::npos);
    EXPECT_EQ(static_cast<size_t>(std::count(csv.begin(), csv.end(), '\n')),
              r.records.size() + 2);
}

// The analytic walk must agree with a really-built model, name by name.
TEST(Counting, MatchesBuiltModels) {
    std::vector<u::VariantConfig> cfgs;
    for (u::MixerKind k :
         {u::MixerKind::kPooling, u::MixerKind::kDWConv7, u::MixerKind::kSpatialReduction,
          u::MixerKind::kLocalWindow, u::MixerKind::kShiftWindow,
          u::MixerKind::kCrossShapedWindow}) {
        u::VariantConfig c = u::tiny_config();
        c.mixer = k;
        cfgs.push_back(c);
    }
    for (int mask = 0; mask < 16; ++mask) {
        u::VariantConfig c = u::tiny_config();
        c.toggles = {(mask & 1) != 0, (mask & 2) != 0, (mask & 4) != 0, (mask & 8) != 0};
        cfgs.push_back(c);
    }
    for (const auto& cfg : cfgs) {
        u::Model<float> m(cfg);
        EXPECT_EQ(u::count_params(m), u::count_params(cfg)) << u::mixer_name(cfg.mixer);
        EXPECT_EQ(model_param_map(m), report_param_map(u::analyze(cfg, 32, 32)))
            << u::mixer_name(cfg.mixer);
    }
    // Full-size cross-check on one published variant.
    u::VariantConfig t = u::make_variant("T");
    u::Model<float> mt(t);
    EXPECT_EQ(u::count_params(mt), 23529256);
    EXPECT_EQ(model_param_map(mt), report_param_map(u::analyze(t, 224, 224)));
}

TEST(Counting, MixerStructureDetails) {
    // Spatial reduction: stage-1 reduction conv present, stage-4 (ratio 1)
    // absent; with EC on, V is projected at both resolutions.
    u::VariantConfig cfg = u::make_variant("T");
    cfg.mixer = u::MixerKind::kSpatialReduction;
    const u::FlopReport r = u::analyze(cfg, 224, 224);
    EXPECT_TRUE(has_record(r, "stages.1.blocks.1.mixer.sr"));
    EXPECT_FALSE(has_record(r, "stages.4.blocks.1.mixer.sr"));
    const int64_t N1 = 56 * 56, M1 = 7 * 7, C1 = 64;
    EXPECT_EQ(find_record(r, "stages.1.blocks.1.mixer.v").macs, (N1 + M1) * C1 * C1);
    EXPECT_EQ(find_record(r, "stages.1.blocks.1.mixer.k").macs, M1 * C1 * C1);
    EXPECT_EQ(find_record(r, "stages.1.blocks.1.mixer.attn").macs, 2 * N1 * M1 * C1);

    u::VariantConfig noec = cfg;
    noec.toggles.ec = false;
    EXPECT_EQ(find_record(u::analyze(noec, 224, 224), "stages.1.blocks.1.mixer.v").macs,
              M1 * C1 * C1);

    // Window attention at stage 1: 8x8 windows of 49 tokens.
    u::VariantConfig lw = u::make_variant("T");
    const u::FlopReport rl = u::analyze(lw, 224, 224);
    EXPECT_EQ(find_record(rl, "stages.1.blocks.1.mixer.attn").macs,
              2LL * 64 * 2 * 49 * 49 * 32);
    // Stage 4 is global: one 49-token window over all 16 heads.
    EXPECT_EQ(find_record(rl, "stages.4.blocks.1.mixer.attn").macs,
              2LL * 1 * 16 * 49 * 49 * 32);

    // Cross-shaped stripes: width-1 horizontal + vertical halves at stage 1.
    u::VariantConfig cs = u::make_variant("T");
    cs.mixer = u::MixerKind::kCrossShapedWindow;
    const u::FlopReport rc = u::analyze(cs, 224, 224);
    const int64_t n_h = 1 * 56;
    EXPECT_EQ(find_record(rc, "stages.1.blocks.1.mixer.attn").macs,
              2 * (2LL * 56 * 1 * n_h * n_h * 32));

    // Padding rounds partial windows up: 11-token windows over 200x320.
    u::VariantConfig dn = u::make_variant("T");
    dn.mode = u::Mode::kDense;
    const u::FlopReport rd = u::analyze(dn, 800, 1280);
    EXPECT_EQ(find_record(rd, "stages.1.blocks.1.mixer.attn").macs,
              2LL * (19 * 30) * 2 * 121 * 121 * 32);
}

TEST(Counting, ResolutionScalingPerRecord) {
    u::VariantConfig cfg = u::make_variant("T");
    const u::FlopReport a = u::analyze(cfg, 224, 224);
    const u::FlopReport b = u::analyze(cfg, 448, 448);
    ASSERT_EQ(a.records.size(), b.records.size());
    for (size_t i = 0; i < a.records.size(); ++i) {
        const auto& ra = a.records[i];
        const auto& rb = b.records[i];
        ASSERT_EQ(ra.name, rb.name);
        if (ra.kind == "conv" || ra.kind == "linear") {
            const int64_t want = ra.name == "head" ? ra.macs : 4 * ra.macs;
            EXPECT_EQ(rb.macs, want) << ra.name;
        } else if (ra.kind == "attention" && ra.name.rfind("stages.4", 0) != 0) {
            // Fixed window size: the window count quadruples.
            EXPECT_EQ(rb.macs, 4 * ra.macs) << ra.name;
        }
    }
    // The global stage-4 window grows with the map instead.
    EXPECT_EQ(find_record(b, "stages.4.blocks.1.mixer.attn").macs,
              16 * find_record(a, "stages.4.blocks.1.mixer.attn").macs);
}

// ---------------------------------------------------------------------------
// Effective receptive field
// ---------------------------------------------------------------------------

TEST(Erf, SingleConvSupportIsExactlyThreeByThree) {
    Rng rng(11);
    const Tensor<double> w = Tensor<double>::normal({2, 3, 3, 3}, rng);
    const Tensor<double> bias = Tensor<double>::zeros({2});
    const u::ErfMap map =
        u::erf_probe(random_images(3, 16, 1), 3, [&](Tape<double>& t, Var<double> x) {
            return u::conv2d(u::FeatureMap<double>{x}, t.leaf(w), t.leaf(bias), 1, 1).v;
        });
    EXPECT_EQ(map.height, 16);
    EXPECT_EQ(map.width, 16);
    EXPECT_EQ(map.images, 3);
    double mx = 0.0;
    for (int64_t i = 0; i < 16; ++i) {
        for (int64_t j = 0; j < 16; ++j) {
            const bool inside = std::abs(i - 8) <= 1 && std::abs(j - 8) <= 1;
            if (inside)
                EXPECT_GT(map.at(i, j), 0.0) << i << "," << j;
            else
                EXPECT_EQ(map.at(i, j), 0.0) << i << "," << j;
            mx = std::max(mx, map.at(i, j));
        }
    }
    EXPECT_DOUBLE_EQ(mx, 1.0);
}

TEST(Erf, TwoConvSupportIsExactlyFiveByFive) {
    Rng rng(12);
    const Tensor<double> w1 = Tensor<double>::normal({4, 3, 3, 3}, rng);
    const Tensor<double> w2 = Tensor<double>::normal({2, 4, 3, 3}, rng);
    const Tensor<double> b1 = Tensor<double>::zeros({4});
    const Tensor<double> b2 = Tensor<double>::zeros({2});
    const u::ErfMap map =
        u::erf_probe(random_images(2, 16, 2), 2, [&](Tape<double>& t, Var<double> x) {
            u::FeatureMap<double> h =
                u::conv2d(u::FeatureMap<double>{x}, t.leaf(w1), t.leaf(b1), 1, 1);
            return u::conv2d(h, t.leaf(w2), t.leaf(b2), 1, 1).v;
        });
    for (int64_t i = 0; i < 16; ++i) {
        for (int64_t j = 0; j < 16; ++j) {
            const bool inside = std::abs(i - 8) <= 2 && std::abs(j - 8) <= 2;
            if (inside) {
                EXPECT_GT(map.at(i, j), 0.0);
            } else {
                EXPECT_EQ(map.at(i, j), 0.0);
            }
        }
    }
}

namespace {

// Sum of the probed stage's central channels, computed without autodiff use.
double center_score(const u::Model<double>& m, const Tensor<double>& img, int stage) {
    Tape<double> tape;
    u::ForwardResult<double> r = u::model_forward(m, tape, tape.leaf(img));
    const Tensor<double> fm = r.stage_outputs[static_cast<size_t>(stage - 1)].val();
    const Dims d = fm.dims();
    double s = 0.0;
    for (int64_t c = 0; c < d[1]; ++c)
        s += fm[(c * d[2] + d[2] / 2) * d[3] + d[3] / 2];
    return s;
}

}  // namespace

TEST(Erf, NonzeroCellsLieInsideBruteForceDependencySet) {
    // Perturbing any pixel the probe marks must change the probed score;
    // pixels outside the mask stay exactly inert (no computational path).
    u::VariantConfig cfg = u::tiny_config();
    cfg.toggles = {false, false, false, false};
    u::Model<double> m(cfg, 0.1);

    Tensor<double> imgs = random_images(1, 32, 3);
    const u::ErfMap map = u::compute_erf(m, imgs, 1, 1);
    EXPECT_EQ(map.stage, 1);

    Tensor<double> base({1, 3, 32, 32});
    std::copy_n(imgs.data(), base.numel(), base.data());
    const double f0 = center_score(m, base, 1);

    int inside = 0, outside = 0;
    for (int64_t i = 0; i < 32; ++i) {
        for (int64_t j = 0; j < 32; ++j) {
            Tensor<double> pert = base.clone();
            for (int64_t c = 0; c < 3; ++c) pert[(c * 32 + i) * 32 + j] += 0.5;
            const bool depends = center_score(m, pert, 1) != f0;
            if (map.at(i, j) > 0.0) {
                EXPECT_TRUE(depends) << "saliency outside dependency set at " << i << "," << j;
                ++inside;
            }
            if (!depends) {
                // Conversely a pixel with no forward influence has no gradient.
                EXPECT_EQ(map.at(i, j), 0.0);
                ++outside;
            }
        }
    }
    // The window bound is real: stage 1 is 8x8 under a 7-wide window, so the
    // center's window reaches input rows/cols 0..27 and no further.
    EXPECT_GT(inside, 0);
    EXPECT_GT(outside, 0);
    for (int64_t i = 0; i < 32; ++i) {
        for (int64_t j = 0; j < 32; ++j) {
            if (i >= 28 || j >= 28) {
                EXPECT_EQ(map.at(i, j), 0.0);
            }
        }
    }
}

TEST(Erf, SpreadRadiusBasics) {
    u::ErfMap map;
    map.height = 9;
    map.width = 9;
    map.grid.assign(81, 0.0);
    EXPECT_EQ(u::erf_spread_radius(map), 0.0);

    map.grid[4 * 9 + 4] = 1.0;  // single central spike
    EXPECT_EQ(u::erf_spread_radius(map, 0.95), 0.0);

    map.grid.assign(81, 0.0);
    map.grid[0] = 1.0;  // all mass at the far corner
    EXPECT_DOUBLE_EQ(u::erf_spread_radius(map, 0.5), std::sqrt(32.0));

    map.grid.assign(81, 1.0);  // uniform: radius grows with requested mass
    EXPECT_LE(u::erf_spread_radius(map, 0.5), u::erf_spread_radius(map, 0.95));
    EXPECT_THROW(u::erf_spread_radius(map, 0.0), u::UsageError);
    EXPECT_THROW(u::erf_spread_radius(map, 1.5), u::UsageError);
}

TEST(Erf, ConvLadderWidensSpreadRadius) {
    // Base -> +HdC -> +EC -> +PC each adds 3x3 convolution branches; the
    // 95%-mass radius of the stage-3 saliency must not shrink along the way.
    u::VariantConfig dcfg = u::tiny_config();
    dcfg.mixer = u::MixerKind::kLocalWindow;
    dcfg.mode = u::Mode::kDense;
    dcfg.toggles = {true, true, true, false};
    dcfg.depths[2] = 4;  // a deeper stage 3 gives each component more sites
    dcfg.seed = 0;

    Rng rng(21);
    Tensor<float> imgs = Tensor<float>::normal({32, 3, 64, 64}, rng, 0.0, 0.5);
    const auto ladder = u::erf_toggle_ladder(dcfg, imgs, 3, 32, 0.1);
    ASSERT_EQ(ladder.size(), 4u);
    EXPECT_EQ(ladder[0].label, "base");
    EXPECT_EQ(ladder[3].label, "+pc");
    EXPECT_FALSE(ladder[0].toggles.hdc);
    EXPECT_TRUE(ladder[3].toggles.pc);
    EXPECT_FALSE(ladder[3].toggles.stem);  // stem setting carries through
    double prev = -1.0;
    for (const auto& step : ladder) {
        EXPECT_GE(step.radius, prev) << step.label;
        EXPECT_EQ(step.map.stage, 3);
        prev = step.radius;
    }
    EXPECT_GT(prev, 0.0);
}

TEST(Erf, SerializationFormats) {
    u::ErfMap map;
    map.height = 4;
    map.width = 8;
    map.grid.assign(32, 0.25);
    map.grid[2 * 8 + 3] = 1.0;

    const std::string pgm = map.to_pgm();
    const std::string header = "P5\n8 4\n255\n";
    ASSERT_EQ(pgm.size(), header.size() + 32);
    EXPECT_EQ(pgm.rfind(header, 0), 0u);
    EXPECT_EQ(static_cast<unsigned char>(pgm[header.size() + 2 * 8 + 3]), 255);
    EXPECT_EQ(static_cast<unsigned char>(pgm[header.size()]), 64);

    const std::string csv = map.to_csv();
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
    const std::string first_line = csv.substr(0, csv.find('\n'));
    EXPECT_EQ(std::count(first_line.begin(), first_line.end(), ','), 7);
}
