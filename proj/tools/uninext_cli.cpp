// Command-line workbench for the UniNeXt backbone.
//
//   describe   print a configuration and its per-layer cost table
//   count      emit the parameter/MAC report as CSV
//   gradcheck  run the finite-difference gradient-oracle suite
//   erf        effective-receptive-field maps (CSV + PGM), incl. the
//              base/+hdc/+ec/+pc ablation ladder
//   train      train on the synthetic grating dataset per the config
//   eval       accuracy of a saved checkpoint on the regenerated dataset
//
// Exit status: 0 success, 1 usage/configuration error, 2 numeric-check
// failure. The run seed resolves as: --seed flag, else a seed pinned in the
// config file, else the UNINEXT_SEED environment variable, else 0.

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "uninext/analysis.hpp"
#include "uninext/checkpoint.hpp"
#include "uninext/config.hpp"
#include "uninext/oracle_suite.hpp"
#include "uninext/train.hpp"

namespace u = uninext;

namespace {

// Size of the generated synthetic dataset used by train and eval.
constexpr int64_t kDatasetSize = 64;

int64_t parse_i64(const std::string& s, const char* what) {
    char* end = nullptr;
    const long long v = std::strtoll(s.c_str(), &end, 10);
    if (end == s.c_str() || *end != '\0' || v <= 0) {
        throw u::UsageError(std::string(what) + " must be a positive integer, got '" + s + "'");
    }
    return static_cast<int64_t>(v);
}

std::pair<int64_t, int64_t> parse_resolution(const std::string& s) {
    const auto x = s.find('x');
    if (x == std::string::npos) {
        const int64_t n = parse_i64(s, "--resolution");
        return {n, n};
    }
    return {parse_i64(s.substr(0, x), "--resolution"),
            parse_i64(s.substr(x + 1), "--resolution")};
}

// Model overrides shared by describe and count.
struct ModelFlags {
    std::string variant;
    std::string mixer;
    std::string mode;
    std::string resolution = "224";

    void attach(CLI::App* sc) {
        sc->add_option("--variant", variant, "model variant: T, S, B or tiny");
        sc->add_option("--mixer", mixer,
                       "spatial token mixer: pooling, dwconv7, spatial-reduction, "
                       "local-window, shift-window, cross-shaped-window");
        sc->add_option("--mode", mode, "classification or dense");
        sc->add_option("--resolution", resolution, "input size as N or HxW (default 224)");
    }

    void apply(u::RunConfig& rc) const {
        if (!variant.empty()) {
            const uint64_t seed = rc.model.seed;  // seed is governed by --seed/config/env
            rc.model = variant == "tiny" ? u::tiny_config() : u::make_variant(variant);
            rc.model.seed = seed;
        }
        if (!mixer.empty()) rc.model.mixer = u::parse_mixer(mixer);
        if (!mode.empty()) {
            if (mode == "classification") {
                rc.model.mode = u::Mode::kClassification;
            } else if (mode == "dense") {
                rc.model.mode = u::Mode::kDense;
            } else {
                throw u::UsageError("--mode must be classification or dense, got '" + mode + "'");
            }
        }
    }
};

void write_text_file(const std::string& path, const std::string& body, bool binary = false) {
    std::ofstream os(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
    if (!os) throw u::UsageError("cannot open '" + path + "' for writing");
    os << body;
    if (!os) throw u::UsageError("write to '" + path + "' failed");
}

int cmd_describe(const u::RunConfig& rc, const ModelFlags& mf) {
    const auto [H, W] = parse_resolution(mf.resolution);
    const u::FlopReport rep = u::analyze(rc.model, H, W);
    const u::VariantConfig& c = rc.model;

    auto on_off = [](bool b) { return b ? "on" : "off"; };
    std::cout << "variant: " << c.name << "  mixer: " << u::mixer_name(c.mixer)
              << "  mode: " << u::mode_name(c.mode) << "\n";
    std::cout << "stem_channels: " << c.stem_channels << "  mlp_ratio: " << c.mlp_ratio
              << "  classes: " << c.num_classes << "\n";
    std::cout << "channels:";
    for (int64_t v : c.stage_channels) std::cout << ' ' << v;
    std::cout << "  depths:";
    for (int64_t v : c.depths) std::cout << ' ' << v;
    std::cout << "  heads:";
    for (int64_t v : c.heads) std::cout << ' ' << v;
    std::cout << "\nwindows:";
    for (int s = 0; s < 4; ++s) {
        const int64_t w = c.window(s);
        if (w < 0) {
            std::cout << " global";
        } else {
            std::cout << ' ' << w;
        }
    }
    std::cout << "\ntoggles: hdc=" << on_off(c.toggles.hdc) << " ec=" << on_off(c.toggles.ec)
              << " pc=" << on_off(c.toggles.pc) << " stem=" << on_off(c.toggles.stem) << "\n";
    std::cout << "seed: " << c.seed << "\n";
    std::cout << "input: " << H << "x" << W << "\n";
    std::cout << "params: " << rep.total_params << "  macs: " << rep.total_macs
              << "  elementwise: " << rep.total_elementwise << "\n\n";

    std::cout << std::left << std::setw(44) << "name" << std::setw(12) << "kind" << std::right
              << std::setw(12) << "params" << std::setw(16) << "macs" << "\n";
    for (const auto& r : rep.records) {
        std::cout << std::left << std::setw(44) << r.name << std::setw(12) << r.kind
                  << std::right << std::setw(12) << r.params << std::setw(16) << r.macs << "\n";
    }
    return 0;
}

int cmd_count(const u::RunConfig& rc, const ModelFlags& mf, const std::string& out_path) {
    const auto [H, W] = parse_resolution(mf.resolution);
    const std::string csv = u::analyze(rc.model, H, W).to_csv();
    if (out_path.empty()) {
        std::cout << csv;
    } else {
        write_text_file(out_path, csv);
        std::cout << "wrote " << out_path << "\n";
    }
    return 0;
}

int cmd_gradcheck(bool tiny, int seeds) {
    u::OracleOptions oo;
    oo.seeds = seeds;
    oo.include_f32 = !tiny;
    oo.log = &std::cout;
    const std::vector<u::OracleCase> cases = u::run_oracle_suite(oo);
    int fails = 0;
    for (const auto& c : cases) fails += c.pass ? 0 : 1;
    std::cout << (fails == 0 ? "PASS" : "FAIL") << ": " << cases.size()
              << " target/precision cases over " << seeds << " seeds, " << fails
              << " over tolerance\n";
    return fails == 0 ? 0 : 2;
}

int cmd_erf(const u::RunConfig& rc, const std::string& ablation, const std::string& prefix) {
    const int stage = rc.erf.stage;
    const int64_t S = rc.erf.image_size;
    const int64_t n = rc.erf.samples;
    u::Rng rng(rc.model.seed, 0xe7f);
    const u::Tensor<float> imgs = u::Tensor<float>::normal({n, 3, S, S}, rng, 0.0, 0.5);

    auto write_map = [](const u::ErfMap& map, const std::string& stem) {
        write_text_file(stem + ".csv", map.to_csv());
        write_text_file(stem + ".pgm", map.to_pgm(), /*binary=*/true);
    };

    if (ablation.empty()) {
        u::Model<float> m(rc.model);
        const u::ErfMap map = u::compute_erf(m, imgs, stage, n);
        write_map(map, prefix);
        std::cout << "stage " << stage << " over " << map.images << " images at " << S << "x" << S
                  << ": spread radius (95% mass) " << std::fixed << std::setprecision(3)
                  << u::erf_spread_radius(map, 0.95) << "\n"
                  << "wrote " << prefix << ".csv, " << prefix << ".pgm\n";
        return 0;
    }
    if (ablation != "ladder") {
        throw u::UsageError("--ablation supports only 'ladder', got '" + ablation + "'");
    }

    const auto ladder = u::erf_toggle_ladder(rc.model, imgs, stage, n, 0.1);
    bool monotone = true;
    double prev = -1.0;
    for (const auto& step : ladder) {
        const std::string file =
            prefix + "_" + (step.label == "base" ? step.label : step.label.substr(1));
        write_map(step.map, file);
        std::cout << std::left << std::setw(5) << step.label << " radius " << std::fixed
                  << std::setprecision(3) << step.radius << "  -> " << file << ".{csv,pgm}\n";
        monotone = monotone && step.radius >= prev;
        prev = step.radius;
    }
    std::cout << "spread radius non-decreasing: " << (monotone ? "yes" : "no") << "\n";
    return 0;
}

int cmd_train(const u::RunConfig& rc) {
    u::Model<float> m(rc.model);
    const auto ds = u::make_synth_dataset<float>(kDatasetSize, rc.train_image_size,
                                                 rc.model.num_classes, rc.train.seed);
    std::ofstream log_file;
    std::ostream* log = nullptr;
    if (!rc.log_path.empty()) {
        log_file.open(rc.log_path, std::ios::trunc);
        if (!log_file) throw u::UsageError("cannot open log file '" + rc.log_path + "'");
        log_file << "step,loss,accuracy,lr\n";
        log = &log_file;
    }

    const std::vector<u::TrainPoint> hist = u::train_loop(m, ds, rc.train, log);

    const size_t tail = std::min<size_t>(20, hist.size());
    double late_loss = 0.0, late_acc = 0.0;
    for (size_t i = hist.size() - tail; i < hist.size(); ++i) {
        late_loss += hist[i].loss;
        late_acc += hist[i].accuracy;
    }
    late_loss /= static_cast<double>(tail);
    late_acc /= static_cast<double>(tail);
    std::cout << "trained " << hist.size() << " steps (batch " << rc.train.batch_size << ", "
              << ds.size() << " images at " << ds.image_size() << "x" << ds.image_size() << ", "
              << ds.num_classes << " classes)\n"
              << std::fixed << std::setprecision(4) << "first step loss " << hist.front().loss
              << ", last-" << tail << " mean loss " << late_loss << ", mean accuracy " << late_acc
              << "\n";
    if (log != nullptr) std::cout << "wrote log " << rc.log_path << "\n";
    if (!rc.checkpoint_path.empty()) {
        u::checkpoint_save(m, rc.checkpoint_path);
        std::cout << "wrote checkpoint " << rc.checkpoint_path << "\n";
    }
    return 0;
}

int cmd_eval(const u::RunConfig& rc, const std::string& checkpoint_flag) {
    const std::string path = checkpoint_flag.empty() ? rc.checkpoint_path : checkpoint_flag;
    if (path.empty()) {
        throw u::UsageError("eval needs --checkpoint or io.checkpoint_path in the config");
    }
    u::Model<float> m(rc.model);
    u::checkpoint_load(path, m);
    const auto ds = u::make_synth_dataset<float>(kDatasetSize, rc.train_image_size,
                                                 rc.model.num_classes, rc.train.seed);
    const u::Tensor<float> logits = u::infer_logits(m, ds.images);
    const int64_t K = logits.dim(1);
    int64_t correct = 0;
    for (int64_t i = 0; i < ds.size(); ++i) {
        const float* row = logits.data() + i * K;
        int64_t am = 0;
        for (int64_t k = 1; k < K; ++k) {
            if (row[k] > row[am]) am = k;
        }
        correct += am == ds.labels[static_cast<size_t>(i)];
    }
    const double acc = static_cast<double>(correct) / static_cast<double>(ds.size());
    std::cout << "checkpoint: " << path << "\n"
              << "accuracy: " << std::fixed << std::setprecision(4) << acc << " (" << correct
              << "/" << ds.size() << ")\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"UniNeXt unified vision backbone workbench"};
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("--config", config_path, "JSON run-configuration file");
    uint64_t seed_flag = 0;
    CLI::Option* seed_opt = app.add_option("--seed", seed_flag, "override the run seed");

    ModelFlags mf_describe;
    CLI::App* sc_describe =
        app.add_subcommand("describe", "print the configuration and its layer table");
    mf_describe.attach(sc_describe);

    ModelFlags mf_count;
    CLI::App* sc_count = app.add_subcommand("count", "emit the parameter/MAC report as CSV");
    mf_count.attach(sc_count);
    std::string count_out;
    sc_count->add_option("--out", count_out, "write the CSV here instead of stdout");

    CLI::App* sc_grad =
        app.add_subcommand("gradcheck", "finite-difference gradient-oracle suite");
    bool grad_tiny = false;
    sc_grad->add_flag("--tiny", grad_tiny, "64-bit battery only, 5 seeds");
    int grad_seeds = 0;
    CLI::Option* seeds_opt = sc_grad->add_option("--seeds", grad_seeds, "seeds per target");

    CLI::App* sc_erf =
        app.add_subcommand("erf", "effective-receptive-field probe (CSV + PGM)");
    std::string erf_ablation;
    sc_erf->add_option("--ablation", erf_ablation, "'ladder' = base/+hdc/+ec/+pc series");
    std::string erf_out = "erf";
    sc_erf->add_option("--out", erf_out, "output file prefix (default 'erf')");

    CLI::App* sc_train =
        app.add_subcommand("train", "train on the synthetic dataset per the config");

    CLI::App* sc_eval =
        app.add_subcommand("eval", "accuracy of a checkpoint on the regenerated dataset");
    std::string eval_ckpt;
    sc_eval->add_option("--checkpoint", eval_ckpt,
                        "checkpoint path (overrides io.checkpoint_path)");

    for (CLI::App* sc : {sc_describe, sc_count, sc_grad, sc_erf, sc_train, sc_eval}) {
        sc->fallthrough();
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        u::RunConfig rc;
        if (!config_path.empty()) rc = u::load_run_config(config_path);
        std::optional<uint64_t> cli_seed;
        if (seed_opt->count() > 0) cli_seed = seed_flag;

        if (app.got_subcommand(sc_grad)) {
            const int seeds =
                seeds_opt->count() > 0 ? grad_seeds : (grad_tiny ? 5 : 20);
            return cmd_gradcheck(grad_tiny, seeds);
        }
        if (app.got_subcommand(sc_describe)) mf_describe.apply(rc);
        if (app.got_subcommand(sc_count)) mf_count.apply(rc);
        u::apply_seed_overrides(rc, cli_seed);

        if (app.got_subcommand(sc_describe)) return cmd_describe(rc, mf_describe);
        if (app.got_subcommand(sc_count)) return cmd_count(rc, mf_count, count_out);
        if (app.got_subcommand(sc_erf)) return cmd_erf(rc, erf_ablation, erf_out);
        if (app.got_subcommand(sc_train)) return cmd_train(rc);
        if (app.got_subcommand(sc_eval)) return cmd_eval(rc, eval_ckpt);
        return 1;  // unreachable: a subcommand is required
    } catch (const u::NumericError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const u::Error& e) {
        std::cerr << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
