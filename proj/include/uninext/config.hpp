#pragma once

// JSON run configuration: one file describes the model to build, the
// training recipe, the receptive-field probe, and output paths. Unknown
// keys are rejected with their full path, and relative paths in the `io`
// section resolve against the directory holding the config file.
//
// Schema (all sections and keys optional):
//   {
//     "model": {
//       "variant": "T" | "S" | "B" | "tiny",
//       "stem_channels": int, "channels": [4 ints], "depths": [4 ints],
//       "heads": [4 ints], "mlp_ratio": int,
//       "mixer": "pooling" | "dwconv7" | "spatial-reduction" |
//                "local-window" | "shift-window" | "cross-shaped-window",
//       "mode": "classification" | "dense",
//       "toggles": {"hdc": bool, "ec": bool, "pc": bool, "stem": bool},
//       "seed": uint
//     },
//     "train": {"lr": num, "wd": num, "steps": int, "warmup": int,
//               "batch": int, "image_size": int, "classes": int},
//     "erf":   {"stage": int, "samples": int, "image_size": int},
//     "io":    {"checkpoint_path": str, "log_path": str}
//   }

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <sstream>
#include <string>

#include "json.hpp"
#include "uninext/model.hpp"
#include "uninext/train.hpp"

namespace uninext {

struct ErfConfig {
    int stage = 3;
    int64_t samples = 16;
    int64_t image_size = 64;
};

struct RunConfig {
    VariantConfig model = tiny_config();
    TrainConfig train;
    int64_t train_image_size = 32;
    ErfConfig erf;
    std::string checkpoint_path;  // empty = not set
    std::string log_path;         // empty = not set
    bool seed_explicit = false;   // the file itself pinned model.seed
};

namespace detail {

using Json = nlohmann::json;

inline void check_keys(const Json& j, const std::string& path,
                       std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError("config: '" + path + "' must be an object");
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const char* k : allowed) {
            if (item.key() == k) {
                ok = true;
                break;
            }
        }
        if (!ok) {
            throw ConfigError("config: unknown key '" +
                              (path.empty() ? item.key() : path + "." + item.key()) + "'");
        }
    }
}

inline int64_t want_int(const Json& j, const std::string& path) {
    if (!j.is_number_integer()) throw ConfigError("config: '" + path + "' must be an integer");
    return j.get<int64_t>();
}

inline uint64_t want_uint(const Json& j, const std::string& path) {
    if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<int64_t>() >= 0)) {
        throw ConfigError("config: '" + path + "' must be a non-negative integer");
    }
    return j.get<uint64_t>();
}

inline double want_num(const Json& j, const std::string& path) {
    if (!j.is_number()) throw ConfigError("config: '" + path + "' must be a number");
    return j.get<double>();
}

inline bool want_bool(const Json& j, const std::string& path) {
    if (!j.is_boolean()) throw ConfigError("config: '" + path + "' must be a boolean");
    return j.get<bool>();
}

inline std::string want_str(const Json& j, const std::string& path) {
    if (!j.is_string()) throw ConfigError("config: '" + path + "' must be a string");
    return j.get<std::string>();
}

inline std::array<int64_t, 4> want_int4(const Json& j, const std::string& path) {
    if (!j.is_array() || j.size() != 4) {
        throw ConfigError("config: '" + path + "' must be an array of 4 integers");
    }
    std::array<int64_t, 4> out{};
    for (size_t i = 0; i < 4; ++i) out[i] = want_int(j[i], path);
    return out;
}

inline std::string resolve_path(const std::string& value, const std::string& base_dir) {
    std::filesystem::path p(value);
    if (p.is_absolute() || base_dir.empty()) return p.string();
    return (std::filesystem::path(base_dir) / p).lexically_normal().string();
}

}  // namespace detail

// Parses a config document; `base_dir` anchors relative io paths.
inline RunConfig parse_run_config(const detail::Json& j, const std::string& base_dir) {
    using detail::Json;
    RunConfig rc;
    detail::check_keys(j, "", {"model", "train", "erf", "io"});

    if (j.contains("model")) {
        const Json& m = j["model"];
        detail::check_keys(m, "model",
                           {"variant", "stem_channels", "channels", "depths", "heads",
                            "mlp_ratio", "mixer", "mode", "toggles", "seed"});
        if (m.contains("variant")) {
            const std::string v = detail::want_str(m["variant"], "model.variant");
            rc.model = v == "tiny" ? tiny_config() : make_variant(v);
        }
        if (m.contains("stem_channels")) {
            rc.model.stem_channels = detail::want_int(m["stem_channels"], "model.stem_channels");
        }
        if (m.contains("channels")) {
            rc.model.stage_channels = detail::want_int4(m["channels"], "model.channels");
        }
        if (m.contains("depths")) {
            rc.model.depths = detail::want_int4(m["depths"], "model.depths");
        }
        if (m.contains("heads")) {
            rc.model.heads = detail::want_int4(m["heads"], "model.heads");
        }
        if (m.contains("mlp_ratio")) {
            rc.model.mlp_ratio = detail::want_int(m["mlp_ratio"], "model.mlp_ratio");
        }
        if (m.contains("mixer")) {
            rc.model.mixer = parse_mixer(detail::want_str(m["mixer"], "model.mixer"));
        }
        if (m.contains("mode")) {
            const std::string s = detail::want_str(m["mode"], "model.mode");
            if (s == "classification") {
                rc.model.mode = Mode::kClassification;
            } else if (s == "dense") {
                rc.model.mode = Mode::kDense;
            } else {
                throw ConfigError("config: 'model.mode' must be classification or dense, got '" +
                                  s + "'");
            }
        }
        if (m.contains("toggles")) {
            const Json& t = m["toggles"];
            detail::check_keys(t, "model.toggles", {"hdc", "ec", "pc", "stem"});
            if (t.contains("hdc")) rc.model.toggles.hdc = detail::want_bool(t["hdc"], "model.toggles.hdc");
            if (t.contains("ec")) rc.model.toggles.ec = detail::want_bool(t["ec"], "model.toggles.ec");
            if (t.contains("pc")) rc.model.toggles.pc = detail::want_bool(t["pc"], "model.toggles.pc");
            if (t.contains("stem")) {
                rc.model.toggles.stem = detail::want_bool(t["stem"], "model.toggles.stem");
            }
        }
        if (m.contains("seed")) {
            rc.model.seed = detail::want_uint(m["seed"], "model.seed");
            rc.seed_explicit = true;
        }
    }

    if (j.contains("train")) {
        const Json& t = j["train"];
        detail::check_keys(t, "train",
                           {"lr", "wd", "steps", "warmup", "batch", "image_size", "classes"});
        if (t.contains("lr")) rc.train.base_lr = detail::want_num(t["lr"], "train.lr");
        if (t.contains("wd")) rc.train.weight_decay = detail::want_num(t["wd"], "train.wd");
        if (t.contains("steps")) rc.train.steps = detail::want_int(t["steps"], "train.steps");
        if (t.contains("warmup")) {
            rc.train.warmup_steps = detail::want_int(t["warmup"], "train.warmup");
        }
        if (t.contains("batch")) rc.train.batch_size = detail::want_int(t["batch"], "train.batch");
        if (t.contains("image_size")) {
            rc.train_image_size = detail::want_int(t["image_size"], "train.image_size");
        }
        if (t.contains("classes")) {
            rc.model.num_classes = detail::want_int(t["classes"], "train.classes");
        }
    }

    if (j.contains("erf")) {
        const Json& e = j["erf"];
        detail::check_keys(e, "erf", {"stage", "samples", "image_size"});
        if (e.contains("stage")) {
            rc.erf.stage = static_cast<int>(detail::want_int(e["stage"], "erf.stage"));
        }
        if (e.contains("samples")) {
            rc.erf.samples = detail::want_int(e["samples"], "erf.samples");
        }
        if (e.contains("image_size")) {
            rc.erf.image_size = detail::want_int(e["image_size"], "erf.image_size");
        }
    }

    if (j.contains("io")) {
        const Json& io = j["io"];
        detail::check_keys(io, "io", {"checkpoint_path", "log_path"});
        if (io.contains("checkpoint_path")) {
            rc.checkpoint_path = detail::resolve_path(
                detail::want_str(io["checkpoint_path"], "io.checkpoint_path"), base_dir);
        }
        if (io.contains("log_path")) {
            rc.log_path = detail::resolve_path(
                detail::want_str(io["log_path"], "io.log_path"), base_dir);
        }
    }

    rc.train.seed = rc.model.seed;
    return rc;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw UsageError("cannot open config file '" + path + "'");
    detail::Json j;
    try {
        j = detail::Json::parse(is);
    } catch (const detail::Json::parse_error& e) {
        throw ConfigError("config: '" + path + "' is not valid JSON: " + e.what());
    }
    const std::string base = std::filesystem::path(path).parent_path().string();
    return parse_run_config(j, base);
}

// Seed precedence: explicit CLI flag > seed pinned in the config file >
// UNINEXT_SEED environment variable > built-in default.
inline std::optional<uint64_t> env_seed() {
    const char* s = std::getenv("UNINEXT_SEED");
    if (s == nullptr || *s == '\0') return std::nullopt;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s, &end, 10);
    if (end == s || *end != '\0') {
        throw UsageError(std::string("UNINEXT_SEED must be an unsigned integer, got '") + s +
                         "'");
    }
    return static_cast<uint64_t>(v);
}

inline void apply_seed_overrides(RunConfig& rc, std::optional<uint64_t> cli_seed) {
    if (cli_seed.has_value()) {
        rc.model.seed = *cli_seed;
    } else if (!rc.seed_explicit) {
        if (const auto e = env_seed()) rc.model.seed = *e;
    }
    rc.train.seed = rc.model.seed;
}

}  // namespace uninext
