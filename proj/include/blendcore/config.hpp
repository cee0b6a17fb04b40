#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>
#include <sys/utsname.h>

#include "blendcore/blender.hpp"
#include "blendcore/synthdata.hpp"
#include "blendcore/trainer.hpp"

// Experiment configuration: JSON in, resolved config + provenance out.

namespace blendcore {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
    DatasetSpec dataset;
    TrainConfig train;
    std::string out_dir = "runs/out";

    const BlendConfig& blend() const { return train.blend; }
    BlendConfig& blend() { return train.blend; }
};

// "R_K_M", e.g. "56_4_14"
inline void parse_abbrev(const std::string& s, BlendConfig& cfg) {
    std::int64_t r = 0, k = 0, m = 0;
    char extra = 0;
    if (std::sscanf(s.c_str(), "%ld_%ld_%ld%c", &r, &k, &m, &extra) != 3)
        throw ConfigError("blend.abbrev: expected \"R_K_M\", got \"" + s + "\"");
    cfg.R = r;
    cfg.K = k;
    cfg.M = m;
}

namespace detail {

using Json = nlohmann::json;

inline void check_keys(const Json& obj, const std::string& scope,
                       std::initializer_list<const char*> allowed) {
    for (const auto& [key, value] : obj.items()) {
        bool ok = false;
        for (const char* a : allowed)
            if (key == a) ok = true;
        if (!ok) throw ConfigError(scope + "." + key + ": unknown key");
    }
}

template <typename T>
T field(const Json& obj, const std::string& scope, const char* key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const Json::exception&) {
        throw ConfigError(scope + "." + key + ": wrong type");
    }
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
    using detail::field;
    ExperimentConfig cfg;
    detail::check_keys(j, "config", {"dataset", "train", "blend", "out"});

    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        detail::check_keys(d, "dataset",
                           {"seed", "n_train", "n_val", "overlap_fraction", "image_size"});
        cfg.dataset.seed = field<std::uint64_t>(d, "dataset", "seed", cfg.dataset.seed);
        cfg.dataset.n_train = field<std::int64_t>(d, "dataset", "n_train", cfg.dataset.n_train);
        cfg.dataset.n_val = field<std::int64_t>(d, "dataset", "n_val", cfg.dataset.n_val);
        cfg.dataset.overlap_fraction =
            field<double>(d, "dataset", "overlap_fraction", cfg.dataset.overlap_fraction);
        cfg.dataset.image_size =
            field<std::int64_t>(d, "dataset", "image_size", cfg.dataset.image_size);
        try {
            cfg.dataset.validate();
        } catch (const std::exception& e) {
            throw ConfigError(std::string("dataset: ") + e.what());
        }
    }

    if (j.contains("train")) {
        const auto& t = j.at("train");
        detail::check_keys(t, "train",
                           {"iterations", "batch_size", "learning_rate", "momentum", "seed"});
        cfg.train.iterations = field<std::int64_t>(t, "train", "iterations", cfg.train.iterations);
        cfg.train.batch_size = field<std::int64_t>(t, "train", "batch_size", cfg.train.batch_size);
        cfg.train.learning_rate =
            field<double>(t, "train", "learning_rate", cfg.train.learning_rate);
        cfg.train.momentum = field<double>(t, "train", "momentum", cfg.train.momentum);
        cfg.train.seed = field<std::uint64_t>(t, "train", "seed", cfg.train.seed);
    }

    if (j.contains("blend")) {
        const auto& b = j.at("blend");
        detail::check_keys(
            b, "blend", {"abbrev", "R", "K", "M", "merge_mode", "top_interp", "bottom_sampling"});
        BlendConfig& bc = cfg.blend();
        if (b.contains("abbrev")) parse_abbrev(field<std::string>(b, "blend", "abbrev", ""), bc);
        bc.R = field<std::int64_t>(b, "blend", "R", bc.R);
        bc.K = field<std::int64_t>(b, "blend", "K", bc.K);
        bc.M = field<std::int64_t>(b, "blend", "M", bc.M);
        try {
            if (b.contains("merge_mode"))
                bc.merge_mode = merge_mode_from_string(field<std::string>(b, "blend", "merge_mode", ""));
            if (b.contains("top_interp"))
                bc.top_interp = interp_mode_from_string(field<std::string>(b, "blend", "top_interp", ""));
            if (b.contains("bottom_sampling"))
                bc.bottom_sampling =
                    interp_mode_from_string(field<std::string>(b, "blend", "bottom_sampling", ""));
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("blend: ") + e.what());
        }
        // modes that pin a dimension: adopt it unless the file contradicts itself
        if (bc.merge_mode == MergeMode::WeightedSum) {
            if (b.contains("M") && bc.M != 1)
                throw ConfigError("blend.M: weighted_sum requires M == 1");
            bc.M = 1;
        }
        if (bc.merge_mode == MergeMode::SingleBasisSigmoid) {
            if (b.contains("K") && bc.K != 1)
                throw ConfigError("blend.K: single_basis_sigmoid requires K == 1");
            bc.K = 1;
        }
        if (bc.merge_mode == MergeMode::Assembler) {
            if (b.contains("K") && bc.K != bc.M * bc.M)
                throw ConfigError("blend.K: assembler requires K == M*M");
            bc.K = bc.M * bc.M;
        }
        try {
            bc.validate();
        } catch (const std::exception& e) {
            throw ConfigError(std::string("blend: ") + e.what());
        }
    }

    cfg.out_dir = field<std::string>(j, "config", "out", cfg.out_dir);
    try {
        cfg.train.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("train: ") + e.what());
    }
    return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config: malformed JSON in " + path + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
    return parse_experiment_config(j);
}

inline nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["dataset"] = {{"seed", cfg.dataset.seed},
                    {"n_train", cfg.dataset.n_train},
                    {"n_val", cfg.dataset.n_val},
                    {"overlap_fraction", cfg.dataset.overlap_fraction},
                    {"image_size", cfg.dataset.image_size}};
    j["train"] = {{"iterations", cfg.train.iterations},
                  {"batch_size", cfg.train.batch_size},
                  {"learning_rate", cfg.train.learning_rate},
                  {"momentum", cfg.train.momentum},
                  {"seed", cfg.train.seed}};
    const BlendConfig& b = cfg.blend();
    j["blend"] = {{"R", b.R},
                  {"K", b.K},
                  {"M", b.M},
                  {"merge_mode", to_string(b.merge_mode)},
                  {"top_interp", to_string(b.top_interp)},
                  {"bottom_sampling", to_string(b.bottom_sampling)}};
    j["out"] = cfg.out_dir;
    return j;
}

// ---------------------------------------------------------------------------
// provenance

inline std::string fnv1a_hex(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::string git_describe() {
    FILE* pipe = ::popen("git describe --always --dirty 2>/dev/null", "r");
    if (!pipe) return "unknown";
    char buf[128] = {};
    std::string out;
    while (std::fgets(buf, sizeof(buf), pipe)) out += buf;
    ::pclose(pipe);
    while (!out.empty() && (out.back() == '\n' || out.back() == '\r')) out.pop_back();
    return out.empty() ? "unknown" : out;
}

inline std::string machine_descriptor() {
    struct utsname u {};
    std::string desc = "unknown";
    if (::uname(&u) == 0) desc = std::string(u.sysname) + " " + u.machine + " " + u.release;
    std::ifstream cpuinfo("/proc/cpuinfo");
    std::string line;
    while (std::getline(cpuinfo, line)) {
        if (line.rfind("model name", 0) == 0) {
            const auto pos = line.find(':');
            if (pos != std::string::npos) desc += ";" + line.substr(pos + 2);
            break;
        }
    }
    return desc;
}

inline void write_run_json(const std::string& path, const ExperimentConfig& cfg,
                           const std::string& command, int threads) {
    const auto resolved = experiment_config_to_json(cfg);
    nlohmann::json j;
    j["command"] = command;
    j["config"] = resolved;
    j["config_hash"] = fnv1a_hex(resolved.dump());
    j["seed"] = cfg.train.seed;
    j["dataset_seed"] = cfg.dataset.seed;
    j["git"] = git_describe();
    j["machine"] = machine_descriptor();
    j["threads"] = threads;
    std::ofstream os(path);
    if (!os) throw std::runtime_error("run.json: cannot open " + path);
    os << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// ablation axes, cells ordered like the corresponding tables

struct AblateCell {
    ExperimentConfig config;
    std::string label;
};

inline std::vector<AblateCell> ablate_cells(const ExperimentConfig& base,
                                            const std::string& axis) {
    std::vector<AblateCell> cells;
    const auto push = [&cells](ExperimentConfig c, const std::string& suffix = "") {
        c.blend().validate();
        cells.push_back({c, c.blend().label() + suffix});
    };
    if (axis == "merge_mode") {
        ExperimentConfig ws = base;
        ws.blend().merge_mode = MergeMode::WeightedSum;
        ws.blend().M = 1;
        push(ws);
        ExperimentConfig as = base;
        as.blend().merge_mode = MergeMode::Assembler;
        as.blend().K = as.blend().M * as.blend().M;
        push(as);
        ExperimentConfig bl = base;
        bl.blend().merge_mode = MergeMode::Blender;
        push(bl);
    } else if (axis == "R_M") {
        const std::pair<std::int64_t, std::int64_t> rm[] = {{28, 2}, {28, 4}, {28, 7},
                                                            {56, 4}, {56, 7}, {56, 14}};
        for (const auto& [r, m] : rm) {
            ExperimentConfig c = base;
            c.blend().merge_mode = MergeMode::Blender;
            c.blend().R = r;
            c.blend().M = m;
            push(c);
        }
    } else if (axis == "K") {
        for (const std::int64_t k : {1, 2, 4, 8}) {
            ExperimentConfig c = base;
            c.blend().K = k;
            c.blend().merge_mode = k == 1 ? MergeMode::SingleBasisSigmoid : MergeMode::Blender;
            push(c);
        }
    } else if (axis == "top_interp") {
        for (const InterpMode interp : {InterpMode::Nearest, InterpMode::Bilinear}) {
            for (const std::int64_t m : {7, 14}) {
                ExperimentConfig c = base;
                c.blend().merge_mode = MergeMode::Blender;
                c.blend().top_interp = interp;
                c.blend().M = m;
                push(c, "/top_" + to_string(interp));
            }
        }
    } else if (axis == "bottom_sampling") {
        const std::pair<std::int64_t, std::int64_t> rm[] = {{28, 7}, {56, 14}};
        for (const InterpMode interp : {InterpMode::Nearest, InterpMode::Bilinear}) {
            for (const auto& [r, m] : rm) {
                ExperimentConfig c = base;
                c.blend().merge_mode = MergeMode::Blender;
                c.blend().bottom_sampling = interp;
                c.blend().R = r;
                c.blend().M = m;
                push(c, "/bot_" + to_string(interp));
            }
        }
    } else {
        throw ConfigError("ablate: unknown axis '" + axis +
                          "' (expected merge_mode, R_M, K, top_interp, bottom_sampling)");
    }
    return cells;
}

}  // namespace blendcore
