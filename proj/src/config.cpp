#include "hkt/config.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <limits>

#include "hkt/errors.hpp"

namespace hkt::cli {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        std::size_t comma = s.find(',', start);
        parts.push_back(trim(s.substr(start, comma - start)));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return parts;
}

[[noreturn]] void bad_value(const std::string& origin, const std::string& key,
                            const std::string& want, const std::string& got) {
    throw ConfigError(origin + ": value for '" + key + "' must be " + want + " (got '" + got +
                      "')");
}

std::uint64_t parse_u64(const std::string& origin, const std::string& key,
                        const std::string& value) {
    errno = 0;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(value.c_str(), &end, 10);
    if (value.empty() || *end != '\0' || errno == ERANGE || value[0] == '-') {
        bad_value(origin, key, "an unsigned integer", value);
    }
    return static_cast<std::uint64_t>(v);
}

std::size_t parse_size(const std::string& origin, const std::string& key,
                       const std::string& value) {
    return static_cast<std::size_t>(parse_u64(origin, key, value));
}

double parse_double(const std::string& origin, const std::string& key,
                    const std::string& value) {
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(value.c_str(), &end);
    if (value.empty() || *end != '\0' || errno == ERANGE) bad_value(origin, key, "a number", value);
    return v;
}

bool parse_bool(const std::string& origin, const std::string& key, const std::string& value) {
    if (value == "1" || value == "true") return true;
    if (value == "0" || value == "false") return false;
    bad_value(origin, key, "a boolean (0/1/true/false)", value);
}

CliMode parse_mode(const std::string& origin, const std::string& value) {
    if (value == "train-parent") return CliMode::train_parent;
    if (value == "train-solo") return CliMode::train_solo;
    if (value == "train-hkt") return CliMode::train_hkt;
    if (value == "train-kd") return CliMode::train_kd;
    if (value == "eval") return CliMode::eval;
    if (value == "grad-check") return CliMode::grad_check;
    if (value == "compare") return CliMode::compare;
    if (value == "report") return CliMode::report;
    bad_value(origin, "mode",
              "one of train-parent | train-solo | train-hkt | train-kd | eval | grad-check | "
              "compare | report",
              value);
}

train::TaskLoss parse_task(const std::string& origin, const std::string& value) {
    if (value == "ce") return train::TaskLoss::cross_entropy;
    if (value == "mae") return train::TaskLoss::mae;
    if (value == "mse") return train::TaskLoss::mse;
    bad_value(origin, "task", "one of ce | mae | mse", value);
}

/// Tracks which keys the user actually assigned, for the interactions
/// that depend on it (stage synthesis, required-key checks).
struct ParseTracker {
    bool saw_mode = false;
    bool saw_parent_spec = false;
    bool saw_child_spec = false;
};

std::size_t block_count(const std::string& spec) {
    return split_list(spec).size();
}

std::string repeat_blocks(const std::string& block, std::size_t n) {
    std::string spec;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        spec += block;
        spec += ',';
    }
    spec += "head";
    return spec;
}

void apply(CliConfig& cfg, ParseTracker& seen, const std::string& key, const std::string& value,
           const std::string& origin) {
    if (key == "parent_spec") seen.saw_parent_spec = true;
    if (key == "child_spec") seen.saw_child_spec = true;
    if (apply_experiment_key(cfg.exp, key, value, origin)) return;
    if (key == "mode") {
        cfg.mode = parse_mode(origin, value);
        seen.saw_mode = true;
    } else if (key == "stages") {
        cfg.stages = parse_size(origin, key, value);
        if (cfg.stages < 2) bad_value(origin, key, "an integer >= 2", value);
    } else if (key == "parent_epochs") {
        cfg.parent_epochs = parse_size(origin, key, value);
    } else if (key == "eval_ckpt") {
        cfg.eval_ckpt = value;
    } else if (key == "compare_seeds") {
        cfg.compare_seeds = parse_size(origin, key, value);
        if (cfg.compare_seeds == 0) bad_value(origin, key, "an integer >= 1", value);
    } else if (key == "compare_methods") {
        cfg.compare_methods = value;
    } else if (key == "run_dirs") {
        cfg.run_dirs = split_list(value);
    } else {
        throw ConfigError(origin + ": unknown key '" + key + "'");
    }
}

/// Per-mode structural requirements beyond what the training layer
/// validates on its own.
void finalize(CliConfig& cfg, const ParseTracker& seen) {
    if (!seen.saw_mode) throw ConfigError("missing required key 'mode'");

    if (cfg.stages != 0) {
        // `stages` synthesizes default-width specs of the requested depth;
        // an explicit spec must already agree with it.
        if (!seen.saw_parent_spec) cfg.exp.parent_spec = repeat_blocks("mlp:64:512", cfg.stages);
        if (!seen.saw_child_spec) cfg.exp.child_spec = repeat_blocks("mlp:8:64", cfg.stages);
        if (block_count(cfg.exp.parent_spec) != cfg.stages) {
            throw ConfigError("stages=" + std::to_string(cfg.stages) +
                              " conflicts with parent_spec (" +
                              std::to_string(block_count(cfg.exp.parent_spec)) + " blocks)");
        }
        if (block_count(cfg.exp.child_spec) != cfg.stages) {
            throw ConfigError("stages=" + std::to_string(cfg.stages) +
                              " conflicts with child_spec (" +
                              std::to_string(block_count(cfg.exp.child_spec)) + " blocks)");
        }
    }

    switch (cfg.mode) {
        case CliMode::train_parent:
            cfg.exp.mode = train::RunMode::train_parent;
            train::validate_config(cfg.exp);
            break;
        case CliMode::train_solo:
            cfg.exp.mode = train::RunMode::train_solo;
            train::validate_config(cfg.exp);
            break;
        case CliMode::train_hkt:
            cfg.exp.mode = train::RunMode::train_hkt;
            train::validate_config(cfg.exp);
            break;
        case CliMode::train_kd:
            cfg.exp.mode = train::RunMode::train_kd;
            train::validate_config(cfg.exp);
            break;
        case CliMode::eval:
            if (cfg.eval_ckpt.empty()) throw ConfigError("mode eval requires eval_ckpt");
            train::validate_weights(cfg.exp.weights);
            break;
        case CliMode::grad_check:
            train::validate_weights(cfg.exp.weights);
            break;
        case CliMode::compare: {
            // Runs come later, but the config dies now if any would fail;
            // parent_ckpt stays optional because compare pre-trains one.
            cfg.exp.mode = train::RunMode::train_parent;
            train::validate_config(cfg.exp);
            const auto methods = split_list(cfg.compare_methods);
            if (methods.empty()) throw ConfigError("compare_methods must not be empty");
            for (const auto& m : methods) {
                if (m != "solo" && m != "kd" && m != "hkt") {
                    throw ConfigError("compare_methods: unknown method '" + m +
                                      "' (want solo | kd | hkt)");
                }
            }
            break;
        }
        case CliMode::report:
            if (cfg.run_dirs.empty()) throw ConfigError("mode report requires run_dirs");
            break;
    }
}

}  // namespace

bool apply_experiment_key(train::ExperimentConfig& e, const std::string& key,
                          const std::string& value, const std::string& origin) {
    if (key == "seed") {
        e.seed = parse_u64(origin, key, value);
    } else if (key == "data_seed") {
        e.data_seed = parse_u64(origin, key, value);
    } else if (key == "out") {
        e.out_dir = value;
    } else if (key == "dataset") {
        e.dataset = value;
    } else if (key == "n_per_class") {
        e.n_per_class = parse_size(origin, key, value);
    } else if (key == "classes") {
        e.classes = parse_size(origin, key, value);
    } else if (key == "noise") {
        e.noise = parse_double(origin, key, value);
    } else if (key == "patch_size") {
        e.patch_size = parse_size(origin, key, value);
    } else if (key == "cifar_dir") {
        e.cifar_dir = value;
    } else if (key == "train_fraction") {
        e.train_fraction = parse_double(origin, key, value);
    } else if (key == "parent_spec") {
        e.parent_spec = value;
    } else if (key == "child_spec") {
        e.child_spec = value;
    } else if (key == "parent_ckpt") {
        e.parent_ckpt = value;
    } else if (key == "epochs") {
        e.epochs = parse_size(origin, key, value);
    } else if (key == "batch_size") {
        e.batch_size = parse_size(origin, key, value);
    } else if (key == "lr") {
        e.lr = parse_double(origin, key, value);
    } else if (key == "momentum") {
        e.momentum = parse_double(origin, key, value);
    } else if (key == "lambda") {
        e.lambda = parse_double(origin, key, value);
    } else if (key == "alpha1") {
        e.weights.alpha1 = parse_double(origin, key, value);
    } else if (key == "alpha2") {
        e.weights.alpha2 = parse_double(origin, key, value);
    } else if (key == "alpha3") {
        e.weights.alpha3 = parse_double(origin, key, value);
    } else if (key == "alphas") {
        const auto parts = split_list(value);
        if (parts.size() != 3) bad_value(origin, key, "three comma-separated numbers", value);
        e.weights.alpha1 = parse_double(origin, key, parts[0]);
        e.weights.alpha2 = parse_double(origin, key, parts[1]);
        e.weights.alpha3 = parse_double(origin, key, parts[2]);
    } else if (key == "task") {
        e.task = parse_task(origin, value);
    } else if (key == "kd_temperature") {
        e.kd_temperature = parse_double(origin, key, value);
    } else if (key == "kd_mix") {
        e.kd_mix = parse_double(origin, key, value);
    } else if (key == "log_timing") {
        e.log_timing = parse_bool(origin, key, value);
    } else if (key == "emit_attention") {
        e.emit_attention = parse_bool(origin, key, value);
    } else {
        return false;
    }
    return true;
}

const char* cli_mode_name(CliMode mode) {
    switch (mode) {
        case CliMode::train_parent:
            return "train-parent";
        case CliMode::train_solo:
            return "train-solo";
        case CliMode::train_hkt:
            return "train-hkt";
        case CliMode::train_kd:
            return "train-kd";
        case CliMode::eval:
            return "eval";
        case CliMode::grad_check:
            return "grad-check";
        case CliMode::compare:
            return "compare";
        case CliMode::report:
            return "report";
    }
    return "?";
}

CliConfig parse_config(const std::optional<std::string>& path,
                       const std::vector<KeyValue>& overrides) {
    CliConfig cfg;
    ParseTracker seen;

    if (path.has_value()) {
        std::ifstream in(*path);
        if (!in) throw IoError("cannot open config file " + *path);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const std::size_t hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            const std::string origin = *path + ":" + std::to_string(lineno);
            const std::size_t eq = line.find('=');
            if (eq == std::string::npos) {
                throw ConfigError(origin + ": expected key=value, got '" + line + "'");
            }
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (key.empty()) throw ConfigError(origin + ": empty key");
            apply(cfg, seen, key, value, origin);
        }
    }

    // Flags land after the file, so an override always wins.
    for (const auto& kv : overrides) apply(cfg, seen, kv.key, kv.value, kv.origin);

    finalize(cfg, seen);
    return cfg;
}

}  // namespace hkt::cli
