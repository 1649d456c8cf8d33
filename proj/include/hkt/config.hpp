#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hkt/train.hpp"

namespace hkt::cli {

/// Everything the binary can do. The four train modes map 1:1 onto the
/// training loop; the rest are inspection and orchestration.
enum class CliMode {
    train_parent,
    train_solo,
    train_hkt,
    train_kd,
    eval,
    grad_check,
    compare,
    report
};

const char* cli_mode_name(CliMode mode);

struct CliConfig {
    CliMode mode = CliMode::train_solo;
    train::ExperimentConfig exp;

    std::string eval_ckpt;                     // eval: checkpoint to score
    std::size_t stages = 0;                    // synthesize specs when set
    std::size_t parent_epochs = 0;             // compare: 0 -> reuse epochs
    std::size_t compare_seeds = 5;             // compare: seeds per method
    std::string compare_methods = "solo,kd,hkt";
    std::vector<std::string> run_dirs;         // report: completed runs
};

/// One key=value assignment plus where it came from, for error messages
/// ("line 12" for files, the flag name for overrides).
struct KeyValue {
    std::string key;
    std::string value;
    std::string origin;
};

/// Reads a flat key=value config file ('#' comments, blank lines ok),
/// then applies the overrides on top — a flag always beats a file value.
/// Passing no path configures from overrides alone. Unknown keys, type
/// errors and constraint violations throw ConfigError naming the key and
/// its origin; `mode` is required.
CliConfig parse_config(const std::optional<std::string>& path,
                       const std::vector<KeyValue>& overrides);

/// Applies one experiment-level assignment (the key subset echoed into
/// run manifests, `mode` excluded). Returns false when the key is not an
/// experiment key. Shared by parse_config and the manifest reader.
bool apply_experiment_key(train::ExperimentConfig& exp, const std::string& key,
                          const std::string& value, const std::string& origin);

}  // namespace hkt::cli
