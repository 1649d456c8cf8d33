#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "hkt/config.hpp"

namespace hkt::cli {

/// The method-comparison table in both output formats.
struct ReportTables {
    std::string markdown;
    std::string csv;
};

/// Aggregates completed run directories into one row per method: mean
/// and sample std of final native validation accuracy, parameter count,
/// and per-sample inference time (median of 5 timed native passes over
/// the run's own validation split). Directories without a complete
/// manifest + checkpoint are skipped with a warning on `err`.
ReportTables report(const std::vector<std::string>& run_dirs, std::ostream& err);

/// Executes the configured mode end to end, writing progress to `out`
/// and warnings to `err`. Returns the process exit code: 0 on success,
/// 1 when grad-check exceeds its tolerance. Failures throw.
int run(const CliConfig& cfg, std::ostream& out, std::ostream& err);

}  // namespace hkt::cli
