#include "hkt/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>

#include "hkt/checkpoint.hpp"
#include "hkt/errors.hpp"
#include "hkt/train.hpp"

namespace hkt::cli {

namespace {

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

// ---------------------------------------------------------------------
// report
// ---------------------------------------------------------------------

/// One completed run, as reconstructed from its directory.
struct RunRecord {
    std::string dir;
    std::string method;  // parent | solo | kd | hkt
    train::ExperimentConfig cfg;
    double final_native_acc = 0.0;
    std::size_t params = 0;
    std::string ckpt_path;
};

/// Reads a run manifest back into a record. Throws ConfigError/IoError
/// with the reason when the directory is not a completed run.
RunRecord read_run(const std::string& dir) {
    RunRecord rec;
    rec.dir = dir;
    const std::string manifest_path = dir + "/manifest.txt";
    std::ifstream in(manifest_path);
    if (!in) throw IoError("no manifest.txt");
    std::string line;
    if (!std::getline(in, line) || line != "run_manifest_v1") {
        throw IoError("manifest.txt is not a run_manifest_v1 file");
    }
    bool saw_mode = false;
    bool saw_acc = false;
    bool saw_params = false;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        const std::string origin = manifest_path + ":" + std::to_string(lineno);
        if (key == "mode") {
            if (value == "train-parent") rec.method = "parent";
            else if (value == "train-solo") rec.method = "solo";
            else if (value == "train-kd") rec.method = "kd";
            else if (value == "train-hkt") rec.method = "hkt";
            else throw ConfigError(origin + ": unknown mode '" + value + "'");
            saw_mode = true;
        } else if (key == "result_final_native_acc") {
            rec.final_native_acc = std::stod(value);
            saw_acc = true;
        } else if (key == "result_child_params") {
            rec.params = static_cast<std::size_t>(std::stoull(value));
            saw_params = true;
        } else if (key == "content_hash" || key.rfind("result_", 0) == 0) {
            // results not used by the table
        } else {
            apply_experiment_key(rec.cfg, key, value, origin);
        }
    }
    if (!saw_mode || !saw_acc || !saw_params) throw IoError("manifest.txt is incomplete");

    rec.ckpt_path = dir + (rec.method == "parent" ? "/parent.hktc" : "/child_final.hktc");
    if (!std::filesystem::exists(rec.ckpt_path)) {
        throw IoError("missing checkpoint " + rec.ckpt_path);
    }
    return rec;
}

/// Per-sample native inference time in microseconds: one timed pass over
/// the validation split, median of 5 repeats.
double time_inference_us(const nn::BlockNet& net, const data::Dataset& val) {
    std::vector<double> reps;
    reps.reserve(5);
    for (int r = 0; r < 5; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        net.native_forward(val.inputs);
        const auto t1 = std::chrono::steady_clock::now();
        reps.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count() /
                       static_cast<double>(val.size()));
    }
    std::sort(reps.begin(), reps.end());
    return reps[2];
}

struct MethodRow {
    std::string method;
    std::size_t runs = 0;
    double acc_mean = 0.0;
    double acc_std = 0.0;
    std::size_t params = 0;
    double us_per_sample = 0.0;
};

double mean_of(const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

double sample_std(const std::vector<double>& xs, double mean) {
    if (xs.size() < 2) return 0.0;
    double s = 0.0;
    for (double x : xs) s += (x - mean) * (x - mean);
    return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

}  // namespace

ReportTables report(const std::vector<std::string>& run_dirs, std::ostream& err) {
    std::vector<RunRecord> records;
    for (const std::string& dir : run_dirs) {
        try {
            records.push_back(read_run(dir));
        } catch (const Error& e) {
            err << "report: skipping " << dir << ": " << e.what() << "\n";
        }
    }
    if (records.empty()) throw ConfigError("report: no complete runs among the given directories");

    // Group by method, preserving first-appearance order.
    std::vector<std::string> order;
    std::map<std::string, std::vector<const RunRecord*>> groups;
    for (const RunRecord& rec : records) {
        if (groups.find(rec.method) == groups.end()) order.push_back(rec.method);
        groups[rec.method].push_back(&rec);
    }

    std::vector<MethodRow> rows;
    for (const std::string& method : order) {
        const auto& group = groups[method];
        MethodRow row;
        row.method = method;
        row.runs = group.size();
        std::vector<double> accs, times;
        for (const RunRecord* rec : group) {
            accs.push_back(rec->final_native_acc);
            const nn::BlockNet net = nn::load_checkpoint(rec->ckpt_path).first;
            const data::Dataset val_ds = train::dataset_splits(rec->cfg).second;
            times.push_back(time_inference_us(net, val_ds));
        }
        row.acc_mean = mean_of(accs);
        row.acc_std = sample_std(accs, row.acc_mean);
        row.params = group.front()->params;
        row.us_per_sample = mean_of(times);
        rows.push_back(row);
    }

    // Winners: best accuracy, fewest parameters, fastest inference.
    std::size_t best_acc = 0, best_params = 0, best_time = 0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].acc_mean > rows[best_acc].acc_mean) best_acc = i;
        if (rows[i].params < rows[best_params].params) best_params = i;
        if (rows[i].us_per_sample < rows[best_time].us_per_sample) best_time = i;
    }
    const bool flag_winners = rows.size() > 1;

    std::string md;
    md += "| method | runs | val_acc (mean ± std) | params | inference (µs/sample) |\n";
    md += "|---|---|---|---|---|\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const MethodRow& r = rows[i];
        auto cell = [&](std::string text, bool winner) {
            return (flag_winners && winner) ? "**" + text + "**" : text;
        };
        md += "| " + r.method + " | " + std::to_string(r.runs) + " | ";
        md += cell(fmt4(r.acc_mean) + " ± " + fmt4(r.acc_std), i == best_acc) + " | ";
        md += cell(std::to_string(r.params), i == best_params) + " | ";
        md += cell(fmt4(r.us_per_sample), i == best_time) + " |\n";
    }

    std::string csv;
    csv += "method,runs,val_acc_mean,val_acc_std,params,inference_us_per_sample\n";
    for (const MethodRow& r : rows) {
        csv += r.method + "," + std::to_string(r.runs) + "," + fmt17(r.acc_mean) + "," +
               fmt17(r.acc_std) + "," + std::to_string(r.params) + "," +
               fmt17(r.us_per_sample) + "\n";
    }
    return {md, csv};
}

namespace {

// ---------------------------------------------------------------------
// run
// ---------------------------------------------------------------------

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << text;
    if (!out) throw IoError("short write to " + path);
}

int run_train(const train::ExperimentConfig& exp, std::ostream& out) {
    const train::TrainReport r = train::train_loop(exp);
    out << train::run_mode_name(exp.mode) << ": " << r.rows.back().step << " steps, "
        << "best_native_acc=" << fmt4(r.best_native_acc)
        << " final_native_acc=" << fmt4(r.final_native_acc);
    if (exp.mode == train::RunMode::train_hkt) {
        out << " final_fused_acc=" << fmt4(r.final_fused_acc);
    }
    out << "\n";
    out << "wrote " << r.csv_path << "\n";
    out << "wrote " << r.manifest_path << "\n";
    out << "wrote " << r.best_ckpt_path << "\n";
    if (!r.final_ckpt_path.empty()) out << "wrote " << r.final_ckpt_path << "\n";
    return 0;
}

int run_eval(const CliConfig& cfg, std::ostream& out) {
    const auto [net, meta] = nn::load_checkpoint(cfg.eval_ckpt);
    const data::Dataset val_ds = train::dataset_splits(cfg.exp).second;
    const double acc = train::accuracy(net, val_ds);
    out << "checkpoint " << cfg.eval_ckpt << ": step=" << meta.step << " seed=" << meta.seed
        << " params=" << net.param_count() << "\n";
    out << "val_acc_native=" << fmt17(acc) << " (" << val_ds.size() << " samples, "
        << cfg.exp.dataset << ")\n";
    return 0;
}

/// Fixed 2-stage toy for the gradient oracle: conv parent and child on
/// 4x4 patches, one fusion boundary, all trainables checked against
/// central differences.
int run_grad_check(const CliConfig& cfg, std::ostream& out) {
    data::Dataset probe = data::gen_textured_patches(4, 4, 2, cfg.exp.seed);
    Rng parent_rng(derive_seed(cfg.exp.seed, "parent-init"));
    Rng child_rng(derive_seed(cfg.exp.seed, "child-init"));
    Rng adapter_rng(derive_seed(cfg.exp.seed, "etm-init"));
    nn::BlockNet parent = nn::build_net("parent", {3, 4, 4},
                                        nn::parse_stage_specs("conv:4,head"), 2, parent_rng);
    nn::BlockNet child = nn::build_net("child", {3, 4, 4},
                                       nn::parse_stage_specs("conv:2,head"), 2, child_rng);
    train::TrainState st =
        train::make_hkt_state(std::move(parent), std::move(child), cfg.exp.lambda,
                              cfg.exp.weights, 0.0, 0.0, adapter_rng, cfg.exp.task);

    std::size_t trainable = 0;
    for (const TensorPtr& p : st.trainables) trainable += p->size();

    const train::TargetBatch gt = train::make_targets(probe.labels, probe.class_count);
    auto f = [&]() {
        train::StepOutputs outs =
            train::hkt_forward(st.parent, st.child, st.stages, probe.inputs, gt, st.task);
        return train::combined_loss(outs, st.weights);
    };
    const double max_err = grad_check(f, st.trainables, 1e-5);
    out << "grad-check: " << trainable << " trainable values, max relative error = "
        << fmt17(max_err) << " (tolerance 1e-4)\n";
    return max_err < 1e-4 ? 0 : 1;
}

int run_compare(const CliConfig& cfg, std::ostream& out, std::ostream& err) {
    const std::string base = cfg.exp.out_dir;

    std::string parent_ckpt = cfg.exp.parent_ckpt;
    if (parent_ckpt.empty()) {
        train::ExperimentConfig pc = cfg.exp;
        pc.mode = train::RunMode::train_parent;
        pc.out_dir = base + "/parent";
        if (cfg.parent_epochs != 0) pc.epochs = cfg.parent_epochs;
        const train::TrainReport pr = train::train_loop(pc);
        parent_ckpt = pr.best_ckpt_path;
        out << "parent: best_native_acc=" << fmt4(pr.best_native_acc) << " ("
            << parent_ckpt << ")\n";
    }

    std::vector<std::string> methods;
    {
        std::string cur;
        for (char c : cfg.compare_methods + ",") {
            if (c == ',') {
                if (!cur.empty()) methods.push_back(cur);
                cur.clear();
            } else if (c != ' ') {
                cur += c;
            }
        }
    }

    std::vector<std::string> run_dirs;
    for (const std::string& method : methods) {
        for (std::size_t i = 0; i < cfg.compare_seeds; ++i) {
            train::ExperimentConfig rc = cfg.exp;
            rc.seed = cfg.exp.seed + i;
            rc.parent_ckpt = parent_ckpt;
            if (method == "solo") rc.mode = train::RunMode::train_solo;
            if (method == "kd") rc.mode = train::RunMode::train_kd;
            if (method == "hkt") rc.mode = train::RunMode::train_hkt;
            rc.out_dir = base + "/" + method + "_seed" + std::to_string(rc.seed);
            const train::TrainReport r = train::train_loop(rc);
            out << method << " seed=" << rc.seed
                << ": final_native_acc=" << fmt4(r.final_native_acc) << "\n";
            run_dirs.push_back(rc.out_dir);
        }
    }

    const ReportTables tables = report(run_dirs, err);
    write_text(base + "/compare.md", tables.markdown);
    write_text(base + "/compare.csv", tables.csv);
    out << "\n" << tables.markdown;
    out << "wrote " << base << "/compare.md and " << base << "/compare.csv\n";
    return 0;
}

int run_report(const CliConfig& cfg, std::ostream& out, std::ostream& err) {
    const ReportTables tables = report(cfg.run_dirs, err);
    std::filesystem::create_directories(cfg.exp.out_dir);
    write_text(cfg.exp.out_dir + "/compare.md", tables.markdown);
    write_text(cfg.exp.out_dir + "/compare.csv", tables.csv);
    out << tables.markdown;
    out << "wrote " << cfg.exp.out_dir << "/compare.md and " << cfg.exp.out_dir
        << "/compare.csv\n";
    return 0;
}

}  // namespace

int run(const CliConfig& cfg, std::ostream& out, std::ostream& err) {
    switch (cfg.mode) {
        case CliMode::train_parent:
        case CliMode::train_solo:
        case CliMode::train_hkt:
        case CliMode::train_kd:
            return run_train(cfg.exp, out);
        case CliMode::eval:
            return run_eval(cfg, out);
        case CliMode::grad_check:
            return run_grad_check(cfg, out);
        case CliMode::compare:
            return run_compare(cfg, out, err);
        case CliMode::report:
            return run_report(cfg, out, err);
    }
    return 1;
}

}  // namespace hkt::cli
