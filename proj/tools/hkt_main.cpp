#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hkt/errors.hpp"
#include "hkt/runner.hpp"

// Batch front-end: every config key is mirrored by a flag (dashes for
// underscores), and a flag always overrides the config-file value.
int main(int argc, char** argv) {
    CLI::App app{"Hereditary knowledge transfer: training, evaluation and comparison runner"};

    std::string config_path;
    app.add_option("--config", config_path, "flat key=value config file");

    struct StringOpt {
        const char* key;
        const char* help;
        std::string value;
        CLI::Option* opt = nullptr;
    };
    std::vector<StringOpt> opts = {
        {"mode", "train-parent | train-solo | train-hkt | train-kd | eval | grad-check | "
                 "compare | report", {}, nullptr},
        {"seed", "init/shuffle seed", {}, nullptr},
        {"data_seed", "dataset generation/split seed", {}, nullptr},
        {"out", "output directory", {}, nullptr},
        {"dataset", "spiral | patches | cifar", {}, nullptr},
        {"n_per_class", "samples per class (synthetic data)", {}, nullptr},
        {"classes", "class count (synthetic data)", {}, nullptr},
        {"noise", "spiral noise std", {}, nullptr},
        {"patch_size", "patches side length", {}, nullptr},
        {"cifar_dir", "directory with CIFAR-10 binary batches", {}, nullptr},
        {"train_fraction", "train share of the split", {}, nullptr},
        {"parent_spec", "parent net spec, e.g. mlp:64:512,mlp:64:512,head", {}, nullptr},
        {"child_spec", "child net spec", {}, nullptr},
        {"parent_ckpt", "frozen parent checkpoint (train-hkt / train-kd)", {}, nullptr},
        {"epochs", "training epochs", {}, nullptr},
        {"batch_size", "batch size", {}, nullptr},
        {"lr", "learning rate", {}, nullptr},
        {"momentum", "SGD momentum", {}, nullptr},
        {"lambda", "GA mixing coefficient in [0, 1]", {}, nullptr},
        {"alpha1", "inherited-pathway loss weight", {}, nullptr},
        {"alpha2", "native-pathway loss weight", {}, nullptr},
        {"alpha3", "parent-head loss weight", {}, nullptr},
        {"alphas", "all three loss weights, comma-separated", {}, nullptr},
        {"task", "task loss: ce | mae | mse", {}, nullptr},
        {"kd_temperature", "distillation temperature", {}, nullptr},
        {"kd_mix", "distillation CE share in [0, 1]", {}, nullptr},
        {"stages", "stage count; synthesizes default specs of that depth", {}, nullptr},
        {"parent_epochs", "compare: epochs for the parent pre-run", {}, nullptr},
        {"eval_ckpt", "eval: checkpoint to score", {}, nullptr},
        {"compare_seeds", "compare: seeds per method", {}, nullptr},
        {"compare_methods", "compare: comma list from solo | kd | hkt", {}, nullptr},
        {"run_dirs", "report: comma list of completed run directories", {}, nullptr},
    };
    for (StringOpt& o : opts) {
        std::string flag = "--" + std::string(o.key);
        for (char& c : flag) {
            if (c == '_') c = '-';
        }
        o.opt = app.add_option(flag, o.value, o.help);
    }

    bool log_timing = false;
    bool emit_attention = false;
    CLI::Option* log_timing_opt =
        app.add_flag("--log-timing", log_timing, "fill the wall_ms metrics column");
    CLI::Option* emit_attention_opt =
        app.add_flag("--emit-attention", emit_attention, "dump per-stage attention maps");

    CLI11_PARSE(app, argc, argv);

    std::vector<hkt::cli::KeyValue> overrides;
    for (const StringOpt& o : opts) {
        if (o.opt->count() > 0) {
            overrides.push_back({o.key, o.value, o.opt->get_name()});
        }
    }
    if (log_timing_opt->count() > 0) overrides.push_back({"log_timing", "1", "--log-timing"});
    if (emit_attention_opt->count() > 0) {
        overrides.push_back({"emit_attention", "1", "--emit-attention"});
    }

    try {
        const std::optional<std::string> path =
            config_path.empty() ? std::nullopt : std::optional<std::string>(config_path);
        const hkt::cli::CliConfig cfg = hkt::cli::parse_config(path, overrides);
        return hkt::cli::run(cfg, std::cout, std::cerr);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
