#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "hkt/config.hpp"
#include "hkt/errors.hpp"
#include "hkt/runner.hpp"
#include "hkt/train.hpp"

using namespace hkt;
using namespace hkt::cli;
namespace fs = std::filesystem;

namespace {

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    out << text;
}

std::string message_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.what();
    }
    return "";
}

bool contains(const std::string& haystack, const std::string& needle) {
    return haystack.find(needle) != std::string::npos;
}

KeyValue flag(const char* key, const std::string& value) {
    return {key, value, std::string("--") + key};
}

/// Smallest fast config that survives full validation.
std::vector<KeyValue> tiny_solo_flags(const std::string& out) {
    return {flag("mode", "train-solo"), flag("out", out),
            flag("n_per_class", "12"),  flag("noise", "0.3"),
            flag("epochs", "1"),        flag("batch_size", "8"),
            flag("child_spec", "mlp:4:8,head")};
}

}  // namespace

TEST_CASE("parse_config basics") {
    SUBCASE("mode is required and named when missing") {
        const std::string msg =
            message_of([] { parse_config(std::nullopt, {flag("seed", "7")}); });
        CHECK(contains(msg, "missing required key 'mode'"));
    }
    SUBCASE("defaults survive an empty override set") {
        CliConfig cfg = parse_config(std::nullopt, {flag("mode", "train-solo")});
        CHECK(cfg.mode == CliMode::train_solo);
        CHECK(cfg.exp.seed == 1);
        CHECK(cfg.exp.dataset == "spiral");
        CHECK(cfg.exp.epochs == 30);
        CHECK(cfg.exp.weights.alpha2 == 0.5);
        CHECK(cfg.compare_seeds == 5);
    }
    SUBCASE("unknown mode names the value") {
        const std::string msg =
            message_of([] { parse_config(std::nullopt, {flag("mode", "banana")}); });
        CHECK(contains(msg, "--mode"));
        CHECK(contains(msg, "banana"));
    }
    SUBCASE("type errors name key and origin") {
        const std::string msg = message_of(
            [] { parse_config(std::nullopt, {flag("mode", "train-solo"), flag("seed", "abc")}); });
        CHECK(contains(msg, "--seed"));
        CHECK(contains(msg, "'seed'"));
        CHECK(contains(msg, "unsigned integer"));
    }
    SUBCASE("unknown keys are rejected") {
        const std::string msg = message_of(
            [] { parse_config(std::nullopt, {flag("mode", "train-solo"), flag("lrr", "1")}); });
        CHECK(contains(msg, "unknown key 'lrr'"));
    }
    SUBCASE("alphas shorthand sets the full triple") {
        CliConfig cfg = parse_config(
            std::nullopt, {flag("mode", "train-solo"), flag("alphas", "0.3, 0.5, 0.2")});
        CHECK(cfg.exp.weights.alpha1 == 0.3);
        CHECK(cfg.exp.weights.alpha2 == 0.5);
        CHECK(cfg.exp.weights.alpha3 == 0.2);
    }
}

TEST_CASE("parse_config file handling") {
    const std::string path = "./cli_cfg.txt";
    SUBCASE("file values load; flags beat them") {
        write_file(path,
                   "# spiral experiment\n"
                   "mode = train-solo\n"
                   "lr = 0.1\n"
                   "\n"
                   "epochs = 3   # short run\n");
        CliConfig from_file = parse_config(path, {});
        CHECK(from_file.exp.lr == 0.1);
        CHECK(from_file.exp.epochs == 3);
        CliConfig overridden = parse_config(path, {flag("lr", "0.2")});
        CHECK(overridden.exp.lr == 0.2);
        CHECK(overridden.exp.epochs == 3);
    }
    SUBCASE("unknown key errors carry file and line") {
        write_file(path, "mode = train-solo\nbatch = 8\n");
        const std::string msg = message_of([&] { parse_config(path, {}); });
        CHECK(contains(msg, "cli_cfg.txt:2"));
        CHECK(contains(msg, "unknown key 'batch'"));
    }
    SUBCASE("lines without '=' are rejected with their line number") {
        write_file(path, "mode = train-solo\njust words\n");
        const std::string msg = message_of([&] { parse_config(path, {}); });
        CHECK(contains(msg, "cli_cfg.txt:2"));
        CHECK(contains(msg, "expected key=value"));
    }
    SUBCASE("weight constraint violations surface at parse time") {
        write_file(path, "mode = train-solo\nalpha1 = 0.4\nalpha2 = 0.2\nalpha3 = 0.4\n");
        const std::string msg = message_of([&] { parse_config(path, {}); });
        CHECK(contains(msg, "max(alpha1, alpha3) <= alpha2"));
        write_file(path, "mode = train-solo\nalpha1 = 0.4\nalpha2 = 0.4\nalpha3 = 0.4\n");
        const std::string sum_msg = message_of([&] { parse_config(path, {}); });
        CHECK(contains(sum_msg, "alpha1 + alpha2 + alpha3 = 1"));
    }
    SUBCASE("missing file is an io error") {
        CHECK_THROWS_AS(parse_config(std::string("./no_such_cfg.txt"), {}), IoError);
    }
    fs::remove(path);
}

TEST_CASE("parse_config mode requirements and stage synthesis") {
    SUBCASE("train-hkt without parent_ckpt is rejected") {
        const std::string msg =
            message_of([] { parse_config(std::nullopt, {flag("mode", "train-hkt")}); });
        CHECK(contains(msg, "parent_ckpt"));
    }
    SUBCASE("eval requires eval_ckpt; report requires run_dirs") {
        CHECK_THROWS_AS(parse_config(std::nullopt, {flag("mode", "eval")}), ConfigError);
        CHECK_THROWS_AS(parse_config(std::nullopt, {flag("mode", "report")}), ConfigError);
        CliConfig cfg = parse_config(
            std::nullopt, {flag("mode", "report"), flag("run_dirs", "./a, ./b")});
        CHECK(cfg.run_dirs == std::vector<std::string>{"./a", "./b"});
    }
    SUBCASE("stages synthesizes default-width specs") {
        CliConfig cfg =
            parse_config(std::nullopt, {flag("mode", "train-solo"), flag("stages", "4")});
        CHECK(cfg.exp.parent_spec == "mlp:64:512,mlp:64:512,mlp:64:512,head");
        CHECK(cfg.exp.child_spec == "mlp:8:64,mlp:8:64,mlp:8:64,head");
    }
    SUBCASE("stages conflicting with an explicit spec is rejected") {
        const std::string msg = message_of([] {
            parse_config(std::nullopt, {flag("mode", "train-solo"), flag("stages", "4"),
                                        flag("child_spec", "mlp:4:8,head")});
        });
        CHECK(contains(msg, "stages=4 conflicts with child_spec (2 blocks)"));
    }
    SUBCASE("compare validates its method list") {
        const std::string msg = message_of([] {
            parse_config(std::nullopt,
                         {flag("mode", "compare"), flag("compare_methods", "solo,magic")});
        });
        CHECK(contains(msg, "unknown method 'magic'"));
    }
}

TEST_CASE("grad-check mode reports a passing oracle") {
    CliConfig cfg = parse_config(std::nullopt, {flag("mode", "grad-check")});
    std::ostringstream out, err;
    CHECK(run(cfg, out, err) == 0);
    CHECK(contains(out.str(), "max relative error"));
    CHECK(err.str().empty());
}

TEST_CASE("eval mode reproduces the manifest accuracy from the exported child") {
    const std::string dir = "./cli_eval";
    fs::remove_all(dir);
    CliConfig tcfg = parse_config(std::nullopt, tiny_solo_flags(dir));
    train::TrainReport report = train::train_loop(tcfg.exp);

    CliConfig ecfg = parse_config(
        std::nullopt, {flag("mode", "eval"), flag("eval_ckpt", dir + "/child_final.hktc"),
                       flag("n_per_class", "12"), flag("noise", "0.3")});
    std::ostringstream out, err;
    CHECK(run(ecfg, out, err) == 0);
    char expect[64];
    std::snprintf(expect, sizeof expect, "val_acc_native=%.17g", report.final_native_acc);
    CHECK(contains(out.str(), expect));
    fs::remove_all(dir);
}

TEST_CASE("report aggregates manifests and skips incomplete directories") {
    const std::string dir = "./cli_report";
    fs::remove_all(dir);
    CliConfig tcfg = parse_config(std::nullopt, tiny_solo_flags(dir + "/solo_seed1"));
    train::train_loop(tcfg.exp);

    SUBCASE("single run gives a single-row table") {
        std::ostringstream err;
        ReportTables tables = report({dir + "/solo_seed1"}, err);
        CHECK(err.str().empty());
        CHECK(contains(tables.markdown, "| solo | 1 |"));
        CHECK(contains(tables.csv, "method,runs,val_acc_mean,val_acc_std,params,"
                                   "inference_us_per_sample"));
        // header + separator + one method row
        CHECK(std::count(tables.markdown.begin(), tables.markdown.end(), '\n') == 3);
    }
    SUBCASE("incomplete directory is skipped with a warning") {
        fs::create_directories(dir + "/broken");
        std::ostringstream err;
        ReportTables tables = report({dir + "/solo_seed1", dir + "/broken"}, err);
        CHECK(contains(err.str(), "skipping"));
        CHECK(contains(err.str(), "broken"));
        CHECK(contains(tables.markdown, "| solo | 1 |"));
    }
    SUBCASE("nothing valid is an error") {
        std::ostringstream err;
        CHECK_THROWS_AS(report({dir + "/missing"}, err), ConfigError);
    }
    fs::remove_all(dir);
}

TEST_CASE("compare mode runs methods end to end and writes the tables") {
    const std::string dir = "./cli_compare";
    fs::remove_all(dir);
    CliConfig cfg = parse_config(
        std::nullopt,
        {flag("mode", "compare"), flag("out", dir), flag("n_per_class", "12"),
         flag("noise", "0.3"), flag("epochs", "1"), flag("batch_size", "8"),
         flag("parent_spec", "mlp:8:16,head"), flag("child_spec", "mlp:4:8,head"),
         flag("parent_epochs", "2"), flag("compare_seeds", "2"),
         flag("compare_methods", "solo,hkt")});
    std::ostringstream out, err;
    CHECK(run(cfg, out, err) == 0);
    CHECK(err.str().empty());
    CHECK(fs::exists(dir + "/parent/parent.hktc"));
    CHECK(fs::exists(dir + "/solo_seed1/manifest.txt"));
    CHECK(fs::exists(dir + "/solo_seed2/manifest.txt"));
    CHECK(fs::exists(dir + "/hkt_seed1/manifest.txt"));
    CHECK(fs::exists(dir + "/hkt_seed2/manifest.txt"));
    CHECK(fs::exists(dir + "/compare.md"));
    CHECK(fs::exists(dir + "/compare.csv"));
    CHECK(contains(out.str(), "| solo | 2 |"));
    CHECK(contains(out.str(), "| hkt | 2 |"));
    fs::remove_all(dir);
}
