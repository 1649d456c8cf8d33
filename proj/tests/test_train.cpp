#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "hkt/checkpoint.hpp"
#include "hkt/data.hpp"
#include "hkt/errors.hpp"
#include "hkt/train.hpp"

using namespace hkt;
using namespace hkt::train;
namespace fs = std::filesystem;

namespace {

bool same_bits(double a, double b) {
    return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b);
}

nn::BlockNet toy_net(const char* name, const char* spec, std::vector<std::size_t> in_shape,
                     std::size_t classes, std::uint64_t seed, const char* stream) {
    Rng rng(derive_seed(seed, stream));
    return nn::build_net(name, std::move(in_shape), nn::parse_stage_specs(spec), classes, rng);
}

/// Frozen 2-stage parent + fresh child + fusion sites on 2-D data.
TrainState toy_hkt_state(double lambda, const LossWeights& w, double lr, std::uint64_t seed,
                         TaskLoss task = TaskLoss::cross_entropy) {
    nn::BlockNet parent = toy_net("parent", "linear:6,head", {3}, 2, seed, "parent-init");
    nn::BlockNet child = toy_net("child", "linear:4,head", {3}, 2, seed, "child-init");
    Rng adapter_rng(derive_seed(seed, "etm-init"));
    return make_hkt_state(std::move(parent), std::move(child), lambda, w, lr, 0.9, adapter_rng,
                          task);
}

data::Batch toy_batch(std::uint64_t seed, std::size_t n = 4) {
    Rng rng(derive_seed(seed, "batch"));
    auto x = zeros({n, 3});
    for (double& v : x->data) v = rng.uniform(-1.0, 1.0);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(rng.below(2));
    return data::Batch{x, labels};
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("validate_weights enforces both constraints") {
    CHECK_NOTHROW(validate_weights({0.25, 0.5, 0.25}));
    CHECK_NOTHROW(validate_weights({0.0, 1.0, 0.0}));
    CHECK_NOTHROW(validate_weights({1.0 / 3, 1.0 / 3, 1.0 / 3}));

    try {
        validate_weights({0.4, 0.2, 0.4});
        FAIL("expected rejection");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("max(alpha1, alpha3) <= alpha2") != std::string::npos);
    }
    try {
        validate_weights({0.3, 0.5, 0.3});
        FAIL("expected rejection");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("alpha1 + alpha2 + alpha3 = 1") != std::string::npos);
    }
    CHECK_THROWS_AS(validate_weights({-0.1, 1.0, 0.1}), ConfigError);
    CHECK_THROWS_AS(validate_weights({0.5, 0.0, 0.5}), ConfigError);
}

TEST_CASE("make_targets builds one-hot rows") {
    TargetBatch gt = make_targets({2, 0}, 3);
    CHECK(gt.dense->shape == std::vector<std::size_t>{2, 3});
    CHECK(gt.dense->data == std::vector<double>{0, 0, 1, 1, 0, 0});
    CHECK_THROWS_AS(make_targets({3}, 3), ValidationError);
    CHECK_THROWS_AS(make_targets({-1}, 3), ValidationError);
    CHECK_THROWS_AS(make_targets({}, 3), ValidationError);
}

TEST_CASE("combined_loss weights and degenerate selection") {
    StepOutputs outs;
    outs.L1 = scalar_tensor(2.0);
    outs.L2 = scalar_tensor(1.0);
    outs.L3 = scalar_tensor(4.0);

    CHECK(combined_loss(outs, {0.25, 0.5, 0.25})->item() == doctest::Approx(2.0).epsilon(1e-15));

    // zero weights select the lone remaining term: the very same tensor
    TensorPtr selected = combined_loss(outs, {0.0, 1.0, 0.0});
    CHECK(selected.get() == outs.L2.get());

    CHECK_THROWS_AS(combined_loss(outs, {0.4, 0.2, 0.4}), ConfigError);
    StepOutputs empty;
    CHECK_THROWS_AS(combined_loss(empty, {0.25, 0.5, 0.25}), UsageError);
}

TEST_CASE("hkt_forward degenerate forms") {
    SUBCASE("lambda=0 collapses to the native forwards") {
        TrainState st = toy_hkt_state(0.0, {0.25, 0.5, 0.25}, 0.1, 11, TaskLoss::mae);
        data::Batch batch = toy_batch(3);
        TargetBatch gt = make_targets(batch.labels, 2);
        StepOutputs outs = hkt_forward(st.parent, st.child, st.stages, batch.inputs, gt,
                                       TaskLoss::mae);
        CHECK(outs.z_star_n->data == st.child.native_forward(batch.inputs).back()->data);
        CHECK(outs.z_tilde_star_n->data == st.parent.native_forward(batch.inputs).back()->data);
        CHECK(same_bits(outs.L1->item(), outs.L2->item()));  // both MAE on the same values
    }
    SUBCASE("single stage means no fusion at all") {
        nn::BlockNet parent = toy_net("parent", "head", {3}, 2, 5, "parent-init");
        nn::BlockNet child = toy_net("child", "head", {3}, 2, 5, "child-init");
        parent.freeze();
        data::Batch batch = toy_batch(9);
        TargetBatch gt = make_targets(batch.labels, 2);
        StepOutputs outs = hkt_forward(parent, child, {}, batch.inputs, gt);
        CHECK(outs.z_star_n->data == child.native_forward(batch.inputs).back()->data);
        CHECK(outs.z_tilde_star_n->data == parent.native_forward(batch.inputs).back()->data);
    }
    SUBCASE("rejects unfrozen parent and stage mismatches") {
        TrainState st = toy_hkt_state(0.5, {0.25, 0.5, 0.25}, 0.1, 11);
        data::Batch batch = toy_batch(3);
        TargetBatch gt = make_targets(batch.labels, 2);
        nn::BlockNet loose = toy_net("parent", "linear:6,head", {3}, 2, 11, "parent-init");
        CHECK_THROWS_AS(hkt_forward(loose, st.child, st.stages, batch.inputs, gt), UsageError);
        CHECK_THROWS_AS(hkt_forward(st.parent, st.child, {}, batch.inputs, gt), DimensionError);
    }
}

TEST_CASE("combined gradient is the weighted sum of pathway gradients") {
    TrainState st = toy_hkt_state(0.7, {0.25, 0.5, 0.25}, 0.1, 21);
    data::Batch batch = toy_batch(13);
    TargetBatch gt = make_targets(batch.labels, 2);

    Tape tape;
    StepOutputs outs = hkt_forward(st.parent, st.child, st.stages, batch.inputs, gt);
    outs.L = combined_loss(outs, st.weights);

    auto sweep = [&](const TensorPtr& loss) {
        std::vector<std::vector<double>> grads;
        backward(loss);
        for (const TensorPtr& p : st.trainables) {
            p->ensure_grad();
            grads.push_back(p->grad);
            p->zero_grad();
        }
        return grads;
    };
    auto g1 = sweep(outs.L1);
    auto g2 = sweep(outs.L2);
    auto g3 = sweep(outs.L3);
    auto g = sweep(outs.L);

    double worst = 0.0;
    for (std::size_t p = 0; p < g.size(); ++p) {
        for (std::size_t i = 0; i < g[p].size(); ++i) {
            const double want = 0.25 * g1[p][i] + 0.5 * g2[p][i] + 0.25 * g3[p][i];
            worst = std::max(worst, std::abs(g[p][i] - want));
        }
    }
    CHECK(worst <= 1e-10);
}

TEST_CASE("grad_check passes through the full composite loss") {
    TrainState st = toy_hkt_state(0.6, {0.25, 0.5, 0.25}, 0.1, 31);
    data::Batch batch = toy_batch(17);
    TargetBatch gt = make_targets(batch.labels, 2);
    auto f = [&]() {
        StepOutputs outs = hkt_forward(st.parent, st.child, st.stages, batch.inputs, gt);
        return combined_loss(outs, st.weights);
    };
    CHECK(grad_check(f, st.trainables, 1e-5) < 1e-4);
}

TEST_CASE("train_step semantics") {
    SUBCASE("parent stays bitwise fixed; optimizer list excludes it") {
        TrainState st = toy_hkt_state(0.5, {0.25, 0.5, 0.25}, 0.1, 41);
        const auto before = st.parent.param_bytes();
        std::set<const Tensor*> parent_params;
        for (const TensorPtr& p : st.parent.parameters()) parent_params.insert(p.get());
        for (const TensorPtr& p : st.trainables) CHECK(parent_params.count(p.get()) == 0);

        data::Batch batch = toy_batch(43);
        for (int i = 0; i < 3; ++i) train_step(st, batch);
        CHECK(st.parent.param_bytes() == before);
        CHECK(st.step == 3);
    }
    SUBCASE("lr=0 reports losses without moving parameters") {
        TrainState st = toy_hkt_state(0.5, {0.25, 0.5, 0.25}, 0.0, 47);
        const auto before = st.child.param_bytes();
        StepOutputs outs = train_step(st, toy_batch(5));
        CHECK(outs.L->item() > 0.0);
        CHECK(st.child.param_bytes() == before);
    }
    SUBCASE("lambda=0 leaves adapters unreached yet steps fine") {
        TrainState st = toy_hkt_state(0.0, {0.0, 1.0, 0.0}, 0.1, 53);
        const auto adapters = etm::adapter_params(st.stages);
        std::vector<std::vector<double>> adapter_before;
        for (const auto& a : adapters) adapter_before.push_back(a->data);
        CHECK_NOTHROW(train_step(st, toy_batch(7)));
        for (std::size_t i = 0; i < adapters.size(); ++i) {
            CHECK(adapters[i]->data == adapter_before[i]);
        }
    }
}

TEST_CASE("lambda=0 with alpha=(0,1,0) steps bitwise like solo training") {
    const std::uint64_t seed = 7;
    data::Dataset ds = data::gen_spiral(40, 3, 0.2, 5);

    auto make_child = [&] {
        Rng rng(derive_seed(seed, "child-init"));
        return nn::build_net("child", {2}, nn::parse_stage_specs("mlp:4:8,head"), 3, rng);
    };
    TrainState solo = make_solo_state(make_child(), 0.1, 0.9);

    nn::BlockNet parent = toy_net("parent", "mlp:6:12,head", {2}, 3, seed, "parent-init");
    Rng adapter_rng(derive_seed(seed, "etm-init"));
    TrainState fused = make_hkt_state(std::move(parent), make_child(), 0.0, {0.0, 1.0, 0.0}, 0.1,
                                      0.9, adapter_rng);
    CHECK(solo.child.param_bytes() == fused.child.param_bytes());

    auto run = [&](TrainState& st, bool hkt) {
        std::vector<double> l2;
        for (std::size_t epoch = 1; epoch <= 3; ++epoch) {
            data::BatchIter batches(ds, 8, derive_seed(seed, "shuffle", epoch));
            while (auto batch = batches.next()) {
                StepOutputs outs = hkt ? train_step(st, *batch) : solo_step(st, *batch);
                l2.push_back(outs.L2->item());
            }
        }
        return l2;
    };
    auto solo_l2 = run(solo, false);
    auto fused_l2 = run(fused, true);
    REQUIRE(solo_l2.size() == fused_l2.size());
    for (std::size_t i = 0; i < solo_l2.size(); ++i) CHECK(same_bits(solo_l2[i], fused_l2[i]));
    CHECK(solo.child.param_bytes() == fused.child.param_bytes());
}

TEST_CASE("kd_step baselines") {
    const std::uint64_t seed = 61;
    data::Dataset ds = data::gen_spiral(30, 2, 0.2, 9);
    auto make_student = [&] {
        Rng rng(derive_seed(seed, "child-init"));
        return nn::build_net("child", {2}, nn::parse_stage_specs("mlp:4:8,head"), 2, rng);
    };

    SUBCASE("mix=1 reproduces the solo trajectory bit for bit") {
        TrainState solo = make_solo_state(make_student(), 0.1, 0.9);
        nn::BlockNet teacher = toy_net("parent", "mlp:6:12,head", {2}, 2, seed, "parent-init");
        TrainState kd = make_kd_state(std::move(teacher), make_student(), 0.1, 0.9);

        data::BatchIter a(ds, 8, derive_seed(seed, "shuffle", 1));
        data::BatchIter b(ds, 8, derive_seed(seed, "shuffle", 1));
        while (auto batch = a.next()) {
            auto other = b.next();
            StepOutputs s = solo_step(solo, *batch);
            StepOutputs k = kd_step(kd, *other, 2.0, 1.0);
            CHECK(same_bits(s.L->item(), k.L->item()));
        }
        CHECK(solo.child.param_bytes() == kd.child.param_bytes());
    }
    SUBCASE("self-distillation at temperature 1 has zero distillation term") {
        nn::BlockNet teacher = toy_net("net", "mlp:4:8,head", {2}, 2, 77, "child-init");
        nn::BlockNet student = toy_net("net", "mlp:4:8,head", {2}, 2, 77, "child-init");
        TrainState kd = make_kd_state(std::move(teacher), std::move(student), 0.1, 0.9);
        const auto before = kd.child.param_bytes();
        data::Batch batch{ds.inputs, ds.labels};
        StepOutputs outs = kd_step(kd, batch, 1.0, 0.0);
        CHECK(outs.L1->item() == 0.0);
        CHECK(outs.L->item() == 0.0);
        CHECK(kd.child.param_bytes() == before);  // zero gradient everywhere
    }
    SUBCASE("distillation gradient passes grad_check") {
        nn::BlockNet teacher = toy_net("parent", "mlp:6:12,head", {2}, 2, seed, "parent-init");
        TrainState kd = make_kd_state(std::move(teacher), make_student(), 0.1, 0.9);
        data::Batch batch = {ds.inputs, ds.labels};
        auto f = [&]() { return kd_losses(kd, batch, 2.0, 0.3).L; };
        CHECK(grad_check(f, kd.trainables, 1e-5) < 1e-4);
    }
}

TEST_CASE("export_child writes a standalone child checkpoint") {
    TrainState st = toy_hkt_state(0.5, {0.25, 0.5, 0.25}, 0.1, 71);
    fs::remove_all("./tl_export");
    fs::create_directories("./tl_export");
    export_child(st, 71, "./tl_export/child.hktc");
    auto [loaded, meta] = nn::load_checkpoint("./tl_export/child.hktc");
    CHECK(loaded.name == "child");
    CHECK(loaded.param_count() == st.child.param_count());
    CHECK(loaded.param_bytes() == st.child.param_bytes());
    CHECK(meta.seed == 71);
    fs::remove_all("./tl_export");
}

TEST_CASE("train_loop end to end") {
    ExperimentConfig base;
    base.dataset = "spiral";
    base.n_per_class = 30;
    base.classes = 2;
    base.noise = 0.15;
    base.seed = 13;
    base.batch_size = 16;
    base.lr = 0.1;

    SUBCASE("epochs=0 leaves only the initial validation") {
        ExperimentConfig cfg = base;
        cfg.mode = RunMode::train_solo;
        cfg.child_spec = "mlp:4:8,head";
        cfg.epochs = 0;
        cfg.out_dir = "./tl_e0";
        fs::remove_all(cfg.out_dir);
        TrainReport report = train_loop(cfg);
        CHECK(report.rows.size() == 1);
        CHECK(report.rows[0].step == 0);
        CHECK(report.final_native_acc == report.rows[0].val_acc_native);
        std::string csv = read_file(cfg.out_dir + "/metrics.csv");
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
        CHECK(fs::exists(cfg.out_dir + "/manifest.txt"));
        CHECK(fs::exists(cfg.out_dir + "/child_best.hktc"));
        CHECK(fs::exists(cfg.out_dir + "/child_final.hktc"));
        fs::remove_all(cfg.out_dir);
    }

    SUBCASE("identical config and seed give byte-identical metrics") {
        ExperimentConfig cfg = base;
        cfg.mode = RunMode::train_solo;
        cfg.child_spec = "mlp:4:8,head";
        cfg.epochs = 2;
        cfg.out_dir = "./tl_r1";
        fs::remove_all("./tl_r1");
        fs::remove_all("./tl_r2");
        train_loop(cfg);
        cfg.out_dir = "./tl_r2";
        train_loop(cfg);
        CHECK(read_file("./tl_r1/metrics.csv") == read_file("./tl_r2/metrics.csv"));

        // content hash ignores the output location
        auto hash_line = [](const std::string& text) {
            const auto pos = text.find("content_hash=");
            REQUIRE(pos != std::string::npos);
            return text.substr(pos, text.find('\n', pos) - pos);
        };
        CHECK(hash_line(read_file("./tl_r1/manifest.txt")) ==
              hash_line(read_file("./tl_r2/manifest.txt")));
        fs::remove_all("./tl_r1");
        fs::remove_all("./tl_r2");
    }

    SUBCASE("parent pre-training feeds a fusion run whose export reloads exactly") {
        ExperimentConfig pcfg = base;
        pcfg.mode = RunMode::train_parent;
        pcfg.parent_spec = "mlp:8:16,head";
        pcfg.epochs = 4;
        pcfg.out_dir = "./tl_p";
        fs::remove_all("./tl_p");
        TrainReport parent_report = train_loop(pcfg);
        CHECK(fs::exists("./tl_p/parent.hktc"));
        CHECK(parent_report.parent_hash_before.empty());

        ExperimentConfig hcfg = base;
        hcfg.mode = RunMode::train_hkt;
        hcfg.parent_spec = pcfg.parent_spec;
        hcfg.child_spec = "mlp:4:8,head";
        hcfg.parent_ckpt = "./tl_p/parent.hktc";
        hcfg.lambda = 0.5;
        hcfg.epochs = 2;
        hcfg.out_dir = "./tl_h";
        fs::remove_all("./tl_h");
        TrainReport report = train_loop(hcfg);

        CHECK(report.parent_hash_before == report.parent_hash_after);
        CHECK(!report.parent_hash_before.empty());
        // 48 train samples, batch 16 -> 3 steps per epoch, 2 epochs, + step-0 row
        CHECK(report.rows.size() == 7);
        CHECK(report.rows.back().step == 6);

        auto [child, meta] = nn::load_checkpoint("./tl_h/child_final.hktc");
        CHECK(child.param_count() == report.child_params);
        auto [train_split, val_split] = dataset_splits(hcfg);
        (void)train_split;
        CHECK(accuracy(child, val_split) == report.final_native_acc);
        CHECK(fs::file_size("./tl_h/child_final.hktc") < fs::file_size("./tl_p/parent.hktc"));

        SUBCASE("attention maps are emitted on demand") {
            ExperimentConfig acfg = hcfg;
            acfg.epochs = 0;
            acfg.emit_attention = true;
            acfg.out_dir = "./tl_att";
            fs::remove_all("./tl_att");
            train_loop(acfg);
            std::string alpha = read_file("./tl_att/attention_stage_1.csv");
            CHECK(std::count(alpha.begin(), alpha.end(), '\n') == 4);  // child stage width
            fs::remove_all("./tl_att");
        }

        SUBCASE("full-loop lambda=0 collapse matches solo per step") {
            ExperimentConfig scfg = base;
            scfg.mode = RunMode::train_solo;
            scfg.child_spec = "mlp:4:8,head";
            scfg.epochs = 2;
            scfg.out_dir = "./tl_s0";
            fs::remove_all("./tl_s0");
            TrainReport solo_report = train_loop(scfg);

            ExperimentConfig zcfg = hcfg;
            zcfg.lambda = 0.0;
            zcfg.weights = {0.0, 1.0, 0.0};
            zcfg.out_dir = "./tl_z0";
            fs::remove_all("./tl_z0");
            TrainReport fused_report = train_loop(zcfg);

            REQUIRE(solo_report.rows.size() == fused_report.rows.size());
            for (std::size_t i = 0; i < solo_report.rows.size(); ++i) {
                CHECK(same_bits(solo_report.rows[i].l2, fused_report.rows[i].l2));
                CHECK(same_bits(solo_report.rows[i].val_acc_native,
                                fused_report.rows[i].val_acc_native));
            }
            fs::remove_all("./tl_s0");
            fs::remove_all("./tl_z0");
        }

        fs::remove_all("./tl_p");
        fs::remove_all("./tl_h");
    }

    SUBCASE("config errors never leave partial outputs") {
        ExperimentConfig cfg = base;
        cfg.mode = RunMode::train_solo;
        cfg.weights = {0.4, 0.2, 0.4};
        cfg.out_dir = "./tl_bad";
        fs::remove_all("./tl_bad");
        CHECK_THROWS_AS(train_loop(cfg), ConfigError);
        CHECK(!fs::exists("./tl_bad"));

        cfg = base;
        cfg.mode = RunMode::train_hkt;
        cfg.out_dir = "./tl_bad";
        CHECK_THROWS_AS(train_loop(cfg), ConfigError);  // parent_ckpt missing entirely
        cfg.parent_ckpt = "./no_such_parent.hktc";
        CHECK_THROWS_AS(train_loop(cfg), IoError);
        CHECK(!fs::exists("./tl_bad"));

        cfg = base;
        cfg.dataset = "imagenet";
        CHECK_THROWS_AS(train_loop(cfg), ConfigError);
    }
}
