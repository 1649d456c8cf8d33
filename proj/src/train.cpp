#include "hkt/train.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <utility>

#include "hkt/checkpoint.hpp"
#include "hkt/errors.hpp"
#include "hkt/sha256.hpp"

namespace hkt::train {

namespace {

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Sum of coefficient * term with zero coefficients skipped entirely and
/// a lone unit coefficient returning the term itself, so degenerate
/// weightings collapse to the bare term bit for bit.
TensorPtr weighted_terms(const std::vector<std::pair<double, TensorPtr>>& terms) {
    TensorPtr acc;
    for (const auto& [coeff, term] : terms) {
        if (coeff == 0.0) continue;
        TensorPtr piece = coeff == 1.0 ? term : scale(term, coeff);
        acc = acc == nullptr ? piece : add(acc, piece);
    }
    if (acc == nullptr) throw UsageError("weighted_terms: every coefficient is zero");
    return acc;
}

TensorPtr task_loss_tensor(TaskLoss task, const TensorPtr& pred, const TargetBatch& gt) {
    switch (task) {
        case TaskLoss::cross_entropy:
            return cross_entropy_loss(pred, gt.labels);
        case TaskLoss::mae:
            return mae_loss(pred, gt.dense);
        case TaskLoss::mse:
            return mse_loss(pred, gt.dense);
    }
    throw UsageError("task_loss_tensor: unhandled task");
}

/// The fused twin pass of Algorithm 1: both streams advance together,
/// exchanging residuals at every interior boundary. When `probes` is
/// given, probes[i-1] observes the attention of the parent->child fusion
/// at boundary i.
std::pair<TensorPtr, TensorPtr> fused_pass(const nn::BlockNet& parent, const nn::BlockNet& child,
                                           const std::vector<etm::EtmStage>& stages,
                                           const TensorPtr& x,
                                           const std::vector<etm::AttentionProbe>* probes) {
    const std::size_t n = parent.stage_count();
    TensorPtr zt = parent.stage_forward(1, x);
    TensorPtr z = child.stage_forward(1, x);
    for (std::size_t i = 1; i < n; ++i) {
        const etm::EtmStage& site = stages[i - 1];
        if (site.stage_index != i) {
            throw DimensionError("hkt_forward: fusion site " + std::to_string(i - 1) +
                                 " is labeled stage " + std::to_string(site.stage_index) +
                                 ", want " + std::to_string(i));
        }
        const etm::AttentionProbe* probe =
            probes != nullptr ? &(*probes)[i - 1] : nullptr;
        try {
            TensorPtr phi_p = etm::etm_fuse(site, z, zt, etm::FuseDirection::child_to_parent);
            TensorPtr phi_c = etm::etm_fuse(site, zt, z, etm::FuseDirection::parent_to_child, probe);
            z = child.stage_forward(i + 1, phi_c);
            zt = parent.stage_forward(i + 1, phi_p);
        } catch (const DimensionError& e) {
            throw DimensionError("stage " + std::to_string(i) + ": " + e.what());
        }
    }
    return {z, zt};
}

}  // namespace

void validate_weights(const LossWeights& w) {
    const double alphas[3] = {w.alpha1, w.alpha2, w.alpha3};
    for (int i = 0; i < 3; ++i) {
        if (!(alphas[i] >= 0.0 && alphas[i] <= 1.0)) {
            throw ConfigError("loss weights: alpha" + std::to_string(i + 1) + " = " +
                              fmt17(alphas[i]) + " lies outside [0, 1]");
        }
    }
    const double sum = w.alpha1 + w.alpha2 + w.alpha3;
    if (std::abs(sum - 1.0) > 1e-9) {
        throw ConfigError("loss weights must satisfy alpha1 + alpha2 + alpha3 = 1; got sum = " +
                          fmt17(sum));
    }
    if (std::max(w.alpha1, w.alpha3) > w.alpha2) {
        throw ConfigError(
            "loss weights must satisfy max(alpha1, alpha3) <= alpha2; got alpha1 = " +
            fmt17(w.alpha1) + ", alpha2 = " + fmt17(w.alpha2) + ", alpha3 = " + fmt17(w.alpha3));
    }
}

TargetBatch make_targets(const std::vector<int>& labels, std::size_t class_count) {
    if (class_count == 0) throw ValidationError("make_targets: class_count must be positive");
    if (labels.empty()) throw ValidationError("make_targets: empty label batch");
    TargetBatch gt;
    gt.labels = labels;
    gt.dense = zeros({labels.size(), class_count});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= class_count) {
            throw ValidationError("make_targets: label " + std::to_string(labels[i]) +
                                  " outside [0, " + std::to_string(class_count) + ")");
        }
        gt.dense->data[i * class_count + static_cast<std::size_t>(labels[i])] = 1.0;
    }
    return gt;
}

StepOutputs hkt_forward(const nn::BlockNet& parent, const nn::BlockNet& child,
                        const std::vector<etm::EtmStage>& stages, const TensorPtr& x,
                        const TargetBatch& gt, TaskLoss task) {
    if (!parent.frozen) throw UsageError("hkt_forward: parent must be frozen");
    const std::size_t n = parent.stage_count();
    if (n == 0 || child.stage_count() != n) {
        throw DimensionError("hkt_forward: parent has " + std::to_string(n) +
                             " stages, child has " + std::to_string(child.stage_count()));
    }
    if (stages.size() + 1 != n) {
        throw DimensionError("hkt_forward: want " + std::to_string(n - 1) +
                             " fusion stages for " + std::to_string(n) + " blocks, got " +
                             std::to_string(stages.size()));
    }

    StepOutputs outs;
    auto [z_star, z_tilde_star] = fused_pass(parent, child, stages, x, nullptr);
    outs.z_star_n = z_star;
    outs.z_tilde_star_n = z_tilde_star;
    outs.z_n = child.native_forward(x).back();
    outs.L1 = mae_loss(outs.z_star_n, gt.dense);
    outs.L2 = task_loss_tensor(task, outs.z_n, gt);
    outs.L3 = mae_loss(outs.z_tilde_star_n, gt.dense);
    return outs;
}

TensorPtr combined_loss(const StepOutputs& outs, const LossWeights& w) {
    validate_weights(w);
    if (outs.L1 == nullptr || outs.L2 == nullptr || outs.L3 == nullptr) {
        throw UsageError("combined_loss: outputs carry no loss terms");
    }
    return weighted_terms({{w.alpha1, outs.L1}, {w.alpha2, outs.L2}, {w.alpha3, outs.L3}});
}

std::vector<TensorPtr> collect_trainables(const nn::BlockNet& child,
                                          const std::vector<etm::EtmStage>& stages) {
    std::vector<TensorPtr> out = child.parameters();
    std::vector<TensorPtr> extra = etm::adapter_params(stages);
    out.insert(out.end(), extra.begin(), extra.end());
    return out;
}

TrainState make_hkt_state(nn::BlockNet parent, nn::BlockNet child, double lambda,
                          const LossWeights& w, double lr, double momentum, Rng& adapter_rng,
                          TaskLoss task) {
    validate_weights(w);
    parent.freeze();
    std::vector<etm::EtmStage> stages = etm::build_etm_stages(parent, child, lambda, adapter_rng);
    std::vector<TensorPtr> trainables = collect_trainables(child, stages);
    Sgd opt(trainables, lr, momentum);
    return TrainState{std::move(parent), std::move(child),     std::move(stages), w, task,
                      std::move(trainables), std::move(opt), 0};
}

TrainState make_solo_state(nn::BlockNet net, double lr, double momentum, TaskLoss task) {
    std::vector<TensorPtr> trainables = net.parameters();
    Sgd opt(trainables, lr, momentum);
    return TrainState{nn::BlockNet{}, std::move(net),       {}, LossWeights{}, task,
                      std::move(trainables), std::move(opt), 0};
}

TrainState make_kd_state(nn::BlockNet teacher, nn::BlockNet student, double lr, double momentum) {
    teacher.freeze();
    std::vector<TensorPtr> trainables = student.parameters();
    Sgd opt(trainables, lr, momentum);
    return TrainState{std::move(teacher), std::move(student),   {}, LossWeights{},
                      TaskLoss::cross_entropy,  std::move(trainables), std::move(opt), 0};
}

namespace {

/// Backward, gradient bookkeeping, and one optimizer step. Every
/// trainable gets a grad buffer first, so parameters a degenerate
/// configuration never reaches (lambda = 0 adapters) simply see zero.
void apply_update(TrainState& st, StepOutputs& outs) {
    const double value = outs.L->item();
    if (!std::isfinite(value)) {
        throw TrainingError("step " + std::to_string(st.step + 1) + ": non-finite loss " +
                            fmt17(value));
    }
    backward(outs.L);
    for (const TensorPtr& p : st.trainables) p->ensure_grad();
    st.opt.step();
    ++st.step;
}

StepOutputs hkt_losses(const TrainState& st, const data::Batch& batch, std::size_t class_count) {
    TargetBatch gt = make_targets(batch.labels, class_count);
    StepOutputs outs = hkt_forward(st.parent, st.child, st.stages, batch.inputs, gt, st.task);
    outs.L = combined_loss(outs, st.weights);
    return outs;
}

StepOutputs solo_losses(const TrainState& st, const data::Batch& batch, std::size_t class_count) {
    StepOutputs outs;
    outs.z_n = st.child.native_forward(batch.inputs).back();
    if (st.task == TaskLoss::cross_entropy) {
        TargetBatch gt;
        gt.labels = batch.labels;
        outs.L2 = task_loss_tensor(st.task, outs.z_n, gt);
    } else {
        outs.L2 = task_loss_tensor(st.task, outs.z_n, make_targets(batch.labels, class_count));
    }
    outs.L = outs.L2;
    return outs;
}

std::size_t head_classes(const nn::BlockNet& net) {
    if (net.blocks.empty()) throw UsageError("head_classes: net has no blocks");
    return net.blocks.back().out_shape.back();
}

}  // namespace

StepOutputs kd_losses(const TrainState& st, const data::Batch& batch, double temperature,
                      double mix) {
    if (!(temperature > 0.0)) throw ConfigError("kd temperature must be positive");
    if (!(mix >= 0.0 && mix <= 1.0)) throw ConfigError("kd mix must lie in [0, 1]");
    if (!st.parent.frozen) throw UsageError("kd_step: teacher must be frozen");
    StepOutputs outs;
    outs.z_n = st.child.native_forward(batch.inputs).back();
    outs.L2 = cross_entropy_loss(outs.z_n, batch.labels);
    std::vector<std::pair<double, TensorPtr>> terms{{mix, outs.L2}};
    if (mix != 1.0) {
        // the teacher contributes constants: frozen params track no grads
        TensorPtr teacher_logits = st.parent.native_forward(batch.inputs).back();
        TensorPtr soft_student = softmax_rows(scale(outs.z_n, 1.0 / temperature));
        TensorPtr soft_teacher = softmax_rows(scale(teacher_logits, 1.0 / temperature));
        outs.L1 = mse_loss(soft_student, soft_teacher);
        terms.push_back({1.0 - mix, outs.L1});
    }
    outs.L = weighted_terms(terms);
    return outs;
}

StepOutputs train_step(TrainState& st, const data::Batch& batch) {
    Tape tape;
    StepOutputs outs;
    try {
        outs = hkt_losses(st, batch, head_classes(st.child));
    } catch (const NumericError& e) {
        throw TrainingError("step " + std::to_string(st.step + 1) +
                            ": forward left the finite range (" + e.what() + ")");
    }
    apply_update(st, outs);
    return outs;
}

StepOutputs solo_step(TrainState& st, const data::Batch& batch) {
    Tape tape;
    StepOutputs outs;
    try {
        outs = solo_losses(st, batch, head_classes(st.child));
    } catch (const NumericError& e) {
        throw TrainingError("step " + std::to_string(st.step + 1) +
                            ": forward left the finite range (" + e.what() + ")");
    }
    apply_update(st, outs);
    return outs;
}

StepOutputs kd_step(TrainState& st, const data::Batch& batch, double temperature, double mix) {
    Tape tape;
    StepOutputs outs;
    try {
        outs = kd_losses(st, batch, temperature, mix);
    } catch (const NumericError& e) {
        throw TrainingError("step " + std::to_string(st.step + 1) +
                            ": forward left the finite range (" + e.what() + ")");
    }
    apply_update(st, outs);
    return outs;
}

namespace {

double argmax_accuracy(const TensorPtr& logits, const std::vector<int>& labels) {
    if (logits->shape.size() != 2 || logits->shape[0] != labels.size()) {
        throw DimensionError("accuracy: logits " + shape_str(logits->shape) + " do not match " +
                             std::to_string(labels.size()) + " labels");
    }
    const std::size_t k = logits->shape[1];
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < k; ++j) {
            if (logits->data[i * k + j] > logits->data[i * k + best]) best = j;
        }
        if (static_cast<int>(best) == labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

}  // namespace

double accuracy(const nn::BlockNet& net, const data::Dataset& ds) {
    return argmax_accuracy(net.native_forward(ds.inputs).back(), ds.labels);
}

double fused_accuracy(const nn::BlockNet& parent, const nn::BlockNet& child,
                      const std::vector<etm::EtmStage>& stages, const data::Dataset& ds) {
    auto [z_star, z_tilde_star] = fused_pass(parent, child, stages, ds.inputs, nullptr);
    (void)z_tilde_star;
    return argmax_accuracy(z_star, ds.labels);
}

void export_child(const TrainState& st, std::uint64_t seed, const std::string& path) {
    nn::CheckpointMeta meta;
    meta.step = st.step;
    meta.seed = seed;
    nn::save_checkpoint(st.child, meta, path);
}

const char* task_loss_name(TaskLoss task) {
    switch (task) {
        case TaskLoss::cross_entropy:
            return "ce";
        case TaskLoss::mae:
            return "mae";
        case TaskLoss::mse:
            return "mse";
    }
    return "?";
}

const char* run_mode_name(RunMode mode) {
    switch (mode) {
        case RunMode::train_parent:
            return "train-parent";
        case RunMode::train_solo:
            return "train-solo";
        case RunMode::train_hkt:
            return "train-hkt";
        case RunMode::train_kd:
            return "train-kd";
    }
    return "?";
}

void validate_config(const ExperimentConfig& cfg) {
    validate_weights(cfg.weights);
    if (cfg.batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (!(cfg.lr >= 0.0) || !std::isfinite(cfg.lr)) throw ConfigError("lr must be finite and >= 0");
    if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) {
        throw ConfigError("momentum must lie in [0, 1)");
    }
    if (!(cfg.lambda >= 0.0 && cfg.lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
    if (cfg.dataset != "spiral" && cfg.dataset != "patches" && cfg.dataset != "cifar") {
        throw ConfigError("unknown dataset '" + cfg.dataset + "' (want spiral | patches | cifar)");
    }
    if ((cfg.mode == RunMode::train_hkt || cfg.mode == RunMode::train_kd) &&
        cfg.parent_ckpt.empty()) {
        throw ConfigError(std::string("mode ") + run_mode_name(cfg.mode) +
                          " requires parent_ckpt");
    }
    if (!(cfg.kd_temperature > 0.0)) throw ConfigError("kd_temperature must be positive");
    if (!(cfg.kd_mix >= 0.0 && cfg.kd_mix <= 1.0)) throw ConfigError("kd_mix must lie in [0, 1]");
    if (cfg.out_dir.empty()) throw ConfigError("out directory must not be empty");
}

namespace {

std::string config_echo(const ExperimentConfig& c) {
    std::string s;
    auto kv = [&s](const char* key, const std::string& value) {
        s += key;
        s += '=';
        s += value;
        s += '\n';
    };
    kv("mode", run_mode_name(c.mode));
    kv("seed", std::to_string(c.seed));
    kv("data_seed", std::to_string(c.data_seed));
    kv("out", c.out_dir);
    kv("dataset", c.dataset);
    kv("n_per_class", std::to_string(c.n_per_class));
    kv("classes", std::to_string(c.classes));
    kv("noise", fmt17(c.noise));
    kv("patch_size", std::to_string(c.patch_size));
    kv("cifar_dir", c.cifar_dir);
    kv("train_fraction", fmt17(c.train_fraction));
    kv("parent_spec", c.parent_spec);
    kv("child_spec", c.child_spec);
    kv("parent_ckpt", c.parent_ckpt);
    kv("epochs", std::to_string(c.epochs));
    kv("batch_size", std::to_string(c.batch_size));
    kv("lr", fmt17(c.lr));
    kv("momentum", fmt17(c.momentum));
    kv("lambda", fmt17(c.lambda));
    kv("alpha1", fmt17(c.weights.alpha1));
    kv("alpha2", fmt17(c.weights.alpha2));
    kv("alpha3", fmt17(c.weights.alpha3));
    kv("task", task_loss_name(c.task));
    kv("kd_temperature", fmt17(c.kd_temperature));
    kv("kd_mix", fmt17(c.kd_mix));
    kv("log_timing", c.log_timing ? "1" : "0");
    kv("emit_attention", c.emit_attention ? "1" : "0");
    return s;
}

void hash_doubles(Sha256& h, const std::vector<double>& values) {
    for (double v : values) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        std::uint8_t b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(bits >> (8 * i));
        h.update(b, sizeof b);
    }
}

void hash_labels(Sha256& h, const std::vector<int>& labels) {
    for (int v : labels) {
        const auto bits = static_cast<std::uint32_t>(v);
        std::uint8_t b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<std::uint8_t>(bits >> (8 * i));
        h.update(b, sizeof b);
    }
}

std::string hex_of(const std::array<std::uint8_t, 32>& d) {
    static const char* kHex = "0123456789abcdef";
    std::string out(64, '0');
    for (std::size_t i = 0; i < 32; ++i) {
        out[2 * i] = kHex[d[i] >> 4];
        out[2 * i + 1] = kHex[d[i] & 0xf];
    }
    return out;
}

std::vector<std::size_t> sample_shape(const data::Dataset& ds) {
    return {ds.inputs->shape.begin() + 1, ds.inputs->shape.end()};
}

void write_attention_maps(const TrainState& st, const data::Dataset& val,
                          const std::string& out_dir) {
    if (val.size() == 0 || st.stages.empty()) return;
    data::Dataset probe_set = data::dataset_subset(val, {0}, "probe");
    std::vector<etm::AttentionProbe> probes(st.stages.size());
    std::vector<TensorPtr> alphas(st.stages.size());
    for (std::size_t i = 0; i < probes.size(); ++i) {
        probes[i].on_alpha = [&alphas, i](const TensorPtr& alpha) {
            if (alphas[i] == nullptr) alphas[i] = alpha;
        };
    }
    fused_pass(st.parent, st.child, st.stages, probe_set.inputs, &probes);
    for (std::size_t i = 0; i < alphas.size(); ++i) {
        if (alphas[i] == nullptr) continue;  // lambda = 0 short-circuits past attention
        const std::string path =
            out_dir + "/attention_stage_" + std::to_string(i + 1) + ".csv";
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw IoError("cannot open " + path + " for writing");
        const std::size_t p = alphas[i]->shape[0];
        for (std::size_t r = 0; r < p; ++r) {
            for (std::size_t c = 0; c < alphas[i]->shape[1]; ++c) {
                if (c > 0) out << ",";
                out << fmt17(alphas[i]->data[r * alphas[i]->shape[1] + c]);
            }
            out << "\n";
        }
    }
}

}  // namespace

std::pair<data::Dataset, data::Dataset> dataset_splits(const ExperimentConfig& cfg) {
    if (cfg.dataset == "spiral") {
        data::Dataset full =
            data::gen_spiral(cfg.n_per_class, cfg.classes, cfg.noise, cfg.data_seed);
        return data::split_dataset(full, cfg.train_fraction, cfg.data_seed);
    }
    if (cfg.dataset == "patches") {
        data::Dataset full = data::gen_textured_patches(
            cfg.n_per_class * cfg.classes, cfg.patch_size, cfg.classes, cfg.data_seed);
        return data::split_dataset(full, cfg.train_fraction, cfg.data_seed);
    }
    if (cfg.dataset == "cifar") return data::load_cifar10_binary(cfg.cifar_dir);
    throw ConfigError("unknown dataset '" + cfg.dataset + "' (want spiral | patches | cifar)");
}

TrainReport train_loop(const ExperimentConfig& cfg) {
    validate_config(cfg);

    auto [train_ds, val_ds] = dataset_splits(cfg);
    const std::size_t class_count = train_ds.class_count;

    // --- nets and state (all RNG streams derived per purpose) ---
    std::vector<std::uint8_t> parent_file_bytes;
    TrainState st = [&]() -> TrainState {
        switch (cfg.mode) {
            case RunMode::train_parent: {
                Rng rng(derive_seed(cfg.seed, "parent-init"));
                nn::BlockNet net = nn::build_net("parent", sample_shape(train_ds),
                                                 nn::parse_stage_specs(cfg.parent_spec),
                                                 class_count, rng);
                return make_solo_state(std::move(net), cfg.lr, cfg.momentum, cfg.task);
            }
            case RunMode::train_solo: {
                Rng rng(derive_seed(cfg.seed, "child-init"));
                nn::BlockNet net = nn::build_net("child", sample_shape(train_ds),
                                                 nn::parse_stage_specs(cfg.child_spec),
                                                 class_count, rng);
                return make_solo_state(std::move(net), cfg.lr, cfg.momentum, cfg.task);
            }
            case RunMode::train_hkt: {
                auto [parent, meta] = nn::load_checkpoint(cfg.parent_ckpt);
                Rng child_rng(derive_seed(cfg.seed, "child-init"));
                nn::BlockNet child = nn::build_net("child", sample_shape(train_ds),
                                                   nn::parse_stage_specs(cfg.child_spec),
                                                   class_count, child_rng);
                Rng adapter_rng(derive_seed(cfg.seed, "etm-init"));
                return make_hkt_state(std::move(parent), std::move(child), cfg.lambda,
                                      cfg.weights, cfg.lr, cfg.momentum, adapter_rng, cfg.task);
            }
            case RunMode::train_kd: {
                auto [teacher, meta] = nn::load_checkpoint(cfg.parent_ckpt);
                Rng child_rng(derive_seed(cfg.seed, "child-init"));
                nn::BlockNet child = nn::build_net("child", sample_shape(train_ds),
                                                   nn::parse_stage_specs(cfg.child_spec),
                                                   class_count, child_rng);
                return make_kd_state(std::move(teacher), std::move(child), cfg.lr, cfg.momentum);
            }
        }
        throw ConfigError("unhandled mode");
    }();

    const bool has_parent = !st.parent.blocks.empty();
    if (has_parent) {
        if (st.parent.blocks.front().in_shape != sample_shape(train_ds)) {
            throw ConfigError("parent checkpoint expects input shape " +
                              shape_str(st.parent.blocks.front().in_shape) +
                              " but the dataset provides " + shape_str(sample_shape(train_ds)));
        }
        if (head_classes(st.parent) != class_count) {
            throw ConfigError("parent checkpoint predicts " +
                              std::to_string(head_classes(st.parent)) + " classes, dataset has " +
                              std::to_string(class_count));
        }
    }
    if (head_classes(st.child) != class_count) {
        throw ConfigError("net predicts " + std::to_string(head_classes(st.child)) +
                          " classes, dataset has " + std::to_string(class_count));
    }

    TrainReport report;
    report.child_params = st.child.param_count();
    report.parent_params = has_parent ? st.parent.param_count() : 0;
    if (has_parent) report.parent_hash_before = sha256_hex(st.parent.param_bytes());
    if (!cfg.parent_ckpt.empty()) {
        std::ifstream in(cfg.parent_ckpt, std::ios::binary);
        parent_file_bytes.assign((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
    }

    // --- output directory; nothing is written before this point ---
    std::filesystem::create_directories(cfg.out_dir);
    const bool child_mode = cfg.mode != RunMode::train_parent;
    report.csv_path = cfg.out_dir + "/metrics.csv";
    report.manifest_path = cfg.out_dir + "/manifest.txt";
    report.best_ckpt_path =
        cfg.out_dir + (child_mode ? "/child_best.hktc" : "/parent.hktc");
    if (child_mode) report.final_ckpt_path = cfg.out_dir + "/child_final.hktc";

    std::ofstream csv(report.csv_path, std::ios::trunc);
    if (!csv) throw IoError("cannot open " + report.csv_path + " for writing");
    csv << "step,epoch,L1,L2,L3,L_HKT,val_acc_native,val_acc_fused,wall_ms\n";

    auto emit_row = [&csv, &report](const MetricsRow& row) {
        report.rows.push_back(row);
        csv << row.step << "," << row.epoch << "," << fmt17(row.l1) << "," << fmt17(row.l2) << ","
            << fmt17(row.l3) << "," << fmt17(row.l) << "," << fmt17(row.val_acc_native) << ","
            << fmt17(row.val_acc_fused) << "," << fmt17(row.wall_ms) << "\n";
    };

    double val_native = 0.0;
    double val_fused = 0.0;
    auto validate_now = [&]() {
        val_native = accuracy(st.child, val_ds);
        val_fused = cfg.mode == RunMode::train_hkt
                        ? fused_accuracy(st.parent, st.child, st.stages, val_ds)
                        : val_native;
    };
    auto save_best = [&]() {
        if (child_mode) {
            export_child(st, cfg.seed, report.best_ckpt_path);
        } else {
            nn::CheckpointMeta meta;
            meta.step = st.step;
            meta.seed = cfg.seed;
            nn::save_checkpoint(st.child, meta, report.best_ckpt_path);
        }
    };

    validate_now();
    report.best_native_acc = val_native;
    save_best();

    // step-0 row: losses at initialization over the whole training set
    const data::Batch full_train{train_ds.inputs, train_ds.labels};
    auto losses_of = [&](const data::Batch& batch) -> StepOutputs {
        switch (cfg.mode) {
            case RunMode::train_hkt:
                return hkt_losses(st, batch, class_count);
            case RunMode::train_kd:
                return kd_losses(st, batch, cfg.kd_temperature, cfg.kd_mix);
            default:
                return solo_losses(st, batch, class_count);
        }
    };
    {
        StepOutputs init = losses_of(full_train);
        auto v = [](const TensorPtr& t) { return t == nullptr ? 0.0 : t->item(); };
        emit_row({0, 0, v(init.L1), v(init.L2), v(init.L3), v(init.L), val_native, val_fused, 0.0});
    }

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        data::BatchIter batches(train_ds, cfg.batch_size,
                                derive_seed(cfg.seed, "shuffle", epoch));
        while (auto batch = batches.next()) {
            const auto t0 = std::chrono::steady_clock::now();
            StepOutputs outs;
            switch (cfg.mode) {
                case RunMode::train_hkt:
                    outs = train_step(st, *batch);
                    break;
                case RunMode::train_kd:
                    outs = kd_step(st, *batch, cfg.kd_temperature, cfg.kd_mix);
                    break;
                default:
                    outs = solo_step(st, *batch);
                    break;
            }
            double wall_ms = 0.0;
            if (cfg.log_timing) {
                wall_ms = std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - t0)
                              .count();
            }
            auto v = [](const TensorPtr& t) { return t == nullptr ? 0.0 : t->item(); };
            emit_row({st.step, epoch, v(outs.L1), v(outs.L2), v(outs.L3), v(outs.L), val_native,
                      val_fused, wall_ms});
        }
        validate_now();
        if (val_native > report.best_native_acc) {
            report.best_native_acc = val_native;
            save_best();
        }
    }
    report.final_native_acc = val_native;
    report.final_fused_acc = val_fused;
    if (!csv) throw IoError("short write to " + report.csv_path);
    csv.close();

    if (child_mode) export_child(st, cfg.seed, report.final_ckpt_path);
    if (cfg.emit_attention && cfg.mode == RunMode::train_hkt) {
        write_attention_maps(st, val_ds, cfg.out_dir);
    }
    if (has_parent) report.parent_hash_after = sha256_hex(st.parent.param_bytes());

    // --- run manifest: config echo + content hash of the run's inputs ---
    {
        Sha256 h;
        ExperimentConfig hashed = cfg;
        hashed.out_dir.clear();  // the output location is not an input
        const std::string echo = config_echo(hashed);
        h.update(echo.data(), echo.size());
        hash_doubles(h, train_ds.inputs->data);
        hash_labels(h, train_ds.labels);
        hash_doubles(h, val_ds.inputs->data);
        hash_labels(h, val_ds.labels);
        if (!parent_file_bytes.empty()) {
            h.update(parent_file_bytes.data(), parent_file_bytes.size());
        }
        std::ofstream manifest(report.manifest_path, std::ios::trunc);
        if (!manifest) throw IoError("cannot open " + report.manifest_path + " for writing");
        manifest << "run_manifest_v1\n" << config_echo(cfg);
        manifest << "content_hash=" << hex_of(h.digest()) << "\n";
        manifest << "result_steps=" << st.step << "\n";
        manifest << "result_best_native_acc=" << fmt17(report.best_native_acc) << "\n";
        manifest << "result_final_native_acc=" << fmt17(report.final_native_acc) << "\n";
        manifest << "result_final_fused_acc=" << fmt17(report.final_fused_acc) << "\n";
        manifest << "result_child_params=" << report.child_params << "\n";
        manifest << "result_parent_params=" << report.parent_params << "\n";
        if (has_parent) {
            manifest << "result_parent_hash_before=" << report.parent_hash_before << "\n";
            manifest << "result_parent_hash_after=" << report.parent_hash_after << "\n";
        }
        if (!manifest) throw IoError("short write to " + report.manifest_path);
    }
    return report;
}

}  // namespace hkt::train
