#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hkt/blocks.hpp"
#include "hkt/data.hpp"
#include "hkt/etm.hpp"
#include "hkt/ops.hpp"
#include "hkt/tensor.hpp"

namespace hkt::train {

/// Task-level loss applied to the child's native output.
enum class TaskLoss { cross_entropy, mae, mse };

/// Composite-loss weights for the inherited (L1), native (L2) and
/// parent-head (L3) pathways.
struct LossWeights {
    double alpha1 = 0.25;
    double alpha2 = 0.5;
    double alpha3 = 0.25;
};

/// Enforces alpha1 + alpha2 + alpha3 = 1 (within 1e-9) and
/// max(alpha1, alpha3) <= alpha2, each alpha in [0, 1].
void validate_weights(const LossWeights& w);

/// Ground truth for one batch: class ids plus their dense form (one-hot
/// rows), which the absolute-error pathways compare against directly.
struct TargetBatch {
    std::vector<int> labels;
    TensorPtr dense;
};

TargetBatch make_targets(const std::vector<int>& labels, std::size_t class_count);

/// Everything one fused forward produces: the enhanced child output
/// z_star_n, the pure native child output z_n, the parent-head output
/// z_tilde_star_n, and the loss scalars over them.
struct StepOutputs {
    TensorPtr z_star_n;
    TensorPtr z_n;
    TensorPtr z_tilde_star_n;
    TensorPtr L1;  // MAE(z_star_n, gt)
    TensorPtr L2;  // task loss on z_n
    TensorPtr L3;  // MAE(z_tilde_star_n, gt)
    TensorPtr L;   // combined, set by the caller via combined_loss
};

/// The interleaved n-stage routine. Starting from z~_1 = p_1(x) and
/// z_1 = c_1(x), each boundary i < n fuses both directions before the
/// next blocks run:
///
///   phi_p = z~_i + lambda * GA(tau_p(z_i), z~_i)
///   phi_c = z_i  + lambda * GA(tau_c(z~_i), z_i)
///   z_{i+1} = c_{i+1}(phi_c),  z~_{i+1} = p_{i+1}(phi_p)
///
/// z_n for L2 comes from a third, completely unfused child pass, so the
/// supervised function is the one that ships after export.
StepOutputs hkt_forward(const nn::BlockNet& parent, const nn::BlockNet& child,
                        const std::vector<etm::EtmStage>& stages, const TensorPtr& x,
                        const TargetBatch& gt, TaskLoss task = TaskLoss::cross_entropy);

/// alpha1*L1 + alpha2*L2 + alpha3*L3. Zero-weight terms are skipped
/// outright (not multiplied by 0), so a degenerate weighting like
/// (0, 1, 0) reproduces the single remaining term bit for bit.
TensorPtr combined_loss(const StepOutputs& outs, const LossWeights& w);

/// Child parameters followed by adapter parameters; never touches the
/// parent, so the optimizer cannot reach it by construction.
std::vector<TensorPtr> collect_trainables(const nn::BlockNet& child,
                                          const std::vector<etm::EtmStage>& stages);

/// Mutable state for one training run. `parent` has no blocks in solo
/// mode; `stages` is empty whenever no fusion happens.
struct TrainState {
    nn::BlockNet parent;
    nn::BlockNet child;
    std::vector<etm::EtmStage> stages;
    LossWeights weights;
    TaskLoss task = TaskLoss::cross_entropy;
    std::vector<TensorPtr> trainables;
    Sgd opt;
    std::uint64_t step = 0;
};

/// Assembles a fusion-training state: freezes the parent, builds one
/// fusion site per interior stage boundary, and hands child + adapter
/// parameters to the optimizer.
TrainState make_hkt_state(nn::BlockNet parent, nn::BlockNet child, double lambda,
                          const LossWeights& w, double lr, double momentum, Rng& adapter_rng,
                          TaskLoss task = TaskLoss::cross_entropy);

/// Plain supervised state (no parent, no fusion): loss is the task loss
/// on the net's own output. Used for the solo child and for pre-training
/// the parent.
TrainState make_solo_state(nn::BlockNet net, double lr, double momentum,
                           TaskLoss task = TaskLoss::cross_entropy);

/// Distillation state: frozen teacher in `parent`, trainable student in
/// `child`, no fusion sites.
TrainState make_kd_state(nn::BlockNet teacher, nn::BlockNet student, double lr, double momentum);

/// One fused forward, one backward, one optimizer step over child and
/// adapter parameters. The parent is bitwise untouched. Throws
/// TrainingError with the step index and loss values if the loss leaves
/// the finite range.
StepOutputs train_step(TrainState& st, const data::Batch& batch);

/// Supervised step for a solo state: task loss on the native output.
/// L1/L3 stay null; L2 == L.
StepOutputs solo_step(TrainState& st, const data::Batch& batch);

/// Distillation step: mix * CE(student, labels) +
/// (1 - mix) * MSE(softmax(student/T), softmax(teacher/T)). The teacher
/// contributes constants (frozen, untracked); zero-coefficient terms are
/// skipped, so mix=1 reproduces solo_step bit for bit. The distillation
/// term is reported through L1 for logging; L2 carries the CE term.
StepOutputs kd_step(TrainState& st, const data::Batch& batch, double temperature, double mix);

/// Forward-only half of kd_step: computes the loss terms, updates
/// nothing. kd_step is exactly kd_losses + backward + optimizer step.
StepOutputs kd_losses(const TrainState& st, const data::Batch& batch, double temperature,
                      double mix);

/// Fraction of samples whose native-output argmax matches the label.
double accuracy(const nn::BlockNet& net, const data::Dataset& ds);

/// Accuracy of the fused (z_star) path under the current adapters.
double fused_accuracy(const nn::BlockNet& parent, const nn::BlockNet& child,
                      const std::vector<etm::EtmStage>& stages, const data::Dataset& ds);

/// Writes a checkpoint holding only the child blocks: reloading it
/// supports native inference with no parent and no adapters.
void export_child(const TrainState& st, std::uint64_t seed, const std::string& path);

const char* task_loss_name(TaskLoss task);

enum class RunMode { train_parent, train_solo, train_hkt, train_kd };

const char* run_mode_name(RunMode mode);

/// Flat experiment description; the CLI fills it from key=value files
/// plus flag overrides. Field defaults are the default config.
struct ExperimentConfig {
    RunMode mode = RunMode::train_solo;
    std::uint64_t seed = 1;       // drives init and shuffle streams
    std::uint64_t data_seed = 1;  // drives generation and the split; kept
                                  // apart so seed sweeps share one dataset
    std::string out_dir = ".";

    std::string dataset = "spiral";  // spiral | patches | cifar
    std::size_t n_per_class = 500;
    std::size_t classes = 3;
    double noise = 0.25;
    std::size_t patch_size = 8;  // patches datasets only
    std::string cifar_dir;       // cifar only
    double train_fraction = 0.8;

    std::string parent_spec = "mlp:64:512,mlp:64:512,head";
    std::string child_spec = "mlp:8:64,mlp:8:64,head";
    std::string parent_ckpt;  // consumed by hkt / kd modes

    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    double lr = 0.05;
    double momentum = 0.9;

    double lambda = 0.5;
    LossWeights weights;
    TaskLoss task = TaskLoss::cross_entropy;

    double kd_temperature = 2.0;
    double kd_mix = 0.5;

    bool log_timing = false;      // wall_ms column stays 0 when off
    bool emit_attention = false;  // dump per-stage attention maps at end
};

/// One metrics-CSV row. Validation columns carry the latest completed
/// validation; losses are the current step's.
struct MetricsRow {
    std::uint64_t step = 0;
    std::size_t epoch = 0;
    double l1 = 0.0;
    double l2 = 0.0;
    double l3 = 0.0;
    double l = 0.0;
    double val_acc_native = 0.0;
    double val_acc_fused = 0.0;
    double wall_ms = 0.0;
};

struct TrainReport {
    std::vector<MetricsRow> rows;
    double best_native_acc = 0.0;
    double final_native_acc = 0.0;
    double final_fused_acc = 0.0;
    std::size_t child_params = 0;
    std::size_t parent_params = 0;
    std::string parent_hash_before;  // empty when no parent is loaded
    std::string parent_hash_after;
    std::string csv_path;
    std::string manifest_path;
    std::string best_ckpt_path;
    std::string final_ckpt_path;
};

/// Full fail-fast check of every field: weights, numeric ranges, dataset
/// name, and per-mode requirements. train_loop calls it first; the CLI
/// calls it at parse time so bad configs die before any computation.
void validate_config(const ExperimentConfig& cfg);

/// The (train, val) pair a config trains on, exactly as train_loop sees
/// it. Exposed so evaluation and reporting rebuild the same split.
std::pair<data::Dataset, data::Dataset> dataset_splits(const ExperimentConfig& cfg);

/// Runs the configured mode end to end: dataset, nets, epochs of steps
/// with per-epoch validation, metrics CSV, best/final checkpoints and a
/// run manifest, all under `out_dir`. (config, seed) fully determines
/// every byte written when log_timing is off.
TrainReport train_loop(const ExperimentConfig& cfg);

}  // namespace hkt::train
