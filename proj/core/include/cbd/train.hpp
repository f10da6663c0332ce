#pragma once

#include "cbd/dataset.hpp"
#include "cbd/eval.hpp"
#include "cbd/losses.hpp"
#include "cbd/model.hpp"
#include "cbd/sampling.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cbd {

/// lr0 * 0.5 * (1 + cos(pi * step / total_steps)): decays from lr0 to 0.
double cosine_lr(std::size_t step, std::size_t total_steps, double lr0);

/// SGD with momentum: velocity <- momentum * velocity + grad;
/// param <- param - lr * velocity.
class SgdOptimizer {
public:
    SgdOptimizer(std::vector<Tensor> params, double momentum);

    void zero_grad();
    void step(double lr);
    const std::vector<Tensor>& params() const { return params_; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> velocity_;
    double momentum_;
};

struct TrainConfig {
    std::size_t epochs = 100;
    std::size_t batch_size = 64;
    double lr0 = 0.2;
    double momentum = 0.9;
    std::uint64_t seed = 1;
    SamplingKind sampling = SamplingKind::instance;
    DistillConfig distill{};
    /// > 0 adds Gaussian noise to training inputs (the data-augmentation
    /// teacher pipeline). Teachers always consume the clean inputs.
    double augment_sigma = 0.0;

    void validate() const;
};

struct EpochStats {
    double mean_train_loss = 0.0;
    double test_accuracy = 0.0;
};
using History = std::vector<EpochStats>;

/// Runs epochs * ceil(n / batch_size) SGD steps with the cosine schedule.
/// Deterministic under (config, seed). Throws numeric_abort with step/lr/term
/// diagnostics if the loss goes non-finite. Teachers are frozen stage-1
/// models backing the distillation modes; they see the un-augmented batch.
History train_single_stage(Model& model, const Dataset& train, const Dataset& test,
                           const TrainConfig& cfg,
                           const std::vector<const Model*>& teachers = {});

enum class Method { instance, class_balanced, crt, finetune, cbd, cbd_k, teacher_ensemble };
const char* method_name(Method m);
Method method_from_name(const std::string& name);

/// Stage-1 teacher flavor: standard trains on clean inputs, data_aug with
/// Gaussian input noise.
enum class TeacherType { standard, data_aug };
const char* teacher_type_name(TeacherType t);
TeacherType teacher_type_from_name(const std::string& name);

/// Everything needed to execute one method end to end.
struct StagePlan {
    Method method = Method::cbd;
    std::uint64_t seed = 1;
    std::vector<std::size_t> extractor_widths{16, 64, 32};
    double gamma = 16.0;
    std::size_t epochs_stage1 = 100;
    std::size_t epochs_stage2 = 100;
    std::size_t batch_size = 64;
    double lr0 = 0.2;
    double momentum = 0.9;
    /// alpha/beta/temperature knobs; mode is derived from the method
    /// (feature for cbd, ensemble for cbd_k) unless overridden below.
    DistillConfig distill{};
    std::vector<TeacherType> teacher_types;
    double augment_sigma = 0.01;
    /// Ablation hook: distill through the classifier or the hybrid
    /// objective instead of features (single-teacher methods only).
    std::optional<DistillMode> distill_mode_override;
    /// Teachers train concurrently when true; results are identical either
    /// way since every run is internally deterministic.
    bool parallel_teachers = true;

    void validate() const;
};

struct RunResult {
    std::string method;
    Model model;
    /// Snapshot of the evaluated model before its final training stage; lets
    /// callers audit the from-scratch contract (student init depends on the
    /// run seed only, never on teacher parameters).
    Model student_init;
    std::vector<Model> teachers;
    History stage1;
    History stage2;
    SplitAccuracy accuracy;
    std::optional<double> ncm;
};

/// Executes the plan: stage-1 teacher training where the method needs it,
/// stage-2 student/classifier training, then split-wise evaluation and the
/// NCM probe on the resulting representation.
RunResult run_plan(const StagePlan& plan, const Dataset& train, const Dataset& test,
                   const ShotSplit& split);

/// Deep copy: fresh parameter tensors with identical values.
Model clone_model(const Model& m);

/// Marks every parameter as non-trainable so forwards build no graph.
void freeze_model(Model& m);

/// Seed for the k-th stage-1 teacher of a run.
std::uint64_t teacher_seed(std::uint64_t base_seed, std::size_t k);

} // namespace cbd
