#include "cbd/train.hpp"

#include "cbd/errors.hpp"

#include <cmath>
#include <future>
#include <numbers>
#include <sstream>

namespace cbd {

double cosine_lr(std::size_t step, std::size_t total_steps, double lr0) {
    if (total_steps == 0 || step > total_steps) {
        throw config_error("cosine_lr: step must lie in [0, total_steps]");
    }
    const double t = static_cast<double>(step) / static_cast<double>(total_steps);
    return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

SgdOptimizer::SgdOptimizer(std::vector<Tensor> params, double momentum)
    : params_(std::move(params)), momentum_(momentum) {
    if (momentum < 0.0 || momentum >= 1.0) throw config_error("sgd: momentum must be in [0, 1)");
    velocity_.reserve(params_.size());
    for (const auto& p : params_) velocity_.emplace_back(p.size(), 0.0);
}

void SgdOptimizer::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

void SgdOptimizer::step(double lr) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        if (!p.has_grad()) continue; // no gradient reached this parameter
        const auto& g = p.grad();
        auto& v = velocity_[i];
        auto& values = p.mutable_values();
        for (std::size_t j = 0; j < values.size(); ++j) {
            v[j] = momentum_ * v[j] + g[j];
            values[j] -= lr * v[j];
        }
    }
}

void TrainConfig::validate() const {
    if (epochs < 1) throw config_error("train: epochs must be >= 1");
    if (batch_size < 1) throw config_error("train: batch_size must be >= 1");
    // lr0 == 0 is a degenerate but well-defined schedule (no updates)
    if (lr0 < 0.0) throw config_error("train: lr0 must be >= 0");
    if (momentum < 0.0 || momentum >= 1.0) throw config_error("train: momentum must be in [0, 1)");
    if (augment_sigma < 0.0) throw config_error("train: augment_sigma must be >= 0");
    distill.validate();
}

namespace {

struct StepLoss {
    Tensor loss;
    Tensor logits;
};

StepLoss build_loss(const Model& model, const Tensor& x_train, const Tensor& x_clean,
                    const std::vector<int>& y, const DistillConfig& distill,
                    const std::vector<const Model*>& teachers) {
    Tensor v = model.extractor.forward(x_train);
    Tensor feat = model.projection ? model.projection->forward(v) : v;
    Tensor z = model.classifier.forward(feat);

    switch (distill.mode) {
        case DistillMode::none:
            return {cross_entropy(z, y), z};
        case DistillMode::feature: {
            Tensor v_hat = teachers.at(0)->extractor.forward(x_clean);
            return {cbd_loss(z, y, v, v_hat, distill), z};
        }
        case DistillMode::classifier: {
            Tensor z_hat = teachers.at(0)->logits(x_clean);
            return {classifier_distill_loss(z, y, z_hat, distill), z};
        }
        case DistillMode::hybrid: {
            Tensor v_hat = teachers.at(0)->extractor.forward(x_clean);
            Tensor z_hat = teachers.at(0)->logits(x_clean);
            return {hybrid_loss(z, y, v, v_hat, z_hat, distill), z};
        }
        case DistillMode::ensemble: {
            std::vector<Tensor> teacher_feats;
            teacher_feats.reserve(teachers.size());
            for (const Model* t : teachers) teacher_feats.push_back(t->extractor.forward(x_clean));
            Tensor concat = concat_normalized_features(teacher_feats);
            return {ensemble_loss(z, y, feat, concat, distill), z};
        }
    }
    throw config_error("train: unknown distillation mode");
}

[[noreturn]] void abort_non_finite(const Model& model, const Tensor& x_clean,
                                   const std::vector<int>& y, const DistillConfig& distill,
                                   std::size_t step, double lr, double loss_value) {
    std::ostringstream os;
    os << "training aborted: non-finite loss " << loss_value << " at step " << step << " (lr "
       << lr << ", mode " << distill_mode_name(distill.mode) << ")";
    // best-effort term breakdown for the diagnostic
    try {
        Tensor z = model.logits(x_clean);
        os << "; cross_entropy=" << cross_entropy(z, y).item();
    } catch (...) {
    }
    throw numeric_abort(os.str(), static_cast<long>(step), lr);
}

} // namespace

History train_single_stage(Model& model, const Dataset& train, const Dataset& test,
                           const TrainConfig& cfg, const std::vector<const Model*>& teachers) {
    cfg.validate();
    if (cfg.distill.mode != DistillMode::none && teachers.empty()) {
        throw config_error("train: distillation mode '" +
                           std::string(distill_mode_name(cfg.distill.mode)) +
                           "' requires at least one teacher");
    }

    BatchIterator iterator(train, cfg.batch_size,
                           {cfg.sampling, derive_seed(cfg.seed, /*stream=*/11)});
    Rng augment_rng(derive_seed(cfg.seed, /*stream=*/13));

    SgdOptimizer opt(model.trainable_parameters(), cfg.momentum);

    const std::size_t batches = iterator.batches_per_epoch();
    const std::size_t total_steps = cfg.epochs * batches;

    History history;
    history.reserve(cfg.epochs);
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        double loss_sum = 0.0;
        for (std::size_t b = 0; b < batches; ++b, ++step) {
            const double lr = cosine_lr(step, total_steps, cfg.lr0);
            const auto indices = iterator.next_batch();
            Tensor x_clean = train.gather(indices);
            Tensor x_train = cfg.augment_sigma > 0.0
                                 ? augment(x_clean, cfg.augment_sigma, augment_rng)
                                 : x_clean;
            const auto y = train.gather_labels(indices);
            if (!x_train.all_finite()) {
                throw numeric_abort("training aborted: non-finite input features at step " +
                                        std::to_string(step) + " (lr " + std::to_string(lr) + ")",
                                    static_cast<long>(step), lr);
            }

            StepLoss out = build_loss(model, x_train, x_clean, y, cfg.distill, teachers);
            const double loss_value = out.loss.item();
            if (!std::isfinite(loss_value)) {
                abort_non_finite(model, x_clean, y, cfg.distill, step, lr, loss_value);
            }

            opt.zero_grad();
            out.loss.backward();
            opt.step(lr);
            loss_sum += loss_value;
        }
        history.push_back({loss_sum / static_cast<double>(batches), overall_accuracy(model, test)});
    }
    return history;
}

// ---------------------------------------------------------------------------
// Methods and plans
// ---------------------------------------------------------------------------

const char* method_name(Method m) {
    switch (m) {
        case Method::instance: return "instance";
        case Method::class_balanced: return "class_balanced";
        case Method::crt: return "crt";
        case Method::finetune: return "finetune";
        case Method::cbd: return "cbd";
        case Method::cbd_k: return "cbd_k";
        case Method::teacher_ensemble: return "teacher_ensemble";
    }
    return "?";
}

Method method_from_name(const std::string& name) {
    for (Method m : {Method::instance, Method::class_balanced, Method::crt, Method::finetune,
                     Method::cbd, Method::cbd_k, Method::teacher_ensemble}) {
        if (name == method_name(m)) return m;
    }
    throw config_error("unknown method '" + name + "'");
}

const char* teacher_type_name(TeacherType t) {
    return t == TeacherType::standard ? "standard" : "data_aug";
}

TeacherType teacher_type_from_name(const std::string& name) {
    if (name == "standard") return TeacherType::standard;
    if (name == "data_aug") return TeacherType::data_aug;
    throw config_error("unknown teacher type '" + name + "' (expected standard or data_aug)");
}

void StagePlan::validate() const {
    if (epochs_stage1 < 1) throw config_error("plan: epochs_stage1 must be >= 1");
    if (batch_size < 1) throw config_error("plan: batch_size must be >= 1");
    if (!(lr0 > 0.0)) throw config_error("plan: lr0 must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw config_error("plan: momentum must be in [0, 1)");
    if (!(gamma > 0.0)) throw config_error("plan: gamma must be positive");
    if (augment_sigma < 0.0) throw config_error("plan: augment_sigma must be >= 0");
    distill.validate();

    const std::size_t teachers = teacher_types.size();
    switch (method) {
        case Method::instance:
        case Method::class_balanced:
            break;
        case Method::crt:
        case Method::finetune:
            if (teachers != 1) throw config_error("plan: two-stage baselines use exactly 1 teacher");
            if (epochs_stage2 < 1) throw config_error("plan: epochs_stage2 must be >= 1");
            break;
        case Method::cbd:
            if (teachers != 1) throw config_error("plan: cbd requires exactly 1 teacher");
            if (epochs_stage2 < 1) throw config_error("plan: epochs_stage2 must be >= 1");
            break;
        case Method::cbd_k:
            if (teachers < 1) throw config_error("plan: cbd_k requires K >= 1 teachers");
            if (epochs_stage2 < 1) throw config_error("plan: epochs_stage2 must be >= 1");
            break;
        case Method::teacher_ensemble:
            if (teachers < 2) throw config_error("plan: teacher_ensemble requires >= 2 teachers");
            break;
    }
    if (distill_mode_override) {
        if (*distill_mode_override == DistillMode::ensemble && method != Method::cbd_k) {
            throw config_error("plan: ensemble mode requires method cbd_k");
        }
        if (*distill_mode_override == DistillMode::none) {
            throw config_error("plan: distill mode override cannot be 'none'");
        }
    }
}

Model clone_model(const Model& m) {
    Model out;
    out.extractor = m.extractor;
    auto& layers = out.extractor.layers();
    for (auto& layer : layers) {
        layer.weight = Tensor::parameter(layer.weight.shape(), layer.weight.values());
        layer.bias = Tensor::parameter(layer.bias.shape(), layer.bias.values());
    }
    if (m.projection) {
        ProjectionHead head(m.projection->input_dim(), 1);
        head.weight() = Tensor::parameter(m.projection->weight().shape(), m.projection->weight().values());
        head.bias() = Tensor::parameter(m.projection->bias().shape(), m.projection->bias().values());
        out.projection = std::move(head);
    }
    Rng dummy(0);
    CosineClassifier clf(m.classifier.feature_dim(), m.classifier.num_classes(),
                         m.classifier.gamma(), dummy);
    clf.weight() = Tensor::parameter(m.classifier.weight().shape(), m.classifier.weight().values());
    out.classifier = std::move(clf);
    return out;
}

void freeze_model(Model& m) {
    m.extractor.set_frozen(true);
    if (m.projection) {
        m.projection->weight().set_requires_grad(false);
        m.projection->bias().set_requires_grad(false);
    }
    m.classifier.weight().set_requires_grad(false);
}

std::uint64_t teacher_seed(std::uint64_t base_seed, std::size_t k) {
    return derive_seed(base_seed, /*stream=*/100 + k);
}

namespace {

ModelInit plan_arch(const StagePlan& plan, std::size_t num_classes, std::size_t projection_teachers) {
    ModelInit init;
    init.extractor_widths = plan.extractor_widths;
    init.num_classes = num_classes;
    init.gamma = plan.gamma;
    init.projection_teachers = projection_teachers;
    return init;
}

TrainConfig stage_config(const StagePlan& plan, std::size_t epochs, std::uint64_t seed,
                         SamplingKind sampling, DistillConfig distill, double augment_sigma) {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = plan.batch_size;
    cfg.lr0 = plan.lr0;
    cfg.momentum = plan.momentum;
    cfg.seed = seed;
    cfg.sampling = sampling;
    cfg.distill = std::move(distill);
    cfg.augment_sigma = augment_sigma;
    return cfg;
}

/// Stage 1: every teacher trains from scratch with instance sampling, its
/// type deciding the augmentation pipeline. Independent runs, so they may
/// execute concurrently; all complete before stage 2 starts.
std::vector<Model> train_teachers(const StagePlan& plan, const Dataset& train,
                                  const Dataset& test, std::vector<History>* histories) {
    const std::size_t count = plan.teacher_types.size();
    std::vector<Model> teachers(count);
    std::vector<History> local(count);

    auto train_one = [&](std::size_t k) {
        const std::uint64_t seed = teacher_seed(plan.seed, k);
        Model teacher = init_model(plan_arch(plan, train.num_classes(), 0), seed);
        const double sigma =
            plan.teacher_types[k] == TeacherType::data_aug ? plan.augment_sigma : 0.0;
        TrainConfig cfg = stage_config(plan, plan.epochs_stage1, seed, SamplingKind::instance,
                                       DistillConfig{.mode = DistillMode::none}, sigma);
        local[k] = train_single_stage(teacher, train, test, cfg);
        freeze_model(teacher);
        teachers[k] = std::move(teacher);
    };

    if (plan.parallel_teachers && count > 1) {
        std::vector<std::future<void>> futures;
        futures.reserve(count);
        for (std::size_t k = 0; k < count; ++k) {
            futures.push_back(std::async(std::launch::async, train_one, k));
        }
        for (auto& f : futures) f.get();
    } else {
        for (std::size_t k = 0; k < count; ++k) train_one(k);
    }

    if (histories) *histories = std::move(local);
    return teachers;
}

DistillConfig plan_distill(const StagePlan& plan, DistillMode default_mode) {
    DistillConfig d = plan.distill;
    d.mode = plan.distill_mode_override.value_or(default_mode);
    d.teacher_count = plan.teacher_types.size();
    return d;
}

} // namespace

RunResult run_plan(const StagePlan& plan, const Dataset& train, const Dataset& test,
                   const ShotSplit& split) {
    plan.validate();
    const auto tags = split_classes(train, split);

    RunResult result;
    result.method = method_name(plan.method);

    switch (plan.method) {
        case Method::instance:
        case Method::class_balanced: {
            const SamplingKind kind = plan.method == Method::instance
                                          ? SamplingKind::instance
                                          : SamplingKind::class_balanced;
            result.model = init_model(plan_arch(plan, train.num_classes(), 0), plan.seed);
            result.student_init = clone_model(result.model);
            TrainConfig cfg = stage_config(plan, plan.epochs_stage1, plan.seed, kind,
                                           DistillConfig{.mode = DistillMode::none}, 0.0);
            result.stage1 = train_single_stage(result.model, train, test, cfg);
            break;
        }
        case Method::crt: {
            std::vector<History> teacher_hist;
            result.teachers = train_teachers(plan, train, test, &teacher_hist);
            result.stage1 = std::move(teacher_hist[0]);

            // frozen stage-1 extractor, fresh classifier, class-balanced
            result.model = clone_model(result.teachers[0]);
            result.model.extractor.set_frozen(true);
            Rng rng(derive_seed(plan.seed, /*stream=*/4211));
            result.model.classifier = CosineClassifier(result.model.effective_dim(),
                                                       train.num_classes(), plan.gamma, rng);
            result.student_init = clone_model(result.model);
            TrainConfig cfg = stage_config(plan, plan.epochs_stage2, plan.seed,
                                           SamplingKind::class_balanced,
                                           DistillConfig{.mode = DistillMode::none}, 0.0);
            result.stage2 = train_single_stage(result.model, train, test, cfg);
            break;
        }
        case Method::finetune: {
            std::vector<History> teacher_hist;
            result.teachers = train_teachers(plan, train, test, &teacher_hist);
            result.stage1 = std::move(teacher_hist[0]);

            result.model = clone_model(result.teachers[0]);
            result.student_init = clone_model(result.model);
            TrainConfig cfg = stage_config(plan, plan.epochs_stage2, plan.seed,
                                           SamplingKind::class_balanced,
                                           DistillConfig{.mode = DistillMode::none}, 0.0);
            cfg.lr0 = plan.lr0 / 20.0; // small stage-2 learning rate
            result.stage2 = train_single_stage(result.model, train, test, cfg);
            break;
        }
        case Method::cbd: {
            std::vector<History> teacher_hist;
            result.teachers = train_teachers(plan, train, test, &teacher_hist);
            result.stage1 = std::move(teacher_hist[0]);

            // student re-trained from scratch, independent of teacher init
            result.model = init_model(plan_arch(plan, train.num_classes(), 0), plan.seed);
            result.student_init = clone_model(result.model);
            TrainConfig cfg = stage_config(plan, plan.epochs_stage2, plan.seed,
                                           SamplingKind::class_balanced,
                                           plan_distill(plan, DistillMode::feature), 0.0);
            std::vector<const Model*> teacher_ptrs{&result.teachers[0]};
            result.stage2 = train_single_stage(result.model, train, test, cfg, teacher_ptrs);
            break;
        }
        case Method::cbd_k: {
            std::vector<History> teacher_hist;
            result.teachers = train_teachers(plan, train, test, &teacher_hist);
            result.stage1 = std::move(teacher_hist[0]);

            const std::size_t k = plan.teacher_types.size();
            result.model = init_model(plan_arch(plan, train.num_classes(), k), plan.seed);
            result.student_init = clone_model(result.model);
            TrainConfig cfg = stage_config(plan, plan.epochs_stage2, plan.seed,
                                           SamplingKind::class_balanced,
                                           plan_distill(plan, DistillMode::ensemble), 0.0);
            std::vector<const Model*> teacher_ptrs;
            for (const auto& t : result.teachers) teacher_ptrs.push_back(&t);
            result.stage2 = train_single_stage(result.model, train, test, cfg, teacher_ptrs);
            break;
        }
        case Method::teacher_ensemble: {
            std::vector<History> teacher_hist;
            result.teachers = train_teachers(plan, train, test, &teacher_hist);
            result.stage1 = std::move(teacher_hist[0]);
            result.model = clone_model(result.teachers[0]);
            result.student_init = clone_model(result.model);
            break;
        }
    }

    if (plan.method == Method::teacher_ensemble) {
        std::vector<const Model*> fused;
        for (const auto& t : result.teachers) fused.push_back(&t);
        result.accuracy = split_accuracy(predict_classes_mean_softmax(fused, test), test, tags);
        result.ncm = std::nullopt;
    } else {
        result.accuracy = top1_accuracy(result.model, test, tags);
        result.ncm = ncm_probe(result.model, train, test);
    }
    return result;
}

} // namespace cbd
