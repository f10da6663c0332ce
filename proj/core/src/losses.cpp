#include "cbd/losses.hpp"

#include "cbd/errors.hpp"

#include <algorithm>
#include <cmath>

namespace cbd {

const char* distill_mode_name(DistillMode mode) {
    switch (mode) {
        case DistillMode::none: return "none";
        case DistillMode::feature: return "feature";
        case DistillMode::classifier: return "classifier";
        case DistillMode::hybrid: return "hybrid";
        case DistillMode::ensemble: return "ensemble";
    }
    return "?";
}

DistillMode distill_mode_from_name(const std::string& name) {
    if (name == "none") return DistillMode::none;
    if (name == "feature") return DistillMode::feature;
    if (name == "classifier") return DistillMode::classifier;
    if (name == "hybrid") return DistillMode::hybrid;
    if (name == "ensemble") return DistillMode::ensemble;
    throw config_error("unknown distillation mode '" + name + "'");
}

void DistillConfig::validate() const {
    if (alpha < 0.0 || alpha > 1.0) throw config_error("alpha must be in [0, 1]");
    if (!(beta > 0.0)) throw config_error("beta must be positive");
    if (!(temperature > 0.0)) throw config_error("temperature must be positive");
    if (teacher_count < 1) throw config_error("K must be >= 1");
}

namespace {

Tensor one_hot(const std::vector<int>& labels, std::size_t num_classes) {
    std::vector<double> mask(labels.size() * num_classes, 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
            throw config_error("cross_entropy: label " + std::to_string(y) +
                               " out of range for " + std::to_string(num_classes) + " classes");
        }
        mask[i * num_classes + static_cast<std::size_t>(y)] = 1.0;
    }
    return Tensor::constant({labels.size(), num_classes}, std::move(mask));
}

// -(1/b) * sum targets .* log_softmax(z), targets constant
Tensor soft_target_ce(const Tensor& logits, const Tensor& targets) {
    const double inv_batch = 1.0 / static_cast<double>(logits.rows());
    return scale(sum(mul(log_softmax(logits), targets)), -inv_batch);
}

} // namespace

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rows() != labels.size()) {
        throw dimension_error("cross_entropy: batch size mismatch");
    }
    return soft_target_ce(logits, one_hot(labels, logits.cols()));
}

Tensor feature_distance(const Tensor& v, const Tensor& v_hat) {
    if (v.shape() != v_hat.shape()) {
        throw dimension_error("feature_distance: descriptor shapes disagree");
    }
    const double inv_batch = 1.0 / static_cast<double>(v.rows());
    Tensor teacher_rows = l2_normalize(v_hat.detach());
    Tensor cos_sum = sum(mul(l2_normalize(v), teacher_rows));
    return add_scalar(scale(cos_sum, -inv_batch), 1.0);
}

Tensor cbd_loss(const Tensor& logits, const std::vector<int>& labels, const Tensor& v,
                const Tensor& v_hat, const DistillConfig& cfg) {
    cfg.validate();
    if (cfg.mode != DistillMode::feature) {
        throw config_error("cbd_loss requires mode=feature");
    }
    Tensor ce = cross_entropy(logits, labels);
    Tensor fd = feature_distance(v, v_hat);
    return add(scale(ce, 1.0 - cfg.alpha), scale(fd, cfg.alpha * cfg.beta));
}

Tensor classifier_distill_loss(const Tensor& logits, const std::vector<int>& labels,
                               const Tensor& teacher_logits, const DistillConfig& cfg) {
    cfg.validate();
    if (cfg.mode != DistillMode::classifier) {
        throw config_error("classifier_distill_loss requires mode=classifier");
    }
    if (logits.shape() != teacher_logits.shape()) {
        throw dimension_error("classifier_distill_loss: logit shapes disagree");
    }
    const double t = cfg.temperature;
    Tensor ce = cross_entropy(logits, labels);
    Tensor teacher_probs = softmax(scale(teacher_logits.detach(), 1.0 / t));
    Tensor soft = soft_target_ce(scale(logits, 1.0 / t), teacher_probs);
    return add(scale(ce, 1.0 - cfg.alpha), scale(soft, cfg.alpha * t * t));
}

Tensor hybrid_loss(const Tensor& logits, const std::vector<int>& labels, const Tensor& v,
                   const Tensor& v_hat, const Tensor& teacher_logits, const DistillConfig& cfg) {
    cfg.validate();
    if (cfg.mode != DistillMode::hybrid) {
        throw config_error("hybrid_loss requires mode=hybrid");
    }
    if (logits.shape() != teacher_logits.shape()) {
        throw dimension_error("hybrid_loss: logit shapes disagree");
    }
    const double t = cfg.temperature;
    Tensor ce = cross_entropy(logits, labels);
    Tensor fd = feature_distance(v, v_hat);
    Tensor teacher_probs = softmax(scale(teacher_logits.detach(), 1.0 / t));
    Tensor soft = soft_target_ce(scale(logits, 1.0 / t), teacher_probs);
    Tensor inner = add(scale(fd, cfg.beta), scale(soft, t * t));
    return add(scale(ce, 1.0 - cfg.alpha), scale(inner, cfg.alpha * 0.5));
}

Tensor ensemble_loss(const Tensor& logits, const std::vector<int>& labels, const Tensor& projected,
                     const Tensor& teacher_concat, const DistillConfig& cfg) {
    cfg.validate();
    if (cfg.mode != DistillMode::ensemble) {
        throw config_error("ensemble_loss requires mode=ensemble");
    }
    if (projected.cols() % cfg.teacher_count != 0) {
        throw dimension_error("ensemble_loss: projected width " + std::to_string(projected.cols()) +
                              " is not a multiple of K=" + std::to_string(cfg.teacher_count));
    }
    if (projected.shape() != teacher_concat.shape()) {
        throw dimension_error("ensemble_loss: projected and teacher widths disagree");
    }
    Tensor ce = cross_entropy(logits, labels);
    Tensor fd = feature_distance(projected, teacher_concat);
    return add(scale(ce, 1.0 - cfg.alpha), scale(fd, cfg.alpha * cfg.beta));
}

Tensor concat_normalized_features(const std::vector<Tensor>& teacher_features) {
    if (teacher_features.empty()) {
        throw config_error("concat_normalized_features: no teacher descriptors");
    }
    const std::size_t rows = teacher_features.front().rows();
    std::size_t total = 0;
    std::vector<Tensor> normalized;
    normalized.reserve(teacher_features.size());
    for (const auto& f : teacher_features) {
        if (f.rows() != rows) {
            throw dimension_error("concat_normalized_features: row counts disagree");
        }
        normalized.push_back(l2_normalize(f.detach()));
        total += f.cols();
    }
    std::vector<double> out(rows * total);
    std::size_t offset = 0;
    for (const auto& f : normalized) {
        const std::size_t w = f.cols();
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < w; ++j) out[i * total + offset + j] = f.at(i, j);
        }
        offset += w;
    }
    return Tensor::constant({rows, total}, std::move(out));
}

} // namespace cbd
