#pragma once

#include "cbd/tensor.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace cbd {

enum class DistillMode { none, feature, classifier, hybrid, ensemble };

const char* distill_mode_name(DistillMode mode);
DistillMode distill_mode_from_name(const std::string& name);

/// Knobs of the distillation objectives. alpha trades cross-entropy against
/// distillation, beta scales the feature term, temperature softens the
/// classifier term, teacher_count is K for the ensemble variant.
struct DistillConfig {
    double alpha = 0.4;
    double beta = 100.0;
    double temperature = 2.0;
    DistillMode mode = DistillMode::none;
    std::size_t teacher_count = 1;

    void validate() const;
};

/// Mean over the batch of -log softmax(logits)[label].
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

/// Mean over the batch of 1 - cos(v_i, v_hat_i), in [0, 2]. The teacher side
/// is detached: gradients flow into v only.
Tensor feature_distance(const Tensor& v, const Tensor& v_hat);

/// Feature distillation: (1-alpha) * CE + alpha * beta * feature_distance.
Tensor cbd_loss(const Tensor& logits, const std::vector<int>& labels, const Tensor& v,
                const Tensor& v_hat, const DistillConfig& cfg);

/// Classifier distillation: (1-alpha) * CE + alpha * T^2 * soft-target CE
/// between temperature-softened student and (detached) teacher logits.
Tensor classifier_distill_loss(const Tensor& logits, const std::vector<int>& labels,
                               const Tensor& teacher_logits, const DistillConfig& cfg);

/// Feature and classifier distillation combined at equal inner weight:
/// (1-alpha) * CE + alpha * (beta * l_F + T^2 * soft CE) / 2.
Tensor hybrid_loss(const Tensor& logits, const std::vector<int>& labels, const Tensor& v,
                   const Tensor& v_hat, const Tensor& teacher_logits, const DistillConfig& cfg);

/// Ensemble distillation: cosine distance between the projected student
/// feature h(v) and the concatenation of K per-teacher normalized
/// descriptors, over the full d*K width.
Tensor ensemble_loss(const Tensor& logits, const std::vector<int>& labels, const Tensor& projected,
                     const Tensor& teacher_concat, const DistillConfig& cfg);

/// Concatenates per-teacher descriptors row-wise, each block l2-normalized.
/// Plain data movement producing a constant tensor (teachers are frozen).
Tensor concat_normalized_features(const std::vector<Tensor>& teacher_features);

} // namespace cbd
