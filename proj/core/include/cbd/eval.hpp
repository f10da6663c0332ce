#pragma once

#include "cbd/dataset.hpp"
#include "cbd/model.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace cbd {

/// Split-wise top-1 accuracy plus run metadata. Accuracies are fractions in
/// [0, 1]; rendering as percentages is a display concern only.
struct EvalReport {
    std::string method;
    std::uint64_t seed = 0;
    double overall_acc = 0.0;
    double many_acc = 0.0;
    double mid_acc = 0.0;
    double few_acc = 0.0;
    std::optional<double> ncm_overall_acc;
    /// Resolved run configuration, serialized as a JSON object.
    std::string config_echo = "{}";
    ShotSplit thresholds;
    std::string timestamp;
};

/// Predicted class per test instance: argmax of logits, ties to the lowest
/// class id.
std::vector<int> predict_classes(const Model& m, const Dataset& data);

/// Test-time fusion of several models: argmax of the mean of their softmax
/// outputs.
std::vector<int> predict_classes_mean_softmax(const std::vector<const Model*>& models,
                                              const Dataset& data);

struct SplitAccuracy {
    double overall = 0.0;
    double many = 0.0;
    double mid = 0.0;
    double few = 0.0;
    std::size_t many_total = 0;
    std::size_t mid_total = 0;
    std::size_t few_total = 0;
};

/// Aggregates prediction correctness overall and per shot tag. Splits with
/// no test instances report accuracy 0 and weight 0.
SplitAccuracy split_accuracy(const std::vector<int>& predictions, const Dataset& test,
                             const std::vector<ShotTag>& class_tags);

/// Convenience: predictions + aggregation for a single model.
SplitAccuracy top1_accuracy(const Model& m, const Dataset& test,
                            const std::vector<ShotTag>& class_tags);

/// Fraction of test instances whose argmax logit matches the label.
double overall_accuracy(const Model& m, const Dataset& data);

/// Fits a nearest-class-mean classifier on the model's training features
/// (the classifier input space) and returns its test accuracy: a
/// parameter-free probe of representation quality.
double ncm_probe(const Model& m, const Dataset& train, const Dataset& test);

/// Report files. CSV uses the fixed header
/// `method,seed,overall_acc,many_acc,mid_acc,few_acc,ncm_overall_acc`; a
/// missing NCM value is an empty cell (JSON: null).
std::string report_csv_header();
std::string report_csv_row(const EvalReport& r);
std::string report_json(const EvalReport& r);
void emit_report(const EvalReport& r, const std::filesystem::path& json_path,
                 const std::filesystem::path& csv_path);
EvalReport parse_report_json(const std::filesystem::path& path);

std::string current_timestamp_utc();

} // namespace cbd
