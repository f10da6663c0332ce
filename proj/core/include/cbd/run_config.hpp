#pragma once

#include "cbd/dataset.hpp"
#include "cbd/train.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace cbd {

/// One experiment, as read from a run-config file plus CLI overrides.
/// The file is line-based `key = value` text with two optional sections,
/// `[profile]` and `[split_thresholds]`. Unknown keys are errors.
struct RunConfig {
    Method method = Method::cbd;
    std::uint64_t seed = 1;
    std::size_t epochs_stage1 = 100;
    /// Defaults to epochs_stage1; the fine-tuning baseline defaults to its
    /// short 10-epoch budget.
    std::optional<std::size_t> epochs_stage2;
    std::size_t batch_size = 64;
    double lr0 = 0.2;
    double momentum = 0.9;
    double alpha = 0.4;
    double beta = 100.0;
    double temperature = 2.0;
    double gamma = 16.0;
    std::optional<std::size_t> teacher_count; // K
    std::optional<std::vector<TeacherType>> teacher_types;
    double augment_sigma = 0.01;
    /// Exactly one of dataset_path (directory with train.csv/test.csv) or
    /// profile must be set.
    std::optional<std::string> dataset_path;
    std::optional<LongTailProfile> profile;
    std::optional<ShotSplit> split_thresholds;

    void validate() const;

    /// K after defaulting: explicit K, else the teacher_types length, else
    /// the per-method default (4 for cbd_k, 2 for teacher_ensemble, 1 for
    /// single-teacher methods).
    std::size_t resolved_teacher_count() const;
    /// Teacher composition after defaulting: explicit list, else the first
    /// ceil(K/2) standard and the rest data_aug.
    std::vector<TeacherType> resolved_teacher_types() const;
    std::size_t resolved_epochs_stage2() const;
    /// Shot-split thresholds after defaulting: explicit values win; synthetic
    /// profiles use many > 60% and few < 20% of the head count; loaded
    /// datasets use the 100/20 convention.
    ShotSplit resolved_split() const;

    StagePlan to_plan() const;

    /// Resolved configuration as a canonical JSON object (the report's
    /// config echo). Includes the PRNG algorithm name.
    std::string canonical_json() const;
};

RunConfig parse_run_config_text(const std::string& text, const std::string& origin = "<string>");
RunConfig parse_run_config_file(const std::filesystem::path& path);

/// Applies a `key=value` override; keys may be section-qualified
/// (`profile.noise`, `split_thresholds.many`). Overrides win over the file.
void apply_override(RunConfig& cfg, const std::string& expr);

/// Train/test pair named by the config: loaded from dataset_path or
/// synthesized from the profile.
SynthesizedData resolve_dataset(const RunConfig& cfg);

} // namespace cbd
