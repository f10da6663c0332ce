#pragma once

#include "cbd/rng.hpp"
#include "cbd/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace cbd {

/// Labeled instances in feature space with per-class counts.
struct Dataset {
    std::string name;
    std::size_t feature_dim = 0;
    std::vector<double> features; // row-major, num_instances x feature_dim
    std::vector<int> labels;      // class ids in [0, num_classes)
    std::vector<std::size_t> class_counts;

    std::size_t num_instances() const { return labels.size(); }
    std::size_t num_classes() const { return class_counts.size(); }
    const double* row(std::size_t i) const { return features.data() + i * feature_dim; }

    /// Constant [b x d] tensor of the selected instance rows.
    Tensor gather(const std::vector<std::size_t>& indices) const;
    /// Constant [n x d] tensor of the whole set.
    Tensor all_features() const;
    std::vector<int> gather_labels(const std::vector<std::size_t>& indices) const;

    /// Checks the structural invariants: counts sum to n, counts match
    /// labels, every label below num_classes. Throws config_error.
    void validate() const;

    static Dataset from_rows(std::string name, std::size_t feature_dim,
                             std::vector<double> features, std::vector<int> labels,
                             std::size_t num_classes);
};

enum class ShotTag { many, mid, few };

/// Reporting buckets by training count: many if n_j > many_threshold,
/// few if n_j < few_threshold, mid otherwise (boundaries inclusive to mid).
struct ShotSplit {
    std::size_t many_threshold = 100;
    std::size_t few_threshold = 20;
};

std::vector<ShotTag> split_classes(const Dataset& d, const ShotSplit& s);
const char* shot_tag_name(ShotTag tag);

enum class DecayKind { exponential, zipf };

/// Recipe for a synthetic long-tailed benchmark: per-class Gaussian clusters
/// whose train counts decay from head_count to tail_count, with a balanced
/// test set.
struct LongTailProfile {
    std::size_t num_classes = 20;
    std::size_t head_count = 200;
    std::size_t tail_count = 5;
    DecayKind decay = DecayKind::exponential;
    /// Zipf exponent; <= 0 derives the exponent that lands on tail_count.
    double zipf_s = 0.0;
    std::size_t feature_dim = 16;
    double class_separation = 1.0;
    double noise_sigma = 0.5;
    std::size_t test_per_class = 50;
    std::uint64_t seed = 1;

    void validate() const;
};

/// Per-class train counts implied by the profile: non-increasing, endpoints
/// exactly head_count and tail_count.
std::vector<std::size_t> decay_counts(const LongTailProfile& profile);

struct SynthesizedData {
    Dataset train;
    Dataset test;
};

SynthesizedData synthesize(const LongTailProfile& profile);

/// Dataset CSV: header `label,f0,...,f{d-1}`, one instance per row,
/// UTF-8, LF line endings. Feature values are written in shortest
/// round-trip decimal form so save/load is bit-exact.
void save_dataset(const Dataset& d, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path,
                     std::optional<std::size_t> expected_classes = std::nullopt);

/// Additive Gaussian input noise, x + N(0, sigma^2): the feature-space
/// analog of training-time augmentation. sigma = 0 returns x unchanged.
Tensor augment(const Tensor& x, double sigma, Rng& rng);

} // namespace cbd
