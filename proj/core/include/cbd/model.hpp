#pragma once

#include "cbd/rng.hpp"
#include "cbd/tensor.hpp"

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace cbd {

/// MLP feature extractor: relu between layers, linear output. Widths run
/// [d_in, hidden..., d]. He fan-in Gaussian init, zero biases.
class FeatureExtractor {
public:
    FeatureExtractor() = default;
    FeatureExtractor(std::vector<std::size_t> widths, Rng& rng);

    Tensor forward(const Tensor& x) const;

    const std::vector<std::size_t>& widths() const { return widths_; }
    std::size_t input_dim() const { return widths_.front(); }
    std::size_t output_dim() const { return widths_.back(); }

    std::vector<Tensor> parameters() const;
    void set_frozen(bool frozen);

    struct Layer {
        Tensor weight; // [in x out]
        Tensor bias;   // [out]
    };
    std::vector<Layer>& layers() { return layers_; }
    const std::vector<Layer>& layers() const { return layers_; }

private:
    std::vector<std::size_t> widths_;
    std::vector<Layer> layers_;
};

/// gamma-scaled cosine similarities between l2-normalized features and
/// l2-normalized class weight vectors. Logits are invariant to positive
/// rescaling of the input and bounded by gamma in magnitude.
class CosineClassifier {
public:
    CosineClassifier() = default;
    /// Unit-Gaussian init, class vectors normalized to unit length.
    CosineClassifier(std::size_t feature_dim, std::size_t num_classes, double gamma, Rng& rng);

    Tensor forward(const Tensor& v) const;

    std::size_t feature_dim() const { return weight_.cols(); }
    std::size_t num_classes() const { return weight_.rows(); }
    double gamma() const { return gamma_; }

    Tensor& weight() { return weight_; }
    const Tensor& weight() const { return weight_; }
    std::vector<Tensor> parameters() const { return {weight_}; }

private:
    Tensor weight_; // [c x d_eff], row j = class j direction
    double gamma_ = 16.0;
};

/// Affine map R^d -> R^{d*K} feeding the classifier when distilling from K
/// teachers. Initialized as K horizontally stacked identities with zero bias
/// so the projected feature starts aligned equally with every teacher block
/// (and reduces to the identity for K = 1).
class ProjectionHead {
public:
    ProjectionHead() = default;
    ProjectionHead(std::size_t dim, std::size_t teacher_count);

    Tensor forward(const Tensor& v) const;

    std::size_t input_dim() const { return weight_.rows(); }
    std::size_t output_dim() const { return weight_.cols(); }

    Tensor& weight() { return weight_; }
    Tensor& bias() { return bias_; }
    const Tensor& weight() const { return weight_; }
    const Tensor& bias() const { return bias_; }
    std::vector<Tensor> parameters() const { return {weight_, bias_}; }

private:
    Tensor weight_; // [d x d*K]
    Tensor bias_;   // [d*K]
};

/// Extractor + optional projection + cosine classifier. The classifier and
/// all evaluation-time feature consumers operate on `features`, which is
/// h(f(x)) when the projection is present and f(x) otherwise.
struct Model {
    FeatureExtractor extractor;
    std::optional<ProjectionHead> projection;
    CosineClassifier classifier;

    Tensor features(const Tensor& x) const;
    Tensor logits(const Tensor& x) const;
    std::size_t effective_dim() const;

    std::vector<Tensor> parameters() const;
    /// Parameters that currently require gradients.
    std::vector<Tensor> trainable_parameters() const;
};

struct ModelInit {
    std::vector<std::size_t> extractor_widths{16, 64, 32};
    std::size_t num_classes = 20;
    double gamma = 16.0;
    /// >1 adds a projection head and widens the classifier to d*K.
    std::size_t projection_teachers = 0;
};

Model init_model(const ModelInit& init, std::uint64_t seed);

/// Nearest-class-mean over l2-normalized features: centroid j is the
/// re-normalized mean of normalized class-j features; prediction is the
/// highest-cosine centroid, ties to the lowest class id.
class NcmClassifier {
public:
    static NcmClassifier fit(const std::vector<double>& features, std::size_t dim,
                             const std::vector<int>& labels, std::size_t num_classes);

    int predict(const double* v) const;
    std::vector<int> predict_batch(const std::vector<double>& features, std::size_t count) const;

    std::size_t dim() const { return dim_; }
    std::size_t num_classes() const { return centroids_.size() / dim_; }
    const std::vector<double>& centroids() const { return centroids_; }

private:
    std::size_t dim_ = 0;
    std::vector<double> centroids_; // c x dim, unit rows
};

/// Text checkpoint holding layer shapes, parameter values (shortest
/// round-trip decimals), gamma, and the producing config hash. Reloading
/// reproduces bit-identical forward outputs.
void save_model(const Model& m, const std::filesystem::path& path,
                const std::string& config_hash = "-");
struct LoadedModel {
    Model model;
    std::string config_hash;
};
LoadedModel load_model(const std::filesystem::path& path);

/// FNV-1a 64-bit over a canonical config string; stamped into checkpoints.
std::string config_hash_hex(const std::string& canonical_config);

} // namespace cbd
