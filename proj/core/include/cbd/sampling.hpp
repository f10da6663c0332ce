#pragma once

#include "cbd/dataset.hpp"
#include "cbd/rng.hpp"

#include <cstddef>
#include <cstdint>
#include <vector>

namespace cbd {

enum class SamplingKind { instance, class_balanced };

/// Mini-batch sampling strategy. Instance sampling selects class j with
/// probability n_j / n; class-balanced selects every class with probability
/// 1/c, then an instance uniformly within the class.
struct SamplingStrategy {
    SamplingKind kind = SamplingKind::instance;
    std::uint64_t seed = 0;
};

const char* sampling_kind_name(SamplingKind kind);

/// Per-class selection probabilities p_j implied by the strategy; sums to 1.
std::vector<double> class_probabilities(const Dataset& d, const SamplingStrategy& s);

/// I.i.d. with-replacement batch stream, deterministic under the strategy
/// seed. One iterator per training run; not shared across threads.
class BatchIterator {
public:
    BatchIterator(const Dataset& d, std::size_t batch_size, SamplingStrategy strategy);

    std::vector<std::size_t> next_batch();
    std::size_t batch_size() const { return batch_size_; }
    /// An epoch is defined as ceil(n / batch_size) batches.
    std::size_t batches_per_epoch() const;

private:
    const Dataset* dataset_;
    std::size_t batch_size_;
    SamplingKind kind_;
    Rng rng_;
    std::vector<std::vector<std::size_t>> by_class_;
};

} // namespace cbd
