#include "cbd/sampling.hpp"

#include "cbd/errors.hpp"

namespace cbd {

const char* sampling_kind_name(SamplingKind kind) {
    return kind == SamplingKind::instance ? "instance" : "class_balanced";
}

std::vector<double> class_probabilities(const Dataset& d, const SamplingStrategy& s) {
    const std::size_t c = d.num_classes();
    std::vector<double> p(c);
    if (s.kind == SamplingKind::instance) {
        const double n = static_cast<double>(d.num_instances());
        for (std::size_t j = 0; j < c; ++j) p[j] = static_cast<double>(d.class_counts[j]) / n;
    } else {
        const double inv = 1.0 / static_cast<double>(c);
        for (std::size_t j = 0; j < c; ++j) p[j] = inv;
    }
    return p;
}

BatchIterator::BatchIterator(const Dataset& d, std::size_t batch_size, SamplingStrategy strategy)
    : dataset_(&d), batch_size_(batch_size), kind_(strategy.kind), rng_(strategy.seed) {
    if (d.num_instances() == 0) throw config_error("sampler: dataset is empty");
    if (batch_size == 0) throw config_error("sampler: batch_size must be positive");
    if (kind_ == SamplingKind::class_balanced) {
        by_class_.resize(d.num_classes());
        for (std::size_t i = 0; i < d.num_instances(); ++i) {
            by_class_[static_cast<std::size_t>(d.labels[i])].push_back(i);
        }
        for (std::size_t j = 0; j < by_class_.size(); ++j) {
            if (by_class_[j].empty()) {
                throw config_error("sampler: class " + std::to_string(j) +
                                   " has no instances; class-balanced sampling undefined");
            }
        }
    }
}

std::vector<std::size_t> BatchIterator::next_batch() {
    std::vector<std::size_t> batch(batch_size_);
    if (kind_ == SamplingKind::instance) {
        const std::size_t n = dataset_->num_instances();
        for (auto& idx : batch) idx = rng_.next_below(n);
    } else {
        const std::size_t c = dataset_->num_classes();
        for (auto& idx : batch) {
            const auto& members = by_class_[rng_.next_below(c)];
            idx = members[rng_.next_below(members.size())];
        }
    }
    return batch;
}

std::size_t BatchIterator::batches_per_epoch() const {
    const std::size_t n = dataset_->num_instances();
    return (n + batch_size_ - 1) / batch_size_;
}

} // namespace cbd
