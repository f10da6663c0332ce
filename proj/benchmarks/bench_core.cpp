#include "cbd/dataset.hpp"
#include "cbd/losses.hpp"
#include "cbd/model.hpp"
#include "cbd/sampling.hpp"
#include "cbd/tensor.hpp"
#include "cbd/train.hpp"

#include <benchmark/benchmark.h>

using namespace cbd;

namespace {

std::vector<double> gauss_values(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.gauss();
    return v;
}

void BM_MatmulForward(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    Rng rng(1);
    auto a = Tensor::constant({n, n}, gauss_values(rng, n * n));
    auto b = Tensor::constant({n, n}, gauss_values(rng, n * n));
    for (auto _ : state) {
        benchmark::DoNotOptimize(matmul(a, b));
    }
    state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_MatmulForward)->Arg(16)->Arg(64)->Arg(128);

void BM_MlpForwardBackward(benchmark::State& state) {
    const auto batch = static_cast<std::size_t>(state.range(0));
    Rng rng(2);
    Model model = init_model({{16, 64, 32}, 20, 16.0, 0}, 3);
    auto x = Tensor::constant({batch, 16}, gauss_values(rng, batch * 16));
    std::vector<int> labels(batch);
    for (auto& y : labels) y = static_cast<int>(rng.next_below(20));
    for (auto _ : state) {
        for (auto& p : model.parameters()) p.zero_grad();
        Tensor loss = cross_entropy(model.logits(x), labels);
        loss.backward();
        benchmark::DoNotOptimize(loss.item());
    }
    state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_MlpForwardBackward)->Arg(16)->Arg(64)->Arg(256);

void BM_FeatureDistillStep(benchmark::State& state) {
    const std::size_t batch = 64;
    Rng rng(3);
    Model student = init_model({{16, 64, 32}, 20, 16.0, 0}, 4);
    Model teacher = init_model({{16, 64, 32}, 20, 16.0, 0}, 5);
    freeze_model(teacher);
    auto x = Tensor::constant({batch, 16}, gauss_values(rng, batch * 16));
    std::vector<int> labels(batch);
    for (auto& y : labels) y = static_cast<int>(rng.next_below(20));
    DistillConfig cfg{0.4, 100.0, 2.0, DistillMode::feature, 1};
    SgdOptimizer opt(student.trainable_parameters(), 0.9);
    for (auto _ : state) {
        Tensor v = student.extractor.forward(x);
        Tensor z = student.classifier.forward(v);
        Tensor v_hat = teacher.extractor.forward(x);
        Tensor loss = cbd_loss(z, labels, v, v_hat, cfg);
        opt.zero_grad();
        loss.backward();
        opt.step(0.1);
        benchmark::DoNotOptimize(loss.item());
    }
    state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_FeatureDistillStep);

void BM_ClassBalancedSampling(benchmark::State& state) {
    LongTailProfile p;
    p.num_classes = 20;
    p.head_count = 200;
    p.tail_count = 5;
    p.feature_dim = 4;
    const auto data = synthesize(p);
    BatchIterator it(data.train, 64, {SamplingKind::class_balanced, 9});
    for (auto _ : state) {
        benchmark::DoNotOptimize(it.next_batch());
    }
    state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_ClassBalancedSampling);

} // namespace

BENCHMARK_MAIN();
