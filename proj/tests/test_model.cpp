#include "cbd/model.hpp"

#include "cbd/errors.hpp"
#include "support/gradcheck.hpp"
#include "support/random_tensors.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>

using namespace cbd;
using cbd::testing::finite_difference_check;
using cbd::testing::random_constant;

namespace {

FeatureExtractor identity_extractor(std::size_t dim) {
    Rng rng(0);
    FeatureExtractor fe({dim, dim}, rng);
    std::vector<double> eye(dim * dim, 0.0);
    for (std::size_t i = 0; i < dim; ++i) eye[i * dim + i] = 1.0;
    fe.layers()[0].weight = Tensor::parameter({dim, dim}, eye);
    fe.layers()[0].bias = Tensor::parameter({dim}, std::vector<double>(dim, 0.0));
    return fe;
}

// Independent nearest-centroid oracle: O(n*c) cosine comparison with explicit
// normalization of both sides and lowest-id tie-break.
int brute_force_ncm(const std::vector<double>& centroid_sums, const std::vector<std::size_t>& counts,
                    std::size_t dim, const double* query) {
    const std::size_t c = counts.size();
    int best = -1;
    double best_cos = -2.0;
    const double qnorm = [&] {
        double sq = 0.0;
        for (std::size_t k = 0; k < dim; ++k) sq += query[k] * query[k];
        return std::max(std::sqrt(sq), 1e-12);
    }();
    for (std::size_t j = 0; j < c; ++j) {
        std::vector<double> centroid(dim, 0.0);
        for (std::size_t k = 0; k < dim; ++k) centroid[k] = centroid_sums[j * dim + k];
        double sq = 0.0;
        for (double v : centroid) sq += v * v;
        const double norm = std::max(std::sqrt(sq), 1e-12);
        double cosv = 0.0;
        for (std::size_t k = 0; k < dim; ++k) cosv += (centroid[k] / norm) * (query[k] / qnorm);
        if (cosv > best_cos + 1e-15) {
            best_cos = cosv;
            best = static_cast<int>(j);
        }
    }
    return best;
}

} // namespace

TEST_CASE("extractor: identity weights pass inputs through, zero weights zero out") {
    auto fe = identity_extractor(3);
    auto x = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(fe.forward(x).values() == x.values());

    Rng rng(2);
    FeatureExtractor zero({3, 4}, rng);
    zero.layers()[0].weight = Tensor::parameter({3, 4}, std::vector<double>(12, 0.0));
    const Tensor zeroed = zero.forward(x);
    for (double v : zeroed.values()) CHECK(v == 0.0);

    // zero weights propagate the bias deterministically
    zero.layers()[0].bias = Tensor::parameter({4}, {0.5, -1.0, 2.0, 0.0});
    const Tensor biased = zero.forward(x);
    for (std::size_t i = 0; i < biased.rows(); ++i) {
        CHECK(biased.at(i, 0) == 0.5);
        CHECK(biased.at(i, 1) == -1.0);
        CHECK(biased.at(i, 2) == 2.0);
        CHECK(biased.at(i, 3) == 0.0);
    }

    CHECK_THROWS_AS(fe.forward(Tensor::constant({1, 2}, {1, 2})), dimension_error);
}

TEST_CASE("extractor gradients match finite differences") {
    Rng rng(6);
    FeatureExtractor fe({5, 8, 4}, rng);
    auto x = random_constant(rng, {3, 5});
    auto report =
        finite_difference_check(fe.parameters(), [&] { return sum(fe.forward(x)); });
    CHECK(report.ok(1e-4));
}

TEST_CASE("cosine classifier: alignment, orthogonality, rescaling invariance") {
    Rng rng(3);
    CosineClassifier clf(4, 3, 16.0, rng);
    clf.weight() = Tensor::parameter({3, 4}, {1, 0, 0, 0,   // class 0 -> e1
                                              0, 2, 0, 0,   // class 1 -> e2 (unnormalized)
                                              0, 0, 5, 0}); // class 2 -> e3

    auto v = Tensor::constant({1, 4}, {3, 0, 0, 0}); // parallel to class 0
    auto z = clf.forward(v);
    CHECK(z.at(0, 0) == doctest::Approx(16.0).epsilon(1e-12));
    CHECK(z.at(0, 1) == doctest::Approx(0.0).scale(16.0).epsilon(1e-12));
    CHECK(z.at(0, 2) == doctest::Approx(0.0).scale(16.0).epsilon(1e-12));
    CHECK(z.at(0, 0) > z.at(0, 1));

    // positive rescaling leaves logits unchanged across [1e-3, 1e3]
    auto base = clf.forward(Tensor::constant({1, 4}, {0.3, -1.2, 0.7, 2.0}));
    for (double s : {1e-3, 0.1, 7.3, 1e3}) {
        auto scaled = clf.forward(
            Tensor::constant({1, 4}, {0.3 * s, -1.2 * s, 0.7 * s, 2.0 * s}));
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(std::fabs(scaled.at(0, j) - base.at(0, j)) <= 1e-9);
        }
    }
}

TEST_CASE("cosine logits are bounded by gamma") {
    Rng rng(8);
    CosineClassifier clf(6, 5, 16.0, rng);
    for (int trial = 0; trial < 20; ++trial) {
        auto v = random_constant(rng, {4, 6}, 10.0);
        auto z = clf.forward(v);
        for (double logit : z.values()) CHECK(std::fabs(logit) <= 16.0 + 1e-9);
    }
}

TEST_CASE("projection head: identity at K=1 and widening at K=2") {
    ProjectionHead h1(3, 1);
    auto v = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(h1.forward(v).values() == v.values());

    ProjectionHead h2(2, 2);
    auto u = Tensor::constant({1, 2}, {1.5, -2.0});
    auto p = h2.forward(u);
    CHECK(p.shape() == std::vector<std::size_t>{1, 4});
    CHECK(p.values() == std::vector<double>{1.5, -2.0, 1.5, -2.0}); // stacked identities
}

TEST_CASE("gradients flow through projection and classifier") {
    Rng rng(12);
    FeatureExtractor fe({4, 6}, rng);
    ProjectionHead proj(6, 2);
    CosineClassifier clf(12, 3, 16.0, rng);
    auto x = random_constant(rng, {3, 4});
    std::vector<Tensor> params = fe.parameters();
    for (auto& t : proj.parameters()) params.push_back(t);
    for (auto& t : clf.parameters()) params.push_back(t);
    auto forward = [&] {
        auto z = clf.forward(proj.forward(fe.forward(x)));
        return mean(mul(z, z));
    };
    CHECK(finite_difference_check(params, forward).ok(1e-4));
}

TEST_CASE("ncm: axis centroids, tie-break, brute-force agreement") {
    // two classes sitting on e1 / e2
    std::vector<double> feats{1, 0, 1, 0, 0, 1, 0, 1};
    std::vector<int> labels{0, 0, 1, 1};
    auto ncm = NcmClassifier::fit(feats, 2, labels, 2);

    const double q1[2] = {0.9, 0.1};
    CHECK(ncm.predict(q1) == 0);
    const double tie[2] = {0.5, 0.5};
    CHECK(ncm.predict(tie) == 0); // equidistant: lowest class id wins

    // random small instance vs independent brute force
    Rng rng(23);
    const std::size_t dim = 5, classes = 3, n = 40;
    std::vector<double> train(n * dim);
    std::vector<int> train_labels(n);
    std::vector<double> centroid_sums(classes * dim, 0.0);
    std::vector<std::size_t> counts(classes, 0);
    for (std::size_t i = 0; i < n; ++i) {
        train_labels[i] = static_cast<int>(rng.next_below(classes));
        double sq = 0.0;
        for (std::size_t k = 0; k < dim; ++k) {
            train[i * dim + k] = rng.gauss() + (train_labels[i] == static_cast<int>(k) ? 2.0 : 0.0);
            sq += train[i * dim + k] * train[i * dim + k];
        }
        const double norm = std::max(std::sqrt(sq), 1e-12);
        for (std::size_t k = 0; k < dim; ++k) {
            centroid_sums[static_cast<std::size_t>(train_labels[i]) * dim + k] +=
                train[i * dim + k] / norm;
        }
        counts[static_cast<std::size_t>(train_labels[i])]++;
    }
    for (std::size_t j = 0; j < classes; ++j) REQUIRE(counts[j] > 0);

    auto fitted = NcmClassifier::fit(train, dim, train_labels, classes);
    for (int q = 0; q < 50; ++q) {
        std::vector<double> query(dim);
        for (auto& v : query) v = rng.gauss();
        CHECK(fitted.predict(query.data()) ==
              brute_force_ncm(centroid_sums, counts, dim, query.data()));
    }
}

TEST_CASE("ncm rejects empty classes") {
    std::vector<double> feats{1, 0};
    std::vector<int> labels{0};
    CHECK_THROWS_AS(NcmClassifier::fit(feats, 2, labels, 2), config_error);
}

TEST_CASE("init: deterministic under seed, He-scaled, seed-sensitive") {
    ModelInit init;
    init.extractor_widths = {64, 64};
    init.num_classes = 4;
    Model a = init_model(init, 42);
    Model b = init_model(init, 42);
    CHECK(a.extractor.layers()[0].weight.values() == b.extractor.layers()[0].weight.values());
    CHECK(a.classifier.weight().values() == b.classifier.weight().values());

    Model c = init_model(init, 43);
    CHECK(a.extractor.layers()[0].weight.values() != c.extractor.layers()[0].weight.values());

    // empirical std of a 64x64 He layer within 20% of sqrt(2/64)
    const auto& w = a.extractor.layers()[0].weight.values();
    double mean = 0.0;
    for (double v : w) mean += v;
    mean /= static_cast<double>(w.size());
    double var = 0.0;
    for (double v : w) var += (v - mean) * (v - mean);
    var /= static_cast<double>(w.size());
    const double target = std::sqrt(2.0 / 64.0);
    CHECK(std::sqrt(var) == doctest::Approx(target).epsilon(0.2));

    // classifier rows are unit vectors
    for (std::size_t j = 0; j < 4; ++j) {
        double sq = 0.0;
        for (std::size_t k = 0; k < 64; ++k) {
            const double v = a.classifier.weight().at(j, k);
            sq += v * v;
        }
        CHECK(std::sqrt(sq) == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("checkpoint round-trip reproduces forward outputs exactly") {
    ModelInit init;
    init.extractor_widths = {4, 7, 3};
    init.num_classes = 5;
    init.gamma = 12.5;
    init.projection_teachers = 2;
    Model m = init_model(init, 7);
    // perturb projection so the round-trip is non-trivial
    for (auto& v : m.projection->weight().mutable_values()) v += 0.01 * v + 0.001;

    const auto path = std::filesystem::temp_directory_path() / "cbd_model.ckpt";
    save_model(m, path, config_hash_hex("test-config"));
    LoadedModel loaded = load_model(path);
    std::filesystem::remove(path);

    CHECK(loaded.config_hash == config_hash_hex("test-config"));
    CHECK(loaded.model.classifier.gamma() == 12.5);
    Rng rng(3);
    auto x = random_constant(rng, {6, 4});
    CHECK(loaded.model.logits(x).values() == m.logits(x).values());
    CHECK(loaded.model.features(x).values() == m.features(x).values());
}
