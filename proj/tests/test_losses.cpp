#include "cbd/losses.hpp"

#include "cbd/errors.hpp"
#include "cbd/model.hpp"
#include "support/gradcheck.hpp"
#include "support/random_tensors.hpp"

#include <doctest.h>

#include <cmath>

using namespace cbd;
using cbd::testing::finite_difference_check;
using cbd::testing::random_constant;
using cbd::testing::random_parameter;

namespace {

DistillConfig cfg_for(DistillMode mode, double alpha = 0.4, double beta = 100.0, double t = 2.0,
                      std::size_t k = 1) {
    DistillConfig cfg;
    cfg.mode = mode;
    cfg.alpha = alpha;
    cfg.beta = beta;
    cfg.temperature = t;
    cfg.teacher_count = k;
    return cfg;
}

} // namespace

TEST_CASE("cross entropy anchors") {
    // huge margin at the true class
    auto confident = Tensor::constant({1, 3}, {100, 0, 0});
    CHECK(cross_entropy(confident, {0}).item() < 1e-6);

    // uniform logits, c = 3 -> ln 3
    auto uniform = Tensor::constant({1, 3}, {0.5, 0.5, 0.5});
    CHECK(cross_entropy(uniform, {2}).item() == doctest::Approx(std::log(3.0)).epsilon(1e-12));

    // -log softmax([1,2])[1] computed by hand
    auto z = Tensor::constant({1, 2}, {1, 2});
    CHECK(cross_entropy(z, {1}).item() == doctest::Approx(0.31326).epsilon(1e-4));

    CHECK_THROWS_AS(cross_entropy(z, {5}), config_error);
}

TEST_CASE("feature distance anchors and range") {
    auto v = Tensor::constant({1, 2}, {3, 4});
    CHECK(feature_distance(v, v).item() == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));

    auto a = Tensor::constant({1, 2}, {1, 0});
    auto b = Tensor::constant({1, 2}, {0, 1});
    CHECK(feature_distance(a, b).item() == doctest::Approx(1.0).epsilon(1e-12));

    auto c = Tensor::constant({1, 2}, {-2, 0});
    CHECK(feature_distance(a, c).item() == doctest::Approx(2.0).epsilon(1e-12));

    Rng rng(17);
    for (int trial = 0; trial < 30; ++trial) {
        auto x = random_constant(rng, {4, 6});
        auto y = random_constant(rng, {4, 6});
        const double d = feature_distance(x, y).item();
        CHECK(d >= 0.0);
        CHECK(d <= 2.0);
        // zero iff the cosine similarity is 1
        CHECK(feature_distance(x, x).item() <= 1e-9);
    }

    // zero-norm rows are guarded by the eps normalization
    auto zero = Tensor::constant({1, 2}, {0, 0});
    CHECK(std::isfinite(feature_distance(zero, a).item()));
}

TEST_CASE("cbd loss composition") {
    Rng rng(5);
    auto logits = random_parameter(rng, {3, 4});
    auto v = random_parameter(rng, {3, 5});
    auto v_hat = random_constant(rng, {3, 5});
    const std::vector<int> labels{0, 2, 3};

    const double ce = cross_entropy(logits, labels).item();
    const double fd = feature_distance(v, v_hat).item();

    SUBCASE("alpha=0 equals cross entropy exactly") {
        CHECK(cbd_loss(logits, labels, v, v_hat, cfg_for(DistillMode::feature, 0.0)).item() == ce);
    }
    SUBCASE("alpha=1 equals beta * feature distance exactly") {
        CHECK(cbd_loss(logits, labels, v, v_hat, cfg_for(DistillMode::feature, 1.0)).item() ==
              100.0 * fd);
    }
    SUBCASE("default-knob arithmetic: alpha=0.4, beta=100, CE=1, l_F=0.25 -> 10.6") {
        const double alpha = 0.4, beta = 100.0;
        CHECK((1.0 - alpha) * 1.0 + alpha * beta * 0.25 == doctest::Approx(10.6).epsilon(1e-12));
        // same combination on live tensors
        const double loss =
            cbd_loss(logits, labels, v, v_hat, cfg_for(DistillMode::feature, alpha, beta)).item();
        CHECK(loss == doctest::Approx(0.6 * ce + 40.0 * fd).epsilon(1e-12));
    }
    SUBCASE("linear in alpha: L(a) = CE + a * (beta * l_F - CE)") {
        for (double a : {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}) {
            const double loss =
                cbd_loss(logits, labels, v, v_hat, cfg_for(DistillMode::feature, a)).item();
            CHECK(loss == doctest::Approx(ce + a * (100.0 * fd - ce)).epsilon(1e-12));
        }
    }
    SUBCASE("alpha outside [0,1] rejected") {
        CHECK_THROWS_AS(cbd_loss(logits, labels, v, v_hat, cfg_for(DistillMode::feature, 1.5)),
                        config_error);
    }
}

TEST_CASE("no gradient reaches teacher descriptors or teacher logits") {
    Rng rng(29);
    auto logits = random_parameter(rng, {2, 3});
    auto v = random_parameter(rng, {2, 4});
    auto v_hat = random_parameter(rng, {2, 4});   // deliberately requires_grad
    auto z_hat = random_parameter(rng, {2, 3});

    cbd_loss(logits, {0, 1}, v, v_hat, cfg_for(DistillMode::feature)).backward();
    CHECK_FALSE(v_hat.has_grad());
    CHECK(v.has_grad());

    classifier_distill_loss(logits, {0, 1}, z_hat, cfg_for(DistillMode::classifier)).backward();
    CHECK_FALSE(z_hat.has_grad());

    hybrid_loss(logits, {0, 1}, v, v_hat, z_hat, cfg_for(DistillMode::hybrid)).backward();
    CHECK_FALSE(v_hat.has_grad());
    CHECK_FALSE(z_hat.has_grad());
}

TEST_CASE("classifier distillation: stationary at matching distributions") {
    Rng rng(11);
    const std::vector<int> labels{0, 1};

    // pure distillation (alpha=1): gradient w.r.t. z vanishes at z == z_hat
    auto z_hat = random_constant(rng, {2, 3});
    auto z = Tensor::parameter(z_hat.shape(), z_hat.values());
    classifier_distill_loss(z, labels, z_hat, cfg_for(DistillMode::classifier, 1.0)).backward();
    double norm = 0.0;
    for (double g : z.grad()) norm += g * g;
    CHECK(std::sqrt(norm) < 1e-8);

    // and at z == z_hat + constant shift (softmax shift invariance)
    std::vector<double> shifted = z_hat.values();
    for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += 3.7;
    auto zs = Tensor::parameter(z_hat.shape(), shifted);
    classifier_distill_loss(zs, labels, z_hat, cfg_for(DistillMode::classifier, 1.0)).backward();
    norm = 0.0;
    for (double g : zs.grad()) norm += g * g;
    CHECK(std::sqrt(norm) < 1e-8);
}

TEST_CASE("classifier distillation: T=1, alpha=1 is plain soft-target cross-entropy") {
    Rng rng(13);
    auto z = random_parameter(rng, {3, 4});
    auto z_hat = random_constant(rng, {3, 4});
    const std::vector<int> labels{0, 1, 2};

    const double loss =
        classifier_distill_loss(z, labels, z_hat, cfg_for(DistillMode::classifier, 1.0, 100.0, 1.0))
            .item();

    // direct soft-target CE with teacher probabilities
    auto p_hat = softmax(z_hat);
    auto ls = log_softmax(z);
    double expected = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 4; ++j) expected -= p_hat.at(i, j) * ls.at(i, j);
    }
    expected /= 3.0;
    CHECK(loss == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("hybrid loss decomposition") {
    Rng rng(19);
    auto logits = random_parameter(rng, {2, 3});
    auto v = random_parameter(rng, {2, 4});
    auto v_hat = random_constant(rng, {2, 4});
    auto z_hat = random_constant(rng, {2, 3});
    const std::vector<int> labels{1, 2};
    const auto cfg = cfg_for(DistillMode::hybrid, 0.4, 100.0, 2.0);

    SUBCASE("alpha=0 reduces to plain CE") {
        const double loss =
            hybrid_loss(logits, labels, v, v_hat, z_hat, cfg_for(DistillMode::hybrid, 0.0)).item();
        CHECK(loss == cross_entropy(logits, labels).item());
    }
    SUBCASE("matching features zero the feature term") {
        // v == v_hat: remaining loss is (1-a)*CE + a/2 * T^2 * soft CE
        auto v_copy = Tensor::parameter(v_hat.shape(), v_hat.values());
        const double loss = hybrid_loss(logits, labels, v_copy, v_hat, z_hat, cfg).item();
        DistillConfig cls = cfg_for(DistillMode::classifier, cfg.alpha, cfg.beta, cfg.temperature);
        const double ce = cross_entropy(logits, labels).item();
        const double cls_full = classifier_distill_loss(logits, labels, z_hat, cls).item();
        // classifier_distill_loss = (1-a)*CE + a*T^2*soft, so extract the soft part
        const double soft_term = (cls_full - (1.0 - cfg.alpha) * ce) / cfg.alpha;
        CHECK(loss ==
              doctest::Approx((1.0 - cfg.alpha) * ce + cfg.alpha * 0.5 * soft_term).epsilon(1e-9));
    }
    SUBCASE("finite-difference gradient check") {
        auto report = finite_difference_check({logits, v}, [&] {
            return hybrid_loss(logits, labels, v, v_hat, z_hat, cfg);
        });
        CHECK(report.ok(1e-4));
    }
}

TEST_CASE("ensemble loss") {
    Rng rng(37);
    const std::vector<int> labels{0, 1};

    SUBCASE("K=1 with identity projection equals cbd_loss within 1e-12") {
        auto logits = random_parameter(rng, {2, 3});
        auto v = random_parameter(rng, {2, 4});
        auto v_hat = random_constant(rng, {2, 4});

        ProjectionHead identity(4, 1);
        Tensor projected = identity.forward(v);
        Tensor concat = concat_normalized_features({v_hat});

        const double ens =
            ensemble_loss(logits, labels, projected, concat, cfg_for(DistillMode::ensemble)).item();
        const double plain =
            cbd_loss(logits, labels, v, v_hat, cfg_for(DistillMode::feature)).item();
        CHECK(ens == doctest::Approx(plain).epsilon(1e-12));
    }

    SUBCASE("projected feature parallel to the concatenation zeroes the distillation term") {
        auto logits = random_parameter(rng, {1, 3});
        auto v_hat = random_constant(rng, {1, 4});
        Tensor concat = concat_normalized_features({v_hat});
        auto hv = Tensor::parameter(concat.shape(), concat.values());
        const double full =
            ensemble_loss(logits, {0}, hv, concat, cfg_for(DistillMode::ensemble, 1.0)).item();
        CHECK(full <= 1e-9); // alpha=1: only the distillation term remains
    }

    SUBCASE("K=2 concatenated cosine matches a hand computation") {
        auto t1 = Tensor::constant({1, 2}, {3, 4});  // normalizes to [0.6, 0.8]
        auto t2 = Tensor::constant({1, 2}, {0, 2});  // normalizes to [0, 1]
        Tensor concat = concat_normalized_features({t1, t2});
        CHECK(concat.values() == std::vector<double>{0.6, 0.8, 0.0, 1.0});

        auto hv = Tensor::parameter({1, 4}, {1.0, 0.0, 1.0, 0.0});
        // cos = (0.6 + 0) / (sqrt(2) * sqrt(0.36+0.64+0+1)) computed by hand
        const double cos_expected = 0.6 / (std::sqrt(2.0) * std::sqrt(2.0));
        auto logits = random_parameter(rng, {1, 3});
        const double loss =
            ensemble_loss(logits, {0}, hv, concat, cfg_for(DistillMode::ensemble, 1.0, 1.0, 2.0, 2))
                .item();
        CHECK(loss == doctest::Approx(1.0 - cos_expected).epsilon(1e-12));
    }

    SUBCASE("width mismatch is a dimension error") {
        auto logits = random_parameter(rng, {1, 3});
        auto hv = random_parameter(rng, {1, 4});
        auto bad = random_constant(rng, {1, 6});
        CHECK_THROWS_AS(
            ensemble_loss(logits, {0}, hv, bad, cfg_for(DistillMode::ensemble, 0.4, 100.0, 2.0, 2)),
            dimension_error);
    }
}

TEST_CASE("every loss passes finite-difference checks across seeds") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Rng rng(seed * 71);
        const std::vector<int> labels{0, 2, 1};
        auto logits = random_parameter(rng, {3, 3});
        auto v = random_parameter(rng, {3, 4});
        auto v_hat = random_constant(rng, {3, 4});
        auto z_hat = random_constant(rng, {3, 3});

        CHECK(finite_difference_check({logits}, [&] { return cross_entropy(logits, labels); })
                  .ok(1e-4));
        CHECK(finite_difference_check({v}, [&] { return feature_distance(v, v_hat); }).ok(1e-4));
        CHECK(finite_difference_check({logits, v}, [&] {
                  return cbd_loss(logits, labels, v, v_hat, cfg_for(DistillMode::feature));
              }).ok(1e-4));
        CHECK(finite_difference_check({logits}, [&] {
                  return classifier_distill_loss(logits, labels, z_hat,
                                                 cfg_for(DistillMode::classifier));
              }).ok(1e-4));
        CHECK(finite_difference_check({logits, v}, [&] {
                  return hybrid_loss(logits, labels, v, v_hat, z_hat, cfg_for(DistillMode::hybrid));
              }).ok(1e-4));

        auto hv = random_parameter(rng, {3, 8});
        auto teacher_a = random_constant(rng, {3, 4});
        auto teacher_b = random_constant(rng, {3, 4});
        Tensor concat = concat_normalized_features({teacher_a, teacher_b});
        CHECK(finite_difference_check({logits, hv}, [&] {
                  return ensemble_loss(logits, labels, hv, concat,
                                       cfg_for(DistillMode::ensemble, 0.4, 100.0, 2.0, 2));
              }).ok(1e-4));
    }
}
