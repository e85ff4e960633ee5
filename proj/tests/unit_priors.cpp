#include <doctest.h>

#include <cmath>

#include "evfl/errors.hpp"
#include "evfl/priors.hpp"
#include "evfl/prototypes.hpp"
#include "support/oracles.hpp"

using namespace evfl;

TEST_CASE("init_prior is uniform and exactly normalized for power-of-two sizes") {
    PriorVector p = init_prior(4);
    REQUIRE(p.classes() == 4);
    double sum = 0.0;
    for (double v : p.p) {
        CHECK(v == 0.25);
        sum += v;
    }
    CHECK(sum == 1.0);  // 4 * 0.25 is exact in binary
    CHECK_NOTHROW(validate_prior(p));
    CHECK_THROWS_AS(init_prior(0), DomainError);
}

TEST_CASE("validate_prior rejects mass errors and negatives") {
    PriorVector bad;
    bad.p = {0.6, 0.6};
    CHECK_THROWS_AS(validate_prior(bad), DomainError);
    bad.p = {1.2, -0.2};
    CHECK_THROWS_AS(validate_prior(bad), DomainError);
    bad.p = {};
    CHECK_THROWS_AS(validate_prior(bad), DomainError);
}

TEST_CASE("compute_gamma is the minority fraction with absent classes forcing zero") {
    GammaParam g = compute_gamma({1, 9});
    CHECK(g.value == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(g.counts == std::vector<long long>{1, 9});

    CHECK(compute_gamma({5, 0, 5}).value == 0.0);
    CHECK(compute_gamma({0, 0}).value == 0.0);
    CHECK(compute_gamma({7, 7, 7}).value == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("mix_prior interpolates and keeps the simplex") {
    PriorVector global, local;
    global.p = {0.5, 0.5};
    local.p = {0.9, 0.1};
    PriorVector mixed = mix_prior(global, local, 0.3);
    // 0.3 * 0.5 + 0.7 * 0.9 = 0.78 and 0.3 * 0.5 + 0.7 * 0.1 = 0.22
    CHECK(mixed.p[0] == doctest::Approx(0.78).epsilon(1e-12));
    CHECK(mixed.p[1] == doctest::Approx(0.22).epsilon(1e-12));

    PriorVector at_zero = mix_prior(global, local, 0.0);
    CHECK(at_zero.p[0] == doctest::Approx(0.9).epsilon(1e-15));
    PriorVector at_one = mix_prior(global, local, 1.0);
    CHECK(at_one.p[0] == doctest::Approx(0.5).epsilon(1e-15));

    CHECK_THROWS_AS(mix_prior(global, local, -0.1), DomainError);
    CHECK_THROWS_AS(mix_prior(global, local, 1.1), DomainError);
}

TEST_CASE("estimate_local_prior averages the plan columns") {
    PrototypeSet protos{Matrix(2, 2, {1, 0, 0, 1})};
    Matrix reps(1, 2, {1, 0});
    PriorVector prev = init_prior(2);
    PriorVector est = estimate_local_prior(reps, protos, prev);
    // One sample: the estimate is its plan row, softmax(1, 0).
    CHECK(est.p[0] == doctest::Approx(0.7310585786300049).epsilon(1e-9));
    CHECK(est.p[1] == doctest::Approx(0.2689414213699951).epsilon(1e-9));

    // A one-hot prior is a fixed point: every plan row collapses onto it.
    PriorVector hot;
    hot.p = {1.0, 0.0};
    PriorVector still = estimate_local_prior(reps, protos, hot);
    CHECK(still.p[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(still.p[1] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("repeated estimation recovers a planted prior on well-separated data") {
    // Two orthogonal prototypes, representations drawn around 6x the
    // prototype directions so the kernel dominates the prior. The mix is
    // 70/30 over 200 samples; the EM iteration should land within a few
    // percent in total variation.
    Rng rng(901);
    std::size_t d = 4;
    PrototypeSet protos = PrototypeSet{Matrix(2, d)};
    protos.mu(0, 0) = 1.0;
    protos.mu(1, 1) = 1.0;
    std::vector<double> truth = {0.7, 0.3};
    std::size_t n = 200;
    Matrix reps(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t z = i < static_cast<std::size_t>(truth[0] * n) ? 0 : 1;
        for (std::size_t j = 0; j < d; ++j)
            reps(i, j) = 6.0 * protos.mu(z, j) + 0.3 * rng.gaussian(0.0, 1.0);
    }
    PriorVector prior = init_prior(2);
    for (int it = 0; it < 60; ++it) prior = estimate_local_prior(reps, protos, prior);
    double tv = 0.5 * (std::fabs(prior.p[0] - truth[0]) + std::fabs(prior.p[1] - truth[1]));
    CHECK(tv < 0.05);
}

TEST_CASE("average_global_prior is the renormalized mean") {
    PriorVector a, b;
    a.p = {0.8, 0.2};
    b.p = {0.4, 0.6};
    PriorVector avg = average_global_prior({a, b});
    CHECK(avg.p[0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(avg.p[1] == doctest::Approx(0.4).epsilon(1e-12));
    CHECK_THROWS_AS(average_global_prior({}), DomainError);
}
