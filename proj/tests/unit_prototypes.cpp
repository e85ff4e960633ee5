#include <doctest.h>

#include <cmath>

#include "evfl/errors.hpp"
#include "evfl/prototypes.hpp"
#include "support/oracles.hpp"

using namespace evfl;

namespace {

PriorVector uniform(std::size_t z) { return init_prior(z); }

PrototypeSet orthonormal_protos(std::size_t z, std::size_t d) {
    REQUIRE(d >= z);
    Matrix mu(z, d);
    for (std::size_t i = 0; i < z; ++i) mu(i, i) = 1.0;
    return PrototypeSet{mu};
}

}  // namespace

TEST_CASE("plan_to_prototypes matches the 1/(1+e) oracle") {
    // mu0 = e0, mu1 = e1, f = e0, uniform prior: scores (1, 0), so the row is
    // softmax(1, 0) = [e/(e+1), 1/(e+1)] = [0.7310585786300049, 0.2689414213699951].
    PrototypeSet protos = orthonormal_protos(2, 2);
    Matrix reps(1, 2, {1, 0});
    TransportPlan plan = plan_to_prototypes(protos, uniform(2), reps);
    REQUIRE(plan.orientation == PlanOrientation::samples_to_protos);
    CHECK(plan.probs(0, 0) == doctest::Approx(0.7310585786300049).epsilon(1e-9));
    CHECK(plan.probs(0, 1) == doctest::Approx(0.2689414213699951).epsilon(1e-9));
}

TEST_CASE("a one-hot prior pins the plan to that class") {
    PrototypeSet protos = orthonormal_protos(2, 3);
    Matrix reps = normalize_rows(testsup::random_matrix(6, 3, 201));
    PriorVector prior;
    prior.p = {1.0, 0.0};
    TransportPlan plan = plan_to_prototypes(protos, prior, reps);
    for (std::size_t i = 0; i < plan.probs.rows(); ++i) {
        CHECK(plan.probs(i, 0) == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(plan.probs(i, 1) == doctest::Approx(0.0).epsilon(1e-15));
    }
}

TEST_CASE("plans are row-stochastic on random instances") {
    for (std::uint64_t trial = 0; trial < 50; ++trial) {
        Rng rng(300 + trial);
        std::size_t z = 2 + rng.index(5);
        std::size_t d = z + rng.index(4);
        std::size_t b = 1 + rng.index(12);
        PrototypeSet protos{normalize_rows(testsup::random_matrix(z, d, 400 + trial))};
        Matrix reps = normalize_rows(testsup::random_matrix(b, d, 500 + trial));

        TransportPlan fwd = plan_to_prototypes(protos, uniform(z), reps);
        for (std::size_t i = 0; i < fwd.probs.rows(); ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < fwd.probs.cols(); ++j) {
                CHECK(fwd.probs(i, j) >= 0.0);
                sum += fwd.probs(i, j);
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
        }

        for (BatchWeighting w :
             {BatchWeighting::uniform, BatchWeighting::pseudo_class_prior}) {
            TransportPlan bwd = plan_to_samples(protos, uniform(z), reps, w);
            REQUIRE(bwd.orientation == PlanOrientation::protos_to_samples);
            for (std::size_t i = 0; i < bwd.probs.rows(); ++i) {
                double sum = 0.0;
                for (std::size_t j = 0; j < bwd.probs.cols(); ++j) {
                    CHECK(bwd.probs(i, j) >= 0.0);
                    sum += bwd.probs(i, j);
                }
                CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
            }
        }
    }
}

TEST_CASE("identical samples share the backward plan evenly") {
    PrototypeSet protos = orthonormal_protos(2, 2);
    Matrix reps(4, 2);
    for (std::size_t i = 0; i < 4; ++i) reps(i, 0) = 1.0;
    TransportPlan plan = plan_to_samples(protos, uniform(2), reps);
    for (std::size_t z = 0; z < 2; ++z)
        for (std::size_t n = 0; n < 4; ++n)
            CHECK(plan.probs(z, n) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("both transport losses vanish when the batch sits on the prototype") {
    // One class: the plan is the single column of ones and the cosine cost of
    // a point against itself is zero.
    PrototypeSet protos{Matrix(1, 3, {1, 0, 0})};
    Matrix reps(5, 3);
    for (std::size_t i = 0; i < 5; ++i) reps(i, 0) = 1.0;
    PriorVector prior;
    prior.p = {1.0};

    TransportPlan fwd = plan_to_prototypes(protos, prior, reps);
    LossGrads f = loss_f_to_mu(fwd, protos, reps, CostMode::cosine);
    CHECK(f.value == doctest::Approx(0.0).epsilon(1e-12));

    TransportPlan bwd = plan_to_samples(protos, prior, reps);
    LossGrads m = loss_mu_to_f(bwd, protos, reps, prior, CostMode::cosine);
    CHECK(m.value == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("loss_f_to_mu gradients agree with finite differences") {
    for (CostMode mode : {CostMode::cosine, CostMode::neg_log_prob}) {
        CAPTURE(static_cast<int>(mode));
        std::size_t z = 3, d = 4, b = 5;
        PrototypeSet protos{normalize_rows(testsup::random_matrix(z, d, 601))};
        Matrix reps = normalize_rows(testsup::random_matrix(b, d, 602));
        PriorVector prior;
        prior.p = {0.5, 0.3, 0.2};

        auto value_at = [&](const Matrix& r, const PrototypeSet& pr) {
            TransportPlan plan = plan_to_prototypes(pr, prior, r);
            return loss_f_to_mu(plan, pr, r, mode).value;
        };
        TransportPlan plan = plan_to_prototypes(protos, prior, reps);
        LossGrads g = loss_f_to_mu(plan, protos, reps, mode);

        auto f_reps = [&](const std::vector<double>& flat) {
            return value_at(Matrix(b, d, flat), protos);
        };
        CHECK(testsup::fd_max_rel_err(reps.data(), f_reps, g.d_reps.data()) < 1e-4);

        auto f_protos = [&](const std::vector<double>& flat) {
            return value_at(reps, PrototypeSet{Matrix(z, d, flat)});
        };
        CHECK(testsup::fd_max_rel_err(protos.mu.data(), f_protos, g.d_protos.data()) <
              1e-4);
    }
}

TEST_CASE("loss_mu_to_f gradients agree with finite differences") {
    for (CostMode mode : {CostMode::cosine, CostMode::neg_log_prob}) {
        CAPTURE(static_cast<int>(mode));
        std::size_t z = 3, d = 4, b = 6;
        PrototypeSet protos{normalize_rows(testsup::random_matrix(z, d, 603))};
        Matrix reps = normalize_rows(testsup::random_matrix(b, d, 604));
        PriorVector prior;
        prior.p = {0.2, 0.5, 0.3};

        auto value_at = [&](const Matrix& r, const PrototypeSet& pr) {
            TransportPlan plan = plan_to_samples(pr, prior, r);
            return loss_mu_to_f(plan, pr, r, prior, mode).value;
        };
        TransportPlan plan = plan_to_samples(protos, prior, reps);
        LossGrads g = loss_mu_to_f(plan, protos, reps, prior, mode);

        auto f_reps = [&](const std::vector<double>& flat) {
            return value_at(Matrix(b, d, flat), protos);
        };
        CHECK(testsup::fd_max_rel_err(reps.data(), f_reps, g.d_reps.data()) < 1e-4);

        auto f_protos = [&](const std::vector<double>& flat) {
            return value_at(reps, PrototypeSet{Matrix(z, d, flat)});
        };
        CHECK(testsup::fd_max_rel_err(protos.mu.data(), f_protos, g.d_protos.data()) <
              1e-4);
    }
}

TEST_CASE("local_loss gradients agree with finite differences through the extractor") {
    for (CostMode mode : {CostMode::cosine, CostMode::neg_log_prob}) {
        CAPTURE(static_cast<int>(mode));
        Rng rng(605);
        MlpParams extractor = make_mlp(5, {6}, 4, rng);
        Matrix batch = testsup::random_matrix(7, 5, 606);
        PrototypeSet protos{normalize_rows(testsup::random_matrix(3, 4, 607))};
        PriorVector prior;
        prior.p = {0.4, 0.35, 0.25};
        LocalLossOptions opts;
        opts.phi = 0.1;
        opts.cost = mode;

        LocalLossResult r = local_loss(extractor, batch, protos, prior, opts);
        CHECK(r.value ==
              doctest::Approx(r.f_to_mu + r.mu_to_f +
                              0.5 * opts.phi * params_frobenius_sq(extractor))
                  .epsilon(1e-12));

        auto f = [&](const std::vector<double>& flat) {
            MlpParams q = extractor;
            unflatten_params(q, flat);
            return local_loss(q, batch, protos, prior, opts).value;
        };
        CHECK(testsup::fd_max_rel_err(flatten_params(extractor), f,
                                      flatten_grads(r.grads)) < 1e-4);
    }
}

TEST_CASE("local_loss drops dead rows instead of dying") {
    MlpParams id = identity_affine(3);
    PrototypeSet protos = PrototypeSet{Matrix(2, 3, {1, 0, 0, 0, 1, 0})};
    PriorVector prior;
    prior.p = {0.5, 0.5};
    LocalLossOptions opts;
    opts.phi = 0.0;

    Matrix with_zero(3, 3, {1, 0, 0, 0, 0, 0, 0, 2, 0});
    Matrix without(2, 3, {1, 0, 0, 0, 2, 0});
    LocalLossResult a = local_loss(id, with_zero, protos, prior, opts);
    LocalLossResult b = local_loss(id, without, protos, prior, opts);
    CHECK(a.value == doctest::Approx(b.value).epsilon(1e-12));

    // A batch with nothing left carries no transport signal, only the decay
    // term, so training over a stream of batches never has to special-case it.
    Matrix all_zero(2, 3);
    LocalLossResult empty = local_loss(id, all_zero, protos, prior, opts);
    CHECK(empty.value == 0.0);
    for (const Matrix& w : empty.grads.weights)
        for (double v : w.data()) CHECK(v == 0.0);
}

TEST_CASE("theta_conf filters low-confidence samples") {
    MlpParams id = identity_affine(2);
    PrototypeSet protos = PrototypeSet{Matrix(2, 2, {1, 0, 0, 1})};
    PriorVector prior;
    prior.p = {0.5, 0.5};
    // The diagonal direction scores both prototypes equally: max plan mass
    // 0.5, dropped at any threshold above it. e0 keeps mass e/(e+1) = 0.731.
    Matrix batch(2, 2, {1, 0, 1, 1});
    LocalLossOptions strict;
    strict.phi = 0.0;
    strict.theta_conf = 0.7;
    LocalLossOptions open;
    open.phi = 0.0;

    Matrix confident(1, 2, {1, 0});
    LocalLossResult filtered = local_loss(id, batch, protos, prior, strict);
    LocalLossResult direct = local_loss(id, confident, protos, prior, open);
    CHECK(filtered.value == doctest::Approx(direct.value).epsilon(1e-12));

    strict.theta_conf = 0.99;  // nothing survives: decay-only loss, zero here
    LocalLossResult none = local_loss(id, batch, protos, prior, strict);
    CHECK(none.value == 0.0);
}

TEST_CASE("init_prototypes yields unit rows and fills empty classes") {
    Matrix reps(4, 3, {2, 0, 0, 4, 0, 0, 0, 5, 0, 0, 0, 3});
    std::vector<int> labels = {0, 0, 1, 1};
    Rng rng(608);
    PrototypeSet protos = init_prototypes(reps, labels, 3, rng);
    REQUIRE(protos.classes() == 3);
    CHECK(protos.mu(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    for (std::size_t z = 0; z < 3; ++z)
        CHECK(row_norm(protos.mu, z) == doctest::Approx(1.0).epsilon(1e-12));

    Rng rng2(608);
    PrototypeSet again = init_prototypes(reps, labels, 3, rng2);
    CHECK(testsup::bitwise_equal(protos.mu, again.mu));
}

TEST_CASE("update_prototypes: rho zero is bitwise frozen, absent classes keep rows") {
    PrototypeSet protos{normalize_rows(testsup::random_matrix(3, 4, 609))};
    Matrix reps = normalize_rows(testsup::random_matrix(5, 4, 610));
    std::vector<int> labels = {0, 0, 1, 1, 1};  // class 2 absent

    PrototypeSet frozen = update_prototypes(protos, reps, labels, 0.0);
    CHECK(testsup::bitwise_equal(frozen.mu, protos.mu));

    PrototypeSet moved = update_prototypes(protos, reps, labels, 0.5);
    CHECK_FALSE(testsup::bitwise_equal(moved.mu, protos.mu));
    for (std::size_t j = 0; j < 4; ++j) CHECK(moved.mu(2, j) == protos.mu(2, j));
    for (std::size_t z = 0; z < 3; ++z)
        CHECK(row_norm(moved.mu, z) == doctest::Approx(1.0).epsilon(1e-12));

    // Single class, single row: mu' = normalize(mu + rho * r).
    PrototypeSet one{Matrix(1, 2, {1, 0})};
    Matrix r(1, 2, {0, 1});
    PrototypeSet up = update_prototypes(one, r, {0}, 1.0);
    double s = 1.0 / std::sqrt(2.0);
    CHECK(up.mu(0, 0) == doctest::Approx(s).epsilon(1e-12));
    CHECK(up.mu(0, 1) == doctest::Approx(s).epsilon(1e-12));

    PrototypeSet raw = update_prototypes(one, r, {0}, 1.0, false);
    CHECK(raw.mu(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(raw.mu(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("neg_log_prob forward loss equals mean plan-row entropy under a uniform prior") {
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
        std::size_t z = 2 + trial % 4, d = 6, b = 9;
        PrototypeSet protos{normalize_rows(testsup::random_matrix(z, d, 700 + trial))};
        Matrix reps = normalize_rows(testsup::random_matrix(b, d, 800 + trial));
        TransportPlan plan = plan_to_prototypes(protos, uniform(z), reps);
        LossGrads g = loss_f_to_mu(plan, protos, reps, CostMode::neg_log_prob);
        double entropy = 0.0;
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < z; ++j) {
                double p = plan.probs(i, j);
                if (p > 0.0) entropy -= p * std::log(p);
            }
        entropy /= static_cast<double>(b);
        CHECK(std::fabs(g.value - entropy) < 1e-9);
    }
}
