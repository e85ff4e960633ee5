#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "evfl/errors.hpp"
#include "evfl/matrix.hpp"
#include "evfl/mlp.hpp"
#include "evfl/rng.hpp"
#include "support/oracles.hpp"

using namespace evfl;

TEST_CASE("matmul matches a hand-multiplied 2x2") {
    Matrix a(2, 2, {1, 2, 3, 4});
    Matrix b(2, 2, {5, 6, 7, 8});
    Matrix c = matmul(a, b);
    // [1 2; 3 4][5 6; 7 8] = [19 22; 43 50], exact in binary (small integers).
    CHECK(c(0, 0) == 19.0);
    CHECK(c(0, 1) == 22.0);
    CHECK(c(1, 0) == 43.0);
    CHECK(c(1, 1) == 50.0);
    CHECK_THROWS_AS(matmul(a, Matrix(3, 2)), ShapeError);
}

TEST_CASE("transposed products agree with explicit transposition") {
    Matrix a = testsup::random_matrix(5, 3, 101);
    Matrix b = testsup::random_matrix(5, 4, 102);
    CHECK(testsup::max_abs_diff(matmul_tn(a, b), matmul(transpose(a), b)) == 0.0);
    Matrix c = testsup::random_matrix(6, 4, 103);
    CHECK(testsup::max_abs_diff(matmul_nt(b, c), matmul(b, transpose(c))) == 0.0);
}

TEST_CASE("elementwise ops and axpy") {
    Matrix a(2, 2, {1, 2, 3, 4});
    Matrix b(2, 2, {10, 20, 30, 40});
    CHECK(add(a, b)(1, 1) == 44.0);
    CHECK(sub(b, a)(0, 0) == 9.0);
    CHECK(scale(a, 2.5)(0, 1) == 5.0);
    CHECK(hadamard(a, b)(1, 0) == 90.0);
    Matrix y = a;
    axpy(y, 0.5, b);
    CHECK(y(0, 0) == 6.0);
    CHECK_THROWS_AS(add(a, Matrix(2, 3)), ShapeError);
}

TEST_CASE("take_rows then hconcat reconstructs") {
    Matrix a = testsup::random_matrix(6, 3, 104);
    Matrix left = take_rows(a, {0, 2, 4});
    CHECK(left.rows() == 3);
    CHECK(left(1, 0) == a(2, 0));
    CHECK_THROWS_AS(take_rows(a, {6}), ShapeError);

    Matrix b = testsup::random_matrix(3, 2, 105);
    Matrix cat = hconcat({left, b});
    CHECK(cat.cols() == 5);
    CHECK(cat(0, 3) == b(0, 0));
    CHECK(cat(2, 2) == left(2, 2));
}

TEST_CASE("softmax_rows matches the frozen three-way oracle") {
    Matrix x(1, 3, {1, 2, 3});
    Matrix s = softmax_rows(x);
    // softmax(1,2,3) = e^{x-3} / (e^-2 + e^-1 + 1)
    //               = [0.09003057317038046, 0.24472847105479764, 0.6652409557748219]
    CHECK(s(0, 0) == doctest::Approx(0.09003057317038046).epsilon(1e-6));
    CHECK(s(0, 1) == doctest::Approx(0.24472847105479764).epsilon(1e-6));
    CHECK(s(0, 2) == doctest::Approx(0.66524095577482190).epsilon(1e-6));

    Matrix big = testsup::random_matrix(40, 7, 106, 30.0);
    Matrix sm = softmax_rows(big);
    for (std::size_t i = 0; i < sm.rows(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < sm.cols(); ++j) {
            CHECK(sm(i, j) >= 0.0);
            sum += sm(i, j);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("row normalization, strict and safe") {
    Matrix a(2, 2, {3, 4, 0, 0});
    CHECK_THROWS_AS(normalize_rows(a), DomainError);
    Matrix safe = normalize_rows_safe(a);
    CHECK(safe(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(safe(0, 1) == doctest::Approx(0.8).epsilon(1e-15));
    // The zero row must pass through bit-for-bit.
    CHECK(safe(1, 0) == 0.0);
    CHECK(safe(1, 1) == 0.0);

    Matrix ok(1, 2, {3, 4});
    Matrix n = normalize_rows(ok);
    CHECK(row_norm(n, 0) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("normalize_rows_backward agrees with finite differences") {
    Matrix raw = testsup::random_matrix(5, 4, 107);
    Matrix g = testsup::random_matrix(5, 4, 108);
    auto f = [&](const std::vector<double>& flat) {
        Matrix r(5, 4, flat);
        Matrix n = normalize_rows_safe(r);
        double acc = 0.0;
        for (std::size_t i = 0; i < n.data().size(); ++i)
            acc += n.data()[i] * g.data()[i];
        return acc;
    };
    Matrix analytic = normalize_rows_backward(raw, g);
    CHECK(testsup::fd_max_rel_err(raw.data(), f, analytic.data()) < 1e-6);
}

TEST_CASE("normalize_rows_backward zeroes the gradient of a dead row") {
    Matrix raw(2, 3, {1, 2, 2, 0, 0, 0});
    Matrix g(2, 3, {1, 1, 1, 5, 5, 5});
    Matrix back = normalize_rows_backward(raw, g);
    CHECK(back(1, 0) == 0.0);
    CHECK(back(1, 1) == 0.0);
    CHECK(back(1, 2) == 0.0);
}

TEST_CASE("cosine dissimilarity endpoints") {
    CHECK(cosine_dissimilarity({1, 0}, {0, 1}) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(cosine_dissimilarity({2, 0}, {5, 0}) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(cosine_dissimilarity({1, 1}, {-1, -1}) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK_THROWS_AS(cosine_dissimilarity({0, 0}, {1, 0}), DomainError);
}

TEST_CASE("mlp shapes, identity map, and the empty stack") {
    Rng rng(109);
    MlpParams p = make_mlp(6, {8, 5}, 3, rng);
    REQUIRE(p.layers.size() == 3);
    CHECK(p.in_dim() == 6);
    CHECK(p.out_dim() == 3);
    CHECK(p.layers[0].act == Activation::relu);
    CHECK(p.layers[2].act == Activation::identity);

    Matrix x = testsup::random_matrix(4, 7, 110);
    MlpParams id = identity_affine(7);
    CHECK(testsup::bitwise_equal(mlp_apply(id, x), x));

    MlpParams empty;
    CHECK(testsup::bitwise_equal(mlp_apply(empty, x), x));
}

TEST_CASE("mlp_backward agrees with finite differences") {
    Rng rng(111);
    MlpParams p = make_mlp(4, {6}, 3, rng);
    Matrix x = testsup::random_matrix(5, 4, 112);
    Matrix g = testsup::random_matrix(5, 3, 113);

    auto loss = [&](const MlpParams& q, const Matrix& in) {
        Matrix y = mlp_apply(q, in);
        double acc = 0.0;
        for (std::size_t i = 0; i < y.data().size(); ++i)
            acc += y.data()[i] * g.data()[i];
        return acc;
    };
    auto [y, tape] = mlp_forward(p, x);
    auto [grads, dx] = mlp_backward(p, tape, g);
    (void)y;

    auto f_params = [&](const std::vector<double>& flat) {
        MlpParams q = p;
        unflatten_params(q, flat);
        return loss(q, x);
    };
    CHECK(testsup::fd_max_rel_err(flatten_params(p), f_params, flatten_grads(grads)) <
          1e-4);

    auto f_input = [&](const std::vector<double>& flat) {
        return loss(p, Matrix(5, 4, flat));
    };
    CHECK(testsup::fd_max_rel_err(x.data(), f_input, dx.data()) < 1e-4);
}

TEST_CASE("sgd_step applies decay-inside-the-step") {
    Rng rng(114);
    MlpParams p = mlp_init({1, 1}, {Activation::identity}, rng);
    p.layers[0].weight(0, 0) = 1.0;
    p.layers[0].bias[0] = 1.0;
    GradBundle g = zero_grads_like(p);
    g.weights[0](0, 0) = 0.5;
    g.biases[0][0] = 0.5;
    sgd_step(p, g, 0.1, 0.1);
    // p' = p - lr (g + wd p) = 1 - 0.1 (0.5 + 0.1) = 0.94
    CHECK(p.layers[0].weight(0, 0) == doctest::Approx(0.94).epsilon(1e-15));
    CHECK(p.layers[0].bias[0] == doctest::Approx(0.94).epsilon(1e-15));
}

TEST_CASE("grad accumulation and the weight penalty") {
    Rng rng(115);
    MlpParams p = make_mlp(3, {}, 2, rng);
    GradBundle a = zero_grads_like(p);
    GradBundle b = zero_grads_like(p);
    b.weights[0](0, 0) = 2.0;
    grad_accumulate(a, b, 0.5);
    CHECK(a.weights[0](0, 0) == 1.0);

    GradBundle c = zero_grads_like(p);
    add_weight_penalty(c, p, 0.1);
    CHECK(c.weights[0](1, 1) == doctest::Approx(0.1 * p.layers[0].weight(1, 1)));

    // params_frobenius_sq covers weights and biases
    double manual = 0.0;
    for (const auto& layer : p.layers) {
        manual += frobenius_sq(layer.weight);
        for (double v : layer.bias) manual += v * v;
    }
    CHECK(params_frobenius_sq(p) == doctest::Approx(manual).epsilon(1e-15));
}

TEST_CASE("rng streams are deterministic and tag-separated") {
    Rng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) {
        CHECK(a.next_u64() == b.next_u64());
    }
    CHECK(a.next_u64() != c.next_u64());

    CHECK(derive_seed(1, 2, 3) != derive_seed(1, 2, 4));
    CHECK(derive_seed(1, 2, 3) != derive_seed(1, 3, 2));
    CHECK(chain_seed(9, 1, 2, 3, 4) == derive_seed(derive_seed(9, 1, 2), 3, 4));
    CHECK(chain_seed(9, 1, 2, 3, 4) != chain_seed(9, 1, 2, 4, 3));
}

TEST_CASE("rng unit and index stay in range, shuffle permutes") {
    Rng rng(116);
    for (int i = 0; i < 1000; ++i) {
        double u = rng.unit();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        std::size_t k = rng.index(7);
        CHECK(k < 7);
    }
    std::vector<int> v(50);
    std::iota(v.begin(), v.end(), 0);
    auto sorted = v;
    rng.shuffle(v);
    CHECK(v != sorted);  // 1/50! chance of a fixed-point shuffle
    std::set<int> s(v.begin(), v.end());
    CHECK(s.size() == 50);
}
