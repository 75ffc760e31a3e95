#include "doctest.h"
#include "mixore/sae.hpp"
#include "oracles.hpp"

using namespace mixore;

namespace {

struct Problem {
    Matrix x;  // d x M
    std::vector<std::size_t> labels;
    Matrix s;  // K x M
    std::vector<std::string> names;
};

Problem random_problem(int d, int k, int m, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Problem p;
    p.x = test::random_matrix(d, m, rng);
    p.s = Matrix::Zero(k, m);
    for (int i = 0; i < m; ++i) {
        const auto y = static_cast<std::size_t>(i % k);
        p.labels.push_back(y);
        p.s(static_cast<Eigen::Index>(y), i) = 1.0;
    }
    for (int c = 0; c < k; ++c) p.names.push_back("r" + std::to_string(c));
    return p;
}

Matrix gradient_descent_oracle(const Problem& p, double lambda, int iters) {
    return test::sae_gradient_descent(p.x, p.s, lambda, iters);
}

double objective(const Matrix& w, const Problem& p, double lambda) {
    return test::sae_objective_oracle(w, p.x, p.s, lambda);
}

}  // namespace

TEST_CASE("fit_sae: one-hot inputs give the identity") {
    Problem p;
    p.x = Matrix::Identity(4, 4);
    p.s = Matrix::Identity(4, 4);
    p.labels = {0, 1, 2, 3};
    p.names = {"a", "b", "c", "d"};
    const auto w = fit_sae(p.x, p.labels, p.names, 100.0);
    CHECK((w.matrix - Matrix::Identity(4, 4)).norm() < 1e-12);
    CHECK(objective(w.matrix, p, 100.0) < 1e-20);
    CHECK((decode(w, encode(w, p.x)) - p.x).norm() < 1e-12);
}

TEST_CASE("fit_sae: single instance e1 in d=3, lambda 1 gives e1 transpose") {
    Matrix x = Matrix::Zero(3, 1);
    x(0, 0) = 1.0;
    const std::vector<std::size_t> y{0};
    const auto w = fit_sae(x, y, {"r"}, 1.0);
    REQUIRE(w.matrix.rows() == 1);
    CHECK(w.matrix(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(std::abs(w.matrix(0, 1)) < 1e-14);
    CHECK(std::abs(w.matrix(0, 2)) < 1e-14);

    // Dense solve of the same row system: w (n I + lambda x x^T) = (1 + lambda) x^T.
    const Matrix sys = Matrix::Identity(3, 3) + x * x.transpose();
    const Matrix dense = (2.0 * x.transpose()) * sys.inverse();
    CHECK((dense - w.matrix).norm() < 1e-14);

    Matrix e1 = Matrix::Zero(3, 1);
    e1(0, 0) = 1.0;
    CHECK(encode(w, e1)(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("fit_sae: matches the gradient-descent oracle and solves the Sylvester equation") {
    for (double lambda : {1.0, 100.0}) {
        for (std::uint64_t seed = 0; seed < 4; ++seed) {
            const auto p = random_problem(32, 5, 200, seed);
            const auto w = fit_sae(p.x, p.labels, p.names, lambda);
            const Matrix a = p.s * p.s.transpose();
            const Matrix b = lambda * p.x * p.x.transpose();
            const Matrix c = (1.0 + lambda) * p.s * p.x.transpose();
            CHECK((a * w.matrix + w.matrix * b - c).norm() / c.norm() <= 1e-8);
            CHECK(w.residual <= 1e-8);

            const Matrix oracle = gradient_descent_oracle(p, lambda, 3000);
            const double fw = objective(w.matrix, p, lambda);
            const double fo = objective(oracle, p, lambda);
            CHECK(std::abs(fw - fo) / fo <= 1e-6);
            CHECK(sae_objective(w.matrix, p.x, p.s, lambda) == doctest::Approx(fw).epsilon(1e-12));
        }
    }
}

TEST_CASE("fit_sae: closed form beats random perturbations") {
    const auto p = random_problem(12, 3, 60, 9);
    const auto w = fit_sae(p.x, p.labels, p.names, 100.0);
    const double best = objective(w.matrix, p, 100.0);
    std::mt19937_64 rng(10);
    for (int t = 0; t < 100; ++t) {
        const Matrix pert = w.matrix + test::random_matrix(3, 12, rng, 1e-3);
        CHECK(objective(pert, p, 100.0) >= best);
    }
}

TEST_CASE("fit_sae: rank-deficient features still solve") {
    // Duplicate columns and a zero feature row make X X^T singular.
    Matrix x = Matrix::Zero(5, 6);
    x.row(0) << 1, 1, 2, 2, 3, 3;
    x.row(1) << 0, 0, 1, 1, 0, 0;
    const std::vector<std::size_t> y{0, 0, 1, 1, 2, 2};
    const auto w = fit_sae(x, y, {"a", "b", "c"}, 100.0);
    CHECK(w.fitted);
    CHECK(w.matrix.allFinite());
}

TEST_CASE("fit_sae: precondition errors") {
    Matrix x = Matrix::Ones(2, 2);
    const std::vector<std::size_t> y{0, 1};
    CHECK_THROWS_AS(fit_sae(x, y, {"a", "b"}, 0.0), Error);
    CHECK_THROWS_AS(fit_sae(x, y, {"a"}, 1.0), Error);
    CHECK_THROWS_AS(fit_sae(Matrix(2, 0), {}, {"a"}, 1.0), Error);
    x(0, 0) = std::nan("");
    CHECK_THROWS_AS(fit_sae(x, y, {"a", "b"}, 1.0), Error);
}

TEST_CASE("encode / decode") {
    ProjectionW id;
    id.matrix = Matrix::Identity(3, 3);
    id.class_order = {"a", "b", "c"};
    id.fitted = true;
    Matrix e2 = Matrix::Zero(3, 1);
    e2(1, 0) = 1.0;
    CHECK(encode(id, e2) == e2);
    CHECK(decode(id, e2) == e2);
    CHECK(encode(id, Matrix(3, 0)).rows() == 3);
    CHECK(encode(id, Matrix(3, 0)).cols() == 0);
    CHECK_THROWS_AS(encode(id, Matrix::Zero(4, 1)), Error);
    CHECK_THROWS_AS(decode(id, Matrix::Zero(2, 1)), Error);
}

TEST_CASE("encode is linear; reconstruction error matches recomputation") {
    const auto p = random_problem(10, 4, 40, 21);
    const auto w = fit_sae(p.x, p.labels, p.names, 100.0);
    std::mt19937_64 rng(22);
    for (int t = 0; t < 20; ++t) {
        const Matrix u = test::random_matrix(10, 1, rng);
        const Matrix v = test::random_matrix(10, 1, rng);
        const double a = 1.7, b = -0.3;
        const Matrix lhs = encode(w, a * u + b * v);
        const Matrix rhs = a * encode(w, u) + b * encode(w, v);
        CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, lhs.cwiseAbs().maxCoeff()));
    }
    const Matrix recon = decode(w, encode(w, p.x));
    const Matrix direct = w.matrix.transpose() * (w.matrix * p.x);
    CHECK((p.x - recon).norm() == doctest::Approx((p.x - direct).norm()).epsilon(1e-12));
}

TEST_CASE("projection JSON round-trip") {
    const auto p = random_problem(6, 2, 20, 4);
    const auto w = fit_sae(p.x, p.labels, p.names, 3.0);
    const auto j = to_json(w);
    CHECK(j.contains("lambda"));
    CHECK(j.contains("class_order"));
    CHECK(j.contains("matrix"));
    const auto back = projection_from_json(j);
    CHECK(back.matrix == w.matrix);
    CHECK(back.class_order == w.class_order);
    CHECK(back.lambda == w.lambda);
}
