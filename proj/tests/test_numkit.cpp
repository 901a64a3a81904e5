#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "oracles.hpp"
#include "ssmkit/error.hpp"
#include "ssmkit/numkit.hpp"

#include <cmath>

using namespace ssm::numkit;

TEST_CASE("monomials follow graded lexicographic order") {
    Vector x(2);
    x << 2.0, 3.0;
    const PolynomialBasis b12(2, 1, 2);
    const Vector m = monomials(x, b12);
    REQUIRE(m.size() == 5);
    CHECK(m(0) == 2.0);
    CHECK(m(1) == 3.0);
    CHECK(m(2) == 4.0);
    CHECK(m(3) == 6.0);
    CHECK(m(4) == 9.0);

    const PolynomialBasis b11(2, 1, 1);
    const Vector m1 = monomials(x, b11);
    CHECK(m1.size() == 2);
    CHECK(m1(0) == 2.0);
    CHECK(m1(1) == 3.0);

    CHECK(PolynomialBasis(5, 2, 2).size() == 15);
    CHECK_THROWS_AS(monomials(Vector(Vector::Ones(3)), b12), ssm::DimensionError);
}

TEST_CASE("basis invariants: degree range, ordering and counts") {
    for (int dim = 1; dim <= 5; ++dim)
        for (int hi = 1; hi <= 4; ++hi) {
            const PolynomialBasis b(dim, 1, hi);
            int prev_deg = 0;
            std::vector<int> prev;
            for (const auto& e : b.exponents()) {
                int deg = 0;
                for (int v : e) deg += v;
                CHECK(deg >= 1);
                CHECK(deg <= hi);
                CHECK(deg >= prev_deg);
                if (deg == prev_deg) CHECK(prev > e);  // descending lex inside a degree
                prev_deg = deg;
                prev = e;
            }
            for (int d = 1; d <= hi; ++d) {
                int count = 0;
                for (const auto& e : b.exponents()) {
                    int deg = 0;
                    for (int v : e) deg += v;
                    count += deg == d;
                }
                CHECK(count == static_cast<int>(oracle::binomial(dim + d - 1, d)));
                CHECK(PolynomialBasis::count_of_degree(dim, d) == count);
            }
        }
    CHECK(PolynomialBasis(3, 2, 1).empty());
}

TEST_CASE("monomials: degree-d block scales by s^d") {
    oracle::Rand rng(7);
    const PolynomialBasis b(3, 1, 4);
    for (int trial = 0; trial < 20; ++trial) {
        const Vector x = rng.matrix(3, 1);
        const double s = rng.uniform(-2.0, 2.0);
        const Vector m = monomials(x, b);
        const Vector ms = monomials(Vector(s * x), b);
        for (int k = 0; k < b.size(); ++k) {
            int deg = 0;
            for (int v : b.exponents()[k]) deg += v;
            CHECK(ms(k) == doctest::Approx(std::pow(s, deg) * m(k)).epsilon(1e-12));
        }
    }
}

TEST_CASE("monomial jacobian matches central differences") {
    oracle::Rand rng(11);
    const PolynomialBasis b(3, 1, 3);
    const Vector x = rng.matrix(3, 1);
    const Matrix J = monomial_jacobian(x, b);
    for (int i = 0; i < 3; ++i) {
        Vector xp = x, xm = x;
        xp(i) += 1e-6;
        xm(i) -= 1e-6;
        const Vector fd = (monomials(xp, b) - monomials(xm, b)) / 2e-6;
        CHECK((fd - J.col(i)).norm() < 1e-7);
    }
}

TEST_CASE("least_squares recovers exact and synthetic solutions") {
    Matrix A = Matrix::Identity(2, 2);
    Matrix B(2, 2);
    B << 2, 0, 0, 3;
    const Matrix X = least_squares(A, B);
    CHECK((X - B).norm() < 1e-14);

    CHECK(least_squares(A, Matrix::Zero(2, 2)).norm() == 0.0);

    oracle::Rand rng(3);
    const Matrix A3 = rng.matrix(3, 50);
    const Matrix Xt = rng.matrix(2, 3);
    const Matrix X3 = least_squares(A3, Xt * A3);
    CHECK((X3 - Xt).norm() / Xt.norm() < 1e-10);
}

TEST_CASE("least_squares flags rank deficiency unless ridge is set") {
    Matrix A(2, 5);
    A.row(0) << 1, 2, 3, 4, 5;
    A.row(1) = 2.0 * A.row(0);
    const Matrix B = Matrix::Ones(1, 5);
    CHECK_THROWS_AS(least_squares(A, B), ssm::RankDeficientError);
    CHECK_THROWS_AS(least_squares(Matrix::Zero(2, 5), B), ssm::RankDeficientError);
    const Matrix X = least_squares(A, B, {.ridge = 1e-6});
    CHECK(X.allFinite());
    // B lies outside the row space; the ridge solution approaches its projection onto A.row(0).
    const Matrix proj = (B * A.row(0).transpose())(0, 0) / A.row(0).squaredNorm() * A.row(0);
    CHECK((X * A - proj).norm() < 1e-4);
    const Matrix reachable = 3.0 * A.row(0);
    CHECK((least_squares(A, reachable, {.ridge = 1e-9}) * A - reachable).norm() < 1e-6);
    CHECK_THROWS_AS(least_squares(Matrix::Ones(3, 2), Matrix::Ones(1, 2)), ssm::RankDeficientError);
}

TEST_CASE("truncated_svd: diagonal case, recovery, orthonormality") {
    Matrix Y(2, 2);
    Y << 3, 0, 0, 1;
    const Matrix U1 = truncated_svd(Y, 1);
    CHECK(U1(0, 0) == doctest::Approx(1.0));
    CHECK(std::abs(U1(1, 0)) < 1e-15);

    Matrix Yn = -Y;
    CHECK(truncated_svd(Yn, 1)(0, 0) == doctest::Approx(1.0));

    oracle::Rand rng(5);
    const Matrix Q = orthonormalize(rng.matrix(6, 3));
    const Matrix W = orthonormalize(rng.matrix(40, 3));
    Eigen::Vector3d s(5.0, 2.0, 0.1);
    const Matrix Yc = Q * s.asDiagonal() * W.transpose();
    const Matrix U = truncated_svd(Yc, 2);
    CHECK(max_principal_angle(U, Q.leftCols(2)) < 1e-12);
    CHECK((U.transpose() * U - Matrix::Identity(2, 2)).norm() < 1e-12);
    CHECK_THROWS_AS(truncated_svd(Yc, 4), ssm::RankDeficientError);
    CHECK_THROWS_AS(truncated_svd(Yc, 7), ssm::DimensionError);
}

TEST_CASE("truncated_svd gives the best rank-n reconstruction") {
    oracle::Rand rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix Y = rng.matrix(5, 9);
        const int n = 1 + trial % 4;
        const Matrix U = truncated_svd(Y, n);
        const Matrix recon = U * U.transpose() * Y;
        Eigen::JacobiSVD<Matrix> full(Y);
        const Vector sv = full.singularValues();
        const double best = std::sqrt(sv.tail(sv.size() - n).squaredNorm());
        CHECK((Y - recon).norm() == doctest::Approx(best).epsilon(1e-10));
    }
}

TEST_CASE("sylvester_solve: scalar closed form and zero forcing") {
    Matrix a(1, 1), b(1, 1), c(1, 1);
    a << -0.2;
    b << -10.0;
    c << 1.0;
    const Matrix v = sylvester_solve(a, b, c);
    // closed form v = -c/(a-b); Kronecker oracle cross-check
    CHECK(v(0, 0) == doctest::Approx(-1.0 / 9.8).epsilon(1e-14));
    CHECK(v(0, 0) == doctest::Approx(oracle::kron_sylvester(a, b, c)(0, 0)).epsilon(1e-14));

    oracle::Rand rng(2);
    const Matrix A = oracle::random_with_spectrum(rng, 3, -1.0, -0.1);
    const Matrix B = oracle::random_with_spectrum(rng, 4, -9.0, -3.0);
    CHECK(sylvester_solve(A, B, Matrix::Zero(3, 4)).norm() == 0.0);
}

TEST_CASE("sylvester_solve matches the Kronecker solve whenever n*m <= 100") {
    oracle::Rand rng(99);
    for (int trial = 0; trial < 60; ++trial) {
        const int n = rng.integer(1, 10);
        const int m = rng.integer(1, 100 / n);
        const Matrix A = oracle::random_with_spectrum(rng, n, -1.0, -0.05);
        const Matrix B = oracle::random_with_spectrum(rng, m, -12.0, -2.0);
        const Matrix C = rng.matrix(n, m);
        const Matrix V = sylvester_solve(A, B, C);
        const Matrix Vk = oracle::kron_sylvester(A, B, C);
        CHECK((V - Vk).norm() / Vk.norm() < 1e-10);
        const double resid = (A * V - V * B + C).norm();
        CHECK(resid < 1e-10 * (A.norm() + B.norm()) * V.norm());
    }
}

TEST_CASE("sylvester_solve rejects colliding spectra") {
    Matrix A = Matrix::Identity(2, 2) * -1.0;
    Matrix B = Matrix::Identity(3, 3) * -1.0;
    CHECK_THROWS_AS(sylvester_solve(A, B, Matrix::Ones(2, 3)), ssm::SpectralGapViolation);
}

TEST_CASE("finite_difference stencils") {
    const double dt = 0.01;
    const int N = 101;
    Matrix Y2(1, N), Y1(1, N), Ys(1, N);
    for (int k = 0; k < N; ++k) {
        const double t = k * dt;
        Y2(0, k) = t * t;
        Y1(0, k) = 3.0 * t;
    }
    const Matrix D2 = finite_difference(Y2, dt);
    for (int k = 0; k < N; ++k) CHECK(std::abs(D2(0, k) - 2.0 * k * dt) < 1e-12);
    const Matrix D1 = finite_difference(Y1, dt);
    for (int k = 0; k < N; ++k) CHECK(std::abs(D1(0, k) - 3.0) < 1e-12);

    const double h = 1e-3;
    const int M = 2001;
    Matrix S(1, M);
    for (int k = 0; k < M; ++k) S(0, k) = std::sin(k * h);
    const Matrix DS = finite_difference(S, h);
    double err = 0.0;
    for (int k = 0; k < M; ++k) err = std::max(err, std::abs(DS(0, k) - std::cos(k * h)));
    CHECK(err < 1e-6);
    CHECK_THROWS_AS(finite_difference(Matrix::Ones(2, 2), dt), ssm::DimensionError);
}

TEST_CASE("delay_embed shapes and windows") {
    oracle::Rand rng(4);
    const Matrix Y = rng.matrix(3, 10);
    const Matrix E = delay_embed(Y, 3);
    CHECK(E.rows() == 12);
    CHECK(E.cols() == 7);
    // dropping the delayed blocks gives back the trailing window
    CHECK((E.topRows(3) - Y.rightCols(7)).norm() == 0.0);
    CHECK((E.bottomRows(3) - Y.leftCols(7)).norm() == 0.0);
    CHECK((delay_embed(Y, 0) - Y).norm() == 0.0);
    CHECK_THROWS_AS(delay_embed(Y, 10), ssm::DimensionError);
}

TEST_CASE("orthonormal_complement") {
    Matrix V(2, 1);
    V << 1, 0;
    const Matrix N = orthonormal_complement(V);
    CHECK(std::abs(N(0, 0)) < 1e-15);
    CHECK(N(1, 0) == doctest::Approx(1.0));

    oracle::Rand rng(8);
    const Matrix V4 = orthonormalize(rng.matrix(10, 4));
    const Matrix N6 = orthonormal_complement(V4);
    CHECK(N6.rows() == 10);
    CHECK(N6.cols() == 6);
    CHECK((N6.transpose() * V4).norm() < 1e-12);
    CHECK((N6.transpose() * N6 - Matrix::Identity(6, 6)).norm() < 1e-12);
    Matrix full(10, 10);
    full << V4, N6;
    CHECK((full.transpose() * full - Matrix::Identity(10, 10)).norm() < 1e-12);
    CHECK_THROWS_AS(orthonormal_complement(2.0 * V4), ssm::DimensionError);
}

TEST_CASE("principal angle resolves tiny angles") {
    Matrix U(3, 1), V(3, 1);
    U << 1, 0, 0;
    V << 1, 1e-11, 0;
    CHECK(max_principal_angle(U, V) == doctest::Approx(1e-11).epsilon(1e-6));
}
