#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "oracles.hpp"
#include "ssmkit/curation.hpp"
#include "ssmkit/error.hpp"
#include "ssmkit/learning.hpp"
#include "ssmkit/model_io.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <filesystem>

using namespace ssm::learning;
using ssm::numkit::Matrix;
using ssm::numkit::PolynomialBasis;
using ssm::numkit::Vector;
namespace cur = ssm::curation;
namespace sys = ssm::systems;

namespace {

constexpr double kDeg = M_PI / 180.0;

Vector vec2(double a, double b) {
    Vector v(2);
    v << a, b;
    return v;
}

Matrix orthonormal_columns(oracle::Rand& rng, int p, int n) {
    return Eigen::HouseholderQR<Matrix>(rng.matrix(p, n)).householderQ() * Matrix::Identity(p, n);
}

// Complement of an orthonormal basis, computed from a full QR (independent of the library routine).
Matrix complement_oracle(const Matrix& V) {
    const Matrix Q = Eigen::HouseholderQR<Matrix>(V).householderQ();
    return Q.rightCols(V.rows() - V.cols());
}

// Sine-based largest principal angle, well conditioned for small angles.
double angle_between(const Matrix& A, const Matrix& B) {
    const Matrix qa = Eigen::HouseholderQR<Matrix>(A).householderQ() * Matrix::Identity(A.rows(), A.cols());
    const Matrix qb = Eigen::HouseholderQR<Matrix>(B).householderQ() * Matrix::Identity(B.rows(), B.cols());
    const Matrix r = qb - qa * (qa.transpose() * qb);
    return std::asin(std::min(1.0, Eigen::JacobiSVD<Matrix>(r).singularValues()(0)));
}

// Independent least-squares residual via the normal equations.
double orthogonal_residual(const Matrix& X, const Matrix& Xd, const Matrix& Phi) {
    const Matrix R = (Phi * Phi.transpose()).ldlt().solve(Phi * Xd.transpose()).transpose();
    return (Xd - R * Phi).squaredNorm();
}

sys::TrajectoryDataset slow_fast_decays() {
    return sys::generate_decay_dataset(sys::make_slow_fast(), 10, {vec2(1, 1), vec2(0.5, 0.5)}, 50.0, 0.01, 1);
}

cur::CuratedData slow_fast_curated() {
    const auto data = slow_fast_decays();
    return cur::curate(data, cur::estimate_equilibrium(data, 0.1),
                       {.n_transient = 50, .ssm_dim = 1, .full_state_exemption = true});
}

// Linear system with a constructed zero-residual oblique chart: V*^T Ydot = R* V*^T Y exactly.
struct ZeroResidual {
    Matrix V_E, N, C, R, Y, Ydot;
};

ZeroResidual zero_residual_instance(oracle::Rand& rng, int p, int n, int count) {
    ZeroResidual z;
    z.V_E = orthonormal_columns(rng, p, n);
    z.N = complement_oracle(z.V_E);
    z.C = 0.5 * rng.matrix(p - n, n);
    const Matrix V = z.V_E + z.N * z.C;
    z.R = rng.matrix(n, n) - 2.0 * Matrix::Identity(n, n);
    const Matrix K = complement_oracle(Eigen::HouseholderQR<Matrix>(V).householderQ() * Matrix::Identity(p, n));
    const Matrix S = z.V_E * z.R * V.transpose() + K * rng.matrix(p - n, p);
    z.Y = 0.3 * rng.matrix(p, count);
    z.Ydot = S * z.Y;
    return z;
}

}  // namespace

TEST_CASE("projection modes parse and print") {
    CHECK(parse_projection_mode("orthogonal") == ProjectionMode::Orthogonal);
    CHECK(parse_projection_mode("oblique") == ProjectionMode::Oblique);
    CHECK(to_string(ProjectionMode::Oblique) == "oblique");
    CHECK_THROWS_AS(parse_projection_mode("diagonal"), ssm::ConfigError);
}

TEST_CASE("transient_loss: orthogonal baseline, empty data, constructed zero residual") {
    oracle::Rand rng(1);
    for (int t = 0; t < 5; ++t) {
        const int p = rng.integer(3, 8), n = rng.integer(1, 2), nr = rng.integer(1, 3);
        const PolynomialBasis basis(n, 1, nr);
        const Matrix V_E = orthonormal_columns(rng, p, n);
        const Matrix N = complement_oracle(V_E);
        const Matrix Y = rng.matrix(p, 60), Yd = rng.matrix(p, 60);
        const Matrix C0 = Matrix::Zero(p - n, n);
        const Matrix R = best_transient_dynamics(C0, Y, Yd, V_E, N, basis);
        const Matrix X = V_E.transpose() * Y;
        const double expect = orthogonal_residual(X, V_E.transpose() * Yd, ssm::numkit::monomials(X, basis));
        CHECK(transient_loss(C0, R, Y, Yd, V_E, N, basis) == doctest::Approx(expect).epsilon(1e-10));
    }

    const Matrix V_E = Matrix::Identity(3, 1);
    const Matrix N = complement_oracle(V_E);
    CHECK(transient_loss(Matrix::Ones(2, 1), Matrix::Ones(1, 2), Matrix(3, 0), Matrix(3, 0), V_E, N,
                         PolynomialBasis(1, 1, 2)) == 0.0);

    const ZeroResidual z = zero_residual_instance(rng, 6, 2, 80);
    CHECK(transient_loss(z.C, z.R, z.Y, z.Ydot, z.V_E, z.N, PolynomialBasis(2, 1, 1)) < 1e-18);
}

TEST_CASE("transient_loss_gradient matches central differences") {
    oracle::Rand rng(2);
    for (int t = 0; t < 12; ++t) {
        const int p = rng.integer(3, 8), n = rng.integer(1, std::min(3, p - 1)), nr = rng.integer(1, 3);
        const int count = rng.integer(10, 60);
        const PolynomialBasis basis(n, 1, nr);
        const Matrix V_E = orthonormal_columns(rng, p, n);
        const Matrix N = complement_oracle(V_E);
        const Matrix Y = 0.5 * rng.matrix(p, count), Yd = rng.matrix(p, count);
        const Matrix C = 0.3 * rng.matrix(p - n, n);
        const Matrix R = rng.matrix(n, basis.size());
        const LossGradient g = transient_loss_gradient(C, R, Y, Yd, V_E, N, basis);
        const Matrix fdC = oracle::fd_gradient(
            [&](const Matrix& Cx) { return transient_loss(Cx, R, Y, Yd, V_E, N, basis); }, C, 1e-6);
        const Matrix fdR = oracle::fd_gradient(
            [&](const Matrix& Rx) { return transient_loss(C, Rx, Y, Yd, V_E, N, basis); }, R, 1e-6);
        CHECK((g.grad_C - fdC).norm() / fdC.norm() < 1e-5);
        CHECK((g.grad_R - fdR).norm() / fdR.norm() < 1e-5);
    }
}

TEST_CASE("gradient vanishes at a zero-residual point") {
    oracle::Rand rng(3);
    const ZeroResidual z = zero_residual_instance(rng, 5, 2, 50);
    const LossGradient g = transient_loss_gradient(z.C, z.R, z.Y, z.Ydot, z.V_E, z.N, PolynomialBasis(2, 1, 1));
    CHECK(g.grad_C.norm() < 1e-10);
    CHECK(g.grad_R.norm() < 1e-10);
}

TEST_CASE("grad_R in the scalar case is 2 (R phi - xdot) phi^T") {
    oracle::Rand rng(4);
    const Matrix V_E = Matrix::Identity(2, 1);
    const Matrix N = complement_oracle(V_E);
    const Matrix Y = rng.matrix(2, 30), Yd = rng.matrix(2, 30);
    const Matrix C = 0.7 * Matrix::Ones(1, 1);
    const Matrix R = -1.5 * Matrix::Ones(1, 1);
    const Matrix V = V_E + N * C;
    const Matrix x = V.transpose() * Y, xd = V.transpose() * Yd;
    const double expect = 2.0 * ((R(0, 0) * x - xd).array() * x.array()).sum();
    const LossGradient g = transient_loss_gradient(C, R, Y, Yd, V_E, N, PolynomialBasis(1, 1, 1));
    CHECK(g.grad_R(0, 0) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("analytic_oracle on the slow-fast Jacobian: vertical kernel") {
    const Matrix A = sys::slow_fast_jacobian(vec2(1, 1), {});
    CHECK(A(0, 0) == doctest::Approx(-0.2));
    CHECK(A(0, 1) == 0.0);
    CHECK(A(1, 0) == doctest::Approx(20.0));
    CHECK(A(1, 1) == doctest::Approx(-10.0));
    const OracleProjection o = analytic_oracle(A, 1);
    const Matrix K = projection_kernel(o.V_opt);
    CHECK(angle_between(K, Matrix(Vector(vec2(0, 1)))) < 1e-12);
    // the slow eigenvector of this lower-triangular Jacobian is (9.8, 20)
    CHECK(angle_between(o.V_E, Matrix(Vector(vec2(9.8, 20.0)))) < 1e-12);
    CHECK((o.V_opt.transpose() * o.V_E - Matrix::Identity(1, 1)).norm() < 1e-12);
}

TEST_CASE("analytic_oracle: symmetric A gives the orthogonal chart") {
    oracle::Rand rng(5);
    for (int t = 0; t < 5; ++t) {
        const int nf = rng.integer(3, 8), n = rng.integer(1, nf - 1);
        const Matrix Q = orthonormal_columns(rng, nf, nf);
        Vector lam(nf);
        for (int i = 0; i < nf; ++i) lam(i) = -(1.0 + i) * (i < n ? 0.1 : 1.5);
        const Matrix A = Q * lam.asDiagonal() * Q.transpose();
        const OracleProjection o = analytic_oracle(A, n);
        CHECK((o.V_opt - o.V_E).norm() < 1e-10);
    }
}

TEST_CASE("analytic_oracle: idempotent projector that annihilates every fast eigenvector") {
    oracle::Rand rng(6);
    for (int t = 0; t < 20; ++t) {
        const int nf = rng.integer(3, 9), n = rng.integer(1, nf - 1);
        // real eigenvalues: n slow ones and nf - n fast ones behind a gap
        Vector lam(nf);
        for (int i = 0; i < nf; ++i) lam(i) = i < n ? -rng.uniform(0.1, 0.5) : -rng.uniform(2.0, 6.0);
        const Matrix S = rng.matrix(nf, nf) + 2.0 * Matrix::Identity(nf, nf);
        const Matrix A = S * lam.asDiagonal() * S.inverse();
        const OracleProjection o = analytic_oracle(A, n);
        const Matrix P = o.V_E * o.V_opt.transpose();
        CHECK((P * P - P).norm() < 1e-12 * std::max(1.0, P.norm() * P.norm()));
        for (int i = n; i < nf; ++i) {
            const Vector v = S.col(i).normalized();
            CHECK((P * v).norm() < 1e-9 * std::max(1.0, P.norm()));
        }
        CHECK(angle_between(o.V_E, S.leftCols(n)) < 1e-8);
    }
    // complex fast pairs are handled as well
    const Matrix A = oracle::random_with_spectrum(rng, 6, -4.0, -2.0);
    Matrix B = Matrix::Zero(7, 7);
    B.topLeftCorner(6, 6) = A;
    B(6, 6) = -0.05;
    B.block(0, 6, 6, 1) = rng.matrix(6, 1);
    const OracleProjection o = analytic_oracle(B, 1);
    const Eigen::EigenSolver<Matrix> es(B);
    const Matrix P = o.V_E * o.V_opt.transpose();
    for (int i = 0; i < 7; ++i)
        if (es.eigenvalues()(i).real() < -1.0) CHECK((P.cast<std::complex<double>>() * es.eigenvectors().col(i)).norm() < 1e-9);
}

TEST_CASE("analytic_oracle rejects a missing spectral gap and unstable systems") {
    Matrix A = Matrix::Zero(3, 3);
    A.diagonal() << -1.0, -1.0, -2.0;
    CHECK_THROWS_AS(analytic_oracle(A, 1), ssm::SpectralGapViolation);
    CHECK_NOTHROW(analytic_oracle(A, 2));
    A(0, 0) = 0.5;
    CHECK_THROWS_AS(analytic_oracle(A, 1), ssm::NumericalError);
    CHECK_THROWS_AS(analytic_oracle(Matrix::Identity(2, 3), 1), ssm::DimensionError);
}

TEST_CASE("oblique learning on a linear system recovers the analytic fiber direction") {
    // Non-normal linear system: two slow modes, two fast ones.
    Matrix A(4, 4);
    A << -0.15, 0.4, 0.0, 0.0,
         -0.4, -0.15, 0.0, 0.0,
          3.0, 1.0, -6.0, 1.0,
         -2.0, 2.5, -1.0, -8.0;
    sys::SystemSpec lin;
    lin.name = "linear";
    lin.state_dim = 4;
    lin.input_dim = 0;
    lin.equilibrium = Vector::Zero(4);
    lin.observed = {0, 1, 2, 3};
    lin.field = [A](const Vector& x, const Vector&) { return Vector(A * x); };
    const auto data = sys::generate_decay_dataset(lin, 12, {Vector::Zero(4), Vector::Ones(4)}, 8.0, 0.005, 3);
    const auto c = cur::curate(data, Vector::Zero(4), {.n_transient = 150, .ssm_dim = 2, .full_state_exemption = true});
    const ObliqueFit fit = learn_oblique_projection(c, 1, {.max_iters = 3000});
    const OracleProjection o = analytic_oracle(A, 2);
    CHECK(angle_between(projection_kernel(fit.V_opt), projection_kernel(o.V_opt)) < 1.0 * kDeg);
    // the orthogonal chart is visibly wrong here
    CHECK(angle_between(projection_kernel(c.V_E), projection_kernel(o.V_opt)) > 10.0 * kDeg);
}

TEST_CASE("learn_oblique_projection on slow-fast data: monotone, feasible, fiber aligned") {
    const auto c = slow_fast_curated();
    const ObliqueFit fit = learn_oblique_projection(c, 3);
    REQUIRE(fit.loss_history.size() >= 2);
    for (std::size_t k = 1; k < fit.loss_history.size(); ++k) CHECK(fit.loss_history[k] <= fit.loss_history[k - 1]);

    const Matrix N = ssm::numkit::orthonormal_complement(c.V_E);
    const PolynomialBasis basis(1, 1, 3);
    const Matrix C0 = Matrix::Zero(1, 1);
    const double orth = transient_loss(C0, best_transient_dynamics(C0, c.Y_trans, c.Ydot_trans, c.V_E, N, basis),
                                       c.Y_trans, c.Ydot_trans, c.V_E, N, basis);
    CHECK(fit.loss_history.front() == doctest::Approx(orth).epsilon(1e-12));
    CHECK(fit.loss_history.back() <= orth);
    CHECK((fit.V_opt.transpose() * c.V_E - Matrix::Identity(1, 1)).norm() < 1e-8);
    CHECK(angle_between(projection_kernel(fit.V_opt), Matrix(Vector(vec2(0, 1)))) < 5.0 * kDeg);
    CHECK((fit.V_opt - (c.V_E + N * fit.C)).norm() < 1e-14);

    // zero iterations leaves the orthogonal model in place
    const ObliqueFit none = learn_oblique_projection(c, 3, {.max_iters = 0});
    CHECK(none.V_opt == c.V_E);
    CHECK_FALSE(none.converged);

    // joint gradient mode keeps the same guarantees
    const ObliqueFit joint = learn_oblique_projection(c, 3, {.max_iters = 400, .gradient_mode = GradientMode::Joint});
    for (std::size_t k = 1; k < joint.loss_history.size(); ++k) CHECK(joint.loss_history[k] <= joint.loss_history[k - 1]);
    CHECK(joint.loss_history.back() < orth);

    // identical input, identical bits
    const ObliqueFit again = learn_oblique_projection(c, 3);
    CHECK(again.V_opt == fit.V_opt);
    CHECK(again.loss_history == fit.loss_history);
}

TEST_CASE("learn_oblique_projection needs transient data") {
    const auto data = sys::generate_decay_dataset(sys::make_slow_fast(), 2, {vec2(1, 1), vec2(0.5, 0.5)}, 5.0, 0.01, 1);
    const auto c = cur::curate(data, vec2(1, 1), {.n_transient = 0, .ssm_dim = 1, .full_state_exemption = true});
    CHECK_THROWS_AS(learn_oblique_projection(c, 3), ssm::DimensionError);
}

TEST_CASE("fit_reduced_dynamics: scalar linear decay, zero derivatives, slow-fast slope") {
    oracle::Rand rng(7);
    const Matrix V = orthonormal_columns(rng, 3, 1);
    Matrix x(1, 200);
    for (int k = 0; k < 200; ++k) x(0, k) = rng.uniform(-1, 1);
    const Matrix Y = V * x, Yd = V * (-2.0 * x);
    const Matrix R = fit_reduced_dynamics(Y, Yd, V, 1);
    CHECK(std::abs(R(0, 0) + 2.0) < 1e-6);
    CHECK(fit_reduced_dynamics(Y, Matrix::Zero(3, 200), V, 3).norm() == 0.0);
    CHECK_THROWS_AS(fit_reduced_dynamics(Matrix(3, 0), Matrix(3, 0), V, 1), ssm::DimensionError);

    const auto c = slow_fast_curated();
    for (auto mode : {ProjectionMode::Orthogonal, ProjectionMode::Oblique}) {
        const FitResult fr = fit_ssm_model(c, nullptr, {.mode = mode, .n_r = 3, .n_w = 3});
        if (mode == ProjectionMode::Oblique) CHECK(std::abs(fr.model.R(0, 0) + 0.2) < 0.02);
    }
}

TEST_CASE("fit_parameterization: flat data, constraint, quadratic manifold recovery") {
    oracle::Rand rng(8);
    for (int t = 0; t < 6; ++t) {
        const int p = rng.integer(4, 8), n = rng.integer(1, 2);
        const Matrix V_E = orthonormal_columns(rng, p, n);
        const Matrix Nn = complement_oracle(V_E);
        const Matrix V_opt = V_E + Nn * (0.5 * rng.matrix(p - n, n));
        const Matrix X = rng.matrix(n, 150);

        const Matrix flat = V_E * X;
        CHECK(fit_parameterization(flat, V_opt, V_E, 3).cwiseAbs().maxCoeff() < 1e-10);

        const PolynomialBasis b2(n, 2, 3);
        const Matrix Qk = complement_oracle(Eigen::HouseholderQR<Matrix>(V_opt).householderQ() * Matrix::Identity(p, n));
        const Matrix W_true = Qk * rng.matrix(p - n, b2.size());
        const Matrix Y = V_E * X + W_true * ssm::numkit::monomials(X, b2);
        const Matrix W = fit_parameterization(Y, V_opt, V_E, 3);
        CHECK((W - W_true).cwiseAbs().maxCoeff() < 1e-6);
        CHECK((V_opt.transpose() * W).norm() < 1e-8);

        const Matrix noisy = rng.matrix(p, 150);
        CHECK((V_opt.transpose() * fit_parameterization(noisy, V_opt, V_E, 2)).norm() < 1e-8);
    }
}

TEST_CASE("fit_control_matrix: recovery and excitation errors naming the channel") {
    oracle::Rand rng(9);
    const int p = 5, n = 2, m = 3, count = 300;
    const Matrix V = orthonormal_columns(rng, p, n);
    const PolynomialBasis basis(n, 1, 2);
    const Matrix R = rng.matrix(n, basis.size());
    const Matrix B = rng.matrix(n, m);
    const Matrix X = 0.5 * rng.matrix(n, count);
    const Matrix U = rng.matrix(m, count);
    const Matrix Y = V * X;
    const Matrix Yd = V * (R * ssm::numkit::monomials(X, basis) + B * U);
    CHECK((fit_control_matrix(Y, Yd, U, V, R, 2) - B).cwiseAbs().maxCoeff() < 1e-6);

    CHECK_THROWS_AS(fit_control_matrix(Y, Yd, Matrix::Zero(m, count), V, R, 2), ssm::ExcitationError);
    Matrix U1 = U;
    U1.row(1).setZero();
    try {
        fit_control_matrix(Y, Yd, U1, V, R, 2);
        FAIL("expected ExcitationError");
    } catch (const ssm::ExcitationError& e) {
        CHECK(e.channel() == 1);
    }
    Matrix U2 = U;
    U2.row(2) = 2.0 * U.row(0) - U.row(1);
    try {
        fit_control_matrix(Y, Yd, U2, V, R, 2);
        FAIL("expected ExcitationError");
    } catch (const ssm::ExcitationError& e) {
        CHECK(e.channel() == 2);
    }
}

TEST_CASE("fit_ssm_model: orthogonal chart is V_E exactly, modes share V_E, constraints hold") {
    const auto c = slow_fast_curated();
    const FitResult orth = fit_ssm_model(c, nullptr, {.mode = ProjectionMode::Orthogonal});
    const FitResult obl = fit_ssm_model(c, nullptr, {.mode = ProjectionMode::Oblique});
    CHECK(orth.model.V_opt == orth.model.V_E);
    CHECK(orth.model.V_E == obl.model.V_E);
    CHECK_FALSE(orth.report.oblique.has_value());
    REQUIRE(obl.report.oblique.has_value());
    for (const FitResult* f : {&orth, &obl}) {
        const SSMModel& m = f->model;
        CHECK(m.m == 0);
        CHECK(m.B_r.cols() == 0);
        CHECK(m.W_nl.cols() == m.manifold_basis().size());
        CHECK(m.R.cols() == m.dynamics_basis().size());
        const Matrix P = m.projector();
        CHECK((P * P - P).norm() < 1e-8);
        CHECK((m.V_opt.transpose() * m.V_E - Matrix::Identity(m.n, m.n)).norm() < 1e-8);
        CHECK((m.V_opt.transpose() * m.W_nl).norm() < 1e-8);
        CHECK(f->report.idempotency < 1e-8);
        CHECK_NOTHROW(m.validate());
    }
}

TEST_CASE("fit_ssm_model with forced data adds a control matrix") {
    const auto c = slow_fast_curated();
    const auto forced = sys::generate_controlled_dataset(sys::make_slow_fast(), 10, {.amplitude_max = 1.0},
                                                         {vec2(1, 1), vec2(0.5, 0.5)}, 20.0, 0.01, 3);
    const auto cd = cur::prepare_controlled(forced, c.y_eq_base, 0);
    const FitResult fr = fit_ssm_model(c, &cd, {.mode = ProjectionMode::Oblique});
    CHECK(fr.model.m == 2);
    CHECK(fr.model.B_r.rows() == 1);
    CHECK(fr.model.B_r.allFinite());
    // the reduced coordinate follows x1, which is driven by alpha u1
    CHECK(std::abs(fr.model.B_r(0, 0)) > 10.0 * std::abs(fr.model.B_r(0, 1)));
}

TEST_CASE("SSMModel JSON round-trip preserves every field") {
    const auto c = slow_fast_curated();
    const FitResult fr = fit_ssm_model(c, nullptr, {.mode = ProjectionMode::Oblique});
    const auto path = std::filesystem::temp_directory_path() / "ssmkit_test_model.json";
    ssm::io::save_model(fr.model, path);
    const SSMModel m = ssm::io::load_model(path);
    CHECK(m.mode == "oblique");
    CHECK(m.V_E == fr.model.V_E);
    CHECK(m.V_opt == fr.model.V_opt);
    CHECK(m.W_nl == fr.model.W_nl);
    CHECK(m.R == fr.model.R);
    CHECK(m.B_r.size() == 0);
    CHECK(m.y_eq == fr.model.y_eq);
    CHECK(m.dt == fr.model.dt);
    CHECK(m.n_r == 3);
    CHECK(m.n_w == 3);
    CHECK((m.V_opt.transpose() * m.W_nl).norm() < 1e-8);

    auto j = ssm::io::model_to_json(fr.model);
    j["monomial_ordering"] = "revlex";
    CHECK_THROWS_AS(ssm::io::model_from_json(j), ssm::IoError);
    j = ssm::io::model_to_json(fr.model);
    j["V_opt"]["rows"] = 3;
    CHECK_THROWS_AS(ssm::io::model_from_json(j), ssm::IoError);
    std::filesystem::remove(path);
}
