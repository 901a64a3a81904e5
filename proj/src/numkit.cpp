#include "ssmkit/numkit.hpp"

#include "ssmkit/error.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace ssm::numkit {

namespace {

void append_degree(int dim, int degree, std::vector<int>& prefix,
                   std::vector<std::vector<int>>& out) {
    const int var = static_cast<int>(prefix.size());
    if (var == dim - 1) {
        prefix.push_back(degree);
        out.push_back(prefix);
        prefix.pop_back();
        return;
    }
    for (int e = degree; e >= 0; --e) {
        prefix.push_back(e);
        append_degree(dim, degree - e, prefix, out);
        prefix.pop_back();
    }
}

}  // namespace

PolynomialBasis::PolynomialBasis(int dim, int lo, int hi) : dim_(dim), lo_(lo), hi_(hi) {
    if (dim <= 0) throw DimensionError("PolynomialBasis: dim must be positive");
    if (lo < 0) throw DimensionError("PolynomialBasis: lo must be non-negative");
    std::vector<int> prefix;
    prefix.reserve(dim);
    for (int d = lo; d <= hi; ++d) append_degree(dim, d, prefix, exponents_);
}

long PolynomialBasis::count_of_degree(int dim, int d) {
    // C(dim + d - 1, d)
    long num = 1;
    for (int i = 1; i <= d; ++i) num = num * (dim + i - 1) / i;
    return num;
}

Vector monomials(const Vector& x, const PolynomialBasis& basis) {
    if (x.size() != basis.dim())
        throw DimensionError("monomials: expected length " + std::to_string(basis.dim()) +
                             ", got " + std::to_string(x.size()));
    const int n = basis.dim();
    const int maxdeg = std::max(basis.hi(), 0);
    Matrix pw(n, maxdeg + 1);
    for (int i = 0; i < n; ++i) {
        pw(i, 0) = 1.0;
        for (int e = 1; e <= maxdeg; ++e) pw(i, e) = pw(i, e - 1) * x(i);
    }
    Vector out(basis.size());
    const auto& ex = basis.exponents();
    for (int k = 0; k < basis.size(); ++k) {
        double v = 1.0;
        for (int i = 0; i < n; ++i) v *= pw(i, ex[k][i]);
        out(k) = v;
    }
    return out;
}

Matrix monomials(const Matrix& X, const PolynomialBasis& basis) {
    if (X.rows() != basis.dim())
        throw DimensionError("monomials: expected " + std::to_string(basis.dim()) + " rows, got " +
                             std::to_string(X.rows()));
    Matrix out(basis.size(), X.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j) out.col(j) = monomials(Vector(X.col(j)), basis);
    return out;
}

Matrix monomial_jacobian(const Vector& x, const PolynomialBasis& basis) {
    if (x.size() != basis.dim()) throw DimensionError("monomial_jacobian: dimension mismatch");
    const int n = basis.dim();
    const int maxdeg = std::max(basis.hi(), 0);
    Matrix pw(n, maxdeg + 1);
    for (int i = 0; i < n; ++i) {
        pw(i, 0) = 1.0;
        for (int e = 1; e <= maxdeg; ++e) pw(i, e) = pw(i, e - 1) * x(i);
    }
    Matrix J = Matrix::Zero(basis.size(), n);
    const auto& ex = basis.exponents();
    for (int k = 0; k < basis.size(); ++k) {
        for (int i = 0; i < n; ++i) {
            const int ei = ex[k][i];
            if (ei == 0) continue;
            double v = ei * pw(i, ei - 1);
            for (int j = 0; j < n; ++j)
                if (j != i) v *= pw(j, ex[k][j]);
            J(k, i) = v;
        }
    }
    return J;
}

void require_finite(const Matrix& M, std::string_view what) {
    if (!M.allFinite()) throw NumericalError(std::string(what) + ": non-finite entries");
}

double squared_norm(const Matrix& M) {
    double sum = 0.0, comp = 0.0;
    for (Eigen::Index j = 0; j < M.cols(); ++j) {
        for (Eigen::Index i = 0; i < M.rows(); ++i) {
            const double v = M(i, j) * M(i, j);
            const double t = sum + v;
            if (std::abs(sum) >= v)
                comp += (sum - t) + v;
            else
                comp += (v - t) + sum;
            sum = t;
        }
    }
    return sum + comp;
}

Matrix least_squares(const Matrix& A, const Matrix& B, const LeastSquaresOptions& opts) {
    if (A.cols() != B.cols())
        throw DimensionError("least_squares: A and B must have the same number of snapshots");
    require_finite(A, "least_squares A");
    require_finite(B, "least_squares B");
    const Eigen::Index p = A.rows();
    const Eigen::Index N = A.cols();
    if (p == 0) return Matrix::Zero(B.rows(), 0);

    if (opts.ridge > 0.0) {
        Matrix lhs(N + p, p);
        lhs.topRows(N) = A.transpose();
        lhs.bottomRows(p) = std::sqrt(opts.ridge) * Matrix::Identity(p, p);
        Matrix rhs = Matrix::Zero(N + p, B.rows());
        rhs.topRows(N) = B.transpose();
        Eigen::ColPivHouseholderQR<Matrix> qr(lhs);
        return qr.solve(rhs).transpose();
    }

    if (N < p)
        throw RankDeficientError("least_squares: " + std::to_string(N) + " snapshots for " +
                                 std::to_string(p) + " regressors");
    // Equilibrate regressor rows so the rank decision is scale free.
    Vector scale = A.rowwise().norm();
    for (Eigen::Index i = 0; i < p; ++i)
        if (scale(i) == 0.0)
            throw RankDeficientError("least_squares: regressor row " + std::to_string(i) +
                                     " is identically zero");
    Matrix As = scale.cwiseInverse().asDiagonal() * A;
    Eigen::ColPivHouseholderQR<Matrix> qr(As.transpose());
    qr.setThreshold(1e-13);
    if (qr.rank() < p)
        throw RankDeficientError("least_squares: regressors have rank " +
                                 std::to_string(qr.rank()) + " < " + std::to_string(p));
    Matrix Xs = qr.solve(B.transpose()).transpose();
    return Xs * scale.cwiseInverse().asDiagonal();
}

void fix_column_signs(Matrix& V) {
    for (Eigen::Index j = 0; j < V.cols(); ++j) {
        Eigen::Index imax = 0;
        double best = -1.0;
        for (Eigen::Index i = 0; i < V.rows(); ++i) {
            if (std::abs(V(i, j)) > best) {
                best = std::abs(V(i, j));
                imax = i;
            }
        }
        if (V(imax, j) < 0.0) V.col(j) *= -1.0;
    }
}

Matrix truncated_svd(const Matrix& Y, int n) {
    require_finite(Y, "truncated_svd");
    if (n <= 0) throw DimensionError("truncated_svd: n must be positive");
    if (n > std::min(Y.rows(), Y.cols()))
        throw DimensionError("truncated_svd: n=" + std::to_string(n) + " exceeds min(p, N)");
    Eigen::BDCSVD<Matrix> svd(Y, Eigen::ComputeThinU);
    const Vector& s = svd.singularValues();
    const double tol = std::numeric_limits<double>::epsilon() *
                       static_cast<double>(std::max(Y.rows(), Y.cols())) * s(0);
    if (s(0) == 0.0 || s(n - 1) <= tol)
        throw RankDeficientError("truncated_svd: requested " + std::to_string(n) +
                                 " directions but numerical rank is lower");
    Matrix U = svd.matrixU().leftCols(n);
    fix_column_signs(U);
    return U;
}

namespace {

void check_spectral_gap(const Matrix& A_TT, const Matrix& A_NN) {
    Eigen::EigenSolver<Matrix> ea(A_TT, false), eb(A_NN, false);
    const Eigen::VectorXcd la = ea.eigenvalues();
    const Eigen::VectorXcd lb = eb.eigenvalues();
    double radius = 0.0;
    for (auto v : la) radius = std::max(radius, std::abs(v));
    for (auto v : lb) radius = std::max(radius, std::abs(v));
    double gap = std::numeric_limits<double>::infinity();
    for (auto a : la)
        for (auto b : lb) gap = std::min(gap, std::abs(a - b));
    if (!(gap > 1e-8 * radius))
        throw SpectralGapViolation("sylvester_solve: spectra of A_TT and A_NN collide (gap " +
                                   std::to_string(gap) + ", radius " + std::to_string(radius) + ")");
}

}  // namespace

Matrix sylvester_solve(const Matrix& A_TT, const Matrix& A_NN, const Matrix& A_TN) {
    const Eigen::Index n = A_TT.rows();
    const Eigen::Index m = A_NN.rows();
    if (A_TT.cols() != n || A_NN.cols() != m)
        throw DimensionError("sylvester_solve: A_TT and A_NN must be square");
    if (A_TN.rows() != n || A_TN.cols() != m)
        throw DimensionError("sylvester_solve: A_TN must be n x m");
    require_finite(A_TT, "sylvester_solve A_TT");
    require_finite(A_NN, "sylvester_solve A_NN");
    require_finite(A_TN, "sylvester_solve A_TN");
    if (n == 0 || m == 0) return Matrix::Zero(n, m);
    check_spectral_gap(A_TT, A_NN);

    Eigen::RealSchur<Matrix> sa(A_TT), sb(A_NN);
    const Matrix& Ta = sa.matrixT();
    const Matrix& Tb = sb.matrixT();
    const Matrix& Ua = sa.matrixU();
    const Matrix& Ub = sb.matrixU();

    // Ta Y - Y Tb = G with Y = Ua^T V Ub; sweep Tb's quasi-triangular columns left to right.
    const Matrix G = Ua.transpose() * (-A_TN) * Ub;
    Matrix Y = Matrix::Zero(n, m);
    const Matrix In = Matrix::Identity(n, n);
    Eigen::Index j = 0;
    while (j < m) {
        const bool block = (j + 1 < m) && Tb(j + 1, j) != 0.0;
        if (!block) {
            Vector rhs = G.col(j);
            if (j > 0) rhs += Y.leftCols(j) * Tb.col(j).head(j);
            Y.col(j) = (Ta - Tb(j, j) * In).fullPivLu().solve(rhs);
            j += 1;
        } else {
            Matrix rhs = G.middleCols(j, 2);
            if (j > 0) rhs += Y.leftCols(j) * Tb.block(0, j, j, 2);
            const Eigen::Matrix2d S = Tb.block<2, 2>(j, j);
            Matrix K = Matrix::Zero(2 * n, 2 * n);
            for (int c = 0; c < 2; ++c) {
                K.block(c * n, c * n, n, n) += Ta;
                for (int r = 0; r < 2; ++r) K.block(c * n, r * n, n, n) -= S(r, c) * In;
            }
            Vector rv(2 * n);
            rv << rhs.col(0), rhs.col(1);
            const Vector sol = K.fullPivLu().solve(rv);
            Y.col(j) = sol.head(n);
            Y.col(j + 1) = sol.tail(n);
            j += 2;
        }
    }
    return Ua * Y * Ub.transpose();
}

Matrix finite_difference(const Matrix& Y, double dt) {
    if (!(dt > 0.0)) throw DimensionError("finite_difference: dt must be positive");
    const Eigen::Index N = Y.cols();
    if (N < 3) throw DimensionError("finite_difference: need at least 3 samples");
    Matrix D(Y.rows(), N);
    const double h2 = 2.0 * dt;
    D.col(0) = (-3.0 * Y.col(0) + 4.0 * Y.col(1) - Y.col(2)) / h2;
    for (Eigen::Index k = 1; k + 1 < N; ++k) D.col(k) = (Y.col(k + 1) - Y.col(k - 1)) / h2;
    D.col(N - 1) = (3.0 * Y.col(N - 1) - 4.0 * Y.col(N - 2) + Y.col(N - 3)) / h2;
    return D;
}

Matrix delay_embed(const Matrix& Y, int d, int lag) {
    if (d < 0) throw DimensionError("delay_embed: d must be non-negative");
    if (lag < 1) throw DimensionError("delay_embed: lag must be positive");
    const Eigen::Index q = Y.rows();
    const Eigen::Index N = Y.cols();
    const Eigen::Index span = Eigen::Index(d) * lag;
    if (N <= span)
        throw DimensionError("delay_embed: trajectory of " + std::to_string(N) +
                             " samples is shorter than d*lag+1=" + std::to_string(span + 1));
    Matrix out(q * (d + 1), N - span);
    for (Eigen::Index k = 0; k < N - span; ++k)
        for (int j = 0; j <= d; ++j) out.block(j * q, k, q, 1) = Y.col(k + span - j * lag);
    return out;
}

Matrix orthonormal_complement(const Matrix& V) {
    const Eigen::Index p = V.rows();
    const Eigen::Index n = V.cols();
    if (n > p) throw DimensionError("orthonormal_complement: more columns than rows");
    require_finite(V, "orthonormal_complement");
    const double err = (V.transpose() * V - Matrix::Identity(n, n)).norm();
    if (err > 1e-8)
        throw DimensionError("orthonormal_complement: input columns are not orthonormal");
    Eigen::HouseholderQR<Matrix> qr(V);
    Matrix Q = qr.householderQ() * Matrix::Identity(p, p);
    Matrix N = Q.rightCols(p - n);
    // project out residual V components left by the reflectors
    N -= V * (V.transpose() * N);
    if (N.cols() > 0) {
        Eigen::HouseholderQR<Matrix> qr2(N);
        Matrix Nq = qr2.householderQ() * Matrix::Identity(p, N.cols());
        N = Nq;
    }
    fix_column_signs(N);
    return N;
}

Matrix orthonormalize(const Matrix& V) {
    Eigen::HouseholderQR<Matrix> qr(V);
    Matrix Q = qr.householderQ() * Matrix::Identity(V.rows(), V.cols());
    return Q;
}

double max_principal_angle(const Matrix& U, const Matrix& V) {
    Matrix Qu = orthonormalize(U);
    Matrix Qv = orthonormalize(V);
    if (Qu.cols() < Qv.cols()) std::swap(Qu, Qv);
    // sin of the largest angle is the norm of Qv's component outside span(Qu)
    const Matrix R = Qv - Qu * (Qu.transpose() * Qv);
    Eigen::JacobiSVD<Matrix> svd(R);
    const double s = svd.singularValues().size() > 0 ? svd.singularValues()(0) : 0.0;
    return std::asin(std::clamp(s, 0.0, 1.0));
}

}  // namespace ssm::numkit
