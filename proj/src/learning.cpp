#include "ssmkit/learning.hpp"

#include "ssmkit/error.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <vector>

extern "C" {
using dgees_select = int (*)(const double*, const double*);
void dgees_(const char* jobvs, const char* sort, dgees_select select, const int* n, double* a,
            const int* lda, int* sdim, double* wr, double* wi, double* vs, const int* ldvs,
            double* work, const int* lwork, int* bwork, int* info, std::size_t jobvs_len,
            std::size_t sort_len);
}

namespace ssm::learning {

using numkit::monomials;

std::string to_string(ProjectionMode mode) {
    return mode == ProjectionMode::Oblique ? "oblique" : "orthogonal";
}

ProjectionMode parse_projection_mode(const std::string& s) {
    if (s == "oblique") return ProjectionMode::Oblique;
    if (s == "orthogonal") return ProjectionMode::Orthogonal;
    throw ConfigError("unknown projection mode '" + s + "' (expected orthogonal or oblique)");
}

void SSMModel::validate() const {
    auto need = [](bool ok, const char* what) {
        if (!ok) throw DimensionError(std::string("SSMModel: ") + what);
    };
    need(n >= 1 && p >= n, "require 1 <= n <= p");
    need(base_dim >= 1 && p == base_dim * (delays + 1), "p must equal base_dim (delays + 1)");
    need(n_r >= 1, "n_r must be at least 1");
    need(delay_lag >= 1, "delay_lag must be at least 1");
    need(V_E.rows() == p && V_E.cols() == n, "V_E shape");
    need(V_opt.rows() == p && V_opt.cols() == n, "V_opt shape");
    need(W_nl.rows() == p && W_nl.cols() == manifold_basis().size(), "W_nl shape");
    need(R.rows() == n && R.cols() == dynamics_basis().size(), "R shape");
    need(B_r.rows() == n && B_r.cols() == m, "B_r shape");
    need(y_eq.size() == p && y_eq_base.size() == base_dim, "equilibrium length");
}

namespace {

struct Residual {
    Matrix Vt;   // V_opt^T
    Matrix X;    // reduced coordinates
    Matrix Phi;  // monomial features
    Matrix E;    // V^T Ydot - R Phi
};

Matrix chart_from(const Matrix& C, const Matrix& V_E, const Matrix& N) {
    return N.cols() == 0 ? V_E : Matrix(V_E + N * C);
}

Residual residual(const Matrix& V, const Matrix& R, const Matrix& Y, const Matrix& Ydot,
                  const PolynomialBasis& basis) {
    Residual r;
    r.Vt = V.transpose();
    r.X = r.Vt * Y;
    r.Phi = monomials(r.X, basis);
    r.E = r.Vt * Ydot - R * r.Phi;
    return r;
}

void check_shapes(const Matrix& C, const Matrix& R, const Matrix& Y, const Matrix& Ydot,
                  const Matrix& V_E, const Matrix& N, const PolynomialBasis& basis) {
    const auto p = V_E.rows(), n = V_E.cols();
    if (Y.rows() != p || Ydot.rows() != p || Y.cols() != Ydot.cols())
        throw DimensionError("transient loss: data shape mismatch");
    if (N.rows() != p || N.cols() != p - n || C.rows() != p - n || C.cols() != n)
        throw DimensionError("transient loss: C or N shape mismatch");
    if (basis.dim() != n || R.rows() != n || R.cols() != basis.size())
        throw DimensionError("transient loss: R shape mismatch");
}

}  // namespace

double transient_loss(const Matrix& C, const Matrix& R_trans, const Matrix& Y_trans,
                      const Matrix& Ydot_trans, const Matrix& V_E, const Matrix& N,
                      const PolynomialBasis& basis) {
    check_shapes(C, R_trans, Y_trans, Ydot_trans, V_E, N, basis);
    if (Y_trans.cols() == 0) return 0.0;
    return numkit::squared_norm(residual(chart_from(C, V_E, N), R_trans, Y_trans, Ydot_trans, basis).E);
}

LossGradient transient_loss_gradient(const Matrix& C, const Matrix& R_trans, const Matrix& Y_trans,
                                     const Matrix& Ydot_trans, const Matrix& V_E, const Matrix& N,
                                     const PolynomialBasis& basis) {
    check_shapes(C, R_trans, Y_trans, Ydot_trans, V_E, N, basis);
    const auto n = V_E.cols();
    LossGradient g{Matrix::Zero(C.rows(), C.cols()), Matrix::Zero(R_trans.rows(), R_trans.cols())};
    if (Y_trans.cols() == 0) return g;
    const Residual r = residual(chart_from(C, V_E, N), R_trans, Y_trans, Ydot_trans, basis);
    // Chain rule through the features: G_j = J(x_j)^T R^T e_j.
    const Matrix M = R_trans.transpose() * r.E;
    Matrix G(n, Y_trans.cols());
    for (Eigen::Index j = 0; j < Y_trans.cols(); ++j)
        G.col(j) = numkit::monomial_jacobian(r.X.col(j), basis).transpose() * M.col(j);
    const Matrix dV = 2.0 * (Ydot_trans * r.E.transpose() - Y_trans * G.transpose());
    g.grad_C = N.transpose() * dV;
    g.grad_R = -2.0 * r.E * r.Phi.transpose();
    return g;
}

Matrix best_transient_dynamics(const Matrix& C, const Matrix& Y_trans, const Matrix& Ydot_trans,
                               const Matrix& V_E, const Matrix& N, const PolynomialBasis& basis,
                               double ridge) {
    const Matrix Vt = chart_from(C, V_E, N).transpose();
    return numkit::least_squares(monomials(Matrix(Vt * Y_trans), basis), Vt * Ydot_trans, {ridge});
}

namespace {

double dot(const Matrix& a, const Matrix& b) { return (a.array() * b.array()).sum(); }

// Parameters of one line-search state.
struct Point {
    Matrix C, R;
    double loss = 0.0;
    Matrix gC, gR;
};

}  // namespace

ObliqueFit learn_oblique_projection(const curation::CuratedData& curated, int n_r,
                                    const ObliqueOptions& opts) {
    const Matrix& V_E = curated.V_E;
    const Matrix& Y = curated.Y_trans;
    const Matrix& Yd = curated.Ydot_trans;
    if (Y.cols() == 0) throw DimensionError("learn_oblique_projection: no transient data");
    if (n_r < 1) throw DimensionError("learn_oblique_projection: n_r must be positive");
    const auto p = V_E.rows(), n = V_E.cols();
    const PolynomialBasis basis(static_cast<int>(n), 1, n_r);
    const Matrix N = numkit::orthonormal_complement(V_E);
    const bool joint = opts.gradient_mode == GradientMode::Joint;

    // In alternating mode the loss is the reduced one, min over R at fixed C.
    auto evaluate = [&](Point& pt, bool resolve_R) {
        if (resolve_R) pt.R = best_transient_dynamics(pt.C, Y, Yd, V_E, N, basis, opts.ridge);
        pt.loss = transient_loss(pt.C, pt.R, Y, Yd, V_E, N, basis);
    };
    auto gradient = [&](Point& pt) {
        LossGradient g = transient_loss_gradient(pt.C, pt.R, Y, Yd, V_E, N, basis);
        pt.gC = std::move(g.grad_C);
        pt.gR = joint ? std::move(g.grad_R) : Matrix::Zero(pt.R.rows(), pt.R.cols());
    };
    auto grad_sq = [](const Point& pt) { return dot(pt.gC, pt.gC) + dot(pt.gR, pt.gR); };

    ObliqueFit fit;
    Point cur;
    cur.C = Matrix::Zero(p - n, n);
    evaluate(cur, true);
    if (!std::isfinite(cur.loss)) throw OptimizationError("non-finite transient loss", 0);
    fit.loss_history.push_back(cur.loss);

    if (p == n) {
        fit.converged = true;
        fit.stop_reason = "no normal directions";
    } else {
        gradient(cur);
        double g2 = grad_sq(cur);
        double step = g2 > 0.0 ? opts.initial_step * cur.loss / g2 : 0.0;
        int small_steps = 0;
        fit.stop_reason = "iteration limit";
        for (int it = 1; it <= opts.max_iters; ++it) {
            fit.iterations = it;
            if (!std::isfinite(g2)) throw OptimizationError("non-finite gradient", it);
            if (g2 == 0.0 || cur.loss == 0.0) {
                fit.converged = true;
                fit.stop_reason = "stationary point";
                break;
            }
            Point trial;
            bool accepted = false;
            for (int k = 0; k < opts.max_backtracks; ++k, step *= opts.shrink) {
                trial.C = cur.C - step * cur.gC;
                trial.R = joint ? Matrix(cur.R - step * cur.gR) : cur.R;
                try {
                    evaluate(trial, !joint);
                } catch (const RankDeficientError&) {
                    continue;
                }
                if (std::isfinite(trial.loss) &&
                    trial.loss <= cur.loss - opts.armijo_slope * step * g2) {
                    accepted = true;
                    break;
                }
            }
            if (!accepted) {
                fit.converged = true;
                fit.stop_reason = "line search exhausted at rounding level";
                break;
            }
            gradient(trial);
            const double rel = (cur.loss - trial.loss) / std::max(cur.loss, DBL_MIN);
            // Barzilai-Borwein estimate for the next trial step; R only counts when it is a
            // free variable.
            double ss = dot(trial.C - cur.C, trial.C - cur.C);
            double sy = dot(trial.C - cur.C, trial.gC - cur.gC);
            if (joint) {
                ss += dot(trial.R - cur.R, trial.R - cur.R);
                sy += dot(trial.R - cur.R, trial.gR - cur.gR);
            }
            step = sy > 0.0 ? ss / sy : 2.0 * step;
            cur = std::move(trial);
            g2 = grad_sq(cur);
            fit.loss_history.push_back(cur.loss);
            small_steps = rel < opts.rel_tol ? small_steps + 1 : 0;
            if (small_steps >= 3) {
                fit.converged = true;
                fit.stop_reason = "relative decrease below tolerance";
                break;
            }
        }
    }
    fit.C = cur.C;
    fit.R_trans = cur.R;
    fit.V_opt = chart_from(cur.C, V_E, N);
    return fit;
}

namespace {

thread_local double g_select_threshold = 0.0;

int select_slow(const double* wr, const double*) { return *wr > g_select_threshold ? 1 : 0; }

}  // namespace

OracleProjection analytic_oracle(const Matrix& A, int n) {
    const int nf = static_cast<int>(A.rows());
    if (A.cols() != nf) throw DimensionError("analytic_oracle: A must be square");
    if (n < 1 || n >= nf) throw DimensionError("analytic_oracle: need 1 <= n < dim(A)");
    numkit::require_finite(A, "analytic_oracle: A");

    const Eigen::VectorXcd ev = Eigen::EigenSolver<Matrix>(A, false).eigenvalues();
    std::vector<double> re(nf);
    for (int i = 0; i < nf; ++i) re[i] = ev(i).real();
    std::sort(re.begin(), re.end(), std::greater<>());
    if (re.front() >= 0.0) throw NumericalError("analytic_oracle: A is not stable");
    const double scale = ev.cwiseAbs().maxCoeff();
    if (re[n - 1] - re[n] <= 1e-8 * scale)
        throw SpectralGapViolation("analytic_oracle: no spectral gap after the " + std::to_string(n) +
                                   " slowest eigenvalues");
    g_select_threshold = 0.5 * (re[n - 1] + re[n]);

    Matrix T = A;
    Matrix Q(nf, nf);
    std::vector<double> wr(nf), wi(nf);
    std::vector<int> bwork(nf);
    int sdim = 0, info = 0, lwork = -1;
    double wq = 0.0;
    const char jobvs = 'V', sort = 'S';
    dgees_(&jobvs, &sort, select_slow, &nf, T.data(), &nf, &sdim, wr.data(), wi.data(), Q.data(), &nf,
           &wq, &lwork, bwork.data(), &info, 1, 1);
    lwork = std::max(1, static_cast<int>(wq));
    std::vector<double> work(lwork);
    dgees_(&jobvs, &sort, select_slow, &nf, T.data(), &nf, &sdim, wr.data(), wi.data(), Q.data(), &nf,
           work.data(), &lwork, bwork.data(), &info, 1, 1);
    if (info != 0 || sdim != n)
        throw NumericalError("analytic_oracle: ordered Schur decomposition failed (info " +
                             std::to_string(info) + ", sdim " + std::to_string(sdim) + ")");

    const int nn = nf - n;
    const Matrix Q_T = Q.leftCols(n), Q_N = Q.rightCols(nn);
    OracleProjection out;
    out.V0 = numkit::sylvester_solve(T.topLeftCorner(n, n), T.bottomRightCorner(nn, nn),
                                     T.topRightCorner(n, nn));
    out.V_E = Q_T;
    out.V_opt = Q_T - Q_N * out.V0.transpose();
    // Same sign convention as the data-driven tangent basis; applied to both factors.
    for (int j = 0; j < n; ++j) {
        Eigen::Index idx;
        out.V_E.col(j).cwiseAbs().maxCoeff(&idx);
        if (out.V_E(idx, j) < 0.0) {
            out.V_E.col(j) *= -1.0;
            out.V_opt.col(j) *= -1.0;
            out.V0.row(j) *= -1.0;
        }
    }
    return out;
}

Matrix projection_kernel(const Matrix& V_opt) {
    return numkit::orthonormal_complement(numkit::orthonormalize(V_opt));
}

Matrix fit_reduced_dynamics(const Matrix& Y_near, const Matrix& Ydot_near, const Matrix& V_opt,
                            int n_r, double ridge) {
    if (Y_near.cols() == 0) throw DimensionError("fit_reduced_dynamics: no near-manifold data");
    if (Y_near.rows() != V_opt.rows() || Ydot_near.rows() != V_opt.rows() || Ydot_near.cols() != Y_near.cols())
        throw DimensionError("fit_reduced_dynamics: shape mismatch");
    const PolynomialBasis basis(static_cast<int>(V_opt.cols()), 1, n_r);
    const Matrix Vt = V_opt.transpose();
    return numkit::least_squares(monomials(Matrix(Vt * Y_near), basis), Vt * Ydot_near, {ridge});
}

Matrix fit_parameterization(const Matrix& Y_near, const Matrix& V_opt, const Matrix& V_E, int n_w,
                            double ridge) {
    if (Y_near.cols() == 0) throw DimensionError("fit_parameterization: no near-manifold data");
    if (Y_near.rows() != V_opt.rows() || V_E.rows() != V_opt.rows() || V_E.cols() != V_opt.cols())
        throw DimensionError("fit_parameterization: shape mismatch");
    const PolynomialBasis basis(static_cast<int>(V_opt.cols()), 2, n_w);
    const auto p = V_opt.rows();
    if (basis.empty() || p == V_opt.cols()) return Matrix::Zero(p, basis.size());
    const Matrix Q = projection_kernel(V_opt);
    const Matrix X = V_opt.transpose() * Y_near;
    const Matrix target = Q.transpose() * (Y_near - V_E * X);
    if (target.cwiseAbs().maxCoeff() == 0.0) return Matrix::Zero(p, basis.size());
    return Q * numkit::least_squares(monomials(X, basis), target, {ridge});
}

Matrix fit_control_matrix(const Matrix& Y_u, const Matrix& Ydot_u, const Matrix& U,
                          const Matrix& V_opt, const Matrix& R, int n_r, double ridge) {
    if (Y_u.rows() != V_opt.rows() || Ydot_u.rows() != V_opt.rows() || Y_u.cols() != Ydot_u.cols() ||
        U.cols() != Y_u.cols())
        throw DimensionError("fit_control_matrix: shape mismatch");
    if (U.rows() == 0) throw DimensionError("fit_control_matrix: no input channels");
    // Sequential Gram-Schmidt over input channels names the first one that adds nothing new.
    {
        Matrix basis(0, U.cols());
        for (Eigen::Index i = 0; i < U.rows(); ++i) {
            Vector r = U.row(i).transpose();
            const double scale = r.norm();
            for (Eigen::Index k = 0; k < basis.rows(); ++k) r -= basis.row(k).dot(r) * basis.row(k).transpose();
            for (Eigen::Index k = 0; k < basis.rows(); ++k) r -= basis.row(k).dot(r) * basis.row(k).transpose();
            if (scale == 0.0 || r.norm() <= 1e-10 * scale)
                throw ExcitationError("insufficient excitation in input channel " + std::to_string(i) +
                                      (scale == 0.0 ? " (identically zero)" : " (linearly dependent)"),
                                      static_cast<int>(i));
            basis.conservativeResize(basis.rows() + 1, Eigen::NoChange);
            basis.row(basis.rows() - 1) = r.transpose() / r.norm();
        }
    }
    const PolynomialBasis basis(static_cast<int>(V_opt.cols()), 1, n_r);
    if (R.rows() != V_opt.cols() || R.cols() != basis.size())
        throw DimensionError("fit_control_matrix: R shape mismatch");
    const Matrix Vt = V_opt.transpose();
    const Matrix target = Vt * Ydot_u - R * monomials(Matrix(Vt * Y_u), basis);
    return numkit::least_squares(U, target, {ridge});
}

FitResult fit_ssm_model(const curation::CuratedData& curated,
                        const curation::ControlledData* controlled, const FitOptions& opts) {
    FitResult out;
    SSMModel& m = out.model;
    m.mode = to_string(opts.mode);
    m.n = curated.n;
    m.p = curated.p();
    m.base_dim = curated.base_dim;
    m.delays = curated.delays;
    m.delay_lag = curated.delay_lag;
    m.n_r = opts.n_r;
    m.n_w = opts.n_w;
    m.dt = curated.dt;
    m.V_E = curated.V_E;
    m.y_eq = curated.y_eq;
    m.y_eq_base = curated.y_eq_base;

    if (opts.mode == ProjectionMode::Oblique) {
        out.report.oblique = learn_oblique_projection(
            curated, opts.n_r_transient > 0 ? opts.n_r_transient : opts.n_r, opts.oblique);
        m.V_opt = out.report.oblique->V_opt;
    } else {
        m.V_opt = curated.V_E;
    }

    m.R = fit_reduced_dynamics(curated.Y_near, curated.Ydot_near, m.V_opt, m.n_r, opts.ridge);
    m.W_nl = fit_parameterization(curated.Y_near, m.V_opt, m.V_E, m.n_w, opts.ridge);
    const PolynomialBasis dyn = m.dynamics_basis();
    const Matrix Vt = m.V_opt.transpose();
    out.report.near_residual = numkit::squared_norm(
        Vt * curated.Ydot_near - m.R * monomials(Matrix(Vt * curated.Y_near), dyn));

    if (controlled) {
        m.B_r = fit_control_matrix(controlled->Y, controlled->Ydot, controlled->U, m.V_opt, m.R, m.n_r,
                                   opts.ridge);
        m.m = static_cast<int>(m.B_r.cols());
        out.report.control_residual = numkit::squared_norm(
            Vt * controlled->Ydot - m.R * monomials(Matrix(Vt * controlled->Y), dyn) - m.B_r * controlled->U);
    } else {
        m.B_r = Matrix::Zero(m.n, 0);
        m.m = 0;
    }

    const Matrix P = m.projector();
    out.report.constraint_VtVE = (Vt * m.V_E - Matrix::Identity(m.n, m.n)).norm();
    out.report.constraint_VtW = (Vt * m.W_nl).norm();
    out.report.idempotency = (P * P - P).norm();
    m.validate();
    return out;
}

}  // namespace ssm::learning
