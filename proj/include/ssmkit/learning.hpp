#pragma once

#include "ssmkit/curation.hpp"

#include <optional>
#include <string>
#include <vector>

namespace ssm::learning {

using numkit::Matrix;
using numkit::PolynomialBasis;
using numkit::Vector;

enum class ProjectionMode { Orthogonal, Oblique };
std::string to_string(ProjectionMode mode);
ProjectionMode parse_projection_mode(const std::string& s);

enum class GradientMode {
    Alternating,  // R_trans re-solved in closed form for every trial C
    Joint,        // plain descent on (C, R_trans) together
};

struct ObliqueOptions {
    int max_iters = 5000;
    double rel_tol = 1e-8;
    double armijo_slope = 1e-4;
    double shrink = 0.5;
    int max_backtracks = 60;
    /// First trial step; later iterations start from a Barzilai-Borwein estimate.
    double initial_step = 1.0;
    GradientMode gradient_mode = GradientMode::Alternating;
    double ridge = 0.0;
};

struct ObliqueFit {
    Matrix V_opt;
    Matrix C;
    Matrix R_trans;  // diagnostic only; the transient dynamics are not part of the model
    std::vector<double> loss_history;  // accepted iterates, starting at C = 0
    bool converged = false;
    int iterations = 0;
    std::string stop_reason;
};

struct SSMModel {
    std::string mode = "orthogonal";
    int n = 0, p = 0, m = 0, n_r = 1, n_w = 1, delays = 0, base_dim = 0;
    int delay_lag = 1;  // samples between delay coordinates
    double dt = 0.0;  // sampling interval of the training data
    Matrix V_E;       // p x n
    Matrix V_opt;     // p x n
    Matrix W_nl;      // p x K_w, monomials of orders 2..n_w
    Matrix R;         // n x K_r, monomials of orders 1..n_r
    Matrix B_r;       // n x m (m = 0 for autonomous models)
    Vector y_eq;      // embedded equilibrium (p)
    Vector y_eq_base; // observable equilibrium (q)

    PolynomialBasis dynamics_basis() const { return {n, 1, n_r}; }
    PolynomialBasis manifold_basis() const { return {n, 2, n_w}; }
    Matrix projector() const { return V_E * V_opt.transpose(); }
    /// Raw samples needed to form one embedded observable.
    int history_length() const { return delays * delay_lag + 1; }
    /// Throws DimensionError when fields disagree with the stated sizes.
    void validate() const;
};

double transient_loss(const Matrix& C, const Matrix& R_trans, const Matrix& Y_trans,
                      const Matrix& Ydot_trans, const Matrix& V_E, const Matrix& N,
                      const PolynomialBasis& basis);

struct LossGradient {
    Matrix grad_C;
    Matrix grad_R;
};

LossGradient transient_loss_gradient(const Matrix& C, const Matrix& R_trans, const Matrix& Y_trans,
                                     const Matrix& Ydot_trans, const Matrix& V_E, const Matrix& N,
                                     const PolynomialBasis& basis);

/// Closed-form R_trans minimizing the transient loss at fixed C.
Matrix best_transient_dynamics(const Matrix& C, const Matrix& Y_trans, const Matrix& Ydot_trans,
                               const Matrix& V_E, const Matrix& N, const PolynomialBasis& basis,
                               double ridge = 0.0);

ObliqueFit learn_oblique_projection(const curation::CuratedData& curated, int n_r,
                                    const ObliqueOptions& opts = {});

struct OracleProjection {
    Matrix V_E;    // orthonormal basis of the slow invariant subspace
    Matrix V_opt;  // chart whose kernel is the fast invariant subspace
    Matrix V0;     // Sylvester solution in Schur coordinates
};

/// Linear fiber-aligned projection for x' = A x with the n slowest eigenvalues kept.
OracleProjection analytic_oracle(const Matrix& A, int n);

/// Orthonormal basis of ker(V_opt^T), the directions annihilated by the projector.
Matrix projection_kernel(const Matrix& V_opt);

Matrix fit_reduced_dynamics(const Matrix& Y_near, const Matrix& Ydot_near, const Matrix& V_opt,
                            int n_r, double ridge = 0.0);

Matrix fit_parameterization(const Matrix& Y_near, const Matrix& V_opt, const Matrix& V_E, int n_w,
                            double ridge = 0.0);

Matrix fit_control_matrix(const Matrix& Y_u, const Matrix& Ydot_u, const Matrix& U,
                          const Matrix& V_opt, const Matrix& R, int n_r, double ridge = 0.0);

struct FitOptions {
    ProjectionMode mode = ProjectionMode::Oblique;
    int n_r = 3;
    int n_w = 3;
    /// Polynomial order of the transient fit; 0 means "same as n_r".
    int n_r_transient = 0;
    double ridge = 0.0;
    ObliqueOptions oblique;
};

struct FitReport {
    std::optional<ObliqueFit> oblique;
    double near_residual = 0.0;     // squared residual of the reduced-dynamics fit
    double control_residual = 0.0;  // squared residual of the control fit
    double constraint_VtVE = 0.0;   // ||V_opt^T V_E - I||_F
    double constraint_VtW = 0.0;    // ||V_opt^T W_nl||_F
    double idempotency = 0.0;       // ||P^2 - P||_F
};

struct FitResult {
    SSMModel model;
    FitReport report;
};

/// Chart selection, then reduced dynamics, parameterization and (if data given) control matrix.
FitResult fit_ssm_model(const curation::CuratedData& curated,
                        const curation::ControlledData* controlled, const FitOptions& opts);

}  // namespace ssm::learning
