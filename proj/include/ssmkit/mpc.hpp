#pragma once

#include "ssmkit/rom.hpp"
#include "ssmkit/systems.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace ssm::mpc {

using learning::SSMModel;
using numkit::Matrix;
using numkit::Vector;

/// Tracking objective sum_k |z_k - r_k|^2_Q dt + |z_N - r_N|^2_Qf
///   + sum_k (|u_k|^2_Ru + |u_k - u_{k-1}|^2_Rd) dt, with box bounds on u.
struct MpcConfig {
    Matrix Q, Q_f;   // o x o, positive semidefinite
    Matrix R_u;      // m x m, positive definite
    Matrix R_delta;  // m x m, positive semidefinite
    Matrix C;        // o x p selector acting on the embedded observable
    int horizon = 8;
    double dt_mpc = 0.05;
    Vector u_min, u_max;
    int stride = 2;
    int scp_iters = 3;
    double qp_tol = 1e-10;
    int qp_max_iters = 20000;
    int rk4_substeps = 1;  // RK4 steps per dt_mpc in the discretization

    int outputs() const { return static_cast<int>(C.rows()); }
    int inputs() const { return static_cast<int>(R_u.rows()); }
    /// Throws ConfigError describing the first violated requirement.
    void validate(int p, int m) const;
};

struct DiscreteLinearization {
    Matrix A, B;
    Vector c;
};

/// Exact sensitivities of `substeps` RK4 steps over dt, affine at (x_bar, u_bar).
DiscreteLinearization discretize_linearize(const SSMModel& model, const Vector& x_bar, const Vector& u_bar,
                                           double dt, int substeps = 1);
/// The RK4 flow map itself, consistent with discretize_linearize.
Vector discrete_flow(const SSMModel& model, const Vector& x, const Vector& u, double dt, int substeps = 1);

/// Performance output z(x_r) = C (w(x_r) + y_eq).
Vector performance_output(const SSMModel& model, const Matrix& C, const Vector& x_r);

/// Affine dynamics and output maps along a nominal trajectory over the horizon.
struct HorizonLinearization {
    Vector x0;
    std::vector<DiscreteLinearization> steps;  // k = 0..N-1
    std::vector<Vector> x_nom;                 // k = 1..N
    std::vector<Vector> z_nom;                 // z(x_nom[k])
    std::vector<Matrix> H;                     // dz/dx at x_nom[k]
};

HorizonLinearization linearize_horizon(const SSMModel& model, const MpcConfig& cfg, const Vector& x0,
                                       const std::vector<Vector>& x_nominal, const Matrix& u_nominal);

/// Box-constrained QP  min 1/2 u^T H u + f^T u,  lo <= u <= hi.
struct BoxQp {
    Matrix H;
    Vector f;
    Vector lo, hi;
};

struct QpResult {
    Vector u;
    int iterations = 0;
    bool converged = false;
    double residual = 0.0;  // |u - clip(u - grad/L)|, scale-free projected gradient
    double objective = 0.0;
};

/// Accelerated projected gradient with adaptive restart.
QpResult solve_box_qp(const BoxQp& qp, double tol, int max_iters, const Vector& warm_start = {});

/// Condensed tracking QP over the stacked inputs (u_0; ...; u_{N-1}).
BoxQp build_tracking_qp(const HorizonLinearization& lin, const Matrix& z_ref, const MpcConfig& cfg,
                        const Vector& u_prev);

struct TrackingSolution {
    Matrix U;  // m x N
    QpResult qp;
};

TrackingSolution solve_tracking_qp(const HorizonLinearization& lin, const Matrix& z_ref, const MpcConfig& cfg,
                                   const Vector& u_prev, const Matrix& warm_start = {});

using ReferenceFn = std::function<Vector(double t)>;

/// Circle of the given radius and period in the first two outputs around `center`;
/// at t = 0 it sits at center + (radius, 0).
ReferenceFn circle_reference(const Vector& center, double radius, double period);
/// Figure eight (sin wt, sin wt cos wt) scaled by `radius`, passing through `center` at t = 0.
ReferenceFn figure_eight_reference(const Vector& center, double radius, double period);
/// Columns t, z_1..z_o; linear interpolation, held constant outside the table.
ReferenceFn csv_reference(const std::filesystem::path& path);

struct SolveDiagnostics {
    double t = 0.0;
    int scp_iters = 0;
    std::vector<double> scp_change;  // max |U_round - U_previous_round| per round
    int qp_iterations = 0;           // summed over rounds
    double qp_residual = 0.0;        // worst final residual over rounds
    bool qp_converged = true;
    double wall_seconds = 0.0;
};

class MpcController {
public:
    MpcController(SSMModel model, MpcConfig cfg, ReferenceFn reference);

    /// Fills the embedding history with a resting measurement and clears warm starts.
    void reset(const Vector& y_initial);
    /// Appends a raw observable sample (spaced by the model's sampling interval).
    void record_measurement(const Vector& y);
    /// Records y, solves the horizon problem, returns the next `stride` inputs (m x stride).
    Matrix mpc_step(const Vector& y_measured, double t);

    /// Reduced state of the current embedded measurement.
    Vector reduced_state() const;
    /// C applied to the current embedded measurement (raw units).
    Vector measured_output() const;
    const SolveDiagnostics& last_diagnostics() const { return diag_; }
    const Matrix& last_plan() const { return plan_; }
    const SSMModel& model() const { return model_; }
    const MpcConfig& config() const { return cfg_; }

private:
    SSMModel model_;
    MpcConfig cfg_;
    ReferenceFn reference_;
    Matrix history_;  // q x history_length(), oldest first
    Matrix plan_;     // m x N from the latest solve
    Vector u_prev_;
    bool has_plan_ = false;
    SolveDiagnostics diag_;
};

struct ClosedLoopOptions {
    Vector x0;             // empty: plant equilibrium
    double plant_dt = 0.0; // 0: the model's sampling interval
    int substeps = 1;
};

struct ClosedLoopResult {
    Vector times;
    Matrix states;     // plant state per sample
    Matrix inputs;     // input held over [t_k, t_k+1); last column repeats
    Matrix z;          // measured performance outputs
    Matrix reference;  // reference at the same samples
    double ise = 0.0;
    std::vector<SolveDiagnostics> solves;
    bool aborted = false;
    std::string message;
};

ClosedLoopResult run_closed_loop(const systems::SystemSpec& plant, const SSMModel& model, const MpcConfig& cfg,
                                 const ReferenceFn& reference, double duration, const ClosedLoopOptions& opts = {});

/// Columns t, z_i, z_ref_i, u_j.
void write_closed_loop_csv(const ClosedLoopResult& r, const std::filesystem::path& path);
/// ISE and solver statistics; wall-clock times only when `include_timing`.
void write_closed_loop_json(const ClosedLoopResult& r, const std::filesystem::path& path, bool include_timing);

}  // namespace ssm::mpc
