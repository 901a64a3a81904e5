#include "ssmkit/mpc.hpp"

#include "ssmkit/curation.hpp"
#include "ssmkit/dataset_io.hpp"
#include "ssmkit/error.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>

namespace ssm::mpc {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("mpc." + msg);
}

bool symmetric(const Matrix& M) { return (M - M.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, M.cwiseAbs().maxCoeff()); }

double min_eig(const Matrix& M) { return Eigen::SelfAdjointEigenSolver<Matrix>(M, Eigen::EigenvaluesOnly).eigenvalues().minCoeff(); }

Vector clip(const Vector& u, const Vector& lo, const Vector& hi) { return u.cwiseMax(lo).cwiseMin(hi); }

}  // namespace

void MpcConfig::validate(int p, int m) const {
    const int o = outputs();
    require(o >= 1 && C.cols() == p, "C must be o x p with p = " + std::to_string(p));
    require(Q.rows() == o && Q.cols() == o && Q_f.rows() == o && Q_f.cols() == o, "Q and Q_f must be o x o");
    require(R_u.rows() == m && R_u.cols() == m && R_delta.rows() == m && R_delta.cols() == m,
            "R_u and R_delta must be m x m with m = " + std::to_string(m));
    require(symmetric(Q) && symmetric(Q_f) && symmetric(R_u) && symmetric(R_delta), "weights must be symmetric");
    require(min_eig(Q) >= -1e-12 && min_eig(Q_f) >= -1e-12 && min_eig(R_delta) >= -1e-12,
            "Q, Q_f and R_delta must be positive semidefinite");
    require(min_eig(R_u) > 0.0, "R_u must be positive definite");
    require(horizon >= 1, "horizon must be positive");
    require(stride >= 1 && stride <= horizon, "stride must lie in [1, horizon]");
    require(dt_mpc > 0.0, "dt_mpc must be positive");
    require(u_min.size() == m && u_max.size() == m, "input bounds must have length m");
    require((u_min.array() <= u_max.array()).all(), "u_min must not exceed u_max");
    require(scp_iters >= 1, "scp_iters must be at least 1");
    require(qp_tol > 0.0 && qp_max_iters >= 1, "qp tolerance and iteration limit must be positive");
    require(rk4_substeps >= 1, "rk4_substeps must be at least 1");
}

Vector discrete_flow(const SSMModel& model, const Vector& x, const Vector& u, double dt, int substeps) {
    const systems::VectorField f = [&model](const Vector& xx, const Vector& uu) { return rom::reduced_rhs(model, xx, uu); };
    Vector z = x;
    for (int s = 0; s < substeps; ++s) z = systems::rk4_step(f, z, u, dt / substeps);
    return z;
}

DiscreteLinearization discretize_linearize(const SSMModel& model, const Vector& x_bar, const Vector& u_bar,
                                           double dt, int substeps) {
    const int n = model.n, m = model.m;
    const double h = dt / substeps;
    const Matrix& B = model.B_r;
    Matrix Px = Matrix::Identity(n, n), Pu = Matrix::Zero(n, m);
    Vector x = x_bar;
    for (int s = 0; s < substeps; ++s) {
        // Stage derivatives and their sensitivities to (x_bar, u_bar).
        const Vector k1 = rom::reduced_rhs(model, x, u_bar);
        const Matrix A1 = rom::reduced_jacobian(model, x);
        const Matrix d1x = A1 * Px, d1u = A1 * Pu + B;
        const Vector x2 = x + 0.5 * h * k1;
        const Vector k2 = rom::reduced_rhs(model, x2, u_bar);
        const Matrix A2 = rom::reduced_jacobian(model, x2);
        const Matrix d2x = A2 * (Px + 0.5 * h * d1x), d2u = A2 * (Pu + 0.5 * h * d1u) + B;
        const Vector x3 = x + 0.5 * h * k2;
        const Vector k3 = rom::reduced_rhs(model, x3, u_bar);
        const Matrix A3 = rom::reduced_jacobian(model, x3);
        const Matrix d3x = A3 * (Px + 0.5 * h * d2x), d3u = A3 * (Pu + 0.5 * h * d2u) + B;
        const Vector x4 = x + h * k3;
        const Vector k4 = rom::reduced_rhs(model, x4, u_bar);
        const Matrix A4 = rom::reduced_jacobian(model, x4);
        const Matrix d4x = A4 * (Px + h * d3x), d4u = A4 * (Pu + h * d3u) + B;
        x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        Px += (h / 6.0) * (d1x + 2.0 * d2x + 2.0 * d3x + d4x);
        Pu += (h / 6.0) * (d1u + 2.0 * d2u + 2.0 * d3u + d4u);
    }
    DiscreteLinearization lin{Px, Pu, x - Px * x_bar - (m > 0 ? Vector(Pu * u_bar) : Vector::Zero(n))};
    if (!lin.A.allFinite() || !lin.B.allFinite() || !lin.c.allFinite())
        throw NumericalError("discretize_linearize: non-finite sensitivities");
    return lin;
}

Vector performance_output(const SSMModel& model, const Matrix& C, const Vector& x_r) {
    return C * (rom::parameterize(model, x_r) + model.y_eq);
}

HorizonLinearization linearize_horizon(const SSMModel& model, const MpcConfig& cfg, const Vector& x0,
                                       const std::vector<Vector>& x_nominal, const Matrix& u_nominal) {
    const int N = cfg.horizon;
    if (static_cast<int>(x_nominal.size()) != N + 1 || u_nominal.cols() != N)
        throw DimensionError("linearize_horizon: nominal trajectory must have N+1 states and N inputs");
    HorizonLinearization lin;
    lin.x0 = x0;
    for (int k = 0; k < N; ++k) {
        lin.steps.push_back(discretize_linearize(model, x_nominal[k], u_nominal.col(k), cfg.dt_mpc, cfg.rk4_substeps));
        const Vector& xn = x_nominal[k + 1];
        lin.x_nom.push_back(xn);
        lin.z_nom.push_back(performance_output(model, cfg.C, xn));
        lin.H.push_back(cfg.C * rom::parameterize_jacobian(model, xn));
    }
    return lin;
}

BoxQp build_tracking_qp(const HorizonLinearization& lin, const Matrix& z_ref, const MpcConfig& cfg,
                        const Vector& u_prev) {
    const int N = static_cast<int>(lin.steps.size());
    const int n = static_cast<int>(lin.x0.size());
    const int m = cfg.inputs();
    const int o = cfg.outputs();
    if (z_ref.rows() != o || z_ref.cols() != N) throw DimensionError("tracking QP: reference must be o x N");
    if (u_prev.size() != m) throw DimensionError("tracking QP: u_prev must have length m");

    // Condensed prediction x_k = F_k + S_k u over k = 1..N.
    Matrix G = Matrix::Zero(o * N, m * N);
    Vector g(o * N);
    Matrix S = Matrix::Zero(n, m * N);
    Vector F = lin.x0;
    for (int k = 0; k < N; ++k) {
        const auto& st = lin.steps[k];
        S = st.A * S;
        S.middleCols(k * m, m) = st.B;
        F = st.A * F + st.c;
        G.middleRows(k * o, o) = lin.H[k] * S;
        g.segment(k * o, o) = lin.H[k] * (F - lin.x_nom[k]) + lin.z_nom[k] - z_ref.col(k);
    }
    Matrix W = Matrix::Zero(o * N, o * N);
    Matrix Ru = Matrix::Zero(m * N, m * N), Rd = Matrix::Zero(m * N, m * N);
    Matrix D = Matrix::Identity(m * N, m * N);
    for (int k = 0; k < N; ++k) {
        W.block(k * o, k * o, o, o) = k + 1 < N ? Matrix(cfg.dt_mpc * cfg.Q) : cfg.Q_f;
        Ru.block(k * m, k * m, m, m) = cfg.dt_mpc * cfg.R_u;
        Rd.block(k * m, k * m, m, m) = cfg.dt_mpc * cfg.R_delta;
        if (k > 0) D.block(k * m, (k - 1) * m, m, m) = -Matrix::Identity(m, m);
    }
    Vector d0 = Vector::Zero(m * N);
    d0.head(m) = u_prev;

    BoxQp qp;
    qp.H = 2.0 * (G.transpose() * W * G + Ru + D.transpose() * Rd * D);
    qp.H = 0.5 * (qp.H + qp.H.transpose()).eval();
    qp.f = 2.0 * (G.transpose() * W * g - D.transpose() * Rd * d0);
    qp.lo = cfg.u_min.replicate(N, 1);
    qp.hi = cfg.u_max.replicate(N, 1);
    return qp;
}

QpResult solve_box_qp(const BoxQp& qp, double tol, int max_iters, const Vector& warm_start) {
    const auto dim = qp.f.size();
    if (qp.H.rows() != dim || qp.H.cols() != dim || qp.lo.size() != dim || qp.hi.size() != dim)
        throw DimensionError("box QP: inconsistent sizes");
    const double L = Eigen::SelfAdjointEigenSolver<Matrix>(qp.H, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
    if (!(L > 0.0) || !std::isfinite(L)) throw NumericalError("box QP: Hessian has no positive curvature");

    auto residual = [&](const Vector& u) { return (u - clip(u - (qp.H * u + qp.f) / L, qp.lo, qp.hi)).norm(); };

    QpResult res;
    Vector u = clip(warm_start.size() == dim ? warm_start : Vector::Zero(dim), qp.lo, qp.hi);
    Vector y = u;
    double t = 1.0;
    res.residual = residual(u);
    while (res.residual > tol && res.iterations < max_iters) {
        ++res.iterations;
        const Vector u_new = clip(y - (qp.H * y + qp.f) / L, qp.lo, qp.hi);
        if ((y - u_new).dot(u_new - u) > 0.0) {
            // Momentum points uphill: restart from the plain projected step.
            t = 1.0;
            y = u_new;
        } else {
            const double t_new = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
            y = u_new + ((t - 1.0) / t_new) * (u_new - u);
            t = t_new;
        }
        u = u_new;
        res.residual = residual(u);
        if (!std::isfinite(res.residual)) throw NumericalError("box QP: non-finite iterate");
    }
    res.converged = res.residual <= tol;
    res.u = u;
    res.objective = 0.5 * u.dot(qp.H * u) + qp.f.dot(u);
    return res;
}

TrackingSolution solve_tracking_qp(const HorizonLinearization& lin, const Matrix& z_ref, const MpcConfig& cfg,
                                   const Vector& u_prev, const Matrix& warm_start) {
    const int m = cfg.inputs(), N = static_cast<int>(lin.steps.size());
    const BoxQp qp = build_tracking_qp(lin, z_ref, cfg, u_prev);
    Vector warm;
    if (warm_start.rows() == m && warm_start.cols() == N) warm = Eigen::Map<const Vector>(warm_start.data(), m * N);
    TrackingSolution sol;
    sol.qp = solve_box_qp(qp, cfg.qp_tol, cfg.qp_max_iters, warm);
    sol.U = Eigen::Map<const Matrix>(sol.qp.u.data(), m, N);
    return sol;
}

ReferenceFn circle_reference(const Vector& center, double radius, double period) {
    if (center.size() < 2) throw ConfigError("circle reference needs at least two outputs");
    const double w = 2.0 * std::numbers::pi / period;
    return [=](double t) {
        Vector z = center;
        z(0) += radius * std::cos(w * t);
        z(1) += radius * std::sin(w * t);
        return z;
    };
}

ReferenceFn figure_eight_reference(const Vector& center, double radius, double period) {
    if (center.size() < 2) throw ConfigError("figure-eight reference needs at least two outputs");
    const double w = 2.0 * std::numbers::pi / period;
    return [=](double t) {
        Vector z = center;
        z(0) += radius * std::sin(w * t);
        z(1) += radius * std::sin(w * t) * std::cos(w * t);
        return z;
    };
}

ReferenceFn csv_reference(const std::filesystem::path& path) {
    const io::CsvTable table = io::read_csv(path);
    const Matrix& v = table.values;
    if (v.rows() < 1 || v.cols() < 2) throw IoError(path.string() + ": reference needs a t column and outputs");
    for (Eigen::Index i = 1; i < v.rows(); ++i)
        if (!(v(i, 0) > v(i - 1, 0))) throw IoError(path.string() + ": reference times must increase");
    return [v](double t) -> Vector {
        const Eigen::Index last = v.rows() - 1;
        if (t <= v(0, 0)) return v.row(0).tail(v.cols() - 1).transpose();
        if (t >= v(last, 0)) return v.row(last).tail(v.cols() - 1).transpose();
        const Eigen::Index hi = std::upper_bound(v.col(0).data(), v.col(0).data() + v.rows(), t) - v.col(0).data();
        const double s = (t - v(hi - 1, 0)) / (v(hi, 0) - v(hi - 1, 0));
        return ((1.0 - s) * v.row(hi - 1).tail(v.cols() - 1) + s * v.row(hi).tail(v.cols() - 1)).transpose();
    };
}

MpcController::MpcController(SSMModel model, MpcConfig cfg, ReferenceFn reference)
    : model_(std::move(model)), cfg_(std::move(cfg)), reference_(std::move(reference)) {
    if (model_.m == 0) throw ConfigError("mpc: the model has no control matrix (fit it with controlled data)");
    cfg_.validate(model_.p, model_.m);
    reset(model_.y_eq_base);
}

void MpcController::reset(const Vector& y_initial) {
    if (y_initial.size() != model_.base_dim) throw DimensionError("mpc: measurement has the wrong length");
    history_ = y_initial.replicate(1, model_.history_length());
    plan_ = Matrix::Zero(model_.m, cfg_.horizon);
    u_prev_ = Vector::Zero(model_.m);
    has_plan_ = false;
    diag_ = {};
}

void MpcController::record_measurement(const Vector& y) {
    if (y.size() != model_.base_dim) throw DimensionError("mpc: measurement has the wrong length");
    const int cols = static_cast<int>(history_.cols());
    if (cols > 1) history_.leftCols(cols - 1) = history_.rightCols(cols - 1).eval();
    history_.col(cols - 1) = y;
}

Vector MpcController::reduced_state() const {
    return rom::chart(model_, curation::shift_and_embed(history_, model_.y_eq_base, model_.delays, model_.delay_lag).col(0));
}

Vector MpcController::measured_output() const {
    return cfg_.C * curation::shift_and_embed(history_, Vector::Zero(model_.base_dim), model_.delays, model_.delay_lag).col(0);
}

Matrix MpcController::mpc_step(const Vector& y_measured, double t) {
    const auto start = std::chrono::steady_clock::now();
    record_measurement(y_measured);
    const int N = cfg_.horizon, m = model_.m;
    const Vector x0 = reduced_state();

    Matrix U = Matrix::Zero(m, N);
    if (has_plan_) {
        U.leftCols(N - cfg_.stride) = plan_.rightCols(N - cfg_.stride);
        for (int k = N - cfg_.stride; k < N; ++k) U.col(k) = plan_.col(N - 1);
    }
    auto rollout = [&](const Matrix& inputs) {
        std::vector<Vector> xs{x0};
        for (int k = 0; k < N; ++k) {
            xs.push_back(discrete_flow(model_, xs.back(), inputs.col(k), cfg_.dt_mpc, cfg_.rk4_substeps));
            if (!xs.back().allFinite()) throw NumericalError("mpc: reduced rollout diverged during SCP");
        }
        return xs;
    };
    std::vector<Vector> xs = has_plan_ ? rollout(U) : std::vector<Vector>(N + 1, x0);

    Matrix z_ref(cfg_.outputs(), N);
    for (int k = 0; k < N; ++k) {
        const Vector r = reference_(t + (k + 1) * cfg_.dt_mpc);
        if (r.size() != cfg_.outputs()) throw DimensionError("mpc: reference has the wrong number of outputs");
        z_ref.col(k) = r;
    }

    diag_ = {};
    diag_.t = t;
    for (int round = 0; round < cfg_.scp_iters; ++round) {
        const HorizonLinearization lin = linearize_horizon(model_, cfg_, x0, xs, U);
        const TrackingSolution sol = solve_tracking_qp(lin, z_ref, cfg_, u_prev_, U);
        diag_.scp_change.push_back((sol.U - U).cwiseAbs().maxCoeff());
        diag_.qp_iterations += sol.qp.iterations;
        diag_.qp_residual = std::max(diag_.qp_residual, sol.qp.residual);
        diag_.qp_converged = diag_.qp_converged && sol.qp.converged;
        U = sol.U;
        xs = rollout(U);
        ++diag_.scp_iters;
    }
    plan_ = U;
    has_plan_ = true;
    Matrix applied(m, cfg_.stride);
    for (int k = 0; k < cfg_.stride; ++k) applied.col(k) = clip(U.col(k), cfg_.u_min, cfg_.u_max);
    u_prev_ = applied.col(cfg_.stride - 1);
    diag_.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return applied;
}

ClosedLoopResult run_closed_loop(const systems::SystemSpec& plant, const SSMModel& model, const MpcConfig& cfg,
                                 const ReferenceFn& reference, double duration, const ClosedLoopOptions& opts) {
    const double dt = opts.plant_dt > 0.0 ? opts.plant_dt : model.dt;
    if (!(dt > 0.0)) throw ConfigError("mpc: plant sampling interval must be positive");
    if (model.delays > 0 && std::abs(dt - model.dt) > 1e-12 * model.dt)
        throw ConfigError("mpc: a delay-embedded model needs plant samples at its training interval");
    const long rate = std::lround(cfg.dt_mpc / dt);
    if (rate < 1 || std::abs(rate * dt - cfg.dt_mpc) > 1e-9 * cfg.dt_mpc)
        throw ConfigError("mpc.dt_mpc must be an integer multiple of the plant interval");
    const long steps = std::lround(duration / dt);
    if (steps < 1 || std::abs(steps * dt - duration) > 1e-9 * std::max(1.0, duration))
        throw ConfigError("mpc: duration must be a positive multiple of the plant interval");
    if (plant.input_dim != model.m || plant.observable_dim() != model.base_dim)
        throw DimensionError("mpc: model does not match the plant dimensions");

    MpcController ctrl(model, cfg, reference);
    Vector x = opts.x0.size() > 0 ? opts.x0 : plant.equilibrium;
    ctrl.reset(plant.observe(x));

    ClosedLoopResult res;
    std::vector<double> ts;
    std::vector<Vector> xs, us, zs, rs;
    Matrix pending;
    Eigen::Index col = 0;
    long held = 0;
    for (long k = 0; k <= steps; ++k) {
        const double t = k * dt;
        const Vector y = plant.observe(x);
        try {
            if (k < steps && col >= pending.cols()) {
                pending = ctrl.mpc_step(y, t);
                col = 0;
                held = 0;
                res.solves.push_back(ctrl.last_diagnostics());
            } else if (k > 0) {
                ctrl.record_measurement(y);
            }
        } catch (const NumericalError& e) {
            res.aborted = true;
            res.message = std::string("controller failure at t=") + io::format_double(t) + ": " + e.what();
            break;
        }
        ts.push_back(t);
        xs.push_back(x);
        zs.push_back(ctrl.measured_output());
        rs.push_back(reference(t));
        if (k == steps) break;
        const Vector u = pending.col(col);
        us.push_back(u);
        for (int s = 0; s < opts.substeps; ++s) x = systems::rk4_step(plant.field, x, u, dt / opts.substeps);
        if (!x.allFinite()) {
            res.aborted = true;
            res.message = "plant diverged at t=" + io::format_double(t + dt);
            break;
        }
        if (++held == rate) {
            held = 0;
            ++col;
        }
    }

    const auto N = static_cast<Eigen::Index>(ts.size());
    res.times = Eigen::Map<const Vector>(ts.data(), N);
    res.states.resize(plant.state_dim, N);
    res.z.resize(cfg.outputs(), N);
    res.reference.resize(cfg.outputs(), N);
    res.inputs = Matrix::Zero(model.m, N);
    for (Eigen::Index k = 0; k < N; ++k) {
        res.states.col(k) = xs[k];
        res.z.col(k) = zs[k];
        res.reference.col(k) = rs[k];
        if (!us.empty()) res.inputs.col(k) = us[std::min<std::size_t>(k, us.size() - 1)];
    }
    for (Eigen::Index k = 0; k + 1 < N; ++k)
        res.ise += 0.5 * dt * ((res.z.col(k) - res.reference.col(k)).squaredNorm() +
                               (res.z.col(k + 1) - res.reference.col(k + 1)).squaredNorm());
    return res;
}

void write_closed_loop_csv(const ClosedLoopResult& r, const std::filesystem::path& path) {
    const auto o = r.z.rows(), m = r.inputs.rows();
    std::vector<std::string> header{"t"};
    for (Eigen::Index i = 0; i < o; ++i) header.push_back("z_" + std::to_string(i + 1));
    for (Eigen::Index i = 0; i < o; ++i) header.push_back("z_ref_" + std::to_string(i + 1));
    for (Eigen::Index i = 0; i < m; ++i) header.push_back("u_" + std::to_string(i + 1));
    Matrix rows(r.times.size(), header.size());
    rows.col(0) = r.times;
    rows.middleCols(1, o) = r.z.transpose();
    rows.middleCols(1 + o, o) = r.reference.transpose();
    rows.middleCols(1 + 2 * o, m) = r.inputs.transpose();
    io::write_csv(path, header, rows);
}

void write_closed_loop_json(const ClosedLoopResult& r, const std::filesystem::path& path, bool include_timing) {
    nlohmann::json solves = nlohmann::json::array();
    int qp_iters = 0;
    double worst_residual = 0.0, total_time = 0.0, max_time = 0.0;
    bool all_converged = true;
    for (const auto& s : r.solves) {
        nlohmann::json j = {{"t", s.t},
                            {"scp_iters", s.scp_iters},
                            {"scp_change", s.scp_change},
                            {"qp_iterations", s.qp_iterations},
                            {"qp_residual", s.qp_residual},
                            {"qp_converged", s.qp_converged}};
        if (include_timing) j["wall_seconds"] = s.wall_seconds;
        solves.push_back(std::move(j));
        qp_iters += s.qp_iterations;
        worst_residual = std::max(worst_residual, s.qp_residual);
        all_converged = all_converged && s.qp_converged;
        total_time += s.wall_seconds;
        max_time = std::max(max_time, s.wall_seconds);
    }
    nlohmann::json j = {{"ise", r.ise},
                        {"samples", r.times.size()},
                        {"aborted", r.aborted},
                        {"message", r.message},
                        {"solves", r.solves.size()},
                        {"qp_iterations_total", qp_iters},
                        {"qp_residual_max", worst_residual},
                        {"qp_all_converged", all_converged},
                        {"solve_log", std::move(solves)}};
    if (include_timing && !r.solves.empty()) {
        j["solve_seconds_mean"] = total_time / double(r.solves.size());
        j["solve_seconds_max"] = max_time;
    }
    io::write_text(path, j.dump(2) + "\n");
}

}  // namespace ssm::mpc
