#include "ssmkit/rom.hpp"

#include "ssmkit/curation.hpp"
#include "ssmkit/dataset_io.hpp"
#include "ssmkit/error.hpp"

#include "json.hpp"

#include <cmath>
#include <limits>
#include <numeric>

namespace ssm::rom {

using numkit::monomial_jacobian;
using numkit::monomials;

Vector chart(const SSMModel& model, const Vector& y) {
    if (y.size() != model.p) throw DimensionError("chart: expected a length-" + std::to_string(model.p) + " observable");
    return model.V_opt.transpose() * y;
}

Vector parameterize(const SSMModel& model, const Vector& x_r) {
    if (x_r.size() != model.n) throw DimensionError("parameterize: wrong reduced dimension");
    Vector y = model.V_E * x_r;
    if (model.W_nl.cols() > 0) y += model.W_nl * monomials(x_r, model.manifold_basis());
    return y;
}

Matrix parameterize_jacobian(const SSMModel& model, const Vector& x_r) {
    Matrix J = model.V_E;
    if (model.W_nl.cols() > 0) J += model.W_nl * monomial_jacobian(x_r, model.manifold_basis());
    return J;
}

Vector reduced_rhs(const SSMModel& model, const Vector& x_r, const Vector& u) {
    if (x_r.size() != model.n) throw DimensionError("reduced_rhs: wrong reduced dimension");
    Vector dx = model.R * monomials(x_r, model.dynamics_basis());
    if (u.size() > 0) {
        if (u.size() != model.m) throw DimensionError("reduced_rhs: wrong input dimension");
        dx += model.B_r * u;
    }
    return dx;
}

Matrix reduced_jacobian(const SSMModel& model, const Vector& x_r) {
    return model.R * monomial_jacobian(x_r, model.dynamics_basis());
}

Matrix default_performance_map(const SSMModel& model) {
    Matrix C = Matrix::Zero(model.base_dim, model.p);
    C.leftCols(model.base_dim).setIdentity();
    return C;
}

void fill_errors(PredictionResult& r, const Matrix& performance_map) {
    const Eigen::Index N = r.predicted.cols();
    r.sq_err = Vector::Zero(N);
    r.mse = r.ise = 0.0;
    if (r.reference.size() == 0 || N == 0) return;
    if (r.reference.rows() != r.predicted.rows() || r.reference.cols() != N)
        throw DimensionError("prediction: reference shape mismatch");
    for (Eigen::Index k = 0; k < N; ++k)
        r.sq_err(k) = (performance_map * (r.predicted.col(k) - r.reference.col(k))).squaredNorm();
    r.mse = r.sq_err.mean();
    for (Eigen::Index k = 0; k + 1 < N; ++k)
        r.ise += 0.5 * (r.times(k + 1) - r.times(k)) * (r.sq_err(k) + r.sq_err(k + 1));
}

PredictionResult predict_open_loop(const SSMModel& model, const Matrix& y_history, const Matrix& inputs,
                                   double t_span, double dt, const Matrix& reference,
                                   const Matrix& performance_map) {
    if (y_history.rows() != model.base_dim) throw DimensionError("predict_open_loop: observable dimension mismatch");
    if (y_history.cols() < model.history_length())
        throw DimensionError("predict_open_loop: need " + std::to_string(model.history_length()) +
                             " history samples for the delay embedding, got " + std::to_string(y_history.cols()));
    if (!(dt > 0.0) || t_span < 0.0) throw DimensionError("predict_open_loop: invalid time grid");
    const long steps = std::lround(t_span / dt);
    if (std::abs(steps * dt - t_span) > 1e-9 * std::max(1.0, t_span))
        throw DimensionError("predict_open_loop: t_span must be a multiple of dt");
    const Eigen::Index N = steps + 1;
    if (inputs.size() > 0 && (inputs.rows() != model.m || inputs.cols() < steps))
        throw DimensionError("predict_open_loop: input sequence does not cover the horizon");

    const Matrix embedded = curation::shift_and_embed(y_history.rightCols(model.history_length()), model.y_eq_base,
                                                      model.delays, model.delay_lag);
    PredictionResult r;
    r.times = Vector::LinSpaced(N, 0.0, steps * dt);
    r.reduced.resize(model.n, N);
    r.predicted.resize(model.p, N);
    r.reduced.col(0) = chart(model, embedded.col(0));
    const systems::VectorField f = [&model](const Vector& x, const Vector& u) { return reduced_rhs(model, x, u); };
    const Vector no_input;
    for (Eigen::Index k = 0; k < N; ++k) {
        if (k > 0) {
            const Vector u = inputs.size() > 0 ? Vector(inputs.col(k - 1)) : no_input;
            r.reduced.col(k) = systems::rk4_step(f, r.reduced.col(k - 1), u, dt);
            if (!r.reduced.col(k).allFinite()) throw DivergenceError("reduced model diverged", static_cast<long>(k));
        }
        r.predicted.col(k) = parameterize(model, r.reduced.col(k)) + model.y_eq;
    }
    r.reference = reference;
    fill_errors(r, performance_map.size() > 0 ? performance_map : default_performance_map(model));
    return r;
}

PredictionResult predict_record(const SSMModel& model, const systems::TrajectoryRecord& record, double dt,
                                const Matrix& performance_map) {
    const int h = model.history_length();
    if (record.Y.cols() < h + 1) throw DimensionError("predict_record: trajectory too short");
    const Matrix reference =
        curation::shift_and_embed(record.Y, Vector::Zero(model.base_dim), model.delays, model.delay_lag);
    const Eigen::Index N = reference.cols();
    Matrix inputs;
    if (model.m > 0 && record.U.rows() > 0) inputs = record.U.middleCols(h - 1, N - 1);
    return predict_open_loop(model, record.Y.leftCols(h), inputs, double(N - 1) * dt, dt, reference,
                             performance_map);
}

SuiteSummary summarize(std::vector<double> values) {
    SuiteSummary s;
    s.mse = std::move(values);
    const double n = double(s.mse.size());
    if (s.mse.empty()) return s;
    s.mean = std::accumulate(s.mse.begin(), s.mse.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : s.mse) ss += (v - s.mean) * (v - s.mean);
    s.stddev = s.mse.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    return s;
}

SuiteSummary evaluate_decay_suite(const SSMModel& model, const systems::TrajectoryDataset& test,
                                  const Matrix& performance_map) {
    std::vector<double> mse;
    for (const auto& rec : test.trajectories) {
        try {
            mse.push_back(predict_record(model, rec, test.dt, performance_map).mse);
        } catch (const DivergenceError&) {
            mse.push_back(std::numeric_limits<double>::infinity());
        }
    }
    return summarize(std::move(mse));
}

void write_prediction_csv(const PredictionResult& r, const std::filesystem::path& path) {
    const Eigen::Index p = r.predicted.rows();
    const bool ref = r.reference.size() > 0;
    std::vector<std::string> header{"t"};
    for (Eigen::Index i = 0; i < p; ++i) header.push_back("y_pred_" + std::to_string(i + 1));
    if (ref)
        for (Eigen::Index i = 0; i < p; ++i) header.push_back("y_true_" + std::to_string(i + 1));
    header.push_back("sq_err");
    Matrix rows(r.times.size(), header.size());
    rows.col(0) = r.times;
    rows.middleCols(1, p) = r.predicted.transpose();
    if (ref) rows.middleCols(1 + p, p) = r.reference.transpose();
    rows.col(rows.cols() - 1) = r.sq_err;
    io::write_csv(path, header, rows);
}

void write_prediction_json(const PredictionResult& r, const std::filesystem::path& path) {
    const nlohmann::json j = {{"samples", r.times.size()},
                              {"t_final", r.times.size() ? r.times(r.times.size() - 1) : 0.0},
                              {"mse", r.mse},
                              {"ise", r.ise}};
    io::write_text(path, j.dump(2) + "\n");
}

}  // namespace ssm::rom
