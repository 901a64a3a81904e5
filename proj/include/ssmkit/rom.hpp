#pragma once

#include "ssmkit/learning.hpp"
#include "ssmkit/systems.hpp"

#include <filesystem>
#include <vector>

namespace ssm::rom {

using learning::SSMModel;
using numkit::Matrix;
using numkit::Vector;

/// x_r = V_opt^T y for a shifted, embedded observable y.
Vector chart(const SSMModel& model, const Vector& y);
/// y = V_E x_r + W_nl x_r^{2:n_w} (shifted coordinates).
Vector parameterize(const SSMModel& model, const Vector& x_r);
/// d parameterize / d x_r, shape p x n.
Matrix parameterize_jacobian(const SSMModel& model, const Vector& x_r);

/// R x_r^{1:n_r} + B_r u; an empty u means no input.
Vector reduced_rhs(const SSMModel& model, const Vector& x_r, const Vector& u);
/// d reduced_rhs / d x_r, shape n x n.
Matrix reduced_jacobian(const SSMModel& model, const Vector& x_r);

/// Rows of the embedded observable on which errors are measured. Defaults to the
/// most recent (un-delayed) sample block.
Matrix default_performance_map(const SSMModel& model);

struct PredictionResult {
    Vector times;
    Matrix reduced;    // n x N
    Matrix predicted;  // p x N, embedded observables in original (un-shifted) units
    Matrix reference;  // p x N, empty when no ground truth was supplied
    Vector sq_err;     // per-sample squared error on the performance map
    double mse = 0.0;
    double ise = 0.0;
};

/// Mean of squared errors and their trapezoidal time integral.
void fill_errors(PredictionResult& r, const Matrix& performance_map);

/// Propagates the reduced model from the newest sample of `y_history` (raw q x
/// history_length() or longer). `inputs` is m x N (or empty), held constant over each step. `reference`
/// (raw embedded p x N) is compared on `performance_map` when non-empty.
PredictionResult predict_open_loop(const SSMModel& model, const Matrix& y_history, const Matrix& inputs,
                                   double t_span, double dt, const Matrix& reference = {},
                                   const Matrix& performance_map = {});

/// Uses the first history_length() samples as history and the rest, together with the recorded
/// inputs, as ground truth.
PredictionResult predict_record(const SSMModel& model, const systems::TrajectoryRecord& record,
                                double dt, const Matrix& performance_map = {});

struct SuiteSummary {
    std::vector<double> mse;
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation
};

SuiteSummary summarize(std::vector<double> values);

SuiteSummary evaluate_decay_suite(const SSMModel& model, const systems::TrajectoryDataset& test,
                                  const Matrix& performance_map = {});

/// Columns: t, y_pred_1..p, y_true_1..p (if any), sq_err.
void write_prediction_csv(const PredictionResult& r, const std::filesystem::path& path);
void write_prediction_json(const PredictionResult& r, const std::filesystem::path& path);

}  // namespace ssm::rom
