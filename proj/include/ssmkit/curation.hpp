#pragma once

#include "ssmkit/systems.hpp"

#include <filesystem>
#include <vector>

namespace ssm::curation {

using numkit::Matrix;
using numkit::Vector;

struct CurationOptions {
    int n_transient = 0;  // embedded samples per trajectory assigned to the transient set
    int ssm_dim = 1;
    int delays = 0;
    int delay_lag = 1;  // samples between consecutive delay coordinates
    /// Waives p >= 2n+1 when the observable already is the full state.
    bool full_state_exemption = false;
};

struct CuratedData {
    Matrix Y_trans, Ydot_trans;
    Matrix Y_near, Ydot_near;
    Matrix V_E;
    Vector y_eq;       // embedded (p) equilibrium
    Vector y_eq_base;  // raw observable (q) equilibrium
    int n = 0;
    int delays = 0;
    int delay_lag = 1;
    int base_dim = 0;
    double dt = 0.0;
    std::vector<int> trans_counts;  // per trajectory, in input order
    std::vector<int> near_counts;

    int p() const { return base_dim * (delays + 1); }
    int span() const { return delays * delay_lag; }
};

/// Embedded, shifted and differentiated forced data aligned with its inputs.
struct ControlledData {
    Matrix Y, Ydot, U;
};

/// Mean of the last tail_fraction of samples over all trajectories (unforced data only).
Vector estimate_equilibrium(const systems::TrajectoryDataset& data, double tail_fraction = 0.1);

/// p = q (d + 1) must satisfy p >= 2n + 1 unless the exemption is granted.
void check_embedding_dimension(int base_dim, int delays, int n, bool full_state_exemption);

CuratedData curate(const systems::TrajectoryDataset& data, const Vector& y_eq_base,
                   const CurationOptions& opts);

ControlledData prepare_controlled(const systems::TrajectoryDataset& data, const Vector& y_eq_base,
                                  int delays, int delay_lag = 1);

/// Shift a raw observable history by y_eq_base and delay-embed it (no differencing).
Matrix shift_and_embed(const Matrix& Y_raw, const Vector& y_eq_base, int delays, int delay_lag = 1);

/// Mean squared norm of the component orthogonal to V_E at each embedded sample
/// index, averaged over trajectories. A diagnostic for choosing n_transient.
Vector normal_energy_curve(const systems::TrajectoryDataset& data, const CuratedData& curated);

/// JSON header plus a binary payload of column-major doubles.
void save_curated(const CuratedData& c, const std::filesystem::path& dir);
CuratedData load_curated(const std::filesystem::path& dir);

}  // namespace ssm::curation
