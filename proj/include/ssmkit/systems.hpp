#pragma once

#include "ssmkit/numkit.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace ssm::systems {

using numkit::Matrix;
using numkit::Vector;

using VectorField = std::function<Vector(const Vector& x, const Vector& u)>;
using InputFunction = std::function<Vector(double t)>;

/// A control-affine benchmark system x' = f(x) + B(x) u with an observable selection.
struct SystemSpec {
    std::string name;
    int state_dim = 0;
    int input_dim = 0;
    std::map<std::string, double> parameters;
    Vector equilibrium;
    /// State indices that make up the observable, in output order.
    std::vector<int> observed;
    VectorField field;
    /// Optional analytic Jacobian df/dx at u = 0; central differences otherwise.
    std::function<Matrix(const Vector&)> jacobian;

    int observable_dim() const { return static_cast<int>(observed.size()); }
    Vector observe(const Vector& x) const;
    Matrix observe(const Matrix& X) const;
    Matrix jacobian_at(const Vector& x) const;
    /// The equilibrium expressed in observable coordinates.
    Vector observed_equilibrium() const { return observe(equilibrium); }
};

struct SlowFastParams {
    double lambda = 0.1;
    double epsilon = 0.1;
    double alpha = 0.2;
    double beta = 0.2;
};

Vector slow_fast_field(const Vector& x, const Vector& u, const SlowFastParams& p);
Matrix slow_fast_jacobian(const Vector& x, const SlowFastParams& p);
/// Stable equilibrium at (1, 1), full state observed.
SystemSpec make_slow_fast(const SlowFastParams& p = {});

/// Chain of unit masses moving in `spatial_dim` dimensions (1 or 2), anchored at
/// the base. Neighbours are joined by springs with force (k + k3 |d|^2) d on the
/// relative displacement d and by parallel dashpots c on the relative velocity.
struct ChainParams {
    int masses = 30;
    int spatial_dim = 2;
    double stiffness = 2500.0;
    double cubic_stiffness = 0.0;
    double damping = 200.0;
    double input_gain = 10.0;
    /// Zero-based indices of forced masses; each contributes spatial_dim inputs.
    std::vector<int> actuated = {14, 29};
    /// Number of observed masses, counted back from the tip (tip first).
    int observed_masses = 3;
    bool observe_full_state = false;
};

Vector chain_field(const Vector& x, const Vector& u, const ChainParams& p);
/// Kinetic plus spring potential energy.
double chain_energy(const Vector& x, const ChainParams& p);
SystemSpec make_chain(const ChainParams& p);

struct Trajectory {
    Vector times;
    Matrix states;  // state_dim x N
    Matrix inputs;  // input_dim x N, column k is the input held over [t_k, t_k+1)
};

/// Fixed-step classical RK4 with zero-order-hold inputs. `substeps` RK4 steps are
/// taken per sample interval; N = t_span/dt + 1 samples are returned.
Trajectory integrate(const SystemSpec& sys, const Vector& x0, const InputFunction& input,
                     double t_span, double dt, int substeps = 1);

/// One RK4 step of size h with the input held constant.
Vector rk4_step(const VectorField& f, const Vector& x, const Vector& u, double h);

/// Deterministic generator: 53-bit uniforms drawn from mt19937_64.
class Rng {
public:
    explicit Rng(std::uint64_t seed);
    double uniform(double lo = 0.0, double hi = 1.0);

private:
    std::mt19937_64 engine_;
};

/// Per-trajectory seed so each trajectory is independent of generation order.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

struct Box {
    Vector center;
    Vector half_width;
};

struct HarmonicProtocol {
    double amplitude_min = 0.0;
    double amplitude_max = 1.0;
    double frequency_min = 0.5;  // rad/s
    double frequency_max = 5.0;
    int harmonics = 1;           // sinusoids summed per channel
};

struct TrajectoryRecord {
    Vector times;
    Matrix Y;  // q x N observables
    Matrix U;  // m x N inputs, empty (0 rows) for unforced data
};

struct TrajectoryDataset {
    double dt = 0.0;
    std::vector<TrajectoryRecord> trajectories;
    std::uint64_t seed = 0;
    std::string system;
    std::string protocol;  // "decay" or "harmonic"
    std::map<std::string, double> protocol_parameters;

    bool controlled() const;
    int observable_dim() const;
    int input_dim() const;
    /// Throws if sampling is non-uniform or input presence is inconsistent.
    void validate() const;
};

TrajectoryDataset generate_decay_dataset(const SystemSpec& sys, int n_traj, const Box& ic_box,
                                         double t_span, double dt, std::uint64_t seed,
                                         int substeps = 1);

/// Trajectories driven by random harmonic inputs. Initial conditions are drawn
/// from `ic_box` with the same stream layout as the decay generator, so a
/// zero-amplitude protocol reproduces the decay dataset of the same seed.
TrajectoryDataset generate_controlled_dataset(const SystemSpec& sys, int n_traj,
                                              const HarmonicProtocol& protocol, const Box& ic_box,
                                              double t_span, double dt, std::uint64_t seed,
                                              int substeps = 1);

/// Largest distance between a trajectory's last observable sample and `target`.
double max_final_distance(const TrajectoryDataset& data, const Vector& target);

}  // namespace ssm::systems
