#include "ssmkit/systems.hpp"

#include "ssmkit/error.hpp"

#include <cmath>
#include <string>

namespace ssm::systems {

Vector SystemSpec::observe(const Vector& x) const {
    Vector y(observed.size());
    for (std::size_t i = 0; i < observed.size(); ++i) y(i) = x(observed[i]);
    return y;
}

Matrix SystemSpec::observe(const Matrix& X) const {
    Matrix Y(observed.size(), X.cols());
    for (std::size_t i = 0; i < observed.size(); ++i) Y.row(i) = X.row(observed[i]);
    return Y;
}

Matrix SystemSpec::jacobian_at(const Vector& x) const {
    if (jacobian) return jacobian(x);
    const Vector u0 = Vector::Zero(input_dim);
    Matrix J(state_dim, state_dim);
    const double h = 1e-6;
    for (int j = 0; j < state_dim; ++j) {
        Vector xp = x, xm = x;
        xp(j) += h;
        xm(j) -= h;
        J.col(j) = (field(xp, u0) - field(xm, u0)) / (2.0 * h);
    }
    return J;
}

Vector slow_fast_field(const Vector& x, const Vector& u, const SlowFastParams& p) {
    if (x.size() != 2 || u.size() != 2) throw DimensionError("slow_fast_field: expects 2-vectors");
    Vector dx(2);
    dx(0) = p.lambda * x(0) * (1.0 - x(0) * x(0)) + p.alpha * u(0);
    dx(1) = (x(0) * x(0) - x(1)) / p.epsilon + p.beta * u(1);
    return dx;
}

Matrix slow_fast_jacobian(const Vector& x, const SlowFastParams& p) {
    Matrix J(2, 2);
    J << p.lambda * (1.0 - 3.0 * x(0) * x(0)), 0.0, 2.0 * x(0) / p.epsilon, -1.0 / p.epsilon;
    return J;
}

SystemSpec make_slow_fast(const SlowFastParams& p) {
    if (!(p.epsilon > 0.0) || !(p.lambda > 0.0))
        throw DimensionError("slow-fast system needs lambda > 0 and epsilon > 0");
    SystemSpec s;
    s.name = "slow-fast";
    s.state_dim = 2;
    s.input_dim = 2;
    s.parameters = {{"lambda", p.lambda}, {"epsilon", p.epsilon}, {"alpha", p.alpha}, {"beta", p.beta}};
    s.equilibrium = Vector::Ones(2);
    s.observed = {0, 1};
    s.field = [p](const Vector& x, const Vector& u) { return slow_fast_field(x, u, p); };
    s.jacobian = [p](const Vector& x) { return slow_fast_jacobian(x, p); };
    return s;
}

Vector chain_field(const Vector& x, const Vector& u, const ChainParams& p) {
    const int L = p.masses;
    const int s = p.spatial_dim;
    const int np = L * s;
    if (x.size() != 2 * np) throw DimensionError("chain_field: state has wrong length");
    if (u.size() != static_cast<Eigen::Index>(p.actuated.size()) * s)
        throw DimensionError("chain_field: input has wrong length");
    Vector dx(2 * np);
    dx.head(np) = x.tail(np);
    Vector acc = Vector::Zero(np);
    for (int j = 0; j < L; ++j) {
        // element j joins mass j-1 (or the base) to mass j
        Vector d = x.segment(j * s, s);
        Vector dv = x.segment(np + j * s, s);
        if (j > 0) {
            d -= x.segment((j - 1) * s, s);
            dv -= x.segment(np + (j - 1) * s, s);
        }
        const Vector force = (p.stiffness + p.cubic_stiffness * d.squaredNorm()) * d + p.damping * dv;
        acc.segment(j * s, s) -= force;
        if (j > 0) acc.segment((j - 1) * s, s) += force;
    }
    for (std::size_t a = 0; a < p.actuated.size(); ++a)
        acc.segment(p.actuated[a] * s, s) += p.input_gain * u.segment(a * s, s);
    dx.tail(np) = acc;
    return dx;
}

double chain_energy(const Vector& x, const ChainParams& p) {
    const int s = p.spatial_dim;
    const int np = p.masses * s;
    double e = 0.5 * x.tail(np).squaredNorm();
    for (int j = 0; j < p.masses; ++j) {
        Vector d = x.segment(j * s, s);
        if (j > 0) d -= x.segment((j - 1) * s, s);
        const double r2 = d.squaredNorm();
        e += 0.5 * p.stiffness * r2 + 0.25 * p.cubic_stiffness * r2 * r2;
    }
    return e;
}

SystemSpec make_chain(const ChainParams& p) {
    if (p.masses < 1) throw DimensionError("chain: need at least one mass");
    if (p.spatial_dim != 1 && p.spatial_dim != 2) throw DimensionError("chain: spatial_dim must be 1 or 2");
    if (!(p.stiffness > 0.0) || p.cubic_stiffness < 0.0 || !(p.damping > 0.0))
        throw DimensionError("chain: requires k > 0, k3 >= 0, c > 0");
    for (int a : p.actuated)
        if (a < 0 || a >= p.masses) throw DimensionError("chain: actuated mass index out of range");
    if (p.observed_masses < 1 || p.observed_masses > p.masses)
        throw DimensionError("chain: observed_masses out of range");
    const int s = p.spatial_dim;
    SystemSpec sys;
    sys.name = "chain";
    sys.state_dim = 2 * p.masses * s;
    sys.input_dim = static_cast<int>(p.actuated.size()) * s;
    sys.parameters = {{"masses", double(p.masses)},
                      {"spatial_dim", double(s)},
                      {"stiffness", p.stiffness},
                      {"cubic_stiffness", p.cubic_stiffness},
                      {"damping", p.damping},
                      {"input_gain", p.input_gain}};
    sys.equilibrium = Vector::Zero(sys.state_dim);
    if (p.observe_full_state) {
        for (int i = 0; i < sys.state_dim; ++i) sys.observed.push_back(i);
    } else {
        for (int k = 0; k < p.observed_masses; ++k) {
            const int mass = p.masses - 1 - k;
            for (int c = 0; c < s; ++c) sys.observed.push_back(mass * s + c);
        }
    }
    sys.field = [p](const Vector& x, const Vector& u) { return chain_field(x, u, p); };
    return sys;
}

Vector rk4_step(const VectorField& f, const Vector& x, const Vector& u, double h) {
    const Vector k1 = f(x, u);
    const Vector k2 = f(x + 0.5 * h * k1, u);
    const Vector k3 = f(x + 0.5 * h * k2, u);
    const Vector k4 = f(x + h * k3, u);
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

Trajectory integrate(const SystemSpec& sys, const Vector& x0, const InputFunction& input,
                     double t_span, double dt, int substeps) {
    if (!(dt > 0.0)) throw DimensionError("integrate: dt must be positive");
    if (x0.size() != sys.state_dim) throw DimensionError("integrate: initial state has wrong length");
    if (substeps < 1) throw DimensionError("integrate: substeps must be >= 1");
    const double steps_real = t_span / dt;
    const long steps = std::lround(steps_real);
    if (steps < 1 || std::abs(steps_real - double(steps)) > 1e-9 * std::max(1.0, steps_real))
        throw DimensionError("integrate: t_span must be a positive multiple of dt");

    Trajectory tr;
    tr.times.resize(steps + 1);
    tr.states.resize(sys.state_dim, steps + 1);
    tr.inputs.resize(sys.input_dim, steps + 1);
    Vector x = x0;
    const double h = dt / substeps;
    for (long k = 0; k <= steps; ++k) {
        const double t = double(k) * dt;
        tr.times(k) = t;
        tr.states.col(k) = x;
        Vector u = input ? input(t) : Vector::Zero(sys.input_dim);
        if (u.size() != sys.input_dim) throw DimensionError("integrate: input has wrong length");
        tr.inputs.col(k) = u;
        if (k == steps) break;
        for (int s = 0; s < substeps; ++s) x = rk4_step(sys.field, x, u, h);
        if (!x.allFinite()) throw DivergenceError("integrate: non-finite state in " + sys.name, k + 1);
    }
    return tr;
}

Rng::Rng(std::uint64_t seed) : engine_(seed) {}

double Rng::uniform(double lo, double hi) {
    const double unit = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * unit;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    // splitmix64 finalizer
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

bool TrajectoryDataset::controlled() const {
    return !trajectories.empty() && trajectories.front().U.rows() > 0;
}

int TrajectoryDataset::observable_dim() const {
    return trajectories.empty() ? 0 : static_cast<int>(trajectories.front().Y.rows());
}

int TrajectoryDataset::input_dim() const {
    return trajectories.empty() ? 0 : static_cast<int>(trajectories.front().U.rows());
}

void TrajectoryDataset::validate() const {
    if (!(dt > 0.0)) throw DimensionError("dataset: dt must be positive");
    const bool ctrl = controlled();
    for (std::size_t i = 0; i < trajectories.size(); ++i) {
        const auto& tr = trajectories[i];
        const std::string tag = "dataset trajectory " + std::to_string(i);
        if (tr.Y.rows() != observable_dim()) throw DimensionError(tag + ": observable dimension differs");
        if (tr.times.size() != tr.Y.cols()) throw DimensionError(tag + ": times and snapshots differ");
        if ((tr.U.rows() > 0) != ctrl) throw DimensionError(tag + ": inputs present in only some trajectories");
        if (ctrl && tr.U.cols() != tr.Y.cols()) throw DimensionError(tag + ": input count differs");
        for (Eigen::Index k = 1; k < tr.times.size(); ++k)
            if (std::abs(tr.times(k) - tr.times(k - 1) - dt) > 1e-9 * std::max(1.0, dt))
                throw DimensionError(tag + ": non-uniform sampling");
        numkit::require_finite(tr.Y, tag);
    }
}

namespace {

Vector sample_box(Rng& rng, const Box& box) {
    Vector x(box.center.size());
    for (Eigen::Index i = 0; i < x.size(); ++i)
        x(i) = rng.uniform(box.center(i) - box.half_width(i), box.center(i) + box.half_width(i));
    return x;
}

void check_box(const SystemSpec& sys, const Box& box) {
    if (box.center.size() != sys.state_dim || box.half_width.size() != sys.state_dim)
        throw DimensionError("initial-condition box has wrong dimension");
    if ((box.half_width.array() < 0.0).any()) throw DimensionError("initial-condition box has negative width");
}

}  // namespace

TrajectoryDataset generate_decay_dataset(const SystemSpec& sys, int n_traj, const Box& ic_box,
                                         double t_span, double dt, std::uint64_t seed, int substeps) {
    HarmonicProtocol none;
    none.amplitude_min = none.amplitude_max = 0.0;
    TrajectoryDataset ds = generate_controlled_dataset(sys, n_traj, none, ic_box, t_span, dt, seed, substeps);
    for (auto& tr : ds.trajectories) tr.U.resize(0, tr.Y.cols());
    ds.protocol = "decay";
    ds.protocol_parameters.clear();
    return ds;
}

TrajectoryDataset generate_controlled_dataset(const SystemSpec& sys, int n_traj,
                                              const HarmonicProtocol& protocol, const Box& ic_box,
                                              double t_span, double dt, std::uint64_t seed,
                                              int substeps) {
    check_box(sys, ic_box);
    if (n_traj < 1) throw DimensionError("dataset: need at least one trajectory");
    if (protocol.harmonics < 1) throw DimensionError("harmonic protocol: harmonics must be >= 1");
    TrajectoryDataset ds;
    ds.dt = dt;
    ds.seed = seed;
    ds.system = sys.name;
    ds.protocol = "harmonic";
    ds.protocol_parameters = {{"amplitude_min", protocol.amplitude_min},
                              {"amplitude_max", protocol.amplitude_max},
                              {"frequency_min", protocol.frequency_min},
                              {"frequency_max", protocol.frequency_max},
                              {"harmonics", double(protocol.harmonics)}};
    ds.trajectories.resize(n_traj);
    const int m = sys.input_dim;
    const int H = protocol.harmonics;
    for (int i = 0; i < n_traj; ++i) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
        const Vector x0 = sample_box(rng, ic_box);
        // amplitudes are split over the harmonics so each channel peaks at most amplitude_max
        Matrix amp(m, H), freq(m, H), phase(m, H);
        for (int c = 0; c < m; ++c)
            for (int h = 0; h < H; ++h) {
                amp(c, h) = rng.uniform(protocol.amplitude_min, protocol.amplitude_max) / H;
                freq(c, h) = rng.uniform(protocol.frequency_min, protocol.frequency_max);
                phase(c, h) = rng.uniform(0.0, 2.0 * M_PI);
            }
        InputFunction input = [amp, freq, phase, m, H](double t) {
            Vector u = Vector::Zero(m);
            for (int c = 0; c < m; ++c)
                for (int h = 0; h < H; ++h) u(c) += amp(c, h) * std::sin(freq(c, h) * t + phase(c, h));
            return u;
        };
        const Trajectory tr = integrate(sys, x0, input, t_span, dt, substeps);
        ds.trajectories[i].times = tr.times;
        ds.trajectories[i].Y = sys.observe(tr.states);
        ds.trajectories[i].U = tr.inputs;
    }
    return ds;
}

double max_final_distance(const TrajectoryDataset& data, const Vector& target) {
    double worst = 0.0;
    for (const auto& tr : data.trajectories)
        worst = std::max(worst, (tr.Y.col(tr.Y.cols() - 1) - target).norm());
    return worst;
}

}  // namespace ssm::systems
