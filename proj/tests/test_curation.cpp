#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "oracles.hpp"
#include "ssmkit/curation.hpp"
#include "ssmkit/error.hpp"

#include <algorithm>
#include <filesystem>

using namespace ssm::curation;
using ssm::numkit::Matrix;
using ssm::numkit::Vector;
namespace sys = ssm::systems;
namespace fs = std::filesystem;

namespace {

Vector vec2(double a, double b) {
    Vector v(2);
    v << a, b;
    return v;
}

sys::TrajectoryDataset slow_fast_decays(int n = 10, double t_span = 50.0, std::uint64_t seed = 1) {
    return sys::generate_decay_dataset(sys::make_slow_fast(), n, {vec2(1, 1), vec2(0.5, 0.5)}, t_span, 0.01, seed);
}

// Hand-built delay embedding: block j of column k holds sample k + span - j*lag.
Matrix embed_oracle(const Matrix& Y, const Vector& yeq, int d, int lag) {
    const int q = static_cast<int>(Y.rows());
    const int span = d * lag;
    Matrix E(q * (d + 1), Y.cols() - span);
    for (int k = 0; k < E.cols(); ++k)
        for (int j = 0; j <= d; ++j) E.block(j * q, k, q, 1) = Y.col(k + span - j * lag) - yeq;
    return E;
}

double subspace_angle(const Matrix& A, const Matrix& B) {
    // sine of the largest principal angle between orthonormal bases, well conditioned near 0
    const Matrix resid = B - A * (A.transpose() * B);
    return std::asin(std::min(1.0, Eigen::JacobiSVD<Matrix>(resid).singularValues()(0)));
}

}  // namespace

TEST_CASE("estimate_equilibrium: slow-fast, constant data, chain, forced data") {
    const auto data = slow_fast_decays();
    const Vector yeq = estimate_equilibrium(data, 0.1);
    CHECK((yeq - vec2(1, 1)).cwiseAbs().maxCoeff() < 1e-3);

    sys::TrajectoryDataset flat;
    flat.dt = 0.1;
    Vector t(5);
    t << 0, 0.1, 0.2, 0.3, 0.4;
    const Vector c = vec2(0.25, -3.5);
    flat.trajectories = {{t, c.replicate(1, 5), Matrix(0, 5)}, {t, c.replicate(1, 5), Matrix(0, 5)}};
    CHECK(estimate_equilibrium(flat, 0.4) == c);
    CHECK(estimate_equilibrium(flat, 1.0) == c);
    CHECK_THROWS_AS(estimate_equilibrium(flat, 0.0), ssm::DimensionError);
    CHECK_THROWS_AS(estimate_equilibrium(flat, 1.5), ssm::DimensionError);

    const auto ch = sys::make_chain({.masses = 10, .spatial_dim = 2, .stiffness = 1e4, .actuated = {9}});
    sys::Box box{Vector::Zero(ch.state_dim), Vector::Zero(ch.state_dim)};
    box.half_width.head(ch.state_dim / 2).setConstant(0.1);
    const auto cd = sys::generate_decay_dataset(ch, 3, box, 20.0, 0.01, 4, 5);
    CHECK(estimate_equilibrium(cd, 0.1).norm() < 1e-4);

    const auto forced = sys::generate_controlled_dataset(sys::make_slow_fast(), 2, {}, {vec2(1, 1), vec2(0.5, 0.5)},
                                                         5.0, 0.01, 3);
    CHECK_THROWS_AS(estimate_equilibrium(forced, 0.1), ssm::DimensionError);
}

TEST_CASE("embedding-dimension check and the full-state exemption") {
    CHECK_THROWS_AS(check_embedding_dimension(2, 0, 1, false), ssm::DimensionError);
    CHECK_NOTHROW(check_embedding_dimension(2, 0, 1, true));
    CHECK_NOTHROW(check_embedding_dimension(3, 3, 5, false));  // p = 12 >= 11
    CHECK_THROWS_AS(check_embedding_dimension(3, 2, 5, false), ssm::DimensionError);  // p = 9 < 11

    const auto data = slow_fast_decays(3, 5.0);
    CHECK_THROWS_AS(curate(data, vec2(1, 1), {.n_transient = 10, .ssm_dim = 1}), ssm::DimensionError);
    CHECK_NOTHROW(curate(data, vec2(1, 1), {.n_transient = 10, .ssm_dim = 1, .full_state_exemption = true}));
}

TEST_CASE("chain with three scalar tip coordinates, three delays and n = 5 is accepted") {
    const auto ch = sys::make_chain({.masses = 12, .spatial_dim = 1, .stiffness = 1e3, .actuated = {11}});
    sys::Box box{Vector::Zero(ch.state_dim), Vector::Zero(ch.state_dim)};
    box.half_width.head(ch.state_dim / 2).setConstant(0.2);
    const auto data = sys::generate_decay_dataset(ch, 4, box, 3.0, 0.01, 2, 5);
    const CuratedData c = curate(data, Vector::Zero(3), {.n_transient = 20, .ssm_dim = 5, .delays = 3});
    CHECK(c.p() == 12);
    CHECK(c.V_E.rows() == 12);
    CHECK(c.V_E.cols() == 5);
}

TEST_CASE("curate: partition, alignment with the embedding and orthonormal tangent basis") {
    oracle::Rand rng(5);
    const auto data = slow_fast_decays(6, 6.0, 3);
    for (int trial = 0; trial < 6; ++trial) {
        const int d = rng.integer(0, 3);
        const int lag = rng.integer(1, 4);
        const int nt = rng.integer(0, 100);
        const Vector yeq = vec2(rng.uniform(0.9, 1.1), rng.uniform(0.9, 1.1));
        const CuratedData c = curate(data, yeq,
                                     {.n_transient = nt, .ssm_dim = 1, .delays = d, .delay_lag = lag,
                                      .full_state_exemption = true});
        CHECK(c.p() == 2 * (d + 1));
        CHECK(c.y_eq.size() == c.p());
        CHECK((c.V_E.transpose() * c.V_E - Matrix::Identity(1, 1)).norm() < 1e-12);
        long ot = 0, on = 0;
        for (std::size_t i = 0; i < data.trajectories.size(); ++i) {
            const Matrix& Y = data.trajectories[i].Y;
            const Matrix E = embed_oracle(Y, yeq, d, lag);
            REQUIRE(c.trans_counts[i] + c.near_counts[i] == E.cols());
            CHECK(c.trans_counts[i] == nt);
            Matrix joined(E.rows(), E.cols()), joined_dot(E.rows(), E.cols());
            joined << c.Y_trans.middleCols(ot, nt), c.Y_near.middleCols(on, c.near_counts[i]);
            joined_dot << c.Ydot_trans.middleCols(ot, nt), c.Ydot_near.middleCols(on, c.near_counts[i]);
            CHECK((joined - E).cwiseAbs().maxCoeff() == 0.0);
            CHECK((joined_dot - ssm::numkit::finite_difference(E, data.dt)).cwiseAbs().maxCoeff() == 0.0);
            ot += nt;
            on += c.near_counts[i];
        }
        CHECK(ot == c.Y_trans.cols());
        CHECK(on == c.Y_near.cols());
    }
}

TEST_CASE("curate: zero transient samples puts everything in the near-manifold set") {
    const auto data = slow_fast_decays(3, 5.0);
    const CuratedData c = curate(data, vec2(1, 1), {.n_transient = 0, .ssm_dim = 1, .full_state_exemption = true});
    CHECK(c.Y_trans.cols() == 0);
    CHECK(c.Ydot_trans.cols() == 0);
    CHECK(c.Y_near.cols() == 3 * 501);
}

TEST_CASE("curate: trajectory length requirement") {
    const auto data = slow_fast_decays(2, 0.5);  // 51 samples
    const CurationOptions ok{.n_transient = 48, .ssm_dim = 1, .full_state_exemption = true};
    CHECK_NOTHROW(curate(data, vec2(1, 1), ok));
    CurationOptions bad = ok;
    bad.n_transient = 49;
    CHECK_THROWS_AS(curate(data, vec2(1, 1), bad), ssm::DimensionError);
    bad = ok;
    bad.delays = 2;
    bad.delay_lag = 2;  // needs more than 48 + 4 + 2 samples
    bad.n_transient = 44;
    CHECK_NOTHROW(curate(data, vec2(1, 1), bad));
    bad.n_transient = 45;
    CHECK_THROWS_AS(curate(data, vec2(1, 1), bad), ssm::DimensionError);
    CHECK_THROWS_AS(curate(data, Vector::Ones(3), ok), ssm::DimensionError);
}

TEST_CASE("V_E does not depend on trajectory order") {
    oracle::Rand rng(17);
    const auto data = slow_fast_decays(8, 10.0, 5);
    const CurationOptions opts{.n_transient = 30, .ssm_dim = 2, .delays = 1, .full_state_exemption = true};
    const CuratedData base = curate(data, vec2(1, 1), opts);
    for (int trial = 0; trial < 5; ++trial) {
        auto shuffled = data;
        for (std::size_t i = shuffled.trajectories.size() - 1; i > 0; --i)
            std::swap(shuffled.trajectories[i], shuffled.trajectories[rng.integer(0, static_cast<int>(i))]);
        const CuratedData c = curate(shuffled, vec2(1, 1), opts);
        CHECK(subspace_angle(base.V_E, c.V_E) < 1e-10);
    }
}

TEST_CASE("a constant offset in the data and the equilibrium leaves the curated data unchanged") {
    const auto data = slow_fast_decays(4, 5.0, 8);
    const CurationOptions opts{.n_transient = 40, .ssm_dim = 1, .delays = 2, .delay_lag = 3,
                               .full_state_exemption = true};
    const Vector yeq = vec2(1, 1);
    const CuratedData a = curate(data, yeq, opts);
    const Vector offset = vec2(3.25, -7.5);
    auto moved = data;
    for (auto& tr : moved.trajectories) tr.Y.colwise() += offset;
    const CuratedData b = curate(moved, yeq + offset, opts);
    CHECK((a.Y_trans - b.Y_trans).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((a.Y_near - b.Y_near).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((a.Ydot_near - b.Ydot_near).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((a.V_E - b.V_E).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("prepare_controlled aligns inputs with the newest embedded sample") {
    const auto data = sys::generate_controlled_dataset(sys::make_slow_fast(), 3, {.amplitude_max = 1.0},
                                                       {vec2(1, 1), vec2(0.3, 0.3)}, 2.0, 0.01, 6);
    const int d = 2, lag = 3, span = d * lag;
    const ControlledData cd = prepare_controlled(data, vec2(1, 1), d, lag);
    const long per = 201 - span;
    REQUIRE(cd.Y.cols() == 3 * per);
    for (int i = 0; i < 3; ++i) {
        const auto& tr = data.trajectories[i];
        CHECK(cd.U.middleCols(i * per, per) == tr.U.rightCols(per));
        CHECK(cd.Y.middleCols(i * per, per) == embed_oracle(tr.Y, vec2(1, 1), d, lag));
    }
    CHECK_THROWS_AS(prepare_controlled(slow_fast_decays(1, 1.0), vec2(1, 1), 0), ssm::DimensionError);
}

TEST_CASE("normal-energy diagnostic decays along the transient") {
    const auto data = slow_fast_decays();
    const CuratedData c = curate(data, estimate_equilibrium(data), {.n_transient = 50, .ssm_dim = 1,
                                                                    .full_state_exemption = true});
    const Vector e = normal_energy_curve(data, c);
    CHECK(e.size() == 5001);
    CHECK(e(0) > 10.0 * e(50));
    CHECK(e(50) > e(500));
}

TEST_CASE("curated bundles round-trip exactly") {
    const auto data = slow_fast_decays(3, 4.0);
    const CuratedData c = curate(data, vec2(1, 1), {.n_transient = 25, .ssm_dim = 1, .delays = 1, .delay_lag = 2,
                                                    .full_state_exemption = true});
    const fs::path dir = fs::temp_directory_path() / "ssmkit_test_curated";
    fs::remove_all(dir);
    save_curated(c, dir);
    const CuratedData b = load_curated(dir);
    CHECK(b.Y_trans == c.Y_trans);
    CHECK(b.Ydot_trans == c.Ydot_trans);
    CHECK(b.Y_near == c.Y_near);
    CHECK(b.Ydot_near == c.Ydot_near);
    CHECK(b.V_E == c.V_E);
    CHECK(b.y_eq == c.y_eq);
    CHECK(b.y_eq_base == c.y_eq_base);
    CHECK(b.delays == 1);
    CHECK(b.delay_lag == 2);
    CHECK(b.dt == c.dt);
    CHECK(b.trans_counts == c.trans_counts);
    CHECK(b.near_counts == c.near_counts);
    fs::remove(dir / "curated.bin");
    CHECK_THROWS_AS(load_curated(dir), ssm::IoError);
    fs::remove_all(dir);
}
