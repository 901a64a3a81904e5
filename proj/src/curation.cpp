#include "ssmkit/curation.hpp"

#include "ssmkit/dataset_io.hpp"
#include "ssmkit/error.hpp"

#include "json.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace ssm::curation {

using nlohmann::json;
namespace fs = std::filesystem;

Vector estimate_equilibrium(const systems::TrajectoryDataset& data, double tail_fraction) {
    if (data.controlled())
        throw DimensionError("estimate_equilibrium: the equilibrium must come from unforced data");
    if (!(tail_fraction > 0.0 && tail_fraction <= 1.0))
        throw DimensionError("estimate_equilibrium: tail_fraction must lie in (0, 1]");
    if (data.trajectories.empty()) throw DimensionError("estimate_equilibrium: empty dataset");
    Vector sum = Vector::Zero(data.observable_dim());
    long count = 0;
    for (const auto& tr : data.trajectories) {
        const Eigen::Index N = tr.Y.cols();
        const Eigen::Index tail = std::max<Eigen::Index>(1, static_cast<Eigen::Index>(std::ceil(tail_fraction * N)));
        sum += tr.Y.rightCols(tail).rowwise().sum();
        count += tail;
    }
    return sum / double(count);
}

void check_embedding_dimension(int base_dim, int delays, int n, bool full_state_exemption) {
    const int p = base_dim * (delays + 1);
    if (!full_state_exemption && p < 2 * n + 1)
        throw DimensionError("embedding dimension p=" + std::to_string(p) + " < 2n+1=" +
                             std::to_string(2 * n + 1) + "; add delays or enable the full-state exemption");
}

Matrix shift_and_embed(const Matrix& Y_raw, const Vector& y_eq_base, int delays, int delay_lag) {
    if (Y_raw.rows() != y_eq_base.size()) throw DimensionError("shift_and_embed: equilibrium length mismatch");
    const Matrix shifted = Y_raw.colwise() - y_eq_base;
    return numkit::delay_embed(shifted, delays, delay_lag);
}

CuratedData curate(const systems::TrajectoryDataset& data, const Vector& y_eq_base,
                   const CurationOptions& opts) {
    data.validate();
    if (data.trajectories.empty()) throw DimensionError("curate: empty dataset");
    const int q = data.observable_dim();
    const int d = opts.delays;
    const int lag = opts.delay_lag;
    if (lag < 1) throw DimensionError("curate: delay lag must be positive");
    if (y_eq_base.size() != q) throw DimensionError("curate: equilibrium has wrong length");
    if (opts.ssm_dim < 1) throw DimensionError("curate: SSM dimension must be positive");
    if (opts.n_transient < 0) throw DimensionError("curate: n_transient must be non-negative");
    check_embedding_dimension(q, d, opts.ssm_dim, opts.full_state_exemption);

    CuratedData c;
    c.n = opts.ssm_dim;
    c.delays = d;
    c.delay_lag = lag;
    c.base_dim = q;
    c.dt = data.dt;
    c.y_eq_base = y_eq_base;
    c.y_eq = y_eq_base.replicate(d + 1, 1);
    const int p = c.p();

    std::vector<Matrix> Ys, Ds;
    long n_trans = 0, n_near = 0;
    for (std::size_t i = 0; i < data.trajectories.size(); ++i) {
        const auto& tr = data.trajectories[i];
        if (tr.Y.cols() <= opts.n_transient + d * lag + 2)
            throw DimensionError("curate: trajectory " + std::to_string(i) + " has " +
                                 std::to_string(tr.Y.cols()) + " samples, needs more than " +
                                 std::to_string(opts.n_transient + d * lag + 2));
        Matrix E = shift_and_embed(tr.Y, y_eq_base, d, lag);
        Matrix D = numkit::finite_difference(E, data.dt);
        c.trans_counts.push_back(opts.n_transient);
        c.near_counts.push_back(static_cast<int>(E.cols()) - opts.n_transient);
        n_trans += opts.n_transient;
        n_near += E.cols() - opts.n_transient;
        Ys.push_back(std::move(E));
        Ds.push_back(std::move(D));
    }
    c.Y_trans.resize(p, n_trans);
    c.Ydot_trans.resize(p, n_trans);
    c.Y_near.resize(p, n_near);
    c.Ydot_near.resize(p, n_near);
    long ot = 0, on = 0;
    for (std::size_t i = 0; i < Ys.size(); ++i) {
        const int nt = c.trans_counts[i];
        const int nn = c.near_counts[i];
        c.Y_trans.middleCols(ot, nt) = Ys[i].leftCols(nt);
        c.Ydot_trans.middleCols(ot, nt) = Ds[i].leftCols(nt);
        c.Y_near.middleCols(on, nn) = Ys[i].rightCols(nn);
        c.Ydot_near.middleCols(on, nn) = Ds[i].rightCols(nn);
        ot += nt;
        on += nn;
    }
    c.V_E = numkit::truncated_svd(c.Y_near, c.n);
    return c;
}

ControlledData prepare_controlled(const systems::TrajectoryDataset& data, const Vector& y_eq_base,
                                  int delays, int delay_lag) {
    data.validate();
    if (!data.controlled()) throw DimensionError("prepare_controlled: dataset carries no inputs");
    const int q = data.observable_dim();
    const int m = data.input_dim();
    std::vector<Matrix> Ys, Ds, Us;
    long total = 0;
    for (const auto& tr : data.trajectories) {
        Matrix E = shift_and_embed(tr.Y, y_eq_base, delays, delay_lag);
        if (E.cols() < 3) throw DimensionError("prepare_controlled: trajectory too short");
        Ds.push_back(numkit::finite_difference(E, data.dt));
        Us.push_back(tr.U.rightCols(E.cols()));
        total += E.cols();
        Ys.push_back(std::move(E));
    }
    ControlledData out;
    out.Y.resize(q * (delays + 1), total);
    out.Ydot.resize(q * (delays + 1), total);
    out.U.resize(m, total);
    long off = 0;
    for (std::size_t i = 0; i < Ys.size(); ++i) {
        const auto k = Ys[i].cols();
        out.Y.middleCols(off, k) = Ys[i];
        out.Ydot.middleCols(off, k) = Ds[i];
        out.U.middleCols(off, k) = Us[i];
        off += k;
    }
    return out;
}

Vector normal_energy_curve(const systems::TrajectoryDataset& data, const CuratedData& curated) {
    Eigen::Index len = 0;
    for (const auto& tr : data.trajectories) len = std::max<Eigen::Index>(len, tr.Y.cols() - curated.span());
    Vector sum = Vector::Zero(len), cnt = Vector::Zero(len);
    for (const auto& tr : data.trajectories) {
        const Matrix E = shift_and_embed(tr.Y, curated.y_eq_base, curated.delays, curated.delay_lag);
        const Matrix normal = E - curated.V_E * (curated.V_E.transpose() * E);
        for (Eigen::Index k = 0; k < E.cols(); ++k) {
            sum(k) += normal.col(k).squaredNorm();
            cnt(k) += 1.0;
        }
    }
    return sum.cwiseQuotient(cnt.cwiseMax(1.0));
}

namespace {

void write_matrix(std::ofstream& out, const Matrix& M) {
    const std::int64_t dims[2] = {M.rows(), M.cols()};
    out.write(reinterpret_cast<const char*>(dims), sizeof dims);
    out.write(reinterpret_cast<const char*>(M.data()), static_cast<std::streamsize>(sizeof(double) * M.size()));
}

Matrix read_matrix(std::ifstream& in) {
    std::int64_t dims[2];
    in.read(reinterpret_cast<char*>(dims), sizeof dims);
    if (!in || dims[0] < 0 || dims[1] < 0) throw IoError("curated bundle: truncated payload");
    Matrix M(dims[0], dims[1]);
    in.read(reinterpret_cast<char*>(M.data()), static_cast<std::streamsize>(sizeof(double) * M.size()));
    if (!in) throw IoError("curated bundle: truncated payload");
    return M;
}

}  // namespace

void save_curated(const CuratedData& c, const fs::path& dir) {
    fs::create_directories(dir);
    json header = {{"format", "ssmkit-curated-v1"},
                   {"n", c.n},
                   {"delays", c.delays},
                   {"delay_lag", c.delay_lag},
                   {"base_dim", c.base_dim},
                   {"dt", c.dt},
                   {"trans_counts", c.trans_counts},
                   {"near_counts", c.near_counts},
                   {"y_eq_base", std::vector<double>(c.y_eq_base.data(), c.y_eq_base.data() + c.y_eq_base.size())},
                   {"payload", "curated.bin"},
                   {"payload_order", {"Y_trans", "Ydot_trans", "Y_near", "Ydot_near", "V_E"}}};
    io::write_text(dir / "curated.json", header.dump(2) + "\n");
    std::ofstream out(dir / "curated.bin", std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / "curated.bin").string());
    for (const Matrix* M : {&c.Y_trans, &c.Ydot_trans, &c.Y_near, &c.Ydot_near, &c.V_E}) write_matrix(out, *M);
}

CuratedData load_curated(const fs::path& dir) {
    CuratedData c;
    try {
        const json h = json::parse(io::read_text(dir / "curated.json"));
        if (h.at("format") != "ssmkit-curated-v1") throw IoError("curated bundle: unknown format");
        c.n = h.at("n");
        c.delays = h.at("delays");
        c.delay_lag = h.at("delay_lag");
        c.base_dim = h.at("base_dim");
        c.dt = h.at("dt");
        c.trans_counts = h.at("trans_counts").get<std::vector<int>>();
        c.near_counts = h.at("near_counts").get<std::vector<int>>();
        const auto eq = h.at("y_eq_base").get<std::vector<double>>();
        c.y_eq_base = Eigen::Map<const Vector>(eq.data(), static_cast<Eigen::Index>(eq.size()));
        c.y_eq = c.y_eq_base.replicate(c.delays + 1, 1);
    } catch (const json::exception& e) {
        throw IoError(std::string("curated bundle: ") + e.what());
    }
    std::ifstream in(dir / "curated.bin", std::ios::binary);
    if (!in) throw IoError("cannot open " + (dir / "curated.bin").string());
    c.Y_trans = read_matrix(in);
    c.Ydot_trans = read_matrix(in);
    c.Y_near = read_matrix(in);
    c.Ydot_near = read_matrix(in);
    c.V_E = read_matrix(in);
    return c;
}

}  // namespace ssm::curation
