#include "ssmkit/pipeline.hpp"

#include "ssmkit/curation.hpp"
#include "ssmkit/dataset_io.hpp"
#include "ssmkit/error.hpp"
#include "ssmkit/model_io.hpp"
#include "ssmkit/mpc.hpp"
#include "ssmkit/rom.hpp"

#include <cmath>
#include <cstdio>
#include <algorithm>
#include <limits>
#include <optional>
#include <sstream>

namespace ssm::pipeline {

namespace fs = std::filesystem;
using config::PipelineConfig;
using nlohmann::json;
using numkit::Matrix;
using numkit::Vector;

namespace {

// Rethrows with a stage prefix while keeping the error category (and so the exit code).
template <class F>
auto staged(const std::string& label, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const DivergenceError& e) {
        throw DivergenceError(label + ": " + e.what(), e.step());
    } catch (const ExcitationError& e) {
        throw ExcitationError(label + ": " + e.what(), e.channel());
    } catch (const NumericalError& e) {
        throw NumericalError(label + ": " + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError(label + ": " + e.what());
    } catch (const DimensionError& e) {
        throw DimensionError(label + ": " + e.what());
    } catch (const IoError& e) {
        throw IoError(label + ": " + e.what());
    }
}

fs::path manifest(const fs::path& dir, const std::string& stem) { return dir / (stem + "_manifest.json"); }

systems::TrajectoryDataset load_checked(const fs::path& path, const PipelineConfig& cfg) {
    if (!fs::exists(path)) throw IoError("missing dataset " + path.string() + " (run generate first)");
    auto ds = io::load_dataset(path);
    if (ds.system != cfg.system.name)
        throw ConfigError("dataset " + path.string() + " was generated for '" + ds.system + "', config names '" +
                          cfg.system.name + "'");
    if (std::abs(ds.dt - cfg.system.dt) > 1e-12 * cfg.system.dt)
        throw ConfigError("dataset " + path.string() + " sampling interval differs from system.dt");
    return ds;
}

// u_i(t) = amplitude exp(-t / tau) on every channel, initial conditions drawn from the box.
systems::TrajectoryDataset generate_forced_dataset(const systems::SystemSpec& sys, const config::ForcedBlock& f,
                                                   const systems::Box& box, double dt, int substeps) {
    systems::TrajectoryDataset ds;
    ds.dt = dt;
    ds.seed = f.seed;
    ds.system = sys.name;
    ds.protocol = "exponential";
    ds.protocol_parameters = {{"amplitude", f.amplitude}, {"time_constant", f.time_constant}};
    const double a = f.amplitude, tau = f.time_constant;
    const int m = sys.input_dim;
    const systems::InputFunction input = [a, tau, m](double t) { return Vector::Constant(m, a * std::exp(-t / tau)); };
    for (int i = 0; i < f.trajectories; ++i) {
        systems::Rng rng(systems::derive_seed(f.seed, static_cast<std::uint64_t>(i)));
        Vector x0(sys.state_dim);
        for (int k = 0; k < sys.state_dim; ++k)
            x0(k) = rng.uniform(box.center(k) - box.half_width(k), box.center(k) + box.half_width(k));
        const auto tr = systems::integrate(sys, x0, input, f.t_span, dt, substeps);
        ds.trajectories.push_back({tr.times, sys.observe(tr.states), tr.inputs});
    }
    ds.validate();
    return ds;
}

fs::path model_path(const Layout& l, learning::ProjectionMode mode) {
    return l.models / (learning::to_string(mode) + ".json");
}

std::vector<std::pair<std::string, learning::SSMModel>> load_models(const PipelineConfig& cfg) {
    const Layout l = layout(cfg);
    std::vector<std::pair<std::string, learning::SSMModel>> out;
    for (auto mode : {learning::ProjectionMode::Orthogonal, learning::ProjectionMode::Oblique}) {
        const fs::path p = model_path(l, mode);
        if (fs::exists(p)) out.emplace_back(learning::to_string(mode), io::load_model(p));
    }
    if (out.empty()) throw IoError("no fitted models in " + l.models.string() + " (run fit first)");
    return out;
}

// Rows of the embedded observable on which errors and tracking are measured.
Matrix select_rows(const learning::SSMModel& model, const std::vector<int>& rows, const std::string& path) {
    const Matrix full = rom::default_performance_map(model);
    if (rows.empty()) return full;
    Matrix out(rows.size(), full.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= full.rows())
            throw ConfigError(path + ": row " + std::to_string(rows[i]) + " exceeds the observable dimension " +
                              std::to_string(full.rows()));
        out.row(i) = full.row(rows[i]);
    }
    return out;
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string fixed(double v, const char* fmt = "%.6g") {
    if (!std::isfinite(v)) return "diverged";
    char buf[64];
    std::snprintf(buf, sizeof buf, fmt, v);
    return buf;
}

std::string pad(std::string s, std::size_t w) {
    if (s.size() < w) s.append(w - s.size(), ' ');
    return s;
}

struct SuiteOutcome {
    std::string name;
    std::vector<std::string> models;
    std::vector<rom::SuiteSummary> summaries;
};

SuiteOutcome run_suite(const std::string& suite, const systems::TrajectoryDataset& data,
                       const std::vector<std::pair<std::string, learning::SSMModel>>& models,
                       const PipelineConfig& cfg, const Layout& l) {
    SuiteOutcome out{suite, {}, {}};
    for (const auto& [name, model] : models) {
        const Matrix perf = select_rows(model, cfg.evaluate.outputs, "evaluate.outputs");
        std::vector<double> mse;
        for (std::size_t i = 0; i < data.trajectories.size(); ++i) {
            char idx[16];
            std::snprintf(idx, sizeof idx, "%03zu", i);
            try {
                const auto pr = rom::predict_record(model, data.trajectories[i], data.dt, perf);
                mse.push_back(pr.mse);
                if (cfg.evaluate.traces)
                    rom::write_prediction_csv(pr, l.eval / "traces" / (suite + "_" + name + "_" + idx + ".csv"));
            } catch (const DivergenceError&) {
                mse.push_back(std::numeric_limits<double>::infinity());
            }
        }
        out.models.push_back(name);
        out.summaries.push_back(rom::summarize(std::move(mse)));
    }
    return out;
}

json suite_json(const SuiteOutcome& s) {
    json models = json::object();
    for (std::size_t k = 0; k < s.models.size(); ++k) {
        json mse = json::array();
        for (double v : s.summaries[k].mse) mse.push_back(finite_or_null(v));
        models[s.models[k]] = {{"mean", finite_or_null(s.summaries[k].mean)},
                               {"std", finite_or_null(s.summaries[k].stddev)},
                               {"mse", std::move(mse)}};
    }
    json ratios = json::array();
    for (std::size_t a = 0; a < s.models.size(); ++a)
        for (std::size_t b = 0; b < s.models.size(); ++b)
            ratios.push_back({{"numerator", s.models[a]},
                              {"denominator", s.models[b]},
                              {"ratio", finite_or_null(s.summaries[a].mean / s.summaries[b].mean)}});
    return {{"trajectories", s.summaries.empty() ? 0 : s.summaries[0].mse.size()},
            {"models", std::move(models)},
            {"ratios", std::move(ratios)}};
}

void write_suite_csv(const SuiteOutcome& s, const fs::path& path) {
    std::vector<std::string> header{"trajectory"};
    for (const auto& m : s.models) header.push_back("mse_" + m);
    const std::size_t n = s.summaries.empty() ? 0 : s.summaries[0].mse.size();
    Matrix rows(n, header.size());
    for (std::size_t i = 0; i < n; ++i) {
        rows(i, 0) = double(i);
        for (std::size_t k = 0; k < s.models.size(); ++k) rows(i, k + 1) = s.summaries[k].mse[i];
    }
    io::write_csv(path, header, rows);
}

std::string suite_text(const SuiteOutcome& s) {
    std::ostringstream os;
    os << "Suite: " << s.name << " (" << (s.summaries.empty() ? 0 : s.summaries[0].mse.size()) << " trajectories)\n";
    os << pad("model", 12) << "MSE mean +/- std\n";
    for (std::size_t k = 0; k < s.models.size(); ++k)
        os << pad(s.models[k], 12) << fixed(s.summaries[k].mean) << " +/- " << fixed(s.summaries[k].stddev) << "\n";
    os << "Ratios (mean MSE numerator / denominator)\n";
    for (std::size_t a = 0; a < s.models.size(); ++a)
        for (std::size_t b = 0; b < s.models.size(); ++b)
            os << "  " << pad(s.models[a] + "/" + s.models[b], 24)
               << fixed(s.summaries[a].mean / s.summaries[b].mean, "%.4f") << "\n";
    return os.str();
}

mpc::MpcConfig make_mpc_config(const PipelineConfig& cfg, const learning::SSMModel& model) {
    const auto& b = cfg.mpc;
    mpc::MpcConfig m;
    m.C = select_rows(model, b.outputs, "mpc.outputs");
    const int o = static_cast<int>(m.C.rows());
    auto diag = [](const std::vector<double>& v, int n, const std::string& path) {
        if (v.size() == 1) return Matrix(v[0] * Matrix::Identity(n, n));
        if (static_cast<int>(v.size()) != n)
            throw ConfigError(path + ": expected 1 or " + std::to_string(n) + " entries");
        return Matrix(Eigen::Map<const Vector>(v.data(), n).asDiagonal());
    };
    auto vec = [](const std::vector<double>& v, int n, const std::string& path) {
        if (v.size() == 1) return Vector(Vector::Constant(n, v[0]));
        if (static_cast<int>(v.size()) != n)
            throw ConfigError(path + ": expected 1 or " + std::to_string(n) + " entries");
        return Vector(Eigen::Map<const Vector>(v.data(), n));
    };
    m.Q = diag(b.Q, o, "mpc.Q");
    m.Q_f = diag(b.Q_f, o, "mpc.Q_f");
    m.R_u = diag(b.R_u, model.m, "mpc.R_u");
    m.R_delta = diag(b.R_delta, model.m, "mpc.R_delta");
    m.u_min = vec(b.u_min, model.m, "mpc.u_min");
    m.u_max = vec(b.u_max, model.m, "mpc.u_max");
    m.horizon = b.horizon;
    m.stride = b.stride;
    m.dt_mpc = b.dt_mpc;
    m.scp_iters = b.scp_iters;
    m.qp_tol = b.qp_tol;
    m.qp_max_iters = b.qp_max_iters;
    m.rk4_substeps = b.rk4_substeps;
    m.validate(model.p, model.m);
    return m;
}

mpc::ReferenceFn make_reference(const PipelineConfig& cfg, const std::string& task, const Vector& z_eq) {
    const auto& b = cfg.mpc;
    if (task == "circle") {
        Vector center = z_eq;
        center(0) -= b.radius;  // the circle starts at the equilibrium
        return mpc::circle_reference(center, b.radius, b.period);
    }
    if (task == "figure8") return mpc::figure_eight_reference(z_eq, b.radius, b.period);
    if (task == "csv") {
        const fs::path p = b.reference_csv;
        if (!fs::exists(p)) throw IoError("reference table not found: " + p.string());
        return mpc::csv_reference(p);
    }
    throw ConfigError("mpc.task: expected 'circle', 'figure8' or 'csv', got '" + task + "'");
}

json read_json(const fs::path& p) {
    try {
        return json::parse(io::read_text(p));
    } catch (const json::parse_error& e) {
        throw IoError(p.string() + ": " + e.what());
    }
}

}  // namespace

Layout layout(const PipelineConfig& cfg) {
    const fs::path r = cfg.io.output_dir;
    return {r, r / "data", r / "models", r / "eval", r / "control", r / "report"};
}

std::string config_digest(const PipelineConfig& cfg) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : cfg.resolved.dump()) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void write_stamp(const PipelineConfig& cfg, const fs::path& dir, const std::string& command) {
    io::write_text(dir / "resolved_config.json", cfg.resolved.dump(2) + "\n");
    const json v = {{"tool", "ssmkit"},
                    {"version", kVersion},
                    {"command", command},
                    {"config_digest", config_digest(cfg)},
                    {"model_format", "ssmkit-model-v1"},
                    {"dataset_format", "ssmkit-dataset-v1"}};
    io::write_text(dir / "version.json", v.dump(2) + "\n");
}

void cmd_generate(const PipelineConfig& cfg) {
    const Layout l = layout(cfg);
    const auto sys = cfg.make_system();
    const auto& d = cfg.data;
    const double dt = cfg.system.dt;
    const int sub = cfg.system.substeps;
    staged("generate/decay", [&] {
        const auto box = config::make_box(d.decay.box, sys, "data.decay.box");
        io::save_dataset(systems::generate_decay_dataset(sys, d.decay.trajectories, box, d.decay.t_span, dt, d.decay.seed, sub),
                         l.data, "decay");
    });
    if (d.controlled.trajectories > 0) {
        staged("generate/controlled", [&] {
            if (sys.input_dim == 0) throw ConfigError("data.controlled: the system has no inputs");
            const auto box = config::make_box(d.controlled.box, sys, "data.controlled.box");
            io::save_dataset(systems::generate_controlled_dataset(sys, d.controlled.trajectories, d.controlled.protocol, box,
                                                                  d.controlled.t_span, dt, d.controlled.seed, sub),
                             l.data, "controlled");
        });
    }
    if (d.test.trajectories > 0) {
        staged("generate/test", [&] {
            const auto box = config::make_box(d.test.box, sys, "data.test.box");
            io::save_dataset(systems::generate_decay_dataset(sys, d.test.trajectories, box, d.test.t_span, dt, d.test.seed, sub),
                             l.data, "test");
        });
    }
    const auto& f = cfg.evaluate.forced;
    if (f.enabled && f.trajectories > 0) {
        staged("generate/forced", [&] {
            if (sys.input_dim == 0) throw ConfigError("evaluate.forced: the system has no inputs");
            const auto box = config::make_box(f.box, sys, "evaluate.forced.box");
            io::save_dataset(generate_forced_dataset(sys, f, box, dt, sub), l.data, "forced");
        });
    }
    write_stamp(cfg, l.data, "generate");
}

void cmd_fit(const PipelineConfig& cfg, const std::vector<learning::ProjectionMode>& modes_in) {
    const Layout l = layout(cfg);
    const auto& modes = modes_in.empty() ? cfg.learning.modes : modes_in;
    const auto sys = cfg.make_system();
    const auto decay = staged("fit/load", [&] { return load_checked(manifest(l.data, "decay"), cfg); });

    const auto& cb = cfg.curation;
    const Vector y_eq = staged("fit/equilibrium", [&] {
        return cb.equilibrium == "system" ? Vector(sys.observed_equilibrium())
                                          : curation::estimate_equilibrium(decay, cb.tail_fraction);
    });
    const curation::CurationOptions co{.n_transient = cb.n_transient,
                                       .ssm_dim = cb.ssm_dim,
                                       .delays = cb.delays,
                                       .delay_lag = cb.delay_lag,
                                       .full_state_exemption = cb.full_state_exemption};
    const auto curated = staged("fit/curation", [&] { return curation::curate(decay, y_eq, co); });
    staged("fit/curation", [&] {
        curation::save_curated(curated, l.models / "curated");
        const Vector energy = curation::normal_energy_curve(decay, curated);
        Matrix rows(energy.size(), 2);
        for (Eigen::Index k = 0; k < energy.size(); ++k) rows.row(k) << double(k), energy(k);
        io::write_csv(l.models / "normal_energy.csv", {"sample", "normal_energy"}, rows);
    });

    std::optional<curation::ControlledData> controlled;
    if (cfg.data.controlled.trajectories > 0) {
        const auto ds = staged("fit/load", [&] { return load_checked(manifest(l.data, "controlled"), cfg); });
        controlled = staged("fit/controlled", [&] { return curation::prepare_controlled(ds, y_eq, cb.delays, cb.delay_lag); });
    }

    for (auto mode : modes) {
        const std::string name = learning::to_string(mode);
        learning::FitOptions fo = cfg.learning.fit;
        fo.mode = mode;
        const auto fit = staged("fit/" + name, [&] {
            return learning::fit_ssm_model(curated, controlled ? &*controlled : nullptr, fo);
        });
        staged("fit/" + name, [&] { io::save_model(fit.model, model_path(l, mode)); });

        const auto& r = fit.report;
        json rep = {{"mode", name},
                    {"n", fit.model.n},
                    {"p", fit.model.p},
                    {"m", fit.model.m},
                    {"near_residual", r.near_residual},
                    {"control_residual", r.control_residual},
                    {"constraint_VtVE", r.constraint_VtVE},
                    {"constraint_VtW", r.constraint_VtW},
                    {"idempotency", r.idempotency}};
        if (r.oblique) {
            const auto& ob = *r.oblique;
            rep["oblique"] = {{"iterations", ob.iterations},
                              {"converged", ob.converged},
                              {"stop_reason", ob.stop_reason},
                              {"initial_loss", ob.loss_history.front()},
                              {"final_loss", ob.loss_history.back()},
                              {"loss_history", ob.loss_history}};
        }
        io::write_text(l.models / (name + "_fit.json"), rep.dump(2) + "\n");
    }
    write_stamp(cfg, l.models, "fit");
}

void cmd_evaluate(const PipelineConfig& cfg) {
    const Layout l = layout(cfg);
    const auto models = staged("evaluate/load", [&] { return load_models(cfg); });
    std::vector<SuiteOutcome> suites;
    staged("evaluate/decay", [&] {
        const auto test = load_checked(manifest(l.data, "test"), cfg);
        suites.push_back(run_suite("decay", test, models, cfg, l));
    });
    if (cfg.evaluate.forced.enabled) {
        staged("evaluate/forced", [&] {
            for (const auto& [name, model] : models)
                if (model.m == 0) throw ConfigError("evaluate.forced: model '" + name + "' has no control matrix");
            const auto forced = load_checked(manifest(l.data, "forced"), cfg);
            suites.push_back(run_suite("forced", forced, models, cfg, l));
        });
    }

    json summary = {{"suites", json::object()}};
    std::string text;
    for (const auto& s : suites) {
        summary["suites"][s.name] = suite_json(s);
        write_suite_csv(s, l.eval / (s.name + "_mse.csv"));
        text += suite_text(s) + "\n";
    }
    io::write_text(l.eval / "summary.json", summary.dump(2) + "\n");
    io::write_text(l.eval / "summary.txt", text);
    write_stamp(cfg, l.eval, "evaluate");
}

void cmd_control(const PipelineConfig& cfg, const std::string& task_in) {
    const Layout l = layout(cfg);
    const std::string task = task_in.empty() ? cfg.mpc.task : task_in;
    const auto models = staged("control/load", [&] { return load_models(cfg); });
    const auto sys = cfg.make_system();

    json rows = json::array();
    std::vector<std::string> failures;
    for (const auto& entry : models) {
        const std::string& name = entry.first;
        const auto& model = entry.second;
        const auto result = staged("control/" + name, [&] {
            const auto mc = make_mpc_config(cfg, model);
            const Vector z_eq = mc.C * model.y_eq;
            const auto ref = make_reference(cfg, task, z_eq);
            mpc::ClosedLoopOptions opts;
            opts.substeps = cfg.system.substeps;
            return mpc::run_closed_loop(sys, model, mc, ref, cfg.mpc.duration, opts);
        });
        mpc::write_closed_loop_csv(result, l.control / (task + "_" + name + ".csv"));
        mpc::write_closed_loop_json(result, l.control / (task + "_" + name + ".json"), cfg.io.record_timing);
        rows.push_back({{"task", task}, {"mode", name}, {"ise", finite_or_null(result.ise)}, {"aborted", result.aborted}});
        if (result.aborted) failures.push_back(name + ": " + result.message);
    }

    std::ostringstream os;
    os << pad("Task", 12);
    for (const auto& r : rows) os << pad(r["mode"].get<std::string>(), 16);
    os << "\n" << pad(task, 12);
    for (const auto& r : rows) os << pad(r["ise"].is_null() ? "aborted" : fixed(r["ise"].get<double>()), 16);
    os << "\n(ISE of the performance output, units^2 s)\n";
    io::write_text(l.control / (task + "_ise.json"), json{{"task", task}, {"rows", rows}}.dump(2) + "\n");
    io::write_text(l.control / (task + "_ise.txt"), os.str());
    write_stamp(cfg, l.control, "control");

    if (!failures.empty()) {
        std::string msg = "control: closed loop aborted";
        for (const auto& f : failures) msg += "; " + f;
        throw NumericalError(msg);
    }
}

void cmd_report(const PipelineConfig& cfg) {
    const Layout l = layout(cfg);
    json report = {{"system", cfg.system.name}, {"config_digest", config_digest(cfg)}};
    std::ostringstream md;
    md << "# ssmkit report: " << cfg.system.name << "\n\n";

    bool any = false;
    const fs::path eval_json = l.eval / "summary.json";
    if (fs::exists(eval_json)) {
        any = true;
        const json ev = read_json(eval_json);
        report["evaluate"] = ev;
        for (const auto& [suite, body] : ev.at("suites").items()) {
            md << "## Open-loop " << suite << " suite (" << body.at("trajectories").get<int>() << " trajectories)\n\n";
            md << "| model | MSE mean | MSE std |\n|---|---|---|\n";
            for (const auto& [name, m] : body.at("models").items())
                md << "| " << name << " | " << (m["mean"].is_null() ? "diverged" : fixed(m["mean"].get<double>())) << " | "
                   << (m["std"].is_null() ? "-" : fixed(m["std"].get<double>())) << " |\n";
            md << "\n| ratio | value |\n|---|---|\n";
            for (const auto& r : body.at("ratios"))
                md << "| " << r["numerator"].get<std::string>() << " / " << r["denominator"].get<std::string>() << " | "
                   << (r["ratio"].is_null() ? "-" : fixed(r["ratio"].get<double>(), "%.4f")) << " |\n";
            md << "\n";
        }
    }

    json control = json::array();
    if (fs::exists(l.control)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(l.control)) {
            const std::string fn = e.path().filename().string();
            if (fn.size() > 8 && fn.ends_with("_ise.json")) files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        if (!files.empty()) {
            any = true;
            md << "## Closed-loop tracking (ISE)\n\n| task | model | ISE |\n|---|---|---|\n";
            for (const auto& f : files) {
                const json t = read_json(f);
                control.push_back(t);
                for (const auto& r : t.at("rows"))
                    md << "| " << r["task"].get<std::string>() << " | " << r["mode"].get<std::string>() << " | "
                       << (r["ise"].is_null() ? "aborted" : fixed(r["ise"].get<double>())) << " |\n";
            }
            md << "\n";
        }
    }
    report["control"] = control;
    if (!any) throw IoError("report: nothing to report in " + l.root.string() + " (run evaluate or control first)");
    io::write_text(l.report / "report.json", report.dump(2) + "\n");
    io::write_text(l.report / "report.md", md.str());
    write_stamp(cfg, l.report, "report");
}

}  // namespace ssm::pipeline
