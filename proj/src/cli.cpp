#include "ssmkit/cli.hpp"

#include "ssmkit/error.hpp"
#include "ssmkit/pipeline.hpp"

#include "CLI11.hpp"

#include <string>
#include <vector>

namespace ssm::cli {

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"ssmkit: SSM reduced-order models with oblique projections and MPC"};
    app.set_version_flag("--version", std::string("ssmkit ") + pipeline::kVersion);
    app.require_subcommand(1, 1);
    app.fallthrough();

    std::string preset;
    std::string config_file;
    std::vector<std::string> sets;
    app.add_option("--preset", preset, "Preset name (slow-fast, chain)");
    app.add_option("-c,--config", config_file, "JSON config file (comments allowed)");
    app.add_option("--set", sets, "Override a config field, path=value (repeatable)");

    auto* gen = app.add_subcommand("generate", "Simulate decay, controlled and test datasets");
    auto* fit = app.add_subcommand("fit", "Curate data and fit SSM models");
    std::string mode = "config";
    fit->add_option("--mode", mode, "orthogonal, oblique, both, or config (learning.modes)")
        ->check(CLI::IsMember({"orthogonal", "oblique", "both", "config"}));
    auto* eval = app.add_subcommand("evaluate", "Open-loop prediction suites and MSE tables");
    auto* ctl = app.add_subcommand("control", "Closed-loop MPC tracking");
    std::string task;
    ctl->add_option("--task", task, "circle, figure8 or csv (default mpc.task)")
        ->check(CLI::IsMember({"circle", "figure8", "csv"}));
    auto* rep = app.add_subcommand("report", "Collect summaries into a report");
    auto* all = app.add_subcommand("run", "generate, fit, evaluate, control (mpc.run_tasks) and report");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        app.exit(e, out, err);
        return kOk;
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kConfig;
    }

    try {
        const auto cfg = config::resolve(preset, config_file, sets);
        using learning::ProjectionMode;
        std::vector<ProjectionMode> modes;
        if (mode == "orthogonal") modes = {ProjectionMode::Orthogonal};
        if (mode == "oblique") modes = {ProjectionMode::Oblique};
        if (mode == "both") modes = {ProjectionMode::Orthogonal, ProjectionMode::Oblique};

        if (*gen) pipeline::cmd_generate(cfg);
        if (*fit) pipeline::cmd_fit(cfg, modes);
        if (*eval) pipeline::cmd_evaluate(cfg);
        if (*ctl) pipeline::cmd_control(cfg, task);
        if (*rep) pipeline::cmd_report(cfg);
        if (*all) {
            pipeline::cmd_generate(cfg);
            pipeline::cmd_fit(cfg);
            pipeline::cmd_evaluate(cfg);
            for (const auto& t : cfg.mpc.run_tasks) pipeline::cmd_control(cfg, t);
            pipeline::cmd_report(cfg);
        }
        out << "ssmkit: done (" << cfg.io.output_dir.string() << ")\n";
        return kOk;
    } catch (const ConfigError& e) {
        err << "ssmkit: config error: " << e.what() << "\n";
        return kConfig;
    } catch (const DimensionError& e) {
        err << "ssmkit: config error: " << e.what() << "\n";
        return kConfig;
    } catch (const NumericalError& e) {
        err << "ssmkit: numerical failure: " << e.what() << "\n";
        return kNumerical;
    } catch (const IoError& e) {
        err << "ssmkit: I/O error: " << e.what() << "\n";
        return kIo;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "ssmkit: I/O error: " << e.what() << "\n";
        return kIo;
    }
}

}  // namespace ssm::cli
