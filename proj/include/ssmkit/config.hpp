#pragma once

#include "ssmkit/learning.hpp"
#include "ssmkit/systems.hpp"

#include "json.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ssm::config {

using nlohmann::json;
using numkit::Vector;

/// Initial-condition box relative to the equilibrium. A scalar half width covers
/// every state coordinate; `velocity_half_width`, when set, overrides the
/// velocity half of a mechanical state.
struct IcBox {
    std::vector<double> half_width;  // size 1 or state_dim
    std::optional<double> velocity_half_width;
};

struct DecayBlock {
    int trajectories = 0;
    double t_span = 0.0;
    std::uint64_t seed = 0;
    IcBox box;
};

struct ControlledBlock {
    int trajectories = 0;
    double t_span = 0.0;
    std::uint64_t seed = 0;
    systems::HarmonicProtocol protocol;
    IcBox box;
};

struct SystemBlock {
    std::string name;
    systems::SlowFastParams slow_fast;
    systems::ChainParams chain;
    double dt = 0.01;
    int substeps = 1;
};

struct DataBlock {
    DecayBlock decay;
    ControlledBlock controlled;
    DecayBlock test;
};

struct CurationBlock {
    int n_transient = 0;
    int ssm_dim = 1;
    int delays = 0;
    int delay_lag = 1;
    double tail_fraction = 0.1;
    bool full_state_exemption = false;
    std::string equilibrium;  // "estimate" or "system"
};

struct LearningBlock {
    std::vector<learning::ProjectionMode> modes;
    learning::FitOptions fit;  // mode is filled per run
};

struct ForcedBlock {
    bool enabled = false;
    int trajectories = 0;
    double t_span = 0.0;
    double amplitude = 1.0;
    double time_constant = 1.0;
    std::uint64_t seed = 0;
    IcBox box;
};

struct EvaluateBlock {
    std::vector<int> outputs;  // rows of the un-delayed observable; empty: all
    bool traces = true;
    ForcedBlock forced;
};

struct MpcBlock {
    std::string task;  // circle, figure8, csv
    double duration = 5.0;
    double radius = 0.05;
    double period = 5.0;
    std::string reference_csv;
    std::vector<int> outputs;
    std::vector<double> Q, Q_f, R_u, R_delta, u_min, u_max;  // size 1 (scalar) or full diagonal
    int horizon = 8;
    int stride = 2;
    double dt_mpc = 0.05;
    int scp_iters = 3;
    double qp_tol = 1e-8;
    int qp_max_iters = 5000;
    int rk4_substeps = 1;
    std::vector<std::string> run_tasks;  // tasks the `run` command executes
};

struct IoBlock {
    std::filesystem::path output_dir;
    bool record_timing = false;
};

struct PipelineConfig {
    json resolved;  // the merged document every stage writes beside its outputs
    SystemBlock system;
    DataBlock data;
    CurationBlock curation;
    LearningBlock learning;
    EvaluateBlock evaluate;
    MpcBlock mpc;
    IoBlock io;

    systems::SystemSpec make_system() const;
};

/// Every accepted key with its default value.
json default_document();

/// Parses JSON that may contain comments.
json parse_json_text(const std::string& text, const std::string& origin);

/// Recursively overlays `overrides` onto `base`. Keys absent from `base` and type
/// mismatches raise ConfigError naming the field path.
void merge_into(json& base, const json& overrides, const std::string& path = "");

/// Applies "a.b.c=value"; the value is parsed as JSON and falls back to a string.
void apply_set(json& doc, const std::string& assignment);

std::filesystem::path preset_directory();
json load_preset(const std::string& name);

/// defaults <- preset <- config file <- --set assignments, then validated.
PipelineConfig resolve(const std::string& preset, const std::filesystem::path& config_file,
                       const std::vector<std::string>& sets);

/// Validates ranges and cross-field consistency and fills the typed blocks.
PipelineConfig from_document(const json& doc);

systems::Box make_box(const IcBox& box, const systems::SystemSpec& sys, const std::string& path);

}  // namespace ssm::config
