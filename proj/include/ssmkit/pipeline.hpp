#pragma once

#include "ssmkit/config.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace ssm::pipeline {

inline constexpr const char* kVersion = "0.1.0";

/// Stage directories under io.output_dir.
struct Layout {
    std::filesystem::path root, data, models, eval, control, report;
};
Layout layout(const config::PipelineConfig& cfg);

/// resolved_config.json and version.json (tool version, config digest, command).
void write_stamp(const config::PipelineConfig& cfg, const std::filesystem::path& dir, const std::string& command);

/// 64-bit FNV-1a of the canonical dump, as 16 hex digits.
std::string config_digest(const config::PipelineConfig& cfg);

/// Decay, controlled, held-out test and (when enabled) forced-evaluation datasets.
void cmd_generate(const config::PipelineConfig& cfg);
/// Curation and one model per mode; an empty list uses learning.modes.
void cmd_fit(const config::PipelineConfig& cfg, const std::vector<learning::ProjectionMode>& modes = {});
/// Open-loop suites for every fitted model found in the models directory.
void cmd_evaluate(const config::PipelineConfig& cfg);
/// Closed-loop tracking for every fitted model; an empty task uses mpc.task.
void cmd_control(const config::PipelineConfig& cfg, const std::string& task = "");
/// Collects evaluation and control summaries into one report.
void cmd_report(const config::PipelineConfig& cfg);

}  // namespace ssm::pipeline
