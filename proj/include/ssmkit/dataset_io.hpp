#pragma once

#include "ssmkit/systems.hpp"

#include <filesystem>
#include <string>

namespace ssm::io {

/// "%.17g": every double written this way parses back to the same bits.
std::string format_double(double v);

/// Writes `<dir>/<stem>_manifest.json` and one `<stem>_traj_NNN.csv` per trajectory
/// (columns t, y_1..y_q[, u_1..u_m]). Returns the manifest path.
std::filesystem::path save_dataset(const systems::TrajectoryDataset& data,
                                   const std::filesystem::path& dir, const std::string& stem);

systems::TrajectoryDataset load_dataset(const std::filesystem::path& manifest);

/// Minimal CSV reader for numeric tables with a single header row.
struct CsvTable {
    std::vector<std::string> header;
    numkit::Matrix values;  // rows = records, cols = header fields
};
CsvTable read_csv(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const numkit::Matrix& rows);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace ssm::io
