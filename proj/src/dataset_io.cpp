#include "ssmkit/dataset_io.hpp"

#include "ssmkit/error.hpp"

#include "json.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace ssm::io {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
        if (ec) throw IoError("cannot create directory " + path.parent_path().string());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_csv(const fs::path& path, const std::vector<std::string>& header, const numkit::Matrix& rows) {
    if (static_cast<Eigen::Index>(header.size()) != rows.cols())
        throw DimensionError("write_csv: header and column count differ");
    std::string text;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (i) text += ',';
        text += header[i];
    }
    text += '\n';
    for (Eigen::Index r = 0; r < rows.rows(); ++r) {
        for (Eigen::Index c = 0; c < rows.cols(); ++c) {
            if (c) text += ',';
            text += format_double(rows(r, c));
        }
        text += '\n';
    }
    write_text(path, text);
}

CsvTable read_csv(const fs::path& path) {
    const std::string text = read_text(path);
    std::istringstream in(text);
    std::string line;
    CsvTable table;
    if (!std::getline(in, line)) throw IoError(path.string() + ": empty CSV");
    {
        std::stringstream hs(line);
        std::string field;
        while (std::getline(hs, field, ',')) table.header.push_back(field);
    }
    std::vector<std::vector<double>> rows;
    long lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<double> row;
        const char* p = line.c_str();
        while (true) {
            char* end = nullptr;
            errno = 0;
            const double v = std::strtod(p, &end);
            if (end == p || errno == ERANGE)
                throw IoError(path.string() + ":" + std::to_string(lineno) + ": malformed number");
            row.push_back(v);
            p = end;
            if (*p == ',') {
                ++p;
                continue;
            }
            if (*p == '\0' || *p == '\r') break;
            throw IoError(path.string() + ":" + std::to_string(lineno) + ": unexpected character");
        }
        if (row.size() != table.header.size())
            throw IoError(path.string() + ":" + std::to_string(lineno) + ": wrong field count");
        rows.push_back(std::move(row));
    }
    table.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(table.header.size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[r].size(); ++c) table.values(r, c) = rows[r][c];
    return table;
}

fs::path save_dataset(const systems::TrajectoryDataset& data, const fs::path& dir, const std::string& stem) {
    data.validate();
    const int q = data.observable_dim();
    const int m = data.input_dim();
    std::vector<std::string> header{"t"};
    for (int i = 0; i < q; ++i) header.push_back("y_" + std::to_string(i + 1));
    for (int i = 0; i < m; ++i) header.push_back("u_" + std::to_string(i + 1));

    json files = json::array();
    for (std::size_t i = 0; i < data.trajectories.size(); ++i) {
        const auto& tr = data.trajectories[i];
        numkit::Matrix rows(tr.Y.cols(), 1 + q + m);
        rows.col(0) = tr.times;
        rows.middleCols(1, q) = tr.Y.transpose();
        if (m > 0) rows.rightCols(m) = tr.U.transpose();
        char name[64];
        std::snprintf(name, sizeof name, "_traj_%03zu.csv", i);
        const std::string file = stem + name;
        write_csv(dir / file, header, rows);
        files.push_back(file);
    }
    json manifest = {{"format", "ssmkit-dataset-v1"},
                     {"dt", data.dt},
                     {"seed", data.seed},
                     {"system", data.system},
                     {"protocol", data.protocol},
                     {"protocol_parameters", data.protocol_parameters},
                     {"observable_dim", q},
                     {"input_dim", m},
                     {"trajectories", files}};
    const fs::path path = dir / (stem + "_manifest.json");
    write_text(path, manifest.dump(2) + "\n");
    return path;
}

systems::TrajectoryDataset load_dataset(const fs::path& manifest_path) {
    json manifest;
    try {
        manifest = json::parse(read_text(manifest_path));
    } catch (const json::exception& e) {
        throw IoError(manifest_path.string() + ": " + e.what());
    }
    systems::TrajectoryDataset ds;
    try {
        if (manifest.at("format") != "ssmkit-dataset-v1") throw IoError(manifest_path.string() + ": unknown format");
        ds.dt = manifest.at("dt").get<double>();
        ds.seed = manifest.at("seed").get<std::uint64_t>();
        ds.system = manifest.at("system").get<std::string>();
        ds.protocol = manifest.at("protocol").get<std::string>();
        ds.protocol_parameters = manifest.at("protocol_parameters").get<std::map<std::string, double>>();
        const int q = manifest.at("observable_dim").get<int>();
        const int m = manifest.at("input_dim").get<int>();
        const fs::path dir = manifest_path.parent_path();
        for (const auto& f : manifest.at("trajectories")) {
            const CsvTable t = read_csv(dir / f.get<std::string>());
            if (t.values.cols() != 1 + q + m) throw IoError(f.get<std::string>() + ": column count mismatch");
            systems::TrajectoryRecord rec;
            rec.times = t.values.col(0);
            rec.Y = t.values.middleCols(1, q).transpose();
            rec.U = m > 0 ? numkit::Matrix(t.values.rightCols(m).transpose())
                          : numkit::Matrix(0, t.values.rows());
            ds.trajectories.push_back(std::move(rec));
        }
    } catch (const json::exception& e) {
        throw IoError(manifest_path.string() + ": " + e.what());
    }
    ds.validate();
    return ds;
}

}  // namespace ssm::io
