#include "ssmkit/model_io.hpp"

#include "ssmkit/dataset_io.hpp"
#include "ssmkit/error.hpp"

namespace ssm::io {

using nlohmann::json;
using numkit::Matrix;
using numkit::Vector;

json matrix_to_json(const Matrix& M) {
    return {{"rows", M.rows()}, {"cols", M.cols()}, {"data", std::vector<double>(M.data(), M.data() + M.size())}};
}

Matrix matrix_from_json(const json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(data.size()) != rows * cols)
        throw IoError("matrix: data length does not match rows*cols");
    return Eigen::Map<const Matrix>(data.data(), rows, cols);
}

json vector_to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector vector_from_json(const json& j) {
    const auto data = j.get<std::vector<double>>();
    return Eigen::Map<const Vector>(data.data(), static_cast<Eigen::Index>(data.size()));
}

json model_to_json(const learning::SSMModel& m) {
    return {{"format", "ssmkit-model-v1"},
            {"monomial_ordering", std::string(numkit::kMonomialOrdering)},
            {"mode", m.mode},
            {"n", m.n},
            {"p", m.p},
            {"m", m.m},
            {"n_r", m.n_r},
            {"n_w", m.n_w},
            {"delays", m.delays},
            {"delay_lag", m.delay_lag},
            {"base_dim", m.base_dim},
            {"dt", m.dt},
            {"V_E", matrix_to_json(m.V_E)},
            {"V_opt", matrix_to_json(m.V_opt)},
            {"W_nl", matrix_to_json(m.W_nl)},
            {"R", matrix_to_json(m.R)},
            {"B_r", matrix_to_json(m.B_r)},
            {"y_eq", vector_to_json(m.y_eq)},
            {"y_eq_base", vector_to_json(m.y_eq_base)}};
}

learning::SSMModel model_from_json(const json& j) {
    learning::SSMModel m;
    try {
        if (j.at("format") != "ssmkit-model-v1") throw IoError("model: unknown format");
        if (j.at("monomial_ordering") != std::string(numkit::kMonomialOrdering))
            throw IoError("model: incompatible monomial ordering " + j.at("monomial_ordering").dump());
        m.mode = j.at("mode");
        m.n = j.at("n");
        m.p = j.at("p");
        m.m = j.at("m");
        m.n_r = j.at("n_r");
        m.n_w = j.at("n_w");
        m.delays = j.at("delays");
        m.delay_lag = j.at("delay_lag");
        m.base_dim = j.at("base_dim");
        m.dt = j.at("dt");
        m.V_E = matrix_from_json(j.at("V_E"));
        m.V_opt = matrix_from_json(j.at("V_opt"));
        m.W_nl = matrix_from_json(j.at("W_nl"));
        m.R = matrix_from_json(j.at("R"));
        m.B_r = matrix_from_json(j.at("B_r"));
        m.y_eq = vector_from_json(j.at("y_eq"));
        m.y_eq_base = vector_from_json(j.at("y_eq_base"));
    } catch (const json::exception& e) {
        throw IoError(std::string("model: ") + e.what());
    }
    try {
        m.validate();
    } catch (const DimensionError& e) {
        throw IoError(e.what());
    }
    return m;
}

void save_model(const learning::SSMModel& model, const std::filesystem::path& path) {
    write_text(path, model_to_json(model).dump(2) + "\n");
}

learning::SSMModel load_model(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw IoError(path.string() + ": " + e.what());
    }
    return model_from_json(j);
}

}  // namespace ssm::io
