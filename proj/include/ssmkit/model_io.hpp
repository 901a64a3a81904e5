#pragma once

#include "ssmkit/learning.hpp"

#include "json.hpp"

#include <filesystem>

namespace ssm::io {

/// Matrices are stored as {rows, cols, data} with data in column-major order.
nlohmann::json matrix_to_json(const numkit::Matrix& M);
numkit::Matrix matrix_from_json(const nlohmann::json& j);
nlohmann::json vector_to_json(const numkit::Vector& v);
numkit::Vector vector_from_json(const nlohmann::json& j);

nlohmann::json model_to_json(const learning::SSMModel& model);
learning::SSMModel model_from_json(const nlohmann::json& j);

void save_model(const learning::SSMModel& model, const std::filesystem::path& path);
learning::SSMModel load_model(const std::filesystem::path& path);

}  // namespace ssm::io
