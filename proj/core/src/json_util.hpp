#pragma once

#include <filesystem>
#include <string>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "tcl/dataset_io.hpp"
#include "tcl/error.hpp"

namespace tcl::detail {

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("io", "cannot parse " + path.string() + ": " + e.what());
  }
}

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace tcl::detail
