#pragma once

// On-disk formats. Every matrix is a flat little-endian float64 file in
// row-major order; its shape lives in the JSON header next to it, so
// `numpy.fromfile(path, "<f8").reshape(rows, cols)` reads it back.

#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "tcl/datagen.hpp"

namespace tcl {

void write_f64_file(const std::filesystem::path& path, std::span<const double> values);
std::vector<double> read_f64_file(const std::filesystem::path& path);

void write_matrix_file(const std::filesystem::path& path, const Eigen::MatrixXd& m);
Eigen::MatrixXd read_matrix_file(const std::filesystem::path& path, Eigen::Index rows, Eigen::Index cols);

/// Writes to a sibling temporary file, then renames it into place.
void write_text_atomic(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

/// Directory layout:
///   dataset.json      header (n, segments, seg_len, depth, family, seeds, ...)
///   sources.f64       n x N
///   observations.f64  n x N
///   lambdas.f64       T x n
///   mixing.f64        depth stacked (n x n weight, then n bias) blocks
void save_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& dir);

/// Matrix plus JSON sidecar (`<stem>.json`, `<stem>.f64`), used for
/// features and recovered components.
void save_named_matrix(const std::filesystem::path& dir, std::string_view stem, const Eigen::MatrixXd& m);
Eigen::MatrixXd load_named_matrix(const std::filesystem::path& dir, std::string_view stem);

}  // namespace tcl
