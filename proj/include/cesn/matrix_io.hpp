#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <string>
#include <vector>

namespace cesn {

/// Binary matrix file: 8-byte magic "CESNCHN1", uint64 rows, uint64 cols
/// (little-endian), then rows * cols little-endian IEEE-754 doubles in
/// row-major order. Column names, when given, go to a sidecar
/// `<path>.columns.json` holding {"rows", "cols", "columns": [...]}.
void write_matrix(const std::filesystem::path& path, const Eigen::MatrixXd& m,
                  const std::vector<std::string>& column_names = {});
Eigen::MatrixXd read_matrix(const std::filesystem::path& path);
std::vector<std::string> read_matrix_columns(const std::filesystem::path& path);

}  // namespace cesn
