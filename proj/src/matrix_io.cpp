#include "cesn/matrix_io.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "cesn/error.hpp"

namespace cesn {

namespace {

constexpr std::array<char, 8> kMagic = {'C', 'E', 'S', 'N', 'C', 'H', 'N', '1'};

static_assert(std::endian::native == std::endian::little, "matrix files assume a little-endian host");

std::filesystem::path sidecar(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".columns.json");
}

template <class T>
void put(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw DataError("truncated matrix file " + path.string());
  return v;
}

}  // namespace

void write_matrix(const std::filesystem::path& path, const Eigen::MatrixXd& m,
                  const std::vector<std::string>& column_names) {
  if (!column_names.empty() && column_names.size() != static_cast<std::size_t>(m.cols()))
    throw ConfigError("column names do not match the matrix width");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os.write(kMagic.data(), kMagic.size());
  put<std::uint64_t>(os, static_cast<std::uint64_t>(m.rows()));
  put<std::uint64_t>(os, static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) put<double>(os, m(r, c));
  if (!os) throw DataError("failed writing " + path.string());
  if (!column_names.empty()) {
    nlohmann::json j{{"rows", m.rows()}, {"cols", m.cols()}, {"columns", column_names}};
    std::ofstream js(sidecar(path), std::ios::trunc);
    js << j.dump(2) << '\n';
  }
}

Eigen::MatrixXd read_matrix(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic)
    throw DataError(path.string() + " is not a matrix file (bad magic)");
  const auto rows = get<std::uint64_t>(is, path);
  const auto cols = get<std::uint64_t>(is, path);
  if (rows > (1ull << 32) || cols > (1ull << 32)) throw DataError("implausible matrix size in " + path.string());
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = get<double>(is, path);
  return m;
}

std::vector<std::string> read_matrix_columns(const std::filesystem::path& path) {
  std::ifstream js(sidecar(path));
  if (!js) return {};
  const auto j = nlohmann::json::parse(js);
  return j.at("columns").get<std::vector<std::string>>();
}

}  // namespace cesn
