#include "tcl/dataset_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "json_util.hpp"
#include "tcl/error.hpp"

namespace tcl {

namespace fs = std::filesystem;

namespace {

Error io_error(const std::string& msg) { return Error("io", msg); }

std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0x00000000000000FFULL) << 56) | ((v & 0x000000000000FF00ULL) << 40) |
        ((v & 0x0000000000FF0000ULL) << 24) | ((v & 0x00000000FF000000ULL) << 8) |
        ((v & 0x000000FF00000000ULL) >> 8) | ((v & 0x0000FF0000000000ULL) >> 24) |
        ((v & 0x00FF000000000000ULL) >> 40) | ((v & 0xFF00000000000000ULL) >> 56);
  }
  return v;
}

fs::path temp_sibling(const fs::path& path) { return path.string() + ".tmp"; }

void commit(const fs::path& tmp, const fs::path& path) {
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw io_error("cannot rename " + tmp.string() + " -> " + path.string() + ": " + ec.message());
}

}  // namespace

void write_f64_file(const fs::path& path, std::span<const double> values) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = temp_sibling(path);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open " + tmp.string() + " for writing");
    std::vector<char> buffer(values.size() * sizeof(std::uint64_t));
    for (std::size_t i = 0; i < values.size(); ++i) {
      const std::uint64_t bits = to_little_endian(std::bit_cast<std::uint64_t>(values[i]));
      std::memcpy(buffer.data() + i * sizeof(bits), &bits, sizeof(bits));
    }
    out.write(buffer.data(), static_cast<std::streamsize>(buffer.size()));
    if (!out) throw io_error("write failed for " + tmp.string());
  }
  commit(tmp, path);
}

std::vector<double> read_f64_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path.string());
  std::vector<char> buffer((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buffer.size() % sizeof(std::uint64_t) != 0) {
    throw io_error(path.string() + " size " + std::to_string(buffer.size()) + " is not a multiple of 8");
  }
  std::vector<double> values(buffer.size() / sizeof(std::uint64_t));
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, buffer.data() + i * sizeof(bits), sizeof(bits));
    values[i] = std::bit_cast<double>(to_little_endian(bits));
  }
  return values;
}

void write_matrix_file(const fs::path& path, const Eigen::MatrixXd& m) {
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const RowMajor rm = m;
  write_f64_file(path, std::span<const double>(rm.data(), static_cast<std::size_t>(rm.size())));
}

Eigen::MatrixXd read_matrix_file(const fs::path& path, Eigen::Index rows, Eigen::Index cols) {
  const std::vector<double> values = read_f64_file(path);
  if (static_cast<Eigen::Index>(values.size()) != rows * cols) {
    std::ostringstream os;
    os << path.string() << " holds " << values.size() << " values, expected " << rows << "x" << cols;
    throw io_error(os.str());
  }
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  return Eigen::Map<const RowMajor>(values.data(), rows, cols);
}

void write_text_atomic(const fs::path& path, std::string_view text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = temp_sibling(path);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open " + tmp.string() + " for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw io_error("write failed for " + tmp.string());
  }
  commit(tmp, path);
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void save_dataset(const fs::path& dir, const Dataset& ds) {
  fs::create_directories(dir);
  const auto& c = ds.config;
  const Eigen::Index n = ds.sources.values.rows();
  const Eigen::Index samples = ds.sources.values.cols();

  Eigen::MatrixXd mixing(static_cast<Eigen::Index>(ds.mixing.depth()) * (n + 1), n);
  for (int k = 0; k < ds.mixing.depth(); ++k) {
    const auto& layer = ds.mixing.layers[static_cast<std::size_t>(k)];
    mixing.block(k * (n + 1), 0, n, n) = layer.weight;
    mixing.row(k * (n + 1) + n) = layer.bias.transpose();
  }

  write_matrix_file(dir / "sources.f64", ds.sources.values);
  write_matrix_file(dir / "observations.f64", ds.observations.values);
  write_matrix_file(dir / "lambdas.f64", ds.modulations.lambdas);
  write_matrix_file(dir / "mixing.f64", mixing);

  nlohmann::json h;
  h["format"] = "tcl-dataset";
  h["version"] = 1;
  h["n"] = c.n;
  h["segments"] = c.segments;
  h["seg_len"] = c.seg_len;
  h["depth"] = c.depth;
  h["family"] = std::string(c.family.name());
  h["lambda_min"] = c.lambda_min;
  h["leaky_slope"] = c.leaky_slope;
  h["cond_bound"] = c.cond_bound;
  h["stationary_count"] = c.stationary_count;
  h["standardize"] = c.standardize;
  h["seeds"] = {{"base", c.seed}};
  h["byte_order"] = "little";
  h["dtype"] = "float64";
  h["layout"] = "row-major";
  h["matrices"] = {
      {"sources", {{"file", "sources.f64"}, {"rows", n}, {"cols", samples}}},
      {"observations", {{"file", "observations.f64"}, {"rows", n}, {"cols", samples}}},
      {"lambdas", {{"file", "lambdas.f64"}, {"rows", ds.modulations.lambdas.rows()}, {"cols", n}}},
      {"mixing", {{"file", "mixing.f64"}, {"rows", mixing.rows()}, {"cols", n}}},
  };
  write_text_atomic(dir / "dataset.json", h.dump(2) + "\n");
}

Dataset load_dataset(const fs::path& dir) {
  const nlohmann::json h = detail::read_json_file(dir / "dataset.json");
  try {
    if (h.at("format") != "tcl-dataset") throw io_error(dir.string() + " is not a tcl dataset");
    Dataset ds;
    auto& c = ds.config;
    c.n = h.at("n");
    c.segments = h.at("segments");
    c.seg_len = h.at("seg_len");
    c.depth = h.at("depth");
    c.family = FamilySpec::from_name(h.at("family").get<std::string>());
    c.lambda_min = h.at("lambda_min");
    c.leaky_slope = h.at("leaky_slope");
    c.cond_bound = h.at("cond_bound");
    c.stationary_count = h.at("stationary_count");
    c.standardize = h.at("standardize");
    c.seed = h.at("seeds").at("base").get<std::uint64_t>();

    const auto read = [&](const char* key) {
      const auto& m = h.at("matrices").at(key);
      return read_matrix_file(dir / m.at("file").get<std::string>(), m.at("rows").get<Eigen::Index>(),
                              m.at("cols").get<Eigen::Index>());
    };
    ds.modulations = ModulationMatrix::from_lambdas(read("lambdas"));
    ds.sources.values = read("sources");
    ds.sources.seg_len = c.seg_len;
    ds.sources.segments = c.segments;
    ds.sources.stationary_count = c.stationary_count;

    const Eigen::MatrixXd mixing = read("mixing");
    const Eigen::Index n = c.n;
    ds.mixing.leaky_slope = c.leaky_slope;
    for (int k = 0; k < c.depth; ++k) {
      ds.mixing.layers.push_back(
          {mixing.block(k * (n + 1), 0, n, n), mixing.row(k * (n + 1) + n).transpose()});
    }
    ds.observations.values = read("observations");
    ds.observations.labels = ds.sources.labels();
    ds.observations.segments = c.segments;
    ds.observations.seg_len = c.seg_len;
    return ds;
  } catch (const nlohmann::json::exception& e) {
    throw io_error("malformed dataset header in " + dir.string() + ": " + e.what());
  }
}

void save_named_matrix(const fs::path& dir, std::string_view stem, const Eigen::MatrixXd& m) {
  const std::string name(stem);
  write_matrix_file(dir / (name + ".f64"), m);
  nlohmann::json h = {{"file", name + ".f64"}, {"rows", m.rows()}, {"cols", m.cols()},
                      {"dtype", "float64"},    {"byte_order", "little"}, {"layout", "row-major"}};
  write_text_atomic(dir / (name + ".json"), h.dump(2) + "\n");
}

Eigen::MatrixXd load_named_matrix(const fs::path& dir, std::string_view stem) {
  const std::string name(stem);
  const nlohmann::json h = detail::read_json_file(dir / (name + ".json"));
  try {
    return read_matrix_file(dir / h.at("file").get<std::string>(), h.at("rows").get<Eigen::Index>(),
                            h.at("cols").get<Eigen::Index>());
  } catch (const nlohmann::json::exception& e) {
    throw io_error("malformed matrix header " + name + ".json: " + e.what());
  }
}

}  // namespace tcl
