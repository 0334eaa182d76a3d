#include <gtest/gtest.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "tcl/dataset_io.hpp"
#include "tcl/error.hpp"

namespace tcl {
namespace {

namespace fs = std::filesystem;

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("tcl_io_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

using F64File = TempDir;
using DatasetDir = TempDir;

TEST_F(F64File, LittleEndianBytes) {
  const std::vector<double> values{1.0, -2.5};
  write_f64_file(dir_ / "v.f64", values);
  std::ifstream in(dir_ / "v.f64", std::ios::binary);
  unsigned char bytes[16];
  in.read(reinterpret_cast<char*>(bytes), 16);
  ASSERT_EQ(in.gcount(), 16);
  // 1.0 = 0x3FF0000000000000
  EXPECT_EQ(bytes[7], 0x3F);
  EXPECT_EQ(bytes[6], 0xF0);
  for (int i = 0; i < 6; ++i) EXPECT_EQ(bytes[i], 0);
  EXPECT_EQ(read_f64_file(dir_ / "v.f64"), values);
}

TEST_F(F64File, TruncatedFileIsRejected) {
  std::ofstream(dir_ / "bad.f64", std::ios::binary) << "abc";
  EXPECT_THROW(read_f64_file(dir_ / "bad.f64"), Error);
  EXPECT_THROW(read_f64_file(dir_ / "missing.f64"), Error);
}

TEST_F(F64File, MatrixIsRowMajor) {
  Eigen::MatrixXd m(2, 3);
  m << 1, 2, 3, 4, 5, 6;
  write_matrix_file(dir_ / "m.f64", m);
  const std::vector<double> flat = read_f64_file(dir_ / "m.f64");
  EXPECT_EQ(flat, (std::vector<double>{1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(read_matrix_file(dir_ / "m.f64", 2, 3), m);
  EXPECT_THROW(read_matrix_file(dir_ / "m.f64", 3, 3), Error);
}

TEST_F(DatasetDir, RoundTripIsExact) {
  DatasetConfig cfg;
  cfg.n = 3;
  cfg.segments = 4;
  cfg.seg_len = 32;
  cfg.depth = 2;
  cfg.stationary_count = 1;
  cfg.seed = 12;
  const Dataset ds = generate_dataset(cfg);
  save_dataset(dir_ / "ds", ds);
  const Dataset back = load_dataset(dir_ / "ds");
  EXPECT_EQ(back.sources.values, ds.sources.values);
  EXPECT_EQ(back.observations.values, ds.observations.values);
  EXPECT_EQ(back.observations.labels, ds.observations.labels);
  EXPECT_EQ(back.modulations.lambdas, ds.modulations.lambdas);
  ASSERT_EQ(back.mixing.depth(), 2);
  for (int k = 0; k < 2; ++k) {
    EXPECT_EQ(back.mixing.layers[static_cast<std::size_t>(k)].weight, ds.mixing.layers[static_cast<std::size_t>(k)].weight);
    EXPECT_EQ(back.mixing.layers[static_cast<std::size_t>(k)].bias, ds.mixing.layers[static_cast<std::size_t>(k)].bias);
  }
  EXPECT_EQ(back.config.stationary_count, 1);
  EXPECT_EQ(back.config.seed, 12u);

  const auto header = nlohmann::json::parse(read_text_file(dir_ / "ds" / "dataset.json"));
  EXPECT_EQ(header.at("byte_order"), "little");
  EXPECT_EQ(header.at("matrices").at("observations").at("rows"), 3);
  EXPECT_EQ(header.at("matrices").at("observations").at("cols"), 128);
}

TEST_F(DatasetDir, MissingOrCorruptHeader) {
  EXPECT_THROW(load_dataset(dir_ / "nowhere"), Error);
  fs::create_directories(dir_ / "bad");
  write_text_atomic(dir_ / "bad" / "dataset.json", "{\"format\": \"something-else\"}");
  EXPECT_THROW(load_dataset(dir_ / "bad"), Error);
}

TEST_F(DatasetDir, NamedMatrix) {
  const Eigen::MatrixXd m = Eigen::MatrixXd::Random(4, 7);
  save_named_matrix(dir_, "features", m);
  EXPECT_EQ(load_named_matrix(dir_, "features"), m);
  EXPECT_TRUE(fs::exists(dir_ / "features.json"));
}

TEST_F(DatasetDir, AtomicWriteLeavesNoTemporary) {
  write_text_atomic(dir_ / "a.txt", "hello");
  write_text_atomic(dir_ / "a.txt", "world");
  EXPECT_EQ(read_text_file(dir_ / "a.txt"), "world");
  int files = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir_)) ++files;
  EXPECT_EQ(files, 1);
}

}  // namespace
}  // namespace tcl
