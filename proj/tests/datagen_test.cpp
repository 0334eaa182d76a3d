#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "oracles.hpp"
#include "tcl/datagen.hpp"
#include "tcl/error.hpp"

namespace tcl {
namespace {

double variance(const Eigen::RowVectorXd& v) {
  const double mean = v.mean();
  return (v.array() - mean).square().sum() / static_cast<double>(v.size());
}

TEST(FamilySpec, ModulatedFunctions) {
  const FamilySpec lap{FamilyKind::kLaplacian};
  const FamilySpec gauss{FamilyKind::kGaussian};
  EXPECT_DOUBLE_EQ(lap.q(-3.0), -3.0);
  EXPECT_DOUBLE_EQ(lap.q(2.0), -2.0);
  EXPECT_DOUBLE_EQ(gauss.q(2.0), -2.0);
  for (double s : {0.1, 0.7, 3.0, 40.0}) {
    EXPECT_EQ(lap.q(s), lap.q(-s));
    EXPECT_EQ(gauss.q(s), gauss.q(-s));
    EXPECT_LT(lap.q(s), lap.q(0.0));
    EXPECT_LT(gauss.q(s), gauss.q(0.0));
  }
  EXPECT_EQ(lap.q(0.0), 0.0);
  EXPECT_EQ(FamilySpec::from_name("gaussian").kind, FamilyKind::kGaussian);
  EXPECT_THROW(FamilySpec::from_name("cauchy"), Error);
}

TEST(SampleModulations, RangeAndZeroFirstDifferencedRow) {
  const ModulationMatrix mods = sample_modulations(2, 4, 0.1, 7);
  ASSERT_EQ(mods.lambdas.rows(), 4);
  ASSERT_EQ(mods.lambdas.cols(), 2);
  EXPECT_GE(mods.lambdas.minCoeff(), 0.1);
  EXPECT_LE(mods.lambdas.maxCoeff(), 1.0);
  EXPECT_EQ(mods.differenced.row(0), Eigen::RowVector2d::Zero());
  EXPECT_EQ(mods.differenced.row(3), mods.lambdas.row(3) - mods.lambdas.row(0));
}

TEST(SampleModulations, EqualLambdasFailRankCheck) {
  Eigen::MatrixXd lambdas(2, 1);
  lambdas << 0.5, 0.5;
  const ModulationMatrix mods = ModulationMatrix::from_lambdas(lambdas);
  try {
    check_modulation_rank(mods);
    FAIL() << "expected rank failure";
  } catch (const Error& e) {
    EXPECT_EQ(e.stage(), "datagen");
    EXPECT_NE(std::string(e.what()).find("rank 0"), std::string::npos);
  }
}

TEST(SampleModulations, RejectsBadArguments) {
  EXPECT_THROW(sample_modulations(0, 4, 0.1, 1), Error);
  EXPECT_THROW(sample_modulations(2, 1, 0.1, 1), Error);
  EXPECT_THROW(sample_modulations(2, 4, 0.0, 1), Error);
  EXPECT_THROW(sample_modulations(2, 4, 1.0, 1), Error);
}

// Monte-Carlo over seeds: with T well above n the first draw always passes.
TEST(SampleModulations, FullRankForEverySeedAtDeskScale) {
  int passes = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    try {
      sample_modulations(20, 64, 0.1, seed, /*max_retries=*/0);
      ++passes;
    } catch (const Error&) {
    }
  }
  EXPECT_EQ(passes, 1000);
}

ModulationMatrix constant_modulation(int n, int segments, double lambda) {
  return ModulationMatrix::from_lambdas(Eigen::MatrixXd::Constant(segments, n, lambda));
}

TEST(SampleSources, LaplacianVarianceMatchesTwoOverLambdaSquared) {
  const SourceTensor s = sample_sources(constant_modulation(1, 2, 1.0), {FamilyKind::kLaplacian}, 50000, 0, 3);
  ASSERT_EQ(s.values.cols(), 100000);
  EXPECT_NEAR(variance(s.values.row(0)), 2.0, 0.05);
}

TEST(SampleSources, GaussianVarianceMatchesInversePrecision) {
  const SourceTensor s = sample_sources(constant_modulation(1, 2, 4.0), {FamilyKind::kGaussian}, 50000, 0, 3);
  EXPECT_NEAR(variance(s.values.row(0)), 0.25, 0.01);
}

TEST(SampleSources, StationaryComponentsIgnoreSegmentLambda) {
  const int n = 3;
  const int seg_len = 20000;
  Eigen::MatrixXd lambdas(4, n);
  lambdas << 0.2, 0.3, 0.4,  //
      1.0, 0.9, 0.1,         //
      0.5, 0.15, 0.8,        //
      0.9, 1.0, 0.25;
  const SourceTensor s =
      sample_sources(ModulationMatrix::from_lambdas(lambdas), {FamilyKind::kLaplacian}, seg_len, n - 1, 11);
  for (int i = 1; i < n; ++i) {
    const double expected = 2.0 / (lambdas(0, i) * lambdas(0, i));
    for (int tau = 0; tau < 4; ++tau) {
      const double v = variance(s.values.row(i).segment(tau * seg_len, seg_len));
      EXPECT_NEAR(v / expected, 1.0, 0.1) << "component " << i << " segment " << tau;
    }
  }
  // The nonstationary component really does change.
  const double v0 = variance(s.values.row(0).segment(0, seg_len));
  const double v1 = variance(s.values.row(0).segment(seg_len, seg_len));
  EXPECT_GT(v0 / v1, 10.0);
}

TEST(SampleSources, SegmentLabelsFollowSegLen) {
  const SourceTensor s = sample_sources(constant_modulation(2, 3, 0.5), {}, 4, 0, 1);
  const std::vector<int> labels = s.labels();
  const std::vector<int> expected{0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2};
  EXPECT_EQ(labels, expected);
}

TEST(SampleSources, RejectsBadArguments) {
  EXPECT_THROW(sample_sources(constant_modulation(2, 3, 0.5), {}, 0, 0, 1), Error);
  EXPECT_THROW(sample_sources(constant_modulation(2, 3, 0.5), {}, 4, 2, 1), Error);
}

// Within a segment the two halves of a component are drawn from the same
// law, so a size-0.01 test for equal variances should reject about 1% of the time.
TEST(SampleSources, SegmentConditionalStationarity) {
  const double critical = 2.5758293035489;
  int rejections = 0;
  const int trials = 2000;
  for (int seed = 0; seed < trials; ++seed) {
    const SourceTensor s =
        sample_sources(constant_modulation(1, 2, 0.3), {FamilyKind::kLaplacian}, 1000, 0, static_cast<std::uint64_t>(seed));
    const Eigen::RowVectorXd first = s.values.row(0).segment(0, 500);
    const Eigen::RowVectorXd second = s.values.row(0).segment(500, 500);
    const double z = oracle::variance_z(std::span<const double>(first.data(), 500),
                                        std::span<const double>(second.data(), 500));
    if (std::abs(z) > critical) ++rejections;
  }
  const double rate = static_cast<double>(rejections) / trials;
  EXPECT_GT(rate, 0.002);
  EXPECT_LT(rate, 0.025);
}

TEST(BuildMixing, DepthOneIsLinear) {
  const MixingNetwork net = build_mixing(4, 1, 0.2, 1e4, 5);
  ASSERT_EQ(net.depth(), 1);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd a(4, 1);
  Eigen::MatrixXd b(4, 1);
  for (int i = 0; i < 4; ++i) {
    a(i) = normal(rng);
    b(i) = normal(rng);
  }
  const Eigen::MatrixXd lhs = apply_mixing(net, Eigen::MatrixXd(2.5 * a - 1.5 * b));
  const Eigen::MatrixXd rhs = 2.5 * apply_mixing(net, a) - 1.5 * apply_mixing(net, b);
  EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((net.layers[0].weight * (2.5 * a - 1.5 * b) - lhs).cwiseAbs().maxCoeff(), 1e-12);
}

MixingNetwork identity_net(int n, int depth, double slope) {
  MixingNetwork net;
  net.leaky_slope = slope;
  for (int k = 0; k < depth; ++k) net.layers.push_back({Eigen::MatrixXd::Identity(n, n), Eigen::VectorXd::Zero(n)});
  return net;
}

TEST(BuildMixing, HiddenNonlinearityIsLeakyRelu) {
  Eigen::MatrixXd s(2, 1);
  s << -1.0, 2.0;
  const Eigen::MatrixXd x = apply_mixing(identity_net(2, 2, 0.2), s);
  EXPECT_DOUBLE_EQ(x(0), -0.2);
  EXPECT_DOUBLE_EQ(x(1), 2.0);
}

TEST(BuildMixing, WeightsRespectConditionBoundAndGlorotRange) {
  const MixingNetwork net = build_mixing(6, 3, 0.2, 50.0, 9);
  for (const auto& layer : net.layers) {
    EXPECT_LE(condition_number(layer.weight), 50.0);
    EXPECT_LE(layer.weight.cwiseAbs().maxCoeff(), std::sqrt(6.0 / 12.0));
    EXPECT_EQ(layer.bias, Eigen::VectorXd::Zero(6));
  }
  EXPECT_THROW(build_mixing(6, 1, 0.2, 1.0, 9, 3), Error);
  EXPECT_THROW(build_mixing(6, 0, 0.2, 1e4, 9), Error);
  EXPECT_THROW(build_mixing(6, 1, 1.0, 1e4, 9), Error);
}

TEST(Mixing, IdentityNetworkIsIdentityBothWays) {
  const MixingNetwork net = identity_net(3, 1, 0.2);
  const Eigen::MatrixXd s = Eigen::MatrixXd::Random(3, 10);
  EXPECT_EQ(apply_mixing(net, s), s);
  EXPECT_EQ(invert_mixing(net, s), s);
}

TEST(Mixing, LeakyReluInverse) {
  EXPECT_DOUBLE_EQ(leaky_relu_inverse(-0.2, 0.2), -1.0);
  EXPECT_DOUBLE_EQ(leaky_relu_inverse(3.0, 0.2), 3.0);
  EXPECT_DOUBLE_EQ(leaky_relu_inverse(leaky_relu(-7.5, 0.3), 0.3), -7.5);
}

// Observations are stored in double precision, so the recovered sources can
// only be as accurate as the conditioning of the whole map allows.
double conditioning_bound(const MixingNetwork& net) {
  double kappa = 1.0;
  for (const auto& layer : net.layers) kappa *= condition_number(layer.weight);
  return kappa * std::pow(1.0 / net.leaky_slope, net.depth() - 1);
}

TEST(Mixing, RoundTripOverManyDeepNetworks) {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> normal;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const int depth = 1 + static_cast<int>(seed % 5);
    const MixingNetwork net = build_mixing(20, depth, 0.2, 1e4, seed);
    Eigen::MatrixXd s(20, 50);
    for (Eigen::Index i = 0; i < s.size(); ++i) s(i) = normal(rng);
    const Eigen::MatrixXd x = apply_mixing(net, s);
    const double err = (invert_mixing(net, x) - s).cwiseAbs().maxCoeff();
    const double floor = std::numeric_limits<double>::epsilon() * conditioning_bound(net) * x.cwiseAbs().maxCoeff();
    EXPECT_LT(err, floor) << "seed " << seed;
    if (depth <= 3) EXPECT_LT(err, 1e-8) << "seed " << seed;
  }
}

TEST(Mixing, ShallowRoundTripAtDeskScale) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> normal;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const MixingNetwork net = build_mixing(5, 1 + static_cast<int>(seed % 5), 0.2, 1e4, seed);
    Eigen::MatrixXd s(5, 200);
    for (Eigen::Index i = 0; i < s.size(); ++i) s(i) = normal(rng);
    EXPECT_LT((invert_mixing(net, apply_mixing(net, s)) - s).cwiseAbs().maxCoeff(), 1e-8) << "seed " << seed;
  }
}

TEST(Mixing, DimensionMismatchIsReported) {
  const MixingNetwork net = build_mixing(3, 2, 0.2, 1e4, 1);
  EXPECT_THROW(apply_mixing(net, Eigen::MatrixXd::Zero(4, 2)), Error);
  EXPECT_THROW(invert_mixing(net, Eigen::MatrixXd::Zero(2, 2)), Error);
}

TEST(Mixing, SingularLayerIsReported) {
  MixingNetwork net = identity_net(2, 1, 0.2);
  net.layers[0].weight(1, 1) = 0.0;
  EXPECT_THROW(invert_mixing(net, Eigen::MatrixXd::Zero(2, 2)), Error);
}

TEST(Mixing, ObservationsTrackSourceNonstationarity) {
  DatasetConfig cfg;
  cfg.n = 4;
  cfg.segments = 6;
  cfg.seg_len = 2000;
  cfg.depth = 3;
  cfg.seed = 17;
  const Dataset ds = generate_dataset(cfg);
  ASSERT_EQ(ds.observations.labels.size(), 12000u);
  std::vector<double> traces;
  for (int tau = 0; tau < cfg.segments; ++tau) {
    const Eigen::MatrixXd seg = ds.observations.values.middleCols(tau * cfg.seg_len, cfg.seg_len);
    const Eigen::MatrixXd centred = seg.colwise() - seg.rowwise().mean();
    traces.push_back((centred * centred.transpose()).trace() / cfg.seg_len);
  }
  const auto [lo, hi] = std::minmax_element(traces.begin(), traces.end());
  EXPECT_GT(*hi / *lo, 1.5);
}

TEST(GenerateDataset, SeedDeterminism) {
  DatasetConfig cfg;
  cfg.n = 3;
  cfg.segments = 5;
  cfg.seg_len = 64;
  cfg.depth = 2;
  cfg.seed = 99;
  const Dataset a = generate_dataset(cfg);
  const Dataset b = generate_dataset(cfg);
  EXPECT_EQ(a.sources.values, b.sources.values);
  EXPECT_EQ(a.observations.values, b.observations.values);
  EXPECT_EQ(a.modulations.lambdas, b.modulations.lambdas);
  cfg.seed = 100;
  EXPECT_NE(generate_dataset(cfg).sources.values, a.sources.values);
}

TEST(GenerateDataset, StandardizedSourcesAndInvertibleObservations) {
  DatasetConfig cfg;
  cfg.n = 4;
  cfg.segments = 8;
  cfg.seg_len = 128;
  cfg.depth = 3;
  cfg.seed = 4;
  const Dataset ds = generate_dataset(cfg);
  for (Eigen::Index i = 0; i < 4; ++i) {
    EXPECT_NEAR(ds.sources.values.row(i).mean(), 0.0, 1e-12);
    EXPECT_NEAR(variance(ds.sources.values.row(i)), 1.0, 1e-12);
  }
  EXPECT_LT((invert_mixing(ds.mixing, ds.observations.values) - ds.sources.values).cwiseAbs().maxCoeff(), 1e-8);
}

}  // namespace
}  // namespace tcl
