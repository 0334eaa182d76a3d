#pragma once

// Synthetic data from the nonstationary nonlinear ICA model: segment-wise
// modulated exponential-family sources pushed through an invertible
// leaky-ReLU network.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace tcl {

enum class FamilyKind { kLaplacian, kGaussian };

/// Source family with a single modulated statistic q. Log-density of a
/// component in segment tau is lambda(tau) * q(s) up to normalization.
struct FamilySpec {
  FamilyKind kind = FamilyKind::kLaplacian;

  /// q(s) = -|s| (Laplacian) or -s^2/2 (Gaussian).
  double q(double s) const noexcept;

  std::string_view name() const noexcept;
  static FamilySpec from_name(std::string_view name);
};

/// Segment-wise modulation parameters. Rows are segments, columns are
/// components. `differenced` holds lambda(tau) - lambda(first segment).
struct ModulationMatrix {
  Eigen::MatrixXd lambdas;
  Eigen::MatrixXd differenced;

  Eigen::Index segments() const noexcept { return lambdas.rows(); }
  Eigen::Index components() const noexcept { return lambdas.cols(); }

  static ModulationMatrix from_lambdas(Eigen::MatrixXd lambdas);
};

/// Column rank of `m` using singular values relative to the largest one.
Eigen::Index numerical_rank(const Eigen::MatrixXd& m, double rel_tol = 1e-10);

/// Throws when the differenced matrix is rank deficient. Only meaningful for
/// T > n; with fewer segments full column rank is impossible and the check
/// is skipped.
void check_modulation_rank(const ModulationMatrix& mods);

/// Draws lambdas uniformly from [lambda_min, 1] and resamples until the
/// differenced matrix has full column rank.
ModulationMatrix sample_modulations(int n, int segments, double lambda_min, std::uint64_t seed,
                                    int max_retries = 100);

/// Ground-truth sources, one row per component, one column per time point.
/// Column t belongs to segment t / seg_len.
struct SourceTensor {
  Eigen::MatrixXd values;
  int seg_len = 0;
  int segments = 0;
  int stationary_count = 0;

  int segment_of(Eigen::Index t) const noexcept { return static_cast<int>(t / seg_len); }
  std::vector<int> labels() const;
};

SourceTensor sample_sources(const ModulationMatrix& mods, const FamilySpec& family, int seg_len,
                            int stationary_count, std::uint64_t seed);

/// Rescales every component to zero mean and unit variance over all samples.
void standardize_components(SourceTensor& sources);

struct MixingLayer {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
};

/// f(s) = W_L(... sigma(W_2 sigma(W_1 s + b_1) + b_2) ...) + b_L, with sigma
/// the leaky ReLU. No nonlinearity follows the last layer.
struct MixingNetwork {
  std::vector<MixingLayer> layers;
  double leaky_slope = 0.2;

  int dim() const noexcept { return layers.empty() ? 0 : static_cast<int>(layers.front().weight.rows()); }
  int depth() const noexcept { return static_cast<int>(layers.size()); }
};

inline double leaky_relu(double v, double slope) noexcept { return v >= 0.0 ? v : slope * v; }
inline double leaky_relu_inverse(double v, double slope) noexcept { return v >= 0.0 ? v : v / slope; }

/// Glorot-uniform square layers with zero bias, resampled until every weight
/// matrix has 2-norm condition number <= cond_bound.
MixingNetwork build_mixing(int n, int depth, double leaky_slope, double cond_bound, std::uint64_t seed,
                           int max_retries = 1000);

double condition_number(const Eigen::MatrixXd& m);

/// Observations plus their segment labels (0-based, label 0 is the pivot class).
struct ObservationSeries {
  Eigen::MatrixXd values;
  std::vector<int> labels;
  int segments = 0;
  int seg_len = 0;
};

Eigen::MatrixXd apply_mixing(const MixingNetwork& net, const Eigen::MatrixXd& sources);
ObservationSeries apply_mixing(const MixingNetwork& net, const SourceTensor& sources);
Eigen::MatrixXd invert_mixing(const MixingNetwork& net, const Eigen::MatrixXd& observations);

struct DatasetConfig {
  int n = 5;
  int segments = 32;
  int seg_len = 512;
  int depth = 1;
  FamilySpec family;
  double lambda_min = 0.1;
  double leaky_slope = 0.2;
  double cond_bound = 1e4;
  int stationary_count = 0;
  bool standardize = true;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Dataset {
  DatasetConfig config;
  ModulationMatrix modulations;
  SourceTensor sources;
  MixingNetwork mixing;
  ObservationSeries observations;
};

/// modulations -> sources -> (standardize) -> mixing, each stage seeded from
/// its own stream derived from config.seed.
Dataset generate_dataset(const DatasetConfig& config);

}  // namespace tcl
