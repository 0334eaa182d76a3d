#pragma once

// Linear ICA: whitening, symmetric FastICA, and separation by orthogonal
// joint diagonalization of segment covariances (nonstationary variance).

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace tcl {

/// y = matrix * (x - mean); x = inverse * y + mean.
struct WhiteningTransform {
  Eigen::VectorXd mean;
  Eigen::MatrixXd matrix;
  Eigen::MatrixXd inverse;

  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd restore(const Eigen::MatrixXd& y) const;
};

struct WhitenedData {
  WhiteningTransform transform;
  Eigen::MatrixXd data;
};

/// Symmetric (ZCA) whitening from the 1/N sample covariance. Throws when an
/// eigenvalue falls below eig_floor times the largest one.
WhitenedData whiten(const Eigen::MatrixXd& data, double eig_floor = 1e-10);

/// (C)^(-1/2) C for symmetric orthogonalization of the rows of w.
Eigen::MatrixXd symmetric_decorrelation(const Eigen::MatrixXd& w);

enum class Contrast { kLogcosh, kCube };

std::string_view contrast_name(Contrast c) noexcept;
Contrast contrast_from_name(std::string_view name);

struct FastIcaConfig {
  Contrast contrast = Contrast::kLogcosh;
  double tol = 1e-4;
  int max_iter = 200;
  int restarts = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct IcaResult {
  Eigen::MatrixXd unmixing;    // orthogonal, acts on whitened data
  WhiteningTransform whitening;
  Eigen::MatrixXd components;  // unmixing * whitened data
  int iterations = 0;
  bool converged = false;
  /// FastICA: minus the summed negentropy proxy. Joint diagonalization:
  /// summed squared off-diagonals. Lower is better in both cases.
  double objective = 0.0;
  /// Per-restart (FastICA) or per-sweep (joint diagonalization) objective.
  std::vector<double> trace;
  /// FastICA: per-component negentropy proxy. Near 0 for Gaussian data.
  Eigen::VectorXd negentropy;
  /// Joint diagonalization: mean squared Frobenius deviation of segment
  /// covariances from their average. Near 0 means no usable nonstationarity.
  double covariance_spread = 0.0;

  /// Full linear unmixing acting on centred raw data.
  Eigen::MatrixXd demixing() const { return unmixing * whitening.matrix; }
};

/// Symmetric fixed-point FastICA with random orthogonal restarts. The best
/// converged restart (lowest objective, earliest on ties) is returned; when
/// none converges the best overall is returned with converged = false.
IcaResult fastica(const Eigen::MatrixXd& data, const FastIcaConfig& cfg = {});

struct JointDiagonalization {
  Eigen::MatrixXd rotation;  // V with V C_k V^T approximately diagonal
  std::vector<double> sweep_objective;  // before the first sweep, then after each
  int sweeps = 0;
  bool converged = false;
};

/// Sum over matrices of squared off-diagonal entries.
double off_diagonal_objective(std::span<const Eigen::MatrixXd> matrices);

/// Jacobi-rotation joint diagonalization of real symmetric matrices.
JointDiagonalization joint_diagonalize(std::vector<Eigen::MatrixXd> matrices, double tol = 1e-12,
                                       int max_sweeps = 100);

/// Whitens globally, then jointly diagonalizes per-segment covariances.
IcaResult nsvica(const Eigen::MatrixXd& data, std::span<const int> labels);

/// Amari performance index of a square matrix, normalized to [0, 1]; zero
/// iff P is a scaled permutation.
double amari_index(const Eigen::MatrixXd& p);

}  // namespace tcl
