#pragma once

// Ground-truth comparison: q(s) targets, exact component matching by
// absolute correlation, and the affine regression of q(s) on features.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tcl/datagen.hpp"

namespace tcl {

/// Row-wise q(s), standardized to zero mean and unit variance.
Eigen::MatrixXd true_q_values(const Eigen::MatrixXd& sources, const FamilySpec& family);

/// Rows scaled to zero mean and unit (1/N) variance; constant rows become 0.
Eigen::MatrixXd standardize_rows(const Eigen::MatrixXd& m);

/// |Pearson correlation| between every row of a and every row of b. Rows
/// with zero variance get correlation 0.
Eigen::MatrixXd abs_correlation(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// Maximum-weight assignment on a rectangular weight matrix (Hungarian
/// method). Returns, for each row, the matched column or -1 when there are
/// more rows than columns.
std::vector<int> max_weight_assignment(const Eigen::MatrixXd& weights);

struct ComponentMatch {
  std::vector<int> assignment;       // truth row i -> estimate row (or -1)
  std::vector<double> abs_corr;      // matched |corr| per truth row
  double mean_abs_corr = 0.0;        // over matched rows
  std::vector<int> constant_rows;    // estimate rows with zero variance
};

ComponentMatch match_components(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& estimates);

struct Theorem1Fit {
  Eigen::VectorXd r2;         // per q component
  Eigen::MatrixXd a;          // q ~ a * h + d
  Eigen::VectorXd d;
  double condition = 0.0;     // 2-norm condition number of a
};

/// Least squares of each q row on [h; 1].
Theorem1Fit theorem1_check(const Eigen::MatrixXd& q_true, const Eigen::MatrixXd& h);

struct EvalReport {
  std::string method;
  int depth = 0;
  int segments = 0;
  std::uint64_t seed = 0;
  double mean_abs_corr = 0.0;
  std::vector<double> per_component_corr;
  std::vector<int> assignment;
  /// Absent (null in JSON) for methods without a classifier.
  std::optional<double> classification_accuracy;
  std::optional<double> chance_level;
  std::vector<double> theorem1_r2;
  std::optional<double> theorem1_condition;
  bool ica_converged = true;

  /// Deterministic JSON text: fixed key order, shortest round-trip doubles.
  std::string to_json() const;
  static EvalReport from_json(const std::string& text);

  /// Throws when a field leaves its declared range.
  void validate() const;
};

}  // namespace tcl
