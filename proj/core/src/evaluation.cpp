#include "tcl/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "tcl/datagen.hpp"
#include "tcl/error.hpp"

namespace tcl {

namespace {

Error eval_error(const std::string& msg) { return Error("evaluation", msg); }

// Kuhn-Munkres with potentials; rows <= cols, minimizes total cost.
// Returns the column matched to each row.
std::vector<int> hungarian_min(const Eigen::MatrixXd& cost) {
  const auto n = static_cast<int>(cost.rows());
  const auto m = static_cast<int>(cost.cols());
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<double> v(static_cast<std::size_t>(m) + 1, 0.0);
  std::vector<int> p(static_cast<std::size_t>(m) + 1, 0);  // p[j]: row matched to column j (1-based)
  std::vector<int> way(static_cast<std::size_t>(m) + 1, 0);

  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(m) + 1, inf);
    std::vector<char> used(static_cast<std::size_t>(m) + 1, 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<int> row_to_col(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= m; ++j) {
    if (p[static_cast<std::size_t>(j)] != 0) row_to_col[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  }
  return row_to_col;
}

std::optional<double> optional_number(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

nlohmann::ordered_json optional_to_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

}  // namespace

Eigen::MatrixXd standardize_rows(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd out = m.colwise() - m.rowwise().mean();
  const auto n = static_cast<double>(m.cols());
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double sd = std::sqrt(out.row(i).squaredNorm() / n);
    if (sd > 0.0) {
      out.row(i) /= sd;
    } else {
      out.row(i).setZero();
    }
  }
  return out;
}

Eigen::MatrixXd true_q_values(const Eigen::MatrixXd& sources, const FamilySpec& family) {
  return standardize_rows(sources.unaryExpr([&](double s) { return family.q(s); }));
}

Eigen::MatrixXd abs_correlation(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.cols() != b.cols()) throw eval_error("correlation: sample counts differ");
  if (a.cols() < 3) throw eval_error("correlation: need at least 3 samples");
  const Eigen::MatrixXd za = standardize_rows(a);
  const Eigen::MatrixXd zb = standardize_rows(b);
  return ((za * zb.transpose()) / static_cast<double>(a.cols())).cwiseAbs().cwiseMin(1.0);
}

std::vector<int> max_weight_assignment(const Eigen::MatrixXd& weights) {
  if (weights.rows() == 0 || weights.cols() == 0) return std::vector<int>(static_cast<std::size_t>(weights.rows()), -1);
  if (weights.rows() <= weights.cols()) return hungarian_min(-weights);
  const std::vector<int> col_to_row = hungarian_min(-weights.transpose());
  std::vector<int> row_to_col(static_cast<std::size_t>(weights.rows()), -1);
  for (std::size_t c = 0; c < col_to_row.size(); ++c) {
    row_to_col[static_cast<std::size_t>(col_to_row[c])] = static_cast<int>(c);
  }
  return row_to_col;
}

ComponentMatch match_components(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& estimates) {
  const Eigen::MatrixXd corr = abs_correlation(truth, estimates);
  ComponentMatch out;
  const Eigen::MatrixXd centred = estimates.colwise() - estimates.rowwise().mean();
  for (Eigen::Index j = 0; j < estimates.rows(); ++j) {
    if (centred.row(j).squaredNorm() == 0.0) out.constant_rows.push_back(static_cast<int>(j));
  }
  out.assignment = max_weight_assignment(corr);
  double sum = 0.0;
  int matched = 0;
  for (std::size_t i = 0; i < out.assignment.size(); ++i) {
    const int j = out.assignment[i];
    const double c = j >= 0 ? corr(static_cast<Eigen::Index>(i), j) : 0.0;
    out.abs_corr.push_back(c);
    if (j >= 0) {
      sum += c;
      ++matched;
    }
  }
  out.mean_abs_corr = matched > 0 ? sum / matched : 0.0;
  return out;
}

Theorem1Fit theorem1_check(const Eigen::MatrixXd& q_true, const Eigen::MatrixXd& h) {
  const Eigen::Index n = q_true.rows();
  const Eigen::Index m = h.rows();
  const Eigen::Index count = q_true.cols();
  if (h.cols() != count) throw eval_error("theorem1_check: sample counts differ");
  if (m != n) throw eval_error("theorem1_check: feature dimension must equal source dimension");
  if (count <= n + 1) throw eval_error("theorem1_check: need more than n + 1 samples");

  Eigen::MatrixXd design(count, m + 1);
  design.leftCols(m) = h.transpose();
  design.col(m).setOnes();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  qr.setThreshold(1e-12);
  if (qr.rank() < m + 1) {
    throw eval_error("theorem1_check: regressor matrix [h; 1] has rank " + std::to_string(qr.rank()) + " < " +
                     std::to_string(m + 1));
  }
  const Eigen::MatrixXd coef = qr.solve(q_true.transpose());  // (m+1) x n

  Theorem1Fit fit;
  fit.a = coef.topRows(m).transpose();
  fit.d = coef.row(m).transpose();
  const Eigen::MatrixXd residual = q_true - ((fit.a * h).colwise() + fit.d);
  const Eigen::MatrixXd centred = q_true.colwise() - q_true.rowwise().mean();
  fit.r2.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double total = centred.row(i).squaredNorm();
    fit.r2(i) = total > 0.0 ? 1.0 - residual.row(i).squaredNorm() / total : 0.0;
  }
  fit.condition = condition_number(fit.a);
  return fit;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["method"] = method;
  j["depth"] = depth;
  j["segments"] = segments;
  j["seed"] = seed;
  j["mean_abs_corr"] = mean_abs_corr;
  j["per_component_corr"] = per_component_corr;
  j["assignment"] = assignment;
  j["classification_accuracy"] = optional_to_json(classification_accuracy);
  j["chance_level"] = optional_to_json(chance_level);
  j["theorem1_r2"] = theorem1_r2;
  j["theorem1_condition"] = optional_to_json(theorem1_condition);
  j["ica_converged"] = ica_converged;
  return j.dump(2) + "\n";
}

EvalReport EvalReport::from_json(const std::string& text) {
  try {
    const nlohmann::json j = nlohmann::json::parse(text);
    EvalReport r;
    r.method = j.at("method").get<std::string>();
    r.depth = j.at("depth");
    r.segments = j.at("segments");
    r.seed = j.at("seed").get<std::uint64_t>();
    r.mean_abs_corr = j.at("mean_abs_corr");
    r.per_component_corr = j.at("per_component_corr").get<std::vector<double>>();
    r.assignment = j.at("assignment").get<std::vector<int>>();
    r.classification_accuracy = optional_number(j.at("classification_accuracy"));
    r.chance_level = optional_number(j.at("chance_level"));
    r.theorem1_r2 = j.at("theorem1_r2").get<std::vector<double>>();
    r.theorem1_condition = optional_number(j.at("theorem1_condition"));
    r.ica_converged = j.at("ica_converged");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw eval_error(std::string("malformed EvalReport JSON: ") + e.what());
  }
}

void EvalReport::validate() const {
  const auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!unit(mean_abs_corr)) throw eval_error("mean_abs_corr outside [0, 1]");
  for (double c : per_component_corr) {
    if (!unit(c)) throw eval_error("per-component correlation outside [0, 1]");
  }
  if (classification_accuracy && !unit(*classification_accuracy)) throw eval_error("accuracy outside [0, 1]");
  if (chance_level && !unit(*chance_level)) throw eval_error("chance level outside [0, 1]");
  for (double r : theorem1_r2) {
    if (!(r <= 1.0 + 1e-12)) throw eval_error("R^2 above 1");
  }
  std::vector<int> used;
  for (int a : assignment) {
    if (a < 0) continue;
    if (std::find(used.begin(), used.end(), a) != used.end()) throw eval_error("assignment is not a bijection");
    used.push_back(a);
  }
}

}  // namespace tcl
