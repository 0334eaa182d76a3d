#include "tcl/linear_ica.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <sstream>

#include "tcl/error.hpp"
#include "tcl/seed.hpp"

namespace tcl {

namespace {

Error ica_error(const std::string& msg) { return Error("ica", msg); }

// E[G(nu)] for a standard normal nu.
constexpr double kGaussLogcosh = 0.374567207491438;
constexpr double kGaussCube = 0.75;

struct ContrastValues {
  Eigen::MatrixXd g;
  Eigen::VectorXd mean_gprime;
};

ContrastValues evaluate_contrast(Contrast c, const Eigen::MatrixXd& y) {
  ContrastValues out;
  const auto n = static_cast<double>(y.cols());
  if (c == Contrast::kLogcosh) {
    out.g = y.array().tanh().matrix();
    out.mean_gprime = (1.0 - out.g.array().square()).matrix().rowwise().sum() / n;
  } else {
    out.g = y.array().cube().matrix();
    out.mean_gprime = (3.0 * y.array().square()).matrix().rowwise().sum() / n;
  }
  return out;
}

Eigen::VectorXd negentropy_proxy(Contrast c, const Eigen::MatrixXd& y) {
  const auto n = static_cast<double>(y.cols());
  Eigen::VectorXd mean_g(y.rows());
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    if (c == Contrast::kLogcosh) {
      double sum = 0.0;
      for (Eigen::Index j = 0; j < y.cols(); ++j) {
        // log cosh(u) = |u| + log1p(exp(-2|u|)) - log 2, stable for large |u|.
        const double a = std::abs(y(i, j));
        sum += a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0);
      }
      mean_g(i) = sum / n - kGaussLogcosh;
    } else {
      mean_g(i) = (y.row(i).array().pow(4) / 4.0).sum() / n - kGaussCube;
    }
  }
  return mean_g.array().square().matrix();
}

Eigen::MatrixXd random_orthogonal(Eigen::Index m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd w(m, m);
  for (Eigen::Index c = 0; c < m; ++c) {
    for (Eigen::Index r = 0; r < m; ++r) w(r, c) = normal(rng);
  }
  return symmetric_decorrelation(w);
}

struct RestartOutcome {
  Eigen::MatrixXd w;
  int iterations = 0;
  bool converged = false;
  double objective = 0.0;
};

RestartOutcome run_fastica(const Eigen::MatrixXd& z, Eigen::MatrixXd w, const FastIcaConfig& cfg) {
  RestartOutcome out;
  const auto n = static_cast<double>(z.cols());
  for (int it = 1; it <= cfg.max_iter; ++it) {
    const Eigen::MatrixXd y = w * z;
    const ContrastValues cv = evaluate_contrast(cfg.contrast, y);
    Eigen::MatrixXd next = (cv.g * z.transpose()) / n - cv.mean_gprime.asDiagonal() * w;
    next = symmetric_decorrelation(next);
    const double min_dot = (next * w.transpose()).diagonal().cwiseAbs().minCoeff();
    w = std::move(next);
    out.iterations = it;
    if (min_dot > 1.0 - cfg.tol) {
      out.converged = true;
      break;
    }
  }
  out.objective = -negentropy_proxy(cfg.contrast, w * z).sum();
  out.w = std::move(w);
  return out;
}

}  // namespace

Eigen::MatrixXd WhiteningTransform::apply(const Eigen::MatrixXd& x) const { return matrix * (x.colwise() - mean); }

Eigen::MatrixXd WhiteningTransform::restore(const Eigen::MatrixXd& y) const {
  return (inverse * y).colwise() + mean;
}

WhitenedData whiten(const Eigen::MatrixXd& data, double eig_floor) {
  const Eigen::Index m = data.rows();
  const Eigen::Index n = data.cols();
  if (m < 1) throw ica_error("whiten: empty data");
  if (n <= m) {
    throw ica_error("whiten: need more samples (" + std::to_string(n) + ") than dimensions (" + std::to_string(m) +
                    ")");
  }
  WhitenedData out;
  out.transform.mean = data.rowwise().mean();
  const Eigen::MatrixXd centred = data.colwise() - out.transform.mean;
  const Eigen::MatrixXd cov = (centred * centred.transpose()) / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::VectorXd& values = eig.eigenvalues();
  const double largest = values.maxCoeff();
  std::vector<Eigen::Index> deficient;
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (!(values(i) > eig_floor * largest) || !(values(i) > 0.0)) deficient.push_back(i);
  }
  if (!deficient.empty()) {
    std::ostringstream os;
    os << "whiten: rank-deficient covariance, eigenvalue(s)";
    for (Eigen::Index i : deficient) os << " [" << i << "]=" << values(i);
    os << " below floor " << eig_floor << " x " << largest;
    throw ica_error(os.str());
  }
  const Eigen::MatrixXd& vecs = eig.eigenvectors();
  out.transform.matrix = vecs * values.cwiseSqrt().cwiseInverse().asDiagonal() * vecs.transpose();
  out.transform.inverse = vecs * values.cwiseSqrt().asDiagonal() * vecs.transpose();
  out.data = out.transform.matrix * centred;
  return out;
}

Eigen::MatrixXd symmetric_decorrelation(const Eigen::MatrixXd& w) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(w * w.transpose());
  const Eigen::MatrixXd& vecs = eig.eigenvectors();
  return vecs * eig.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() * vecs.transpose() * w;
}

std::string_view contrast_name(Contrast c) noexcept { return c == Contrast::kLogcosh ? "logcosh" : "cube"; }

Contrast contrast_from_name(std::string_view name) {
  if (name == "logcosh") return Contrast::kLogcosh;
  if (name == "cube") return Contrast::kCube;
  throw ica_error("unknown contrast '" + std::string(name) + "'");
}

void FastIcaConfig::validate() const {
  if (!(tol > 0.0 && tol < 1.0)) throw ica_error("tol must lie in (0, 1)");
  if (max_iter < 1) throw ica_error("max_iter must be >= 1");
  if (restarts < 1) throw ica_error("restarts must be >= 1");
}

IcaResult fastica(const Eigen::MatrixXd& data, const FastIcaConfig& cfg) {
  cfg.validate();
  WhitenedData white = whiten(data);
  const Eigen::MatrixXd& z = white.data;

  RestartOutcome best;
  bool have_best = false;
  IcaResult result;
  for (int r = 0; r < cfg.restarts; ++r) {
    RestartOutcome outcome = run_fastica(z, random_orthogonal(z.rows(), derive_seed(cfg.seed, r)), cfg);
    result.trace.push_back(outcome.objective);
    const bool better = !have_best || (outcome.converged && !best.converged) ||
                        (outcome.converged == best.converged && outcome.objective < best.objective);
    if (better) {
      best = std::move(outcome);
      have_best = true;
    }
  }
  result.unmixing = std::move(best.w);
  result.components = result.unmixing * z;
  result.iterations = best.iterations;
  result.converged = best.converged;
  result.objective = best.objective;
  result.negentropy = negentropy_proxy(cfg.contrast, result.components);
  result.whitening = std::move(white.transform);
  return result;
}

double off_diagonal_objective(std::span<const Eigen::MatrixXd> matrices) {
  double sum = 0.0;
  for (const auto& c : matrices) sum += c.squaredNorm() - c.diagonal().squaredNorm();
  return sum;
}

JointDiagonalization joint_diagonalize(std::vector<Eigen::MatrixXd> matrices, double tol, int max_sweeps) {
  if (matrices.empty()) throw ica_error("joint_diagonalize: no matrices");
  const Eigen::Index m = matrices.front().rows();
  for (const auto& c : matrices) {
    if (c.rows() != m || c.cols() != m) throw ica_error("joint_diagonalize: matrices must share a square shape");
  }
  JointDiagonalization out;
  // Columns of v are the joint eigenvectors; the rotation returned is v^T.
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(m, m);
  out.sweep_objective.push_back(off_diagonal_objective(matrices));

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (Eigen::Index p = 0; p + 1 < m; ++p) {
      for (Eigen::Index q = p + 1; q < m; ++q) {
        Eigen::Matrix2d gg = Eigen::Matrix2d::Zero();
        for (const auto& c : matrices) {
          const Eigen::Vector2d g(c(p, p) - c(q, q), c(p, q) + c(q, p));
          gg += g * g.transpose();
        }
        const double ton = gg(0, 0) - gg(1, 1);
        const double toff = gg(0, 1) + gg(1, 0);
        const double theta = 0.5 * std::atan2(toff, ton + std::sqrt(ton * ton + toff * toff));
        const double cs = std::cos(theta);
        const double sn = std::sin(theta);
        if (std::abs(sn) <= tol) continue;
        rotated = true;

        for (Eigen::Index r = 0; r < m; ++r) {
          const double vp = v(r, p);
          const double vq = v(r, q);
          v(r, p) = cs * vp + sn * vq;
          v(r, q) = -sn * vp + cs * vq;
        }
        for (auto& c : matrices) {
          for (Eigen::Index k = 0; k < m; ++k) {
            const double cp = c(p, k);
            const double cq = c(q, k);
            c(p, k) = cs * cp + sn * cq;
            c(q, k) = -sn * cp + cs * cq;
          }
          for (Eigen::Index k = 0; k < m; ++k) {
            const double cp = c(k, p);
            const double cq = c(k, q);
            c(k, p) = cs * cp + sn * cq;
            c(k, q) = -sn * cp + cs * cq;
          }
        }
      }
    }
    out.sweeps = sweep + 1;
    out.sweep_objective.push_back(off_diagonal_objective(matrices));
    if (!rotated) {
      out.converged = true;
      break;
    }
  }
  out.rotation = v.transpose();
  return out;
}

IcaResult nsvica(const Eigen::MatrixXd& data, std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != data.cols()) throw ica_error("nsvica: label count != sample count");
  const Eigen::Index m = data.rows();
  WhitenedData white = whiten(data);

  std::map<int, std::vector<Eigen::Index>> members;
  for (std::size_t t = 0; t < labels.size(); ++t) members[labels[t]].push_back(static_cast<Eigen::Index>(t));
  if (members.size() < 2) throw ica_error("nsvica: need at least 2 segments");

  std::vector<Eigen::MatrixXd> covs;
  covs.reserve(members.size());
  for (const auto& [label, idx] : members) {
    if (static_cast<Eigen::Index>(idx.size()) <= m) {
      throw ica_error("nsvica: segment " + std::to_string(label) + " has " + std::to_string(idx.size()) +
                      " samples, need more than " + std::to_string(m));
    }
    Eigen::MatrixXd seg(m, static_cast<Eigen::Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) seg.col(static_cast<Eigen::Index>(j)) = white.data.col(idx[j]);
    const Eigen::MatrixXd centred = seg.colwise() - seg.rowwise().mean();
    Eigen::MatrixXd cov = (centred * centred.transpose()) / static_cast<double>(idx.size());
    if (!cov.allFinite()) throw ica_error("nsvica: degenerate covariance in segment " + std::to_string(label));
    covs.push_back(std::move(cov));
  }

  Eigen::MatrixXd mean_cov = Eigen::MatrixXd::Zero(m, m);
  for (const auto& c : covs) mean_cov += c;
  mean_cov /= static_cast<double>(covs.size());
  double spread = 0.0;
  for (const auto& c : covs) spread += (c - mean_cov).squaredNorm();
  spread /= static_cast<double>(covs.size());

  JointDiagonalization jd = joint_diagonalize(std::move(covs));
  IcaResult result;
  result.unmixing = std::move(jd.rotation);
  result.components = result.unmixing * white.data;
  result.whitening = std::move(white.transform);
  result.iterations = jd.sweeps;
  result.converged = jd.converged;
  result.objective = jd.sweep_objective.back();
  result.trace = std::move(jd.sweep_objective);
  result.covariance_spread = spread;
  return result;
}

double amari_index(const Eigen::MatrixXd& p) {
  if (p.rows() != p.cols() || p.rows() < 1) throw ica_error("amari_index: matrix must be square and non-empty");
  const Eigen::Index m = p.rows();
  if (m == 1) return 0.0;
  const Eigen::MatrixXd a = p.cwiseAbs();
  double total = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double row_max = a.row(i).maxCoeff();
    if (row_max == 0.0) throw ica_error("amari_index: zero row " + std::to_string(i));
    total += a.row(i).sum() / row_max - 1.0;
  }
  for (Eigen::Index j = 0; j < m; ++j) {
    const double col_max = a.col(j).maxCoeff();
    if (col_max == 0.0) throw ica_error("amari_index: zero column " + std::to_string(j));
    total += a.col(j).sum() / col_max - 1.0;
  }
  return total / (2.0 * static_cast<double>(m) * static_cast<double>(m - 1));
}

}  // namespace tcl
