#include "tcl/datagen.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "tcl/error.hpp"
#include "tcl/seed.hpp"

namespace tcl {

namespace {

enum SeedStream : std::uint64_t { kModulationStream = 1, kSourceStream = 2, kMixingStream = 3 };

Error datagen_error(const std::string& msg) { return Error("datagen", msg); }

}  // namespace

double FamilySpec::q(double s) const noexcept {
  switch (kind) {
    case FamilyKind::kLaplacian:
      return -std::abs(s);
    case FamilyKind::kGaussian:
      return -0.5 * s * s;
  }
  return 0.0;
}

std::string_view FamilySpec::name() const noexcept {
  return kind == FamilyKind::kLaplacian ? "laplacian" : "gaussian";
}

FamilySpec FamilySpec::from_name(std::string_view name) {
  if (name == "laplacian") return {FamilyKind::kLaplacian};
  if (name == "gaussian") return {FamilyKind::kGaussian};
  throw datagen_error("unknown source family '" + std::string(name) + "'");
}

ModulationMatrix ModulationMatrix::from_lambdas(Eigen::MatrixXd lambdas) {
  ModulationMatrix mods;
  mods.differenced = lambdas.rowwise() - lambdas.row(0);
  mods.lambdas = std::move(lambdas);
  return mods;
}

Eigen::Index numerical_rank(const Eigen::MatrixXd& m, double rel_tol) {
  if (m.size() == 0) return 0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const Eigen::VectorXd& sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) == 0.0) return 0;
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > rel_tol * sv(0)) ++rank;
  }
  return rank;
}

void check_modulation_rank(const ModulationMatrix& mods) {
  if (mods.segments() <= mods.components()) return;
  const Eigen::Index rank = numerical_rank(mods.differenced);
  if (rank < mods.components()) {
    std::ostringstream os;
    os << "differenced modulation matrix (" << mods.segments() << "x" << mods.components()
       << ") has rank " << rank << ", need full column rank " << mods.components();
    throw datagen_error(os.str());
  }
}

ModulationMatrix sample_modulations(int n, int segments, double lambda_min, std::uint64_t seed,
                                    int max_retries) {
  if (n < 1) throw datagen_error("component count must be >= 1");
  if (segments < 2) throw datagen_error("segment count must be >= 2");
  if (!(lambda_min > 0.0 && lambda_min < 1.0)) throw datagen_error("lambda_min must lie in (0, 1)");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(lambda_min, 1.0);
  std::string last_failure;
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    Eigen::MatrixXd lambdas(segments, n);
    for (Eigen::Index t = 0; t < lambdas.rows(); ++t) {
      for (Eigen::Index i = 0; i < lambdas.cols(); ++i) lambdas(t, i) = uniform(rng);
    }
    ModulationMatrix mods = ModulationMatrix::from_lambdas(std::move(lambdas));
    try {
      check_modulation_rank(mods);
      return mods;
    } catch (const Error& e) {
      last_failure = e.what();
    }
  }
  throw datagen_error("rank check failed after " + std::to_string(max_retries) + " retries: " + last_failure);
}

std::vector<int> SourceTensor::labels() const {
  std::vector<int> out(static_cast<std::size_t>(values.cols()));
  for (Eigen::Index t = 0; t < values.cols(); ++t) out[static_cast<std::size_t>(t)] = segment_of(t);
  return out;
}

SourceTensor sample_sources(const ModulationMatrix& mods, const FamilySpec& family, int seg_len,
                            int stationary_count, std::uint64_t seed) {
  const auto n = static_cast<int>(mods.components());
  const auto segments = static_cast<int>(mods.segments());
  if (seg_len < 1) throw datagen_error("seg_len must be >= 1");
  if (stationary_count < 0 || stationary_count >= n) {
    throw datagen_error("stationary_count must lie in [0, n)");
  }
  if ((mods.lambdas.array() <= 0.0).any()) throw datagen_error("all lambdas must be positive");

  SourceTensor out;
  out.seg_len = seg_len;
  out.segments = segments;
  out.stationary_count = stationary_count;
  out.values.resize(n, static_cast<Eigen::Index>(segments) * seg_len);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int first_stationary = n - stationary_count;

  for (int i = 0; i < n; ++i) {
    for (int tau = 0; tau < segments; ++tau) {
      const double lambda = i >= first_stationary ? mods.lambdas(0, i) : mods.lambdas(tau, i);
      const Eigen::Index begin = static_cast<Eigen::Index>(tau) * seg_len;
      for (int k = 0; k < seg_len; ++k) {
        double s = 0.0;
        if (family.kind == FamilyKind::kLaplacian) {
          // Inverse CDF of the density (lambda / 2) exp(-lambda |s|).
          const double u = unit(rng) - 0.5;
          const double mag = -std::log1p(-2.0 * std::abs(u)) / lambda;
          s = u < 0.0 ? -mag : mag;
        } else {
          s = normal(rng) / std::sqrt(lambda);
        }
        out.values(i, begin + k) = s;
      }
    }
  }
  return out;
}

void standardize_components(SourceTensor& sources) {
  auto& v = sources.values;
  const auto count = static_cast<double>(v.cols());
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    const double mean = v.row(i).sum() / count;
    v.row(i).array() -= mean;
    const double sd = std::sqrt(v.row(i).squaredNorm() / count);
    if (sd > 0.0) v.row(i) /= sd;
  }
}

double condition_number(const Eigen::MatrixXd& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const Eigen::VectorXd& sv = svd.singularValues();
  const double smallest = sv(sv.size() - 1);
  return smallest > 0.0 ? sv(0) / smallest : std::numeric_limits<double>::infinity();
}

MixingNetwork build_mixing(int n, int depth, double leaky_slope, double cond_bound, std::uint64_t seed,
                           int max_retries) {
  if (n < 1) throw datagen_error("mixing dimension must be >= 1");
  if (depth < 1) throw datagen_error("mixing depth must be >= 1");
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) throw datagen_error("leaky_slope must lie in (0, 1)");
  if (!(cond_bound >= 1.0)) throw datagen_error("cond_bound must be >= 1");

  std::mt19937_64 rng(seed);
  const double bound = std::sqrt(6.0 / (2.0 * n));
  std::uniform_real_distribution<double> uniform(-bound, bound);

  MixingNetwork net;
  net.leaky_slope = leaky_slope;
  for (int layer = 0; layer < depth; ++layer) {
    Eigen::MatrixXd w(n, n);
    bool accepted = false;
    for (int attempt = 0; attempt <= max_retries && !accepted; ++attempt) {
      for (Eigen::Index r = 0; r < n; ++r) {
        for (Eigen::Index c = 0; c < n; ++c) w(r, c) = uniform(rng);
      }
      accepted = condition_number(w) <= cond_bound;
    }
    if (!accepted) {
      throw datagen_error("mixing layer " + std::to_string(layer) + " exceeded condition bound " +
                          std::to_string(cond_bound) + " after " + std::to_string(max_retries) + " retries");
    }
    net.layers.push_back({std::move(w), Eigen::VectorXd::Zero(n)});
  }
  return net;
}

Eigen::MatrixXd apply_mixing(const MixingNetwork& net, const Eigen::MatrixXd& sources) {
  if (net.depth() == 0) throw datagen_error("empty mixing network");
  if (sources.rows() != net.dim()) {
    throw datagen_error("apply_mixing: source dimension " + std::to_string(sources.rows()) +
                        " does not match network dimension " + std::to_string(net.dim()));
  }
  Eigen::MatrixXd y = sources;
  for (int k = 0; k < net.depth(); ++k) {
    const auto& layer = net.layers[static_cast<std::size_t>(k)];
    y = (layer.weight * y).colwise() + layer.bias;
    if (k + 1 < net.depth()) {
      y = y.unaryExpr([slope = net.leaky_slope](double v) { return leaky_relu(v, slope); });
    }
  }
  return y;
}

ObservationSeries apply_mixing(const MixingNetwork& net, const SourceTensor& sources) {
  ObservationSeries out;
  out.values = apply_mixing(net, sources.values);
  out.labels = sources.labels();
  out.segments = sources.segments;
  out.seg_len = sources.seg_len;
  return out;
}

Eigen::MatrixXd invert_mixing(const MixingNetwork& net, const Eigen::MatrixXd& observations) {
  if (net.depth() == 0) throw datagen_error("empty mixing network");
  if (observations.rows() != net.dim()) {
    throw datagen_error("invert_mixing: observation dimension " + std::to_string(observations.rows()) +
                        " does not match network dimension " + std::to_string(net.dim()));
  }
  Eigen::MatrixXd y = observations;
  for (int k = net.depth() - 1; k >= 0; --k) {
    const auto& layer = net.layers[static_cast<std::size_t>(k)];
    if (k + 1 < net.depth()) {
      y = y.unaryExpr([slope = net.leaky_slope](double v) { return leaky_relu_inverse(v, slope); });
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(layer.weight);
    if (!lu.isInvertible()) throw datagen_error("mixing layer " + std::to_string(k) + " is singular");
    y = lu.solve(y.colwise() - layer.bias);
  }
  return y;
}

void DatasetConfig::validate() const {
  if (n < 1) throw datagen_error("n must be >= 1");
  if (segments < 2) throw datagen_error("segments must be >= 2");
  if (seg_len < 1) throw datagen_error("seg_len must be >= 1");
  if (depth < 1) throw datagen_error("depth must be >= 1");
  if (!(lambda_min > 0.0 && lambda_min < 1.0)) throw datagen_error("lambda_min must lie in (0, 1)");
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) throw datagen_error("leaky_slope must lie in (0, 1)");
  if (stationary_count < 0 || stationary_count >= n) throw datagen_error("stationary_count must lie in [0, n)");
}

Dataset generate_dataset(const DatasetConfig& config) {
  config.validate();
  Dataset ds;
  ds.config = config;
  ds.modulations =
      sample_modulations(config.n, config.segments, config.lambda_min, derive_seed(config.seed, kModulationStream));
  ds.sources = sample_sources(ds.modulations, config.family, config.seg_len, config.stationary_count,
                              derive_seed(config.seed, kSourceStream));
  if (config.standardize) standardize_components(ds.sources);
  ds.mixing = build_mixing(config.n, config.depth, config.leaky_slope, config.cond_bound,
                           derive_seed(config.seed, kMixingStream));
  ds.observations = apply_mixing(ds.mixing, ds.sources);
  return ds;
}

}  // namespace tcl
