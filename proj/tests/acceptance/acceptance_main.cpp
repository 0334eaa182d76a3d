// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails. An optional argument names the sweep
// output directory; existing cell reports there are reused.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "tcl/dataset_io.hpp"
#include "tcl/datagen.hpp"
#include "tcl/evaluation.hpp"
#include "tcl/experiment.hpp"
#include "tcl/linear_ica.hpp"
#include "tcl/network.hpp"
#include "tcl/trainer.hpp"

namespace fs = std::filesystem;
using namespace tcl;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = normal(rng);
  return m;
}

// 1 -------------------------------------------------------------------------

Outcome gradient_check() {
  std::mt19937_64 rng(20160101);
  std::uniform_int_distribution<int> pick_n(1, 5);
  std::uniform_int_distribution<int> pick_t(2, 4);
  std::uniform_int_distribution<int> pick_depth(1, 2);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  const double eps = 1e-6;
  const double kink = 1e-3;
  double worst = 0.0;
  long checked = 0;
  for (int c = 0; c < 50; ++c) {
    NetworkShape shape;
    shape.input_dim = pick_n(rng);
    const int depth = pick_depth(rng);
    shape.hidden_widths.assign(static_cast<std::size_t>(depth - 1), 2 * shape.input_dim);
    shape.output_dim = shape.input_dim;
    shape.classes = pick_t(rng);
    shape.activation = c % 5 == 4 ? OutputActivation::kAdaptive : OutputActivation::kAbs;
    TclModel model = init_params(shape, static_cast<std::uint64_t>(c));
    // Move every parameter off its initial value so all paths are exercised.
    Eigen::VectorXd theta = pack_parameters(model);
    for (Eigen::Index i = 0; i < theta.size(); ++i) theta(i) += u(rng);
    unpack_parameters(theta, model);
    model.mlr.weights.col(0).setZero();
    model.mlr.biases(0) = 0.0;

    const Eigen::MatrixXd raw = gaussian_matrix(shape.input_dim, 24, rng);
    std::vector<Eigen::Index> keep;
    for (Eigen::Index j = 0; j < raw.cols(); ++j) {
      if (oracle::kink_margin(model.features, raw, j) > kink) keep.push_back(j);
    }
    Eigen::MatrixXd x(shape.input_dim, static_cast<Eigen::Index>(keep.size()));
    std::vector<int> labels;
    for (std::size_t k = 0; k < keep.size(); ++k) {
      x.col(static_cast<Eigen::Index>(k)) = raw.col(keep[k]);
      labels.push_back(static_cast<int>(k % static_cast<std::size_t>(shape.classes)));
    }
    const double l2 = 1e-3;
    const Eigen::VectorXd analytic = pack_parameters(tcl_gradients(x, labels, model, l2).grad);
    theta = pack_parameters(model);
    const Eigen::Index m = model.mlr.weights.rows();
    const Eigen::Index mlr_start = theta.size() - model.mlr.weights.size() - model.mlr.biases.size();
    TclModel probe = model;
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      if ((i >= mlr_start && i < mlr_start + m) || i == mlr_start + model.mlr.weights.size()) continue;
      const double saved = theta(i);
      theta(i) = saved + eps;
      unpack_parameters(theta, probe);
      const double up = tcl_loss(x, labels, probe, l2);
      theta(i) = saved - eps;
      unpack_parameters(theta, probe);
      const double down = tcl_loss(x, labels, probe, l2);
      theta(i) = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double scale = std::max({std::abs(numeric), std::abs(analytic(i)), 1e-4});
      worst = std::max(worst, std::abs(numeric - analytic(i)) / scale);
      ++checked;
    }
  }
  return {worst < 1e-5, fmt("worst relative error %.2e over %ld parameters in 50 configurations", worst, checked)};
}

// 2 -------------------------------------------------------------------------

Outcome mixing_round_trip() {
  std::mt19937_64 rng(7);
  double worst = 0.0;
  int failing = 0;
  std::map<int, double> by_depth;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const int depth = 1 + static_cast<int>(seed % 5);
    const MixingNetwork net = build_mixing(20, depth, 0.2, 1e4, seed);
    const Eigen::MatrixXd s = gaussian_matrix(20, 100, rng);
    const double err = (invert_mixing(net, apply_mixing(net, s)) - s).cwiseAbs().maxCoeff();
    worst = std::max(worst, err);
    by_depth[depth] = std::max(by_depth[depth], err);
    if (!(err < 1e-8)) ++failing;
  }
  std::string detail = fmt("%d/100 networks above 1e-8; worst by depth:", failing);
  for (const auto& [d, e] : by_depth) detail += fmt(" L%d=%.1e", d, e);
  return {failing == 0, detail};
}

// 3 -------------------------------------------------------------------------

Outcome fastica_oracle() {
  std::string detail;
  bool pass = true;
  for (int m : {2, 5}) {
    int good = 0;
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      std::mt19937_64 rng(1000 * static_cast<std::uint64_t>(m) + seed);
      std::exponential_distribution<double> expo(1.0);
      std::bernoulli_distribution coin;
      Eigen::MatrixXd s(m, 50000);
      for (Eigen::Index i = 0; i < s.size(); ++i) s(i) = (coin(rng) ? 1.0 : -1.0) * expo(rng) / std::sqrt(2.0);
      const Eigen::MatrixXd a = gaussian_matrix(m, m, rng);
      FastIcaConfig cfg;
      cfg.seed = seed;
      const double amari = amari_index(fastica(a * s, cfg).demixing() * a);
      worst = std::max(worst, amari);
      if (amari < 0.05) ++good;
    }
    pass = pass && good >= 9;
    detail += fmt("%s%d sources: %d/10 below 0.05 (worst %.4f)", detail.empty() ? "" : "; ", m, good, worst);
  }
  return {pass, detail};
}

// 4-8, 10 --------------------------------------------------------------------

struct SweepData {
  std::map<std::tuple<int, int, std::string>, std::vector<EvalReport>> reports;
  std::vector<SweepFailure> failures;

  std::vector<EvalReport> at(int depth, int segments, const std::string& method) const {
    const auto it = reports.find({depth, segments, method});
    return it == reports.end() ? std::vector<EvalReport>{} : it->second;
  }
};

double mean_of(const std::vector<EvalReport>& rs, const std::function<double(const EvalReport&)>& f) {
  if (rs.empty()) return std::nan("");
  double sum = 0.0;
  for (const auto& r : rs) sum += f(r);
  return sum / static_cast<double>(rs.size());
}

double corr_of(const EvalReport& r) { return r.mean_abs_corr; }

ExperimentConfig acceptance_config(const fs::path& out) {
  ExperimentConfig cfg;
  cfg.n = 5;
  cfg.seg_len = 512;
  cfg.depths = {1, 2};
  cfg.segment_counts = {8, 32, 128};
  cfg.repeats = 5;
  cfg.train.learning_rate = 0.05;
  cfg.train.lr_decay = 0.997;
  cfg.train.epochs = 600;
  cfg.train.l2_weight = 1e-5;
  cfg.base_seed = 1;
  cfg.output_dir = out.string();
  return cfg;
}

SweepData run_acceptance_sweep(const ExperimentConfig& cfg) {
  const SweepSummary summary = run_sweep(cfg);
  SweepData data;
  data.failures = summary.failures;
  for (const auto& row : summary.rows) {
    const CellPoint p{row.depth, row.segments, row.seed, method_from_name(row.method)};
    const fs::path report = fs::path(cfg.output_dir) / cell_name(p) / "report.json";
    data.reports[{row.depth, row.segments, row.method}].push_back(EvalReport::from_json(read_text_file(report)));
  }
  std::printf("sweep cells (5-seed means):\n");
  for (const auto& c : summary.cells) {
    std::printf("  depth=%d T=%-3d %-6s corr=%.3f+-%.3f", c.depth, c.segments, c.method.c_str(), c.mean_abs_corr,
                c.mean_abs_corr_se);
    if (c.method == "tcl") std::printf(" acc=%.4f chance=%.4f", c.accuracy, c.chance);
    std::printf("\n");
  }
  for (const auto& f : summary.failures) std::printf("  failed cell %s: %s\n", f.cell.c_str(), f.message.c_str());
  std::fflush(stdout);
  return data;
}

Outcome linear_regime(const SweepData& d) {
  const auto nsv = d.at(1, 32, "nsvica");
  const auto tcl = d.at(1, 32, "tcl");
  const double a = mean_of(nsv, corr_of);
  const double b = mean_of(tcl, corr_of);
  const bool complete = nsv.size() == 5 && tcl.size() == 5;
  return {complete && a > 0.95 && b > 0.9, fmt("depth 1, T=32: NSVICA %.3f (> 0.95), TCL %.3f (> 0.9)", a, b)};
}

Outcome nonlinear_regime(const SweepData& d) {
  const auto nsv = d.at(2, 128, "nsvica");
  const auto tcl = d.at(2, 128, "tcl");
  const double a = mean_of(tcl, corr_of);
  const double b = mean_of(nsv, corr_of);
  const bool complete = nsv.size() == 5 && tcl.size() == 5;
  return {complete && a - b >= 0.1, fmt("depth 2, T=128: TCL %.3f - NSVICA %.3f = %.3f (>= 0.1)", a, b, a - b)};
}

Outcome segment_trend(const SweepData& d) {
  const double t8 = mean_of(d.at(2, 8, "tcl"), corr_of);
  const double t32 = mean_of(d.at(2, 32, "tcl"), corr_of);
  const double t128 = mean_of(d.at(2, 128, "tcl"), corr_of);
  return {t8 < t32 && t32 < t128, fmt("depth 2 TCL: T=8 %.3f, T=32 %.3f, T=128 %.3f", t8, t32, t128)};
}

Outcome above_chance(const SweepData& d) {
  bool pass = true;
  std::string detail;
  for (int depth : {1, 2}) {
    for (int t : {8, 32, 128}) {
      const auto rs = d.at(depth, t, "tcl");
      const double acc = mean_of(rs, [](const EvalReport& r) { return r.classification_accuracy.value_or(NAN); });
      const double chance = mean_of(rs, [](const EvalReport& r) { return r.chance_level.value_or(NAN); });
      const double gap = acc - chance;
      if (!(gap > 0.05) || rs.size() != 5) pass = false;
      detail += fmt("%sL%d/T%d %+.1fpp", detail.empty() ? "" : ", ", depth, t, 100.0 * gap);
    }
  }
  return {pass, "held-out accuracy minus chance (> +5pp): " + detail};
}

Outcome affine_identity(const SweepData& d) {
  const auto rs = d.at(2, 128, "tcl");
  bool pass = rs.size() == 5;
  double min_r2 = INFINITY;
  double max_cond = 0.0;
  int bad_runs = 0;
  for (const auto& r : rs) {
    bool ok = r.theorem1_condition.has_value() && *r.theorem1_condition < 1e6 && r.theorem1_r2.size() == 5;
    for (double v : r.theorem1_r2) {
      min_r2 = std::min(min_r2, v);
      ok = ok && v > 0.9;
    }
    max_cond = std::max(max_cond, r.theorem1_condition.value_or(INFINITY));
    if (!ok) ++bad_runs;
  }
  pass = pass && bad_runs == 0;
  return {pass, fmt("depth 2, T=128: %d/5 runs with some R^2 <= 0.9; min R^2 %.3f, max cond(A) %.3g", bad_runs, min_r2,
                    max_cond)};
}

Outcome determinism(const ExperimentConfig& cfg) {
  ExperimentConfig local = cfg;
  local.output_dir.clear();
  bool pass = true;
  std::string detail;
  for (Method m : {Method::kTcl, Method::kNsvica}) {
    const CellPoint p{2, 8, repeat_seed(local, 0), m};
    const std::string a = run_pipeline(local, p).to_json();
    const std::string b = run_pipeline(local, p).to_json();
    const std::string stored = read_text_file(fs::path(cfg.output_dir) / cell_name(p) / "report.json");
    const bool same = a == b && a == stored;
    pass = pass && same;
    detail += fmt("%s%s %s", detail.empty() ? "" : ", ", std::string(method_name(m)).c_str(),
                  same ? "identical" : "differs");
  }
  return {pass, "depth 2, T=8 rerun vs rerun vs sweep report: " + detail};
}

// 9 -------------------------------------------------------------------------

Outcome log_ratio_check() {
  const double lambda1 = 1.0;
  const double lambda2 = 0.25;
  const int per_segment = 100000;
  Eigen::MatrixXd lambdas(2, 1);
  lambdas << lambda1, lambda2;
  const SourceTensor s = sample_sources(ModulationMatrix::from_lambdas(lambdas), FamilySpec{FamilyKind::kGaussian},
                                        per_segment, 0, 99);
  const std::vector<int> labels = s.labels();

  NetworkShape shape;
  shape.input_dim = 1;
  shape.hidden_widths = {8};
  shape.output_dim = 16;
  shape.classes = 2;
  const TclModel fresh = init_params(shape, 5);
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.momentum = 0.9;
  cfg.batch_size = 2048;
  cfg.epochs = 200;
  cfg.lr_decay = 0.985;
  cfg.l2_weight = 0.0;
  cfg.seed = 3;
  const TclModel model = train_tcl(s.values, labels, fresh, cfg).model;

  const Eigen::RowVectorXd grid = Eigen::RowVectorXd::LinSpaced(41, -2.0, 2.0);
  const Eigen::MatrixXd logits = mlr_logits(model.mlr, features_forward(model.features, grid));
  double worst = 0.0;
  for (Eigen::Index j = 0; j < grid.size(); ++j) {
    const double x = grid(j);
    const double truth = 0.5 * std::log(lambda2 / lambda1) - 0.5 * (lambda2 - lambda1) * x * x;
    worst = std::max(worst, std::abs(logits(1, j) - truth));
  }
  return {worst < 0.1, fmt("max |logit - log p2/p1| on 41 points in [-2, 2]: %.4f (< 0.1)", worst)};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path out = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "tcl_acceptance";
  if (argc <= 1) fs::remove_all(out);
  const ExperimentConfig cfg = acceptance_config(out);

  std::vector<std::pair<int, std::string>> names{
      {1, "gradient correctness"},   {2, "mixing invertibility"},   {3, "FastICA oracle"},
      {4, "linear regime"},          {5, "nonlinear regime"},       {6, "segment trend"},
      {7, "above-chance accuracy"},  {8, "affine identity"},        {9, "log-density ratio"},
      {10, "determinism"}};
  std::map<int, Outcome> results;
  const auto timed = [&](int id, const std::function<Outcome()>& fn) {
    const auto start = std::chrono::steady_clock::now();
    try {
      results[id] = fn();
    } catch (const std::exception& e) {
      results[id] = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    results[id].detail += fmt(" [%.1fs]", secs);
  };

  timed(1, gradient_check);
  timed(2, mixing_round_trip);
  timed(3, fastica_oracle);
  timed(9, log_ratio_check);

  SweepData sweep;
  const auto start = std::chrono::steady_clock::now();
  try {
    sweep = run_acceptance_sweep(cfg);
  } catch (const std::exception& e) {
    std::printf("sweep error: %s\n", e.what());
  }
  std::printf("sweep time %.0fs\n",
              std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  timed(4, [&] { return linear_regime(sweep); });
  timed(5, [&] { return nonlinear_regime(sweep); });
  timed(6, [&] { return segment_trend(sweep); });
  timed(7, [&] { return above_chance(sweep); });
  timed(8, [&] { return affine_identity(sweep); });
  timed(10, [&] { return determinism(cfg); });

  int failed = 0;
  for (const auto& [id, name] : names) {
    const Outcome& o = results[id];
    if (!o.pass) ++failed;
    std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str());
  }
  std::printf("%d/10 criteria passed\n", 10 - failed);
  return failed == 0 ? 0 : 1;
}
