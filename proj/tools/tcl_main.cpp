// tcl: command line front end.
//
//   tcl generate --config c.json --out data/
//   tcl train    --config c.json --data data/ --out model/
//   tcl ica      --config c.json --data data/ [--model model/] --out ica/
//   tcl evaluate --config c.json --data data/ --ica ica/ [--model model/] --out report.json
//   tcl sweep    --config c.json --out runs/
//
// Running the four stages with the same seed reproduces the report of the
// corresponding sweep cell bit for bit.

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tcl/dataset_io.hpp"
#include "tcl/error.hpp"
#include "tcl/evaluation.hpp"
#include "tcl/experiment.hpp"
#include "tcl/linear_ica.hpp"
#include "tcl/network.hpp"
#include "tcl/trainer.hpp"

namespace fs = std::filesystem;
using namespace tcl;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> depth;
  std::optional<int> segments;
  std::string method = "tcl";
};

void add_common(CLI::App* cmd, Common& c, bool cell_flags) {
  cmd->add_option("--config", c.config, "JSON experiment config (absent keys keep defaults)");
  cmd->add_option("--seed", c.seed, "Seed override (cell seed for stages, base seed for sweep)");
  cmd->add_option("--out", c.out, "Output path")->required();
  if (cell_flags) {
    cmd->add_option("--depth", c.depth, "Mixing and feature depth (default: first of config depths)");
    cmd->add_option("--segments", c.segments, "Segment count (default: first of config segment_counts)");
  }
}

ExperimentConfig load_config(const Common& c) {
  return c.config.empty() ? ExperimentConfig{} : load_experiment_config(c.config);
}

CellPoint cell_of(const ExperimentConfig& cfg, const Common& c) {
  CellPoint p;
  p.depth = c.depth.value_or(cfg.depths.front());
  p.segments = c.segments.value_or(cfg.segment_counts.front());
  p.seed = c.seed.value_or(repeat_seed(cfg, 0));
  p.method = method_from_name(c.method);
  return p;
}

// The dataset header carries the depth, segment count and seed it was made with.
CellPoint cell_of_dataset(const Dataset& ds, const Common& c) {
  return {ds.config.depth, ds.config.segments, c.seed.value_or(ds.config.seed), method_from_name(c.method)};
}

void write_json(const fs::path& path, const nlohmann::ordered_json& j) { write_text_atomic(path, j.dump(2) + "\n"); }

nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error("io", "malformed JSON in " + path.string() + ": " + e.what());
  }
}

int cmd_generate(const Common& c) {
  const ExperimentConfig cfg = load_config(c);
  const CellPoint p = cell_of(cfg, c);
  const Dataset ds = generate_dataset(dataset_config_for(cfg, p));
  save_dataset(c.out, ds);
  std::printf("dataset n=%d T=%d seg_len=%d depth=%d seed=%llu -> %s\n", ds.config.n, ds.config.segments,
              ds.config.seg_len, ds.config.depth, static_cast<unsigned long long>(ds.config.seed), c.out.c_str());
  return 0;
}

int cmd_train(const Common& c, const std::string& data_dir) {
  const ExperimentConfig cfg = load_config(c);
  const Dataset ds = load_dataset(data_dir);
  const CellPoint p = cell_of_dataset(ds, c);
  const StageSeeds seeds = stage_seeds(p.seed);
  const TclModel fresh = init_params(network_shape_for(cfg, p), seeds.model_init);
  TrainConfig train = cfg.train;
  train.seed = seeds.train;
  const TrainResult result = train_tcl(ds.observations, fresh, train);
  TrainConfig chance_cfg = train;
  if (cfg.chance_epochs > 0) chance_cfg.epochs = cfg.chance_epochs;
  const double chance = chance_level(ds.observations, fresh, chance_cfg);

  const fs::path out = c.out;
  fs::create_directories(out);
  save_checkpoint(out / "checkpoint", result.model, seeds.model_init);
  write_training_log(out / "train_log.csv", result.history);
  nlohmann::ordered_json summary;
  summary["initial_loss"] = result.history.initial_loss;
  summary["final_loss"] = result.history.final_loss;
  summary["loss_increased"] = result.history.loss_increased;
  summary["heldout_accuracy"] = result.history.heldout_accuracy;
  summary["chance_level"] = chance;
  write_json(out / "train_summary.json", summary);
  if (result.history.loss_increased) std::fprintf(stderr, "warning: trainer: final loss above initial loss\n");
  std::printf("loss %.6f -> %.6f, held-out accuracy %.4f, chance %.4f\n", result.history.initial_loss,
              result.history.final_loss, result.history.heldout_accuracy, chance);
  return 0;
}

int cmd_ica(const Common& c, const std::string& data_dir, const std::string& model_dir) {
  const ExperimentConfig cfg = load_config(c);
  const Dataset ds = load_dataset(data_dir);
  const CellPoint p = cell_of_dataset(ds, c);
  IcaResult ica;
  if (p.method == Method::kTcl) {
    if (model_dir.empty()) throw Error("ica", "--model is required for method tcl");
    const TclModel model = load_checkpoint(fs::path(model_dir) / "checkpoint");
    FastIcaConfig ica_cfg = cfg.ica;
    ica_cfg.seed = stage_seeds(p.seed).ica;
    ica = fastica(features_forward(model.features, ds.observations.values), ica_cfg);
  } else {
    ica = nsvica(ds.observations.values, ds.observations.labels);
  }
  const fs::path out = c.out;
  fs::create_directories(out);
  save_named_matrix(out, "components", ica.components);
  save_named_matrix(out, "demixing", ica.demixing());
  nlohmann::ordered_json info;
  info["method"] = method_name(p.method);
  info["converged"] = ica.converged;
  info["iterations"] = ica.iterations;
  info["objective"] = ica.objective;
  if (p.method == Method::kNsvica) info["covariance_spread"] = ica.covariance_spread;
  write_json(out / "ica.json", info);
  if (!ica.converged) std::fprintf(stderr, "warning: ica: did not converge\n");
  std::printf("%s: converged=%s objective=%.6g\n", std::string(method_name(p.method)).c_str(),
              ica.converged ? "true" : "false", ica.objective);
  return 0;
}

int cmd_evaluate(const Common& c, const std::string& data_dir, const std::string& ica_dir,
                 const std::string& model_dir) {
  if (!c.config.empty()) load_config(c);
  const Dataset ds = load_dataset(data_dir);
  const nlohmann::json info = read_json(fs::path(ica_dir) / "ica.json");
  Common resolved = c;
  resolved.method = info.at("method").get<std::string>();
  const CellPoint p = cell_of_dataset(ds, resolved);
  Eigen::MatrixXd components = load_named_matrix(ica_dir, "components");
  if (p.method == Method::kNsvica) components = components.cwiseAbs();

  const Eigen::MatrixXd q_true = true_q_values(ds.sources.values, ds.config.family);
  const ComponentMatch match = match_components(q_true, components);
  EvalReport report;
  report.method = std::string(method_name(p.method));
  report.depth = p.depth;
  report.segments = p.segments;
  report.seed = p.seed;
  report.mean_abs_corr = match.mean_abs_corr;
  report.per_component_corr = match.abs_corr;
  report.assignment = match.assignment;
  report.ica_converged = info.at("converged").get<bool>();
  if (p.method == Method::kTcl && !model_dir.empty()) {
    const nlohmann::json summary = read_json(fs::path(model_dir) / "train_summary.json");
    report.classification_accuracy = summary.at("heldout_accuracy").get<double>();
    report.chance_level = summary.at("chance_level").get<double>();
    const TclModel model = load_checkpoint(fs::path(model_dir) / "checkpoint");
    const Eigen::MatrixXd h = features_forward(model.features, ds.observations.values);
    if (h.rows() == q_true.rows()) {
      const Theorem1Fit fit = theorem1_check(q_true, h);
      report.theorem1_r2.assign(fit.r2.data(), fit.r2.data() + fit.r2.size());
      report.theorem1_condition = fit.condition;
    }
  }
  report.validate();
  const fs::path out = c.out;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_text_atomic(out, report.to_json());
  std::printf("%s mean |corr| %.4f\n", report.method.c_str(), report.mean_abs_corr);
  return 0;
}

int cmd_sweep(const Common& c) {
  ExperimentConfig cfg = load_config(c);
  if (c.seed) cfg.base_seed = *c.seed;
  cfg.output_dir = c.out;
  const SweepSummary summary = run_sweep(cfg);
  for (const auto& cell : summary.cells) {
    std::printf("depth=%d T=%d %s runs=%d mean|corr|=%.4f (se %.4f)", cell.depth, cell.segments, cell.method.c_str(),
                cell.runs, cell.mean_abs_corr, cell.mean_abs_corr_se);
    if (cell.method == "tcl") std::printf(" accuracy=%.4f chance=%.4f", cell.accuracy, cell.chance);
    std::printf("\n");
  }
  for (const auto& f : summary.failures) std::fprintf(stderr, "failed cell %s: %s\n", f.cell.c_str(), f.message.c_str());
  std::printf("%zu rows (%d reused), %zu failures -> %s\n", summary.rows.size(), summary.skipped,
              summary.failures.size(), c.out.c_str());
  return summary.failures.empty() ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Time-contrastive learning for nonlinear ICA"};
  app.require_subcommand(1);

  Common gen, train, ica, eval, sweep;
  std::string data_dir;
  std::string model_dir;
  std::string ica_dir;

  auto* g = app.add_subcommand("generate", "Sample a dataset for one (depth, segments, seed) cell");
  add_common(g, gen, true);

  auto* t = app.add_subcommand("train", "Train the feature extractor by segment discrimination");
  add_common(t, train, false);
  t->add_option("--data", data_dir, "Dataset directory")->required();

  auto* i = app.add_subcommand("ica", "Linear ICA on learned features (tcl) or observations (nsvica)");
  add_common(i, ica, false);
  i->add_option("--data", data_dir, "Dataset directory")->required();
  i->add_option("--model", model_dir, "Training output directory (method tcl)");
  i->add_option("--method", ica.method, "tcl or nsvica")->check(CLI::IsMember({"tcl", "nsvica"}));

  auto* e = app.add_subcommand("evaluate", "Match recovered components against the true sources");
  add_common(e, eval, false);
  e->add_option("--data", data_dir, "Dataset directory")->required();
  e->add_option("--ica", ica_dir, "ICA output directory")->required();
  e->add_option("--model", model_dir, "Training output directory (adds accuracy and the affine fit)");

  auto* s = app.add_subcommand("sweep", "Grid over depths x segment counts x repeats x methods");
  add_common(s, sweep, false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (g->parsed()) return cmd_generate(gen);
    if (t->parsed()) return cmd_train(train, data_dir);
    if (i->parsed()) return cmd_ica(ica, data_dir, model_dir);
    if (e->parsed()) return cmd_evaluate(eval, data_dir, ica_dir, model_dir);
    if (s->parsed()) return cmd_sweep(sweep);
  } catch (const Error& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 2;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: cli: %s\n", err.what());
    return 2;
  }
  return 1;
}
