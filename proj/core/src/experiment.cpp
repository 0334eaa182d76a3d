#include "tcl/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>
#include <tuple>

#include <nlohmann/json.hpp>

#include "json_util.hpp"
#include "tcl/dataset_io.hpp"
#include "tcl/error.hpp"
#include "tcl/seed.hpp"

namespace tcl {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

Error experiment_error(const std::string& msg) { return Error("experiment", msg); }

enum SeedStream : std::uint64_t { kModelInitStream = 11, kTrainStream = 12, kIcaStream = 13 };

template <class T>
void read_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

// Runs fn, re-tagging foreign exceptions with the stage name.
template <class Fn>
auto staged(const char* stage, Fn&& fn) {
  try {
    return fn();
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(stage, e.what());
  }
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? std::nan("") : s / static_cast<double>(v.size());
}

double standard_error(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

SweepRow row_from_report(const EvalReport& r) {
  SweepRow row;
  row.depth = r.depth;
  row.segments = r.segments;
  row.seed = r.seed;
  row.mean_abs_corr = r.mean_abs_corr;
  row.accuracy = r.classification_accuracy.value_or(std::nan(""));
  row.chance = r.chance_level.value_or(std::nan(""));
  row.method = r.method;
  return row;
}

}  // namespace

std::string_view method_name(Method m) noexcept { return m == Method::kTcl ? "tcl" : "nsvica"; }

Method method_from_name(std::string_view name) {
  if (name == "tcl") return Method::kTcl;
  if (name == "nsvica") return Method::kNsvica;
  throw experiment_error("unknown method '" + std::string(name) + "'");
}

void ExperimentConfig::validate() const {
  if (n < 1) throw experiment_error("n must be >= 1");
  if (seg_len < 1) throw experiment_error("seg_len must be >= 1");
  if (depths.empty()) throw experiment_error("depths must not be empty");
  if (segment_counts.empty()) throw experiment_error("segment_counts must not be empty");
  if (methods.empty()) throw experiment_error("methods must not be empty");
  if (repeats < 1) throw experiment_error("repeats must be >= 1");
  for (int d : depths) {
    if (d < 1) throw experiment_error("depths must be >= 1");
  }
  for (int t : segment_counts) {
    if (t < 2) throw experiment_error("segment counts must be >= 2");
  }
  if (hidden_factor < 1) throw experiment_error("hidden_factor must be >= 1");
  if (groups < 2) throw experiment_error("groups must be >= 2");
  if (chance_epochs < 0) throw experiment_error("chance_epochs must be >= 0");
  if (stationary_count < 0 || stationary_count >= n) throw experiment_error("stationary_count must lie in [0, n)");
  train.validate();
  ica.validate();
}

namespace {

// Typos would otherwise be silently replaced by defaults.
void reject_unknown_keys(const nlohmann::json& j, const nlohmann::json& known, const std::string& prefix) {
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw experiment_error("unknown config key '" + prefix + key + "'");
    if (value.is_object() && known.at(key).is_object()) reject_unknown_keys(value, known.at(key), prefix + key + ".");
  }
}

}  // namespace

ExperimentConfig experiment_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw experiment_error(std::string("cannot parse config: ") + e.what());
  }
  ExperimentConfig c;
  if (!j.is_object()) throw experiment_error("config must be a JSON object");
  reject_unknown_keys(j, nlohmann::json::parse(experiment_config_to_json(c)), "");
  try {
    read_if(j, "n", c.n);
    read_if(j, "seg_len", c.seg_len);
    read_if(j, "depths", c.depths);
    read_if(j, "segment_counts", c.segment_counts);
    read_if(j, "repeats", c.repeats);
    if (j.contains("family")) c.family = FamilySpec::from_name(j.at("family").get<std::string>());
    read_if(j, "lambda_min", c.lambda_min);
    read_if(j, "leaky_slope", c.leaky_slope);
    read_if(j, "cond_bound", c.cond_bound);
    read_if(j, "stationary_count", c.stationary_count);
    read_if(j, "feature_dim", c.feature_dim);
    read_if(j, "hidden_factor", c.hidden_factor);
    read_if(j, "groups", c.groups);
    if (j.contains("activation")) c.activation = activation_from_name(j.at("activation").get<std::string>());
    read_if(j, "chance_epochs", c.chance_epochs);
    if (j.contains("train")) {
      const auto& t = j.at("train");
      read_if(t, "learning_rate", c.train.learning_rate);
      read_if(t, "momentum", c.train.momentum);
      read_if(t, "batch_size", c.train.batch_size);
      read_if(t, "epochs", c.train.epochs);
      read_if(t, "l2_weight", c.train.l2_weight);
      read_if(t, "lr_decay", c.train.lr_decay);
      read_if(t, "heldout_fraction", c.train.heldout_fraction);
    }
    if (j.contains("ica")) {
      const auto& a = j.at("ica");
      if (a.contains("contrast")) c.ica.contrast = contrast_from_name(a.at("contrast").get<std::string>());
      read_if(a, "tol", c.ica.tol);
      read_if(a, "max_iter", c.ica.max_iter);
      read_if(a, "restarts", c.ica.restarts);
    }
    if (j.contains("methods")) {
      c.methods.clear();
      for (const auto& m : j.at("methods")) c.methods.push_back(method_from_name(m.get<std::string>()));
    }
    read_if(j, "seed", c.base_seed);
    read_if(j, "output_dir", c.output_dir);
  } catch (const nlohmann::json::exception& e) {
    throw experiment_error(std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  return experiment_config_from_json(read_text_file(path));
}

std::string experiment_config_to_json(const ExperimentConfig& c) {
  ordered_json j;
  j["n"] = c.n;
  j["seg_len"] = c.seg_len;
  j["depths"] = c.depths;
  j["segment_counts"] = c.segment_counts;
  j["repeats"] = c.repeats;
  j["family"] = std::string(c.family.name());
  j["lambda_min"] = c.lambda_min;
  j["leaky_slope"] = c.leaky_slope;
  j["cond_bound"] = c.cond_bound;
  j["stationary_count"] = c.stationary_count;
  j["feature_dim"] = c.feature_dim;
  j["hidden_factor"] = c.hidden_factor;
  j["groups"] = c.groups;
  j["activation"] = std::string(activation_name(c.activation));
  j["chance_epochs"] = c.chance_epochs;
  j["train"] = {{"learning_rate", c.train.learning_rate}, {"momentum", c.train.momentum},
                {"batch_size", c.train.batch_size},       {"epochs", c.train.epochs},
                {"l2_weight", c.train.l2_weight},         {"lr_decay", c.train.lr_decay},
                {"heldout_fraction", c.train.heldout_fraction}};
  j["ica"] = {{"contrast", std::string(contrast_name(c.ica.contrast))},
              {"tol", c.ica.tol},
              {"max_iter", c.ica.max_iter},
              {"restarts", c.ica.restarts}};
  std::vector<std::string> methods;
  for (Method m : c.methods) methods.emplace_back(method_name(m));
  j["methods"] = methods;
  j["seed"] = c.base_seed;
  j["output_dir"] = c.output_dir;
  return j.dump(2) + "\n";
}

std::uint64_t repeat_seed(const ExperimentConfig& cfg, int repeat) noexcept {
  return cfg.base_seed + static_cast<std::uint64_t>(repeat);
}

std::string cell_name(const CellPoint& p) {
  std::ostringstream os;
  os << "d" << p.depth << "_T" << p.segments << "_s" << p.seed << "_" << method_name(p.method);
  return os.str();
}

DatasetConfig dataset_config_for(const ExperimentConfig& cfg, const CellPoint& p) {
  DatasetConfig d;
  d.n = cfg.n;
  d.segments = p.segments;
  d.seg_len = cfg.seg_len;
  d.depth = p.depth;
  d.family = cfg.family;
  d.lambda_min = cfg.lambda_min;
  d.leaky_slope = cfg.leaky_slope;
  d.cond_bound = cfg.cond_bound;
  d.stationary_count = cfg.stationary_count;
  d.seed = p.seed;
  return d;
}

NetworkShape network_shape_for(const ExperimentConfig& cfg, const CellPoint& p) {
  NetworkShape shape;
  shape.input_dim = cfg.n;
  // Feature network depth equals mixing depth: depth - 1 maxout layers plus the output layer.
  shape.hidden_widths.assign(static_cast<std::size_t>(p.depth - 1), cfg.hidden_factor * cfg.n);
  shape.output_dim = cfg.resolved_feature_dim();
  shape.classes = p.segments;
  shape.groups = cfg.groups;
  shape.activation = cfg.activation;
  return shape;
}

StageSeeds stage_seeds(std::uint64_t cell_seed) noexcept {
  return {derive_seed(cell_seed, kModelInitStream), derive_seed(cell_seed, kTrainStream),
          derive_seed(cell_seed, kIcaStream)};
}

EvalReport run_pipeline(const ExperimentConfig& cfg, const CellPoint& point, const fs::path& cell_dir,
                        PipelineArtifacts* artifacts) {
  cfg.validate();
  const StageSeeds seeds = stage_seeds(point.seed);
  PipelineArtifacts local;
  PipelineArtifacts& art = artifacts != nullptr ? *artifacts : local;

  art.dataset = staged("datagen", [&] { return generate_dataset(dataset_config_for(cfg, point)); });
  const Eigen::MatrixXd q_true =
      staged("evaluation", [&] { return true_q_values(art.dataset.sources.values, cfg.family); });

  EvalReport report;
  report.method = std::string(method_name(point.method));
  report.depth = point.depth;
  report.segments = point.segments;
  report.seed = point.seed;

  if (point.method == Method::kTcl) {
    const NetworkShape shape = network_shape_for(cfg, point);
    const TclModel fresh = staged("network", [&] { return init_params(shape, seeds.model_init); });
    TrainConfig train = cfg.train;
    train.seed = seeds.train;
    art.training = staged("trainer", [&] { return train_tcl(art.dataset.observations, fresh, train); });

    TrainConfig chance_cfg = train;
    if (cfg.chance_epochs > 0) chance_cfg.epochs = cfg.chance_epochs;
    const double chance = staged("trainer", [&] { return chance_level(art.dataset.observations, fresh, chance_cfg); });

    art.features = staged("network", [&] {
      return features_forward(art.training->model.features, art.dataset.observations.values);
    });
    FastIcaConfig ica_cfg = cfg.ica;
    ica_cfg.seed = seeds.ica;
    art.ica = staged("ica", [&] { return fastica(art.features, ica_cfg); });

    const ComponentMatch match = staged("evaluation", [&] { return match_components(q_true, art.ica.components); });
    report.mean_abs_corr = match.mean_abs_corr;
    report.per_component_corr = match.abs_corr;
    report.assignment = match.assignment;
    report.classification_accuracy = art.training->history.heldout_accuracy;
    report.chance_level = chance;
    report.ica_converged = art.ica.converged;
    if (art.features.rows() == q_true.rows()) {
      const Theorem1Fit fit = staged("evaluation", [&] { return theorem1_check(q_true, art.features); });
      report.theorem1_r2.assign(fit.r2.data(), fit.r2.data() + fit.r2.size());
      report.theorem1_condition = fit.condition;
    }
  } else {
    art.ica = staged("ica", [&] {
      return nsvica(art.dataset.observations.values, art.dataset.observations.labels);
    });
    // Baseline estimates are compared through their absolute values.
    const Eigen::MatrixXd estimates = art.ica.components.cwiseAbs();
    const ComponentMatch match = staged("evaluation", [&] { return match_components(q_true, estimates); });
    report.mean_abs_corr = match.mean_abs_corr;
    report.per_component_corr = match.abs_corr;
    report.assignment = match.assignment;
    report.ica_converged = art.ica.converged;
  }
  report.validate();

  if (!cell_dir.empty()) {
    staged("io", [&] {
      fs::create_directories(cell_dir);
      write_text_atomic(cell_dir / "config.json", experiment_config_to_json(cfg));
      if (art.training) {
        save_checkpoint(cell_dir / "checkpoint", art.training->model, seeds.model_init);
        write_training_log(cell_dir / "train_log.csv", art.training->history);
      }
      // report.json last: its presence marks the cell complete.
      write_text_atomic(cell_dir / "report.json", report.to_json());
      return 0;
    });
  }
  return report;
}

std::vector<CellAggregate> aggregate_rows(const std::vector<SweepRow>& rows) {
  std::map<std::tuple<int, int, std::string>, std::vector<const SweepRow*>> groups;
  for (const auto& r : rows) groups[{r.depth, r.segments, r.method}].push_back(&r);
  std::vector<CellAggregate> out;
  for (const auto& [key, members] : groups) {
    CellAggregate a;
    std::tie(a.depth, a.segments, a.method) = key;
    a.runs = static_cast<int>(members.size());
    std::vector<double> corr;
    std::vector<double> acc;
    std::vector<double> chance;
    for (const SweepRow* r : members) {
      corr.push_back(r->mean_abs_corr);
      if (!std::isnan(r->accuracy)) acc.push_back(r->accuracy);
      if (!std::isnan(r->chance)) chance.push_back(r->chance);
    }
    a.mean_abs_corr = mean_of(corr);
    a.mean_abs_corr_se = standard_error(corr);
    a.accuracy = mean_of(acc);
    a.accuracy_se = standard_error(acc);
    a.chance = mean_of(chance);
    a.chance_se = standard_error(chance);
    out.push_back(std::move(a));
  }
  return out;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "depth,segments,seed,mean_abs_corr,accuracy,chance,method\n";
  for (const auto& r : rows) {
    os << r.depth << ',' << r.segments << ',' << r.seed << ',' << format_double(r.mean_abs_corr) << ','
       << format_double(r.accuracy) << ',' << format_double(r.chance) << ',' << r.method << '\n';
  }
  return os.str();
}

std::vector<SweepRow> parse_sweep_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "depth,segments,seed,mean_abs_corr,accuracy,chance,method") {
    throw experiment_error("unexpected sweep CSV header");
  }
  std::vector<SweepRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string f;
    while (std::getline(ls, f, ',')) fields.push_back(f);
    if (fields.size() != 7) throw experiment_error("malformed sweep CSV row: " + line);
    try {
      SweepRow r;
      r.depth = std::stoi(fields[0]);
      r.segments = std::stoi(fields[1]);
      r.seed = std::stoull(fields[2]);
      r.mean_abs_corr = std::stod(fields[3]);
      r.accuracy = std::stod(fields[4]);
      r.chance = std::stod(fields[5]);
      r.method = fields[6];
      rows.push_back(std::move(r));
    } catch (const std::exception&) {
      throw experiment_error("malformed sweep CSV row: " + line);
    }
  }
  return rows;
}

std::string summary_json(const SweepSummary& summary) {
  const auto num = [](double v) { return std::isnan(v) ? ordered_json(nullptr) : ordered_json(v); };
  ordered_json j;
  ordered_json cells = ordered_json::array();
  for (const auto& c : summary.cells) {
    cells.push_back({{"depth", c.depth},
                     {"segments", c.segments},
                     {"method", c.method},
                     {"runs", c.runs},
                     {"mean_abs_corr", num(c.mean_abs_corr)},
                     {"mean_abs_corr_se", num(c.mean_abs_corr_se)},
                     {"accuracy", num(c.accuracy)},
                     {"accuracy_se", num(c.accuracy_se)},
                     {"chance", num(c.chance)},
                     {"chance_se", num(c.chance_se)}});
  }
  j["cells"] = cells;
  ordered_json failures = ordered_json::array();
  for (const auto& f : summary.failures) failures.push_back({{"cell", f.cell}, {"message", f.message}});
  j["failures"] = failures;
  j["skipped"] = summary.skipped;
  return j.dump(2) + "\n";
}

int workers_from_env() {
  if (const char* env = std::getenv("TCL_WORKERS")) {
    try {
      const int w = std::stoi(env);
      if (w >= 1) return w;
    } catch (const std::exception&) {
    }
  }
  return 1;
}

SweepSummary run_sweep(const ExperimentConfig& cfg, int workers) {
  cfg.validate();
  std::vector<CellPoint> cells;
  for (int depth : cfg.depths) {
    for (int segments : cfg.segment_counts) {
      for (int r = 0; r < cfg.repeats; ++r) {
        for (Method m : cfg.methods) cells.push_back({depth, segments, repeat_seed(cfg, r), m});
      }
    }
  }

  std::vector<std::optional<EvalReport>> reports(cells.size());
  std::vector<std::optional<std::string>> errors(cells.size());
  std::atomic<std::size_t> next{0};
  std::atomic<int> skipped{0};
  const fs::path root = cfg.output_dir;

  const auto work = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      const fs::path dir = root.empty() ? fs::path{} : root / cell_name(cells[i]);
      try {
        if (!dir.empty() && fs::exists(dir / "report.json")) {
          reports[i] = EvalReport::from_json(read_text_file(dir / "report.json"));
          ++skipped;
          continue;
        }
        reports[i] = run_pipeline(cfg, cells[i], dir);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };

  const int pool = std::max(1, workers > 0 ? workers : workers_from_env());
  if (pool == 1) {
    work();
  } else {
    std::vector<std::jthread> threads;
    for (int w = 0; w < pool; ++w) threads.emplace_back(work);
  }

  SweepSummary summary;
  summary.skipped = skipped.load();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (reports[i]) summary.rows.push_back(row_from_report(*reports[i]));
    if (errors[i]) summary.failures.push_back({cell_name(cells[i]), *errors[i]});
  }
  summary.cells = aggregate_rows(summary.rows);

  if (!root.empty()) {
    write_text_atomic(root / "results.csv", sweep_csv(summary.rows));
    write_text_atomic(root / "summary.json", summary_json(summary));
  }
  return summary;
}

}  // namespace tcl
