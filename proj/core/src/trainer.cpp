#include "tcl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "tcl/dataset_io.hpp"
#include "tcl/error.hpp"

namespace tcl {

namespace {

Error trainer_error(const std::string& msg) { return Error("trainer", msg); }

Eigen::MatrixXd gather_columns(const Eigen::MatrixXd& x, std::span<const Eigen::Index> idx) {
  Eigen::MatrixXd out(x.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = x.col(idx[j]);
  return out;
}

struct StepOutput {
  Eigen::VectorXd grad;
  double loss = 0.0;
  Eigen::Index correct = 0;
};

// Shared momentum loop. `step(batch_x, batch_labels)` returns the packed
// gradient for the parameters held in `flat`; `sync(flat)` writes them back
// into the model before the next evaluation.
template <class StepFn, class SyncFn>
void momentum_descent(const Eigen::MatrixXd& x, std::span<const int> labels, Eigen::VectorXd& flat,
                      const TrainConfig& cfg, TrainHistory& history, StepFn&& step, SyncFn&& sync) {
  const Eigen::Index count = x.cols();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(count));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::mt19937_64 rng(cfg.seed);
  Eigen::VectorXd velocity = Eigen::VectorXd::Zero(flat.size());
  const auto batch = static_cast<Eigen::Index>(std::min<Eigen::Index>(cfg.batch_size, count));
  double lr = cfg.learning_rate;
  std::vector<int> batch_labels;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    Eigen::Index hits = 0;
    Eigen::Index seen = 0;
    for (Eigen::Index start = 0; start + batch <= count; start += batch) {
      const std::span<const Eigen::Index> idx(order.data() + start, static_cast<std::size_t>(batch));
      const Eigen::MatrixXd bx = gather_columns(x, idx);
      batch_labels.resize(idx.size());
      for (std::size_t j = 0; j < idx.size(); ++j) batch_labels[j] = labels[static_cast<std::size_t>(idx[j])];

      StepOutput out;
      try {
        out = step(bx, std::span<const int>(batch_labels));
      } catch (const Error& e) {
        std::ostringstream os;
        os << "epoch " << epoch << ": " << e.what() << " (learning rate " << lr << " too high?)";
        throw trainer_error(os.str());
      }
      loss_sum += out.loss * static_cast<double>(batch);
      hits += out.correct;
      seen += batch;

      velocity = cfg.momentum * velocity - lr * out.grad;
      flat += velocity;
      sync(flat);
    }
    history.loss.push_back(loss_sum / static_cast<double>(seen));
    history.accuracy.push_back(static_cast<double>(hits) / static_cast<double>(seen));
    lr *= cfg.lr_decay;
  }
}

// Parameters of the MLR head only, pivot included (its gradient is always 0).
Eigen::VectorXd pack_mlr(const MlrParams& mlr) {
  Eigen::VectorXd flat(mlr.weights.size() + mlr.biases.size());
  flat.head(mlr.weights.size()) = Eigen::Map<const Eigen::VectorXd>(mlr.weights.data(), mlr.weights.size());
  flat.tail(mlr.biases.size()) = mlr.biases;
  return flat;
}

void unpack_mlr(const Eigen::VectorXd& flat, MlrParams& mlr) {
  Eigen::Map<Eigen::VectorXd>(mlr.weights.data(), mlr.weights.size()) = flat.head(mlr.weights.size());
  mlr.biases = flat.tail(mlr.biases.size());
}

double mlr_loss(const Eigen::MatrixXd& h, std::span<const int> labels, const MlrParams& mlr, double l2_weight) {
  if (h.cols() == 0) return l2_weight * mlr.weights.squaredNorm();
  return mlr_gradients(h, labels, mlr, l2_weight).loss;
}

double accuracy_from_logits(const Eigen::MatrixXd& logits, std::span<const int> labels) {
  if (labels.empty()) return 0.0;
  const std::vector<int> predicted = predict_labels(logits);
  std::size_t hits = 0;
  for (std::size_t j = 0; j < labels.size(); ++j) hits += predicted[j] == labels[j] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

void check_inputs(const Eigen::MatrixXd& x, std::span<const int> labels, const TclModel& model,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (static_cast<Eigen::Index>(labels.size()) != x.cols()) throw trainer_error("label count != sample count");
  if (x.cols() == 0) throw trainer_error("no training samples");
  if (cfg.batch_size > x.cols()) {
    throw trainer_error("batch_size " + std::to_string(cfg.batch_size) + " exceeds sample count " +
                        std::to_string(x.cols()));
  }
  for (int label : labels) {
    if (label < 0 || label >= model.mlr.classes()) throw trainer_error("label out of range");
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw trainer_error("learning_rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw trainer_error("momentum must lie in [0, 1)");
  if (batch_size < 1) throw trainer_error("batch_size must be >= 1");
  if (epochs < 0) throw trainer_error("epochs must be >= 0");
  if (!(l2_weight >= 0.0)) throw trainer_error("l2_weight must be >= 0");
  if (!(lr_decay > 0.0)) throw trainer_error("lr_decay must be > 0");
  if (!(heldout_fraction >= 0.0 && heldout_fraction < 1.0)) throw trainer_error("heldout_fraction must lie in [0, 1)");
}

HeldOutSplit split_heldout(const ObservationSeries& data, double fraction) {
  if (data.seg_len < 1) throw trainer_error("observation series has no segment length");
  const int test_per_segment = static_cast<int>(std::floor(fraction * data.seg_len));
  const int train_per_segment = data.seg_len - test_per_segment;
  HeldOutSplit split;
  split.train_x.resize(data.values.rows(), static_cast<Eigen::Index>(data.segments) * train_per_segment);
  split.test_x.resize(data.values.rows(), static_cast<Eigen::Index>(data.segments) * test_per_segment);
  Eigen::Index tr = 0;
  Eigen::Index te = 0;
  for (Eigen::Index t = 0; t < data.values.cols(); ++t) {
    const int pos = static_cast<int>(t % data.seg_len);
    const int label = data.labels[static_cast<std::size_t>(t)];
    if (pos < train_per_segment) {
      split.train_x.col(tr++) = data.values.col(t);
      split.train_labels.push_back(label);
    } else {
      split.test_x.col(te++) = data.values.col(t);
      split.test_labels.push_back(label);
    }
  }
  return split;
}

TrainResult train_tcl(const Eigen::MatrixXd& x, std::span<const int> labels, TclModel model, const TrainConfig& cfg) {
  check_inputs(x, labels, model, cfg);
  TrainResult result;
  auto& history = result.history;
  history.initial_loss = tcl_loss(x, labels, model, cfg.l2_weight);
  if (!std::isfinite(history.initial_loss)) throw trainer_error("non-finite initial loss");

  Eigen::VectorXd flat = pack_parameters(model);
  momentum_descent(
      x, labels, flat, cfg, history,
      [&](const Eigen::MatrixXd& bx, std::span<const int> by) {
        TclGradients g = tcl_gradients(bx, by, model, cfg.l2_weight);
        return StepOutput{pack_parameters(g.grad), g.loss, g.correct};
      },
      [&](const Eigen::VectorXd& p) { unpack_parameters(p, model); });

  history.final_loss = tcl_loss(x, labels, model, cfg.l2_weight);
  if (!std::isfinite(history.final_loss)) throw trainer_error("non-finite final loss");
  history.loss_increased = history.final_loss > history.initial_loss;
  result.model = std::move(model);
  return result;
}

TrainResult train_tcl(const ObservationSeries& data, TclModel model, const TrainConfig& cfg) {
  cfg.validate();
  const HeldOutSplit split = split_heldout(data, cfg.heldout_fraction);
  TrainResult result = train_tcl(split.train_x, split.train_labels, std::move(model), cfg);
  result.history.heldout_accuracy = split.test_labels.empty()
                                        ? classification_accuracy(split.train_x, split.train_labels, result.model)
                                        : classification_accuracy(split.test_x, split.test_labels, result.model);
  return result;
}

double classification_accuracy(const Eigen::MatrixXd& x, std::span<const int> labels, const TclModel& model) {
  if (static_cast<Eigen::Index>(labels.size()) != x.cols()) throw trainer_error("label count != sample count");
  if (x.cols() == 0) return 0.0;
  return accuracy_from_logits(mlr_logits(model.mlr, features_forward(model.features, x)), labels);
}

double classification_accuracy(const ObservationSeries& data, const TclModel& model) {
  return classification_accuracy(data.values, data.labels, model);
}

TrainResult train_mlr_only(const Eigen::MatrixXd& x, std::span<const int> labels, TclModel model,
                           const TrainConfig& cfg) {
  check_inputs(x, labels, model, cfg);
  const Eigen::MatrixXd h = features_forward(model.features, x);
  TrainResult result;
  auto& history = result.history;
  history.initial_loss = mlr_loss(h, labels, model.mlr, cfg.l2_weight);

  Eigen::VectorXd flat = pack_mlr(model.mlr);
  momentum_descent(
      h, labels, flat, cfg, history,
      [&](const Eigen::MatrixXd& bh, std::span<const int> by) {
        TclGradients g = mlr_gradients(bh, by, model.mlr, cfg.l2_weight);
        return StepOutput{pack_mlr(g.grad.mlr), g.loss, g.correct};
      },
      [&](const Eigen::VectorXd& p) { unpack_mlr(p, model.mlr); });

  history.final_loss = mlr_loss(h, labels, model.mlr, cfg.l2_weight);
  history.loss_increased = history.final_loss > history.initial_loss;
  result.model = std::move(model);
  return result;
}

double chance_level(const ObservationSeries& data, const TclModel& fresh_model, const TrainConfig& cfg) {
  cfg.validate();
  const HeldOutSplit split = split_heldout(data, cfg.heldout_fraction);
  const TrainResult trained = train_mlr_only(split.train_x, split.train_labels, fresh_model, cfg);
  if (split.test_labels.empty()) return classification_accuracy(split.train_x, split.train_labels, trained.model);
  return classification_accuracy(split.test_x, split.test_labels, trained.model);
}

std::string training_log_csv(const TrainHistory& history) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,loss,accuracy\n";
  for (std::size_t e = 0; e < history.loss.size(); ++e) {
    os << e << ',' << history.loss[e] << ',' << history.accuracy[e] << '\n';
  }
  return os.str();
}

void write_training_log(const std::filesystem::path& path, const TrainHistory& history) {
  write_text_atomic(path, training_log_csv(history));
}

}  // namespace tcl
