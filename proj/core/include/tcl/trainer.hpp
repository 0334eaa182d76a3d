#pragma once

// Minibatch gradient descent with classic momentum on the segment
// discrimination objective.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "tcl/datagen.hpp"
#include "tcl/network.hpp"

namespace tcl {

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  int batch_size = 256;
  int epochs = 100;
  double l2_weight = 1e-4;
  std::uint64_t seed = 0;
  /// Learning rate is multiplied by this factor after every epoch.
  double lr_decay = 0.999;
  /// Share of every segment (its tail) kept out of training for accuracy reporting.
  double heldout_fraction = 0.1;

  void validate() const;
};

struct TrainHistory {
  std::vector<double> loss;      // per-epoch mean minibatch loss
  std::vector<double> accuracy;  // per-epoch minibatch training accuracy
  double initial_loss = 0.0;     // full training-set loss before the first step
  double final_loss = 0.0;       // and after the last
  double heldout_accuracy = 0.0;
  bool loss_increased = false;   // final_loss > initial_loss
};

struct TrainResult {
  TclModel model;
  TrainHistory history;
};

struct HeldOutSplit {
  Eigen::MatrixXd train_x;
  std::vector<int> train_labels;
  Eigen::MatrixXd test_x;
  std::vector<int> test_labels;
};

/// Moves the last `fraction` of each segment into the test part.
HeldOutSplit split_heldout(const ObservationSeries& data, double fraction);

/// Trains on explicit arrays. Held-out accuracy is left at 0.
TrainResult train_tcl(const Eigen::MatrixXd& x, std::span<const int> labels, TclModel model, const TrainConfig& cfg);

/// Splits off the held-out tail of every segment, trains on the rest and
/// reports held-out accuracy.
TrainResult train_tcl(const ObservationSeries& data, TclModel model, const TrainConfig& cfg);

/// Fraction of samples whose posterior argmax (ties to the lower class) is the label.
double classification_accuracy(const Eigen::MatrixXd& x, std::span<const int> labels, const TclModel& model);
double classification_accuracy(const ObservationSeries& data, const TclModel& model);

/// Trains only the MLR head on top of the given (frozen) feature extractor.
TrainResult train_mlr_only(const Eigen::MatrixXd& x, std::span<const int> labels, TclModel model,
                           const TrainConfig& cfg);

/// Held-out accuracy of a frozen, randomly initialized feature extractor with
/// a trained MLR head.
double chance_level(const ObservationSeries& data, const TclModel& fresh_model, const TrainConfig& cfg);

/// CSV with header `epoch,loss,accuracy`.
std::string training_log_csv(const TrainHistory& history);
void write_training_log(const std::filesystem::path& path, const TrainHistory& history);

}  // namespace tcl
