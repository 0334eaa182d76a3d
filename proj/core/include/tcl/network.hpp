#pragma once

// Feature extractor (maxout hidden layers, absolute-value or adaptive output
// units) and the multinomial logistic regression head used to discriminate
// time segments.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace tcl {

enum class OutputActivation {
  kAbs,       ///< |z|, subgradient 0 at z = 0.
  kAdaptive,  ///< max(z, a z) with one learnable a per unit.
};

std::string_view activation_name(OutputActivation a) noexcept;
OutputActivation activation_from_name(std::string_view name);

struct AffineMap {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;

  Eigen::Index in_dim() const noexcept { return weight.cols(); }
  Eigen::Index out_dim() const noexcept { return weight.rows(); }
};

/// Coordinate-wise maximum over G affine groups. Ties go to the lowest group.
struct MaxoutLayer {
  std::vector<AffineMap> groups;

  Eigen::Index out_dim() const noexcept { return groups.front().out_dim(); }
};

struct FeatureExtractorParams {
  std::vector<MaxoutLayer> hidden;
  AffineMap output;
  OutputActivation activation = OutputActivation::kAbs;
  /// Slope a of the adaptive unit; empty when activation is kAbs.
  Eigen::VectorXd adaptive_slope;

  Eigen::Index input_dim() const noexcept {
    return hidden.empty() ? output.in_dim() : hidden.front().groups.front().in_dim();
  }
  Eigen::Index output_dim() const noexcept { return output.out_dim(); }
};

/// Logit of class tau is weights.col(tau) . h + biases(tau). Class 0 is the
/// pivot; its column and bias stay at zero.
struct MlrParams {
  Eigen::MatrixXd weights;  // m x T
  Eigen::VectorXd biases;   // T

  Eigen::Index classes() const noexcept { return biases.size(); }
};

struct TclModel {
  FeatureExtractorParams features;
  MlrParams mlr;
};

struct NetworkShape {
  int input_dim = 0;
  std::vector<int> hidden_widths;
  int output_dim = 0;
  int classes = 0;
  int groups = 2;
  OutputActivation activation = OutputActivation::kAbs;

  void validate() const;
};

/// Glorot-uniform weights, zero biases, zero pivot, adaptive slopes at -1.
TclModel init_params(const NetworkShape& shape, std::uint64_t seed);

NetworkShape shape_of(const TclModel& model);

/// Intermediate values kept by the forward pass for backpropagation.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> layer_inputs;  // input of each hidden layer, then of the output layer
  std::vector<Eigen::MatrixXi> winners;       // winning group per hidden unit and sample
  Eigen::MatrixXd output_pre;                 // output layer pre-activation
};

/// Features for each column of x. m x N.
Eigen::MatrixXd features_forward(const FeatureExtractorParams& params, const Eigen::MatrixXd& x);
Eigen::MatrixXd features_forward(const FeatureExtractorParams& params, const Eigen::MatrixXd& x,
                                 ForwardCache& cache);

/// T x N logits; row 0 is identically zero.
Eigen::MatrixXd mlr_logits(const MlrParams& mlr, const Eigen::MatrixXd& h);

/// Column-wise softmax, max-shifted.
Eigen::MatrixXd softmax_columns(const Eigen::MatrixXd& logits);

/// Posterior over segments for a single feature vector.
Eigen::VectorXd mlr_posterior(const Eigen::VectorXd& h, const MlrParams& mlr);

/// Sum of squared weights (biases and adaptive slopes excluded).
double l2_penalty(const TclModel& model);

/// Mean negative log posterior of the labels plus l2_weight * l2_penalty.
/// An empty batch contributes zero data loss.
double tcl_loss(const Eigen::MatrixXd& x, std::span<const int> labels, const TclModel& model, double l2_weight);

/// Gradient of tcl_loss, stored in a model-shaped container.
struct TclGradients {
  TclModel grad;
  double loss = 0.0;
  Eigen::Index correct = 0;  // argmax hits in the batch
};

TclGradients tcl_gradients(const Eigen::MatrixXd& x, std::span<const int> labels, const TclModel& model,
                           double l2_weight);

/// Gradient with respect to the MLR head only, given fixed features.
TclGradients mlr_gradients(const Eigen::MatrixXd& h, std::span<const int> labels, const MlrParams& mlr,
                           double l2_weight);

/// Calls fn(block) for every parameter block in a fixed order. Blocks are
/// Eigen::Ref<Eigen::MatrixXd> for matrices and Eigen::Ref<Eigen::VectorXd>
/// for vectors.
template <class Model, class Fn>
void for_each_block(Model& model, Fn&& fn) {
  for (auto& layer : model.features.hidden) {
    for (auto& g : layer.groups) {
      fn(g.weight);
      fn(g.bias);
    }
  }
  fn(model.features.output.weight);
  fn(model.features.output.bias);
  if (model.features.activation == OutputActivation::kAdaptive) fn(model.features.adaptive_slope);
  fn(model.mlr.weights);
  fn(model.mlr.biases);
}

Eigen::Index parameter_count(const TclModel& model);
Eigen::VectorXd pack_parameters(const TclModel& model);
/// Overwrites the parameters of `model` (which fixes the shapes) from a flat vector.
void unpack_parameters(const Eigen::VectorXd& flat, TclModel& model);

/// Argmax class per column, ties to the lower index.
std::vector<int> predict_labels(const Eigen::MatrixXd& logits);

/// Checkpoint: `checkpoint.json` header with shapes, plus `checkpoint.f64`
/// holding pack_parameters() as little-endian doubles.
void save_checkpoint(const std::filesystem::path& dir, const TclModel& model, std::uint64_t seed);
TclModel load_checkpoint(const std::filesystem::path& dir, std::uint64_t* seed = nullptr);

}  // namespace tcl
