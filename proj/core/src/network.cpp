#include "tcl/network.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "json_util.hpp"
#include "tcl/dataset_io.hpp"
#include "tcl/error.hpp"

namespace tcl {

namespace {

Error network_error(const std::string& msg) { return Error("network", msg); }

void glorot_fill(Eigen::MatrixXd& w, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
  std::uniform_real_distribution<double> uniform(-bound, bound);
  for (Eigen::Index c = 0; c < w.cols(); ++c) {
    for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = uniform(rng);
  }
}

AffineMap make_affine(Eigen::Index in, Eigen::Index out, std::mt19937_64& rng) {
  AffineMap a{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
  glorot_fill(a.weight, rng);
  return a;
}

void check_labels(std::span<const int> labels, Eigen::Index classes) {
  for (int label : labels) {
    if (label < 0 || label >= classes) {
      throw network_error("label " + std::to_string(label) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

template <class Model>
Model zeros_like(const Model& model) {
  Model z = model;
  for_each_block(z, [](auto& block) { block.setZero(); });
  return z;
}

// Cross-entropy residual (P - Y) / B for a batch, plus loss and hit count.
struct SoftmaxResidual {
  Eigen::MatrixXd delta;
  double data_loss = 0.0;
  Eigen::Index correct = 0;
};

// Column-wise max-shifted exponentials and their log normalizers.
struct ShiftedExp {
  Eigen::MatrixXd prob;
  Eigen::RowVectorXd log_norm;
};

ShiftedExp shifted_softmax(const Eigen::MatrixXd& logits) {
  ShiftedExp out;
  const Eigen::RowVectorXd shift = logits.colwise().maxCoeff();
  out.prob = logits.rowwise() - shift;
  out.prob = out.prob.array().exp().matrix();
  const Eigen::RowVectorXd sums = out.prob.colwise().sum();
  out.prob.array().rowwise() /= sums.array();
  out.log_norm = shift.array() + sums.array().log();
  return out;
}

SoftmaxResidual softmax_residual(const Eigen::MatrixXd& logits, std::span<const int> labels) {
  SoftmaxResidual out;
  const Eigen::Index batch = logits.cols();
  if (batch == 0) {
    out.delta = Eigen::MatrixXd::Zero(logits.rows(), 0);
    return out;
  }
  ShiftedExp sm = shifted_softmax(logits);
  out.delta = std::move(sm.prob);
  const std::vector<int> predicted = predict_labels(logits);
  for (Eigen::Index j = 0; j < batch; ++j) {
    const int y = labels[static_cast<std::size_t>(j)];
    out.data_loss += sm.log_norm(j) - logits(y, j);
    out.delta(y, j) -= 1.0;
    if (predicted[static_cast<std::size_t>(j)] == y) ++out.correct;
  }
  out.data_loss /= static_cast<double>(batch);
  out.delta /= static_cast<double>(batch);
  return out;
}

void accumulate_mlr_grad(const Eigen::MatrixXd& h, const Eigen::MatrixXd& delta, const MlrParams& mlr,
                         double l2_weight, MlrParams& grad) {
  grad.weights.noalias() = h * delta.transpose();
  grad.biases = delta.rowwise().sum();
  grad.weights += 2.0 * l2_weight * mlr.weights;
  grad.weights.col(0).setZero();
  grad.biases(0) = 0.0;
}

}  // namespace

std::string_view activation_name(OutputActivation a) noexcept {
  return a == OutputActivation::kAbs ? "abs" : "adaptive";
}

OutputActivation activation_from_name(std::string_view name) {
  if (name == "abs") return OutputActivation::kAbs;
  if (name == "adaptive") return OutputActivation::kAdaptive;
  throw network_error("unknown output activation '" + std::string(name) + "'");
}

void NetworkShape::validate() const {
  if (input_dim < 1) throw network_error("input_dim must be >= 1");
  if (output_dim < 1) throw network_error("output_dim must be >= 1");
  if (classes < 2) throw network_error("need at least 2 classes");
  for (int w : hidden_widths) {
    if (w < 1) throw network_error("hidden widths must be >= 1");
  }
  if (!hidden_widths.empty() && groups < 2) throw network_error("maxout layers need G >= 2 groups");
}

TclModel init_params(const NetworkShape& shape, std::uint64_t seed) {
  shape.validate();
  std::mt19937_64 rng(seed);
  TclModel model;
  Eigen::Index in = shape.input_dim;
  for (int width : shape.hidden_widths) {
    MaxoutLayer layer;
    for (int g = 0; g < shape.groups; ++g) layer.groups.push_back(make_affine(in, width, rng));
    model.features.hidden.push_back(std::move(layer));
    in = width;
  }
  model.features.output = make_affine(in, shape.output_dim, rng);
  model.features.activation = shape.activation;
  if (shape.activation == OutputActivation::kAdaptive) {
    model.features.adaptive_slope = Eigen::VectorXd::Constant(shape.output_dim, -1.0);
  }
  model.mlr.weights.resize(shape.output_dim, shape.classes);
  glorot_fill(model.mlr.weights, rng);
  model.mlr.weights.col(0).setZero();
  model.mlr.biases = Eigen::VectorXd::Zero(shape.classes);
  return model;
}

NetworkShape shape_of(const TclModel& model) {
  NetworkShape shape;
  shape.input_dim = static_cast<int>(model.features.input_dim());
  for (const auto& layer : model.features.hidden) shape.hidden_widths.push_back(static_cast<int>(layer.out_dim()));
  shape.output_dim = static_cast<int>(model.features.output_dim());
  shape.classes = static_cast<int>(model.mlr.classes());
  shape.groups = model.features.hidden.empty() ? 2 : static_cast<int>(model.features.hidden.front().groups.size());
  shape.activation = model.features.activation;
  return shape;
}

Eigen::MatrixXd features_forward(const FeatureExtractorParams& params, const Eigen::MatrixXd& x,
                                 ForwardCache& cache) {
  if (x.rows() != params.input_dim()) {
    throw network_error("features_forward: input dimension " + std::to_string(x.rows()) + " != " +
                        std::to_string(params.input_dim()));
  }
  cache.layer_inputs.clear();
  cache.winners.clear();
  Eigen::MatrixXd a = x;
  for (const auto& layer : params.hidden) {
    const auto& first = layer.groups.front();
    Eigen::MatrixXd best = (first.weight * a).colwise() + first.bias;
    Eigen::MatrixXi winner = Eigen::MatrixXi::Zero(best.rows(), best.cols());
    for (std::size_t g = 1; g < layer.groups.size(); ++g) {
      const auto& grp = layer.groups[g];
      const Eigen::MatrixXd z = (grp.weight * a).colwise() + grp.bias;
      for (Eigen::Index j = 0; j < z.cols(); ++j) {
        for (Eigen::Index i = 0; i < z.rows(); ++i) {
          if (z(i, j) > best(i, j)) {
            best(i, j) = z(i, j);
            winner(i, j) = static_cast<int>(g);
          }
        }
      }
    }
    cache.layer_inputs.push_back(std::move(a));
    cache.winners.push_back(std::move(winner));
    a = std::move(best);
  }
  cache.output_pre = (params.output.weight * a).colwise() + params.output.bias;
  cache.layer_inputs.push_back(std::move(a));

  if (params.activation == OutputActivation::kAbs) return cache.output_pre.cwiseAbs();
  Eigen::MatrixXd h(cache.output_pre.rows(), cache.output_pre.cols());
  for (Eigen::Index j = 0; j < h.cols(); ++j) {
    for (Eigen::Index i = 0; i < h.rows(); ++i) {
      const double z = cache.output_pre(i, j);
      h(i, j) = std::max(z, params.adaptive_slope(i) * z);
    }
  }
  return h;
}

Eigen::MatrixXd features_forward(const FeatureExtractorParams& params, const Eigen::MatrixXd& x) {
  ForwardCache cache;
  return features_forward(params, x, cache);
}

Eigen::MatrixXd mlr_logits(const MlrParams& mlr, const Eigen::MatrixXd& h) {
  if (h.rows() != mlr.weights.rows()) {
    throw network_error("mlr: feature dimension " + std::to_string(h.rows()) + " != " +
                        std::to_string(mlr.weights.rows()));
  }
  Eigen::MatrixXd logits = mlr.weights.transpose() * h;
  logits.colwise() += mlr.biases;
  return logits;
}

Eigen::MatrixXd softmax_columns(const Eigen::MatrixXd& logits) {
  if (logits.cols() == 0) return Eigen::MatrixXd::Zero(logits.rows(), 0);
  return shifted_softmax(logits).prob;
}

Eigen::VectorXd mlr_posterior(const Eigen::VectorXd& h, const MlrParams& mlr) {
  const Eigen::MatrixXd logits = mlr_logits(mlr, h);
  if (!logits.allFinite()) throw network_error("mlr_posterior: non-finite logits");
  return softmax_columns(logits).col(0);
}

double l2_penalty(const TclModel& model) {
  double sum = 0.0;
  for (const auto& layer : model.features.hidden) {
    for (const auto& g : layer.groups) sum += g.weight.squaredNorm();
  }
  sum += model.features.output.weight.squaredNorm();
  sum += model.mlr.weights.squaredNorm();
  return sum;
}

std::vector<int> predict_labels(const Eigen::MatrixXd& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.cols()));
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    Eigen::Index best = 0;
    for (Eigen::Index r = 1; r < logits.rows(); ++r) {
      if (logits(r, j) > logits(best, j)) best = r;
    }
    out[static_cast<std::size_t>(j)] = static_cast<int>(best);
  }
  return out;
}

double tcl_loss(const Eigen::MatrixXd& x, std::span<const int> labels, const TclModel& model, double l2_weight) {
  if (static_cast<Eigen::Index>(labels.size()) != x.cols()) throw network_error("label count != sample count");
  check_labels(labels, model.mlr.classes());
  double data = 0.0;
  if (x.cols() > 0) {
    const Eigen::MatrixXd logits = mlr_logits(model.mlr, features_forward(model.features, x));
    const ShiftedExp sm = shifted_softmax(logits);
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      data += sm.log_norm(j) - logits(labels[static_cast<std::size_t>(j)], j);
    }
    data /= static_cast<double>(x.cols());
  }
  return data + l2_weight * l2_penalty(model);
}

TclGradients mlr_gradients(const Eigen::MatrixXd& h, std::span<const int> labels, const MlrParams& mlr,
                           double l2_weight) {
  if (static_cast<Eigen::Index>(labels.size()) != h.cols()) throw network_error("label count != sample count");
  check_labels(labels, mlr.classes());
  SoftmaxResidual res = softmax_residual(mlr_logits(mlr, h), labels);
  TclGradients out;
  accumulate_mlr_grad(h, res.delta, mlr, l2_weight, out.grad.mlr);
  out.loss = res.data_loss + l2_weight * mlr.weights.squaredNorm();
  out.correct = res.correct;
  if (!std::isfinite(out.loss)) throw network_error("non-finite loss");
  return out;
}

TclGradients tcl_gradients(const Eigen::MatrixXd& x, std::span<const int> labels, const TclModel& model,
                           double l2_weight) {
  if (static_cast<Eigen::Index>(labels.size()) != x.cols()) throw network_error("label count != sample count");
  check_labels(labels, model.mlr.classes());

  TclGradients out;
  out.grad = zeros_like(model);
  ForwardCache cache;
  const Eigen::MatrixXd h = features_forward(model.features, x, cache);
  SoftmaxResidual res = softmax_residual(mlr_logits(model.mlr, h), labels);
  out.loss = res.data_loss + l2_weight * l2_penalty(model);
  out.correct = res.correct;
  if (!std::isfinite(out.loss)) throw network_error("non-finite loss");

  accumulate_mlr_grad(h, res.delta, model.mlr, l2_weight, out.grad.mlr);
  const Eigen::MatrixXd dh = model.mlr.weights * res.delta;

  // Output activation.
  const auto& params = model.features;
  auto& gfeat = out.grad.features;
  Eigen::MatrixXd dz(dh.rows(), dh.cols());
  if (params.activation == OutputActivation::kAbs) {
    for (Eigen::Index j = 0; j < dz.cols(); ++j) {
      for (Eigen::Index i = 0; i < dz.rows(); ++i) {
        const double z = cache.output_pre(i, j);
        dz(i, j) = z > 0.0 ? dh(i, j) : (z < 0.0 ? -dh(i, j) : 0.0);
      }
    }
  } else {
    for (Eigen::Index j = 0; j < dz.cols(); ++j) {
      for (Eigen::Index i = 0; i < dz.rows(); ++i) {
        const double z = cache.output_pre(i, j);
        const double a = params.adaptive_slope(i);
        if (z >= a * z) {
          dz(i, j) = dh(i, j);
        } else {
          dz(i, j) = a * dh(i, j);
          gfeat.adaptive_slope(i) += z * dh(i, j);
        }
      }
    }
  }

  const Eigen::MatrixXd& out_in = cache.layer_inputs.back();
  gfeat.output.weight.noalias() = dz * out_in.transpose();
  gfeat.output.weight += 2.0 * l2_weight * params.output.weight;
  gfeat.output.bias = dz.rowwise().sum();
  Eigen::MatrixXd upstream = params.output.weight.transpose() * dz;

  for (std::size_t k = params.hidden.size(); k-- > 0;) {
    const auto& layer = params.hidden[k];
    auto& glayer = gfeat.hidden[k];
    const Eigen::MatrixXd& in = cache.layer_inputs[k];
    const Eigen::MatrixXi& winner = cache.winners[k];
    Eigen::MatrixXd down = Eigen::MatrixXd::Zero(in.rows(), in.cols());
    for (std::size_t g = 0; g < layer.groups.size(); ++g) {
      const Eigen::MatrixXd routed =
          (winner.array() == static_cast<int>(g)).select(upstream, Eigen::MatrixXd::Zero(upstream.rows(), upstream.cols()));
      glayer.groups[g].weight.noalias() = routed * in.transpose();
      glayer.groups[g].weight += 2.0 * l2_weight * layer.groups[g].weight;
      glayer.groups[g].bias = routed.rowwise().sum();
      if (k > 0) down.noalias() += layer.groups[g].weight.transpose() * routed;
    }
    upstream = std::move(down);
  }
  return out;
}

Eigen::Index parameter_count(const TclModel& model) {
  Eigen::Index count = 0;
  for_each_block(model, [&](const auto& block) { count += block.size(); });
  return count;
}

Eigen::VectorXd pack_parameters(const TclModel& model) {
  Eigen::VectorXd flat(parameter_count(model));
  Eigen::Index offset = 0;
  for_each_block(model, [&](const auto& block) {
    flat.segment(offset, block.size()) = Eigen::Map<const Eigen::VectorXd>(block.data(), block.size());
    offset += block.size();
  });
  return flat;
}

void unpack_parameters(const Eigen::VectorXd& flat, TclModel& model) {
  if (flat.size() != parameter_count(model)) {
    throw network_error("unpack_parameters: expected " + std::to_string(parameter_count(model)) + " values, got " +
                        std::to_string(flat.size()));
  }
  Eigen::Index offset = 0;
  for_each_block(model, [&](auto& block) {
    Eigen::Map<Eigen::VectorXd>(block.data(), block.size()) = flat.segment(offset, block.size());
    offset += block.size();
  });
}

void save_checkpoint(const std::filesystem::path& dir, const TclModel& model, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  const NetworkShape shape = shape_of(model);
  nlohmann::json header;
  header["format"] = "tcl-checkpoint";
  header["version"] = 1;
  header["input_dim"] = shape.input_dim;
  header["hidden_widths"] = shape.hidden_widths;
  header["output_dim"] = shape.output_dim;
  header["classes"] = shape.classes;
  header["groups"] = shape.groups;
  header["activation"] = std::string(activation_name(shape.activation));
  header["seed"] = seed;
  header["parameter_count"] = parameter_count(model);
  header["payload"] = "checkpoint.f64";
  const Eigen::VectorXd flat = pack_parameters(model);
  write_f64_file(dir / "checkpoint.f64", std::span<const double>(flat.data(), static_cast<std::size_t>(flat.size())));
  write_text_atomic(dir / "checkpoint.json", header.dump(2) + "\n");
}

TclModel load_checkpoint(const std::filesystem::path& dir, std::uint64_t* seed) {
  const nlohmann::json header = detail::read_json_file(dir / "checkpoint.json");
  try {
    if (header.at("format") != "tcl-checkpoint") throw network_error("not a tcl checkpoint: " + dir.string());
    NetworkShape shape;
    shape.input_dim = header.at("input_dim");
    shape.hidden_widths = header.at("hidden_widths").get<std::vector<int>>();
    shape.output_dim = header.at("output_dim");
    shape.classes = header.at("classes");
    shape.groups = header.at("groups");
    shape.activation = activation_from_name(header.at("activation").get<std::string>());
    TclModel model = init_params(shape, 0);
    const std::vector<double> payload = read_f64_file(dir / header.at("payload").get<std::string>());
    unpack_parameters(Eigen::Map<const Eigen::VectorXd>(payload.data(), static_cast<Eigen::Index>(payload.size())),
                      model);
    if (seed != nullptr) *seed = header.at("seed").get<std::uint64_t>();
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw network_error("malformed checkpoint header in " + dir.string() + ": " + e.what());
  }
}

}  // namespace tcl
