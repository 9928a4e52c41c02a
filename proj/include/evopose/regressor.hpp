#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "evopose/error.hpp"

namespace evopose {

// Activations are stored feature-major: one column per sample.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct LearnerConfig {
  int width = 1024;
  int blocks = 3;
  double dropout = 0.5;
  int input_dim = 34;
  int output_dim = 51;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  void validate() const;
  bool operator==(const LearnerConfig&) const = default;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  int epochs = 200;
  int batch_size = 64;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t rng_seed = 0;
  int stages = 3;                  // cascade length T
  bool concat_prediction = false;  // feed [x; current estimate] to every learner

  void validate() const;
};

struct Dense {
  Matrix W;  // out x in
  Vector b;
};

struct BatchNorm {
  Vector gamma;
  Vector beta;
  Vector running_mean;
  Vector running_var;
};

// dense -> batch norm -> rectifier -> dropout
struct Layer {
  Dense dense;
  BatchNorm bn;
};

struct DeepLearner {
  LearnerConfig config;
  Layer input;
  std::vector<Layer> blocks;  // 2 per residual block
  Dense output;

  // Uniform(+-1/sqrt(fan_in)) dense weights, unit gamma, zero beta.
  static DeepLearner init(const LearnerConfig& config, std::mt19937_64& rng, bool zero_output = false);
  static DeepLearner zeros_like(const DeepLearner& shape);

  int layer_count() const noexcept { return 1 + static_cast<int>(blocks.size()); }
  const Layer& layer(int i) const { return i == 0 ? input : blocks.at(static_cast<std::size_t>(i - 1)); }
  Layer& layer(int i) { return i == 0 ? input : blocks.at(static_cast<std::size_t>(i - 1)); }
};

struct ParamView {
  double* data;
  Eigen::Index size;
  std::string name;
};

// Trainable tensors in a fixed order (running statistics excluded).
std::vector<ParamView> parameters(DeepLearner& learner);

enum class Mode { Train, Eval };

// Inverted-dropout multipliers (0 or 1/(1-p)), one matrix per layer.
struct DropoutMasks {
  std::vector<Matrix> masks;
};

DropoutMasks sample_masks(const DeepLearner& learner, Eigen::Index batch, std::mt19937_64& rng);

// Train mode draws fresh dropout masks from rng; Eval mode uses running
// statistics and no dropout, rng may be null.
Matrix forward(const DeepLearner& learner, const Matrix& inputs, Mode mode, std::mt19937_64* rng = nullptr);
Matrix forward(const DeepLearner& learner, const Matrix& inputs, const DropoutMasks& masks);

struct BatchStatistics {
  std::vector<Vector> mean;
  std::vector<Vector> var;  // biased
};

struct GradientResult {
  DeepLearner grads;  // same layout as the learner; running stats unused
  double loss = 0.0;
  BatchStatistics stats;
};

// Mean-squared-error loss over all coordinates and its exact gradient for the
// given dropout masks.
GradientResult gradients(const DeepLearner& learner, const Matrix& inputs, const Matrix& targets,
                         const DropoutMasks& masks);
double loss(const DeepLearner& learner, const Matrix& inputs, const Matrix& targets, const DropoutMasks& masks);

// Exponential moving update of running mean and (unbiased) variance.
void update_running_stats(DeepLearner& learner, const BatchStatistics& stats, Eigen::Index batch);

struct AdamState {
  std::vector<Vector> m;
  std::vector<Vector> v;
  long step = 0;
};

void adam_step(DeepLearner& learner, DeepLearner& grads, AdamState& state, const TrainConfig& config);

struct NormStats {
  Vector in_mean, in_std, out_mean, out_std;

  static NormStats from_data(const Matrix& X, const Matrix& Y);
  bool operator==(const NormStats& other) const;
};

struct Cascade {
  LearnerConfig config;
  bool concat_prediction = false;
  NormStats stats;
  std::vector<DeepLearner> learners;

  // Sum of the learners' Eval outputs in normalized space.
  Matrix predict_normalized(const Matrix& inputs) const;
  // inputs: 34 x N pixel coordinates; returns 51 x N millimetres.
  Matrix predict(const Matrix& inputs) const;
};

struct TrainLog {
  std::vector<double> stage_mpjpe;               // training MPJPE after each stage, mm
  std::vector<std::vector<double>> epoch_loss;   // per stage, mean minibatch loss
  std::vector<std::vector<double>> epoch_mpjpe;  // per stage, eval-mode MPJPE; entry 0 is untrained
  std::vector<int> best_epoch;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& message, Cascade partial, TrainLog log);
  const Cascade& partial() const noexcept { return partial_; }
  const TrainLog& log() const noexcept { return log_; }

 private:
  Cascade partial_;
  TrainLog log_;
};

// Mean per-joint distance between two 3J x N coordinate matrices.
double mpjpe_columns(const Matrix& pred, const Matrix& gt);

using EpochCallback = std::function<void(int stage, int epoch, double loss, double mpjpe)>;

// X: 34 x N keypoints (px), Y: 51 x N root-relative targets (mm). Each stage
// keeps the epoch with the lowest training MPJPE, counting its untrained state.
Cascade train_cascade(const Matrix& X, const Matrix& Y, const LearnerConfig& learner_config,
                      const TrainConfig& train_config, TrainLog* log = nullptr,
                      const EpochCallback& on_epoch = {});

}  // namespace evopose
