#include "evopose/regressor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace evopose {

namespace {

struct LayerCache {
  Matrix x;      // layer input
  Matrix xhat;   // normalized pre-activation
  Vector inv_std;
  Matrix y;      // batch-norm output (before the rectifier)
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  Matrix last_hidden;
};

void check_input(const DeepLearner& learner, const Matrix& inputs) {
  if (inputs.rows() != learner.config.input_dim) {
    throw Error(ErrorCode::ShapeMismatch, "learner expects " + std::to_string(learner.config.input_dim) +
                                              " input rows, got " + std::to_string(inputs.rows()));
  }
}

Matrix layer_forward(const Layer& L, const Matrix& x, const Matrix* mask, bool train, double eps,
                     LayerCache* cache, Vector* batch_mean, Vector* batch_var) {
  Matrix z = L.dense.W * x;
  z.colwise() += L.dense.b;
  Matrix xhat;
  Vector inv_std;
  if (train) {
    const Vector mu = z.rowwise().mean();
    z.colwise() -= mu;
    const Vector var = z.array().square().rowwise().mean();
    inv_std = (var.array() + eps).rsqrt();
    xhat = z.array().colwise() * inv_std.array();
    if (batch_mean) *batch_mean = mu;
    if (batch_var) *batch_var = var;
  } else {
    inv_std = (L.bn.running_var.array() + eps).rsqrt();
    xhat = (z.colwise() - L.bn.running_mean).array().colwise() * inv_std.array();
  }
  Matrix y = (xhat.array().colwise() * L.bn.gamma.array()).colwise() + L.bn.beta.array();
  Matrix out = y.cwiseMax(0.0);
  if (mask) out.array() *= mask->array();
  if (cache) {
    cache->x = x;
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->y = std::move(y);
  }
  return out;
}

// Returns dL/dx and accumulates parameter gradients into G.
Matrix layer_backward(const Layer& L, Layer& G, const LayerCache& c, const Matrix& dout, const Matrix* mask) {
  const double B = static_cast<double>(dout.cols());
  Matrix dy = dout;
  if (mask) dy.array() *= mask->array();
  dy.array() *= (c.y.array() > 0.0).cast<double>();
  G.bn.gamma = (dy.array() * c.xhat.array()).rowwise().sum();
  G.bn.beta = dy.rowwise().sum();
  const Matrix dxhat = dy.array().colwise() * L.bn.gamma.array();
  const Vector sum_dxhat = dxhat.rowwise().sum();
  const Vector sum_dxhat_xhat = (dxhat.array() * c.xhat.array()).rowwise().sum();
  Matrix dz = (B * dxhat.array()).colwise() - sum_dxhat.array();
  dz.array() -= c.xhat.array().colwise() * sum_dxhat_xhat.array();
  dz.array().colwise() *= c.inv_std.array() / B;
  G.dense.W = dz * c.x.transpose();
  G.dense.b = dz.rowwise().sum();
  return L.dense.W.transpose() * dz;
}

Matrix network_forward(const DeepLearner& learner, const Matrix& inputs, const DropoutMasks* masks, bool train,
                       ForwardCache* cache, BatchStatistics* stats) {
  check_input(learner, inputs);
  if (train && inputs.cols() < 2) {
    throw Error(ErrorCode::BatchTooSmall, "batch normalization needs at least 2 samples in training mode");
  }
  const int n = learner.layer_count();
  if (masks && static_cast<int>(masks->masks.size()) != n) {
    throw Error(ErrorCode::ShapeMismatch, "dropout mask count does not match the learner");
  }
  if (cache) cache->layers.resize(static_cast<std::size_t>(n));
  if (stats) {
    stats->mean.assign(static_cast<std::size_t>(n), Vector());
    stats->var.assign(static_cast<std::size_t>(n), Vector());
  }
  const double eps = learner.config.bn_eps;
  auto run = [&](int i, const Matrix& x) {
    const std::size_t k = static_cast<std::size_t>(i);
    return layer_forward(learner.layer(i), x, masks ? &masks->masks[k] : nullptr, train, eps,
                         cache ? &cache->layers[k] : nullptr, stats ? &stats->mean[k] : nullptr,
                         stats ? &stats->var[k] : nullptr);
  };
  Matrix h = run(0, inputs);
  for (int blk = 0; blk < learner.config.blocks; ++blk) {
    const Matrix t = run(2 * blk + 1, h);
    h += run(2 * blk + 2, t);
  }
  Matrix out = learner.output.W * h;
  out.colwise() += learner.output.b;
  if (cache) cache->last_hidden = std::move(h);
  return out;
}

void init_dense(Dense& d, int out, int in, std::mt19937_64& rng, bool zero) {
  d.W = Matrix::Zero(out, in);
  d.b = Vector::Zero(out);
  if (zero) return;
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (Eigen::Index i = 0; i < d.W.size(); ++i) d.W.data()[i] = u(rng);
  for (Eigen::Index i = 0; i < d.b.size(); ++i) d.b[i] = u(rng);
}

void init_layer(Layer& L, int out, int in, std::mt19937_64& rng) {
  init_dense(L.dense, out, in, rng, false);
  L.bn.gamma = Vector::Ones(out);
  L.bn.beta = Vector::Zero(out);
  L.bn.running_mean = Vector::Zero(out);
  L.bn.running_var = Vector::Ones(out);
}

}  // namespace

void LearnerConfig::validate() const {
  if (width < 4) throw Error(ErrorCode::InvalidConfig, "learner width must be >= 4");
  if (blocks < 0) throw Error(ErrorCode::InvalidConfig, "residual block count must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error(ErrorCode::InvalidConfig, "dropout must lie in [0, 1)");
  if (input_dim < 1 || output_dim < 1) throw Error(ErrorCode::InvalidConfig, "dimensions must be positive");
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) throw Error(ErrorCode::InvalidConfig, "bn_momentum must lie in (0, 1]");
  if (!(bn_eps > 0.0)) throw Error(ErrorCode::InvalidConfig, "bn_eps must be positive");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw Error(ErrorCode::InvalidConfig, "learning rate must be positive");
  if (epochs < 1) throw Error(ErrorCode::InvalidConfig, "epochs must be >= 1");
  if (batch_size < 1) throw Error(ErrorCode::InvalidConfig, "batch size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw Error(ErrorCode::InvalidConfig, "adam eps must be positive");
  if (stages < 1) throw Error(ErrorCode::InvalidConfig, "cascade needs at least one stage");
}

DeepLearner DeepLearner::init(const LearnerConfig& config, std::mt19937_64& rng, bool zero_output) {
  config.validate();
  DeepLearner L;
  L.config = config;
  init_layer(L.input, config.width, config.input_dim, rng);
  L.blocks.resize(static_cast<std::size_t>(2 * config.blocks));
  for (Layer& layer : L.blocks) init_layer(layer, config.width, config.width, rng);
  init_dense(L.output, config.output_dim, config.width, rng, zero_output);
  return L;
}

DeepLearner DeepLearner::zeros_like(const DeepLearner& shape) {
  DeepLearner z = shape;
  for (ParamView p : parameters(z)) std::fill(p.data, p.data + p.size, 0.0);
  return z;
}

std::vector<ParamView> parameters(DeepLearner& learner) {
  std::vector<ParamView> out;
  auto add_layer = [&](Layer& L, const std::string& name) {
    out.push_back({L.dense.W.data(), L.dense.W.size(), name + ".W"});
    out.push_back({L.dense.b.data(), L.dense.b.size(), name + ".b"});
    out.push_back({L.bn.gamma.data(), L.bn.gamma.size(), name + ".gamma"});
    out.push_back({L.bn.beta.data(), L.bn.beta.size(), name + ".beta"});
  };
  add_layer(learner.input, "input");
  for (std::size_t i = 0; i < learner.blocks.size(); ++i) {
    add_layer(learner.blocks[i], "block" + std::to_string(i / 2) + "." + std::to_string(i % 2));
  }
  out.push_back({learner.output.W.data(), learner.output.W.size(), "output.W"});
  out.push_back({learner.output.b.data(), learner.output.b.size(), "output.b"});
  return out;
}

DropoutMasks sample_masks(const DeepLearner& learner, Eigen::Index batch, std::mt19937_64& rng) {
  DropoutMasks m;
  const double p = learner.config.dropout;
  const double keep_scale = 1.0 / (1.0 - p);
  std::bernoulli_distribution keep(1.0 - p);
  for (int i = 0; i < learner.layer_count(); ++i) {
    Matrix mask(learner.config.width, batch);
    if (p == 0.0) {
      mask.setOnes();
    } else {
      for (Eigen::Index k = 0; k < mask.size(); ++k) mask.data()[k] = keep(rng) ? keep_scale : 0.0;
    }
    m.masks.push_back(std::move(mask));
  }
  return m;
}

Matrix forward(const DeepLearner& learner, const Matrix& inputs, Mode mode, std::mt19937_64* rng) {
  if (mode == Mode::Eval) return network_forward(learner, inputs, nullptr, false, nullptr, nullptr);
  if (!rng) throw Error(ErrorCode::InvalidInput, "training-mode forward needs a random generator");
  if (inputs.cols() < 2) throw Error(ErrorCode::BatchTooSmall, "batch normalization needs at least 2 samples in training mode");
  const DropoutMasks masks = sample_masks(learner, inputs.cols(), *rng);
  return network_forward(learner, inputs, &masks, true, nullptr, nullptr);
}

Matrix forward(const DeepLearner& learner, const Matrix& inputs, const DropoutMasks& masks) {
  return network_forward(learner, inputs, &masks, true, nullptr, nullptr);
}

double loss(const DeepLearner& learner, const Matrix& inputs, const Matrix& targets, const DropoutMasks& masks) {
  const Matrix y = forward(learner, inputs, masks);
  if (y.rows() != targets.rows() || y.cols() != targets.cols()) throw Error(ErrorCode::ShapeMismatch, "target shape mismatch");
  return (y - targets).squaredNorm() / static_cast<double>(y.size());
}

GradientResult gradients(const DeepLearner& learner, const Matrix& inputs, const Matrix& targets,
                         const DropoutMasks& masks) {
  ForwardCache cache;
  GradientResult r;
  const Matrix y = network_forward(learner, inputs, &masks, true, &cache, &r.stats);
  if (y.rows() != targets.rows() || y.cols() != targets.cols()) throw Error(ErrorCode::ShapeMismatch, "target shape mismatch");
  const Matrix diff = y - targets;
  r.loss = diff.squaredNorm() / static_cast<double>(diff.size());
  if (!std::isfinite(r.loss)) throw Error(ErrorCode::NumericalDivergence, "non-finite training loss");

  r.grads = DeepLearner::zeros_like(learner);
  const Matrix dy = (2.0 / static_cast<double>(diff.size())) * diff;
  r.grads.output.W = dy * cache.last_hidden.transpose();
  r.grads.output.b = dy.rowwise().sum();
  Matrix dh = learner.output.W.transpose() * dy;
  for (int blk = learner.config.blocks - 1; blk >= 0; --blk) {
    const int i1 = 2 * blk + 1;
    const int i2 = 2 * blk + 2;
    const Matrix dt = layer_backward(learner.layer(i2), r.grads.layer(i2), cache.layers[static_cast<std::size_t>(i2)], dh,
                                     &masks.masks[static_cast<std::size_t>(i2)]);
    dh += layer_backward(learner.layer(i1), r.grads.layer(i1), cache.layers[static_cast<std::size_t>(i1)], dt,
                         &masks.masks[static_cast<std::size_t>(i1)]);
  }
  layer_backward(learner.input, r.grads.input, cache.layers[0], dh, &masks.masks[0]);
  return r;
}

void update_running_stats(DeepLearner& learner, const BatchStatistics& stats, Eigen::Index batch) {
  const double m = learner.config.bn_momentum;
  const double unbias = batch > 1 ? static_cast<double>(batch) / static_cast<double>(batch - 1) : 1.0;
  for (int i = 0; i < learner.layer_count(); ++i) {
    BatchNorm& bn = learner.layer(i).bn;
    const std::size_t k = static_cast<std::size_t>(i);
    bn.running_mean = (1.0 - m) * bn.running_mean + m * stats.mean[k];
    bn.running_var = (1.0 - m) * bn.running_var + m * unbias * stats.var[k];
  }
}

void adam_step(DeepLearner& learner, DeepLearner& grads, AdamState& state, const TrainConfig& config) {
  std::vector<ParamView> params = parameters(learner);
  std::vector<ParamView> g = parameters(grads);
  if (params.size() != g.size()) throw Error(ErrorCode::ShapeMismatch, "gradient layout mismatch");
  if (state.m.empty()) {
    for (const ParamView& p : params) {
      state.m.push_back(Vector::Zero(p.size));
      state.v.push_back(Vector::Zero(p.size));
    }
  }
  if (state.m.size() != params.size()) throw Error(ErrorCode::ShapeMismatch, "adam state layout mismatch");
  ++state.step;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size != g[i].size || state.m[i].size() != params[i].size) {
      throw Error(ErrorCode::ShapeMismatch, "parameter " + params[i].name + " changed shape");
    }
    Eigen::Map<Vector> p(params[i].data, params[i].size);
    Eigen::Map<const Vector> gi(g[i].data, g[i].size);
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * gi;
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * gi.cwiseAbs2();
    p.array() -= config.learning_rate * (state.m[i].array() / c1) /
                 ((state.v[i].array() / c2).sqrt() + config.adam_eps);
  }
}

NormStats NormStats::from_data(const Matrix& X, const Matrix& Y) {
  auto stats = [](const Matrix& M, Vector& mean, Vector& stdev) {
    mean = M.rowwise().mean();
    stdev = ((M.colwise() - mean).array().square().rowwise().mean()).sqrt();
    stdev = stdev.cwiseMax(1e-8);
  };
  if (X.cols() == 0 || X.cols() != Y.cols()) throw Error(ErrorCode::InvalidInput, "normalization needs matched, non-empty data");
  NormStats s;
  stats(X, s.in_mean, s.in_std);
  stats(Y, s.out_mean, s.out_std);
  return s;
}

bool NormStats::operator==(const NormStats& o) const {
  return in_mean == o.in_mean && in_std == o.in_std && out_mean == o.out_mean && out_std == o.out_std;
}

namespace {

Matrix normalize(const Matrix& M, const Vector& mean, const Vector& stdev) {
  return (M.colwise() - mean).array().colwise() / stdev.array();
}

Matrix denormalize(const Matrix& M, const Vector& mean, const Vector& stdev) {
  return (M.array().colwise() * stdev.array()).colwise() + mean.array();
}

Matrix learner_input(const Matrix& Xn, const Matrix& P, bool concat) {
  if (!concat) return Xn;
  Matrix in(Xn.rows() + P.rows(), Xn.cols());
  in << Xn, P;
  return in;
}

}  // namespace

Matrix Cascade::predict_normalized(const Matrix& inputs) const {
  if (inputs.rows() != stats.in_mean.size()) throw Error(ErrorCode::ShapeMismatch, "cascade input dimension mismatch");
  if (!inputs.allFinite()) throw Error(ErrorCode::InvalidInput, "non-finite keypoints");
  const Matrix Xn = normalize(inputs, stats.in_mean, stats.in_std);
  Matrix P = Matrix::Zero(stats.out_mean.size(), inputs.cols());
  for (const DeepLearner& learner : learners) {
    P += forward(learner, learner_input(Xn, P, concat_prediction), Mode::Eval);
  }
  return P;
}

Matrix Cascade::predict(const Matrix& inputs) const {
  return denormalize(predict_normalized(inputs), stats.out_mean, stats.out_std);
}

DivergenceError::DivergenceError(const std::string& message, Cascade partial, TrainLog log)
    : Error(ErrorCode::NumericalDivergence, message), partial_(std::move(partial)), log_(std::move(log)) {}

double mpjpe_columns(const Matrix& pred, const Matrix& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols() || pred.rows() % 3 != 0) {
    throw Error(ErrorCode::ShapeMismatch, "prediction and ground truth shapes differ");
  }
  if (pred.cols() == 0) throw Error(ErrorCode::EmptyEval, "no samples");
  const Eigen::Index J = pred.rows() / 3;
  double total = 0.0;
  for (Eigen::Index n = 0; n < pred.cols(); ++n) {
    double sample = 0.0;
    for (Eigen::Index j = 0; j < J; ++j) sample += (pred.block<3, 1>(3 * j, n) - gt.block<3, 1>(3 * j, n)).norm();
    total += sample / static_cast<double>(J);
  }
  return total / static_cast<double>(pred.cols());
}

Cascade train_cascade(const Matrix& X, const Matrix& Y, const LearnerConfig& learner_config,
                      const TrainConfig& train_config, TrainLog* log, const EpochCallback& on_epoch) {
  learner_config.validate();
  train_config.validate();
  if (X.cols() != Y.cols() || X.cols() == 0) throw Error(ErrorCode::InvalidInput, "training data must be non-empty and paired");
  if (X.rows() != learner_config.input_dim || Y.rows() != learner_config.output_dim) {
    throw Error(ErrorCode::ShapeMismatch, "training data does not match learner dimensions");
  }
  if (!X.allFinite() || !Y.allFinite()) throw Error(ErrorCode::InvalidInput, "non-finite training data");
  const Eigen::Index N = X.cols();
  if (N < 2 || train_config.batch_size < 2) {
    throw Error(ErrorCode::BatchTooSmall, "training needs minibatches of at least 2 samples");
  }

  Cascade cascade;
  cascade.config = learner_config;
  cascade.concat_prediction = train_config.concat_prediction;
  cascade.stats = NormStats::from_data(X, Y);
  TrainLog local_log;
  TrainLog& L = log ? *log : local_log;
  L = TrainLog{};

  const Matrix Xn = normalize(X, cascade.stats.in_mean, cascade.stats.in_std);
  const Matrix Yn = normalize(Y, cascade.stats.out_mean, cascade.stats.out_std);
  std::mt19937_64 rng(train_config.rng_seed);
  Matrix P = Matrix::Zero(Y.rows(), N);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(N));
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  LearnerConfig cfg = learner_config;
  if (train_config.concat_prediction) cfg.input_dim = learner_config.input_dim + learner_config.output_dim;

  for (int stage = 0; stage < train_config.stages; ++stage) {
    DeepLearner learner = DeepLearner::init(cfg, rng, stage > 0);
    const Matrix input = learner_input(Xn, P, train_config.concat_prediction);
    const Matrix target = Yn - P;
    auto eval_mpjpe = [&](const DeepLearner& l) {
      const Matrix total = P + forward(l, input, Mode::Eval);
      return mpjpe_columns(denormalize(total, cascade.stats.out_mean, cascade.stats.out_std), Y);
    };

    DeepLearner best = learner;
    double best_mpjpe = eval_mpjpe(learner);
    int best_epoch = 0;
    L.epoch_loss.emplace_back();
    L.epoch_mpjpe.push_back({best_mpjpe});
    AdamState adam;

    for (int epoch = 1; epoch <= train_config.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      double loss_sum = 0.0;
      int batches = 0;
      for (Eigen::Index start = 0; start < N; start += train_config.batch_size) {
        const Eigen::Index B = std::min<Eigen::Index>(train_config.batch_size, N - start);
        if (B < 2) continue;
        Matrix xb(input.rows(), B), tb(target.rows(), B);
        for (Eigen::Index k = 0; k < B; ++k) {
          xb.col(k) = input.col(order[static_cast<std::size_t>(start + k)]);
          tb.col(k) = target.col(order[static_cast<std::size_t>(start + k)]);
        }
        const DropoutMasks masks = sample_masks(learner, B, rng);
        GradientResult g;
        try {
          g = gradients(learner, xb, tb, masks);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::NumericalDivergence) throw;
          throw DivergenceError("stage " + std::to_string(stage + 1) + " epoch " + std::to_string(epoch) +
                                    ": non-finite loss",
                                cascade, L);
        }
        update_running_stats(learner, g.stats, B);
        adam_step(learner, g.grads, adam, train_config);
        loss_sum += g.loss;
        ++batches;
      }
      const double mean_loss = batches ? loss_sum / batches : 0.0;
      const double m = eval_mpjpe(learner);
      if (!std::isfinite(m)) {
        throw DivergenceError("stage " + std::to_string(stage + 1) + " epoch " + std::to_string(epoch) +
                                  ": non-finite predictions",
                              cascade, L);
      }
      L.epoch_loss.back().push_back(mean_loss);
      L.epoch_mpjpe.back().push_back(m);
      if (m < best_mpjpe) {
        best_mpjpe = m;
        best = learner;
        best_epoch = epoch;
      }
      if (on_epoch) on_epoch(stage + 1, epoch, mean_loss, m);
    }

    P += forward(best, input, Mode::Eval);
    cascade.learners.push_back(std::move(best));
    L.best_epoch.push_back(best_epoch);
    L.stage_mpjpe.push_back(mpjpe_columns(denormalize(P, cascade.stats.out_mean, cascade.stats.out_std), Y));
  }
  return cascade;
}

}  // namespace evopose
