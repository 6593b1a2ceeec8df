#pragma once

// Feed-forward and recurrent (Elman / LSTM) regressors with hand-written
// backpropagation and Adam. Everything is double precision and driven by the
// portable Rng, so a (seed, config, data) triple always yields the same weights.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "itac/core.hpp"
#include "itac/random.hpp"
#include "itac/transform.hpp"

namespace itac {

enum class Activation { tanh, relu, identity };
enum class CellType { elman, lstm };
/// How the "hidden layers" hyperparameter is read: as a layer count (each layer
/// `neurons` wide) or as the width of a first hidden layer followed by one
/// layer of `neurons` units.
enum class LayerReading { count, width };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    default: return "identity";
  }
}
inline Activation parse_activation(std::string_view s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  if (s == "identity" || s == "linear") return Activation::identity;
  throw ConfigError("unknown activation '" + std::string(s) + "'");
}
inline std::string_view to_string(CellType c) { return c == CellType::elman ? "elman" : "lstm"; }
inline CellType parse_cell(std::string_view s) {
  if (s == "elman") return CellType::elman;
  if (s == "lstm") return CellType::lstm;
  throw ConfigError("unknown cell '" + std::string(s) + "'");
}
inline std::string_view to_string(LayerReading r) { return r == LayerReading::count ? "count" : "width"; }
inline LayerReading parse_layer_reading(std::string_view s) {
  if (s == "count") return LayerReading::count;
  if (s == "width") return LayerReading::width;
  throw ConfigError("unknown layer reading '" + std::string(s) + "'");
}

struct AnnConfig {
  int hidden_layers = 2;
  int neurons = 32;
  Activation activation = Activation::tanh;
  double learning_rate = 1e-3;
  int epochs = 500;
  int batch_size = 32;
  std::uint64_t seed = 0;
  int patience = 50;
  LayerReading layer_reading = LayerReading::count;

  void validate() const {
    if (hidden_layers < 2 || hidden_layers > 64) throw ConfigError("ANN hidden_layers must lie in [2,64]");
    if (neurons < 6 || neurons > 256) throw ConfigError("ANN neurons must lie in [6,256]");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (epochs < 0) throw ConfigError("epochs must be nonnegative");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (patience < 1) throw ConfigError("patience must be positive");
  }
};

struct RnnConfig {
  CellType cell = CellType::lstm;
  int hidden_layers = 2;
  int neurons = 32;
  int window = 6;
  Activation activation = Activation::tanh;  // Elman cells only
  double learning_rate = 1e-3;
  int epochs = 300;
  int batch_size = 4;
  std::uint64_t seed = 0;
  int patience = 50;
  LayerReading layer_reading = LayerReading::count;

  void validate() const {
    if (hidden_layers < 2 || hidden_layers > 48) throw ConfigError("RNN hidden_layers must lie in [2,48]");
    if (neurons < 6 || neurons > 256) throw ConfigError("RNN neurons must lie in [6,256]");
    if (window < 1) throw ConfigError("window must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (epochs < 0) throw ConfigError("epochs must be nonnegative");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (patience < 1) throw ConfigError("patience must be positive");
  }
};

inline std::vector<int> hidden_sizes(int hidden_layers, int neurons, LayerReading reading) {
  if (reading == LayerReading::width) return {hidden_layers, neurons};
  return std::vector<int>(static_cast<std::size_t>(hidden_layers), neurons);
}

// ---------------------------------------------------------------------------
// Parameter blocks and Adam
// ---------------------------------------------------------------------------

/// Affine map x·W + b with W stored input-major (in × out) and b as 1 × out.
struct Dense {
  Matrix W;
  Matrix b;
};

namespace detail {

inline constexpr const char* kInitScheme = "uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases";

inline Matrix init_uniform(Rng& rng, Eigen::Index fan_in, Eigen::Index rows, Eigen::Index cols) {
  const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(-a, a);
  return m;
}

inline Matrix activate(const Matrix& z, Activation a) {
  switch (a) {
    case Activation::tanh: return z.array().tanh().matrix();
    case Activation::relu: return z.cwiseMax(0.0);
    default: return z;
  }
}

/// Derivative expressed through the pre-activation `z` and output `h`.
inline Matrix activation_grad(const Matrix& z, const Matrix& h, Activation a) {
  switch (a) {
    case Activation::tanh: return (1.0 - h.array().square()).matrix();
    case Activation::relu: return (z.array() > 0.0).cast<double>().matrix();
    default: return Matrix::Ones(z.rows(), z.cols());
  }
}

inline Matrix sigmoid(const Matrix& z) { return (1.0 / (1.0 + (-z.array()).exp())).matrix(); }

inline bool all_finite(const std::vector<Matrix*>& ps) {
  for (const auto* p : ps)
    if (!p->allFinite()) return false;
  return true;
}

}  // namespace detail

/// Adam with bias correction; one moment pair per parameter block.
class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads) {
    if (m_.empty()) {
      for (const auto* p : params) {
        m_.push_back(Matrix::Zero(p->rows(), p->cols()));
        v_.push_back(Matrix::Zero(p->rows(), p->cols()));
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * grads[k];
      v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * grads[k].cwiseProduct(grads[k]);
      params[k]->array() -= lr_ * (m_[k].array() / c1) / ((v_[k].array() / c2).sqrt() + eps_);
    }
  }

  long steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

// ---------------------------------------------------------------------------
// Multilayer perceptron
// ---------------------------------------------------------------------------

struct Mlp {
  std::vector<Dense> hidden;
  Dense output;  // H × 1
  Activation activation = Activation::tanh;

  Eigen::Index input_width() const { return hidden.empty() ? output.W.rows() : hidden.front().W.rows(); }

  static Mlp init(Eigen::Index inputs, const std::vector<int>& sizes, Activation act, Rng& rng) {
    Mlp net;
    net.activation = act;
    Eigen::Index in = inputs;
    for (int h : sizes) {
      net.hidden.push_back({detail::init_uniform(rng, in, in, h), Matrix::Zero(1, h)});
      in = h;
    }
    net.output = {detail::init_uniform(rng, in, in, 1), Matrix::Zero(1, 1)};
    return net;
  }

  std::vector<Matrix*> parameters() {
    std::vector<Matrix*> ps;
    for (auto& d : hidden) {
      ps.push_back(&d.W);
      ps.push_back(&d.b);
    }
    ps.push_back(&output.W);
    ps.push_back(&output.b);
    return ps;
  }

  std::size_t parameter_count() const {
    std::size_t n = static_cast<std::size_t>(output.W.size() + output.b.size());
    for (const auto& d : hidden) n += static_cast<std::size_t>(d.W.size() + d.b.size());
    return n;
  }

  /// Column of predictions for a batch of input rows.
  Vector forward(const Matrix& x) const {
    Matrix a = x;
    for (const auto& d : hidden) a = detail::activate((a * d.W).rowwise() + d.b.row(0), activation);
    return ((a * output.W).rowwise() + output.b.row(0)).col(0);
  }

  /// Mean squared error of the batch and its gradient for every parameter block.
  double loss_and_grad(const Matrix& x, const Vector& y, std::vector<Matrix>& grads) const {
    const auto B = static_cast<double>(x.rows());
    std::vector<Matrix> z, a{x};
    for (const auto& d : hidden) {
      z.push_back((a.back() * d.W).rowwise() + d.b.row(0));
      a.push_back(detail::activate(z.back(), activation));
    }
    const Vector pred = ((a.back() * output.W).rowwise() + output.b.row(0)).col(0);
    const Vector err = pred - y;
    const double loss = err.squaredNorm() / B;

    grads.assign(2 * hidden.size() + 2, Matrix());
    Matrix dy = (2.0 / B) * err;  // B × 1
    grads[2 * hidden.size()] = a.back().transpose() * dy;
    grads[2 * hidden.size() + 1] = dy.colwise().sum();
    Matrix da = dy * output.W.transpose();
    for (std::size_t l = hidden.size(); l-- > 0;) {
      const Matrix dz = da.cwiseProduct(detail::activation_grad(z[l], a[l + 1], activation));
      grads[2 * l] = a[l].transpose() * dz;
      grads[2 * l + 1] = dz.colwise().sum();
      if (l > 0) da = dz * hidden[l].W.transpose();
    }
    return loss;
  }
};

// ---------------------------------------------------------------------------
// Recurrent network
// ---------------------------------------------------------------------------

/// One recurrent layer. LSTM blocks are laid out as [input, forget, output, candidate].
struct RecurrentLayer {
  Matrix Wx;  // in × G·H
  Matrix Wh;  // H × G·H
  Matrix b;   // 1 × G·H
};

/// A batch of sequences stored time-major: steps[s] is B × N.
struct SequenceBatch {
  std::vector<Matrix> steps;
  Vector target;

  Eigen::Index batch() const { return steps.empty() ? 0 : steps.front().rows(); }
  int window() const { return static_cast<int>(steps.size()); }
};

struct Rnn {
  CellType cell = CellType::lstm;
  Activation activation = Activation::tanh;
  std::vector<RecurrentLayer> layers;
  Dense output;
  int window = 1;

  int gates() const { return cell == CellType::lstm ? 4 : 1; }
  Eigen::Index hidden_width(std::size_t l) const { return layers[l].Wh.rows(); }
  Eigen::Index input_width() const { return layers.front().Wx.rows(); }

  static Rnn init(CellType cell, Activation act, Eigen::Index inputs, const std::vector<int>& sizes, int window,
                  Rng& rng) {
    Rnn net;
    net.cell = cell;
    net.activation = act;
    net.window = window;
    const int G = cell == CellType::lstm ? 4 : 1;
    Eigen::Index in = inputs;
    for (int h : sizes) {
      RecurrentLayer L;
      L.Wx = detail::init_uniform(rng, in + h, in, G * h);
      L.Wh = detail::init_uniform(rng, in + h, h, G * h);
      L.b = Matrix::Zero(1, G * h);
      net.layers.push_back(std::move(L));
      in = h;
    }
    net.output = {detail::init_uniform(rng, in, in, 1), Matrix::Zero(1, 1)};
    return net;
  }

  std::vector<Matrix*> parameters() {
    std::vector<Matrix*> ps;
    for (auto& L : layers) {
      ps.push_back(&L.Wx);
      ps.push_back(&L.Wh);
      ps.push_back(&L.b);
    }
    ps.push_back(&output.W);
    ps.push_back(&output.b);
    return ps;
  }

  std::size_t parameter_count() const {
    std::size_t n = static_cast<std::size_t>(output.W.size() + output.b.size());
    for (const auto& L : layers) n += static_cast<std::size_t>(L.Wx.size() + L.Wh.size() + L.b.size());
    return n;
  }

 private:
  struct StepCache {
    Matrix x, h_prev, c_prev, z, h, c, hc;  // hc = tanh(c) for LSTM
  };

  StepCache step(const RecurrentLayer& L, const Matrix& x, const Matrix& h_prev, const Matrix& c_prev) const {
    StepCache s{x, h_prev, c_prev, (x * L.Wx + h_prev * L.Wh).rowwise() + L.b.row(0), {}, {}, {}};
    if (cell == CellType::elman) {
      s.h = detail::activate(s.z, activation);
      return s;
    }
    const Eigen::Index H = h_prev.cols();
    s.z.leftCols(3 * H) = detail::sigmoid(s.z.leftCols(3 * H));
    s.z.rightCols(H) = s.z.rightCols(H).array().tanh().matrix();
    // For LSTM `z` now holds the gate activations.
    s.c = s.z.middleCols(H, H).cwiseProduct(c_prev) + s.z.leftCols(H).cwiseProduct(s.z.rightCols(H));
    s.hc = s.c.array().tanh().matrix();
    s.h = s.z.middleCols(2 * H, H).cwiseProduct(s.hc);
    return s;
  }

  /// Runs the stack; caches[l][s] when `keep` is set.
  Matrix run(const SequenceBatch& batch, std::vector<std::vector<StepCache>>* caches) const {
    const Eigen::Index B = batch.batch();
    std::vector<Matrix> inputs = batch.steps;
    if (caches) caches->assign(layers.size(), {});
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const Eigen::Index H = hidden_width(l);
      Matrix h = Matrix::Zero(B, H), c = Matrix::Zero(B, H);
      for (std::size_t s = 0; s < inputs.size(); ++s) {
        StepCache sc = step(layers[l], inputs[s], h, c);
        h = sc.h;
        if (cell == CellType::lstm) c = sc.c;
        inputs[s] = h;
        if (caches) (*caches)[l].push_back(std::move(sc));
      }
    }
    return inputs.back();
  }

 public:
  /// Top-layer hidden state after the last step, B × H. Initial states are zero.
  Matrix final_hidden(const SequenceBatch& batch) const { return run(batch, nullptr); }

  Vector forward(const SequenceBatch& batch) const {
    return ((run(batch, nullptr) * output.W).rowwise() + output.b.row(0)).col(0);
  }

  /// MSE of the batch and its gradient by backpropagation through time.
  double loss_and_grad(const SequenceBatch& batch, std::vector<Matrix>& grads) const {
    const auto B = static_cast<double>(batch.batch());
    const auto W = batch.steps.size();
    std::vector<std::vector<StepCache>> caches;
    const Matrix top = run(batch, &caches);
    const Vector pred = ((top * output.W).rowwise() + output.b.row(0)).col(0);
    const Vector err = pred - batch.target;
    const double loss = err.squaredNorm() / B;

    grads.assign(3 * layers.size() + 2, Matrix());
    const Matrix dy = (2.0 / B) * err;
    grads[3 * layers.size()] = top.transpose() * dy;
    grads[3 * layers.size() + 1] = dy.colwise().sum();

    // Gradient flowing into each step's hidden output from the layer above.
    std::vector<Matrix> from_above(W);
    for (auto& m : from_above) m = Matrix::Zero(batch.batch(), hidden_width(layers.size() - 1));
    from_above[W - 1] = dy * output.W.transpose();

    for (std::size_t l = layers.size(); l-- > 0;) {
      const auto& L = layers[l];
      const Eigen::Index H = hidden_width(l);
      Matrix dWx = Matrix::Zero(L.Wx.rows(), L.Wx.cols());
      Matrix dWh = Matrix::Zero(L.Wh.rows(), L.Wh.cols());
      Matrix db = Matrix::Zero(1, L.b.cols());
      Matrix dh_next = Matrix::Zero(batch.batch(), H);
      Matrix dc_next = Matrix::Zero(batch.batch(), H);
      std::vector<Matrix> to_below(W);
      for (std::size_t s = W; s-- > 0;) {
        const StepCache& sc = caches[l][s];
        const Matrix dh = from_above[s] + dh_next;
        Matrix dz;
        if (cell == CellType::elman) {
          dz = dh.cwiseProduct(detail::activation_grad(sc.z, sc.h, activation));
        } else {
          const auto gi = sc.z.leftCols(H), gf = sc.z.middleCols(H, H), go = sc.z.middleCols(2 * H, H),
                     gg = sc.z.rightCols(H);
          const Matrix dc = dh.cwiseProduct(go).cwiseProduct((1.0 - sc.hc.array().square()).matrix()) + dc_next;
          dz.resize(dh.rows(), 4 * H);
          dz.leftCols(H) = dc.cwiseProduct(gg).cwiseProduct((gi.array() * (1.0 - gi.array())).matrix());
          dz.middleCols(H, H) = dc.cwiseProduct(sc.c_prev).cwiseProduct((gf.array() * (1.0 - gf.array())).matrix());
          dz.middleCols(2 * H, H) = dh.cwiseProduct(sc.hc).cwiseProduct((go.array() * (1.0 - go.array())).matrix());
          dz.rightCols(H) = dc.cwiseProduct(gi).cwiseProduct((1.0 - gg.array().square()).matrix());
          dc_next = dc.cwiseProduct(gf);
        }
        dWx += sc.x.transpose() * dz;
        dWh += sc.h_prev.transpose() * dz;
        db += dz.colwise().sum();
        dh_next = dz * L.Wh.transpose();
        if (l > 0) to_below[s] = dz * L.Wx.transpose();
      }
      grads[3 * l] = std::move(dWx);
      grads[3 * l + 1] = std::move(dWh);
      grads[3 * l + 2] = std::move(db);
      if (l > 0) from_above = std::move(to_below);
    }
    return loss;
  }
};

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

struct TrainingRecord {
  std::vector<double> loss_curve;        // full-batch training MSE per epoch, target units
  std::vector<double> validation_curve;  // empty without a validation set
  double final_loss = 0.0;               // training MSE of the returned weights
  int epochs_run = 0;
  int best_epoch = 0;
  std::string init_scheme = detail::kInitScheme;
};

struct AnnArtifact {
  Mlp net;
  AnnConfig config;
  double target_mean = 0.0;
  double target_scale = 1.0;
  TrainingRecord record;

  Eigen::Index input_width() const { return net.input_width(); }
};

struct RnnArtifact {
  Rnn net;
  RnnConfig config;
  double target_mean = 0.0;
  double target_scale = 1.0;
  TrainingRecord record;

  Eigen::Index input_width() const { return net.input_width(); }
};

namespace detail {

inline void target_stats(const Vector& y, double& mean, double& scale) {
  mean = y.mean();
  const double var = (y.array() - mean).square().mean();
  scale = var > 0.0 ? std::sqrt(var) : 1.0;
}

inline std::vector<std::vector<std::size_t>> minibatches(std::size_t n, int batch_size, Rng& rng) {
  const auto perm = rng.permutation(n);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += static_cast<std::size_t>(batch_size))
    out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(i),
                     perm.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + static_cast<std::size_t>(batch_size))));
  return out;
}

inline Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

inline Vector gather(const Vector& v, const std::vector<std::size_t>& idx) {
  Vector out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out(static_cast<Eigen::Index>(i)) = v(static_cast<Eigen::Index>(idx[i]));
  return out;
}

/// Generic epoch loop with early stopping on the validation loss.
/// `Net` supplies loss_and_grad(batch_indices) via the callbacks.
template <class Net, class BatchLoss, class FullLoss, class ValLoss>
TrainingRecord train_loop(Net& net, std::size_t n, int epochs, int batch_size, double lr, int patience, Rng& rng,
                          BatchLoss&& batch_loss, FullLoss&& full_loss, std::optional<ValLoss> val_loss) {
  TrainingRecord rec;
  Adam adam(lr);
  Net best = net;
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;
  std::vector<Matrix> grads;
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    for (const auto& idx : minibatches(n, batch_size, rng)) {
      const double l = batch_loss(net, idx, grads);
      if (!std::isfinite(l)) throw DivergenceError(epoch);
      adam.step(net.parameters(), grads);
    }
    if (!all_finite(net.parameters())) throw DivergenceError(epoch);
    const double train = full_loss(net);
    if (!std::isfinite(train)) throw DivergenceError(epoch);
    rec.loss_curve.push_back(train);
    rec.epochs_run = epoch;
    if (val_loss) {
      const double v = (*val_loss)(net);
      if (!std::isfinite(v)) throw DivergenceError(epoch);
      rec.validation_curve.push_back(v);
      if (v < best_val) {
        best_val = v;
        best = net;
        rec.best_epoch = epoch;
        since_best = 0;
      } else if (++since_best >= patience) {
        break;
      }
    }
  }
  if (val_loss && rec.epochs_run > 0) net = best;
  if (!val_loss) rec.best_epoch = rec.epochs_run;
  return rec;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// ANN
// ---------------------------------------------------------------------------

inline Vector ann_predict(const AnnArtifact& art, const Matrix& features) {
  if (features.cols() != art.input_width())
    throw ShapeError("feature width " + std::to_string(features.cols()) + " does not match network input " +
                     std::to_string(art.input_width()));
  return (art.net.forward(features).array() * art.target_scale + art.target_mean).matrix();
}

inline double ann_predict(const AnnArtifact& art, const Vector& row) {
  return ann_predict(art, Matrix(row.transpose()))(0);
}

/// Trains on `train`; with a validation set, stops after `patience` epochs
/// without improvement and returns the best weights.
inline AnnArtifact ann_train(const AlignedDataset& train, const AnnConfig& config,
                             const AlignedDataset* validation = nullptr) {
  config.validate();
  if (train.rows() == 0 || train.width() == 0) throw LengthError("empty training dataset");
  if (validation && validation->width() != train.width()) throw ShapeError("validation width differs from training");

  AnnArtifact art;
  art.config = config;
  detail::target_stats(train.target, art.target_mean, art.target_scale);
  Rng init_rng(derive_seed(config.seed, "ann/init"));
  Rng batch_rng(derive_seed(config.seed, "ann/batches"));
  art.net = Mlp::init(train.width(), hidden_sizes(config.hidden_layers, config.neurons, config.layer_reading),
                      config.activation, init_rng);

  const Vector ys = (train.target.array() - art.target_mean) / art.target_scale;
  auto batch_loss = [&](const Mlp& net, const std::vector<std::size_t>& idx, std::vector<Matrix>& g) {
    return net.loss_and_grad(detail::gather_rows(train.features, idx), detail::gather(ys, idx), g);
  };
  auto mse_on = [&](const Mlp& net, const AlignedDataset& d) {
    const Vector p = (net.forward(d.features).array() * art.target_scale + art.target_mean).matrix();
    return (p - d.target).squaredNorm() / static_cast<double>(d.rows());
  };
  auto full_loss = [&](const Mlp& net) { return mse_on(net, train); };
  using ValFn = std::function<double(const Mlp&)>;
  std::optional<ValFn> val;
  if (validation) val = ValFn([&](const Mlp& net) { return mse_on(net, *validation); });

  art.record = detail::train_loop(art.net, static_cast<std::size_t>(train.rows()), config.epochs, config.batch_size,
                                  config.learning_rate, config.patience, batch_rng, batch_loss, full_loss, val);
  art.record.final_loss = full_loss(art.net);
  return art;
}

// ---------------------------------------------------------------------------
// RNN
// ---------------------------------------------------------------------------

/// Rolling windows: sample i uses feature rows [i, i+window) and targets row i+window.
inline SequenceBatch make_sequences(const Matrix& features, const Vector& target, int window,
                                    const std::vector<std::size_t>& samples) {
  SequenceBatch b;
  const auto B = static_cast<Eigen::Index>(samples.size());
  b.steps.assign(static_cast<std::size_t>(window), Matrix(B, features.cols()));
  b.target.resize(B);
  for (Eigen::Index k = 0; k < B; ++k) {
    const auto i = static_cast<Eigen::Index>(samples[static_cast<std::size_t>(k)]);
    for (int s = 0; s < window; ++s) b.steps[static_cast<std::size_t>(s)].row(k) = features.row(i + s);
    b.target(k) = target.size() ? target(i + window) : 0.0;
  }
  return b;
}

inline std::size_t sequence_count(Eigen::Index rows, int window) {
  return rows > window ? static_cast<std::size_t>(rows - window) : 0;
}

inline std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

/// One-step-ahead prediction for a single window × N sequence.
inline double rnn_predict(const RnnArtifact& art, const Matrix& sequence) {
  if (sequence.rows() != art.net.window || sequence.cols() != art.input_width())
    throw ShapeError("sequence must be " + std::to_string(art.net.window) + " x " + std::to_string(art.input_width()));
  SequenceBatch b;
  for (Eigen::Index s = 0; s < sequence.rows(); ++s) b.steps.push_back(sequence.row(s));
  return art.net.forward(b)(0) * art.target_scale + art.target_mean;
}

/// Predictions for every complete window of `features`; element i forecasts row i + window.
inline Vector rnn_predict_all(const RnnArtifact& art, const Matrix& features) {
  if (features.cols() != art.input_width()) throw ShapeError("feature width does not match network input");
  const std::size_t n = sequence_count(features.rows(), art.net.window);
  if (n == 0) return Vector();
  const SequenceBatch b = make_sequences(features, Vector(), art.net.window, iota_indices(n));
  return (art.net.forward(b).array() * art.target_scale + art.target_mean).matrix();
}

inline RnnArtifact rnn_train(const AlignedDataset& train, const RnnConfig& config,
                             const AlignedDataset* validation = nullptr) {
  config.validate();
  if (config.window >= train.rows())
    throw LengthError("window " + std::to_string(config.window) + " must be shorter than the dataset (" +
                      std::to_string(train.rows()) + " rows)");
  if (validation && validation->width() != train.width()) throw ShapeError("validation width differs from training");

  RnnArtifact art;
  art.config = config;
  detail::target_stats(train.target, art.target_mean, art.target_scale);
  Rng init_rng(derive_seed(config.seed, "rnn/init"));
  Rng batch_rng(derive_seed(config.seed, "rnn/batches"));
  art.net = Rnn::init(config.cell, config.activation, train.width(),
                      hidden_sizes(config.hidden_layers, config.neurons, config.layer_reading), config.window,
                      init_rng);

  const Vector ys = (train.target.array() - art.target_mean) / art.target_scale;
  const std::size_t n = sequence_count(train.rows(), config.window);
  auto batch_loss = [&](const Rnn& net, const std::vector<std::size_t>& idx, std::vector<Matrix>& g) {
    return net.loss_and_grad(make_sequences(train.features, ys, config.window, idx), g);
  };
  auto mse_on = [&](const Rnn& net, const AlignedDataset& d) {
    const std::size_t m = sequence_count(d.rows(), config.window);
    if (m == 0) return 0.0;
    const SequenceBatch b = make_sequences(d.features, d.target, config.window, iota_indices(m));
    const Vector p = (net.forward(b).array() * art.target_scale + art.target_mean).matrix();
    return (p - b.target).squaredNorm() / static_cast<double>(m);
  };
  auto full_loss = [&](const Rnn& net) { return mse_on(net, train); };
  using ValFn = std::function<double(const Rnn&)>;
  std::optional<ValFn> val;
  if (validation) {
    if (sequence_count(validation->rows(), config.window) == 0)
      throw LengthError("validation set shorter than the window");
    val = ValFn([&](const Rnn& net) { return mse_on(net, *validation); });
  }

  art.record = detail::train_loop(art.net, n, config.epochs, config.batch_size, config.learning_rate,
                                  config.patience, batch_rng, batch_loss, full_loss, val);
  art.record.final_loss = full_loss(art.net);
  return art;
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

struct GradientCheckOptions {
  /// Parameters checked exhaustively up to this count; above it a seeded subset of this size.
  std::size_t max_parameters = 10000;
  std::uint64_t seed = 0;
  /// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-7;
};

namespace detail {

template <class Net, class LossFn>
double gradient_check_impl(Net net, LossFn&& loss, double epsilon, const GradientCheckOptions& opt) {
  if (epsilon < 1e-7 || epsilon > 1e-3) throw ConfigError("epsilon must lie in [1e-7, 1e-3]");
  std::vector<Matrix> grads;
  loss(net, &grads);
  auto params = net.parameters();

  std::vector<std::pair<std::size_t, Eigen::Index>> coords;
  for (std::size_t k = 0; k < params.size(); ++k)
    for (Eigen::Index i = 0; i < params[k]->size(); ++i) coords.emplace_back(k, i);
  if (coords.size() > opt.max_parameters) {
    Rng rng(derive_seed(opt.seed, "gradient_check"));
    auto perm = rng.permutation(coords.size());
    std::vector<std::pair<std::size_t, Eigen::Index>> subset;
    for (std::size_t i = 0; i < opt.max_parameters; ++i) subset.push_back(coords[perm[i]]);
    coords = std::move(subset);
  }

  double worst = 0.0;
  for (const auto& [k, i] : coords) {
    double& p = params[k]->data()[i];
    const double saved = p;
    p = saved + epsilon;
    const double up = loss(net, nullptr);
    p = saved - epsilon;
    const double down = loss(net, nullptr);
    p = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double analytic = grads[k].data()[i];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), opt.floor});
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  }
  return worst;
}

}  // namespace detail

/// Maximum relative error between backpropagated and central-difference
/// gradients of the standardized-target MSE on `(features, target)`.
inline double gradient_check(const AnnArtifact& art, const Matrix& features, const Vector& target, double epsilon,
                             const GradientCheckOptions& opt = {}) {
  if (features.cols() != art.input_width()) throw ShapeError("batch width does not match network input");
  const Vector ys = (target.array() - art.target_mean) / art.target_scale;
  return detail::gradient_check_impl(
      art.net,
      [&](const Mlp& net, std::vector<Matrix>* g) {
        if (g) return net.loss_and_grad(features, ys, *g);
        return (net.forward(features) - ys).squaredNorm() / static_cast<double>(features.rows());
      },
      epsilon, opt);
}

inline double gradient_check(const RnnArtifact& art, const SequenceBatch& batch, double epsilon,
                             const GradientCheckOptions& opt = {}) {
  if (batch.window() != art.net.window) throw ShapeError("batch window does not match network");
  SequenceBatch scaled = batch;
  scaled.target = (batch.target.array() - art.target_mean) / art.target_scale;
  return detail::gradient_check_impl(
      art.net,
      [&](const Rnn& net, std::vector<Matrix>* g) {
        if (g) return net.loss_and_grad(scaled, *g);
        return (net.forward(scaled) - scaled.target).squaredNorm() / static_cast<double>(scaled.batch());
      },
      epsilon, opt);
}

}  // namespace itac
