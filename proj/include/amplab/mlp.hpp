#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "amplab/common.hpp"
#include "amplab/rng.hpp"

namespace amplab::nn {

/// Dense multilayer perceptron: tanh on hidden layers, identity output.
/// Weights are row-major (out x in) per layer.
struct Mlp {
  std::vector<int> layer_sizes;
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> biases;

  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }
  int num_layers() const { return static_cast<int>(layer_sizes.size()) - 1; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (int l = 0; l < num_layers(); ++l)
      n += weights[static_cast<std::size_t>(l)].size() + biases[static_cast<std::size_t>(l)].size();
    return n;
  }

  static Mlp zeros(std::vector<int> sizes) {
    require(sizes.size() >= 2, "an mlp needs at least input and output sizes");
    for (const int s : sizes) require(s >= 1, "mlp layer sizes must be positive");
    Mlp net;
    net.layer_sizes = std::move(sizes);
    for (int l = 0; l < net.num_layers(); ++l) {
      const auto in = static_cast<std::size_t>(net.layer_sizes[static_cast<std::size_t>(l)]);
      const auto out = static_cast<std::size_t>(net.layer_sizes[static_cast<std::size_t>(l) + 1]);
      net.weights.emplace_back(in * out, 0.0);
      net.biases.emplace_back(out, 0.0);
    }
    return net;
  }

  /// Uniform Glorot initialization with zero biases.
  static Mlp create(std::vector<int> sizes, RngStream& rng) {
    Mlp net = zeros(std::move(sizes));
    for (int l = 0; l < net.num_layers(); ++l) {
      const int in = net.layer_sizes[static_cast<std::size_t>(l)];
      const int out = net.layer_sizes[static_cast<std::size_t>(l) + 1];
      const double limit = std::sqrt(6.0 / (in + out));
      for (auto& w : net.weights[static_cast<std::size_t>(l)]) w = rng.uniform(-limit, limit);
    }
    return net;
  }

  /// Zeroes the output layer (a fresh policy head then emits uniform logits).
  void zero_last_layer() {
    for (auto& w : weights.back()) w = 0.0;
    for (auto& b : biases.back()) b = 0.0;
  }
};

struct ForwardCache {
  // activations[0] is the input; activations[l+1] the post-activation output
  // of layer l (tanh on hidden layers, identity on the last).
  std::vector<std::vector<double>> activations;
};

inline std::vector<double> forward_cached(const Mlp& net, std::span<const double> input,
                                          ForwardCache& cache) {
  require(static_cast<int>(input.size()) == net.input_dim(), "mlp input size ", input.size(),
          " does not match layer width ", net.input_dim());
  cache.activations.assign(1, std::vector<double>(input.begin(), input.end()));
  for (int l = 0; l < net.num_layers(); ++l) {
    const auto& prev = cache.activations.back();
    const int in = net.layer_sizes[static_cast<std::size_t>(l)];
    const int out = net.layer_sizes[static_cast<std::size_t>(l) + 1];
    const auto& w = net.weights[static_cast<std::size_t>(l)];
    const auto& b = net.biases[static_cast<std::size_t>(l)];
    std::vector<double> next(static_cast<std::size_t>(out));
    for (int o = 0; o < out; ++o) {
      double z = b[static_cast<std::size_t>(o)];
      const double* row = w.data() + static_cast<std::size_t>(o) * static_cast<std::size_t>(in);
      for (int i = 0; i < in; ++i) z += row[i] * prev[static_cast<std::size_t>(i)];
      next[static_cast<std::size_t>(o)] = l + 1 < net.num_layers() ? std::tanh(z) : z;
    }
    cache.activations.push_back(std::move(next));
  }
  return cache.activations.back();
}

inline std::vector<double> forward(const Mlp& net, std::span<const double> input) {
  ForwardCache cache;
  return forward_cached(net, input, cache);
}

struct Gradients {
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> biases;

  static Gradients zeros_like(const Mlp& net) {
    Gradients g;
    for (const auto& w : net.weights) g.weights.emplace_back(w.size(), 0.0);
    for (const auto& b : net.biases) g.biases.emplace_back(b.size(), 0.0);
    return g;
  }

  void scale(double factor) {
    for (auto& layer : weights)
      for (auto& w : layer) w *= factor;
    for (auto& layer : biases)
      for (auto& b : layer) b *= factor;
  }
};

/// Accumulates dLoss/dparameters into `grads` given dLoss/doutput.
inline void backward(const Mlp& net, const ForwardCache& cache,
                     std::span<const double> output_grad, Gradients& grads) {
  require(static_cast<int>(output_grad.size()) == net.output_dim(),
          "output gradient size mismatch");
  std::vector<double> delta(output_grad.begin(), output_grad.end());
  for (int l = net.num_layers() - 1; l >= 0; --l) {
    const int in = net.layer_sizes[static_cast<std::size_t>(l)];
    const int out = net.layer_sizes[static_cast<std::size_t>(l) + 1];
    const auto& inputs = cache.activations[static_cast<std::size_t>(l)];
    auto& gw = grads.weights[static_cast<std::size_t>(l)];
    auto& gb = grads.biases[static_cast<std::size_t>(l)];
    for (int o = 0; o < out; ++o) {
      const double d = delta[static_cast<std::size_t>(o)];
      gb[static_cast<std::size_t>(o)] += d;
      double* row = gw.data() + static_cast<std::size_t>(o) * static_cast<std::size_t>(in);
      for (int i = 0; i < in; ++i) row[i] += d * inputs[static_cast<std::size_t>(i)];
    }
    if (l == 0) break;
    std::vector<double> prev_delta(static_cast<std::size_t>(in), 0.0);
    const auto& w = net.weights[static_cast<std::size_t>(l)];
    for (int o = 0; o < out; ++o) {
      const double d = delta[static_cast<std::size_t>(o)];
      const double* row = w.data() + static_cast<std::size_t>(o) * static_cast<std::size_t>(in);
      for (int i = 0; i < in; ++i) prev_delta[static_cast<std::size_t>(i)] += row[i] * d;
    }
    for (int i = 0; i < in; ++i) {
      const double a = inputs[static_cast<std::size_t>(i)];  // tanh output of layer l-1
      prev_delta[static_cast<std::size_t>(i)] *= 1.0 - a * a;
    }
    delta = std::move(prev_delta);
  }
}

/// Batch-mean squared error and its exact gradients for a scalar-output net.
inline std::pair<double, Gradients> mse_loss_and_gradient(
    const Mlp& net, std::span<const std::vector<double>> inputs, std::span<const double> targets) {
  require(net.output_dim() == 1, "mse path expects a scalar-output net");
  require(!inputs.empty() && inputs.size() == targets.size(), "mse batch mismatch: ",
          inputs.size(), " inputs vs ", targets.size(), " targets");
  Gradients grads = Gradients::zeros_like(net);
  double loss = 0.0;
  const double n = static_cast<double>(inputs.size());
  ForwardCache cache;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const double pred = forward_cached(net, inputs[i], cache)[0];
    const double residual = pred - targets[i];
    loss += residual * residual / n;
    const double dpred[1] = {2.0 * residual / n};
    backward(net, cache, dpred, grads);
  }
  return {loss, std::move(grads)};
}

struct AdamConfig {
  double step_size = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adaptive moment estimation with bias correction.
class Adam {
 public:
  explicit Adam(const Mlp& net)
      : m_(Gradients::zeros_like(net)), v_(Gradients::zeros_like(net)) {}

  void apply(Mlp& net, const Gradients& grads, const AdamConfig& cfg) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
    for (int l = 0; l < net.num_layers(); ++l) {
      update(net.weights[static_cast<std::size_t>(l)], grads.weights[static_cast<std::size_t>(l)],
             m_.weights[static_cast<std::size_t>(l)], v_.weights[static_cast<std::size_t>(l)], cfg,
             c1, c2);
      update(net.biases[static_cast<std::size_t>(l)], grads.biases[static_cast<std::size_t>(l)],
             m_.biases[static_cast<std::size_t>(l)], v_.biases[static_cast<std::size_t>(l)], cfg,
             c1, c2);
    }
  }

 private:
  static void update(std::vector<double>& params, const std::vector<double>& grads,
                     std::vector<double>& m, std::vector<double>& v, const AdamConfig& cfg,
                     double c1, double c2) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grads[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
      params[i] -= cfg.step_size * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.epsilon);
    }
  }

  Gradients m_, v_;
  long t_ = 0;
};

}  // namespace amplab::nn
