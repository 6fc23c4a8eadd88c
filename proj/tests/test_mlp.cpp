#include <catch2/catch_amalgamated.hpp>

#include "amplab/mlp.hpp"

using namespace amplab;
using nn::Mlp;

namespace {

double& param_ref(Mlp& net, std::size_t flat_index) {
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    if (flat_index < net.weights[l].size()) return net.weights[l][flat_index];
    flat_index -= net.weights[l].size();
    if (flat_index < net.biases[l].size()) return net.biases[l][flat_index];
    flat_index -= net.biases[l].size();
  }
  throw std::out_of_range("flat parameter index");
}

double grad_at(const nn::Gradients& g, std::size_t flat_index) {
  for (std::size_t l = 0; l < g.weights.size(); ++l) {
    if (flat_index < g.weights[l].size()) return g.weights[l][flat_index];
    flat_index -= g.weights[l].size();
    if (flat_index < g.biases[l].size()) return g.biases[l][flat_index];
    flat_index -= g.biases[l].size();
  }
  throw std::out_of_range("flat gradient index");
}

}  // namespace

TEST_CASE("an all-zero network outputs zero", "[mlp]") {
  const auto net = Mlp::zeros({3, 5, 2});
  const auto out = nn::forward(net, std::vector<double>{1.0, -2.0, 0.5});
  REQUIRE(out == std::vector<double>{0.0, 0.0});
}

TEST_CASE("a single layer is an affine map", "[mlp]") {
  auto net = Mlp::zeros({2, 2});
  net.weights[0] = {1.0, 2.0, -0.5, 0.25};  // row-major (out x in)
  net.biases[0] = {0.125, -1.0};
  const auto out = nn::forward(net, std::vector<double>{3.0, -1.0});
  REQUIRE(out[0] == 1.0 * 3.0 + 2.0 * -1.0 + 0.125);
  REQUIRE(out[1] == -0.5 * 3.0 + 0.25 * -1.0 - 1.0);
}

TEST_CASE("initialization and evaluation replay bit-identically", "[mlp]") {
  RngStream rng_a(31), rng_b(31);
  const auto a = Mlp::create({4, 8, 1}, rng_a);
  const auto b = Mlp::create({4, 8, 1}, rng_b);
  REQUIRE(a.weights == b.weights);
  const std::vector<double> x{0.2, -0.4, 1.7, 0.0};
  REQUIRE(nn::forward(a, x) == nn::forward(b, x));
}

TEST_CASE("input width is checked", "[mlp]") {
  const auto net = Mlp::zeros({3, 1});
  REQUIRE_THROWS_AS(nn::forward(net, std::vector<double>{1.0}), ContractViolation);
}

TEST_CASE("the gradient vanishes when targets equal outputs", "[mlp]") {
  RngStream rng(5);
  const auto net = Mlp::create({2, 4, 1}, rng);
  const std::vector<std::vector<double>> inputs{{0.5, -1.0}, {2.0, 0.25}};
  std::vector<double> targets;
  for (const auto& x : inputs) targets.push_back(nn::forward(net, x)[0]);
  const auto [loss, grads] = nn::mse_loss_and_gradient(net, inputs, targets);
  REQUIRE(loss == 0.0);
  for (std::size_t i = 0; i < net.parameter_count(); ++i) REQUIRE(grad_at(grads, i) == 0.0);
}

TEST_CASE("gradients match central finite differences on a 2-8-1 net", "[mlp]") {
  RngStream rng(77);
  auto net = Mlp::create({2, 8, 1}, rng);
  for (auto& b : net.biases[0]) b = rng.uniform(-0.3, 0.3);
  std::vector<std::vector<double>> inputs;
  std::vector<double> targets;
  for (int i = 0; i < 6; ++i) {
    inputs.push_back({rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)});
    targets.push_back(rng.uniform(-1.5, 1.5));
  }
  const auto [loss, grads] = nn::mse_loss_and_gradient(net, inputs, targets);
  REQUIRE(std::isfinite(loss));

  const double h = 1e-5;
  for (std::size_t p = 0; p < net.parameter_count(); ++p) {
    double& theta = param_ref(net, p);
    const double saved = theta;
    theta = saved + h;
    const double up = nn::mse_loss_and_gradient(net, inputs, targets).first;
    theta = saved - h;
    const double down = nn::mse_loss_and_gradient(net, inputs, targets).first;
    theta = saved;
    const double fd = (up - down) / (2.0 * h);
    const double g = grad_at(grads, p);
    const double rel = std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), 1e-8});
    INFO("parameter " << p << ": grad " << g << " vs fd " << fd);
    REQUIRE(rel < 1e-4);
  }
}

TEST_CASE("doubling the residuals doubles the gradient", "[mlp]") {
  RngStream rng(9);
  const auto net = Mlp::create({2, 4, 1}, rng);
  const std::vector<std::vector<double>> inputs{{1.0, 0.5}, {-0.25, 2.0}, {0.0, -1.0}};
  std::vector<double> base, doubled;
  for (const auto& x : inputs) {
    const double pred = nn::forward(net, x)[0];
    base.push_back(pred - 1.0);    // residual 1.0
    doubled.push_back(pred - 2.0); // residual 2.0
  }
  const auto g1 = nn::mse_loss_and_gradient(net, inputs, base).second;
  const auto g2 = nn::mse_loss_and_gradient(net, inputs, doubled).second;
  for (std::size_t p = 0; p < net.parameter_count(); ++p)
    REQUIRE(grad_at(g2, p) == 2.0 * grad_at(g1, p));
}

TEST_CASE("a zero step size leaves parameters untouched", "[mlp]") {
  RngStream rng(11);
  auto net = Mlp::create({3, 6, 1}, rng);
  const auto before = net.weights;
  nn::Adam optimizer(net);
  nn::AdamConfig cfg;
  cfg.step_size = 0.0;
  const std::vector<std::vector<double>> inputs{{1.0, 2.0, 3.0}};
  const std::vector<double> targets{5.0};
  for (int i = 0; i < 3; ++i) {
    const auto [loss, grads] = nn::mse_loss_and_gradient(net, inputs, targets);
    optimizer.apply(net, grads, cfg);
  }
  REQUIRE(net.weights == before);
}

TEST_CASE("adam reduces the loss on a small regression", "[mlp]") {
  RngStream rng(13);
  auto net = Mlp::create({1, 8, 1}, rng);
  std::vector<std::vector<double>> inputs;
  std::vector<double> targets;
  for (int i = 0; i < 16; ++i) {
    const double x = -1.0 + 2.0 * i / 15.0;
    inputs.push_back({x});
    targets.push_back(x * x);
  }
  nn::Adam optimizer(net);
  nn::AdamConfig cfg;
  cfg.step_size = 1e-2;
  const double initial = nn::mse_loss_and_gradient(net, inputs, targets).first;
  for (int step = 0; step < 400; ++step) {
    const auto [loss, grads] = nn::mse_loss_and_gradient(net, inputs, targets);
    optimizer.apply(net, grads, cfg);
  }
  const double final_loss = nn::mse_loss_and_gradient(net, inputs, targets).first;
  REQUIRE(final_loss < 0.05 * initial);
}
