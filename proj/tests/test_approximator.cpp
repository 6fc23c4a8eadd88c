#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "amplab/approximator.hpp"

using namespace amplab;
using nn::Normalization;
using nn::ValueNet;

TEST_CASE("standardize then destandardize is the identity", "[approximator]") {
  const std::vector<std::vector<double>> rows{{1.0, -3.0}, {2.5, 0.0}, {4.0, 7.5}, {0.25, 2.0}};
  const auto stats = nn::compute_stats(rows);
  for (const auto& row : rows) {
    const auto z = nn::standardize(row, stats);
    for (std::size_t d = 0; d < row.size(); ++d) {
      const double back = z[d] * stats.stddev[d] + stats.mean[d];
      REQUIRE(back == Catch::Approx(row[d]).margin(1e-12));
    }
  }
}

TEST_CASE("constant dimensions hit the std floor without blowing up", "[approximator]") {
  const std::vector<std::vector<double>> rows{{5.0, 1.0}, {5.0, 2.0}, {5.0, 3.0}};
  const auto stats = nn::compute_stats(rows);
  REQUIRE(stats.stddev[0] == 1e-8);
  const auto z = nn::standardize(rows[1], stats);
  REQUIRE(z[0] == 0.0);
}

TEST_CASE("fitting constant targets converges to the constant", "[approximator]") {
  RngStream rng(3);
  ValueNet net(nn::Mlp::create({2, 16, 1}, rng), Normalization::input_and_output);
  std::vector<std::vector<double>> inputs;
  for (int i = 0; i < 64; ++i) inputs.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1)});
  const std::vector<double> targets(inputs.size(), 4.25);
  nn::FitConfig cfg;
  cfg.epochs = 50;
  cfg.minibatch = 16;
  cfg.adam.step_size = 3e-3;
  net.fit(inputs, targets, cfg, rng);
  for (const auto& x : inputs)
    REQUIRE(net.evaluate(x) == Catch::Approx(4.25).margin(1e-3));
}

TEST_CASE("pre-standardized data under no scheme equals input-only on raw data",
          "[approximator]") {
  RngStream data_rng(5);
  std::vector<std::vector<double>> raw;
  std::vector<double> targets;
  for (int i = 0; i < 40; ++i) {
    raw.push_back({data_rng.uniform(5.0, 9.0), data_rng.uniform(-30.0, -10.0)});
    targets.push_back(data_rng.uniform(0.0, 2.0));
  }
  const auto stats = nn::compute_stats(raw);
  std::vector<std::vector<double>> pre;
  for (const auto& row : raw) pre.push_back(nn::standardize(row, stats));

  nn::FitConfig cfg;
  cfg.epochs = 1;
  cfg.minibatch = 8;
  RngStream net_rng_a(7), net_rng_b(7);
  ValueNet a(nn::Mlp::create({2, 8, 1}, net_rng_a), Normalization::input_only);
  ValueNet b(nn::Mlp::create({2, 8, 1}, net_rng_b), Normalization::none);
  RngStream fit_a(11), fit_b(11);
  const double loss_a = a.fit(raw, targets, cfg, fit_a);
  const double loss_b = b.fit(pre, targets, cfg, fit_b);
  REQUIRE(loss_a == Catch::Approx(loss_b).margin(1e-6));
}

TEST_CASE("a zero learning rate leaves the value net unchanged", "[approximator]") {
  RngStream rng(9);
  ValueNet net(nn::Mlp::create({2, 6, 1}, rng), Normalization::input_only);
  const auto before = net.net().weights;
  nn::FitConfig cfg;
  cfg.adam.step_size = 0.0;
  cfg.epochs = 3;
  const std::vector<std::vector<double>> inputs{{1.0, 2.0}, {0.0, -1.0}};
  const std::vector<double> targets{3.0, -0.5};
  net.fit(inputs, targets, cfg, rng);
  REQUIRE(net.net().weights == before);
}

TEST_CASE("non-finite losses abort with a diagnostic", "[approximator]") {
  RngStream rng(13);
  ValueNet net(nn::Mlp::create({1, 4, 1}, rng), Normalization::input_only);
  const std::vector<std::vector<double>> inputs{{1.0}, {2.0}};
  const std::vector<double> targets{std::numeric_limits<double>::quiet_NaN(), 1.0};
  nn::FitConfig cfg;
  REQUIRE_THROWS_WITH(net.fit(inputs, targets, cfg, rng),
                      Catch::Matchers::ContainsSubstring("non-finite loss"));
}

TEST_CASE("raw-scale predictions are comparable across schemes", "[approximator]") {
  RngStream data_rng(17);
  std::vector<std::vector<double>> inputs;
  std::vector<double> targets;
  for (int i = 0; i < 128; ++i) {
    const double x = data_rng.uniform(-2.0, 2.0);
    inputs.push_back({x, x * x});
    targets.push_back(50.0 + 10.0 * x);  // large offset stresses output scaling
  }
  nn::FitConfig cfg;
  cfg.epochs = 400;
  cfg.minibatch = 32;
  cfg.adam.step_size = 1e-2;
  for (const auto scheme : {Normalization::input_only, Normalization::input_and_output}) {
    RngStream net_rng(19), fit_rng(23);
    ValueNet net(nn::Mlp::create({2, 32, 1}, net_rng), scheme);
    net.fit(inputs, targets, cfg, fit_rng);
    double worst = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i)
      worst = std::max(worst, std::abs(net.evaluate(inputs[i]) - targets[i]));
    INFO("scheme " << nn::to_string(scheme));
    REQUIRE(worst < 5.0);  // both land on the raw target scale
  }
}

TEST_CASE("masked probabilities exclude infeasible actions exactly", "[approximator]") {
  const std::vector<double> logits{0.3, -1.2, 2.0, 0.0};
  const std::vector<std::uint8_t> mask{1, 0, 1, 1};
  const auto probs = nn::PolicyHead::masked_probabilities(logits, mask);
  REQUIRE(probs[1] == 0.0);
  double total = 0.0;
  for (const double p : probs) total += p;
  REQUIRE(total == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(probs[2] > probs[0]);

  const std::vector<std::uint8_t> none{0, 0, 0, 0};
  REQUIRE_THROWS_AS(nn::PolicyHead::masked_probabilities(logits, none), ContractViolation);
}

TEST_CASE("value checkpoints round-trip bit-exactly", "[approximator]") {
  RngStream rng(29);
  ValueNet net(nn::Mlp::create({3, 8, 1}, rng), Normalization::input_and_output);
  std::vector<std::vector<double>> inputs;
  std::vector<double> targets;
  for (int i = 0; i < 32; ++i) {
    inputs.push_back({rng.uniform(-1, 1), rng.uniform(0, 4), rng.uniform(-2, 0)});
    targets.push_back(rng.uniform(-10, 10));
  }
  nn::FitConfig cfg;
  cfg.epochs = 2;
  net.fit(inputs, targets, cfg, rng);

  const auto path = std::filesystem::temp_directory_path() / "amplab_valuenet_test.txt";
  net.save(path);
  const auto loaded = ValueNet::load(path);
  for (const auto& x : inputs) REQUIRE(loaded.evaluate(x) == net.evaluate(x));
  std::filesystem::remove(path);
}

TEST_CASE("policy checkpoints round-trip bit-exactly", "[approximator]") {
  RngStream rng(31);
  nn::PolicyHead head(nn::Mlp::create({4, 8, 3}, rng));
  const auto path = std::filesystem::temp_directory_path() / "amplab_policy_test.txt";
  head.save(path);
  const auto loaded = nn::PolicyHead::load(path);
  const std::vector<double> features{0.1, -0.7, 2.0, 0.0};
  REQUIRE(loaded.logits(features) == head.logits(features));
  std::filesystem::remove(path);
}
