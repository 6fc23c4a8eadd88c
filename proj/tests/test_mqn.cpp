#include <catch2/catch_amalgamated.hpp>

#include <map>

#include "amplab/estimators.hpp"
#include "amplab/mqn.hpp"
#include "amplab/oracle.hpp"

using namespace amplab;
using mqn::Action;
using mqn::State;

namespace {

mqn::Config il_config() {
  auto cfg = mqn::Config::regime("IL");
  REQUIRE(cfg.total_rate() == Catch::Approx(6.1));
  return cfg;
}

std::map<State, double> as_map(const std::vector<mqn::Outcome>& dist) {
  std::map<State, double> out;
  for (const auto& o : dist) out[o.next] += o.prob;
  return out;
}

}  // namespace

TEST_CASE("transition distribution from the empty state under idle", "[mqn]") {
  const auto cfg = il_config();
  const auto dist = as_map(mqn::transition_distribution({0, 0, 0}, Action::idle, cfg));
  REQUIRE(dist.size() == 3);
  REQUIRE(dist.at({1, 0, 0}) == Catch::Approx(0.3 / 6.1).margin(1e-15));
  REQUIRE(dist.at({0, 1, 0}) == Catch::Approx(0.3 / 6.1).margin(1e-15));
  REQUIRE(dist.at({0, 0, 0}) == Catch::Approx(5.5 / 6.1).margin(1e-15));
}

TEST_CASE("transition distribution while serving class 1", "[mqn]") {
  const auto cfg = il_config();
  const auto dist = as_map(mqn::transition_distribution({1, 0, 0}, Action::serve_class1, cfg));
  REQUIRE(dist.size() == 4);
  REQUIRE(dist.at({2, 0, 0}) == Catch::Approx(0.3 / 6.1).margin(1e-15));
  REQUIRE(dist.at({1, 1, 0}) == Catch::Approx(0.3 / 6.1).margin(1e-15));
  REQUIRE(dist.at({0, 0, 1}) == Catch::Approx(2.0 / 6.1).margin(1e-15));
  REQUIRE(dist.at({1, 0, 0}) == Catch::Approx(3.5 / 6.1).margin(1e-15));
}

TEST_CASE("transition probabilities sum to exactly one", "[mqn]") {
  auto cfg = il_config();
  for (const int cap : {-1, 4}) {
    cfg.queue_cap = cap;
    for (int q1 = 0; q1 <= 20; ++q1)
      for (int q2 = 0; q2 <= 20; ++q2)
        for (int q3 = 0; q3 <= 20; ++q3) {
          if (cap >= 0 && (q1 > cap || q2 > cap || q3 > cap)) continue;
          const State s{q1, q2, q3};
          for (const Action a : mqn::kAllActions) {
            if (!mqn::action_valid(s, a)) continue;
            const auto dist = mqn::transition_distribution(s, a, cfg);
            double total = 0.0;
            for (const auto& o : dist) total += o.prob;
            REQUIRE(total == 1.0);
          }
        }
  }
}

TEST_CASE("next states move one job at a time", "[mqn]") {
  const auto cfg = il_config();
  for (int q1 = 0; q1 <= 6; ++q1)
    for (int q2 = 0; q2 <= 6; ++q2)
      for (int q3 = 0; q3 <= 6; ++q3) {
        const State s{q1, q2, q3};
        for (const Action a : mqn::kAllActions) {
          if (!mqn::action_valid(s, a)) continue;
          for (const auto& o : mqn::transition_distribution(s, a, cfg)) {
            const int d1 = o.next.q1 - q1;
            const int d2 = o.next.q2 - q2;
            const int d3 = o.next.q3 - q3;
            const bool routing = d1 == -1 && d2 == 0 && d3 == 1;  // class-1 completion
            const bool single_move =
                std::abs(d1) + std::abs(d2) + std::abs(d3) <= 1;
            REQUIRE((routing || single_move));
          }
        }
      }
}

TEST_CASE("invalid actions are rejected", "[mqn]") {
  const auto cfg = il_config();
  REQUIRE_THROWS_AS(mqn::transition_distribution({0, 1, 0}, Action::serve_class1, cfg),
                    ContractViolation);
  REQUIRE_THROWS_AS(mqn::transition_distribution({1, 0, 2}, Action::serve_class2, cfg),
                    ContractViolation);
}

TEST_CASE("step returns the pre-transition holding cost", "[mqn]") {
  const auto cfg = il_config();
  RngStream rng(7);
  REQUIRE(mqn::step({0, 0, 0}, Action::idle, cfg, rng).second == 0.0);
  REQUIRE(mqn::step({2, 1, 3}, Action::serve_class2, cfg, rng).second == 6.0);
}

TEST_CASE("empirical transition frequencies match the enumeration", "[mqn]") {
  const auto cfg = il_config();
  const State s{2, 1, 1};
  const Action a = Action::serve_class2;
  const auto dist = mqn::transition_distribution(s, a, cfg);
  const int n = 100000;
  RngStream rng(123);
  std::map<State, int> counts;
  for (int i = 0; i < n; ++i) counts[mqn::sample_transition(s, a, cfg, rng)]++;
  for (const auto& o : dist) {
    const double freq = static_cast<double>(counts[o.next]) / n;
    const double sigma = std::sqrt(o.prob * (1.0 - o.prob) / n);
    REQUIRE(std::abs(freq - o.prob) <= 3.0 * sigma);
  }
}

TEST_CASE("zero-length episode has one state and its regeneration", "[mqn]") {
  auto cfg = il_config();
  cfg.episode_length = 0;
  RngStream rng(1);
  const auto traj = mqn::simulate_episode(mqn::UniformPolicy(cfg), cfg, rng);
  REQUIRE(traj.states.size() == 1);
  REQUIRE(traj.actions.empty());
  REQUIRE(traj.regen_indices == std::vector<int>{0});
}

TEST_CASE("uniformized dynamics depend only on rate ratios", "[mqn]") {
  auto cfg = il_config();
  cfg.episode_length = 400;
  auto scaled = cfg;
  scaled.lambda1 *= 2.0;
  scaled.lambda2 *= 2.0;
  scaled.mu1 *= 2.0;
  scaled.mu2 *= 2.0;
  scaled.mu3 *= 2.0;
  RngStream rng_a(42);
  RngStream rng_b(42);
  const auto a = mqn::simulate_episode(mqn::UniformPolicy(cfg), cfg, rng_a);
  const auto b = mqn::simulate_episode(mqn::UniformPolicy(scaled), scaled, rng_b);
  REQUIRE(a.states == b.states);
  REQUIRE(a.actions == b.actions);
  REQUIRE(a.costs == b.costs);
}

TEST_CASE("same seed and policy reproduce the trajectory", "[mqn]") {
  auto cfg = il_config();
  cfg.episode_length = 300;
  RngStream rng_a(9);
  RngStream rng_b(9);
  const mqn::StaticPriorityPolicy policy;
  const auto a = mqn::simulate_episode(policy, cfg, rng_a);
  const auto b = mqn::simulate_episode(policy, cfg, rng_b);
  REQUIRE(a.states == b.states);
  REQUIRE(a.actions == b.actions);
  REQUIRE(a.regen_indices == b.regen_indices);
}

TEST_CASE("regeneration indices mark exactly the empty-state visits", "[mqn]") {
  auto cfg = il_config();
  cfg.episode_length = 500;
  RngStream rng(17);
  const auto traj = mqn::simulate_episode(mqn::UniformPolicy(cfg), cfg, rng);
  std::vector<int> expected;
  for (std::size_t k = 0; k < traj.states.size(); ++k)
    if (traj.states[k].empty()) expected.push_back(static_cast<int>(k));
  REQUIRE(traj.regen_indices == expected);
}

TEST_CASE("policy emitting an invalid action is reported with its step", "[mqn]") {
  struct BrokenPolicy {
    std::vector<std::pair<Action, double>> action_distribution(const State&) const {
      return {{Action::serve_class1, 1.0}};  // invalid from the empty start state
    }
  };
  auto cfg = il_config();
  cfg.episode_length = 5;
  RngStream rng(3);
  REQUIRE_THROWS_WITH(mqn::simulate_episode(BrokenPolicy{}, cfg, rng),
                      Catch::Matchers::ContainsSubstring("step 0"));
}

TEST_CASE("long-run cost under static priority matches the Poisson solve", "[mqn]") {
  auto cfg = il_config();
  cfg.queue_cap = 10;
  cfg.episode_length = 1000000;
  const auto net = oracle::TruncatedMqn::build(cfg, 10);
  const mqn::StaticPriorityPolicy policy;
  const auto solution = oracle::exact_poisson_solution(net, policy);

  RngStream rng(2024);
  const auto traj = mqn::simulate_episode(policy, cfg, rng);
  const double avg = estimators::estimate_average_cost({&traj, 1});
  REQUIRE(avg == Catch::Approx(solution.average_cost).epsilon(0.02));
}

TEST_CASE("feasible actions follow the masking rule", "[mqn]") {
  auto cfg = il_config();
  REQUIRE(mqn::feasible_actions({0, 0, 0}, cfg) == std::vector<Action>{Action::idle});
  REQUIRE(mqn::feasible_actions({1, 0, 0}, cfg) ==
          std::vector<Action>{Action::serve_class1, Action::idle});
  cfg.allow_idle = false;
  REQUIRE(mqn::feasible_actions({1, 2, 0}, cfg) ==
          std::vector<Action>{Action::serve_class1, Action::serve_class2});
  REQUIRE(mqn::feasible_actions({0, 0, 3}, cfg) == std::vector<Action>{Action::idle});
}

TEST_CASE("config validation enforces positivity and stability", "[mqn]") {
  auto cfg = il_config();
  cfg.lambda1 = 0.0;
  REQUIRE_THROWS_AS(cfg.validate(), ContractViolation);
  cfg = il_config();
  cfg.lambda1 = 3.0;  // station A overload
  REQUIRE_THROWS_AS(cfg.validate(), ContractViolation);
  cfg = il_config();
  cfg.mu3 = 0.2;  // station B overload
  REQUIRE_THROWS_AS(cfg.validate(), ContractViolation);
  REQUIRE_THROWS_AS(mqn::Config::regime("XY"), ContractViolation);

  const auto bl = mqn::Config::regime("BL");
  REQUIRE(bl.lambda1 / bl.mu1 + bl.lambda2 / bl.mu2 ==
          Catch::Approx(bl.lambda1 / bl.mu3));  // balanced loads
  const auto bm = mqn::Config::regime("BM");
  REQUIRE(bm.lambda1 / bm.mu1 + bm.lambda2 / bm.mu2 == Catch::Approx(bm.lambda1 / bm.mu3));
}
