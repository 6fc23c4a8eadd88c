#include <catch2/catch_amalgamated.hpp>

#include <map>

#include "amplab/ridehail.hpp"

using namespace amplab;
using ridehail::Action;
using ridehail::Config;
using ridehail::State;

namespace {

Config make_config(int regions, int cars, int horizon, int patience, double rate, int tau) {
  Config cfg;
  cfg.regions = regions;
  cfg.cars = cars;
  cfg.horizon = horizon;
  cfg.patience = patience;
  cfg.arrival_rates.assign(regions, std::vector<double>(regions, rate));
  cfg.travel_time.assign(regions, std::vector<int>(regions, tau));
  return cfg;
}

}  // namespace

TEST_CASE("matching dispatches the cursor car", "[ridehail]") {
  auto cfg = make_config(3, 1, 10, 2, 0.0, 1);
  cfg.travel_time[1][2] = 3;
  RngStream rng(1);
  State s = ridehail::initial_state(cfg, rng);
  s.epoch = 5;
  s.cars[0] = {1, 0};
  s.open_requests = {{1, 2, 6}};
  ridehail::detail::snapshot_available(s);

  const auto [next, reward] = ridehail::sdm_step(s, Action::match(1, 2), cfg);
  REQUIRE(reward == 1.0);
  REQUIRE(next.cars[0].region == 2);
  REQUIRE(next.cars[0].busy_until == 8);
  REQUIRE(next.open_requests.empty());
  REQUIRE(next.cursor == 1);
}

TEST_CASE("hold only advances the cursor", "[ridehail]") {
  const auto cfg = make_config(2, 3, 5, 1, 0.4, 1);
  RngStream rng(2);
  const State s = ridehail::initial_state(cfg, rng);
  const auto [next, reward] = ridehail::sdm_step(s, Action::hold(), cfg);
  REQUIRE(reward == 0.0);
  REQUIRE(next.cars == s.cars);
  REQUIRE(next.open_requests == s.open_requests);
  REQUIRE(next.cursor == s.cursor + 1);
}

TEST_CASE("consecutive holds commute across the two cars", "[ridehail]") {
  const auto cfg = make_config(2, 2, 5, 1, 0.3, 1);
  RngStream rng(3);
  const State s = ridehail::initial_state(cfg, rng);
  REQUIRE(s.available_count() == 2);
  const auto once = ridehail::sdm_step(s, Action::hold(), cfg).first;
  const auto twice = ridehail::sdm_step(once, Action::hold(), cfg).first;
  REQUIRE(twice.epoch_end_pending());
  // relabeling the two available cars changes nothing a hold can observe
  State swapped = s;
  std::swap(swapped.available_cars[0], swapped.available_cars[1]);
  const auto other =
      ridehail::sdm_step(ridehail::sdm_step(swapped, Action::hold(), cfg).first,
                         Action::hold(), cfg)
          .first;
  REQUIRE(other.cars == twice.cars);
  REQUIRE(other.open_requests == twice.open_requests);
  REQUIRE(other.epoch == twice.epoch);
}

TEST_CASE("infeasible matches are named", "[ridehail]") {
  const auto cfg = make_config(2, 1, 5, 1, 0.0, 1);
  RngStream rng(4);
  State s = ridehail::initial_state(cfg, rng);
  s.open_requests = {{1, 0, 3}};  // origin 1, but the car sits at region 0
  REQUIRE_THROWS_WITH(ridehail::sdm_step(s, Action::match(1, 0), cfg),
                      Catch::Matchers::ContainsSubstring("region"));
  REQUIRE_THROWS_WITH(ridehail::sdm_step(s, Action::match(0, 1), cfg),
                      Catch::Matchers::ContainsSubstring("no such open request"));
}

TEST_CASE("advance with zero rates keeps only surviving requests", "[ridehail]") {
  auto cfg = make_config(2, 1, 6, 3, 0.0, 1);
  RngStream rng(5);
  State s = ridehail::initial_state(cfg, rng);
  s.open_requests = {{0, 1, 1}, {1, 1, 4}};  // first expires when epoch 1 ends
  State pending = ridehail::sdm_step(s, Action::hold(), cfg).first;
  REQUIRE(pending.epoch_end_pending());
  const State next = ridehail::epoch_advance(pending, cfg, rng);
  REQUIRE(next.epoch == 2);
  REQUIRE(next.open_requests == std::vector<ridehail::Request>{{1, 1, 4}});
}

TEST_CASE("advance preconditions are enforced", "[ridehail]") {
  const auto cfg = make_config(2, 2, 3, 1, 0.1, 1);
  RngStream rng(6);
  State s = ridehail::initial_state(cfg, rng);
  REQUIRE_THROWS_WITH(ridehail::epoch_advance(s, cfg, rng),
                      Catch::Matchers::ContainsSubstring("mid-SDM"));
  s.epoch = cfg.horizon;
  ridehail::detail::snapshot_available(s);
  s.cursor = s.available_count();
  REQUIRE_THROWS_WITH(ridehail::epoch_advance(s, cfg, rng),
                      Catch::Matchers::ContainsSubstring("final epoch"));
}

TEST_CASE("a patience-1 request is gone two epochs after birth", "[ridehail]") {
  auto cfg = make_config(1, 1, 5, 1, 0.0, 1);
  RngStream rng(7);
  State s = ridehail::initial_state(cfg, rng);
  s.open_requests = {{0, 0, 1 + cfg.patience}};  // born at epoch 1
  auto pending = ridehail::sdm_step(s, Action::hold(), cfg).first;
  const State at2 = ridehail::epoch_advance(pending, cfg, rng);
  REQUIRE(at2.open_requests.size() == 1);  // still alive at epoch 2
  pending = ridehail::sdm_step(at2, Action::hold(), cfg).first;
  const State at3 = ridehail::epoch_advance(pending, cfg, rng);
  REQUIRE(at3.open_requests.empty());  // absent from epoch 3
}

TEST_CASE("new-request counts match their Poisson rates", "[ridehail]") {
  const auto cfg = make_config(2, 1, 5, 1, 0.0, 1);
  Config rates = cfg;
  rates.arrival_rates = {{0.3, 1.2}, {0.0, 2.5}};
  RngStream rng(8);
  State base = ridehail::initial_state(cfg, rng);
  base.open_requests.clear();
  State pending = ridehail::sdm_step(base, Action::hold(), cfg).first;

  const int n = 100000;
  std::vector<std::vector<double>> sums(2, std::vector<double>(2, 0.0));
  for (int k = 0; k < n; ++k) {
    const State next = ridehail::epoch_advance(pending, rates, rng);
    std::vector<std::vector<int>> counts(2, std::vector<int>(2, 0));
    for (const auto& req : next.open_requests) counts[req.origin][req.destination]++;
    for (int o = 0; o < 2; ++o)
      for (int d = 0; d < 2; ++d) sums[o][d] += counts[o][d];
  }
  for (int o = 0; o < 2; ++o)
    for (int d = 0; d < 2; ++d) {
      const double rate = rates.arrival_rates[o][d];
      const double bound = 3.0 * std::sqrt(std::max(rate, 1e-12)) / std::sqrt(n);
      REQUIRE(std::abs(sums[o][d] / n - rate) <= bound);
    }
}

TEST_CASE("scenario sampling is degenerate under zero rates", "[ridehail]") {
  const auto cfg = make_config(2, 2, 6, 2, 0.0, 1);
  RngStream rng(9);
  State s = ridehail::initial_state(cfg, rng);
  s.open_requests = {{0, 1, 5}};
  State pending = ridehail::sdm_step(ridehail::sdm_step(s, Action::hold(), cfg).first,
                                     Action::hold(), cfg)
                      .first;
  const State advanced = ridehail::epoch_advance(pending, cfg, rng);
  for (const int L : {1, 7}) {
    const auto scenarios = ridehail::sample_arrival_scenarios(pending, cfg, L, rng);
    REQUIRE(scenarios.size() == static_cast<std::size_t>(L));
    for (const auto& sc : scenarios) REQUIRE(sc == advanced);
  }
  REQUIRE_THROWS_AS(ridehail::sample_arrival_scenarios(pending, cfg, 0, rng),
                    ContractViolation);
}

TEST_CASE("scenario means track the total arrival mass", "[ridehail]") {
  auto cfg = make_config(3, 2, 6, 1, 0.4, 1);
  RngStream rng(10);
  State s = ridehail::initial_state(cfg, rng);
  State pending = s;
  while (pending.at_decision())
    pending = ridehail::sdm_step(pending, Action::hold(), cfg).first;

  const int L = 500;
  const auto scenarios = ridehail::sample_arrival_scenarios(pending, cfg, L, rng);
  double mean_new = 0.0;
  for (const auto& sc : scenarios)
    mean_new += static_cast<double>(sc.requests_generated - pending.requests_generated);
  mean_new /= L;
  const double lambda_total = 0.4 * 9;
  REQUIRE(std::abs(mean_new - lambda_total) <= 3.0 * std::sqrt(lambda_total) / std::sqrt(L));
}

TEST_CASE("zero demand yields zero rewards and matching rate zero", "[ridehail]") {
  const auto cfg = make_config(3, 4, 8, 1, 0.0, 1);
  RngStream rng(11);
  const auto traj = ridehail::simulate_episode(ridehail::UniformPolicy(), cfg, rng);
  REQUIRE(traj.total_requests == 0);
  for (const auto& rec : traj.records) REQUIRE(rec.reward == 0.0);
  REQUIRE(traj.matching_rate() == 0.0);
}

TEST_CASE("saturated single-region system matches every epoch", "[ridehail]") {
  const auto cfg = make_config(1, 1, 12, 1, 25.0, 1);
  RngStream rng(12);
  const auto traj = ridehail::simulate_episode(ridehail::GreedyMatchPolicy(), cfg, rng);
  REQUIRE(traj.records.size() == static_cast<std::size_t>(cfg.horizon));
  REQUIRE(traj.total_reward == static_cast<double>(cfg.horizon));
  REQUIRE(traj.matching_rate() <= 1.0);
}

TEST_CASE("the full-scale configuration validates", "[ridehail]") {
  const auto cfg = make_config(10, 500, 360, 2, 0.1, 3);
  REQUIRE_NOTHROW(cfg.validate());
}

TEST_CASE("within-epoch transitions replay bit-identically", "[ridehail]") {
  const auto cfg = make_config(4, 6, 10, 2, 0.5, 2);
  RngStream rng(13);
  const auto traj = ridehail::simulate_episode(ridehail::UniformPolicy(), cfg, rng);
  REQUIRE_FALSE(traj.records.empty());

  // replay each epoch's action sequence from its first recorded state
  std::size_t j = 0;
  while (j < traj.records.size()) {
    State s = traj.records[j].state;
    const int epoch = traj.records[j].epoch;
    std::size_t k = j;
    while (k < traj.records.size() && traj.records[k].epoch == epoch) {
      REQUIRE(s == traj.records[k].state);
      s = ridehail::sdm_step(s, traj.records[k].action, cfg).first;
      ++k;
    }
    j = k;
  }
}

TEST_CASE("per-epoch record counts equal the available-car counts", "[ridehail]") {
  const auto cfg = make_config(3, 5, 12, 1, 0.6, 2);
  RngStream rng(14);
  const auto traj = ridehail::simulate_episode(ridehail::UniformPolicy(), cfg, rng);
  std::map<int, int> per_epoch;
  for (const auto& rec : traj.records) per_epoch[rec.epoch]++;
  for (const auto& rec : traj.records)
    REQUIRE(per_epoch[rec.epoch] == rec.state.available_count());
  REQUIRE(traj.total_reward <= static_cast<double>(traj.total_requests));
}

TEST_CASE("busy_until never decreases along an episode", "[ridehail]") {
  const auto cfg = make_config(3, 4, 15, 1, 0.7, 3);
  RngStream rng(15);
  const auto traj = ridehail::simulate_episode(ridehail::GreedyMatchPolicy(), cfg, rng);
  for (std::size_t j = 1; j < traj.records.size(); ++j)
    for (std::size_t c = 0; c < traj.records[j].state.cars.size(); ++c)
      REQUIRE(traj.records[j].state.cars[c].busy_until >=
              traj.records[j - 1].state.cars[c].busy_until);
}

TEST_CASE("empty-fleet epochs are advanced through", "[ridehail]") {
  auto cfg = make_config(1, 1, 8, 10, 0.0, 3);
  RngStream rng(16);
  State s = ridehail::initial_state(cfg, rng);
  s.open_requests = {{0, 0, 11}};
  // match at epoch 1: the car is busy until epoch 4
  auto pending = ridehail::sdm_step(s, Action::match(0, 0), cfg).first;
  const State next = ridehail::epoch_advance(pending, cfg, rng);
  REQUIRE(next.epoch == 4);
  REQUIRE(next.available_count() == 1);
}

TEST_CASE("an episode whose tail has no available cars terminates", "[ridehail]") {
  auto cfg = make_config(1, 1, 3, 1, 0.0, 10);
  RngStream rng(17);
  State s = ridehail::initial_state(cfg, rng);
  s.open_requests = {{0, 0, 2}};
  auto pending = ridehail::sdm_step(s, Action::match(0, 0), cfg).first;
  const State next = ridehail::epoch_advance(pending, cfg, rng);
  REQUIRE(next.terminal);
}

TEST_CASE("config validation names the offending field", "[ridehail]") {
  auto cfg = make_config(2, 2, 5, 1, 0.1, 1);
  cfg.travel_time[0][1] = 0;
  REQUIRE_THROWS_WITH(cfg.validate(), Catch::Matchers::ContainsSubstring("travel time"));
  cfg = make_config(2, 2, 5, 1, 0.1, 1);
  cfg.arrival_rates[1][0] = -0.5;
  REQUIRE_THROWS_WITH(cfg.validate(), Catch::Matchers::ContainsSubstring("arrival rate"));
  cfg = make_config(2, 2, 5, 0, 0.1, 1);
  REQUIRE_THROWS_AS(cfg.validate(), ContractViolation);
}
