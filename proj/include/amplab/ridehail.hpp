#pragma once

#include <algorithm>
#include <compare>
#include <cstdint>
#include <limits>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "amplab/common.hpp"
#include "amplab/rng.hpp"

namespace amplab::ridehail {

/// Desk-scale dispatch MDP. An episode has `horizon` epochs; within an epoch
/// every available car takes exactly one sequential decision step (match one
/// open request originating in its region, or hold). Within-epoch transitions
/// are deterministic; randomness enters only between epochs, when requests
/// arrive per origin-destination pair as independent Poissons and stale
/// requests expire.
struct Config {
  int regions = 5;
  int cars = 20;
  int horizon = 60;  // H epochs per episode
  int patience = 1;  // epochs a request survives unmatched after its birth
  std::vector<std::vector<double>> arrival_rates;  // R x R, requests per epoch
  std::vector<std::vector<int>> travel_time;       // R x R, epochs, >= 1

  void validate() const {
    require(regions >= 1, "ridehail regions must be >= 1");
    require(cars >= 1, "ridehail cars must be >= 1");
    require(horizon >= 1, "ridehail horizon must be >= 1");
    require(patience >= 1, "ridehail patience must be >= 1");
    const auto r = static_cast<std::size_t>(regions);
    require(arrival_rates.size() == r, "arrival_rates must have one row per region");
    require(travel_time.size() == r, "travel_time must have one row per region");
    for (std::size_t o = 0; o < r; ++o) {
      require(arrival_rates[o].size() == r, "arrival_rates row ", o, " must have ", regions,
              " columns");
      require(travel_time[o].size() == r, "travel_time row ", o, " must have ", regions,
              " columns");
      for (std::size_t d = 0; d < r; ++d) {
        require(arrival_rates[o][d] >= 0.0, "arrival rate [", o, "][", d, "] must be >= 0");
        require(travel_time[o][d] >= 1, "travel time [", o, "][", d, "] must be >= 1");
      }
    }
  }

  /// Small default instance that runs in seconds: mild cross-region demand,
  /// travel times of 1-3 epochs.
  static Config desk_default() {
    Config cfg;
    cfg.regions = 5;
    cfg.cars = 20;
    cfg.horizon = 60;
    cfg.patience = 1;
    cfg.arrival_rates.assign(5, std::vector<double>(5, 0.15));
    cfg.travel_time.assign(5, std::vector<int>(5, 1));
    for (int o = 0; o < 5; ++o)
      for (int d = 0; d < 5; ++d) {
        const int spread = std::abs(o - d);
        cfg.travel_time[o][d] = 1 + std::min(spread, 2);
        if (o == d) cfg.arrival_rates[o][d] = 0.05;
      }
    return cfg;
  }
};

struct Request {
  int origin = 0;
  int destination = 0;
  int expiry = 0;  // present during epochs birth..expiry, dropped afterwards
  auto operator<=>(const Request&) const = default;
};

struct CarStatus {
  int region = 0;
  int busy_until = 0;  // available at epoch u iff busy_until <= u
  auto operator<=>(const CarStatus&) const = default;
};

/// SDM action for the cursor car: match a request by (origin, destination)
/// template, or hold.
struct Action {
  bool is_match = false;
  int origin = -1;
  int destination = -1;
  auto operator<=>(const Action&) const = default;

  static Action hold() { return {}; }
  static Action match(int o, int d) { return {true, o, d}; }
};

/// Number of action templates: one per (origin, destination) pair plus hold.
inline int action_count(const Config& cfg) { return cfg.regions * cfg.regions + 1; }

inline int action_to_index(const Action& a, const Config& cfg) {
  if (!a.is_match) return cfg.regions * cfg.regions;
  return a.origin * cfg.regions + a.destination;
}

inline Action action_from_index(int index, const Config& cfg) {
  const int r = cfg.regions;
  if (index == r * r) return Action::hold();
  require(index >= 0 && index < r * r, "ridehail action index out of range: ", index);
  return Action::match(index / r, index % r);
}

struct State {
  int epoch = 1;   // 1..H; terminal marks the past-horizon absorbing state
  int cursor = 0;  // index into available_cars of the car being assigned
  bool terminal = false;
  std::vector<CarStatus> cars;
  std::vector<Request> open_requests;
  std::vector<int> available_cars;  // snapshot taken at epoch start, ascending car id
  std::int64_t requests_generated = 0;  // episode-cumulative arrival counter

  auto operator<=>(const State&) const = default;

  int available_count() const { return static_cast<int>(available_cars.size()); }
  int sdm_step_index() const { return cursor + 1; }  // 1-based i
  bool epoch_end_pending() const { return !terminal && cursor >= available_count(); }
  bool at_decision() const { return !terminal && cursor < available_count(); }
  bool last_sdm_step() const { return at_decision() && cursor + 1 == available_count(); }

  int cursor_car() const {
    require(at_decision(), "state has no cursor car (epoch-end pending or terminal)");
    return available_cars[static_cast<std::size_t>(cursor)];
  }
};

namespace detail {

inline void snapshot_available(State& s) {
  s.available_cars.clear();
  for (std::size_t c = 0; c < s.cars.size(); ++c)
    if (s.cars[c].busy_until <= s.epoch) s.available_cars.push_back(static_cast<int>(c));
  s.cursor = 0;
}

inline void draw_arrivals(State& s, const Config& cfg, RngStream& rng) {
  for (int o = 0; o < cfg.regions; ++o)
    for (int d = 0; d < cfg.regions; ++d) {
      const int count = rng.poisson(cfg.arrival_rates[static_cast<std::size_t>(o)]
                                                     [static_cast<std::size_t>(d)]);
      for (int k = 0; k < count; ++k)
        s.open_requests.push_back({o, d, s.epoch + cfg.patience});
      s.requests_generated += count;
    }
}

}  // namespace detail

/// Fresh episode state: cars spread round-robin over regions, all available,
/// with the epoch-1 arrivals already drawn.
inline State initial_state(const Config& cfg, RngStream& rng) {
  cfg.validate();
  State s;
  s.epoch = 1;
  s.cars.resize(static_cast<std::size_t>(cfg.cars));
  for (int c = 0; c < cfg.cars; ++c) s.cars[static_cast<std::size_t>(c)] = {c % cfg.regions, 0};
  detail::draw_arrivals(s, cfg, rng);
  detail::snapshot_available(s);
  return s;
}

inline bool action_feasible(const State& s, const Action& a) {
  if (!s.at_decision()) return false;
  if (!a.is_match) return true;
  if (s.cars[static_cast<std::size_t>(s.cursor_car())].region != a.origin) return false;
  for (const auto& req : s.open_requests)
    if (req.origin == a.origin && req.destination == a.destination) return true;
  return false;
}

inline std::vector<Action> feasible_actions(const State& s) {
  require(s.at_decision(), "no feasible actions: state is not at a decision step");
  std::vector<Action> out;
  const int region = s.cars[static_cast<std::size_t>(s.cursor_car())].region;
  std::vector<std::pair<int, int>> seen;
  for (const auto& req : s.open_requests) {
    if (req.origin != region) continue;
    const std::pair<int, int> od{req.origin, req.destination};
    if (std::find(seen.begin(), seen.end(), od) != seen.end()) continue;
    seen.push_back(od);
    out.push_back(Action::match(od.first, od.second));
  }
  std::sort(out.begin(), out.end());
  out.push_back(Action::hold());
  return out;
}

/// Deterministic within-epoch step: a match consumes the earliest-expiring
/// open (o, d) request and dispatches the cursor car; a hold changes nothing.
/// Either way the cursor moves on to the next available car.
inline std::pair<State, double> sdm_step(const State& s, const Action& a, const Config& cfg) {
  require(s.at_decision(), "sdm_step called on a non-decision state (epoch ", s.epoch,
          ", cursor ", s.cursor, ")");
  State next = s;
  double reward = 0.0;
  if (a.is_match) {
    const int car = s.cursor_car();
    if (s.cars[static_cast<std::size_t>(car)].region != a.origin)
      fail_contract("infeasible match(", a.origin, ",", a.destination, "): cursor car ", car,
                    " is at region ", s.cars[static_cast<std::size_t>(car)].region);
    int pick = -1;
    for (std::size_t i = 0; i < next.open_requests.size(); ++i) {
      const auto& req = next.open_requests[i];
      if (req.origin != a.origin || req.destination != a.destination) continue;
      if (pick < 0 || req.expiry < next.open_requests[static_cast<std::size_t>(pick)].expiry)
        pick = static_cast<int>(i);
    }
    if (pick < 0)
      fail_contract("infeasible match(", a.origin, ",", a.destination,
                    "): no such open request at epoch ", s.epoch);
    next.open_requests.erase(next.open_requests.begin() + pick);
    auto& status = next.cars[static_cast<std::size_t>(car)];
    status.region = a.destination;
    status.busy_until =
        s.epoch + cfg.travel_time[static_cast<std::size_t>(a.origin)]
                                 [static_cast<std::size_t>(a.destination)];
    reward = 1.0;
  }
  next.cursor = s.cursor + 1;
  return {next, reward};
}

/// Moves an epoch-end-pending state to the next decision state: drops expired
/// requests, draws fresh arrivals, and advances the clock. Epochs in which no
/// car is available contribute no decision steps and are advanced through
/// immediately; running past the horizon yields the terminal state.
inline State epoch_advance(const State& s, const Config& cfg, RngStream& rng) {
  require(!s.terminal, "epoch_advance called on a terminal state");
  require(s.epoch_end_pending(), "epoch_advance called mid-SDM (cursor ", s.cursor, " of ",
          s.available_count(), ")");
  require(s.epoch < cfg.horizon, "epoch_advance called at the final epoch ", s.epoch);
  State next = s;
  while (true) {
    std::erase_if(next.open_requests,
                  [&](const Request& r) { return r.expiry <= next.epoch; });
    next.epoch += 1;
    detail::draw_arrivals(next, cfg, rng);
    detail::snapshot_available(next);
    if (!next.available_cars.empty()) return next;
    if (next.epoch >= cfg.horizon) {
      next.terminal = true;
      return next;
    }
  }
}

/// L independent epoch_advance draws from an epoch-end-pending state, in draw
/// order. Used by the sampling-based expected-value term.
inline std::vector<State> sample_arrival_scenarios(const State& s, const Config& cfg, int L,
                                                   RngStream& rng) {
  require(L >= 1, "sample_arrival_scenarios needs L >= 1, got ", L);
  std::vector<State> out;
  out.reserve(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l) out.push_back(epoch_advance(s, cfg, rng));
  return out;
}

struct StepRecord {
  int epoch = 0;
  int sdm_step = 0;  // 1-based i within the epoch
  State state;
  Action action;
  double reward = 0.0;
};

struct Trajectory {
  std::vector<StepRecord> records;
  std::int64_t total_requests = 0;
  double total_reward = 0.0;

  // Post-advance scenario states drawn during simulation for the
  // sampling-based estimator, keyed by record index (only last-SDM-step
  // records of non-final epochs have entries): scenarios[r][ai][l] for the
  // ai-th feasible action in feasible_actions order.
  std::unordered_map<int, std::vector<std::vector<State>>> scenarios;

  double matching_rate() const {
    return total_requests > 0 ? total_reward / static_cast<double>(total_requests) : 0.0;
  }
};

template <typename Policy>
Action sample_action(const Policy& policy, const State& s, RngStream& rng) {
  const auto dist = policy.action_distribution(s);
  require(!dist.empty(), "policy returned an empty action distribution");
  std::vector<double> probs;
  probs.reserve(dist.size());
  for (const auto& [a, p] : dist) probs.push_back(p);
  return dist[rng.categorical(probs)].first;
}

/// Runs one full episode. With scenario_count > 0, L = scenario_count arrival
/// scenarios are drawn per feasible action at every epoch-final decision step
/// (paying the sampling cost during simulation) and stored on the trajectory.
template <typename Policy>
Trajectory simulate_episode(const Policy& policy, const Config& cfg, RngStream& rng,
                            int scenario_count = 0) {
  Trajectory traj;
  State s = initial_state(cfg, rng);
  while (!s.terminal) {
    while (s.at_decision()) {
      const Action a = sample_action(policy, s, rng);
      if (!action_feasible(s, a))
        fail_contract("policy emitted infeasible action at epoch ", s.epoch, " step ",
                      s.sdm_step_index());
      const int record_index = static_cast<int>(traj.records.size());
      traj.records.push_back({s.epoch, s.sdm_step_index(), s, a, 0.0});
      if (scenario_count > 0 && s.last_sdm_step() && s.epoch < cfg.horizon) {
        std::vector<std::vector<State>> per_action;
        for (const Action& candidate : feasible_actions(s)) {
          auto [post, ignored] = sdm_step(s, candidate, cfg);
          per_action.push_back(sample_arrival_scenarios(post, cfg, scenario_count, rng));
        }
        traj.scenarios.emplace(record_index, std::move(per_action));
      }
      auto [next, reward] = sdm_step(s, a, cfg);
      traj.records.back().reward = reward;
      traj.total_reward += reward;
      s = std::move(next);
    }
    if (s.epoch >= cfg.horizon) break;  // last epoch finished: episode over
    s = epoch_advance(s, cfg, rng);
  }
  traj.total_requests = s.requests_generated;
  return traj;
}

/// Uniform over the feasible actions at the cursor car.
class UniformPolicy {
 public:
  std::vector<std::pair<Action, double>> action_distribution(const State& s) const {
    const auto actions = feasible_actions(s);
    std::vector<std::pair<Action, double>> dist;
    dist.reserve(actions.size());
    for (const Action& a : actions)
      dist.emplace_back(a, 1.0 / static_cast<double>(actions.size()));
    return dist;
  }
};

/// Always matches when possible (earliest (o,d) template in sorted order).
class GreedyMatchPolicy {
 public:
  std::vector<std::pair<Action, double>> action_distribution(const State& s) const {
    const auto actions = feasible_actions(s);
    if (actions.size() > 1) return {{actions.front(), 1.0}};
    return {{Action::hold(), 1.0}};
  }
};

}  // namespace amplab::ridehail
