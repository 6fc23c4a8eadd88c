#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "amplab/common.hpp"
#include "amplab/rng.hpp"

namespace amplab::mqn {

/// Server A's choice; server B is work-conserving (serves class 3 whenever
/// queue 3 is nonempty) and is not part of the action.
enum class Action : int { serve_class1 = 0, serve_class2 = 1, idle = 2 };

inline constexpr std::array<Action, 3> kAllActions{Action::serve_class1, Action::serve_class2,
                                                   Action::idle};

inline const char* action_name(Action a) {
  switch (a) {
    case Action::serve_class1: return "serve_class1";
    case Action::serve_class2: return "serve_class2";
    case Action::idle: return "idle";
  }
  return "?";
}

/// Two-station, three-class Criss-Cross network. Classes 1 and 2 arrive
/// exogenously at server A; a class-1 completion becomes a class-3 job at
/// server B; class-2 and class-3 completions leave the network. The
/// continuous-time chain is uniformized at rate B = lambda1 + lambda2 + mu1 +
/// mu2 + mu3, with inactive activities contributing self-loops.
struct Config {
  double lambda1 = 0.3;
  double lambda2 = 0.3;
  double mu1 = 2.0;
  double mu2 = 2.0;
  double mu3 = 1.5;
  std::string regime_label = "IL";
  int episode_length = 200;  // steps per simulated episode
  int queue_cap = -1;        // >=0 simulates the truncated chain (full queues reflect)
  bool allow_idle = true;    // may server A idle while work is waiting

  double total_rate() const { return lambda1 + lambda2 + mu1 + mu2 + mu3; }

  void validate() const {
    require(lambda1 > 0 && lambda2 > 0 && mu1 > 0 && mu2 > 0 && mu3 > 0,
            "mqn rates must all be positive");
    require(lambda1 / mu1 + lambda2 / mu2 < 1.0, "mqn station A is not subcritical: rho_A = ",
            lambda1 / mu1 + lambda2 / mu2);
    require(lambda1 / mu3 < 1.0, "mqn station B is not subcritical: rho_B = ", lambda1 / mu3);
    require(episode_length >= 0, "mqn episode_length must be nonnegative");
  }

  /// Traffic-regime presets: imbalanced/balanced x low/medium load. The two
  /// balanced regimes equalize the station loads by slowing server B.
  static Config regime(const std::string& label) {
    Config cfg;
    cfg.regime_label = label;
    if (label == "IL") {
      cfg.lambda1 = cfg.lambda2 = 0.3;
      cfg.mu1 = cfg.mu2 = 2.0;
      cfg.mu3 = 1.5;
    } else if (label == "IM") {
      cfg.lambda1 = cfg.lambda2 = 0.6;
      cfg.mu1 = cfg.mu2 = 2.0;
      cfg.mu3 = 1.5;
    } else if (label == "BL") {
      cfg.lambda1 = cfg.lambda2 = 0.3;
      cfg.mu1 = cfg.mu2 = 2.0;
      cfg.mu3 = 1.0;
    } else if (label == "BM") {
      cfg.lambda1 = cfg.lambda2 = 0.6;
      cfg.mu1 = cfg.mu2 = 2.0;
      cfg.mu3 = 1.0;
    } else {
      fail_contract("unknown mqn regime label: ", label, " (expected IL, IM, BL or BM)");
    }
    return cfg;
  }
};

struct State {
  int q1 = 0;
  int q2 = 0;
  int q3 = 0;
  auto operator<=>(const State&) const = default;
  bool empty() const { return q1 == 0 && q2 == 0 && q3 == 0; }
};

/// Holding cost g(x): one per waiting job.
inline double holding_cost(const State& s) { return static_cast<double>(s.q1 + s.q2 + s.q3); }

inline bool action_valid(const State& s, Action a) {
  if (a == Action::serve_class1) return s.q1 > 0;
  if (a == Action::serve_class2) return s.q2 > 0;
  return true;
}

/// Actions the policy may choose from. idle is always offered when nothing is
/// serveable; whether it is offered while work waits is a config switch.
inline std::vector<Action> feasible_actions(const State& s, const Config& cfg) {
  std::vector<Action> out;
  if (s.q1 > 0) out.push_back(Action::serve_class1);
  if (s.q2 > 0) out.push_back(Action::serve_class2);
  if (cfg.allow_idle || out.empty()) out.push_back(Action::idle);
  return out;
}

struct Outcome {
  State next;
  double prob;
};

/// One-step uniformized distribution over the five activities: class-1
/// arrival, class-2 arrival, the completion at server A of whichever class is
/// being served, and the class-3 completion at server B. Inactive activities
/// (and, with queue_cap set, moves that would overflow a queue) self-loop;
/// duplicate next states are merged and the self-loop probability is closed
/// to make the outcome probabilities sum to exactly 1.
inline std::vector<Outcome> transition_distribution(const State& s, Action a, const Config& cfg) {
  if (!action_valid(s, a))
    fail_contract("invalid mqn action ", action_name(a), " in state (", s.q1, ",", s.q2, ",",
                  s.q3, "): served class is empty");
  const double total = cfg.total_rate();
  const int cap = cfg.queue_cap;
  const auto fits = [cap](const State& n) {
    return cap < 0 || (n.q1 <= cap && n.q2 <= cap && n.q3 <= cap);
  };

  std::vector<Outcome> moves;
  moves.reserve(4);
  const auto add_move = [&](State next, double rate) {
    if (next == s || !fits(next)) return;  // folded into the self-loop
    for (auto& o : moves) {
      if (o.next == next) {
        o.prob += rate / total;
        return;
      }
    }
    moves.push_back({next, rate / total});
  };

  add_move({s.q1 + 1, s.q2, s.q3}, cfg.lambda1);
  add_move({s.q1, s.q2 + 1, s.q3}, cfg.lambda2);
  if (a == Action::serve_class1) add_move({s.q1 - 1, s.q2, s.q3 + 1}, cfg.mu1);
  if (a == Action::serve_class2) add_move({s.q1, s.q2 - 1, s.q3}, cfg.mu2);
  if (s.q3 > 0) add_move({s.q1, s.q2, s.q3 - 1}, cfg.mu3);

  double moving = 0.0;
  for (const auto& o : moves) moving += o.prob;
  // The unserved class at server A always idles, so a self-loop share exists.
  moves.push_back({s, 1.0 - moving});
  return moves;
}

inline State sample_transition(const State& s, Action a, const Config& cfg, RngStream& rng) {
  const auto dist = transition_distribution(s, a, cfg);
  std::vector<double> probs;
  probs.reserve(dist.size());
  for (const auto& o : dist) probs.push_back(o.prob);
  return dist[rng.categorical(probs)].next;
}

/// Samples the next state and returns the pre-transition holding cost.
inline std::pair<State, double> step(const State& s, Action a, const Config& cfg,
                                     RngStream& rng) {
  return {sample_transition(s, a, cfg, rng), holding_cost(s)};
}

struct Trajectory {
  std::vector<State> states;    // length N+1
  std::vector<Action> actions;  // length N
  std::vector<double> costs;    // length N, cost[t] = g(states[t])
  std::vector<int> regen_indices;  // positions where the state is (0,0,0)

  // Next-state samples drawn during simulation for the sampling-based
  // estimator: scenarios[t][ai][l] is the l-th sample for the ai-th feasible
  // action at step t (feasible_actions order). Empty unless requested.
  std::vector<std::vector<std::vector<State>>> scenarios;

  int length() const { return static_cast<int>(actions.size()); }
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

/// Simulates one episode of `cfg.episode_length` steps from the empty state.
/// With scenario_count > 0, additionally draws that many next-state samples
/// per feasible action at every step (consumed by the sampling-based
/// estimator), so the sampling cost is paid during simulation.
template <typename Policy>
Trajectory simulate_episode(const Policy& policy, const Config& cfg, RngStream& rng,
                            int scenario_count = 0) {
  cfg.validate();
  Trajectory traj;
  const int n = cfg.episode_length;
  traj.states.reserve(static_cast<std::size_t>(n) + 1);
  traj.actions.reserve(static_cast<std::size_t>(n));
  traj.costs.reserve(static_cast<std::size_t>(n));
  if (scenario_count > 0) traj.scenarios.resize(static_cast<std::size_t>(n));

  State x;  // (0,0,0)
  traj.states.push_back(x);
  traj.regen_indices.push_back(0);
  for (int t = 0; t < n; ++t) {
    const Action a = sample_action(policy, x, rng);
    if (!action_valid(x, a))
      fail_contract("policy emitted invalid action ", action_name(a), " at step ", t,
                    " in state (", x.q1, ",", x.q2, ",", x.q3, ")");
    if (scenario_count > 0) {
      auto& per_action = traj.scenarios[static_cast<std::size_t>(t)];
      for (Action candidate : feasible_actions(x, cfg)) {
        std::vector<State> draws;
        draws.reserve(static_cast<std::size_t>(scenario_count));
        for (int l = 0; l < scenario_count; ++l)
          draws.push_back(sample_transition(x, candidate, cfg, rng));
        per_action.push_back(std::move(draws));
      }
    }
    traj.costs.push_back(holding_cost(x));
    traj.actions.push_back(a);
    x = sample_transition(x, a, cfg, rng);
    traj.states.push_back(x);
    if (x.empty()) traj.regen_indices.push_back(t + 1);
  }
  return traj;
}

/// Serve-in-priority-order policy; deterministic. The default order (1, 2)
/// serves class 1 whenever possible, then class 2, and never idles while work
/// waits.
class StaticPriorityPolicy {
 public:
  explicit StaticPriorityPolicy(bool class1_first = true) : class1_first_(class1_first) {}

  std::vector<std::pair<Action, double>> action_distribution(const State& s) const {
    if (class1_first_) {
      if (s.q1 > 0) return {{Action::serve_class1, 1.0}};
      if (s.q2 > 0) return {{Action::serve_class2, 1.0}};
    } else {
      if (s.q2 > 0) return {{Action::serve_class2, 1.0}};
      if (s.q1 > 0) return {{Action::serve_class1, 1.0}};
    }
    return {{Action::idle, 1.0}};
  }

 private:
  bool class1_first_;
};

/// Uniform over the feasible actions of the config's masking rule.
class UniformPolicy {
 public:
  explicit UniformPolicy(Config cfg) : cfg_(std::move(cfg)) {}

  std::vector<std::pair<Action, double>> action_distribution(const State& s) const {
    const auto actions = feasible_actions(s, cfg_);
    std::vector<std::pair<Action, double>> dist;
    dist.reserve(actions.size());
    for (Action a : actions) dist.emplace_back(a, 1.0 / static_cast<double>(actions.size()));
    return dist;
  }

 private:
  Config cfg_;
};

}  // namespace amplab::mqn
