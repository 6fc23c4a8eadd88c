#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <deque>
#include <filesystem>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include "amplab/common.hpp"
#include "amplab/csv.hpp"
#include "amplab/mqn.hpp"

namespace amplab::oracle {

// ---------------------------------------------------------------------------
// Tiny explicit MDPs: the substrate for enumeration and backward-induction
// ground truth.
// ---------------------------------------------------------------------------

struct TinyMdp {
  int num_states = 0;
  int horizon = 0;
  // transitions[s][a] -> list of (next state, probability); rewards[s][a].
  std::vector<std::vector<std::vector<std::pair<int, double>>>> transitions;
  std::vector<std::vector<double>> rewards;

  int actions_at(int s) const { return static_cast<int>(transitions[static_cast<std::size_t>(s)].size()); }

  void validate() const {
    require(num_states >= 1 && horizon >= 1, "tiny mdp needs states and a finite horizon");
    require(static_cast<int>(transitions.size()) == num_states &&
                static_cast<int>(rewards.size()) == num_states,
            "tiny mdp tables must cover every state");
    for (int s = 0; s < num_states; ++s) {
      require(actions_at(s) >= 1, "tiny mdp state ", s, " has no actions");
      require(rewards[static_cast<std::size_t>(s)].size() ==
                  transitions[static_cast<std::size_t>(s)].size(),
              "tiny mdp reward table mismatch at state ", s);
      for (int a = 0; a < actions_at(s); ++a) {
        double total = 0.0;
        for (const auto& [next, p] : transitions[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)]) {
          require(next >= 0 && next < num_states, "tiny mdp transition target out of range");
          require(p >= 0.0, "tiny mdp transition probability must be >= 0");
          total += p;
        }
        require(std::abs(total - 1.0) < 1e-12, "tiny mdp transition row (", s, ",", a,
                ") sums to ", total);
      }
    }
  }
};

/// Stochastic policy table pi[s][a].
using TinyPolicy = std::vector<std::vector<double>>;

inline TinyPolicy uniform_tiny_policy(const TinyMdp& mdp) {
  TinyPolicy pi(static_cast<std::size_t>(mdp.num_states));
  for (int s = 0; s < mdp.num_states; ++s)
    pi[static_cast<std::size_t>(s)].assign(static_cast<std::size_t>(mdp.actions_at(s)),
                                           1.0 / mdp.actions_at(s));
  return pi;
}

/// Backward-induction policy evaluation: returns V[j][s] for positions
/// j = 0..horizon, with V[horizon] identically zero.
inline std::vector<std::vector<double>> exact_policy_value_episodic(const TinyMdp& mdp,
                                                                    const TinyPolicy& pi) {
  mdp.validate();
  std::vector<std::vector<double>> value(
      static_cast<std::size_t>(mdp.horizon) + 1,
      std::vector<double>(static_cast<std::size_t>(mdp.num_states), 0.0));
  for (int j = mdp.horizon - 1; j >= 0; --j) {
    for (int s = 0; s < mdp.num_states; ++s) {
      double v = 0.0;
      for (int a = 0; a < mdp.actions_at(s); ++a) {
        const double pa = pi[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)];
        if (pa == 0.0) continue;
        double q = mdp.rewards[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)];
        for (const auto& [next, p] :
             mdp.transitions[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)])
          q += p * value[static_cast<std::size_t>(j) + 1][static_cast<std::size_t>(next)];
        v += pa * q;
      }
      value[static_cast<std::size_t>(j)][static_cast<std::size_t>(s)] = v;
    }
  }
  return value;
}

struct TinyTrajectory {
  std::vector<int> states;   // horizon+1
  std::vector<int> actions;  // horizon
  std::vector<double> rewards;
};

/// Exhaustive enumeration of every trajectory from `start` with its
/// probability under pi. Errors out once the count would exceed max_count.
inline std::vector<std::pair<TinyTrajectory, double>> enumerate_trajectory_distribution(
    const TinyMdp& mdp, const TinyPolicy& pi, int start, std::size_t max_count = 100000) {
  mdp.validate();
  std::vector<std::pair<TinyTrajectory, double>> out;
  TinyTrajectory current;
  current.states.push_back(start);

  const std::function<void(double)> recurse = [&](double prob) {
    const int depth = static_cast<int>(current.actions.size());
    if (depth == mdp.horizon) {
      if (out.size() >= max_count)
        fail_contract("trajectory enumeration exceeds ", max_count,
                      " paths; use a smaller instance");
      out.emplace_back(current, prob);
      return;
    }
    const int s = current.states.back();
    for (int a = 0; a < mdp.actions_at(s); ++a) {
      const double pa = pi[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)];
      if (pa == 0.0) continue;
      for (const auto& [next, p] :
           mdp.transitions[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)]) {
        if (p == 0.0) continue;
        current.actions.push_back(a);
        current.rewards.push_back(
            mdp.rewards[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)]);
        current.states.push_back(next);
        recurse(prob * pa * p);
        current.states.pop_back();
        current.rewards.pop_back();
        current.actions.pop_back();
      }
    }
  };
  recurse(1.0);
  return out;
}

// ---------------------------------------------------------------------------
// Truncated Criss-Cross chain: exact average-cost ground truth.
// ---------------------------------------------------------------------------

/// The Criss-Cross network restricted to queue lengths 0..cap per class, with
/// overflowing moves reflected into self-loops (the dynamics of
/// mqn::transition_distribution with queue_cap = cap).
struct TruncatedMqn {
  mqn::Config cfg;  // carries queue_cap = cap
  int cap = 0;

  static TruncatedMqn build(mqn::Config base, int cap) {
    require(cap >= 0, "truncation cap must be >= 0");
    base.queue_cap = cap;
    base.validate();
    return {std::move(base), cap};
  }

  int size() const { return (cap + 1) * (cap + 1) * (cap + 1); }

  int index(const mqn::State& s) const {
    require(s.q1 >= 0 && s.q1 <= cap && s.q2 >= 0 && s.q2 <= cap && s.q3 >= 0 && s.q3 <= cap,
            "state (", s.q1, ",", s.q2, ",", s.q3, ") outside truncation cap ", cap);
    return (s.q1 * (cap + 1) + s.q2) * (cap + 1) + s.q3;
  }

  mqn::State state(int index) const {
    const int side = cap + 1;
    return {index / (side * side), (index / side) % side, index % side};
  }
};

namespace detail {

/// Policy-induced transition rows P(y|x) = sum_a eta(a|x) P(y|x,a).
template <typename Policy>
std::vector<std::vector<std::pair<int, double>>> induced_rows(const TruncatedMqn& net,
                                                              const Policy& policy) {
  const int n = net.size();
  std::vector<std::vector<std::pair<int, double>>> rows(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const mqn::State x = net.state(i);
    std::vector<double> dense;
    for (const auto& [a, pa] : policy.action_distribution(x)) {
      if (pa == 0.0) continue;
      for (const auto& o : mqn::transition_distribution(x, a, net.cfg)) {
        const int j = net.index(o.next);
        if (dense.empty()) dense.assign(static_cast<std::size_t>(n), 0.0);
        dense[static_cast<std::size_t>(j)] += pa * o.prob;
      }
    }
    if (dense.empty()) continue;
    for (int j = 0; j < n; ++j)
      if (dense[static_cast<std::size_t>(j)] != 0.0)
        rows[static_cast<std::size_t>(i)].emplace_back(j, dense[static_cast<std::size_t>(j)]);
  }
  return rows;
}

inline std::vector<int> unreachable_states(
    const std::vector<std::vector<std::pair<int, double>>>& rows, bool reverse) {
  const int n = static_cast<int>(rows.size());
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    for (const auto& [j, p] : rows[static_cast<std::size_t>(i)])
      if (p > 0.0) adj[static_cast<std::size_t>(reverse ? j : i)].push_back(reverse ? i : j);
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  std::deque<int> frontier{0};
  seen[0] = 1;
  while (!frontier.empty()) {
    const int i = frontier.front();
    frontier.pop_front();
    for (int j : adj[static_cast<std::size_t>(i)])
      if (!seen[static_cast<std::size_t>(j)]) {
        seen[static_cast<std::size_t>(j)] = 1;
        frontier.push_back(j);
      }
  }
  std::vector<int> missing;
  for (int i = 0; i < n; ++i)
    if (!seen[static_cast<std::size_t>(i)]) missing.push_back(i);
  return missing;
}

inline void check_irreducible(const TruncatedMqn& net,
                              const std::vector<std::vector<std::pair<int, double>>>& rows) {
  for (const bool reverse : {false, true}) {
    const auto missing = unreachable_states(rows, reverse);
    if (missing.empty()) continue;
    std::string list;
    for (std::size_t k = 0; k < missing.size() && k < 8; ++k) {
      const auto s = net.state(missing[k]);
      list += amplab::detail::cat("(", s.q1, ",", s.q2, ",", s.q3, ") ");
    }
    fail_contract("induced chain is reducible: ", missing.size(), " states ",
                  reverse ? "cannot reach" : "are unreachable from", " the empty state: ", list,
                  missing.size() > 8 ? "..." : "");
  }
}

}  // namespace detail

struct PoissonSolution {
  std::vector<double> h;  // relative value, normalized to h(0,0,0) = 0
  double average_cost = 0.0;
};

/// Solves h(x) = g(x) - c + sum_y P(y|x) h(y) with h(0,0,0) = 0 on the
/// truncated chain induced by the policy. Requires irreducibility.
template <typename Policy>
PoissonSolution exact_poisson_solution(const TruncatedMqn& net, const Policy& policy) {
  const int n = net.size();
  const auto rows = detail::induced_rows(net, policy);
  detail::check_irreducible(net, rows);

  using Triplet = Eigen::Triplet<double>;
  std::vector<Triplet> triplets;
  triplets.reserve(static_cast<std::size_t>(n) * 8 + 2);
  Eigen::VectorXd b(n + 1);
  for (int i = 0; i < n; ++i) {
    double diag = 1.0;
    for (const auto& [j, p] : rows[static_cast<std::size_t>(i)]) {
      if (j == i)
        diag -= p;
      else
        triplets.emplace_back(i, j, -p);
    }
    triplets.emplace_back(i, i, diag);
    triplets.emplace_back(i, n, 1.0);  // + c
    b(i) = mqn::holding_cost(net.state(i));
  }
  triplets.emplace_back(n, 0, 1.0);  // h(0,0,0) = 0
  b(n) = 0.0;

  Eigen::SparseMatrix<double> A(n + 1, n + 1);
  A.setFromTriplets(triplets.begin(), triplets.end());
  Eigen::SparseLU<Eigen::SparseMatrix<double>> solver;
  solver.compute(A);
  require(solver.info() == Eigen::Success, "poisson system factorization failed");
  const Eigen::VectorXd z = solver.solve(b);
  require(solver.info() == Eigen::Success, "poisson system solve failed");

  PoissonSolution out;
  out.h.assign(z.data(), z.data() + n);
  out.average_cost = z(n);
  return out;
}

struct OptimalSolution {
  double average_cost = 0.0;
  std::vector<mqn::Action> policy;  // greedy action per state index
  std::vector<double> bias;         // relative values at convergence
  int iterations = 0;
};

/// Relative value iteration to span-seminorm tolerance over the feasible
/// action sets of the config's masking rule.
inline OptimalSolution optimal_average_cost(const TruncatedMqn& net, double span_tol = 1e-9,
                                            int max_iterations = 2000000) {
  const int n = net.size();
  // Precompute per-state action candidates and their transition rows.
  std::vector<std::vector<std::vector<std::pair<int, double>>>> action_rows(
      static_cast<std::size_t>(n));
  std::vector<std::vector<mqn::Action>> action_sets(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const mqn::State x = net.state(i);
    for (const mqn::Action a : mqn::feasible_actions(x, net.cfg)) {
      std::vector<std::pair<int, double>> row;
      for (const auto& o : mqn::transition_distribution(x, a, net.cfg))
        row.emplace_back(net.index(o.next), o.prob);
      action_rows[static_cast<std::size_t>(i)].push_back(std::move(row));
      action_sets[static_cast<std::size_t>(i)].push_back(a);
    }
  }

  std::vector<double> v(static_cast<std::size_t>(n), 0.0);
  std::vector<double> w(static_cast<std::size_t>(n), 0.0);
  double span = 0.0;
  for (int iter = 1; iter <= max_iterations; ++iter) {
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& row : action_rows[static_cast<std::size_t>(i)]) {
        double q = 0.0;
        for (const auto& [j, p] : row) q += p * v[static_cast<std::size_t>(j)];
        best = std::min(best, q);
      }
      w[static_cast<std::size_t>(i)] = mqn::holding_cost(net.state(i)) + best;
    }
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      const double d = w[static_cast<std::size_t>(i)] - v[static_cast<std::size_t>(i)];
      lo = std::min(lo, d);
      hi = std::max(hi, d);
    }
    span = hi - lo;
    if (span < span_tol) {
      OptimalSolution out;
      out.average_cost = 0.5 * (lo + hi);
      out.iterations = iter;
      const double ref = w[0];
      out.bias.resize(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) out.bias[static_cast<std::size_t>(i)] = w[static_cast<std::size_t>(i)] - ref;
      out.policy.resize(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_idx = 0;
        for (std::size_t k = 0; k < action_rows[static_cast<std::size_t>(i)].size(); ++k) {
          double q = 0.0;
          for (const auto& [j, p] : action_rows[static_cast<std::size_t>(i)][k])
            q += p * out.bias[static_cast<std::size_t>(j)];
          if (q < best) {
            best = q;
            best_idx = k;
          }
        }
        out.policy[static_cast<std::size_t>(i)] = action_sets[static_cast<std::size_t>(i)][best_idx];
      }
      return out;
    }
    const double ref = w[0];
    for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = w[static_cast<std::size_t>(i)] - ref;
  }
  fail_contract("relative value iteration did not reach span ", span_tol, " within ",
                max_iterations, " sweeps (span = ", span, ")");
}

/// Deterministic table policy over a truncated chain (e.g. the greedy policy
/// extracted by optimal_average_cost).
class TablePolicy {
 public:
  TablePolicy(const TruncatedMqn& net, std::vector<mqn::Action> actions)
      : net_(net), actions_(std::move(actions)) {}

  std::vector<std::pair<mqn::Action, double>> action_distribution(const mqn::State& s) const {
    return {{actions_[static_cast<std::size_t>(net_.index(s))], 1.0}};
  }

 private:
  TruncatedMqn net_;
  std::vector<mqn::Action> actions_;
};

inline void write_h_table_csv(const std::filesystem::path& path, const TruncatedMqn& net,
                              const std::vector<double>& h) {
  CsvWriter csv(path, {"q1", "q2", "q3", "h"});
  for (int i = 0; i < net.size(); ++i) {
    const auto s = net.state(i);
    csv.write_row({std::to_string(s.q1), std::to_string(s.q2), std::to_string(s.q3),
                   g17(h[static_cast<std::size_t>(i)])});
  }
}

inline void write_policy_csv(const std::filesystem::path& path, const TruncatedMqn& net,
                             const std::vector<mqn::Action>& policy) {
  CsvWriter csv(path, {"q1", "q2", "q3", "action"});
  for (int i = 0; i < net.size(); ++i) {
    const auto s = net.state(i);
    csv.write_row({std::to_string(s.q1), std::to_string(s.q2), std::to_string(s.q3),
                   mqn::action_name(policy[static_cast<std::size_t>(i)])});
  }
}

}  // namespace amplab::oracle
