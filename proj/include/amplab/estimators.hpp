#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "amplab/common.hpp"
#include "amplab/csv.hpp"
#include "amplab/mqn.hpp"
#include "amplab/oracle.hpp"
#include "amplab/ridehail.hpp"
#include "amplab/rng.hpp"

namespace amplab::estimators {

enum class Kind { plain_mc, amp_exact, amp_sampled };

/// Selects the value-target machinery: plain Monte-Carlo returns, the
/// martingale-corrected estimator with exact one-step expectations, or its
/// sampling-based variant averaging the approximate value over L drawn next
/// states per action.
struct EstimatorMode {
  Kind kind = Kind::plain_mc;
  int sample_count = 0;  // L, only for amp_sampled

  void validate() const {
    if (kind == Kind::amp_sampled)
      require(sample_count >= 1, "amp_sampled needs a sample count L >= 1");
  }

  std::string label() const {
    switch (kind) {
      case Kind::plain_mc: return "plain_mc";
      case Kind::amp_exact: return "amp_exact";
      case Kind::amp_sampled: return detail::cat("amp_sampled(L=", sample_count, ")");
    }
    return "?";
  }

  std::string csv_name() const {
    switch (kind) {
      case Kind::plain_mc: return "plain_mc";
      case Kind::amp_exact: return "amp_exact";
      case Kind::amp_sampled: return "amp_sampled";
    }
    return "?";
  }

  static EstimatorMode plain() { return {Kind::plain_mc, 0}; }
  static EstimatorMode exact() { return {Kind::amp_exact, 0}; }
  static EstimatorMode sampled(int L) { return {Kind::amp_sampled, L}; }
};

/// An evaluable stand-in for the value function (the control-variate anchor):
/// any deterministic, total map from states to reals.
template <typename State>
struct ValueApproximation {
  std::function<double(const State&)> evaluate;
  std::string descriptor;

  static ValueApproximation zero() {
    return {[](const State&) { return 0.0; }, "zero"};
  }
};

// ---------------------------------------------------------------------------
// Core backward passes. All suffix sums are accumulated back-to-front so the
// summation order is fixed and identical across estimator modes.
// ---------------------------------------------------------------------------

/// Episodic pass: target[j] = zeta[j] + sum_{m >= j} (rewards + expected_zeta
/// - zeta)[m]. With zeta and expected_zeta identically zero this reduces to
/// plain Monte-Carlo reward-to-go.
inline std::vector<double> suffix_targets(std::span<const double> rewards,
                                          std::span<const double> zeta,
                                          std::span<const double> expected_zeta) {
  const std::size_t n = rewards.size();
  require(zeta.size() == n && expected_zeta.size() == n,
          "suffix_targets length mismatch: rewards ", n, ", zeta ", zeta.size(),
          ", expected_zeta ", expected_zeta.size());
  std::vector<double> targets(n);
  double acc = 0.0;
  for (std::size_t j = n; j-- > 0;) {
    acc += rewards[j] + expected_zeta[j] - zeta[j];
    targets[j] = zeta[j] + acc;
  }
  return targets;
}

/// Regenerative pass over an average-cost trajectory with N = terms.size()
/// steps and N+1 state positions: target[k] = zeta[k] + sum_{t=k}^{sigma_k -
/// 1} terms[t], where sigma_k is the first regeneration index after k, or N
/// when the episode truncates the cycle. target[N] = zeta[N].
inline std::vector<double> regenerative_targets(std::span<const double> terms,
                                                std::span<const int> regen_indices,
                                                std::span<const double> zeta) {
  const std::size_t n = terms.size();
  require(zeta.size() == n + 1, "regenerative_targets needs one zeta value per state position");
  std::vector<char> is_regen(n + 1, 0);
  for (const int r : regen_indices) {
    require(r >= 0 && r <= static_cast<int>(n), "regeneration index out of range: ", r);
    is_regen[static_cast<std::size_t>(r)] = 1;
  }
  std::vector<double> targets(n + 1);
  targets[n] = zeta[n];
  double acc = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    if (is_regen[k + 1] || k + 1 == n) acc = 0.0;
    acc += terms[k];
    targets[k] = zeta[k] + acc;
  }
  return targets;
}

/// Per-position control-variate increments E[zeta(next)] - zeta(here); their
/// suffix sums plus zeta at the anchor position realize the martingale
/// process.
inline std::vector<double> martingale_corrections(std::span<const double> zeta,
                                                  std::span<const double> expected_zeta) {
  require(zeta.size() == expected_zeta.size(), "martingale_corrections length mismatch: ",
          zeta.size(), " vs ", expected_zeta.size());
  std::vector<double> out(zeta.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = expected_zeta[j] - zeta[j];
  return out;
}

// ---------------------------------------------------------------------------
// Ride-hailing targets.
// ---------------------------------------------------------------------------

/// Plain Monte-Carlo reward-to-go per visited decision step.
inline std::vector<double> plain_mc_targets(const ridehail::Trajectory& traj) {
  std::vector<double> rewards;
  rewards.reserve(traj.records.size());
  for (const auto& rec : traj.records) rewards.push_back(rec.reward);
  const std::vector<double> zeros(rewards.size(), 0.0);
  return suffix_targets(rewards, zeros, zeros);
}

/// One-step expected value of zeta from a visited decision state. Three
/// cases: mid-epoch steps transition deterministically per action (exact
/// policy-weighted sum); the final step of the final epoch has no successor
/// (0); the final step of an earlier epoch transitions through random
/// arrivals, handled by averaging zeta over L sampled scenarios per action
/// (exact enumeration is unavailable there). Scenario states that ran past
/// the horizon contribute 0. `stored` supplies pre-drawn per-action scenario
/// lists (simulation-time sampling); otherwise scenarios are drawn from rng.
template <typename Policy>
double expected_zeta_ridehail(const ridehail::State& s,
                              const ValueApproximation<ridehail::State>& zeta,
                              const Policy& policy, const ridehail::Config& cfg,
                              const EstimatorMode& mode, RngStream& rng,
                              const std::vector<std::vector<ridehail::State>>* stored = nullptr) {
  require(s.at_decision(), "expected_zeta_ridehail needs a decision state");
  mode.validate();
  const bool last_step = s.last_sdm_step();
  if (last_step && s.epoch >= cfg.horizon) return 0.0;  // episode boundary

  const auto dist = policy.action_distribution(s);
  if (!last_step) {
    double total = 0.0;
    for (const auto& [a, pa] : dist) {
      if (pa == 0.0) continue;
      total += pa * zeta.evaluate(ridehail::sdm_step(s, a, cfg).first);
    }
    return total;
  }

  if (mode.kind == Kind::amp_exact)
    fail_contract("intractable expectation: exact next-state enumeration over passenger "
                  "arrivals is unavailable at epoch ", s.epoch,
                  "; use the sampling-based mode");
  require(mode.kind == Kind::amp_sampled, "expected_zeta_ridehail needs an AMP mode");

  const auto feasible = ridehail::feasible_actions(s);
  double total = 0.0;
  for (const auto& [a, pa] : dist) {
    if (pa == 0.0) continue;
    const std::vector<ridehail::State>* scenarios = nullptr;
    std::vector<ridehail::State> drawn;
    if (stored != nullptr) {
      std::size_t rank = feasible.size();
      for (std::size_t k = 0; k < feasible.size(); ++k)
        if (feasible[k] == a) {
          rank = k;
          break;
        }
      require(rank < stored->size(), "stored scenarios missing for an action");
      scenarios = &(*stored)[rank];
    } else {
      const auto post = ridehail::sdm_step(s, a, cfg).first;
      drawn = ridehail::sample_arrival_scenarios(post, cfg, mode.sample_count, rng);
      scenarios = &drawn;
    }
    double mean = 0.0;
    for (const auto& sc : *scenarios) mean += sc.terminal ? 0.0 : zeta.evaluate(sc);
    total += pa * (mean / static_cast<double>(scenarios->size()));
  }
  return total;
}

/// Martingale-corrected value targets for one episode (one backward pass; one
/// expected-zeta evaluation per step). plain_mc mode ignores zeta and yields
/// exactly the plain reward-to-go.
template <typename Policy>
std::vector<double> amp_targets(const ridehail::Trajectory& traj,
                                const ValueApproximation<ridehail::State>& zeta,
                                const Policy& policy, const ridehail::Config& cfg,
                                const EstimatorMode& mode, RngStream& rng) {
  mode.validate();
  if (mode.kind == Kind::plain_mc) return plain_mc_targets(traj);
  const std::size_t n = traj.records.size();
  std::vector<double> rewards(n), zeta_here(n), expected(n);
  for (std::size_t j = 0; j < n; ++j) {
    const auto& rec = traj.records[j];
    rewards[j] = rec.reward;
    zeta_here[j] = zeta.evaluate(rec.state);
    const auto it = traj.scenarios.find(static_cast<int>(j));
    expected[j] = expected_zeta_ridehail(
        rec.state, zeta, policy, cfg, mode, rng,
        it == traj.scenarios.end() ? nullptr : &it->second);
  }
  return suffix_targets(rewards, zeta_here, expected);
}

// ---------------------------------------------------------------------------
// Queueing-network targets (average-cost, regenerative).
// ---------------------------------------------------------------------------

/// Empirical mean holding cost over all steps of all trajectories.
inline double estimate_average_cost(std::span<const mqn::Trajectory> trajs) {
  double total = 0.0;
  std::size_t steps = 0;
  for (const auto& traj : trajs) {
    for (const double c : traj.costs) total += c;
    steps += traj.costs.size();
  }
  require(steps >= 1, "estimate_average_cost needs at least one step");
  return total / static_cast<double>(steps);
}

/// One-step expected zeta under the policy: exact enumeration of the merged
/// activity outcomes, or the per-action sample mean over L drawn next states
/// (fresh draws per action). With `sampling_variance_out`, also returns an
/// estimate of the sampling variance of the returned value (0 in exact mode).
template <typename Policy>
double expected_zeta_mqn(const mqn::State& x, const ValueApproximation<mqn::State>& zeta,
                         const Policy& policy, const mqn::Config& cfg,
                         const EstimatorMode& mode, RngStream& rng,
                         const std::vector<std::vector<mqn::State>>* stored = nullptr,
                         double* sampling_variance_out = nullptr) {
  mode.validate();
  require(mode.kind != Kind::plain_mc, "expected_zeta_mqn needs an AMP mode");
  if (sampling_variance_out != nullptr) *sampling_variance_out = 0.0;
  const auto dist = policy.action_distribution(x);

  if (mode.kind == Kind::amp_exact) {
    double total = 0.0;
    for (const auto& [a, pa] : dist) {
      if (pa == 0.0) continue;
      double inner = 0.0;
      for (const auto& o : mqn::transition_distribution(x, a, cfg))
        inner += o.prob * zeta.evaluate(o.next);
      total += pa * inner;
    }
    return total;
  }

  const auto feasible = mqn::feasible_actions(x, cfg);
  const int L = mode.sample_count;
  double total = 0.0;
  for (const auto& [a, pa] : dist) {
    if (pa == 0.0) continue;
    const std::vector<mqn::State>* samples = nullptr;
    std::vector<mqn::State> drawn;
    if (stored != nullptr) {
      std::size_t rank = feasible.size();
      for (std::size_t k = 0; k < feasible.size(); ++k)
        if (feasible[k] == a) {
          rank = k;
          break;
        }
      require(rank < stored->size(), "stored scenario samples missing for an action");
      samples = &(*stored)[rank];
    } else {
      drawn.reserve(static_cast<std::size_t>(L));
      for (int l = 0; l < L; ++l) drawn.push_back(mqn::sample_transition(x, a, cfg, rng));
      samples = &drawn;
    }
    double mean = 0.0;
    for (const auto& y : *samples) mean += zeta.evaluate(y);
    mean /= static_cast<double>(samples->size());
    total += pa * mean;
    if (sampling_variance_out != nullptr && samples->size() >= 2) {
      double ss = 0.0;
      for (const auto& y : *samples) {
        const double d = zeta.evaluate(y) - mean;
        ss += d * d;
      }
      const double sample_var = ss / static_cast<double>(samples->size() - 1);
      *sampling_variance_out += pa * pa * sample_var / static_cast<double>(samples->size());
    }
  }
  return total;
}

/// Centered regenerative sums: the plain estimate of the relative value at
/// every visited state (cost-to-regeneration minus the average cost).
inline std::vector<double> mqn_regenerative_targets(const mqn::Trajectory& traj,
                                                    double average_cost) {
  const std::size_t n = traj.costs.size();
  std::vector<double> terms(n);
  for (std::size_t t = 0; t < n; ++t) terms[t] = traj.costs[t] - average_cost;
  const std::vector<double> zeros(n + 1, 0.0);
  return regenerative_targets(terms, traj.regen_indices, zeros);
}

/// Martingale-corrected relative-value targets over regeneration cycles, with
/// the expected-zeta term evaluated exactly (activity enumeration) or by the
/// per-action sample mean. plain_mc mode ignores zeta and yields exactly the
/// centered regenerative sums. With `sampling_variance_out`, returns per
/// target the accumulated sampling-variance estimate of its corrections.
template <typename Policy>
std::vector<double> mqn_amp_targets(const mqn::Trajectory& traj,
                                    const ValueApproximation<mqn::State>& zeta,
                                    const Policy& policy, const mqn::Config& cfg,
                                    double average_cost, const EstimatorMode& mode,
                                    RngStream& rng,
                                    std::vector<double>* sampling_variance_out = nullptr) {
  mode.validate();
  require(traj.states.size() == traj.costs.size() + 1,
          "malformed trajectory: ", traj.states.size(), " states for ", traj.costs.size(),
          " steps");
  for (const int r : traj.regen_indices)
    require(traj.states[static_cast<std::size_t>(r)].empty(),
            "malformed regeneration structure: index ", r, " is not the empty state");
  if (mode.kind == Kind::plain_mc) {
    if (sampling_variance_out != nullptr)
      sampling_variance_out->assign(traj.states.size(), 0.0);
    return mqn_regenerative_targets(traj, average_cost);
  }

  const std::size_t n = traj.costs.size();
  std::vector<double> terms(n), zeta_here(n + 1), step_var(n, 0.0);
  zeta_here[n] = zeta.evaluate(traj.states[n]);
  for (std::size_t t = 0; t < n; ++t) {
    const auto& x = traj.states[t];
    zeta_here[t] = zeta.evaluate(x);
    const auto* stored =
        traj.scenarios.empty() ? nullptr : &traj.scenarios[t];
    double svar = 0.0;
    const double ez = expected_zeta_mqn(x, zeta, policy, cfg, mode, rng, stored,
                                        sampling_variance_out ? &svar : nullptr);
    terms[t] = traj.costs[t] - average_cost + ez - zeta_here[t];
    step_var[t] = svar;
  }
  if (sampling_variance_out != nullptr) {
    const std::vector<double> zeros(n + 1, 0.0);
    *sampling_variance_out = regenerative_targets(step_var, traj.regen_indices, zeros);
  }
  return regenerative_targets(terms, traj.regen_indices, zeta_here);
}

// ---------------------------------------------------------------------------
// Tiny-MDP episodic targets: the same machinery plugged into the enumerable
// substrate, with an injectable sample source so sampling-mode expectations
// can themselves be enumerated.
// ---------------------------------------------------------------------------

/// (position, action, L) -> sampled next states.
using TinySampleSource = std::function<std::vector<int>(int, int, int)>;

template <typename ZetaFn>
std::vector<double> tiny_amp_targets(const oracle::TinyMdp& mdp, const oracle::TinyPolicy& pi,
                                     const oracle::TinyTrajectory& traj, const ZetaFn& zeta,
                                     const EstimatorMode& mode, RngStream* rng = nullptr,
                                     const TinySampleSource* scripted = nullptr) {
  mode.validate();
  const std::size_t n = traj.rewards.size();
  if (mode.kind == Kind::plain_mc) {
    const std::vector<double> zeros(n, 0.0);
    return suffix_targets(traj.rewards, zeros, zeros);
  }
  std::vector<double> zeta_here(n), expected(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    const int s = traj.states[j];
    zeta_here[j] = zeta(s);
    if (j + 1 == n) continue;  // final position: no successor value
    double total = 0.0;
    for (int a = 0; a < mdp.actions_at(s); ++a) {
      const double pa = pi[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)];
      if (pa == 0.0) continue;
      if (mode.kind == Kind::amp_exact) {
        double inner = 0.0;
        for (const auto& [next, p] :
             mdp.transitions[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)])
          inner += p * zeta(next);
        total += pa * inner;
      } else {
        std::vector<int> samples;
        if (scripted != nullptr) {
          samples = (*scripted)(static_cast<int>(j), a, mode.sample_count);
        } else {
          require(rng != nullptr, "tiny_amp_targets sampling mode needs an rng");
          const auto& row =
              mdp.transitions[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)];
          std::vector<double> probs;
          probs.reserve(row.size());
          for (const auto& [next, p] : row) probs.push_back(p);
          for (int l = 0; l < mode.sample_count; ++l)
            samples.push_back(row[rng->categorical(probs)].first);
        }
        double mean = 0.0;
        for (const int y : samples) mean += zeta(y);
        total += pa * (mean / static_cast<double>(samples.size()));
      }
    }
    expected[j] = total;
  }
  return suffix_targets(traj.rewards, zeta_here, expected);
}

// ---------------------------------------------------------------------------
// Variance aggregation across episodes.
// ---------------------------------------------------------------------------

struct AnchorVariance {
  mqn::State anchor;
  double mean = 0.0;
  double variance = 0.0;
  long samples = 0;
  bool visited = false;
};

inline std::pair<double, double> mean_and_unbiased_variance(std::span<const double> xs) {
  const auto n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (const double x : xs) mean += x;
  mean /= n;
  double ss = 0.0;
  for (const double x : xs) ss += (x - mean) * (x - mean);
  return {mean, xs.size() >= 2 ? ss / (n - 1.0) : 0.0};
}

/// Simulates `episodes` fixed-policy episodes and pools the value targets at
/// every visit (positions 0..N-1) of each anchor state. Anchors never visited
/// are flagged rather than failing. Episode e uses the stream (seed, 0, e),
/// so results are worker-count independent.
template <typename Policy>
std::vector<AnchorVariance> estimator_variance(const mqn::Config& cfg, const Policy& policy,
                                               const ValueApproximation<mqn::State>& zeta,
                                               double average_cost, const EstimatorMode& mode,
                                               int episodes,
                                               std::span<const mqn::State> anchors,
                                               std::uint64_t seed, int workers = 1,
                                               std::vector<std::vector<double>>* samples_out = nullptr) {
  require(episodes >= 2, "estimator_variance needs at least 2 episodes");
  mode.validate();
  const int scenario_count = mode.kind == Kind::amp_sampled ? mode.sample_count : 0;

  std::vector<std::vector<std::vector<double>>> per_episode(
      static_cast<std::size_t>(episodes),
      std::vector<std::vector<double>>(anchors.size()));
  parallel_for(episodes, workers, [&](int e) {
    RngStream rng = RngStream::derive(seed, 0, static_cast<std::uint64_t>(e));
    const auto traj = mqn::simulate_episode(policy, cfg, rng, scenario_count);
    const auto targets = mqn_amp_targets(traj, zeta, policy, cfg, average_cost, mode, rng);
    for (std::size_t k = 0; k + 1 < traj.states.size(); ++k)
      for (std::size_t a = 0; a < anchors.size(); ++a)
        if (traj.states[k] == anchors[a])
          per_episode[static_cast<std::size_t>(e)][a].push_back(targets[k]);
  });

  std::vector<AnchorVariance> out(anchors.size());
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    std::vector<double> pooled;
    for (const auto& ep : per_episode)
      pooled.insert(pooled.end(), ep[a].begin(), ep[a].end());
    out[a].anchor = anchors[a];
    out[a].samples = static_cast<long>(pooled.size());
    out[a].visited = !pooled.empty();
    if (out[a].visited) {
      const auto [mean, var] = mean_and_unbiased_variance(pooled);
      out[a].mean = mean;
      out[a].variance = var;
    }
    if (samples_out != nullptr) (*samples_out).push_back(std::move(pooled));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Target export.
// ---------------------------------------------------------------------------

struct TargetRecord {
  int episode = 0;
  int epoch = 0;       // t for ride-hailing rows, 0 for queueing rows
  int step_or_cycle = 0;  // i for ride-hailing rows, k for queueing rows
  double value = 0.0;
};

struct TargetSet {
  std::vector<TargetRecord> records;
  std::string mode_label;
};

inline void append_ride_targets(TargetSet& set, int episode, const ridehail::Trajectory& traj,
                                std::span<const double> targets) {
  require(targets.size() == traj.records.size(), "target/record count mismatch");
  for (std::size_t j = 0; j < targets.size(); ++j)
    set.records.push_back({episode, traj.records[j].epoch, traj.records[j].sdm_step,
                           targets[j]});
}

inline void append_mqn_targets(TargetSet& set, int episode, std::span<const double> targets) {
  for (std::size_t k = 0; k < targets.size(); ++k)
    set.records.push_back({episode, 0, static_cast<int>(k), targets[k]});
}

inline void write_targets_csv(const std::filesystem::path& path, const TargetSet& set) {
  CsvWriter csv(path, {"episode", "t", "i", "target", "mode"});
  for (const auto& rec : set.records)
    csv.write_row({std::to_string(rec.episode), std::to_string(rec.epoch),
                   std::to_string(rec.step_or_cycle), g17(rec.value), set.mode_label});
}

}  // namespace amplab::estimators
