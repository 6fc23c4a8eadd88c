#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "amplab/approximator.hpp"
#include "amplab/common.hpp"
#include "amplab/estimators.hpp"
#include "amplab/mlp.hpp"
#include "amplab/mqn.hpp"
#include "amplab/ridehail.hpp"
#include "amplab/rng.hpp"

namespace amplab::ppo {

struct PpoConfig {
  int iterations = 30;
  int episodes_per_iteration = 16;  // K
  double clip_epsilon = 0.2;
  int policy_epochs = 4;
  double policy_step_size = 3e-3;
  int policy_minibatch = 256;
  double entropy_coefficient = 0.0;
  std::vector<int> policy_hidden{64, 64};
  std::vector<int> value_hidden{64, 64};
  nn::FitConfig value_fit;  // 10 epochs, minibatch 256, Adam 3e-4
  estimators::EstimatorMode estimator;
  nn::Normalization normalization = nn::Normalization::input_only;
  std::uint64_t seed = 1;
  int workers = 1;

  void validate() const {
    require(iterations >= 0, "iterations must be nonnegative");
    require(episodes_per_iteration >= 1, "need at least one episode per iteration");
    require(clip_epsilon > 0.0 && clip_epsilon < 1.0, "clip_epsilon must lie in (0,1), got ",
            clip_epsilon);
    require(policy_epochs >= 1 && policy_minibatch >= 1, "bad policy update config");
    require(workers >= 1, "workers must be >= 1");
    estimator.validate();
  }
};

struct IterationRecord {
  int iteration = 0;
  double metric = 0.0;      // average cost (queueing) or matching rate (ride-hailing)
  double value_loss = 0.0;  // final-epoch training-space loss
  double sim_seconds = 0.0;
  double prep_seconds = 0.0;
  double train_seconds = 0.0;
  double total_seconds = 0.0;  // whole-iteration wall time
};

struct LearningCurveRun {
  std::vector<IterationRecord> records;
};

/// Raw advantage is target minus baseline; the batch is then standardized to
/// zero mean and unit variance (an all-equal batch maps to zeros).
inline std::vector<double> compute_advantages(std::span<const double> targets,
                                              std::span<const double> baselines) {
  require(targets.size() == baselines.size(), "advantage input mismatch");
  std::vector<double> adv(targets.size());
  for (std::size_t i = 0; i < adv.size(); ++i) {
    adv[i] = targets[i] - baselines[i];
    if (!std::isfinite(adv[i]))
      throw std::runtime_error(detail::cat("non-finite advantage at record ", i,
                                           ": target ", targets[i], ", baseline ",
                                           baselines[i]));
  }
  if (adv.empty()) return adv;
  double mean = 0.0;
  for (const double a : adv) mean += a;
  mean /= static_cast<double>(adv.size());
  double var = 0.0;
  for (const double a : adv) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / static_cast<double>(adv.size()));
  if (sd < 1e-12) {
    std::fill(adv.begin(), adv.end(), 0.0);
    return adv;
  }
  for (double& a : adv) a = (a - mean) / sd;
  return adv;
}

struct RolloutSample {
  std::vector<double> features;
  std::vector<std::uint8_t> mask;
  int action_index = 0;
  double old_log_prob = 0.0;
  double advantage = 0.0;
};

namespace detail_ppo {

inline double masked_log_prob(std::span<const double> logits,
                              std::span<const std::uint8_t> mask, int action,
                              std::vector<double>& probs_out) {
  probs_out = nn::PolicyHead::masked_probabilities(logits, mask);
  double max_logit = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (mask[i]) max_logit = std::max(max_logit, logits[i]);
  double lse = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (mask[i]) lse += std::exp(logits[i] - max_logit);
  return logits[static_cast<std::size_t>(action)] - max_logit - std::log(lse);
}

}  // namespace detail_ppo

/// One proximal update: several epochs of minibatch ascent on the clipped
/// surrogate mean(min(r A, clip(r, 1 +- eps) A)) plus the entropy bonus.
/// Samples whose clipped branch is active contribute no policy gradient.
inline void ppo_update(nn::PolicyHead& policy, nn::Adam& optimizer,
                       std::span<const RolloutSample> samples, const PpoConfig& cfg,
                       RngStream& rng) {
  if (samples.empty()) return;
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  nn::AdamConfig adam_cfg;
  adam_cfg.step_size = cfg.policy_step_size;
  nn::ForwardCache cache;
  std::vector<double> probs;

  for (int epoch = 0; epoch < cfg.policy_epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.uniform_int(0, static_cast<int>(i) - 1)]);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.policy_minibatch)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.policy_minibatch));
      nn::Gradients grads = nn::Gradients::zeros_like(policy.net());
      const double inv_batch = 1.0 / static_cast<double>(stop - start);
      for (std::size_t i = start; i < stop; ++i) {
        const auto& sample = samples[order[i]];
        const auto logits = nn::forward_cached(policy.net(), sample.features, cache);
        const double log_prob =
            detail_ppo::masked_log_prob(logits, sample.mask, sample.action_index, probs);
        const double ratio = std::exp(log_prob - sample.old_log_prob);
        if (!std::isfinite(ratio))
          throw std::runtime_error(detail::cat(
              "non-finite probability ratio in the policy update (log-prob ", log_prob,
              ", behavior log-prob ", sample.old_log_prob, ")"));
        const double adv = sample.advantage;
        const double clipped =
            std::clamp(ratio, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
        const bool unclipped_active = ratio * adv <= clipped * adv;
        // d(-surrogate)/dlogp; the clipped branch is constant in the parameters
        const double dloss_dlogp = unclipped_active ? -ratio * adv : 0.0;

        double entropy = 0.0;
        if (cfg.entropy_coefficient != 0.0)
          for (std::size_t k = 0; k < probs.size(); ++k)
            if (sample.mask[k] && probs[k] > 0.0) entropy -= probs[k] * std::log(probs[k]);

        std::vector<double> dlogits(logits.size(), 0.0);
        for (std::size_t k = 0; k < logits.size(); ++k) {
          if (!sample.mask[k]) continue;
          const double indicator =
              k == static_cast<std::size_t>(sample.action_index) ? 1.0 : 0.0;
          dlogits[k] = dloss_dlogp * (indicator - probs[k]);
          if (cfg.entropy_coefficient != 0.0 && probs[k] > 0.0)
            dlogits[k] +=
                cfg.entropy_coefficient * probs[k] * (std::log(probs[k]) + entropy);
          dlogits[k] *= inv_batch;
        }
        nn::backward(policy.net(), cache, dlogits, grads);
      }
      optimizer.apply(policy.net(), grads, adam_cfg);
    }
  }
}

/// Policy view over a policy head: encodes the state, masks infeasible action
/// templates, and reports the feasible actions with their probabilities.
template <typename Adapter>
class NeuralPolicy {
 public:
  NeuralPolicy(const Adapter& env, const nn::PolicyHead& head) : env_(&env), head_(&head) {}

  std::vector<std::pair<typename Adapter::ActionType, double>> action_distribution(
      const typename Adapter::StateType& s) const {
    const auto features = env_->encode(s);
    const auto mask = env_->mask(s);
    const auto probs = head_->probabilities(features, mask);
    std::vector<std::pair<typename Adapter::ActionType, double>> dist;
    for (std::size_t i = 0; i < probs.size(); ++i)
      if (mask[i]) dist.emplace_back(env_->action_from_index(static_cast<int>(i)), probs[i]);
    return dist;
  }

 private:
  const Adapter* env_;
  const nn::PolicyHead* head_;
};

/// Criss-Cross network adapter: features are the scaled queue lengths, the
/// metric is the empirical average cost (lower is better), targets are the
/// regenerative relative-value estimates.
struct MqnAdapter {
  using StateType = mqn::State;
  using ActionType = mqn::Action;
  using TrajectoryType = mqn::Trajectory;

  mqn::Config cfg;

  explicit MqnAdapter(mqn::Config c) : cfg(std::move(c)) { cfg.validate(); }

  static constexpr const char* metric_name() { return "average_cost"; }
  static constexpr bool metric_increasing() { return false; }

  int feature_dim() const { return 3; }
  int action_count() const { return 3; }

  std::vector<double> encode(const mqn::State& s) const {
    return {s.q1 / 10.0, s.q2 / 10.0, s.q3 / 10.0};
  }

  std::vector<std::uint8_t> mask(const mqn::State& s) const {
    std::vector<std::uint8_t> m(3, 0);
    for (const auto a : mqn::feasible_actions(s, cfg)) m[static_cast<std::size_t>(a)] = 1;
    return m;
  }

  mqn::Action action_from_index(int index) const { return static_cast<mqn::Action>(index); }
  int action_index(const mqn::Trajectory& traj, std::size_t j) const {
    return static_cast<int>(traj.actions[j]);
  }

  template <typename Policy>
  mqn::Trajectory simulate(const Policy& policy, RngStream& rng, int scenario_count) const {
    return mqn::simulate_episode(policy, cfg, rng, scenario_count);
  }

  double metric(std::span<const mqn::Trajectory> trajs) const {
    return estimators::estimate_average_cost(trajs);
  }

  /// Average cost fed into the regenerative targets.
  double iteration_statistic(std::span<const mqn::Trajectory> trajs) const {
    return estimators::estimate_average_cost(trajs);
  }

  template <typename Policy>
  std::vector<double> targets(const mqn::Trajectory& traj,
                              const estimators::ValueApproximation<mqn::State>& zeta,
                              const Policy& policy, double statistic,
                              const estimators::EstimatorMode& mode, RngStream& rng) const {
    return estimators::mqn_amp_targets(traj, zeta, policy, cfg, statistic, mode, rng);
  }

  /// The final state position carries no action; train on positions 0..N-1.
  std::size_t usable_records(const mqn::Trajectory& traj) const { return traj.actions.size(); }
  const mqn::State& state_at(const mqn::Trajectory& traj, std::size_t j) const {
    return traj.states[j];
  }
};

/// Ride-hailing adapter: features summarize the clock, the cursor car, fleet
/// whereabouts and open demand; the metric is the episode matching rate.
struct RideHailAdapter {
  using StateType = ridehail::State;
  using ActionType = ridehail::Action;
  using TrajectoryType = ridehail::Trajectory;

  ridehail::Config cfg;

  explicit RideHailAdapter(ridehail::Config c) : cfg(std::move(c)) { cfg.validate(); }

  static constexpr const char* metric_name() { return "matching_rate"; }
  static constexpr bool metric_increasing() { return true; }

  int feature_dim() const { return 2 + 3 * cfg.regions + cfg.regions * cfg.regions; }
  int action_count() const { return ridehail::action_count(cfg); }

  std::vector<double> encode(const ridehail::State& s) const {
    require(!s.terminal, "cannot encode a terminal state");
    const int r = cfg.regions;
    std::vector<double> f;
    f.reserve(static_cast<std::size_t>(feature_dim()));
    f.push_back(static_cast<double>(s.epoch) / cfg.horizon);
    f.push_back(static_cast<double>(s.available_count() - s.cursor) / cfg.cars);
    std::vector<double> cursor_region(static_cast<std::size_t>(r), 0.0);
    if (s.at_decision())
      cursor_region[static_cast<std::size_t>(
          s.cars[static_cast<std::size_t>(s.cursor_car())].region)] = 1.0;
    std::vector<double> available(static_cast<std::size_t>(r), 0.0);
    std::vector<double> busy(static_cast<std::size_t>(r), 0.0);
    for (const auto& car : s.cars) {
      auto& bucket = car.busy_until <= s.epoch ? available : busy;
      bucket[static_cast<std::size_t>(car.region)] += 1.0 / cfg.cars;
    }
    std::vector<double> demand(static_cast<std::size_t>(r) * static_cast<std::size_t>(r), 0.0);
    for (const auto& req : s.open_requests)
      demand[static_cast<std::size_t>(req.origin * r + req.destination)] += 0.25;
    f.insert(f.end(), cursor_region.begin(), cursor_region.end());
    f.insert(f.end(), available.begin(), available.end());
    f.insert(f.end(), busy.begin(), busy.end());
    f.insert(f.end(), demand.begin(), demand.end());
    return f;
  }

  std::vector<std::uint8_t> mask(const ridehail::State& s) const {
    std::vector<std::uint8_t> m(static_cast<std::size_t>(action_count()), 0);
    for (const auto& a : ridehail::feasible_actions(s))
      m[static_cast<std::size_t>(ridehail::action_to_index(a, cfg))] = 1;
    return m;
  }

  ridehail::Action action_from_index(int index) const {
    return ridehail::action_from_index(index, cfg);
  }
  int action_index(const ridehail::Trajectory& traj, std::size_t j) const {
    return ridehail::action_to_index(traj.records[j].action, cfg);
  }

  template <typename Policy>
  ridehail::Trajectory simulate(const Policy& policy, RngStream& rng,
                                int scenario_count) const {
    return ridehail::simulate_episode(policy, cfg, rng, scenario_count);
  }

  double metric(std::span<const ridehail::Trajectory> trajs) const {
    double total = 0.0;
    for (const auto& traj : trajs) total += traj.matching_rate();
    return trajs.empty() ? 0.0 : total / static_cast<double>(trajs.size());
  }

  double iteration_statistic(std::span<const ridehail::Trajectory>) const { return 0.0; }

  template <typename Policy>
  std::vector<double> targets(const ridehail::Trajectory& traj,
                              const estimators::ValueApproximation<ridehail::State>& zeta,
                              const Policy& policy, double,
                              const estimators::EstimatorMode& mode, RngStream& rng) const {
    return estimators::amp_targets(traj, zeta, policy, cfg, mode, rng);
  }

  std::size_t usable_records(const ridehail::Trajectory& traj) const {
    return traj.records.size();
  }
  const ridehail::State& state_at(const ridehail::Trajectory& traj, std::size_t j) const {
    return traj.records[j].state;
  }
};

struct TrainResult {
  nn::PolicyHead policy;
  nn::ValueNet value;
  LearningCurveRun curve;
};

/// Full training loop. Per iteration: roll out K episodes (episode e on the
/// stream (seed, iteration, e), merged in episode order so results do not
/// depend on the worker count), build value targets with zeta frozen to the
/// previous iteration's fitted value net (iteration 1 uses zeta = 0), fit the
/// value net, standardize advantages against it, and run the clipped policy
/// update. Wall time is accounted to simulation / preprocessing / training.
template <typename Adapter>
TrainResult train(
    const Adapter& env, const PpoConfig& cfg,
    const std::function<void(const IterationRecord&)>& on_iteration = {},
    const std::function<void(int, const nn::PolicyHead&, const nn::ValueNet&)>& on_checkpoint =
        {}) {
  using State = typename Adapter::StateType;
  using Trajectory = typename Adapter::TrajectoryType;
  using Clock = std::chrono::steady_clock;
  const auto seconds_since = [](Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
  };

  cfg.validate();
  RngStream init_rng = RngStream::derive(cfg.seed, 0, 0);
  std::vector<int> policy_sizes{env.feature_dim()};
  policy_sizes.insert(policy_sizes.end(), cfg.policy_hidden.begin(), cfg.policy_hidden.end());
  policy_sizes.push_back(env.action_count());
  nn::PolicyHead policy(nn::Mlp::create(policy_sizes, init_rng));
  policy.net().zero_last_layer();  // start uniform over feasible actions

  std::vector<int> value_sizes{env.feature_dim()};
  value_sizes.insert(value_sizes.end(), cfg.value_hidden.begin(), cfg.value_hidden.end());
  value_sizes.push_back(1);
  nn::ValueNet value(nn::Mlp::create(value_sizes, init_rng), cfg.normalization);

  nn::Adam policy_optimizer(policy.net());
  auto zeta = estimators::ValueApproximation<State>::zero();
  const int scenario_count =
      cfg.estimator.kind == estimators::Kind::amp_sampled ? cfg.estimator.sample_count : 0;

  TrainResult result{std::move(policy), std::move(value), {}};
  const int K = cfg.episodes_per_iteration;

  for (int iteration = 1; iteration <= cfg.iterations; ++iteration) {
    IterationRecord record;
    record.iteration = iteration;
    const auto iteration_start = Clock::now();

    // simulation
    auto t0 = Clock::now();
    std::vector<Trajectory> trajs(static_cast<std::size_t>(K));
    {
      const NeuralPolicy<Adapter> rollout_policy(env, result.policy);
      parallel_for(K, cfg.workers, [&](int e) {
        RngStream rng = RngStream::derive(cfg.seed, static_cast<std::uint64_t>(iteration),
                                          static_cast<std::uint64_t>(e));
        trajs[static_cast<std::size_t>(e)] = env.simulate(rollout_policy, rng, scenario_count);
      });
      record.metric = env.metric(trajs);
    }
    record.sim_seconds += seconds_since(t0);

    // preprocessing: value targets
    t0 = Clock::now();
    const double statistic = env.iteration_statistic(trajs);
    std::vector<std::vector<double>> per_traj_targets(static_cast<std::size_t>(K));
    {
      const NeuralPolicy<Adapter> rollout_policy(env, result.policy);
      parallel_for(K, cfg.workers, [&](int e) {
        RngStream rng = RngStream::derive(cfg.seed, static_cast<std::uint64_t>(iteration),
                                          1000000 + static_cast<std::uint64_t>(e));
        per_traj_targets[static_cast<std::size_t>(e)] = env.targets(
            trajs[static_cast<std::size_t>(e)], zeta, rollout_policy, statistic,
            cfg.estimator, rng);
      });
    }
    std::vector<std::vector<double>> features;
    std::vector<double> targets;
    std::vector<std::vector<std::uint8_t>> masks;
    std::vector<int> actions;
    for (int e = 0; e < K; ++e) {
      const auto& traj = trajs[static_cast<std::size_t>(e)];
      for (std::size_t j = 0; j < env.usable_records(traj); ++j) {
        features.push_back(env.encode(env.state_at(traj, j)));
        targets.push_back(per_traj_targets[static_cast<std::size_t>(e)][j]);
        masks.push_back(env.mask(env.state_at(traj, j)));
        actions.push_back(env.action_index(traj, j));
      }
    }
    record.prep_seconds += seconds_since(t0);

    // value fit
    t0 = Clock::now();
    {
      RngStream fit_rng =
          RngStream::derive(cfg.seed, static_cast<std::uint64_t>(iteration), 2000000);
      record.value_loss = result.value.fit(features, targets, cfg.value_fit, fit_rng);
    }
    record.train_seconds += seconds_since(t0);

    // preprocessing: advantages and rollout samples
    t0 = Clock::now();
    std::vector<double> baselines(features.size());
    for (std::size_t i = 0; i < features.size(); ++i)
      baselines[i] = result.value.evaluate(features[i]);
    const auto advantages = compute_advantages(targets, baselines);
    std::vector<RolloutSample> samples(features.size());
    for (std::size_t i = 0; i < features.size(); ++i) {
      auto& s = samples[i];
      s.features = std::move(features[i]);
      s.mask = std::move(masks[i]);
      s.action_index = actions[i];
      s.advantage = advantages[i];
      const auto probs = result.policy.probabilities(s.features, s.mask);
      s.old_log_prob = std::log(probs[static_cast<std::size_t>(s.action_index)]);
    }
    record.prep_seconds += seconds_since(t0);

    // policy update
    t0 = Clock::now();
    {
      RngStream update_rng =
          RngStream::derive(cfg.seed, static_cast<std::uint64_t>(iteration), 3000000);
      ppo_update(result.policy, policy_optimizer, samples, cfg, update_rng);
    }
    record.train_seconds += seconds_since(t0);

    // freeze this iteration's fitted value net as the next iteration's zeta
    zeta = estimators::ValueApproximation<State>{
        [value_copy = result.value, &env](const State& s) {
          return value_copy.evaluate(env.encode(s));
        },
        detail::cat("iteration-", iteration, " value net")};

    record.total_seconds = seconds_since(iteration_start);
    result.curve.records.push_back(record);
    if (on_iteration) on_iteration(record);
    if (on_checkpoint) on_checkpoint(iteration, result.policy, result.value);
  }
  return result;
}

}  // namespace amplab::ppo
