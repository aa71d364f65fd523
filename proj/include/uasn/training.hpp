#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "uasn/mappo.hpp"
#include "uasn/routing.hpp"

namespace uasn::marl {

struct TrainingSetup {
  Algorithm algorithm = Algorithm::MaMappo;
  TrainConfig train;
  routing::RoutingConfig routing;
  RewardWeights rewards;
  double failure_rate = 0.0;
  std::uint64_t seed = 1;
};

struct IterationMetrics {
  int iteration = 0;
  bool empty = false;  // no transitions, no update
  double mean_reward = 0.0;
  double actor_loss = 0.0;
  double critic_loss = 0.0;
  double masked_fraction = 0.0;
  int transitions = 0;
  double wall_ms = 0.0;
  // Audits over the episode.
  int mask_violations = 0;
  int conservation_violations = 0;
  double max_policy_sum_error = 0.0;
};

// One episode on a fresh copy of `base` followed by the learner update of
// every agent (or only `only_agent` when it is >= 0).
IterationMetrics train_iteration(const env::World& base, std::vector<Agent>& agents, const TrainingSetup& setup,
                                 int iteration, int only_agent = -1);

using IterationCallback = std::function<void(const IterationMetrics&)>;

std::vector<IterationMetrics> train(const env::World& base, std::vector<Agent>& agents, const TrainingSetup& setup,
                                    int iterations, const IterationCallback& on_iteration = {});

}  // namespace uasn::marl
