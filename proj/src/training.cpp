#include "uasn/training.hpp"

#include <chrono>

namespace uasn::marl {
namespace {

constexpr std::uint64_t kEpisodeStream = 0x7000;
constexpr std::uint64_t kUpdateStream = 0xB00;

void assign_advantages(std::vector<Transition>& tr, double gamma, double lambda) {
  std::vector<std::uint8_t> has_parent(tr.size(), 0);
  for (const auto& t : tr) {
    if (t.next >= 0) has_parent[t.next] = 1;
  }
  std::vector<int> chain;
  std::vector<double> rewards, values;
  std::vector<std::uint8_t> dones;
  for (std::size_t head = 0; head < tr.size(); ++head) {
    if (has_parent[head]) continue;
    chain.clear();
    rewards.clear();
    values.clear();
    dones.clear();
    for (int k = static_cast<int>(head); k >= 0; k = tr[k].next) {
      chain.push_back(k);
      rewards.push_back(tr[k].reward);
      values.push_back(tr[k].value);
      dones.push_back(tr[k].done || tr[k].next < 0 ? 1 : 0);
    }
    const Gae g = gae_advantages(rewards, values, dones, gamma, lambda);
    for (std::size_t k = 0; k < chain.size(); ++k) tr[chain[k]].advantage = g.advantages[k];
  }
}

}  // namespace

IterationMetrics train_iteration(const env::World& base, std::vector<Agent>& agents, const TrainingSetup& setup,
                                 int iteration, int only_agent) {
  const auto start = std::chrono::steady_clock::now();
  IterationMetrics m;
  m.iteration = iteration;

  env::World world = base;
  const std::uint64_t seed = derive_seed(setup.seed, kEpisodeStream + static_cast<std::uint64_t>(iteration));
  routing::RoutingEngine engine(world, agents, setup.algorithm, setup.routing, setup.rewards, seed,
                                routing::EngineMode::Training);
  const int packets = setup.train.packets_per_episode;
  const int span = (packets + setup.routing.inject_per_tick - 1) / setup.routing.inject_per_tick;
  engine.schedule_failures(setup.failure_rate, span);
  engine.enqueue_packets(packets);
  engine.run(setup.train.episode_ticks);

  const auto& audit = engine.audit();
  m.mask_violations = audit.mask_violations;
  m.conservation_violations = audit.conservation_violations;
  m.max_policy_sum_error = audit.max_policy_sum_error;
  m.masked_fraction = engine.masked_fraction();

  auto& tr = engine.transitions();
  m.transitions = static_cast<int>(tr.size());
  if (tr.empty()) {
    m.empty = true;
    m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return m;
  }

  double total = 0.0;
  for (auto& t : tr) {
    total += t.reward;
    const bool terminal = t.done || t.next < 0;
    const double next_value = terminal ? 0.0 : agents[tr[t.next].agent].target_critic.value(tr[t.next].state);
    t.target = critic_target(t.reward, next_value, terminal, setup.train.gamma);
  }
  m.mean_reward = total / static_cast<double>(engine.counts().created);
  assign_advantages(tr, setup.train.gamma, setup.train.gae_lambda);

  int updated = 0;
  for (std::size_t a = 0; a < agents.size(); ++a) {
    if (only_agent >= 0 && static_cast<int>(a) != only_agent) continue;
    std::vector<Transition*> batch;
    for (auto& t : tr) {
      if (t.agent == static_cast<int>(a)) batch.push_back(&t);
    }
    if (batch.empty()) continue;
    Rng rng(derive_seed(seed, kUpdateStream + a));
    const auto stats = update_agent(agents[a], batch, setup.train, rng);
    m.actor_loss += stats.actor_loss;
    m.critic_loss += stats.critic_loss;
    ++updated;
  }
  if (updated > 0) {
    m.actor_loss /= updated;
    m.critic_loss /= updated;
  }
  m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return m;
}

std::vector<IterationMetrics> train(const env::World& base, std::vector<Agent>& agents, const TrainingSetup& setup,
                                    int iterations, const IterationCallback& on_iteration) {
  std::vector<IterationMetrics> out;
  out.reserve(static_cast<std::size_t>(std::max(iterations, 0)));
  for (int it = 0; it < iterations; ++it) {
    out.push_back(train_iteration(base, agents, setup, it));
    if (on_iteration) on_iteration(out.back());
  }
  return out;
}

}  // namespace uasn::marl
