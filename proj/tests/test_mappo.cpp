#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "support.hpp"
#include "uasn/mappo.hpp"
#include "uasn/training.hpp"

using namespace uasn;
using namespace uasn::marl;
using env::Role;
using fixture::numeric_grad;
using fixture::random_matrix;
using fixture::rel_error;

namespace {

std::vector<std::uint8_t> bits(std::initializer_list<int> v) { return {v.begin(), v.end()}; }

env::World micro_world() {
  return fixture::make_world({{0, 0, 0, Role::Sink},
                              {3000, 0, 0, Role::Source},
                              {1000, 1000, 0, Role::CentralAggregation},
                              {1000, -1000, 0, Role::CentralAggregation},
                              {1000, 0, 0},
                              {2000, 0, 0}},
                             1600.0);
}

}  // namespace

TEST(MaskedPolicy, Renormalizes) {
  const nn::Vector uniform = nn::Vector::Constant(4, 0.25);
  const auto a = masked_policy(uniform, bits({1, 1, 0, 0}));
  EXPECT_DOUBLE_EQ(a[0], 0.5);
  EXPECT_DOUBLE_EQ(a[1], 0.5);
  EXPECT_EQ(a[2], 0.0);
  EXPECT_EQ(a[3], 0.0);
  EXPECT_EQ(masked_policy(uniform, bits({1, 1, 1, 1})), uniform);
  const auto b = masked_policy(nn::Vector{{0.7, 0.2, 0.1}}, bits({0, 1, 1}));
  EXPECT_EQ(b[0], 0.0);
  EXPECT_NEAR(b[1], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(b[2], 1.0 / 3.0, 1e-15);
  EXPECT_THROW(masked_policy(uniform, bits({0, 0, 0, 0})), std::invalid_argument);
}

TEST(MaskedPolicy, SupportAndNormalization) {
  Rng rng(1);
  for (int t = 0; t < 2000; ++t) {
    const int n = 1 + static_cast<int>(rng.index(10));
    const nn::Vector p = nn::softmax(random_matrix(n, 1, rng, 5.0));
    std::vector<std::uint8_t> m(n);
    for (auto& x : m) x = rng.bernoulli(0.5);
    m[rng.index(n)] = 1;
    const auto q = masked_policy(p, m);
    for (int k = 0; k < n; ++k) {
      if (!m[k]) {
        EXPECT_EQ(q[k], 0.0);
      }
    }
    EXPECT_NEAR(q.sum(), 1.0, 1e-9);
    const nn::Vector logits = random_matrix(n, 1, rng, 3.0);
    const int a = static_cast<int>(std::find(m.begin(), m.end(), 1) - m.begin());
    EXPECT_NEAR(std::exp(masked_log_prob(logits, m, a)), masked_policy(nn::softmax(logits), m)[a], 1e-12);
  }
}

TEST(Gae, LambdaZeroIsOneStepTd) {
  const std::vector<double> r{1.0, 0.5, -0.2}, v{0.3, 0.1, 0.4};
  const std::vector<std::uint8_t> d{0, 0, 1};
  const auto g = gae_advantages(r, v, d, 0.9, 0.0);
  EXPECT_NEAR(g.advantages[0], 1.0 + 0.9 * 0.1 - 0.3, 1e-15);
  EXPECT_NEAR(g.advantages[1], 0.5 + 0.9 * 0.4 - 0.1, 1e-15);
  EXPECT_NEAR(g.advantages[2], -0.2 - 0.4, 1e-15);
}

TEST(Gae, LambdaOneIsMonteCarlo) {
  const std::vector<double> r{1.0, 0.5, -0.2}, v{0.3, 0.1, 0.4};
  const std::vector<std::uint8_t> d{0, 0, 1};
  const auto g = gae_advantages(r, v, d, 0.9, 1.0);
  const double g2 = -0.2, g1 = 0.5 + 0.9 * g2, g0 = 1.0 + 0.9 * g1;
  EXPECT_NEAR(g.advantages[0], g0 - 0.3, 1e-14);
  EXPECT_NEAR(g.advantages[1], g1 - 0.1, 1e-14);
  EXPECT_NEAR(g.advantages[2], g2 - 0.4, 1e-14);
  EXPECT_NEAR(g.returns[0], g0, 1e-14);
}

TEST(Gae, HandUnrolledThreeSteps) {
  const std::vector<double> r{0.2, -0.1, 0.7}, v{0.5, 0.4, 0.3};
  const std::vector<std::uint8_t> d{0, 0, 0};
  const double last = 0.6, gm = 0.95, lm = 0.9;
  const double d2 = 0.7 + gm * last - 0.3;
  const double d1 = -0.1 + gm * 0.3 - 0.4;
  const double d0 = 0.2 + gm * 0.4 - 0.5;
  const double a2 = d2, a1 = d1 + gm * lm * a2, a0 = d0 + gm * lm * a1;
  const auto g = gae_advantages(r, v, d, gm, lm, last);
  EXPECT_NEAR(g.advantages[0], a0, 1e-15);
  EXPECT_NEAR(g.advantages[1], a1, 1e-15);
  EXPECT_NEAR(g.advantages[2], a2, 1e-15);
  const std::vector<double> none;
  const std::vector<std::uint8_t> no_flags;
  EXPECT_THROW(gae_advantages(none, none, no_flags, gm, lm), std::invalid_argument);
}

TEST(Gae, NormalizedAdvantages) {
  const auto n = normalize_advantages(nn::Vector{{1.0, 2.0, 3.0, 6.0}});
  EXPECT_NEAR(n.mean(), 0.0, 1e-15);
  EXPECT_NEAR(n.squaredNorm() / 4.0, 1.0, 1e-12);
  EXPECT_EQ(normalize_advantages(nn::Vector::Constant(3, 2.0)), nn::Vector::Zero(3));
}

TEST(CriticTarget, Cases) {
  EXPECT_DOUBLE_EQ(critic_target(1.0, 5.0, true, 0.95), 1.0);
  EXPECT_DOUBLE_EQ(critic_target(0.3, 5.0, false, 0.0), 0.3);
  EXPECT_NEAR(critic_target(0.5, 2.0, false, 0.95), 2.4, 1e-15);
}

TEST(ClippedObjective, Cases) {
  EXPECT_DOUBLE_EQ(clipped_objective(1.0, 0.7, 0.2), 0.7);
  EXPECT_NEAR(clipped_objective(1.5, 2.0, 0.2), 1.2 * 2.0, 1e-15);
  EXPECT_NEAR(clipped_objective(0.5, -1.0, 0.2), -0.8, 1e-15);
  EXPECT_NEAR(clipped_objective(0.5, 1.0, 0.2), 0.5, 1e-15);
}

TEST(CriticLoss, MatchesArithmeticAndGradient) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    Critic c = Critic::create(5, 8, rng);
    const nn::Matrix s = random_matrix(6, 5, rng);
    nn::Vector pred = c.values(s);
    EXPECT_NEAR(critic_loss(c, s, pred), 0.0, 1e-30);
    const nn::Vector t = random_matrix(6, 1, rng);
    EXPECT_NEAR(critic_loss(c, s, t), (pred - t).squaredNorm() / 6.0, 1e-14);
    EXPECT_NEAR(critic_loss(c, s, (pred.array() - 0.3).matrix()), 0.09, 1e-14);

    Critic g = c.zeros_like();
    critic_loss(c, s, t, &g);
    auto f = [&] { return critic_loss(c, s, t); };
    EXPECT_LT(rel_error(g.hidden.weights, numeric_grad(c.hidden.weights, f)), 1e-4);
    EXPECT_LT(rel_error(g.out.weights, numeric_grad(c.out.weights, f)), 1e-4);
    EXPECT_LT(rel_error(g.out.biases, numeric_grad(c.out.biases, f)), 1e-4);
  }
}

TEST(Polyak, MovesTargetByFraction) {
  Rng rng(2);
  Critic a = Critic::create(3, 4, rng), b = Critic::create(3, 4, rng);
  const auto before = a.hidden.weights;
  polyak_update(a, b, 0.01);
  EXPECT_LT((a.hidden.weights - (0.99 * before + 0.01 * b.hidden.weights)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Rewards, Forwarding) {
  RewardWeights w;
  EXPECT_DOUBLE_EQ(forwarding_reward(true, 1.0, 0.0, w), 1.0);
  w.gamma2 = 2.0;
  EXPECT_DOUBLE_EQ(forwarding_reward(false, 0.0, 0.25, w), -1.0);
  EXPECT_DOUBLE_EQ(forwarding_reward(true, 0.0, 0.0, w), 0.0);
  EXPECT_THROW(forwarding_reward(true, 1.2, 0.0, w), std::domain_error);
  EXPECT_THROW(forwarding_reward(false, 0.0, -0.1, w), std::domain_error);
}

TEST(Rewards, NoiseHopDelay) {
  EXPECT_EQ(noise_reward(60.0, 0.0, 1.0), 0.0);
  EXPECT_NEAR(noise_reward(60.0, 0.01, 1.0), -0.6, 1e-15);
  EXPECT_EQ(noise_reward(0.0, 0.01, 1.0), 0.0);
  EXPECT_EQ(noise_reward(-5.0, 0.01, 0.5), 0.0);
  EXPECT_DOUBLE_EQ(hop_reward(0, 1.0, 1.0), 1.0);
  EXPECT_DOUBLE_EQ(hop_reward(1, 1.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(hop_reward(7, 2.0, 3.0), 0.2);
  for (int h = 0; h < 30; ++h) EXPECT_GT(hop_reward(h, 1.0, 1.0), hop_reward(h + 1, 1.0, 1.0));
  EXPECT_DOUBLE_EQ(delay_reward(2.0, 2.0, 6.0, 0.7), 0.7);
  EXPECT_DOUBLE_EQ(delay_reward(6.0, 2.0, 6.0, 0.7), 0.7 - 1.0);
  EXPECT_DOUBLE_EQ(delay_reward(4.0, 2.0, 6.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(delay_reward(9.0, 2.0, 6.0, 1.0), 0.0);
  EXPECT_THROW(delay_reward(1.0, 3.0, 3.0, 1.0), std::domain_error);
  // Affine: equal steps give equal decrements.
  const double a = delay_reward(2.5, 2.0, 6.0, 1.0), b = delay_reward(3.0, 2.0, 6.0, 1.0),
               c = delay_reward(3.5, 2.0, 6.0, 1.0);
  EXPECT_NEAR(a - b, b - c, 1e-15);
  EXPECT_GT(a, b);
}

TEST(Rewards, TotalIsWeightedSum) {
  RewardWeights w;
  EXPECT_NEAR(total_reward({1.0, -0.6, 0.5, 0.5}, w), 0.48, 1e-14);
  RewardWeights zero = w;
  zero.theta1 = zero.theta2 = zero.theta3 = zero.theta4 = 0.0;
  EXPECT_EQ(total_reward({1.0, -0.6, 0.5, 0.5}, zero), 0.0);
  RewardWeights one = zero;
  one.theta3 = 1.0;
  EXPECT_EQ(total_reward({1.0, -0.6, 0.37, 0.5}, one), 0.37);
  Rng rng(5);
  for (int t = 0; t < 200; ++t) {
    RewardComponents c{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const double base = total_reward(c, w);
    const double dx = rng.uniform(-1, 1);
    auto c2 = c;
    c2.noise += dx;
    EXPECT_NEAR(total_reward(c2, w) - base, w.theta2 * dx, 1e-14);
    c2 = c;
    c2.delay += dx;
    EXPECT_NEAR(total_reward(c2, w) - base, w.theta4 * dx, 1e-14);
  }
}

TEST(Rewards, WeightValidation) {
  RewardWeights w;
  w.beta = 0.0;
  EXPECT_THROW(validate(w), std::invalid_argument);
  w = {};
  w.omega = 1.5;
  EXPECT_THROW(validate(w), std::invalid_argument);
  w = {};
  w.theta2 = -0.1;
  EXPECT_THROW(validate(w), std::invalid_argument);
  TrainConfig c;
  c.gamma = 1.2;
  EXPECT_THROW(validate(c), std::invalid_argument);
  c = {};
  c.clip_epsilon = 0.0;
  EXPECT_THROW(validate(c), std::invalid_argument);
}

TEST(PpoLoss, SamePolicyGivesMeanAdvantageAndZeroAdvantageGivesZeroGradient) {
  Rng rng(3);
  auto actor = mask::ScoringNetwork::create(rng);
  std::vector<Transition> tr(4);
  double mean_adv = 0.0;
  for (auto& t : tr) {
    t.tokens = random_matrix(3, mask::kFeatureCount, rng);
    t.mask = bits({1, 0, 1});
    t.action = 2;
    t.log_prob = masked_log_prob(mask::score_logits(actor, t.tokens), t.mask, t.action);
    t.advantage = rng.uniform(-1, 1);
    mean_adv += t.advantage / 4.0;
  }
  std::vector<const Transition*> batch;
  for (auto& t : tr) batch.push_back(&t);
  EXPECT_NEAR(ppo_actor_loss(actor, batch, 0.2), -mean_adv, 1e-14);
  for (auto& t : tr) t.advantage = 0.0;
  auto g = actor.zeros_like();
  ppo_actor_loss(actor, batch, 0.2, &g);
  for (auto& v : g.all_views()) {
    for (Eigen::Index k = 0; k < v.size(); ++k) EXPECT_EQ(v.data[k], 0.0);
  }
}

TEST(PpoLoss, TwoAgentEndToEndMatchesFiniteDifference) {
  // Two CA regions, three candidate next hops per decision; tokens come from
  // the world, the loss sums both agents' clipped surrogates.
  const auto world = micro_world();
  const auto norm = mask::observe_normalizers(world);
  const std::vector<int> cands{0, 2, 5};
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    TrainConfig cfg;
    auto agents = make_agents(world, cfg, seed);
    ASSERT_EQ(agents.size(), 2u);
    Rng rng(seed * 31);
    std::vector<std::vector<Transition>> tr(2);
    for (int a = 0; a < 2; ++a) {
      for (int k = 0; k < 3; ++k) {
        Transition t;
        t.agent = a;
        t.tokens = mask::candidate_features(world, 4, 0, cands, k, 20, norm);
        t.tokens.col(8).array() += rng.uniform(-0.1, 0.1);
        t.mask = bits({1, 1, 1});
        t.mask[rng.index(3)] = rng.bernoulli(0.5) ? 0 : 1;
        t.action = static_cast<int>(std::find(t.mask.begin(), t.mask.end(), 1) - t.mask.begin());
        // Old policy a little off so ratios sit inside the clip band.
        const double logp = masked_log_prob(mask::score_logits(agents[a].actor, t.tokens), t.mask, t.action);
        t.log_prob = logp + rng.uniform(-0.05, 0.05);
        t.advantage = rng.uniform(-1.0, 1.0);
        tr[a].push_back(t);
      }
    }
    auto loss = [&] {
      double total = 0.0;
      for (int a = 0; a < 2; ++a) {
        std::vector<const Transition*> b;
        for (auto& t : tr[a]) b.push_back(&t);
        total += ppo_actor_loss(agents[a].actor, b, 0.2);
      }
      return total;
    };
    for (int a = 0; a < 2; ++a) {
      std::vector<const Transition*> b;
      for (auto& t : tr[a]) b.push_back(&t);
      auto g = agents[a].actor.zeros_like();
      ppo_actor_loss(agents[a].actor, b, 0.2, &g);
      auto params = agents[a].actor.views();
      auto grads = g.views();
      for (std::size_t p = 0; p < params.size(); ++p) {
        Eigen::Map<nn::Matrix> gm(grads[p].data, grads[p].rows, grads[p].cols);
        nn::Matrix numeric(params[p].rows, params[p].cols);
        for (Eigen::Index k = 0; k < params[p].size(); ++k) {
          double& x = params[p].data[k];
          const double keep = x, h = 1e-6;
          x = keep + h;
          const double up = loss();
          x = keep - h;
          const double down = loss();
          x = keep;
          numeric.data()[k] = (up - down) / (2.0 * h);
        }
        if (params[p].name == "actor.head.b") {
          // A shared logit offset cancels in the softmax.
          EXPECT_LT(gm.cwiseAbs().maxCoeff(), 1e-12);
          EXPECT_LT(numeric.cwiseAbs().maxCoeff(), 1e-8);
          continue;
        }
        EXPECT_LT(rel_error(gm, numeric), 1e-3) << "seed " << seed << " agent " << a << " " << params[p].name;
      }
    }
  }
}

TEST(Agents, CheckpointRoundTrip) {
  const auto world = micro_world();
  auto a = make_agents(world, {}, 1);
  auto b = make_agents(world, {}, 2);
  std::stringstream ss;
  save_agents(ss, a);
  load_agents(ss, b);
  for (std::size_t k = 0; k < a.size(); ++k) {
    auto va = a[k].views(), vb = b[k].views();
    for (std::size_t p = 0; p < va.size(); ++p) {
      for (Eigen::Index i = 0; i < va[p].size(); ++i) EXPECT_EQ(va[p].data[i], vb[p].data[i]);
    }
  }
}

namespace {

env::World small64(std::uint64_t seed) {
  env::WorldConfig c;
  c.seed = seed;
  return env::init_scenario(c);
}

TrainingSetup setup_for(Algorithm alg, std::uint64_t seed, double failure_rate = 0.1) {
  TrainingSetup s;
  s.algorithm = alg;
  s.seed = seed;
  s.failure_rate = failure_rate;
  return s;
}

}  // namespace

TEST(TrainIteration, StoredLogProbsMatchBehaviourPolicy) {
  const auto world = small64(1);
  auto agents = make_agents(world, {}, 1);
  const auto setup = setup_for(Algorithm::MaMappo, 1);
  env::World w = world;
  routing::RoutingEngine engine(w, agents, setup.algorithm, setup.routing, setup.rewards, 99,
                                routing::EngineMode::Training);
  engine.schedule_failures(0.1, 8);
  engine.enqueue_packets(32);
  engine.run(60);
  ASSERT_FALSE(engine.transitions().empty());
  for (const auto& t : engine.transitions()) {
    EXPECT_TRUE(t.mask[t.action]);
    EXPECT_TRUE(std::isfinite(t.log_prob));
    const double now = masked_log_prob(mask::score_logits(agents[t.agent].actor, t.tokens), t.mask, t.action);
    // First-epoch ratio is exactly one.
    EXPECT_EQ(std::exp(now - t.log_prob), 1.0);
  }
}

TEST(TrainIteration, ZeroLengthEpisodeMakesNoUpdate) {
  const auto world = small64(1);
  auto agents = make_agents(world, {}, 1);
  auto before = agents;
  auto setup = setup_for(Algorithm::MaMappo, 1);
  setup.train.packets_per_episode = 0;
  const auto m = train_iteration(world, agents, setup, 0);
  EXPECT_TRUE(m.empty);
  EXPECT_EQ(m.transitions, 0);
  auto va = agents[0].views(), vb = before[0].views();
  for (std::size_t p = 0; p < va.size(); ++p) {
    for (Eigen::Index i = 0; i < va[p].size(); ++i) EXPECT_EQ(va[p].data[i], vb[p].data[i]);
  }
}

TEST(TrainIteration, IdenticalSeedsGiveIdenticalParameters) {
  const auto world = small64(2);
  auto a = make_agents(world, {}, 5);
  auto b = make_agents(world, {}, 5);
  const auto setup = setup_for(Algorithm::MaMappoI, 5);
  const auto ma = train(world, a, setup, 3);
  const auto mb = train(world, b, setup, 3);
  for (int k = 0; k < 3; ++k) EXPECT_EQ(ma[k].mean_reward, mb[k].mean_reward);
  auto va = a[0].views(), vb = b[0].views();
  for (std::size_t p = 0; p < va.size(); ++p) {
    for (Eigen::Index i = 0; i < va[p].size(); ++i) ASSERT_EQ(va[p].data[i], vb[p].data[i]);
  }
}

TEST(TrainIteration, PolicyUpdateLeavesPairScorerUntouched) {
  const auto world = small64(3);
  auto agents = make_agents(world, {}, 3);
  const auto pair_before = agents[0].actor.pair_head.weights;
  const auto head_before = agents[0].actor.head.weights;
  train(world, agents, setup_for(Algorithm::MaMappo, 3), 2);
  EXPECT_EQ(agents[0].actor.pair_head.weights, pair_before);
  EXPECT_NE(agents[0].actor.head.weights, head_before);
}

TEST(TrainIteration, NoMaskViolationsAndNormalizedPolicies) {
  const auto world = small64(4);
  for (auto alg : {Algorithm::Mappo, Algorithm::MaMappo, Algorithm::MaMappoI}) {
    auto agents = make_agents(world, {}, 4);
    for (const auto& m : train(world, agents, setup_for(alg, 4), 5)) {
      EXPECT_EQ(m.mask_violations, 0);
      EXPECT_EQ(m.conservation_violations, 0);
      EXPECT_LE(m.max_policy_sum_error, 1e-9);
      EXPECT_TRUE(std::isfinite(m.actor_loss));
      EXPECT_TRUE(std::isfinite(m.critic_loss));
    }
  }
}

TEST(Algorithm, NamesRoundTrip) {
  for (auto a : {Algorithm::Mappo, Algorithm::MaMappo, Algorithm::MaMappoI}) {
    EXPECT_EQ(algorithm_from_string(to_string(a)), a);
  }
  EXPECT_THROW(algorithm_from_string("dqn"), std::invalid_argument);
}
