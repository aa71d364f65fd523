#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "uasn/nn.hpp"
#include "uasn/ocean_env.hpp"
#include "uasn/reachability.hpp"

namespace uasn::marl {

enum class Algorithm { Mappo, MaMappo, MaMappoI };

std::string_view to_string(Algorithm algorithm);
// Accepts "mappo", "ma_mappo", "ma_mappo_i"; throws std::invalid_argument.
Algorithm algorithm_from_string(std::string_view text);

struct RewardWeights {
  double theta1 = 0.4;
  double theta2 = 0.2;
  double theta3 = 0.2;
  double theta4 = 0.2;
  double gamma1 = 1.0;
  double gamma2 = 1.0;
  double chi = 0.01;
  double varsigma = 1.0;
  double alpha = 1.0;
  double beta = 1.0;
  double omega = 0.5;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RewardWeights, theta1, theta2, theta3, theta4, gamma1,
                                                gamma2, chi, varsigma, alpha, beta, omega)

// Throws std::invalid_argument for negative weights, beta <= 0, omega outside
// [0, 1] or non-finite values.
void validate(const RewardWeights& w);

struct TrainConfig {
  int episodes = 500;
  double lr = 3e-3;
  double gamma = 0.95;
  double gae_lambda = 0.95;
  double clip_epsilon = 0.2;
  double polyak = 0.01;
  int epochs_per_iter = 4;
  int minibatch = 64;
  double max_grad_norm = 0.5;
  int critic_hidden = 64;
  // Shape of one training episode.
  int packets_per_episode = 32;
  int episode_ticks = 60;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, episodes, lr, gamma, gae_lambda, clip_epsilon,
                                                polyak, epochs_per_iter, minibatch, max_grad_norm,
                                                critic_hidden, packets_per_episode, episode_ticks)

void validate(const TrainConfig& c);

// Probability that a transmission at the given SNR gets through: logistic
// with midpoint 10 dB and slope 0.5 per dB.
double link_success_probability(double snr_db);

double forwarding_reward(bool delivered, double p_forward, double p_loss, const RewardWeights& w);
double noise_reward(double spl_total_db, double chi, double varsigma);
double hop_reward(int hops, double alpha, double beta);
double delay_reward(double t_delay, double t_min, double t_max, double omega);

struct RewardComponents {
  double forwarding = 0.0;
  double noise = 0.0;
  double hops = 0.0;
  double delay = 0.0;
};

double total_reward(const RewardComponents& r, const RewardWeights& w);

// pi'(a) = pi(a) m(a) / sum pi m; throws std::invalid_argument when every
// action is masked.
nn::Vector masked_policy(const nn::Vector& probs, std::span<const std::uint8_t> mask);

// log pi'(action) computed from logits restricted to the mask.
double masked_log_prob(const nn::Vector& logits, std::span<const std::uint8_t> mask, int action);

struct Gae {
  nn::Vector advantages;
  nn::Vector returns;
};

// delta_t = r_t + gamma v_{t+1} (1 - done_t) - v_t with v_T = last_value.
Gae gae_advantages(std::span<const double> rewards, std::span<const double> values,
                   std::span<const std::uint8_t> dones, double gamma, double lambda,
                   double last_value = 0.0);

// Zero mean, unit variance; constant input maps to zeros.
nn::Vector normalize_advantages(const nn::Vector& adv);

double critic_target(double reward, double next_value, bool done, double gamma);

// min(ratio A, clip(ratio, 1 - eps, 1 + eps) A)
double clipped_objective(double ratio, double advantage, double eps);

struct Critic {
  nn::DenseParams hidden;
  nn::DenseParams out;

  static Critic create(int inputs, int width, Rng& rng);
  Critic zeros_like() const;
  std::vector<nn::ParamView> views();
  nn::Vector values(const nn::Matrix& states) const;
  double value(const nn::Vector& state) const;
};

// target <- (1 - tau) target + tau source
void polyak_update(Critic& target, const Critic& source, double tau);

// Mean squared error loss and its gradient for a batch of states.
double critic_loss(const Critic& critic, const nn::Matrix& states, const nn::Vector& targets,
                   Critic* grads = nullptr);

struct Transition {
  int agent = 0;
  int node = -1;
  nn::Matrix tokens;                  // candidate features
  std::vector<std::uint8_t> mask;     // valid actions among the candidates
  int action = 0;
  double log_prob = 0.0;
  nn::Vector state;                   // critic input
  double value = 0.0;
  double reward = 0.0;
  bool done = false;
  int next = -1;                      // successor transition of the same packet
  // Filled by the trainer.
  double advantage = 0.0;
  double target = 0.0;
};

// Clipped surrogate loss -mean(min(...)) over the batch using each
// transition's stored advantage; gradients go only through unmasked logits.
double ppo_actor_loss(const mask::ScoringNetwork& actor, std::span<const Transition* const> batch,
                      double clip_epsilon, mask::ScoringNetwork* grads = nullptr);

// One CA region's learner: shared actor for its DR nodes and a critic over the
// region's node states.
struct Agent {
  int ca_node = -1;
  int subnet = 0;
  std::vector<int> members;
  mask::ScoringNetwork actor;
  Critic critic;
  Critic target_critic;
  nn::Adam actor_opt;
  nn::Adam critic_opt;

  int state_dim() const { return 2 * static_cast<int>(members.size()) + kLocalFeatures; }
  static constexpr int kLocalFeatures = 7;

  std::vector<nn::ParamView> views();
};

// Agents for every CA region of the world, initialized from `seed`.
std::vector<Agent> make_agents(const env::World& world, const TrainConfig& config, std::uint64_t seed);

// [alive, energy share] per region member, then the deciding node's
// position, distance to sink, hop budget used, noise and live-neighbor share.
nn::Vector critic_state(const env::World& world, const Agent& agent, int node, int hops, int hop_limit);

struct UpdateStats {
  double actor_loss = 0.0;
  double critic_loss = 0.0;
  int transitions = 0;
};

// Critic regression toward stored targets, then PPO-clip on normalized
// advantages, then a Polyak step of the target critic. Transitions must
// belong to this agent.
UpdateStats update_agent(Agent& agent, std::vector<Transition*>& batch, const TrainConfig& config, Rng& rng);

void save_agents(std::ostream& out, std::vector<Agent>& agents);
void load_agents(std::istream& in, std::vector<Agent>& agents);

}  // namespace uasn::marl
