#include "uasn/mappo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace uasn::marl {
namespace {

void check_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::domain_error(std::string(name) + " must lie in [0, 1]");
}

}  // namespace

std::string_view to_string(Algorithm algorithm) {
  switch (algorithm) {
    case Algorithm::Mappo:
      return "mappo";
    case Algorithm::MaMappo:
      return "ma_mappo";
    case Algorithm::MaMappoI:
      return "ma_mappo_i";
  }
  return "mappo";
}

Algorithm algorithm_from_string(std::string_view text) {
  if (text == "mappo") return Algorithm::Mappo;
  if (text == "ma_mappo") return Algorithm::MaMappo;
  if (text == "ma_mappo_i") return Algorithm::MaMappoI;
  throw std::invalid_argument("unknown algorithm: " + std::string(text));
}

void validate(const RewardWeights& w) {
  const double all[] = {w.theta1, w.theta2, w.theta3, w.theta4, w.gamma1, w.gamma2,
                        w.chi,    w.varsigma, w.alpha, w.beta, w.omega};
  for (double x : all) {
    if (!std::isfinite(x)) throw std::invalid_argument("reward weights must be finite");
  }
  for (double x : {w.theta1, w.theta2, w.theta3, w.theta4, w.gamma1, w.gamma2, w.chi, w.varsigma}) {
    if (x < 0.0) throw std::invalid_argument("reward weights must be non-negative");
  }
  if (!(w.alpha > 0.0) || !(w.beta > 0.0)) throw std::invalid_argument("alpha and beta must be positive");
  if (w.omega < 0.0 || w.omega > 1.0) throw std::invalid_argument("omega must lie in [0, 1]");
}

void validate(const TrainConfig& c) {
  if (c.episodes < 0) throw std::invalid_argument("episodes must be non-negative");
  if (!(c.lr >= 0.0)) throw std::invalid_argument("lr must be non-negative");
  if (!(c.gamma >= 0.0 && c.gamma <= 1.0)) throw std::invalid_argument("gamma must lie in [0, 1]");
  if (!(c.gae_lambda >= 0.0 && c.gae_lambda <= 1.0)) throw std::invalid_argument("gae_lambda must lie in [0, 1]");
  if (!(c.clip_epsilon > 0.0)) throw std::invalid_argument("clip_epsilon must be positive");
  if (!(c.polyak >= 0.0 && c.polyak <= 1.0)) throw std::invalid_argument("polyak must lie in [0, 1]");
  if (c.epochs_per_iter < 1 || c.minibatch < 1) throw std::invalid_argument("epochs and minibatch must be positive");
  if (c.critic_hidden < 1) throw std::invalid_argument("critic_hidden must be positive");
  if (c.packets_per_episode < 0 || c.episode_ticks < 1) throw std::invalid_argument("bad episode shape");
}

double link_success_probability(double snr_db) { return 1.0 / (1.0 + std::exp(-0.5 * (snr_db - 10.0))); }

double forwarding_reward(bool delivered, double p_forward, double p_loss, const RewardWeights& w) {
  check_probability(p_forward, "p_forward");
  check_probability(p_loss, "p_loss");
  return delivered ? w.gamma1 * std::sqrt(p_forward) : -w.gamma2 * std::sqrt(p_loss);
}

double noise_reward(double spl_total_db, double chi, double varsigma) {
  return -chi * std::pow(std::max(spl_total_db, 0.0), varsigma);
}

double hop_reward(int hops, double alpha, double beta) {
  if (hops < 0) throw std::domain_error("hop count must be non-negative");
  return alpha / (beta + hops);
}

double delay_reward(double t_delay, double t_min, double t_max, double omega) {
  if (!(t_max > t_min)) throw std::domain_error("delay_reward needs t_max > t_min");
  const double t = std::clamp(t_delay, t_min, t_max);
  return omega - (t - t_min) / (t_max - t_min);
}

double total_reward(const RewardComponents& r, const RewardWeights& w) {
  return w.theta1 * r.forwarding + w.theta2 * r.noise + w.theta3 * r.hops + w.theta4 * r.delay;
}

nn::Vector masked_policy(const nn::Vector& probs, std::span<const std::uint8_t> mask) {
  if (static_cast<std::size_t>(probs.size()) != mask.size()) throw std::invalid_argument("masked_policy: size mismatch");
  nn::Vector out = nn::Vector::Zero(probs.size());
  double total = 0.0;
  for (Eigen::Index a = 0; a < probs.size(); ++a) {
    if (mask[a]) total += probs[a];
  }
  if (std::none_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; })) {
    throw std::invalid_argument("masked_policy: every action is masked");
  }
  if (!(total > 0.0)) {
    // Underflowed probabilities: spread evenly over the valid set.
    const double n = static_cast<double>(std::count(mask.begin(), mask.end(), 1));
    for (Eigen::Index a = 0; a < probs.size(); ++a) out[a] = mask[a] ? 1.0 / n : 0.0;
    return out;
  }
  for (Eigen::Index a = 0; a < probs.size(); ++a) out[a] = mask[a] ? probs[a] / total : 0.0;
  return out;
}

double masked_log_prob(const nn::Vector& logits, std::span<const std::uint8_t> mask, int action) {
  if (action < 0 || action >= logits.size() || !mask[action]) {
    throw std::invalid_argument("masked_log_prob: action is not valid");
  }
  double peak = -std::numeric_limits<double>::infinity();
  for (Eigen::Index a = 0; a < logits.size(); ++a) {
    if (mask[a]) peak = std::max(peak, logits[a]);
  }
  double sum = 0.0;
  for (Eigen::Index a = 0; a < logits.size(); ++a) {
    if (mask[a]) sum += std::exp(logits[a] - peak);
  }
  return logits[action] - peak - std::log(sum);
}

Gae gae_advantages(std::span<const double> rewards, std::span<const double> values,
                   std::span<const std::uint8_t> dones, double gamma, double lambda, double last_value) {
  const std::size_t n = rewards.size();
  if (n == 0) throw std::invalid_argument("gae_advantages: empty sequence");
  if (values.size() != n || dones.size() != n) throw std::invalid_argument("gae_advantages: length mismatch");
  Gae g{nn::Vector(n), nn::Vector(n)};
  double running = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    const double next = k + 1 < n ? values[k + 1] : last_value;
    const double live = dones[k] ? 0.0 : 1.0;
    const double delta = rewards[k] + gamma * next * live - values[k];
    running = delta + gamma * lambda * live * running;
    g.advantages[k] = running;
    g.returns[k] = running + values[k];
  }
  return g;
}

nn::Vector normalize_advantages(const nn::Vector& adv) {
  if (adv.size() == 0) return adv;
  const double mean = adv.mean();
  const double var = (adv.array() - mean).square().mean();
  const double sd = std::sqrt(var);
  if (!(sd > 1e-12)) return nn::Vector::Zero(adv.size());
  return ((adv.array() - mean) / sd).matrix();
}

double critic_target(double reward, double next_value, bool done, double gamma) {
  return reward + (done ? 0.0 : gamma * next_value);
}

double clipped_objective(double ratio, double advantage, double eps) {
  const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
  return std::min(ratio * advantage, clipped * advantage);
}

Critic Critic::create(int inputs, int width, Rng& rng) {
  return {nn::make_dense(inputs, width, rng), nn::make_dense(width, 1, rng)};
}

Critic Critic::zeros_like() const { return {nn::zeros_like(hidden), nn::zeros_like(out)}; }

std::vector<nn::ParamView> Critic::views() {
  return {nn::view("critic.hidden.w", hidden.weights), nn::view("critic.hidden.b", hidden.biases),
          nn::view("critic.out.w", out.weights), nn::view("critic.out.b", out.biases)};
}

nn::Vector Critic::values(const nn::Matrix& states) const {
  return nn::dense_forward(out, nn::tanh_forward(nn::dense_forward(hidden, states))).col(0);
}

double Critic::value(const nn::Vector& state) const { return values(state.transpose())[0]; }

void polyak_update(Critic& target, const Critic& source, double tau) {
  target.hidden.weights = (1.0 - tau) * target.hidden.weights + tau * source.hidden.weights;
  target.hidden.biases = (1.0 - tau) * target.hidden.biases + tau * source.hidden.biases;
  target.out.weights = (1.0 - tau) * target.out.weights + tau * source.out.weights;
  target.out.biases = (1.0 - tau) * target.out.biases + tau * source.out.biases;
}

double critic_loss(const Critic& critic, const nn::Matrix& states, const nn::Vector& targets, Critic* grads) {
  const nn::Matrix h = nn::tanh_forward(nn::dense_forward(critic.hidden, states));
  const nn::Vector pred = nn::dense_forward(critic.out, h).col(0);
  const double loss = nn::mse(pred, targets);
  if (grads) {
    const nn::Matrix d_pred = nn::mse_grad(pred, targets);
    const auto out = nn::dense_backward(critic.out, h, d_pred);
    const auto hid = nn::dense_backward(critic.hidden, states, nn::tanh_backward(h, out.grad_x));
    grads->out.weights += out.grads.weights;
    grads->out.biases += out.grads.biases;
    grads->hidden.weights += hid.grads.weights;
    grads->hidden.biases += hid.grads.biases;
  }
  return loss;
}

double ppo_actor_loss(const mask::ScoringNetwork& actor, std::span<const Transition* const> batch,
                      double clip_epsilon, mask::ScoringNetwork* grads) {
  if (batch.empty()) return 0.0;
  const double scale = 1.0 / static_cast<double>(batch.size());
  double objective = 0.0;
  for (const Transition* t : batch) {
    mask::ScoreCache cache;
    const nn::Vector logits = mask::score_logits(actor, t->tokens, grads ? &cache : nullptr);
    const double logp = masked_log_prob(logits, t->mask, t->action);
    const double ratio = std::exp(logp - t->log_prob);
    const double term = clipped_objective(ratio, t->advantage, clip_epsilon);
    if (!std::isfinite(term)) throw nn::NonFiniteError("non-finite PPO objective");
    objective += term;
    if (!grads) continue;
    // The unclipped branch carries the gradient whenever it is the active minimum.
    const double clipped = std::clamp(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon);
    if (ratio * t->advantage > clipped * t->advantage) continue;
    if (ratio != clipped && ratio * t->advantage == clipped * t->advantage) continue;
    nn::Vector d_logits = -masked_policy(nn::softmax(logits), t->mask);
    d_logits[t->action] += 1.0;
    d_logits *= -t->advantage * ratio * scale;
    mask::score_backward(actor, t->tokens, cache, d_logits, *grads);
  }
  return -objective * scale;
}

std::vector<nn::ParamView> Agent::views() {
  auto v = actor.all_views();
  for (auto& p : critic.views()) v.push_back(p);
  auto target = target_critic.views();
  for (auto& p : target) {
    p.name = "target_" + p.name;
    v.push_back(p);
  }
  return v;
}

std::vector<Agent> make_agents(const env::World& world, const TrainConfig& config, std::uint64_t seed) {
  validate(config);
  std::vector<Agent> agents;
  const nn::AdamConfig adam{config.lr, 0.9, 0.999, 1e-8};
  for (std::size_t k = 0; k < world.cas().size(); ++k) {
    Rng rng(derive_seed(seed, 0xA6E0 + k));
    Agent a;
    a.ca_node = world.cas()[k];
    a.subnet = static_cast<int>(k);
    a.members = world.subnet_members(a.subnet);
    a.actor = mask::ScoringNetwork::create(rng);
    a.critic = Critic::create(a.state_dim(), config.critic_hidden, rng);
    a.target_critic = a.critic;
    a.actor_opt = nn::Adam(adam);
    a.critic_opt = nn::Adam(adam);
    agents.push_back(std::move(a));
  }
  return agents;
}

nn::Vector critic_state(const env::World& world, const Agent& agent, int node, int hops, int hop_limit) {
  nn::Vector s(agent.state_dim());
  const double e0 = world.config().initial_energy;
  Eigen::Index k = 0;
  for (int m : agent.members) {
    const auto& n = world.node(m);
    s[k++] = n.alive ? 1.0 : 0.0;
    s[k++] = n.energy / e0;
  }
  const auto& here = world.node(node);
  const double edge = world.config().cube_edge_m;
  for (int a = 0; a < 3; ++a) s[k++] = here.position[a] / edge;
  s[k++] = world.distance(node, world.sink()) / world.diameter();
  s[k++] = hop_limit > 0 ? static_cast<double>(hops) / hop_limit : 0.0;
  s[k++] = std::max(here.spl_total_db, 0.0) / 100.0;
  int alive = 0;
  for (int j : here.adjacency_view) alive += world.node(j).alive ? 1 : 0;
  s[k++] = here.adjacency_view.empty() ? 0.0 : static_cast<double>(alive) / here.adjacency_view.size();
  return s;
}

UpdateStats update_agent(Agent& agent, std::vector<Transition*>& batch, const TrainConfig& config, Rng& rng) {
  UpdateStats stats;
  stats.transitions = static_cast<int>(batch.size());
  if (batch.empty()) return stats;

  nn::Vector adv(static_cast<Eigen::Index>(batch.size()));
  for (std::size_t k = 0; k < batch.size(); ++k) adv[k] = batch[k]->advantage;
  adv = normalize_advantages(adv);
  for (std::size_t k = 0; k < batch.size(); ++k) batch[k]->advantage = adv[k];

  std::vector<std::size_t> order(batch.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t mb = static_cast<std::size_t>(config.minibatch);
  double actor_sum = 0.0, critic_sum = 0.0;
  int updates = 0;
  for (int epoch = 0; epoch < config.epochs_per_iter; ++epoch) {
    for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[rng.index(k)]);
    for (std::size_t start = 0; start < order.size(); start += mb) {
      const std::size_t stop = std::min(order.size(), start + mb);
      std::vector<const Transition*> slice;
      nn::Matrix states(static_cast<Eigen::Index>(stop - start), agent.state_dim());
      nn::Vector targets(static_cast<Eigen::Index>(stop - start));
      for (std::size_t k = start; k < stop; ++k) {
        const Transition* t = batch[order[k]];
        slice.push_back(t);
        states.row(k - start) = t->state.transpose();
        targets[k - start] = t->target;
      }

      Critic cg = agent.critic.zeros_like();
      critic_sum += critic_loss(agent.critic, states, targets, &cg);
      auto cgv = cg.views();
      nn::clip_global_norm(cgv, config.max_grad_norm);
      agent.critic_opt.step(agent.critic.views(), cgv);

      mask::ScoringNetwork ag = agent.actor.zeros_like();
      actor_sum += ppo_actor_loss(agent.actor, slice, config.clip_epsilon, &ag);
      auto agv = ag.views();
      nn::clip_global_norm(agv, config.max_grad_norm);
      agent.actor_opt.step(agent.actor.views(), agv);
      ++updates;
    }
  }
  polyak_update(agent.target_critic, agent.critic, config.polyak);
  stats.actor_loss = actor_sum / updates;
  stats.critic_loss = critic_sum / updates;
  return stats;
}

void save_agents(std::ostream& out, std::vector<Agent>& agents) {
  std::vector<nn::ParamView> all;
  for (std::size_t k = 0; k < agents.size(); ++k) {
    for (auto& v : agents[k].views()) {
      v.name = "agent" + std::to_string(k) + "." + v.name;
      all.push_back(v);
    }
  }
  nn::save_checkpoint(out, all);
}

void load_agents(std::istream& in, std::vector<Agent>& agents) {
  std::vector<nn::ParamView> all;
  for (std::size_t k = 0; k < agents.size(); ++k) {
    for (auto& v : agents[k].views()) {
      v.name = "agent" + std::to_string(k) + "." + v.name;
      all.push_back(v);
    }
  }
  nn::load_checkpoint(in, all);
}

}  // namespace uasn::marl
