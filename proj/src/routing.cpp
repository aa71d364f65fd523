#include "uasn/routing.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "uasn/training.hpp"

namespace uasn::routing {
namespace {

constexpr std::uint64_t kPacketStream = 0x5A000000ULL;
constexpr std::uint64_t kFailureStream = 0xFA11;
constexpr std::uint64_t kMobilityStream = 0x30B1;
constexpr std::uint64_t kFinetuneStream = 0xF17E;

int sample(const nn::Vector& policy, double u) {
  double acc = 0.0;
  int last = -1;
  for (Eigen::Index a = 0; a < policy.size(); ++a) {
    if (policy[a] <= 0.0) continue;
    last = static_cast<int>(a);
    acc += policy[a];
    if (u < acc) return last;
  }
  return last;
}

}  // namespace

std::string_view to_string(PacketStatus status) {
  switch (status) {
    case PacketStatus::InFlight:
      return "in_flight";
    case PacketStatus::BufferedPending:
      return "buffered_pending";
    case PacketStatus::Delivered:
      return "delivered";
    case PacketStatus::Orphaned:
      return "orphaned";
    case PacketStatus::Dropped:
      return "dropped";
  }
  return "in_flight";
}

bool Packet::visited(int node) const {
  return std::any_of(hop_trace.begin(), hop_trace.end(), [node](const Hop& h) { return h.node == node; });
}

RoutingEngine::RoutingEngine(env::World& world, std::vector<marl::Agent>& agents, Algorithm algorithm,
                             RoutingConfig config, marl::RewardWeights rewards, std::uint64_t seed, EngineMode mode,
                             marl::TrainConfig finetune)
    : world_(world),
      agents_(agents),
      algorithm_(algorithm),
      config_(config),
      rewards_(rewards),
      seed_(seed),
      mode_(mode),
      finetune_(finetune),
      mobility_rng_(derive_seed(seed, kMobilityStream)) {
  if (agents_.size() != world_.cas().size()) throw std::invalid_argument("one agent per CA region is required");
  if (config_.hop_limit < 1 || config_.inject_per_tick < 1 || config_.view_refresh_ticks < 0 ||
      config_.finetune_iterations < 0 || config_.drain_ticks < 0) {
    throw std::invalid_argument("invalid routing configuration");
  }
  marl::validate(rewards_);
  views_.resize(world_.cas().size());
  refresh_views();
}

void RoutingEngine::refresh_view(int subnet) {
  const auto kind = algorithm_ == Algorithm::Mappo ? mask::ViewKind::Geometric : mask::ViewKind::Masked;
  mask::update_network_view(world_, world_.cas()[subnet], agents_[subnet].actor, views_[subnet], kind);
}

void RoutingEngine::refresh_views() {
  for (std::size_t k = 0; k < views_.size(); ++k) refresh_view(static_cast<int>(k));
}

void RoutingEngine::schedule_failures(double rate, int span) {
  Rng rng(derive_seed(seed_, kFailureStream));
  const auto ids = env::select_failures(world_, rate, rng);
  for (int id : ids) {
    const int at = world_.tick() + static_cast<int>(rng.index(static_cast<std::uint64_t>(std::max(span, 0)) + 1));
    failures_[at].push_back(id);
  }
}

void RoutingEngine::schedule_failure(int node, int tick) {
  world_.node(node);  // validates the id
  failures_[tick].push_back(node);
}

void RoutingEngine::enqueue_packets(int count) {
  if (count < 0) throw std::invalid_argument("packet count must be non-negative");
  queued_ += count;
}

int RoutingEngine::add_packet(int source, int sink) {
  world_.node(source);
  world_.node(sink);
  Packet p;
  p.id = static_cast<int>(packets_.size());
  p.source = source;
  p.sink = sink;
  p.created_at = world_.time_s();
  p.hop_trace.push_back({source, p.created_at, 0.0});
  p.rng = Rng(derive_seed(seed_, kPacketStream + static_cast<std::uint64_t>(p.id)));
  packets_.push_back(std::move(p));
  return packets_.back().id;
}

void RoutingEngine::inject() {
  const auto sources = world_.sources();
  for (int k = 0; k < config_.inject_per_tick && queued_ > 0; ++k, --queued_) {
    add_packet(sources[next_source_ % sources.size()], world_.sink());
    ++next_source_;
  }
}

std::vector<int> RoutingEngine::candidates_for(int node, const Packet& packet) const {
  std::vector<int> out;
  for (int j : view_of(node).neighbors(node)) {
    if (!packet.visited(j)) out.push_back(j);
  }
  return out;
}

const std::vector<int>& RoutingEngine::hops_to_sink() {
  if (hops_tick_ != world_.tick()) {
    hops_cache_ = env::hop_distances(world_, world_.sink());
    hops_tick_ = world_.tick();
  }
  return hops_cache_;
}

std::optional<Decision> RoutingEngine::route_step(int node, Packet& packet) {
  if (!world_.node(node).alive) throw RoutingError("route_step on dead node " + std::to_string(node));
  if (packet.status != PacketStatus::InFlight || packet.at() != node) {
    throw env::StateError("packet " + std::to_string(packet.id) + " is not in flight at node " + std::to_string(node));
  }
  Decision d;
  d.candidates = candidates_for(node, packet);
  if (d.candidates.empty()) return std::nullopt;

  if (!packet.directive.empty()) {
    const int hop = packet.directive.front();
    if (std::find(d.candidates.begin(), d.candidates.end(), hop) != d.candidates.end()) {
      packet.directive.erase(packet.directive.begin());
      d.next_hop = hop;
      d.from_directive = true;
      return d;
    }
    packet.directive.clear();
  }

  if (norm_tick_ != world_.tick()) {
    norm_ = mask::observe_normalizers(world_);
    norm_tick_ = world_.tick();
  }
  const auto& agent = agents_[world_.node(node).subnet];
  d.tokens = mask::candidate_features(world_, node, packet.sink, d.candidates, packet.hops(), config_.hop_limit, norm_);
  const nn::Vector logits = mask::score_logits(agent.actor, d.tokens);
  const nn::Vector probs = nn::softmax(logits);
  if (algorithm_ == Algorithm::Mappo) {
    d.mask.scores = probs;
    d.mask.binary.assign(d.candidates.size(), 1);
  } else {
    d.mask = mask::apply_mask(probs, mask::default_tau(d.candidates.size()));
  }
  d.policy = marl::masked_policy(probs, d.mask.binary);
  audit_.max_policy_sum_error = std::max(audit_.max_policy_sum_error, std::abs(d.policy.sum() - 1.0));
  d.action = sample(d.policy, packet.rng.uniform());
  if (!d.mask.binary[d.action]) ++audit_.mask_violations;
  d.log_prob = marl::masked_log_prob(logits, d.mask.binary, d.action);
  d.next_hop = d.candidates[d.action];
  const auto valid = std::count(d.mask.binary.begin(), d.mask.binary.end(), 1);
  masked_sum_ += 1.0 - static_cast<double>(valid) / static_cast<double>(d.candidates.size());
  ++masked_count_;
  ++audit_.decisions;
  return d;
}

void RoutingEngine::record(Packet& packet, const Decision& d, int node) {
  if (mode_ != EngineMode::Training || d.from_directive) return;
  marl::Transition t;
  t.agent = world_.node(node).subnet;
  t.node = node;
  t.tokens = d.tokens;
  t.mask = d.mask.binary;
  t.action = d.action;
  t.log_prob = d.log_prob;
  const auto& agent = agents_[t.agent];
  t.state = marl::critic_state(world_, agent, node, packet.hops(), config_.hop_limit);
  t.value = agent.critic.value(t.state);
  const int index = static_cast<int>(transitions_.size());
  if (packet.last_transition >= 0) transitions_[packet.last_transition].next = index;
  packet.last_transition = index;
  transitions_.push_back(std::move(t));
}

void RoutingEngine::add_reward(Packet& packet, double reward, bool done) {
  if (mode_ != EngineMode::Training || packet.last_transition < 0) return;
  auto& t = transitions_[packet.last_transition];
  t.reward += reward;
  t.done = t.done || done;
}

double RoutingEngine::hop_step_reward(int to, bool delivered, int from) {
  const auto& cfg = world_.config();
  marl::RewardComponents c;
  if (delivered) {
    c.forwarding = marl::forwarding_reward(true, marl::link_success_probability(world_.signal_strength(from, to)), 0.0,
                                           rewards_);
  }
  c.noise = marl::noise_reward(world_.node(to).spl_total_db, rewards_.chi, rewards_.varsigma);
  const int h = hops_to_sink()[to];
  c.hops = marl::hop_reward(h < 0 ? config_.hop_limit : h, rewards_.alpha, rewards_.beta);
  const double t_max = world_.diameter() / cfg.sound_speed_mps;
  c.delay = marl::delay_reward(world_.distance(to, world_.sink()) / cfg.sound_speed_mps, 0.0, t_max, rewards_.omega);
  return marl::total_reward(c, rewards_);
}

void RoutingEngine::terminate(Packet& packet, PacketStatus status) {
  packet.status = status;
  packet.directive.clear();
  if (status == PacketStatus::Orphaned) {
    add_reward(packet, rewards_.theta1 * marl::forwarding_reward(false, 0.0, 1.0, rewards_), true);
  }
}

void RoutingEngine::deliver_hop(Packet& packet, int from, int to) {
  env::consume_energy(world_, from, env::EnergyEvent::Tx);
  env::consume_energy(world_, to, env::EnergyEvent::Rx);
  world_.record_outcome(from, to, true);
  const double delay = world_.distance(from, to) / world_.config().sound_speed_mps;
  const double arrival = (world_.tick() + 1) * world_.config().tick_duration_s;
  packet.hop_trace.push_back({to, arrival, delay});
  packet.accumulated_delay_s += delay;
  packet.moved_tick = world_.tick();
  if (to == packet.sink) {
    packet.status = PacketStatus::Delivered;
    packet.delivered_at = arrival;
    double sum = 0.0;
    for (const auto& h : packet.hop_trace) sum += h.delay_s;
    if (std::abs(sum - packet.accumulated_delay_s) > 1e-9) ++audit_.delay_violations;
  }
}

void RoutingEngine::forward(int node, Packet& packet) {
  if (!world_.node(node).alive || packet.hops() >= config_.hop_limit) {
    terminate(packet, PacketStatus::Orphaned);
    return;
  }
  const auto d = route_step(node, packet);
  if (!d) {
    terminate(packet, PacketStatus::Orphaned);
    return;
  }
  const int next = d->next_hop;
  if (algorithm_ != Algorithm::Mappo && !view_of(node).reachable(node, next)) ++audit_.view_violations;

  if (world_.link_up(node, next)) {
    record(packet, *d, node);
    const bool delivered = next == packet.sink;
    const double r = mode_ == EngineMode::Training ? hop_step_reward(next, delivered, node) : 0.0;
    deliver_hop(packet, node, next);
    add_reward(packet, r, delivered);
    return;
  }
  if (algorithm_ == Algorithm::MaMappoI) {
    handle_unreachable(node, packet, next);
    return;
  }
  // Ablation contract: the transmission is attempted and the packet is lost.
  env::consume_energy(world_, node, env::EnergyEvent::Tx);
  world_.record_outcome(node, next, false);
  packet.moved_tick = world_.tick();
  record(packet, *d, node);
  add_reward(packet, rewards_.theta1 * marl::forwarding_reward(false, 0.0, 1.0, rewards_), true);
  terminate(packet, PacketStatus::Dropped);
}

InterruptRequest RoutingEngine::handle_unreachable(int node, Packet& packet, int next_hop) {
  packet.status = PacketStatus::BufferedPending;
  packet.buffered_version = view_of(node).version;
  packet.directive.clear();
  packet.moved_tick = world_.tick();
  ++audit_.interrupts;
  for (auto& r : pending_) {
    if (r.requester == node && r.unreachable_next_hop == next_hop) {
      r.packet_ids.push_back(packet.id);
      return r;
    }
  }
  pending_.push_back({node, next_hop, {packet.id}, world_.time_s()});
  return pending_.back();
}

void RoutingEngine::ca_handle_request(int ca_node, const std::vector<InterruptRequest>& requests) {
  if (requests.empty()) return;
  // Requests always go to the requester's own CA.
  const int subnet = world_.node(requests.front().requester).subnet;
  (void)ca_node;
  refresh_view(subnet);
  if (mode_ == EngineMode::Task && config_.finetune_iterations > 0) {
    marl::TrainingSetup setup;
    setup.algorithm = algorithm_;
    setup.train = finetune_;
    setup.routing = config_;
    setup.rewards = rewards_;
    setup.failure_rate = 0.0;
    setup.seed = derive_seed(seed_, kFinetuneStream + static_cast<std::uint64_t>(world_.tick()) * 8 + subnet);
    for (int it = 0; it < config_.finetune_iterations; ++it) marl::train_iteration(world_, agents_, setup, it, subnet);
    // The view reflects the tuned scorer.
    refresh_view(subnet);
  }
  if (mode_ != EngineMode::Task) return;
  for (const auto& r : requests) {
    for (int id : r.packet_ids) {
      Packet& p = packets_.at(id);
      if (p.status != PacketStatus::BufferedPending || p.at() != r.requester) continue;
      std::vector<int> avoid;
      for (const auto& h : p.hop_trace) avoid.push_back(h.node);
      p.directive = greedy_path(r.requester, avoid, config_.hop_limit - p.hops());
    }
  }
}

void RoutingEngine::ca_handle_request(int ca_node, const InterruptRequest& request) {
  ca_handle_request(ca_node, std::vector<InterruptRequest>{request});
}

void RoutingEngine::handle_requests() {
  if (pending_.empty()) return;
  std::vector<InterruptRequest> requests;
  requests.swap(pending_);
  for (const auto& r : requests) {
    std::vector<int> entry{r.requester, r.unreachable_next_hop};
    entry.insert(entry.end(), r.packet_ids.begin(), r.packet_ids.end());
    request_log_.push_back(std::move(entry));
  }
  for (std::size_t subnet = 0; subnet < views_.size(); ++subnet) {
    std::vector<InterruptRequest> mine;
    for (const auto& r : requests) {
      if (world_.node(r.requester).subnet == static_cast<int>(subnet)) mine.push_back(r);
    }
    if (!mine.empty()) ca_handle_request(world_.cas()[subnet], mine);
  }
}

std::vector<int> RoutingEngine::resume_buffered(int node) {
  std::vector<int> resumed;
  for (auto& p : packets_) {
    if (p.status != PacketStatus::BufferedPending || p.at() != node) continue;
    if (!world_.node(node).alive) {
      terminate(p, PacketStatus::Orphaned);
      continue;
    }
    const auto version = view_of(node).version;
    if (version == p.buffered_version) continue;
    std::vector<int> avoid;
    for (const auto& h : p.hop_trace) avoid.push_back(h.node);
    if (view_route_exists(node, avoid)) {
      p.status = PacketStatus::InFlight;
      resumed.push_back(p.id);
    } else {
      p.buffered_version = version;
      p.directive.clear();
    }
  }
  return resumed;
}

bool RoutingEngine::view_route_exists(int from, const std::vector<int>& avoid) const {
  const int sink = world_.sink();
  if (from == sink) return true;
  std::vector<std::uint8_t> seen(world_.size(), 0);
  for (int a : avoid) seen[a] = 1;
  seen[from] = 1;
  std::deque<int> frontier{from};
  while (!frontier.empty()) {
    const int u = frontier.front();
    frontier.pop_front();
    for (int v : view_of(u).neighbors(u)) {
      if (seen[v]) continue;
      if (v == sink) return true;
      seen[v] = 1;
      frontier.push_back(v);
    }
  }
  return false;
}

std::vector<int> RoutingEngine::greedy_path(int from, const std::vector<int>& avoid, int budget) const {
  std::vector<int> path;
  std::vector<std::uint8_t> seen(world_.size(), 0);
  for (int a : avoid) seen[a] = 1;
  seen[from] = 1;
  const auto norm = mask::observe_normalizers(world_);
  const int base_hops = std::max(0, static_cast<int>(avoid.size()) - 1);
  int cur = from;
  while (static_cast<int>(path.size()) < budget) {
    std::vector<int> cands;
    for (int v : view_of(cur).neighbors(cur)) {
      if (!seen[v]) cands.push_back(v);
    }
    if (cands.empty()) break;
    const auto& agent = agents_[world_.node(cur).subnet];
    const nn::Matrix tokens = mask::candidate_features(world_, cur, world_.sink(), cands,
                                                       base_hops + static_cast<int>(path.size()), config_.hop_limit, norm);
    const nn::Vector probs = mask::attention_scores(agent.actor, tokens);
    std::vector<std::uint8_t> binary(cands.size(), 1);
    if (algorithm_ != Algorithm::Mappo) binary = mask::apply_mask(probs, mask::default_tau(cands.size())).binary;
    Eigen::Index best = 0;
    marl::masked_policy(probs, binary).maxCoeff(&best);
    cur = cands[best];
    seen[cur] = 1;
    path.push_back(cur);
    if (cur == world_.sink()) break;
  }
  return path;
}

StatusCounts RoutingEngine::counts() const {
  StatusCounts c;
  c.created = static_cast<int>(packets_.size());
  for (const auto& p : packets_) {
    switch (p.status) {
      case PacketStatus::InFlight:
        ++c.in_flight;
        break;
      case PacketStatus::BufferedPending:
        ++c.buffered;
        break;
      case PacketStatus::Delivered:
        ++c.delivered;
        break;
      case PacketStatus::Orphaned:
        ++c.orphaned;
        break;
      case PacketStatus::Dropped:
        ++c.dropped;
        break;
    }
  }
  return c;
}

void RoutingEngine::audit_tick() {
  if (!counts().conserved()) ++audit_.conservation_violations;
}

bool RoutingEngine::complete() const {
  if (queued_ > 0) return false;
  return std::all_of(packets_.begin(), packets_.end(), [](const Packet& p) { return p.terminal(); });
}

bool RoutingEngine::step() {
  if (finished_ || complete()) return false;
  const int t = world_.tick();

  if (auto it = failures_.find(t); it != failures_.end()) {
    std::vector<int> alive;
    for (int id : it->second) {
      if (world_.node(id).alive) alive.push_back(id);
    }
    env::inject_failure(world_, alive);
  }
  if (ticks_run_ > 0) env::step_mobility(world_, mobility_rng_);
  if (ticks_run_ > 0 && config_.view_refresh_ticks > 0 && ticks_run_ % config_.view_refresh_ticks == 0) {
    refresh_views();
  }
  handle_requests();
  bool any_buffered = false;
  for (const auto& p : packets_) any_buffered = any_buffered || p.status == PacketStatus::BufferedPending;
  if (any_buffered) {
    for (int node = 0; node < world_.size(); ++node) resume_buffered(node);
  }
  inject();

  std::vector<std::vector<int>> at_node(world_.size());
  for (const auto& p : packets_) {
    if (p.status == PacketStatus::InFlight) at_node[p.at()].push_back(p.id);
  }
  for (int node = 0; node < world_.size(); ++node) {
    for (int id : at_node[node]) {
      Packet& p = packets_[id];
      if (p.status != PacketStatus::InFlight || p.at() != node || p.moved_tick == t) continue;
      forward(node, p);
    }
  }

  audit_tick();
  world_.set_tick(t + 1);
  ++ticks_run_;
  return !complete();
}

void RoutingEngine::run(int tick_limit) {
  while (ticks_run_ < tick_limit && step()) {
  }
  finish();
}

void RoutingEngine::finish() {
  if (finished_) return;
  for (auto& p : packets_) {
    if (!p.terminal()) terminate(p, PacketStatus::Orphaned);
  }
  queued_ = 0;
  audit_tick();
  finished_ = true;
}

double RoutingEngine::masked_fraction() const {
  return masked_count_ == 0 ? 0.0 : masked_sum_ / static_cast<double>(masked_count_);
}

TaskMetrics RoutingEngine::metrics() const {
  TaskMetrics m = audit_;
  const auto c = counts();
  m.created = c.created;
  m.delivered = c.delivered;
  m.dropped = c.dropped;
  m.orphaned = c.orphaned;
  m.delivery_ratio = c.created == 0 ? 0.0 : static_cast<double>(c.delivered) / c.created;
  m.total_ticks = ticks_run_;
  double delay_sum = 0.0, hop_sum = 0.0;
  for (const auto& p : packets_) {
    if (p.status != PacketStatus::Delivered) continue;
    m.delays_s.push_back(p.accumulated_delay_s);
    delay_sum += p.accumulated_delay_s;
    hop_sum += p.hops();
    m.max_hops = std::max(m.max_hops, p.hops());
  }
  if (c.delivered > 0) {
    m.mean_delay_s = delay_sum / c.delivered;
    m.mean_hops = hop_sum / c.delivered;
  }
  return m;
}

TaskMetrics run_routing_task(const env::World& world, std::vector<marl::Agent>& agents, Algorithm algorithm,
                             const TaskSpec& spec, std::vector<Packet>* packets_out) {
  if (spec.n_d < 0) throw std::invalid_argument("n_d must be non-negative");
  env::World copy = world;
  RoutingEngine engine(copy, agents, algorithm, spec.routing, spec.rewards, spec.seed, EngineMode::Task, spec.finetune);
  const int span = (spec.n_d + spec.routing.inject_per_tick - 1) / spec.routing.inject_per_tick;
  engine.schedule_failures(spec.failure_rate, span);
  engine.enqueue_packets(spec.n_d);
  engine.run(span + spec.routing.drain_ticks);
  if (packets_out) *packets_out = engine.packets();
  return engine.metrics();
}

nlohmann::json export_paths(const std::vector<Packet>& packets) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& p : packets) {
    if (p.status != PacketStatus::Delivered) continue;
    std::vector<int> hops;
    std::vector<double> delays;
    for (std::size_t k = 0; k < p.hop_trace.size(); ++k) {
      hops.push_back(p.hop_trace[k].node);
      if (k > 0) delays.push_back(p.hop_trace[k].delay_s);
    }
    out.push_back({{"id", p.id}, {"hops", hops}, {"delays_s", delays}});
  }
  return out;
}

}  // namespace uasn::routing
