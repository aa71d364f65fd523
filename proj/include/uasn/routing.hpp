#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "json.hpp"
#include "uasn/mappo.hpp"
#include "uasn/ocean_env.hpp"
#include "uasn/reachability.hpp"

// Tick-driven packet routing over a World with per-CA network views. One
// engine serves training episodes and evaluation tasks. Within a tick the
// order is fixed: scheduled failures, mobility, periodic view refresh, CA
// handling of the previous tick's requests, resumption of buffered packets,
// injection, then per-node forwarding in ascending node id.
namespace uasn::routing {

using marl::Algorithm;

class RoutingError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

enum class PacketStatus : std::uint8_t { InFlight, BufferedPending, Delivered, Orphaned, Dropped };

std::string_view to_string(PacketStatus status);

struct Hop {
  int node = -1;
  double time_s = 0.0;
  double delay_s = 0.0;  // propagation delay of the link into this node
};

struct Packet {
  int id = 0;
  int source = -1;
  int sink = -1;
  std::vector<Hop> hop_trace;
  PacketStatus status = PacketStatus::InFlight;
  double created_at = 0.0;
  double delivered_at = -1.0;
  double accumulated_delay_s = 0.0;

  // Remaining hops of a CA-issued reroute.
  std::vector<int> directive;
  // View version seen when the packet was buffered.
  std::uint64_t buffered_version = 0;
  int last_transition = -1;
  int moved_tick = -1;
  Rng rng;

  int at() const { return hop_trace.back().node; }
  int hops() const { return static_cast<int>(hop_trace.size()) - 1; }
  bool visited(int node) const;
  bool terminal() const {
    return status == PacketStatus::Delivered || status == PacketStatus::Orphaned || status == PacketStatus::Dropped;
  }
};

struct InterruptRequest {
  int requester = -1;
  int unreachable_next_hop = -1;
  std::vector<int> packet_ids;
  double issued_at = 0.0;
};

struct RoutingConfig {
  int hop_limit = 20;
  int view_refresh_ticks = 50;
  int finetune_iterations = 5;
  int inject_per_tick = 4;
  // Extra ticks allowed after the last injection; the run stops earlier once
  // every packet is terminal.
  int drain_ticks = 200;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RoutingConfig, hop_limit, view_refresh_ticks,
                                                finetune_iterations, inject_per_tick, drain_ticks)

struct StatusCounts {
  int created = 0;
  int in_flight = 0;
  int buffered = 0;
  int delivered = 0;
  int orphaned = 0;
  int dropped = 0;

  bool conserved() const { return created == in_flight + buffered + delivered + orphaned + dropped; }
};

struct TaskMetrics {
  int created = 0;
  int delivered = 0;
  int dropped = 0;
  int orphaned = 0;
  double delivery_ratio = 0.0;
  double mean_delay_s = 0.0;
  std::vector<double> delays_s;  // per delivered packet, in packet id order
  int total_ticks = 0;
  int interrupts = 0;
  double mean_hops = 0.0;
  int max_hops = 0;
  std::vector<double> reward_curve;

  // Audits; all zero in a correct run.
  int conservation_violations = 0;
  int mask_violations = 0;
  int view_violations = 0;
  int delay_violations = 0;
  double max_policy_sum_error = 0.0;
  std::int64_t decisions = 0;
};

enum class EngineMode {
  Training,  // records transitions; CA requests refresh the view only
  Task,      // no transitions; CA requests also fine-tune and issue directives
};

struct Decision {
  int next_hop = -1;
  bool from_directive = false;
  std::vector<int> candidates;
  mask::ActionMask mask;
  nn::Vector policy;
  double log_prob = 0.0;
  int action = -1;
  nn::Matrix tokens;
};

class RoutingEngine {
 public:
  RoutingEngine(env::World& world, std::vector<marl::Agent>& agents, Algorithm algorithm, RoutingConfig config,
                marl::RewardWeights rewards, std::uint64_t seed, EngineMode mode = EngineMode::Task,
                marl::TrainConfig finetune = {});

  // Kills each eligible node with probability `rate` at a tick drawn
  // uniformly from [0, span].
  void schedule_failures(double rate, int span);
  void schedule_failure(int node, int tick);
  void enqueue_packets(int count);
  // Places a packet directly (tests and fixtures); returns its id.
  int add_packet(int source, int sink);

  // Advances one tick; false once the run is complete.
  bool step();
  void run(int tick_limit);

  // Finalizes: every non-terminal packet becomes orphaned.
  void finish();

  // Decision for the in-flight packet at `node` without side effects beyond
  // the packet's RNG. Throws RoutingError for a dead node and std::logic_error
  // when the packet is not at `node`.
  std::optional<Decision> route_step(int node, Packet& packet);
  // Buffers `packet` at `node` after a failed send and files the request.
  InterruptRequest handle_unreachable(int node, Packet& packet, int next_hop);
  // View refresh (immediate), optional fine-tuning, directives for the
  // buffered packets named in the requests. A request is always served by
  // the requester's own CA.
  void ca_handle_request(int ca_node, const InterruptRequest& request);
  void ca_handle_request(int ca_node, const std::vector<InterruptRequest>& requests);
  // Resumes buffered packets at `node` whose CA view has advanced and now
  // offers a route; returns the ids resumed.
  std::vector<int> resume_buffered(int node);

  void refresh_views();
  void refresh_view(int subnet);

  const env::World& world() const { return world_; }
  const std::vector<Packet>& packets() const { return packets_; }
  std::vector<Packet>& packets() { return packets_; }
  const std::vector<mask::NetworkView>& views() const { return views_; }
  const mask::NetworkView& view_of(int node) const { return views_.at(world_.node(node).subnet); }
  std::vector<marl::Transition>& transitions() { return transitions_; }
  const std::vector<InterruptRequest>& pending_requests() const { return pending_; }
  const std::vector<std::vector<int>>& request_log() const { return request_log_; }
  StatusCounts counts() const;
  const TaskMetrics& audit() const { return audit_; }
  TaskMetrics metrics() const;
  double masked_fraction() const;
  int ticks_run() const { return ticks_run_; }

  // Greedy masked-policy walk from `from` toward the sink over the views,
  // avoiding `avoid`. Stops at the sink, a dead end or the hop budget.
  std::vector<int> greedy_path(int from, const std::vector<int>& avoid, int budget) const;
  // Whether the composed views link `from` to the sink without `avoid`.
  bool view_route_exists(int from, const std::vector<int>& avoid) const;

 private:
  std::vector<int> candidates_for(int node, const Packet& packet) const;
  void forward(int node, Packet& packet);
  void deliver_hop(Packet& packet, int from, int to);
  void terminate(Packet& packet, PacketStatus status);
  void record(Packet& packet, const Decision& d, int node);
  void add_reward(Packet& packet, double reward, bool done);
  double hop_step_reward(int to, bool delivered, int from);
  const std::vector<int>& hops_to_sink();
  void inject();
  void handle_requests();
  void audit_tick();
  bool complete() const;

  env::World& world_;
  std::vector<marl::Agent>& agents_;
  Algorithm algorithm_;
  RoutingConfig config_;
  marl::RewardWeights rewards_;
  std::uint64_t seed_;
  EngineMode mode_;
  marl::TrainConfig finetune_;
  Rng mobility_rng_;

  std::vector<mask::NetworkView> views_;
  std::vector<Packet> packets_;
  std::vector<marl::Transition> transitions_;
  std::map<int, std::vector<int>> failures_;  // tick -> nodes
  std::vector<InterruptRequest> pending_;
  std::vector<std::vector<int>> request_log_;  // per request: requester, hop, packet ids...
  int queued_ = 0;
  int next_source_ = 0;
  int ticks_run_ = 0;
  int hops_tick_ = -1;
  std::vector<int> hops_cache_;
  int norm_tick_ = -1;
  mask::Normalizers norm_;
  TaskMetrics audit_;
  double masked_sum_ = 0.0;
  std::int64_t masked_count_ = 0;
  bool finished_ = false;
};

struct TaskSpec {
  int n_d = 500;
  double failure_rate = 0.0;
  RoutingConfig routing;
  marl::RewardWeights rewards;
  marl::TrainConfig finetune;
  std::uint64_t seed = 1;
};

// Evaluation run on a copy of `world`: injects n_d packets round-robin from
// the sources and advances until every packet is terminal or the tick limit.
// Agents may be fine-tuned in place by CA request handling.
TaskMetrics run_routing_task(const env::World& world, std::vector<marl::Agent>& agents, Algorithm algorithm,
                             const TaskSpec& spec, std::vector<Packet>* packets_out = nullptr);

// One line per delivered packet: {"id", "hops", "delays_s"}.
nlohmann::json export_paths(const std::vector<Packet>& packets);

}  // namespace uasn::routing
