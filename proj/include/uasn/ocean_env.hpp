#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "uasn/acoustics.hpp"
#include "uasn/rng.hpp"

namespace uasn::acoustics {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(NoiseSourceParams, frequency_hz, frequency_scale,
                                                vehicle_speed, vehicle_density, temperature_k,
                                                resistance_ohm, bandwidth_hz, base_turbulence_db,
                                                turbulence_speed, wind_speed)
}  // namespace uasn::acoustics

// The simulated ocean: a jittered 3D grid of sensor nodes inside a cube,
// random node drift, acoustic link metrics, energy accounting and failure
// injection. A World is a single-owner mutable value; operations mutate it in
// place and never touch shared state.
namespace uasn::env {

using Vec3 = Eigen::Vector3d;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

enum class Role : std::uint8_t { DataRouting, CentralAggregation, Source, Sink };

std::string_view to_string(Role role);
Role role_from_string(std::string_view text);

struct WorldConfig {
  double cube_edge_m = 10000.0;
  int node_count = 64;
  // 0 picks the scenario default: 64 -> 1, 125 -> 2, 216 -> 4.
  int ca_count = 0;
  double min_dr_spacing_m = 1000.0;
  double min_ca_spacing_m = 10000.0;
  // Per-axis standard deviation of one mobility step (one tick).
  double mobility_sigma_m = 5.0;
  double sound_speed_mps = 1500.0;
  // 0 picks 1.6 x grid spacing.
  double comm_range_m = 0.0;
  double initial_energy = 10000.0;
  double tx_cost = 1.0;
  double rx_cost = 0.5;
  std::uint64_t seed = 1;

  // Permits any perfect-cube node count (tests and small fixtures).
  bool allow_any_grid = false;
  int source_count = 6;
  double source_sink_min_distance_m = 10000.0;
  double source_level_db = 170.0;
  double bandwidth_min_hz = 2000.0;
  double bandwidth_max_hz = 10000.0;
  // Weight of the newest outcome in the per-link success moving average.
  double success_smoothing = 0.3;
  double tick_duration_s = 1.0;

  // Shared noise parameters; vehicle_density and turbulence_speed are
  // overridden per node by the spatial noise field below.
  acoustics::NoiseSourceParams noise;
  double vehicle_density_min = 0.001;
  double vehicle_density_max = 0.1;
  int noise_hotspots = 3;
  double hotspot_radius_m = 2500.0;
  double turbulence_speed_min = 0.5;
  double turbulence_speed_max = 2.0;
};

// Grid size g with g^3 == node_count, or 0 when node_count is not a cube.
int grid_size(int node_count);

// Fills in scenario defaults and validates; throws ConfigError.
WorldConfig resolve(WorldConfig config);

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(
    WorldConfig, cube_edge_m, node_count, ca_count, min_dr_spacing_m, min_ca_spacing_m,
    mobility_sigma_m, sound_speed_mps, comm_range_m, initial_energy, tx_cost, rx_cost, seed,
    allow_any_grid, source_count, source_sink_min_distance_m, source_level_db, bandwidth_min_hz,
    bandwidth_max_hz, success_smoothing, tick_duration_s, noise, vehicle_density_min,
    vehicle_density_max, noise_hotspots, hotspot_radius_m, turbulence_speed_min,
    turbulence_speed_max)

struct LinkMetrics {
  double distance_m = 0.0;
  double signal_strength_db = 0.0;
  double bandwidth_hz = 0.0;
  double propagation_delay_s = 0.0;
  double success_history = 1.0;
};

struct NodeState {
  int id = 0;
  Role role = Role::DataRouting;
  Vec3 position = Vec3::Zero();
  // Ids of nodes currently within communication range (alive or not).
  std::vector<int> adjacency_view;
  // Active noise source levels at this node, in source_levels() order.
  std::vector<double> noise_sources_db;
  double spl_total_db = 0.0;
  double vehicle_density = 0.01;
  double turbulence_speed = 1.0;
  double energy = 0.0;
  bool failed = false;
  bool alive = true;
  // Index into World::cas() of the owning central aggregation node.
  int subnet = 0;
};

enum class EnergyEvent { Tx, Rx };

struct EnergyLedger {
  std::int64_t tx_events = 0;
  std::int64_t rx_events = 0;
  double consumed = 0.0;
};

class World {
 public:
  // Builds a world from explicit node records. Positions, roles, energy and
  // per-node noise inputs are taken as given; adjacency, noise levels,
  // subnet membership and per-link bandwidth draws are derived.
  World(WorldConfig config, std::vector<NodeState> nodes, std::vector<Vec3> hotspots);

  const WorldConfig& config() const { return config_; }
  int size() const { return static_cast<int>(nodes_.size()); }
  std::span<const NodeState> nodes() const { return nodes_; }
  const NodeState& node(int id) const;
  NodeState& node(int id);

  int sink() const { return sink_; }
  std::span<const int> sources() const { return sources_; }
  std::span<const int> cas() const { return cas_; }
  std::span<const Vec3> hotspots() const { return hotspots_; }
  const std::vector<int>& subnet_members(int subnet) const { return members_.at(subnet); }
  int ca_of(int node_id) const { return cas_.at(node(node_id).subnet); }

  double distance(int i, int j) const;
  bool in_range(int i, int j) const { return i != j && distance(i, j) <= config_.comm_range_m; }
  // Alive, in range and distinct.
  bool link_up(int i, int j) const;
  double bandwidth(int i, int j) const;
  double success_history(int i, int j) const;
  void record_outcome(int i, int j, bool delivered);
  double signal_strength(int i, int j) const;

  double grid_spacing() const;
  // Cube diagonal; the largest possible distance between two nodes.
  double diameter() const;

  int tick() const { return tick_; }
  void set_tick(int tick) { tick_ = tick; }
  double time_s() const { return tick_ * config_.tick_duration_s; }

  const EnergyLedger& ledger() const { return ledger_; }
  EnergyLedger& ledger() { return ledger_; }

  std::vector<std::string>& warnings() { return warnings_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  // Re-derives adjacency and position-dependent noise after positions change.
  void rederive();

  // Raw per-link tables, exposed for scenario export.
  const Eigen::MatrixXd& bandwidth_table() const { return bandwidth_; }
  const Eigen::MatrixXd& success_table() const { return success_; }
  void set_bandwidth_table(Eigen::MatrixXd table);
  void set_success_table(Eigen::MatrixXd table);

 private:
  void update_noise(NodeState& n) const;
  void check_id(int id) const;

  WorldConfig config_;
  std::vector<NodeState> nodes_;
  std::vector<Vec3> hotspots_;
  std::vector<int> sources_;
  std::vector<int> cas_;
  std::vector<std::vector<int>> members_;
  int sink_ = -1;
  Eigen::MatrixXd bandwidth_;
  Eigen::MatrixXd success_;
  int tick_ = 0;
  EnergyLedger ledger_;
  std::vector<std::string> warnings_;
};

// Jittered grid placement with source, sink and CA roles; deterministic in
// config.seed. Throws ConfigError for infeasible settings.
World init_scenario(const WorldConfig& config);

// One isotropic Gaussian step for every alive node, reflected at the walls.
void step_mobility(World& world, Rng& rng);

// Throws std::domain_error for i == j and std::out_of_range for unknown ids.
LinkMetrics link_metrics(const World& world, int i, int j);

// Throws StateError when the node is already dead.
void consume_energy(World& world, int node, EnergyEvent event);

// Each alive data-routing node independently with probability `rate`;
// sources, the sink and CA nodes are never selected.
std::vector<int> select_failures(const World& world, double rate, Rng& rng);
void inject_failure(World& world, std::span<const int> node_ids);
std::vector<int> inject_failure(World& world, double rate, Rng& rng);

// Breadth-first hop counts to `target` over live links; -1 when unreachable.
std::vector<int> hop_distances(const World& world, int target);

// Structured-text scenario document (JSON). Field names and units are
// listed in the README.
nlohmann::json export_scenario(const World& world);
World import_scenario(const nlohmann::json& doc);

}  // namespace uasn::env
