#include "uasn/ocean_env.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <limits>
#include <sstream>

namespace uasn::env {
namespace {

constexpr std::uint64_t kBandwidthStream = 0xB4D1;
constexpr std::uint64_t kPlacementStream = 0x9121;

int default_ca_count(int node_count) {
  switch (node_count) {
    case 64:
      return 1;
    case 125:
      return 2;
    case 216:
      return 4;
    default:
      return 1;
  }
}

double reflect(double x, double edge) {
  // Repeated folding handles steps larger than the cube edge.
  for (int guard = 0; guard < 8 && (x < 0.0 || x > edge); ++guard) {
    if (x < 0.0) x = -x;
    if (x > edge) x = 2.0 * edge - x;
  }
  return std::clamp(x, 0.0, edge);
}

std::vector<Vec3> ca_centroids(int count, double edge) {
  std::vector<Vec3> out;
  const double mid = edge / 2.0;
  if (count == 4) {
    for (double y : {edge / 4.0, 3.0 * edge / 4.0}) {
      for (double x : {edge / 4.0, 3.0 * edge / 4.0}) out.emplace_back(x, y, mid);
    }
    return out;
  }
  for (int k = 0; k < count; ++k) {
    out.emplace_back(edge * (2.0 * k + 1.0) / (2.0 * count), mid, mid);
  }
  return out;
}

}  // namespace

std::string_view to_string(Role role) {
  switch (role) {
    case Role::DataRouting:
      return "dr";
    case Role::CentralAggregation:
      return "ca";
    case Role::Source:
      return "source";
    case Role::Sink:
      return "sink";
  }
  return "dr";
}

Role role_from_string(std::string_view text) {
  if (text == "dr") return Role::DataRouting;
  if (text == "ca") return Role::CentralAggregation;
  if (text == "source") return Role::Source;
  if (text == "sink") return Role::Sink;
  throw ConfigError("unknown node role: " + std::string(text));
}

int grid_size(int node_count) {
  if (node_count <= 0) return 0;
  const int g = static_cast<int>(std::lround(std::cbrt(static_cast<double>(node_count))));
  return g * g * g == node_count ? g : 0;
}

WorldConfig resolve(WorldConfig c) {
  const bool standard = c.node_count == 64 || c.node_count == 125 || c.node_count == 216;
  const int g = grid_size(c.node_count);
  if (!standard && !(c.allow_any_grid && g >= 2)) {
    throw ConfigError("node_count must be one of 64, 125, 216 (got " +
                      std::to_string(c.node_count) + ")");
  }
  if (!(c.cube_edge_m > 0.0)) throw ConfigError("cube_edge_m must be positive");
  const double spacing = c.cube_edge_m / (g - 1);
  if (!(c.min_dr_spacing_m > 0.0) || c.min_dr_spacing_m > spacing) {
    throw ConfigError("min_dr_spacing_m must lie in (0, cube_edge_m/(g-1)]");
  }
  if (c.ca_count == 0) c.ca_count = default_ca_count(c.node_count);
  if (c.ca_count < 1 || c.ca_count > c.node_count / 4) throw ConfigError("ca_count out of range");
  if (c.comm_range_m == 0.0) c.comm_range_m = 1.6 * spacing;
  if (!(c.comm_range_m > 0.0)) throw ConfigError("comm_range_m must be positive");
  if (!(c.sound_speed_mps > 0.0)) throw ConfigError("sound_speed_mps must be positive");
  if (!(c.mobility_sigma_m >= 0.0)) throw ConfigError("mobility_sigma_m must be non-negative");
  if (!(c.initial_energy > 0.0) || !(c.tx_cost > 0.0) || !(c.rx_cost > 0.0)) {
    throw ConfigError("energy parameters must be positive");
  }
  if (!(c.min_ca_spacing_m > 0.0)) throw ConfigError("min_ca_spacing_m must be positive");
  if (c.source_count < 1) throw ConfigError("source_count must be at least 1");
  if (!(c.bandwidth_min_hz > 0.0) || c.bandwidth_max_hz < c.bandwidth_min_hz) {
    throw ConfigError("bandwidth range is invalid");
  }
  if (!(c.success_smoothing > 0.0 && c.success_smoothing <= 1.0)) {
    throw ConfigError("success_smoothing must lie in (0, 1]");
  }
  if (!(c.tick_duration_s > 0.0)) throw ConfigError("tick_duration_s must be positive");
  if (!(c.vehicle_density_min > 0.0) || c.vehicle_density_max < c.vehicle_density_min) {
    throw ConfigError("vehicle density range is invalid");
  }
  if (!(c.turbulence_speed_min > 0.0) || c.turbulence_speed_max < c.turbulence_speed_min) {
    throw ConfigError("turbulence speed range is invalid");
  }
  try {
    acoustics::validate(c.noise);
  } catch (const std::domain_error& e) {
    throw ConfigError(std::string("noise: ") + e.what());
  }
  return c;
}

World::World(WorldConfig config, std::vector<NodeState> nodes, std::vector<Vec3> hotspots)
    : config_(std::move(config)), nodes_(std::move(nodes)), hotspots_(std::move(hotspots)) {
  const int n = size();
  for (int i = 0; i < n; ++i) {
    if (nodes_[i].id != i) throw ConfigError("node ids must be 0..N-1 in order");
    switch (nodes_[i].role) {
      case Role::Sink:
        if (sink_ >= 0) throw ConfigError("exactly one sink is required");
        sink_ = i;
        break;
      case Role::Source:
        sources_.push_back(i);
        break;
      case Role::CentralAggregation:
        cas_.push_back(i);
        break;
      case Role::DataRouting:
        break;
    }
  }
  if (sink_ < 0) throw ConfigError("exactly one sink is required");
  if (sources_.empty()) throw ConfigError("at least one source is required");
  if (cas_.empty()) throw ConfigError("at least one CA node is required");

  // Voronoi subnets around the CA nodes.
  members_.assign(cas_.size(), {});
  for (auto& node : nodes_) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < cas_.size(); ++k) {
      const double d = (node.position - nodes_[cas_[k]].position).norm();
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(k);
      }
    }
    node.subnet = best;
    members_[best].push_back(node.id);
  }

  Rng rng(derive_seed(config_.seed, kBandwidthStream));
  bandwidth_ = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double b = rng.uniform(config_.bandwidth_min_hz, config_.bandwidth_max_hz);
      bandwidth_(i, j) = b;
      bandwidth_(j, i) = b;
    }
  }
  success_ = Eigen::MatrixXd::Ones(n, n);
  rederive();
}

void World::check_id(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("unknown node id " + std::to_string(id));
}

const NodeState& World::node(int id) const {
  check_id(id);
  return nodes_[id];
}

NodeState& World::node(int id) {
  check_id(id);
  return nodes_[id];
}

double World::distance(int i, int j) const {
  check_id(i);
  check_id(j);
  return (nodes_[i].position - nodes_[j].position).norm();
}

bool World::link_up(int i, int j) const {
  return in_range(i, j) && nodes_[i].alive && nodes_[j].alive;
}

double World::bandwidth(int i, int j) const {
  check_id(i);
  check_id(j);
  return bandwidth_(i, j);
}

double World::success_history(int i, int j) const {
  check_id(i);
  check_id(j);
  return success_(i, j);
}

void World::record_outcome(int i, int j, bool delivered) {
  check_id(i);
  check_id(j);
  const double w = config_.success_smoothing;
  const double updated = (1.0 - w) * success_(i, j) + w * (delivered ? 1.0 : 0.0);
  success_(i, j) = updated;
  success_(j, i) = updated;
}

double World::signal_strength(int i, int j) const {
  const double d = std::max(distance(i, j), 1.0);
  return config_.source_level_db - 20.0 * std::log10(d) - nodes_[j].spl_total_db;
}

double World::grid_spacing() const {
  const int g = grid_size(size());
  return g >= 2 ? config_.cube_edge_m / (g - 1) : config_.cube_edge_m;
}

double World::diameter() const { return std::sqrt(3.0) * config_.cube_edge_m; }

void World::set_bandwidth_table(Eigen::MatrixXd table) {
  if (table.rows() != size() || table.cols() != size()) throw ConfigError("bandwidth table shape");
  bandwidth_ = std::move(table);
}

void World::set_success_table(Eigen::MatrixXd table) {
  if (table.rows() != size() || table.cols() != size()) throw ConfigError("success table shape");
  success_ = std::move(table);
}

void World::update_noise(NodeState& n) const {
  // Vehicle density interpolates log-linearly between the configured bounds
  // according to proximity to the nearest traffic hotspot.
  double weight = 0.0;
  const double r2 = 2.0 * config_.hotspot_radius_m * config_.hotspot_radius_m;
  for (const auto& h : hotspots_) weight = std::max(weight, std::exp(-(n.position - h).squaredNorm() / r2));
  n.vehicle_density = config_.vehicle_density_min *
                      std::pow(config_.vehicle_density_max / config_.vehicle_density_min, weight);
  acoustics::NoiseSourceParams params = config_.noise;
  params.vehicle_density = n.vehicle_density;
  params.turbulence_speed = n.turbulence_speed;
  n.noise_sources_db = acoustics::source_levels(params);
  n.spl_total_db = acoustics::total_spl(n.noise_sources_db);
}

void World::rederive() {
  const int n = size();
  for (auto& node : nodes_) {
    node.adjacency_view.clear();
    update_noise(node);
  }
  const double range = config_.comm_range_m;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if ((nodes_[i].position - nodes_[j].position).norm() <= range) {
        nodes_[i].adjacency_view.push_back(j);
        nodes_[j].adjacency_view.push_back(i);
      }
    }
  }
  for (auto& node : nodes_) std::sort(node.adjacency_view.begin(), node.adjacency_view.end());
}

World init_scenario(const WorldConfig& raw) {
  const WorldConfig config = resolve(raw);
  const int g = grid_size(config.node_count);
  const double edge = config.cube_edge_m;
  const double spacing = edge / (g - 1);
  // Quarter-spacing jitter, shrunk if it could violate the minimum spacing.
  const double jitter = std::min(spacing / 4.0, (spacing - config.min_dr_spacing_m) / 2.0);

  Rng rng(derive_seed(config.seed, kPlacementStream));
  std::vector<NodeState> nodes(config.node_count);
  int id = 0;
  for (int iz = 0; iz < g; ++iz) {
    for (int iy = 0; iy < g; ++iy) {
      for (int ix = 0; ix < g; ++ix) {
        NodeState& n = nodes[id];
        n.id = id;
        const Vec3 grid(ix * spacing, iy * spacing, iz * spacing);
        for (int a = 0; a < 3; ++a) n.position[a] = std::clamp(grid[a] + rng.uniform(-jitter, jitter), 0.0, edge);
        n.energy = config.initial_energy;
        n.turbulence_speed = rng.uniform(config.turbulence_speed_min, config.turbulence_speed_max);
        ++id;
      }
    }
  }

  std::vector<Vec3> hotspots;
  for (int k = 0; k < config.noise_hotspots; ++k) {
    hotspots.emplace_back(rng.uniform(0.0, edge), rng.uniform(0.0, edge), rng.uniform(0.0, edge));
  }

  // Sink: the node nearest the origin corner.
  int sink = 0;
  for (const auto& n : nodes) {
    if (n.position.norm() < nodes[sink].position.norm()) sink = n.id;
  }
  nodes[sink].role = Role::Sink;

  std::vector<int> eligible;
  for (const auto& n : nodes) {
    if (n.id != sink && (n.position - nodes[sink].position).norm() >= config.source_sink_min_distance_m) {
      eligible.push_back(n.id);
    }
  }
  if (static_cast<int>(eligible.size()) < config.source_count) {
    throw ConfigError("not enough nodes at the required source-sink distance");
  }
  std::vector<int> sources;
  for (int k = 0; k < config.source_count; ++k) {
    const auto pick = static_cast<std::ptrdiff_t>(rng.index(eligible.size()));
    sources.push_back(eligible[pick]);
    eligible.erase(eligible.begin() + pick);
  }
  for (int s : sources) nodes[s].role = Role::Source;

  std::vector<int> cas;
  for (const auto& centroid : ca_centroids(config.ca_count, edge)) {
    int best = -1;
    for (const auto& n : nodes) {
      if (n.role != Role::DataRouting) continue;
      if (best < 0 || (n.position - centroid).norm() < (nodes[best].position - centroid).norm()) best = n.id;
    }
    if (best < 0) throw ConfigError("no node available for a CA role");
    nodes[best].role = Role::CentralAggregation;
    cas.push_back(best);
  }

  World world(config, std::move(nodes), std::move(hotspots));
  double min_ca = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < cas.size(); ++a) {
    for (std::size_t b = a + 1; b < cas.size(); ++b) min_ca = std::min(min_ca, world.distance(cas[a], cas[b]));
  }
  if (cas.size() > 1 && min_ca < config.min_ca_spacing_m) {
    std::ostringstream msg;
    msg << "CA spacing clamped: requested " << config.min_ca_spacing_m << " m, achievable " << min_ca
        << " m with " << cas.size() << " CA nodes";
    world.warnings().push_back(msg.str());
  }
  return world;
}

void step_mobility(World& world, Rng& rng) {
  const double sigma = world.config().mobility_sigma_m;
  if (sigma == 0.0) return;
  const double edge = world.config().cube_edge_m;
  for (int i = 0; i < world.size(); ++i) {
    NodeState& n = world.node(i);
    if (!n.alive) continue;
    for (int a = 0; a < 3; ++a) n.position[a] = reflect(n.position[a] + sigma * rng.normal(), edge);
  }
  world.rederive();
}

LinkMetrics link_metrics(const World& world, int i, int j) {
  if (i == j) throw std::domain_error("link_metrics needs two distinct nodes");
  LinkMetrics m;
  m.distance_m = world.distance(i, j);
  m.propagation_delay_s = m.distance_m / world.config().sound_speed_mps;
  m.signal_strength_db = world.signal_strength(i, j);
  m.bandwidth_hz = world.bandwidth(i, j);
  m.success_history = world.success_history(i, j);
  return m;
}

void consume_energy(World& world, int node_id, EnergyEvent event) {
  NodeState& n = world.node(node_id);
  if (!n.alive) throw StateError("energy event on dead node " + std::to_string(node_id));
  const double cost = event == EnergyEvent::Tx ? world.config().tx_cost : world.config().rx_cost;
  n.energy = std::max(0.0, n.energy - cost);
  auto& ledger = world.ledger();
  (event == EnergyEvent::Tx ? ledger.tx_events : ledger.rx_events) += 1;
  ledger.consumed += cost;
  if (n.energy <= 0.0) n.alive = false;
}

std::vector<int> select_failures(const World& world, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw std::domain_error("failure rate must lie in [0, 1]");
  std::vector<int> out;
  if (rate == 0.0) return out;
  for (const auto& n : world.nodes()) {
    if (n.role != Role::DataRouting || !n.alive) continue;
    if (rng.bernoulli(rate)) out.push_back(n.id);
  }
  return out;
}

void inject_failure(World& world, std::span<const int> node_ids) {
  for (int id : node_ids) {
    NodeState& n = world.node(id);
    n.failed = true;
    n.alive = false;
  }
}

std::vector<int> inject_failure(World& world, double rate, Rng& rng) {
  auto ids = select_failures(world, rate, rng);
  inject_failure(world, ids);
  return ids;
}

std::vector<int> hop_distances(const World& world, int target) {
  std::vector<int> hops(world.size(), -1);
  if (!world.node(target).alive) return hops;
  std::deque<int> frontier{target};
  hops[target] = 0;
  while (!frontier.empty()) {
    const int u = frontier.front();
    frontier.pop_front();
    for (int v : world.node(u).adjacency_view) {
      if (hops[v] >= 0 || !world.node(v).alive) continue;
      hops[v] = hops[u] + 1;
      frontier.push_back(v);
    }
  }
  return hops;
}

nlohmann::json export_scenario(const World& world) {
  using nlohmann::json;
  json doc;
  doc["format"] = "uasn-scenario";
  doc["version"] = 1;
  doc["config"] = world.config();
  doc["tick"] = world.tick();
  json nodes = json::array();
  for (const auto& n : world.nodes()) {
    nodes.push_back({{"id", n.id},
                     {"role", std::string(to_string(n.role))},
                     {"position_m", {n.position.x(), n.position.y(), n.position.z()}},
                     {"energy", n.energy},
                     {"alive", n.alive},
                     {"failed", n.failed},
                     {"subnet", n.subnet},
                     {"spl_total_db", n.spl_total_db},
                     {"vehicle_density", n.vehicle_density},
                     {"turbulence_speed", n.turbulence_speed}});
  }
  doc["nodes"] = std::move(nodes);
  json hotspots = json::array();
  for (const auto& h : world.hotspots()) hotspots.push_back({h.x(), h.y(), h.z()});
  doc["hotspots_m"] = std::move(hotspots);

  json links = json::array();
  for (int i = 0; i < world.size(); ++i) {
    for (int j : world.node(i).adjacency_view) {
      if (j < i) continue;
      const auto m = link_metrics(world, i, j);
      links.push_back({{"i", i},
                       {"j", j},
                       {"distance_m", m.distance_m},
                       {"propagation_delay_s", m.propagation_delay_s},
                       {"signal_strength_db", m.signal_strength_db},
                       {"bandwidth_hz", m.bandwidth_hz},
                       {"success_history", m.success_history}});
    }
  }
  doc["links"] = std::move(links);

  // Full upper triangles so that import reproduces the world exactly.
  json bandwidth = json::array();
  json success = json::array();
  for (int i = 0; i < world.size(); ++i) {
    for (int j = i + 1; j < world.size(); ++j) {
      bandwidth.push_back(world.bandwidth_table()(i, j));
      success.push_back(world.success_table()(i, j));
    }
  }
  doc["bandwidth_upper_hz"] = std::move(bandwidth);
  doc["success_upper"] = std::move(success);
  doc["energy_ledger"] = {{"tx_events", world.ledger().tx_events},
                          {"rx_events", world.ledger().rx_events},
                          {"consumed", world.ledger().consumed}};
  doc["warnings"] = world.warnings();
  return doc;
}

World import_scenario(const nlohmann::json& doc) {
  if (doc.value("format", "") != "uasn-scenario") throw ConfigError("not a scenario document");
  WorldConfig config = doc.at("config").get<WorldConfig>();
  std::vector<NodeState> nodes;
  for (const auto& item : doc.at("nodes")) {
    NodeState n;
    n.id = item.at("id").get<int>();
    n.role = role_from_string(item.at("role").get<std::string>());
    const auto& p = item.at("position_m");
    n.position = Vec3(p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>());
    n.energy = item.at("energy").get<double>();
    n.alive = item.at("alive").get<bool>();
    n.failed = item.value("failed", false);
    n.turbulence_speed = item.at("turbulence_speed").get<double>();
    nodes.push_back(std::move(n));
  }
  std::vector<Vec3> hotspots;
  for (const auto& h : doc.at("hotspots_m")) {
    hotspots.emplace_back(h.at(0).get<double>(), h.at(1).get<double>(), h.at(2).get<double>());
  }
  World world(config, std::move(nodes), std::move(hotspots));
  const int n = world.size();
  Eigen::MatrixXd bandwidth = Eigen::MatrixXd::Zero(n, n);
  Eigen::MatrixXd success = Eigen::MatrixXd::Ones(n, n);
  const auto& bw = doc.at("bandwidth_upper_hz");
  const auto& sh = doc.at("success_upper");
  std::size_t k = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j, ++k) {
      bandwidth(i, j) = bandwidth(j, i) = bw.at(k).get<double>();
      success(i, j) = success(j, i) = sh.at(k).get<double>();
    }
  }
  world.set_bandwidth_table(std::move(bandwidth));
  world.set_success_table(std::move(success));
  world.set_tick(doc.value("tick", 0));
  if (doc.contains("energy_ledger")) {
    const auto& l = doc["energy_ledger"];
    world.ledger().tx_events = l.at("tx_events").get<std::int64_t>();
    world.ledger().rx_events = l.at("rx_events").get<std::int64_t>();
    world.ledger().consumed = l.at("consumed").get<double>();
  }
  if (doc.contains("warnings")) world.warnings() = doc["warnings"].get<std::vector<std::string>>();
  return world;
}

}  // namespace uasn::env
