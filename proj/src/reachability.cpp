#include "uasn/reachability.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace uasn::mask {

double normalize(double x, double lo, double hi) {
  if (!(hi > lo)) return 1.0;
  return std::clamp((x - lo) / (hi - lo), 0.0, 1.0);
}

Normalizers observe_normalizers(const env::World& world) {
  Normalizers n;
  n.d_max = world.config().comm_range_m;
  const double inf = std::numeric_limits<double>::infinity();
  n.s_min = n.b_min = n.e_min = inf;
  n.s_max = n.b_max = n.e_max = -inf;
  for (const auto& node : world.nodes()) {
    if (!node.alive) continue;
    n.e_min = std::min(n.e_min, node.energy);
    n.e_max = std::max(n.e_max, node.energy);
    for (int j : node.adjacency_view) {
      if (!world.node(j).alive) continue;
      const double s = world.signal_strength(node.id, j);
      n.s_min = std::min(n.s_min, s);
      n.s_max = std::max(n.s_max, s);
      const double b = world.bandwidth(node.id, j);
      n.b_min = std::min(n.b_min, b);
      n.b_max = std::max(n.b_max, b);
    }
  }
  // Nothing observed: collapse to a degenerate range.
  if (n.s_min == inf) n.s_min = n.s_max = 0.0;
  if (n.b_min == inf) n.b_min = n.b_max = 0.0;
  if (n.e_min == inf) n.e_min = n.e_max = 0.0;
  return n;
}

IndicatorVector compute_indicators(const env::World& world, int i, int j, const Normalizers& norm) {
  if (i == j) throw std::domain_error("indicators need two distinct nodes");
  IndicatorVector v;
  const double d = world.distance(i, j);
  v.i_geo = norm.d_max > 0.0 ? std::clamp(1.0 - d / norm.d_max, 0.0, 1.0) : 0.0;
  v.i_signal = normalize(world.signal_strength(i, j), norm.s_min, norm.s_max);
  v.i_bandwidth = normalize(world.bandwidth(i, j), norm.b_min, norm.b_max);
  v.i_energy = normalize(std::min(world.node(i).energy, world.node(j).energy), norm.e_min, norm.e_max);
  v.i_success = std::clamp(world.success_history(i, j), 0.0, 1.0);
  return v;
}

IndicatorVector compute_indicators(const env::World& world, int i, int j) {
  return compute_indicators(world, i, j, observe_normalizers(world));
}

nn::Matrix candidate_features(const env::World& world, int node, int destination,
                              std::span<const int> candidates, int hops, int hop_limit,
                              const Normalizers& norm) {
  nn::Matrix x(static_cast<Eigen::Index>(candidates.size()), kFeatureCount);
  const env::Vec3& here = world.node(node).position;
  const env::Vec3& goal = world.node(destination).position;
  const double d_here = (goal - here).norm();
  const double range = world.config().comm_range_m;
  for (std::size_t r = 0; r < candidates.size(); ++r) {
    const int j = candidates[r];
    const auto ind = compute_indicators(world, node, j, norm).values();
    for (int c = 0; c < kIndicatorCount; ++c) x(r, c) = ind[c];
    const env::Vec3& there = world.node(j).position;
    const double d_there = (goal - there).norm();
    const env::Vec3 step = there - here;
    const env::Vec3 want = goal - here;
    const double denom = step.norm() * want.norm();
    x(r, 5) = (d_here - d_there) / range;
    x(r, 6) = d_there / world.diameter();
    x(r, 7) = denom > 0.0 ? step.dot(want) / denom : 0.0;
    x(r, 8) = std::max(world.node(j).spl_total_db, 0.0) / 100.0;
    x(r, 9) = hop_limit > 0 ? static_cast<double>(hops) / hop_limit : 0.0;
    x(r, 10) = j == destination ? 1.0 : 0.0;
  }
  return x;
}

nn::Matrix indicator_features(const env::World& world, int node, std::span<const int> candidates,
                              const Normalizers& norm) {
  nn::Matrix x = nn::Matrix::Zero(static_cast<Eigen::Index>(candidates.size()), kFeatureCount);
  for (std::size_t r = 0; r < candidates.size(); ++r) {
    const auto ind = compute_indicators(world, node, candidates[r], norm).values();
    for (int c = 0; c < kIndicatorCount; ++c) x(r, c) = ind[c];
  }
  return x;
}

ScoringNetwork ScoringNetwork::create(Rng& rng) {
  ScoringNetwork net;
  net.attention = nn::make_attention(kFeatureCount, kHeads, kKeyDim, rng);
  net.skip = nn::make_dense(kFeatureCount, kHeads * kKeyDim, rng);
  net.head = nn::make_dense(kHeads * kKeyDim, 1, rng);
  net.pair_skip = nn::make_dense(kFeatureCount, kHeads * kKeyDim, rng);
  net.pair_head = nn::make_dense(kHeads * kKeyDim, 1, rng);
  return net;
}

ScoringNetwork ScoringNetwork::zeros_like() const {
  return {nn::zeros_like(attention), nn::zeros_like(skip), nn::zeros_like(head), nn::zeros_like(pair_skip),
          nn::zeros_like(pair_head)};
}

std::vector<nn::ParamView> ScoringNetwork::views() {
  return {nn::view("actor.w_q", attention.w_q),   nn::view("actor.w_k", attention.w_k),
          nn::view("actor.w_v", attention.w_v),   nn::view("actor.skip.w", skip.weights),
          nn::view("actor.skip.b", skip.biases),  nn::view("actor.head.w", head.weights),
          nn::view("actor.head.b", head.biases)};
}

std::vector<nn::ParamView> ScoringNetwork::all_views() {
  auto v = views();
  v.push_back(nn::view("actor.pair_skip.w", pair_skip.weights));
  v.push_back(nn::view("actor.pair_skip.b", pair_skip.biases));
  v.push_back(nn::view("actor.pair_head.w", pair_head.weights));
  v.push_back(nn::view("actor.pair_head.b", pair_head.biases));
  return v;
}

nn::Vector score_logits(const ScoringNetwork& net, const nn::Matrix& tokens, ScoreCache* cache) {
  if (tokens.rows() == 0) throw std::invalid_argument("no candidate actions");
  ScoreCache local;
  ScoreCache& c = cache ? *cache : local;
  const nn::Matrix att = nn::multihead_attention(net.attention, tokens, tokens, tokens, &c.attention);
  c.hidden = nn::tanh_forward(att + nn::dense_forward(net.skip, tokens));
  return nn::dense_forward(net.head, c.hidden).col(0);
}

void score_backward(const ScoringNetwork& net, const nn::Matrix& tokens, const ScoreCache& cache,
                    const nn::Vector& d_logits, ScoringNetwork& grads) {
  const nn::Matrix upstream = d_logits;
  const auto head = nn::dense_backward(net.head, cache.hidden, upstream);
  grads.head.weights += head.grads.weights;
  grads.head.biases += head.grads.biases;
  const nn::Matrix dz = nn::tanh_backward(cache.hidden, head.grad_x);
  const auto skip = nn::dense_backward(net.skip, tokens, dz);
  grads.skip.weights += skip.grads.weights;
  grads.skip.biases += skip.grads.biases;
  const auto att = nn::multihead_attention_backward(net.attention, tokens, tokens, tokens, cache.attention, dz);
  grads.attention.w_q += att.grads.w_q;
  grads.attention.w_k += att.grads.w_k;
  grads.attention.w_v += att.grads.w_v;
}

nn::Vector attention_scores(const ScoringNetwork& net, const nn::Matrix& tokens) {
  return nn::softmax(score_logits(net, tokens));
}

nn::Vector pair_logits(const ScoringNetwork& net, const nn::Matrix& tokens) {
  if (tokens.rows() == 0) throw std::invalid_argument("no candidate pairs");
  const nn::Matrix att = nn::multihead_attention(net.attention, tokens, tokens, tokens);
  return nn::dense_forward(net.pair_head, nn::tanh_forward(att + nn::dense_forward(net.pair_skip, tokens))).col(0);
}

ActionMask apply_mask(const nn::Vector& scores, double tau) {
  if (scores.size() == 0) throw std::invalid_argument("apply_mask: empty score vector");
  ActionMask m;
  m.scores = scores;
  m.threshold = tau;
  m.binary.assign(static_cast<std::size_t>(scores.size()), 0);
  bool any = false;
  for (Eigen::Index a = 0; a < scores.size(); ++a) {
    if (scores[a] >= tau) {
      m.binary[a] = 1;
      any = true;
    }
  }
  if (!any) {
    Eigen::Index best = 0;
    scores.maxCoeff(&best);
    m.binary[best] = 1;
    m.fallback = true;
  }
  return m;
}

std::vector<int> valid_actions(const ActionMask& mask) {
  std::vector<int> out;
  for (std::size_t a = 0; a < mask.binary.size(); ++a) {
    if (mask.binary[a]) out.push_back(static_cast<int>(a));
  }
  return out;
}

PairScores pair_scores(const env::World& world, int i, const ScoringNetwork& net, const Normalizers& norm) {
  PairScores out;
  for (int j : world.node(i).adjacency_view) {
    if (world.node(j).alive) out.neighbors.push_back(j);
  }
  if (!out.neighbors.empty()) {
    out.scores = nn::softmax(pair_logits(net, indicator_features(world, i, out.neighbors, norm)));
  }
  return out;
}

bool assess_reachability(const env::World& world, int i, int j, const ScoringNetwork& net, double tau) {
  if (i == j || !world.link_up(i, j)) return false;
  const auto ps = pair_scores(world, i, net, observe_normalizers(world));
  const double threshold = tau < 0.0 ? default_tau(ps.neighbors.size()) : tau;
  const auto it = std::find(ps.neighbors.begin(), ps.neighbors.end(), j);
  return it != ps.neighbors.end() && ps.scores[it - ps.neighbors.begin()] >= threshold;
}

bool NetworkView::reachable(int i, int j) const {
  const int a = row(i);
  const int b = row(j);
  if (a < 0 || b < 0) return false;
  return reachability[static_cast<std::size_t>(a) * nodes.size() + b] != 0;
}

std::vector<int> NetworkView::neighbors(int i) const {
  std::vector<int> out;
  const int a = row(i);
  if (a < 0) return out;
  for (std::size_t b = 0; b < nodes.size(); ++b) {
    if (reachability[a * nodes.size() + b]) out.push_back(nodes[b]);
  }
  return out;
}

void update_network_view(const env::World& world, int ca_node, const ScoringNetwork& net,
                         NetworkView& view, ViewKind kind, double tau) {
  if (world.node(ca_node).role != env::Role::CentralAggregation) {
    throw std::invalid_argument("update_network_view: node " + std::to_string(ca_node) + " is not a CA");
  }
  const int subnet = world.node(ca_node).subnet;
  std::vector<std::uint8_t> in_view(world.size(), 0);
  for (int m : world.subnet_members(subnet)) {
    in_view[m] = 1;
    for (int j : world.node(m).adjacency_view) in_view[j] = 1;
  }
  view.nodes.clear();
  view.index.assign(world.size(), -1);
  for (int id = 0; id < world.size(); ++id) {
    if (!in_view[id]) continue;
    view.index[id] = static_cast<int>(view.nodes.size());
    view.nodes.push_back(id);
  }
  const std::size_t n = view.nodes.size();
  std::vector<std::uint8_t> directed(n * n, 0);
  if (kind == ViewKind::Geometric) {
    for (std::size_t a = 0; a < n; ++a) {
      for (int j : world.node(view.nodes[a]).adjacency_view) {
        const int b = view.row(j);
        if (b >= 0) directed[a * n + b] = 1;
      }
    }
  } else {
    const Normalizers norm = observe_normalizers(world);
    for (std::size_t a = 0; a < n; ++a) {
      const int i = view.nodes[a];
      if (!world.node(i).alive) continue;
      const auto ps = pair_scores(world, i, net, norm);
      const double threshold = tau < 0.0 ? default_tau(ps.neighbors.size()) : tau;
      for (std::size_t k = 0; k < ps.neighbors.size(); ++k) {
        const int b = view.row(ps.neighbors[k]);
        if (b >= 0 && ps.scores[static_cast<Eigen::Index>(k)] >= threshold) directed[a * n + b] = 1;
      }
    }
  }
  view.reachability.assign(n * n, 0);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      view.reachability[a * n + b] = a != b && directed[a * n + b] && directed[b * n + a];
    }
  }
  view.ca_node = ca_node;
  view.kind = kind;
  view.updated_at = world.time_s();
  ++view.version;
}

nlohmann::json dump_view(const NetworkView& view) {
  nlohmann::json rows = nlohmann::json::array();
  const std::size_t n = view.nodes.size();
  for (std::size_t a = 0; a < n; ++a) {
    std::string row(n, '0');
    for (std::size_t b = 0; b < n; ++b) {
      if (view.reachability[a * n + b]) row[b] = '1';
    }
    rows.push_back(std::move(row));
  }
  return {{"ca", view.ca_node},
          {"version", view.version},
          {"updated_at", view.updated_at},
          {"kind", view.kind == ViewKind::Masked ? "masked" : "geometric"},
          {"nodes", view.nodes},
          {"rows", std::move(rows)}};
}

}  // namespace uasn::mask
