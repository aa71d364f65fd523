#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"
#include "uasn/nn.hpp"
#include "uasn/ocean_env.hpp"

namespace uasn::mask {

inline constexpr int kIndicatorCount = 5;
// Indicators followed by six routing-context features.
inline constexpr int kFeatureCount = 11;
inline constexpr int kHeads = 4;
inline constexpr int kKeyDim = 16;

struct IndicatorVector {
  double i_geo = 0.0;
  double i_signal = 0.0;
  double i_bandwidth = 0.0;
  double i_energy = 0.0;
  double i_success = 0.0;

  std::array<double, kIndicatorCount> values() const {
    return {i_geo, i_signal, i_bandwidth, i_energy, i_success};
  }
};

// Distance scale is the communication range; signal, bandwidth and energy
// bounds are observed over live in-range links and live nodes.
struct Normalizers {
  double d_max = 1.0;
  double s_min = 0.0, s_max = 0.0;
  double b_min = 0.0, b_max = 0.0;
  double e_min = 0.0, e_max = 0.0;
};

Normalizers observe_normalizers(const env::World& world);

// (x - lo) / (hi - lo) clamped to [0, 1]; 1.0 when hi <= lo.
double normalize(double x, double lo, double hi);

IndicatorVector compute_indicators(const env::World& world, int i, int j, const Normalizers& norm);
IndicatorVector compute_indicators(const env::World& world, int i, int j);

// One token per candidate next hop j for a packet at `node` heading to
// `destination`: the five indicators, then progress toward the destination,
// remaining distance, heading cosine, receiver noise, hop budget used and a
// destination flag.
nn::Matrix candidate_features(const env::World& world, int node, int destination,
                              std::span<const int> candidates, int hops, int hop_limit,
                              const Normalizers& norm);

// Indicator columns only; context columns are zero.
nn::Matrix indicator_features(const env::World& world, int node, std::span<const int> candidates,
                              const Normalizers& norm);

// Candidates as tokens: tanh(attention(X) + skip(X)) then a scalar head.
// Pair reachability shares the attention block but reads it through its own
// skip and head, which policy updates leave untouched.
struct ScoringNetwork {
  nn::AttentionParams attention;
  nn::DenseParams skip;
  nn::DenseParams head;
  nn::DenseParams pair_skip;
  nn::DenseParams pair_head;

  static ScoringNetwork create(Rng& rng);
  ScoringNetwork zeros_like() const;
  // Parameters trained by the policy update.
  std::vector<nn::ParamView> views();
  // Every tensor, for checkpoints.
  std::vector<nn::ParamView> all_views();
};

struct ScoreCache {
  nn::AttentionCache attention;
  nn::Matrix hidden;
};

nn::Vector score_logits(const ScoringNetwork& net, const nn::Matrix& tokens, ScoreCache* cache = nullptr);
// Adds the parameter gradient for upstream d_logits into `grads`.
void score_backward(const ScoringNetwork& net, const nn::Matrix& tokens, const ScoreCache& cache,
                    const nn::Vector& d_logits, ScoringNetwork& grads);

// Softmax over candidates; throws std::invalid_argument on an empty set.
nn::Vector attention_scores(const ScoringNetwork& net, const nn::Matrix& tokens);

// Pair-head logits for indicator tokens.
nn::Vector pair_logits(const ScoringNetwork& net, const nn::Matrix& tokens);

struct ActionMask {
  nn::Vector scores;
  std::vector<std::uint8_t> binary;
  double threshold = 0.0;
  bool fallback = false;
};

inline double default_tau(std::size_t action_count) {
  return action_count == 0 ? 0.0 : 0.5 / static_cast<double>(action_count);
}

// binary[a] = scores[a] >= tau; if nothing survives only the argmax is kept.
ActionMask apply_mask(const nn::Vector& scores, double tau);
std::vector<int> valid_actions(const ActionMask& mask);

// Scores of every live in-range neighbor of i from the indicator tokens.
struct PairScores {
  std::vector<int> neighbors;
  nn::Vector scores;
};
PairScores pair_scores(const env::World& world, int i, const ScoringNetwork& net, const Normalizers& norm);

// Learned score of j among i's live in-range neighbors clears tau, both
// nodes alive and within range. tau < 0 selects default_tau(neighbor count).
bool assess_reachability(const env::World& world, int i, int j, const ScoringNetwork& net,
                         double tau = -1.0);

enum class ViewKind {
  Masked,     // learned reachability with physical gates
  Geometric,  // range only; the plain MAPPO ablation
};

// A CA's reachability matrix over its subnet plus foreign nodes in range of it.
struct NetworkView {
  int ca_node = -1;
  std::uint64_t version = 0;
  double updated_at = 0.0;
  ViewKind kind = ViewKind::Masked;
  std::vector<int> nodes;
  std::vector<int> index;  // world id -> row, -1 if outside the view
  std::vector<std::uint8_t> reachability;

  int row(int id) const { return id >= 0 && id < static_cast<int>(index.size()) ? index[id] : -1; }
  bool contains(int id) const { return row(id) >= 0; }
  bool reachable(int i, int j) const;
  std::vector<int> neighbors(int i) const;
};

void update_network_view(const env::World& world, int ca_node, const ScoringNetwork& net,
                         NetworkView& view, ViewKind kind = ViewKind::Masked, double tau = -1.0);

// {"ca", "version", "updated_at", "kind", "nodes", "rows"}; rows are "0"/"1" strings.
nlohmann::json dump_view(const NetworkView& view);

}  // namespace uasn::mask
