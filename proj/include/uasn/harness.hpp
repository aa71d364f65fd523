#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "uasn/mappo.hpp"
#include "uasn/ocean_env.hpp"
#include "uasn/routing.hpp"
#include "uasn/training.hpp"

namespace uasn::harness {

class HarnessError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  env::WorldConfig world;
  marl::TrainConfig train;
  marl::RewardWeights rewards;
  routing::RoutingConfig routing;
  std::vector<std::string> algorithms{"mappo", "ma_mappo", "ma_mappo_i"};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  int n_d = 500;
  double failure_rate = 0.1;
  // Failure rate during training episodes; negative reuses failure_rate.
  double train_failure_rate = -1.0;
  std::string output_dir = "out";
  // Concurrent runs; 0 uses the hardware concurrency.
  int workers = 0;
  std::vector<double> histogram_edges;  // empty: defaults scaled to node_count
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

// Throws HarnessError on an invalid config.
void validate(const ExperimentConfig& config);

// Applies the full-scale training length.
ExperimentConfig full_scale(ExperimentConfig config);

ExperimentConfig load_config(const std::filesystem::path& path);

constexpr double kInf = std::numeric_limits<double>::infinity();

// [0, 9, 12, 15, 18, inf) seconds at 64 nodes, scaled by the grid edge.
std::vector<double> default_histogram_edges(int node_count);

struct Histogram {
  std::vector<double> edges;
  std::vector<int> counts;
  std::vector<double> proportions;
  bool empty = true;  // no delivered packets; proportions are zero
};

// Throws HarnessError unless edges are strictly increasing with >= 2 entries.
Histogram bucket_delays(const std::vector<double>& delays_s, const std::vector<double>& edges);
std::string histogram_csv(const Histogram& h);
// Writes the histogram of `metrics.delays_s` to `path`.
Histogram export_histogram(const routing::TaskMetrics& metrics, const std::vector<double>& edges,
                           const std::filesystem::path& path);

struct RunResult {
  std::string algorithm;
  std::uint64_t seed = 0;
  routing::TaskMetrics task;
  std::vector<marl::IterationMetrics> iterations;
  Histogram histogram;
};

struct Interval {
  double mean = 0.0;
  double half_width = 0.0;  // 95% Student-t over seeds; 0 for a single seed
};

// Mean and 95% half-width; summation in input order.
Interval t_interval(const std::vector<double>& values);

struct Summary {
  std::string algorithm;
  std::string scenario;
  int runs = 0;
  Interval mean_delay_s;
  Interval total_ticks;
  Interval delivery_ratio;
  Interval final_reward;  // mean reward over the last tenth of training
};

Summary summarize(const std::vector<RunResult>& runs, const std::string& algorithm, const std::string& scenario);

// Scenario tag used to refuse comparisons across different worlds.
std::string scenario_key(const ExperimentConfig& config);

struct ExperimentResult {
  std::vector<RunResult> runs;  // algorithm-major, seeds in config order
  std::vector<Summary> summaries;
};

// Trains and routes every (algorithm, seed) pair, then writes under
// output_dir: runs.csv, summary.csv, metadata.json, and per run
// run_<alg>_<seed>.csv, train_<alg>_<seed>.csv, hist_<alg>_<seed>.csv and
// paths_<alg>_<seed>.jsonl.
ExperimentResult run_experiment(const ExperimentConfig& config);

// Single training + routing run without file output.
RunResult run_one(const ExperimentConfig& config, const std::string& algorithm, std::uint64_t seed,
                  std::vector<routing::Packet>* packets = nullptr);

struct PairOrder {
  std::string lower;
  std::string higher;
  std::string metric;
  bool tie = false;
};

struct Comparison {
  std::vector<PairOrder> delay_order;
  std::vector<PairOrder> ticks_order;
  // ma_mappo_i <= ma_mappo <= mappo on mean delay.
  bool ordering_holds = false;
  bool has_tie = false;
  std::string report;
};

// Needs >= 2 summaries sharing one scenario; throws HarnessError otherwise.
Comparison compare_algorithms(const std::vector<Summary>& summaries);

std::vector<Summary> read_summary_csv(const std::filesystem::path& path);
std::string summary_csv(const std::vector<Summary>& summaries);

}  // namespace uasn::harness
