// uasn: train, route, experiment, compare, export-hist.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "uasn/harness.hpp"

namespace fs = std::filesystem;
using namespace uasn;

namespace {

struct Common {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> algorithms;
  std::string out;
  bool full_scale = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "experiment config (JSON); a metadata.json also works");
  cmd->add_option("--seeds", c.seeds, "seed list")->delimiter(',');
  cmd->add_option("--algorithms", c.algorithms, "subset of mappo,ma_mappo,ma_mappo_i")->delimiter(',');
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_flag("--full-scale", c.full_scale, "5000 training iterations");
}

harness::ExperimentConfig resolve_config(const Common& c) {
  harness::ExperimentConfig cfg = c.config.empty() ? harness::ExperimentConfig{} : harness::load_config(c.config);
  if (!c.seeds.empty()) cfg.seeds = c.seeds;
  if (!c.algorithms.empty()) cfg.algorithms = c.algorithms;
  if (!c.out.empty()) cfg.output_dir = c.out;
  if (c.full_scale) cfg = harness::full_scale(cfg);
  harness::validate(cfg);
  return cfg;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw harness::HarnessError("cannot write " + p.string());
  out << text;
}

std::string csv_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

int cmd_train(const Common& c) {
  auto cfg = resolve_config(c);
  fs::create_directories(cfg.output_dir);
  const auto alg = marl::algorithm_from_string(cfg.algorithms.front());
  const auto seed = cfg.seeds.front();
  env::WorldConfig wc = cfg.world;
  wc.seed = seed;
  const auto world = env::init_scenario(wc);
  auto agents = marl::make_agents(world, cfg.train, seed);
  marl::TrainingSetup setup;
  setup.algorithm = alg;
  setup.train = cfg.train;
  setup.routing = cfg.routing;
  setup.rewards = cfg.rewards;
  setup.failure_rate = cfg.train_failure_rate < 0.0 ? cfg.failure_rate : cfg.train_failure_rate;
  setup.seed = seed;

  const std::string stem = cfg.algorithms.front() + "_" + std::to_string(seed);
  std::ofstream csv(fs::path(cfg.output_dir) / ("train_" + stem + ".csv"));
  csv << "iteration,mean_reward,actor_loss,critic_loss,masked_fraction,wall_ms\n";
  marl::train(world, agents, setup, cfg.train.episodes, [&](const marl::IterationMetrics& m) {
    csv << m.iteration << ',' << csv_num(m.mean_reward) << ',' << csv_num(m.actor_loss) << ','
        << csv_num(m.critic_loss) << ',' << csv_num(m.masked_fraction) << ',' << csv_num(m.wall_ms) << '\n';
  });
  std::ofstream ckpt(fs::path(cfg.output_dir) / ("agents_" + stem + ".ckpt"));
  marl::save_agents(ckpt, agents);
  nlohmann::json meta{{"format", "uasn-train"}, {"config", cfg}, {"resolved_world", env::resolve(wc)},
                      {"scenario", env::export_scenario(world)}};
  write_text(fs::path(cfg.output_dir) / ("metadata_" + stem + ".json"), meta.dump(2) + "\n");
  std::cout << "trained " << stem << " for " << cfg.train.episodes << " iterations\n";
  return 0;
}

int cmd_route(const Common& c, const std::string& checkpoint) {
  auto cfg = resolve_config(c);
  fs::create_directories(cfg.output_dir);
  const auto alg = marl::algorithm_from_string(cfg.algorithms.front());
  const auto seed = cfg.seeds.front();
  env::WorldConfig wc = cfg.world;
  wc.seed = seed;
  const auto world = env::init_scenario(wc);
  auto agents = marl::make_agents(world, cfg.train, seed);
  if (!checkpoint.empty()) {
    std::ifstream in(checkpoint);
    if (!in) throw harness::HarnessError("cannot read checkpoint " + checkpoint);
    marl::load_agents(in, agents);
  }
  routing::TaskSpec spec;
  spec.n_d = cfg.n_d;
  spec.failure_rate = cfg.failure_rate;
  spec.routing = cfg.routing;
  spec.rewards = cfg.rewards;
  spec.finetune = cfg.train;
  spec.seed = seed;
  std::vector<routing::Packet> packets;
  const auto m = routing::run_routing_task(world, agents, alg, spec, &packets);
  const std::string stem = cfg.algorithms.front() + "_" + std::to_string(seed);
  const auto edges =
      cfg.histogram_edges.empty() ? harness::default_histogram_edges(wc.node_count) : cfg.histogram_edges;
  harness::export_histogram(m, edges, fs::path(cfg.output_dir) / ("hist_" + stem + ".csv"));
  std::ostringstream o;
  o << "created,delivered,dropped,orphaned,delivery_ratio,mean_delay_s,total_ticks,interrupts\n"
    << m.created << ',' << m.delivered << ',' << m.dropped << ',' << m.orphaned << ',' << csv_num(m.delivery_ratio)
    << ',' << csv_num(m.mean_delay_s) << ',' << m.total_ticks << ',' << m.interrupts << '\n';
  write_text(fs::path(cfg.output_dir) / ("route_" + stem + ".csv"), o.str());
  std::cout << o.str();
  return 0;
}

int cmd_experiment(const Common& c) {
  auto cfg = resolve_config(c);
  const auto result = harness::run_experiment(cfg);
  std::cout << harness::summary_csv(result.summaries);
  if (result.summaries.size() >= 2) std::cout << harness::compare_algorithms(result.summaries).report;
  return 0;
}

int cmd_compare(const std::vector<std::string>& files) {
  std::vector<harness::Summary> all;
  for (const auto& f : files) {
    auto s = harness::read_summary_csv(f);
    all.insert(all.end(), s.begin(), s.end());
  }
  const auto cmp = harness::compare_algorithms(all);
  std::cout << cmp.report;
  return 0;
}

int cmd_export_hist(const std::string& run_csv, const std::vector<double>& edges_in, int node_count,
                    const std::string& out) {
  std::ifstream in(run_csv);
  if (!in) throw harness::HarnessError("cannot read " + run_csv);
  std::string line;
  std::getline(in, line);
  routing::TaskMetrics m;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() < 5) throw harness::HarnessError("malformed run row: " + line);
    if (cells[2] == "delivered") m.delays_s.push_back(std::stod(cells[4]));
  }
  std::vector<double> edges = edges_in.empty() ? harness::default_histogram_edges(node_count) : edges_in;
  const auto h = harness::bucket_delays(m.delays_s, edges);
  if (out.empty()) {
    std::cout << harness::histogram_csv(h);
  } else {
    write_text(out, harness::histogram_csv(h));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Underwater acoustic sensor network routing simulator"};
  app.require_subcommand(1);
  Common common;

  auto* train = app.add_subcommand("train", "train one algorithm on one seed and save a checkpoint");
  add_common(train, common);
  auto* route = app.add_subcommand("route", "run the routing task with fresh or checkpointed agents");
  add_common(route, common);
  std::string checkpoint;
  route->add_option("--checkpoint", checkpoint, "agents checkpoint from train");
  auto* experiment = app.add_subcommand("experiment", "train and route every (algorithm, seed) pair");
  add_common(experiment, common);
  auto* compare = app.add_subcommand("compare", "order algorithms by mean delay and total ticks");
  std::vector<std::string> summaries;
  compare->add_option("summaries", summaries, "summary.csv files")->required();
  auto* hist = app.add_subcommand("export-hist", "bucket the delivered delays of a run CSV");
  std::string run_csv, hist_out;
  std::vector<std::string> edge_text;
  int node_count = 64;
  hist->add_option("run", run_csv, "run_<alg>_<seed>.csv")->required();
  hist->add_option("--edges", edge_text, "bucket edges in seconds; 'inf' allowed")->delimiter(',');
  hist->add_option("--nodes", node_count, "node count for the default edges");
  hist->add_option("--out", hist_out, "output CSV (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*train) return cmd_train(common);
    if (*route) return cmd_route(common, checkpoint);
    if (*experiment) return cmd_experiment(common);
    if (*compare) return cmd_compare(summaries);
    if (*hist) {
      std::vector<double> edges;
      for (const auto& e : edge_text) edges.push_back(e == "inf" ? harness::kInf : std::stod(e));
      return cmd_export_hist(run_csv, edges, node_count, hist_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
