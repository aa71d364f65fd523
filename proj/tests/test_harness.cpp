#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "uasn/harness.hpp"

using namespace uasn;
using namespace uasn::harness;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream o;
  o << in.rdbuf();
  return o.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("uasn_harness_" + name);
  fs::remove_all(dir);
  return dir;
}

ExperimentConfig tiny(const std::string& name) {
  ExperimentConfig c;
  c.train.episodes = 2;
  c.train.packets_per_episode = 8;
  c.n_d = 24;
  c.output_dir = scratch(name).string();
  c.workers = 1;
  return c;
}

Summary summary(const std::string& alg, double delay, const std::string& scenario = "s") {
  Summary s;
  s.algorithm = alg;
  s.scenario = scenario;
  s.runs = 5;
  s.mean_delay_s = {delay, 0.1};
  s.total_ticks = {100.0, 1.0};
  return s;
}

}  // namespace

TEST(Histogram, DefaultEdgesAt64Nodes) {
  const auto e = default_histogram_edges(64);
  ASSERT_EQ(e.size(), 6u);
  EXPECT_DOUBLE_EQ(e[1], 9.0);
  EXPECT_DOUBLE_EQ(e[4], 18.0);
  EXPECT_TRUE(std::isinf(e[5]));
}

TEST(Histogram, HandTalliedFixture) {
  const std::vector<double> delays{1, 2, 3, 9, 10, 12.5, 15, 16, 17, 30};
  const auto h = bucket_delays(delays, default_histogram_edges(64));
  EXPECT_EQ(h.counts, (std::vector<int>{3, 2, 1, 3, 1}));
  EXPECT_FALSE(h.empty);
  double total = 0.0;
  for (double p : h.proportions) total += p;
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(h.proportions[0], 0.3);
}

TEST(Histogram, AllInFirstBucketAndEmpty) {
  const auto h = bucket_delays({0.1, 0.2, 8.9}, default_histogram_edges(64));
  EXPECT_EQ(h.counts, (std::vector<int>{3, 0, 0, 0, 0}));
  EXPECT_EQ(h.proportions[0], 1.0);
  const auto none = bucket_delays({}, default_histogram_edges(64));
  EXPECT_TRUE(none.empty);
  for (double p : none.proportions) EXPECT_EQ(p, 0.0);
  EXPECT_NE(histogram_csv(none).find(",0,empty"), std::string::npos);
  EXPECT_NE(histogram_csv(h).find("18,inf,0,0"), std::string::npos);
}

TEST(Histogram, RejectsBadEdges) {
  EXPECT_THROW(bucket_delays({1.0}, {0.0}), HarnessError);
  EXPECT_THROW(bucket_delays({1.0}, {0.0, 5.0, 5.0}), HarnessError);
  EXPECT_THROW(bucket_delays({1.0}, {0.0, 9.0, 3.0}), HarnessError);
}

TEST(Histogram, ProportionsSumToOne) {
  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> d(1 + rng.index(300));
    for (auto& x : d) x = rng.uniform(0.0, 40.0);
    const auto h = bucket_delays(d, default_histogram_edges(64));
    double total = 0.0;
    int count = 0;
    for (std::size_t k = 0; k < h.counts.size(); ++k) {
      total += h.proportions[k];
      count += h.counts[k];
    }
    EXPECT_EQ(count, static_cast<int>(d.size()));
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Interval, StudentT) {
  const auto a = t_interval({1, 2, 3, 4, 5});
  EXPECT_DOUBLE_EQ(a.mean, 3.0);
  EXPECT_NEAR(a.half_width, 1.9632431614775607, 1e-12);
  const auto b = t_interval({1, 2});
  EXPECT_NEAR(b.half_width, 6.3531023682160475, 1e-9);
  EXPECT_EQ(t_interval({7.0}).half_width, 0.0);
  EXPECT_EQ(t_interval({7.0}).mean, 7.0);
}

TEST(Compare, OrderingHolds) {
  const auto c = compare_algorithms({summary("ma_mappo_i", 9.21), summary("ma_mappo", 9.30), summary("mappo", 11.13)});
  EXPECT_TRUE(c.ordering_holds);
  EXPECT_FALSE(c.has_tie);
  EXPECT_EQ(c.delay_order.size(), 3u);
  EXPECT_NE(c.report.find("ma_mappo_i < ma_mappo"), std::string::npos);
}

TEST(Compare, TieIsAnnotated) {
  const auto c = compare_algorithms({summary("ma_mappo_i", 9.30), summary("ma_mappo", 9.30), summary("mappo", 11.13)});
  EXPECT_TRUE(c.ordering_holds);
  EXPECT_TRUE(c.has_tie);
  EXPECT_NE(c.report.find("(tie)"), std::string::npos);
}

TEST(Compare, InvertedIsFalseNotError) {
  const auto c = compare_algorithms({summary("ma_mappo_i", 12.0), summary("ma_mappo", 9.30), summary("mappo", 11.13)});
  EXPECT_FALSE(c.ordering_holds);
}

TEST(Compare, RefusesMismatchedOrSingle) {
  EXPECT_THROW(compare_algorithms({summary("ma_mappo", 1.0, "a"), summary("mappo", 2.0, "b")}), HarnessError);
  EXPECT_THROW(compare_algorithms({summary("mappo", 2.0)}), HarnessError);
}

TEST(Compare, SummaryCsvRoundTrip) {
  const auto dir = scratch("summary");
  fs::create_directories(dir);
  const std::vector<Summary> in{summary("ma_mappo", 9.3), summary("mappo", 11.13)};
  {
    std::ofstream(dir / "summary.csv") << summary_csv(in);
  }
  const auto out = read_summary_csv(dir / "summary.csv");
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[1].algorithm, "mappo");
  EXPECT_EQ(out[1].mean_delay_s.mean, 11.13);
  EXPECT_EQ(out[0].mean_delay_s.half_width, 0.1);
  EXPECT_THROW(read_summary_csv(dir / "missing.csv"), HarnessError);
}

TEST(Config, ValidationRejectsBadInput) {
  ExperimentConfig c;
  EXPECT_NO_THROW(validate(c));
  c.seeds.clear();
  EXPECT_THROW(validate(c), HarnessError);
  c = {};
  c.algorithms = {"dqn"};
  EXPECT_THROW(validate(c), HarnessError);
  c = {};
  c.failure_rate = 1.5;
  EXPECT_THROW(validate(c), HarnessError);
  c = {};
  c.histogram_edges = {0.0, 9.0, 3.0};
  EXPECT_THROW(validate(c), HarnessError);
  c = {};
  c.world.node_count = 30;
  EXPECT_THROW(validate(c), HarnessError);
  c = {};
  c.train.gamma = 2.0;
  EXPECT_THROW(validate(c), HarnessError);
}

TEST(Config, JsonRoundTripAndScenarioKey) {
  ExperimentConfig c;
  c.n_d = 77;
  c.seeds = {9, 3};
  c.world.node_count = 125;
  const nlohmann::json j = c;
  const auto back = j.get<ExperimentConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  auto other = c;
  other.seeds = {1};
  EXPECT_EQ(scenario_key(c), scenario_key(other));
  other.failure_rate = 0.2;
  EXPECT_NE(scenario_key(c), scenario_key(other));
  EXPECT_EQ(full_scale(c).train.episodes, 5000);
}

TEST(Experiment, SingleRunCardinality) {
  auto c = tiny("single");
  c.algorithms = {"ma_mappo"};
  c.seeds = {1};
  const auto r = run_experiment(c);
  ASSERT_EQ(r.runs.size(), 1u);
  ASSERT_EQ(r.summaries.size(), 1u);
  EXPECT_EQ(r.summaries[0].runs, 1);
  EXPECT_EQ(r.summaries[0].mean_delay_s.half_width, 0.0);
  const fs::path dir(c.output_dir);
  for (const char* f : {"runs.csv", "summary.csv", "metadata.json", "run_ma_mappo_1.csv", "train_ma_mappo_1.csv",
                        "hist_ma_mappo_1.csv", "paths_ma_mappo_1.jsonl"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  const auto train = slurp(dir / "train_ma_mappo_1.csv");
  EXPECT_EQ(std::count(train.begin(), train.end(), '\n'), 3);
  const auto runs = slurp(dir / "runs.csv");
  EXPECT_EQ(std::count(runs.begin(), runs.end(), '\n'), 2);
}

TEST(Experiment, FullGridAggregatesPerSeedMeans) {
  auto c = tiny("grid");
  c.train.episodes = 1;
  c.n_d = 12;
  c.workers = 2;
  const auto r = run_experiment(c);
  ASSERT_EQ(r.runs.size(), 15u);
  ASSERT_EQ(r.summaries.size(), 3u);
  for (const auto& s : r.summaries) {
    EXPECT_EQ(s.runs, 5);
    double sum = 0.0;
    for (const auto& run : r.runs) {
      if (run.algorithm == s.algorithm) sum += run.task.mean_delay_s;
    }
    EXPECT_NEAR(s.mean_delay_s.mean, sum / 5.0, 1e-12);
  }
  // Algorithm-major order, seeds as configured.
  EXPECT_EQ(r.runs[0].algorithm, "mappo");
  EXPECT_EQ(r.runs[4].seed, 5u);
  EXPECT_EQ(r.runs[5].algorithm, "ma_mappo");
  const auto runs = slurp(fs::path(c.output_dir) / "runs.csv");
  EXPECT_EQ(std::count(runs.begin(), runs.end(), '\n'), 16);
}

TEST(Experiment, RerunFromMetadataIsByteIdentical) {
  auto c = tiny("first");
  c.algorithms = {"ma_mappo_i"};
  c.seeds = {2};
  c.workers = 1;
  run_experiment(c);
  auto again = load_config(fs::path(c.output_dir) / "metadata.json");
  again.output_dir = scratch("second").string();
  again.workers = 3;
  run_experiment(again);
  for (const char* f : {"run_ma_mappo_i_2.csv", "hist_ma_mappo_i_2.csv", "paths_ma_mappo_i_2.jsonl", "summary.csv"}) {
    EXPECT_EQ(slurp(fs::path(c.output_dir) / f), slurp(fs::path(again.output_dir) / f)) << f;
  }
}

TEST(Experiment, LoadConfigErrors) {
  const auto dir = scratch("bad");
  fs::create_directories(dir);
  EXPECT_THROW(load_config(dir / "missing.json"), HarnessError);
  std::ofstream(dir / "bad.json") << "{ not json";
  EXPECT_THROW(load_config(dir / "bad.json"), HarnessError);
}
