#include "uasn/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <sstream>
#include <thread>

#include <boost/math/distributions/students_t.hpp>

namespace uasn::harness {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw HarnessError("cannot write " + path.string());
  out << text;
  if (!out) throw HarnessError("write failed: " + path.string());
}

std::string run_stem(const std::string& algorithm, std::uint64_t seed) {
  return algorithm + "_" + std::to_string(seed);
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

double final_decile(const std::vector<marl::IterationMetrics>& it) {
  if (it.empty()) return 0.0;
  const std::size_t d = std::max<std::size_t>(1, it.size() / 10);
  double s = 0.0;
  for (std::size_t k = it.size() - d; k < it.size(); ++k) s += it[k].mean_reward;
  return s / static_cast<double>(d);
}

std::string run_csv(const std::vector<routing::Packet>& packets) {
  std::ostringstream o;
  o << "packet,source,status,hops,delay_s,created_at,delivered_at\n";
  for (const auto& p : packets) {
    o << p.id << ',' << p.source << ',' << routing::to_string(p.status) << ',' << p.hops() << ','
      << num(p.accumulated_delay_s) << ',' << num(p.created_at) << ',' << num(p.delivered_at) << '\n';
  }
  return o.str();
}

std::string train_csv(const std::vector<marl::IterationMetrics>& it) {
  std::ostringstream o;
  o << "iteration,mean_reward,actor_loss,critic_loss,masked_fraction,wall_ms\n";
  for (const auto& m : it) {
    o << m.iteration << ',' << num(m.mean_reward) << ',' << num(m.actor_loss) << ',' << num(m.critic_loss) << ','
      << num(m.masked_fraction) << ',' << num(m.wall_ms) << '\n';
  }
  return o.str();
}

std::string runs_csv(const std::vector<RunResult>& runs) {
  std::ostringstream o;
  o << "algorithm,seed,created,delivered,dropped,orphaned,delivery_ratio,mean_delay_s,total_ticks,interrupts,"
       "mean_hops,max_hops,first_reward,final_reward,mask_violations,conservation_violations\n";
  for (const auto& r : runs) {
    const auto& t = r.task;
    double first = 0.0;
    if (!r.iterations.empty()) {
      const std::size_t d = std::max<std::size_t>(1, r.iterations.size() / 10);
      for (std::size_t k = 0; k < d; ++k) first += r.iterations[k].mean_reward;
      first /= static_cast<double>(d);
    }
    int mv = t.mask_violations, cv = t.conservation_violations;
    for (const auto& m : r.iterations) {
      mv += m.mask_violations;
      cv += m.conservation_violations;
    }
    o << r.algorithm << ',' << r.seed << ',' << t.created << ',' << t.delivered << ',' << t.dropped << ','
      << t.orphaned << ',' << num(t.delivery_ratio) << ',' << num(t.mean_delay_s) << ',' << t.total_ticks << ','
      << t.interrupts << ',' << num(t.mean_hops) << ',' << t.max_hops << ',' << num(first) << ','
      << num(final_decile(r.iterations)) << ',' << mv << ',' << cv << '\n';
  }
  return o.str();
}

double parse_num(const std::string& s) {
  if (s == "inf") return kInf;
  if (s == "-inf") return -kInf;
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw HarnessError("bad number: " + s);
  return v;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

void to_json(json& j, const ExperimentConfig& c) {
  j = json{{"world", c.world},
           {"train", c.train},
           {"rewards", c.rewards},
           {"routing", c.routing},
           {"algorithms", c.algorithms},
           {"seeds", c.seeds},
           {"n_d", c.n_d},
           {"failure_rate", c.failure_rate},
           {"train_failure_rate", c.train_failure_rate},
           {"output_dir", c.output_dir},
           {"workers", c.workers}};
  json edges = json::array();
  for (double e : c.histogram_edges) {
    if (std::isinf(e)) {
      edges.push_back("inf");
    } else {
      edges.push_back(e);
    }
  }
  j["histogram_edges"] = edges;
}

void from_json(const json& j, ExperimentConfig& c) {
  const ExperimentConfig d;
  c.world = j.value("world", d.world);
  c.train = j.value("train", d.train);
  c.rewards = j.value("rewards", d.rewards);
  c.routing = j.value("routing", d.routing);
  c.algorithms = j.value("algorithms", d.algorithms);
  c.seeds = j.value("seeds", d.seeds);
  c.n_d = j.value("n_d", d.n_d);
  c.failure_rate = j.value("failure_rate", d.failure_rate);
  c.train_failure_rate = j.value("train_failure_rate", d.train_failure_rate);
  c.output_dir = j.value("output_dir", d.output_dir);
  c.workers = j.value("workers", d.workers);
  c.histogram_edges.clear();
  if (j.contains("histogram_edges")) {
    for (const auto& e : j.at("histogram_edges")) {
      c.histogram_edges.push_back(e.is_string() ? parse_num(e.get<std::string>()) : e.get<double>());
    }
  }
}

void validate(const ExperimentConfig& c) {
  if (c.seeds.empty()) throw HarnessError("at least one seed is required");
  if (c.algorithms.empty()) throw HarnessError("at least one algorithm is required");
  for (const auto& a : c.algorithms) {
    try {
      (void)marl::algorithm_from_string(a);
    } catch (const std::exception&) {
      throw HarnessError("unknown algorithm: " + a);
    }
  }
  if (c.n_d < 0) throw HarnessError("n_d must be non-negative");
  if (!(c.failure_rate >= 0.0 && c.failure_rate <= 1.0)) throw HarnessError("failure_rate must be in [0, 1]");
  if (c.train_failure_rate > 1.0) throw HarnessError("train_failure_rate must be at most 1");
  if (c.workers < 0) throw HarnessError("workers must be non-negative");
  try {
    (void)env::resolve(c.world);
    marl::validate(c.train);
    marl::validate(c.rewards);
  } catch (const std::exception& e) {
    throw HarnessError(e.what());
  }
  if (!c.histogram_edges.empty()) (void)bucket_delays({}, c.histogram_edges);
}

ExperimentConfig full_scale(ExperimentConfig config) {
  config.train.episodes = 5000;
  return config;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw HarnessError("cannot read config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw HarnessError(std::string("config parse error: ") + e.what());
  }
  // A run's metadata document carries the full config under "config".
  if (doc.contains("config")) doc = doc.at("config");
  try {
    return doc.get<ExperimentConfig>();
  } catch (const json::exception& e) {
    throw HarnessError(std::string("config field error: ") + e.what());
  }
}

std::vector<double> default_histogram_edges(int node_count) {
  const double scale = std::cbrt(static_cast<double>(std::max(node_count, 1))) / 4.0;
  return {0.0, 9.0 * scale, 12.0 * scale, 15.0 * scale, 18.0 * scale, kInf};
}

Histogram bucket_delays(const std::vector<double>& delays_s, const std::vector<double>& edges) {
  if (edges.size() < 2) throw HarnessError("histogram needs at least two edges");
  for (std::size_t k = 1; k < edges.size(); ++k) {
    if (!(edges[k] > edges[k - 1])) throw HarnessError("histogram edges must be strictly increasing");
  }
  Histogram h;
  h.edges = edges;
  h.counts.assign(edges.size() - 1, 0);
  h.proportions.assign(edges.size() - 1, 0.0);
  for (double d : delays_s) {
    const auto it = std::upper_bound(edges.begin(), edges.end(), d);
    if (it == edges.begin() || it == edges.end()) continue;  // outside [first, last)
    ++h.counts[static_cast<std::size_t>(it - edges.begin()) - 1];
  }
  int total = 0;
  for (int c : h.counts) total += c;
  h.empty = total == 0;
  if (!h.empty) {
    for (std::size_t k = 0; k < h.counts.size(); ++k) h.proportions[k] = h.counts[k] / static_cast<double>(total);
  }
  return h;
}

std::string histogram_csv(const Histogram& h) {
  std::ostringstream o;
  o << "lower_s,upper_s,count,proportion\n";
  for (std::size_t k = 0; k < h.counts.size(); ++k) {
    o << num(h.edges[k]) << ',' << num(h.edges[k + 1]) << ',' << h.counts[k] << ','
      << (h.empty ? std::string("empty") : num(h.proportions[k])) << '\n';
  }
  return o.str();
}

Histogram export_histogram(const routing::TaskMetrics& metrics, const std::vector<double>& edges,
                           const fs::path& path) {
  Histogram h = bucket_delays(metrics.delays_s, edges);
  write_file(path, histogram_csv(h));
  return h;
}

Interval t_interval(const std::vector<double>& values) {
  Interval r;
  if (values.empty()) return r;
  double sum = 0.0;
  for (double v : values) sum += v;
  const double n = static_cast<double>(values.size());
  r.mean = sum / n;
  if (values.size() < 2) return r;
  double ss = 0.0;
  for (double v : values) ss += (v - r.mean) * (v - r.mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  const boost::math::students_t dist(n - 1.0);
  r.half_width = boost::math::quantile(dist, 0.975) * sd / std::sqrt(n);
  return r;
}

Summary summarize(const std::vector<RunResult>& runs, const std::string& algorithm, const std::string& scenario) {
  std::vector<double> delay, ticks, ratio, reward;
  for (const auto& r : runs) {
    if (r.algorithm != algorithm) continue;
    delay.push_back(r.task.mean_delay_s);
    ticks.push_back(static_cast<double>(r.task.total_ticks));
    ratio.push_back(r.task.delivery_ratio);
    reward.push_back(final_decile(r.iterations));
  }
  Summary s;
  s.algorithm = algorithm;
  s.scenario = scenario;
  s.runs = static_cast<int>(delay.size());
  s.mean_delay_s = t_interval(delay);
  s.total_ticks = t_interval(ticks);
  s.delivery_ratio = t_interval(ratio);
  s.final_reward = t_interval(reward);
  return s;
}

std::string scenario_key(const ExperimentConfig& config) {
  env::WorldConfig w = env::resolve(config.world);
  w.seed = 0;
  json doc{{"world", w}, {"n_d", config.n_d}, {"failure_rate", config.failure_rate}};
  char buf[64];
  std::snprintf(buf, sizeof buf, "n%d-f%g-d%d-%016llx", w.node_count, config.failure_rate, config.n_d,
                static_cast<unsigned long long>(fnv1a(doc.dump())));
  return buf;
}

RunResult run_one(const ExperimentConfig& config, const std::string& algorithm, std::uint64_t seed,
                  std::vector<routing::Packet>* packets) {
  RunResult r;
  r.algorithm = algorithm;
  r.seed = seed;
  const auto alg = marl::algorithm_from_string(algorithm);

  env::WorldConfig wc = config.world;
  wc.seed = seed;
  const env::World world = env::init_scenario(wc);
  auto agents = marl::make_agents(world, config.train, seed);

  marl::TrainingSetup setup;
  setup.algorithm = alg;
  setup.train = config.train;
  setup.routing = config.routing;
  setup.rewards = config.rewards;
  setup.failure_rate = config.train_failure_rate < 0.0 ? config.failure_rate : config.train_failure_rate;
  setup.seed = seed;
  r.iterations = marl::train(world, agents, setup, config.train.episodes);

  routing::TaskSpec spec;
  spec.n_d = config.n_d;
  spec.failure_rate = config.failure_rate;
  spec.routing = config.routing;
  spec.rewards = config.rewards;
  spec.finetune = config.train;
  spec.seed = seed;
  r.task = routing::run_routing_task(world, agents, alg, spec, packets);
  r.task.reward_curve.clear();
  for (const auto& m : r.iterations) r.task.reward_curve.push_back(m.mean_reward);
  const auto edges = config.histogram_edges.empty() ? default_histogram_edges(wc.node_count) : config.histogram_edges;
  r.histogram = bucket_delays(r.task.delays_s, edges);
  return r;
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  validate(config);
  const fs::path dir(config.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw HarnessError("cannot create " + dir.string() + ": " + ec.message());

  struct Job {
    std::string algorithm;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& a : config.algorithms) {
    for (auto s : config.seeds) jobs.push_back({a, s});
  }

  ExperimentResult result;
  result.runs.resize(jobs.size());
  std::vector<std::vector<routing::Packet>> packets(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < jobs.size(); k = next++) {
      try {
        result.runs[k] = run_one(config, jobs[k].algorithm, jobs[k].seed, &packets[k]);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  unsigned n = config.workers > 0 ? static_cast<unsigned>(config.workers) : std::thread::hardware_concurrency();
  n = std::clamp<unsigned>(n, 1, static_cast<unsigned>(jobs.size()));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  const std::string scenario = scenario_key(config);
  for (std::size_t k = 0; k < jobs.size(); ++k) {
    const auto& r = result.runs[k];
    const std::string stem = run_stem(r.algorithm, r.seed);
    write_file(dir / ("run_" + stem + ".csv"), run_csv(packets[k]));
    write_file(dir / ("train_" + stem + ".csv"), train_csv(r.iterations));
    write_file(dir / ("hist_" + stem + ".csv"), histogram_csv(r.histogram));
    std::string lines;
    for (const auto& p : routing::export_paths(packets[k])) lines += p.dump() + "\n";
    write_file(dir / ("paths_" + stem + ".jsonl"), lines);
  }
  for (const auto& a : config.algorithms) result.summaries.push_back(summarize(result.runs, a, scenario));
  write_file(dir / "runs.csv", runs_csv(result.runs));
  write_file(dir / "summary.csv", summary_csv(result.summaries));

  json meta;
  meta["format"] = "uasn-experiment";
  meta["scenario"] = scenario;
  meta["config"] = config;
  meta["resolved_world"] = env::resolve(config.world);
  meta["histogram_edges"] = json::array();
  for (double e : config.histogram_edges.empty() ? default_histogram_edges(config.world.node_count)
                                                 : config.histogram_edges) {
    meta["histogram_edges"].push_back(std::isinf(e) ? json("inf") : json(e));
  }
  meta["units"] = {{"delay", "s"}, {"total_ticks", "tick"}, {"tick_duration_s", config.world.tick_duration_s}};
  meta["confidence"] = "95% Student-t over seeds";
  json warnings = json::object();
  for (auto s : config.seeds) {
    env::WorldConfig wc = config.world;
    wc.seed = s;
    const auto w = env::init_scenario(wc);
    if (!w.warnings().empty()) warnings[std::to_string(s)] = w.warnings();
  }
  meta["scenario_warnings"] = warnings;
  write_file(dir / "metadata.json", meta.dump(2) + "\n");
  return result;
}

std::string summary_csv(const std::vector<Summary>& summaries) {
  std::ostringstream o;
  o << "algorithm,scenario,runs,mean_delay_s,mean_delay_s_ci95,total_ticks,total_ticks_ci95,delivery_ratio,"
       "delivery_ratio_ci95,final_reward,final_reward_ci95\n";
  for (const auto& s : summaries) {
    o << s.algorithm << ',' << s.scenario << ',' << s.runs << ',' << num(s.mean_delay_s.mean) << ','
      << num(s.mean_delay_s.half_width) << ',' << num(s.total_ticks.mean) << ',' << num(s.total_ticks.half_width)
      << ',' << num(s.delivery_ratio.mean) << ',' << num(s.delivery_ratio.half_width) << ','
      << num(s.final_reward.mean) << ',' << num(s.final_reward.half_width) << '\n';
  }
  return o.str();
}

std::vector<Summary> read_summary_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw HarnessError("cannot read summary " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw HarnessError("empty summary " + path.string());
  const auto header = split(line);
  std::vector<Summary> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = split(line);
    if (c.size() != header.size()) throw HarnessError("malformed summary row: " + line);
    Summary s;
    try {
      s.algorithm = c[0];
      s.scenario = c[1];
      s.runs = std::stoi(c[2]);
      s.mean_delay_s = {parse_num(c[3]), parse_num(c[4])};
      s.total_ticks = {parse_num(c[5]), parse_num(c[6])};
      s.delivery_ratio = {parse_num(c[7]), parse_num(c[8])};
      s.final_reward = {parse_num(c[9]), parse_num(c[10])};
    } catch (const std::logic_error&) {
      throw HarnessError("malformed summary row: " + line);
    }
    out.push_back(s);
  }
  return out;
}

Comparison compare_algorithms(const std::vector<Summary>& summaries) {
  if (summaries.size() < 2) throw HarnessError("comparison needs at least two summaries");
  for (const auto& s : summaries) {
    if (s.scenario != summaries.front().scenario) {
      throw HarnessError("summaries come from different scenarios: " + summaries.front().scenario + " vs " +
                         s.scenario);
    }
  }
  Comparison c;
  std::ostringstream rep;
  rep << "scenario " << summaries.front().scenario << "\n";
  auto pairwise = [&](const char* metric, auto get, std::vector<PairOrder>& out) {
    for (std::size_t a = 0; a < summaries.size(); ++a) {
      for (std::size_t b = a + 1; b < summaries.size(); ++b) {
        const double x = get(summaries[a]), y = get(summaries[b]);
        PairOrder p;
        p.metric = metric;
        p.tie = x == y;
        p.lower = x <= y ? summaries[a].algorithm : summaries[b].algorithm;
        p.higher = x <= y ? summaries[b].algorithm : summaries[a].algorithm;
        rep << metric << ": " << p.lower << (p.tie ? " == " : " < ") << p.higher << " (" << num(std::min(x, y))
            << (p.tie ? " == " : " < ") << num(std::max(x, y)) << ")\n";
        out.push_back(p);
      }
    }
  };
  pairwise("mean_delay_s", [](const Summary& s) { return s.mean_delay_s.mean; }, c.delay_order);
  pairwise("total_ticks", [](const Summary& s) { return s.total_ticks.mean; }, c.ticks_order);

  auto find = [&](const std::string& name) -> const Summary* {
    for (const auto& s : summaries) {
      if (s.algorithm == name) return &s;
    }
    return nullptr;
  };
  const Summary* chain[] = {find("ma_mappo_i"), find("ma_mappo"), find("mappo")};
  std::vector<const Summary*> present;
  for (auto* s : chain) {
    if (s) present.push_back(s);
  }
  c.ordering_holds = present.size() >= 2;
  for (std::size_t k = 1; k < present.size(); ++k) {
    const double lo = present[k - 1]->mean_delay_s.mean, hi = present[k]->mean_delay_s.mean;
    if (lo > hi) c.ordering_holds = false;
    if (lo == hi) c.has_tie = true;
  }
  rep << "ordering ma_mappo_i <= ma_mappo <= mappo: " << (c.ordering_holds ? "true" : "false");
  if (c.has_tie) rep << " (tie)";
  rep << "\n";
  c.report = rep.str();
  return c;
}

}  // namespace uasn::harness
