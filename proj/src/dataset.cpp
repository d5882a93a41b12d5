#include "lgc/dataset.hpp"

#include "lgc/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

namespace lgc {

using nlohmann::json;

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw std::invalid_argument("unknown split: " + name);
}

std::string to_string(Origin o) { return o == Origin::Expert ? "expert" : "dagger"; }

Origin origin_from_string(const std::string& name) {
  if (name == "expert") return Origin::Expert;
  if (name == "dagger") return Origin::Dagger;
  throw std::invalid_argument("unknown trajectory origin: " + name);
}

std::size_t Dataset::count(Split s) const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [&](const DatasetEntry& e) { return e.split == s; }));
}

std::vector<const DatasetEntry*> Dataset::select(Split s) const {
  std::vector<const DatasetEntry*> out;
  for (const auto& e : entries)
    if (e.split == s) out.push_back(&e);
  return out;
}

SplitCounts split_counts(int trajectories) {
  if (trajectories < 0) throw std::invalid_argument("split: negative trajectory count");
  SplitCounts c;
  c.train = static_cast<int>(std::lround(0.7 * trajectories));
  c.val = std::min(trajectories - c.train, static_cast<int>(std::lround(0.1 * trajectories)));
  c.test = trajectories - c.train - c.val;
  return c;
}

Dataset generate_dataset(const DatasetConfig& config) {
  if (config.scenario.team_sizes.empty()) throw std::invalid_argument("dataset: no team sizes");
  Dataset d;
  d.config = config;
  const auto n = static_cast<std::size_t>(config.trajectories);
  std::mt19937_64 rng(flocking::mix_seed(config.seed, 0));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const auto counts = split_counts(config.trajectories);
  std::vector<Split> split(n, Split::Test);
  for (std::size_t k = 0; k < n; ++k) {
    const auto rank = static_cast<int>(k);
    split[order[k]] = rank < counts.train ? Split::Train : (rank < counts.train + counts.val ? Split::Val : Split::Test);
  }

  flocking::ExpertController expert;
  std::uniform_int_distribution<std::size_t> team(0, config.scenario.team_sizes.size() - 1);
  for (std::size_t t = 0; t < n; ++t) {
    const auto agents = static_cast<std::size_t>(config.scenario.team_sizes[team(rng)]);
    const std::uint64_t seed = flocking::mix_seed(config.seed, t + 1);
    const auto world = flocking::sample_world(config.scenario, agents, seed);
    d.entries.push_back({flocking::rollout(expert, world, config.duration, seed), split[t], Origin::Expert});
  }
  return d;
}

json to_json(const DatasetConfig& c) {
  return {{"trajectories", c.trajectories},
          {"duration", c.duration},
          {"seed", c.seed},
          {"scenario", to_json(c.scenario)}};
}

DatasetConfig dataset_config_from_json(const json& j) {
  DatasetConfig c;
  c.trajectories = j.value("trajectories", c.trajectories);
  c.duration = j.value("duration", c.duration);
  c.seed = j.value("seed", c.seed);
  if (j.contains("scenario")) c.scenario = scenario_from_json(j.at("scenario"));
  return c;
}

void write_dataset(std::ostream& out, const Dataset& dataset) {
  out << json{{"format", "lgc-dataset"}, {"version", 1}, {"config", to_json(dataset.config)}}.dump() << '\n';
  for (const auto& e : dataset.entries) {
    json line = to_json(e.trajectory);
    line["split"] = to_string(e.split);
    line["origin"] = to_string(e.origin);
    out << line.dump() << '\n';
  }
}

Dataset read_dataset(std::istream& in) {
  Dataset d;
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("dataset: empty file");
  const json header = json::parse(line);
  if (header.value("format", std::string()) != "lgc-dataset") throw std::invalid_argument("dataset: bad header");
  d.config = dataset_config_from_json(header.at("config"));
  std::size_t number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      d.entries.push_back({trajectory_from_json(j), split_from_string(j.at("split").get<std::string>()),
                           origin_from_string(j.value("origin", std::string("expert")))});
    } catch (const std::exception& e) {
      throw std::invalid_argument("dataset line " + std::to_string(number) + ": " + e.what());
    }
  }
  return d;
}

void save_dataset(const std::string& path, const Dataset& dataset) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_dataset(out, dataset);
  if (!out) throw std::runtime_error("write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_dataset(in);
}

}  // namespace lgc
