#pragma once

#include "lgc/flocking.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace lgc {

enum class Split { Train, Val, Test };

std::string to_string(Split s);
Split split_from_string(const std::string& name);

/// Where a trajectory came from: the initial expert dataset or a DAGGER round.
enum class Origin { Expert, Dagger };

std::string to_string(Origin o);
Origin origin_from_string(const std::string& name);

struct DatasetEntry {
  flocking::Trajectory trajectory;
  Split split = Split::Train;
  Origin origin = Origin::Expert;
};

struct DatasetConfig {
  int trajectories = 60;
  double duration = 2.5;  // s
  std::uint64_t seed = 0;
  flocking::ScenarioConfig scenario;
};

struct Dataset {
  DatasetConfig config;
  std::vector<DatasetEntry> entries;

  std::size_t count(Split s) const;
  std::vector<const DatasetEntry*> select(Split s) const;
};

/// Train / val / test trajectory counts for a 70/10/20 split.
struct SplitCounts {
  int train = 0;
  int val = 0;
  int test = 0;
};
SplitCounts split_counts(int trajectories);

/// Expert rollouts from sampled initial worlds, split 70/10/20 by a seeded
/// shuffle. Team sizes are drawn from the scenario's list.
Dataset generate_dataset(const DatasetConfig& config);

nlohmann::json to_json(const DatasetConfig& c);
DatasetConfig dataset_config_from_json(const nlohmann::json& j);

/// JSON-lines: a header line with the generating config, then one line per trajectory.
void write_dataset(std::ostream& out, const Dataset& dataset);
Dataset read_dataset(std::istream& in);
void save_dataset(const std::string& path, const Dataset& dataset);
Dataset load_dataset(const std::string& path);

}  // namespace lgc
