// lgc: dataset generation, training, certification and evaluation.

#include "lgc/dataset.hpp"
#include "lgc/evaluation.hpp"
#include "lgc/io.hpp"
#include "lgc/stability.hpp"
#include "lgc/training.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fs = std::filesystem;
namespace fl = lgc::flocking;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitUncertified = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_readable(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) throw UsageError(std::string(what) + " not found: " + path);
}

void require_writable(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty() && !fs::is_directory(parent)) throw UsageError("output directory does not exist: " + parent.string());
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

struct GenArgs {
  std::uint64_t seed = 0;
  std::string out;
  int trajectories = 60;
  double duration = 2.5;
  std::vector<int> teams{4, 6, 10, 12, 15};
  double range = 4.0;
  std::string consensus = "mean_velocity";
};

int cmd_gen_data(const GenArgs& a) {
  require_writable(a.out);
  lgc::DatasetConfig c;
  c.seed = a.seed;
  c.trajectories = a.trajectories;
  c.duration = a.duration;
  c.scenario.team_sizes = a.teams;
  c.scenario.params.comm_radius = a.range;
  c.scenario.params.consensus = fl::consensus_from_string(a.consensus);
  const auto d = lgc::generate_dataset(c);
  lgc::save_dataset(a.out, d);
  std::cout << "wrote " << d.entries.size() << " trajectories to " << a.out << " (train "
            << d.count(lgc::Split::Train) << ", val " << d.count(lgc::Split::Val) << ", test "
            << d.count(lgc::Split::Test) << ")\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::uint64_t seed = 0;
  std::string dataset;
  std::string out;
  std::string metrics;
  std::string config;
  std::string model = "cfgc";
  int epochs = 120;
  int dagger_every = 20;
  int dagger_rollouts = -1;
  int batch_size = 1;
  double lr = 1e-3;
  double beta = 10.0;
  bool no_regularizer = false;
  double clip = 10.0;
  int hidden = 128;
  int features = 50;
  int taps = 2;
  int f_shared = 4;
  int g_shared = 4;
  double t_cf = 1.0;
  double epsilon = 1e-6;
  int solver_steps = 6;
  bool quiet = false;
};

struct TrainFlags {
  CLI::Option* model;
  CLI::Option* epochs;
  CLI::Option* dagger_every;
  CLI::Option* dagger_rollouts;
  CLI::Option* batch_size;
  CLI::Option* lr;
  CLI::Option* beta;
  CLI::Option* no_regularizer;
  CLI::Option* clip;
  CLI::Option* hidden;
  CLI::Option* features;
  CLI::Option* taps;
  CLI::Option* f_shared;
  CLI::Option* g_shared;
  CLI::Option* t_cf;
  CLI::Option* epsilon;
  CLI::Option* solver_steps;
};

lgc::TrainConfig resolve_train_config(const TrainArgs& a, const TrainFlags& f) {
  lgc::TrainConfig c;
  if (!a.config.empty()) {
    require_readable(a.config, "training config");
    c = lgc::train_config_from_json(lgc::read_json_file(a.config));
  }
  const auto given = [](CLI::Option* o) { return o->count() > 0; };
  if (a.config.empty() || given(f.model)) {
    const auto kind = lgc::model_kind_from_string(a.model);
    if (a.config.empty()) {
      c.policy = lgc::flocking_policy_config(kind);
    } else {
      c.policy.kind = kind;
    }
  }
  auto& p = c.policy;
  if (a.config.empty() || given(f.hidden)) p.hidden = a.hidden;
  if (a.config.empty() || given(f.features)) p.state_features = a.features;
  if (a.config.empty() || given(f.taps)) p.filter_length = a.taps;
  if (a.config.empty() || given(f.f_shared)) p.shared_state = a.f_shared;
  if (a.config.empty() || given(f.g_shared)) p.shared_input = a.g_shared;
  if (a.config.empty() || given(f.t_cf)) p.cf_horizon = a.t_cf;
  if (a.config.empty() || given(f.epsilon)) p.epsilon = a.epsilon;
  if (a.config.empty() || given(f.solver_steps)) p.solver_steps = a.solver_steps;
  if (a.config.empty() || given(f.epochs)) c.epochs = a.epochs;
  if (a.config.empty() || given(f.dagger_every)) c.dagger_every = a.dagger_every;
  if (a.config.empty() || given(f.dagger_rollouts)) c.dagger_rollouts = a.dagger_rollouts;
  if (a.config.empty() || given(f.batch_size)) c.batch_size = a.batch_size;
  if (a.config.empty() || given(f.lr)) c.lr = a.lr;
  if (a.config.empty() || given(f.beta)) c.beta = a.beta;
  if (a.config.empty() || given(f.no_regularizer)) c.regularize = !a.no_regularizer;
  if (a.config.empty() || given(f.clip)) c.clip = a.clip;
  c.seed = a.seed;  // the command-line seed always wins
  return c;
}

int cmd_train(const TrainArgs& a, const TrainFlags& flags) {
  require_readable(a.dataset, "dataset");
  require_writable(a.out);
  const std::string metrics_path = a.metrics.empty() ? fs::path(a.out).replace_extension(".metrics.jsonl").string()
                                                     : a.metrics;
  require_writable(metrics_path);
  const auto config = resolve_train_config(a, flags);
  auto dataset = lgc::load_dataset(a.dataset);

  const json resolved = {{"train", lgc::to_json(config)},
                         {"dataset", {{"path", a.dataset}, {"config", lgc::to_json(dataset.config)}}}};

  auto metrics = open_out(metrics_path);
  metrics << json{{"format", "lgc-metrics"}, {"version", 1}, {"config", resolved}}.dump() << '\n';
  const auto on_epoch = [&](const lgc::EpochMetrics& m) {
    metrics << lgc::to_json(m).dump() << '\n';
    metrics.flush();
    if (!a.quiet) {
      std::cerr << "epoch " << m.epoch << "  train " << m.train_mse << "  val " << m.val_mse << "  penalty "
                << m.penalty;
      if (m.dagger_added) std::cerr << "  dagger +" << m.dagger_added;
      std::cerr << '\n';
    }
  };
  const auto log = [&](const std::string& msg) {
    if (!a.quiet) std::cerr << msg << '\n';
  };
  const auto result = lgc::train(config, dataset, on_epoch, log);

  json provenance = resolved;
  provenance["epochs_completed"] = result.metrics.size();
  provenance["aborted"] = result.aborted;
  lgc::save_checkpoint(a.out, result.policy, provenance);
  std::cout << "wrote checkpoint " << a.out << " and metrics " << metrics_path << '\n';
  if (result.aborted) {
    std::cerr << "training aborted: " << result.message << " (last good weights saved)\n";
    return kExitRuntime;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// check-stability
// ---------------------------------------------------------------------------

struct CheckArgs {
  std::string checkpoint;
  std::string dataset;
  std::string model;
  std::string out;
  std::uint64_t seed = 0;
  int samples = 8;
  double s_bar = -1.0;
  double s_tilde = -1.0;
};

int cmd_check_stability(const CheckArgs& a) {
  require_readable(a.checkpoint, "checkpoint");
  if (!a.out.empty()) require_writable(a.out);
  const auto policy = lgc::load_checkpoint(a.checkpoint);
  if (!a.model.empty() && lgc::model_kind_from_string(a.model) != policy.config.kind) {
    throw std::runtime_error("checkpoint holds a " + lgc::to_string(policy.config.kind) + " model, not " + a.model);
  }
  const int k = policy.config.filter_length;
  const auto count = static_cast<std::size_t>(a.samples);

  lgc::Regularizer reg;
  json source;
  if (!a.dataset.empty()) {
    require_readable(a.dataset, "dataset");
    const auto d = lgc::load_dataset(a.dataset);
    std::vector<const fl::Trajectory*> trajs;
    for (const auto& e : d.entries) trajs.push_back(&e.trajectory);
    reg = lgc::make_regularizer(policy.config, trajs, 10.0, count);
    source = {{"dataset", a.dataset}};
  } else {
    // Supports from freshly sampled initial formations.
    fl::ScenarioConfig scenario;
    std::vector<fl::Trajectory> worlds;
    for (std::size_t i = 0; i < count; ++i) {
      const auto n = static_cast<std::size_t>(scenario.team_sizes[i % scenario.team_sizes.size()]);
      const auto w = fl::sample_world(scenario, n, fl::mix_seed(a.seed, i));
      fl::Trajectory t;
      t.params = w.params;
      fl::TrajectoryRecord r;
      r.support = fl::build_comm_support(w).matrix();
      t.records.push_back(r);
      worlds.push_back(std::move(t));
    }
    std::vector<const fl::Trajectory*> trajs;
    for (const auto& t : worlds) trajs.push_back(&t);
    reg = lgc::make_regularizer(policy.config, trajs, 10.0, count);
    source = {{"sampled_formations", count}, {"seed", a.seed}};
  }
  if (a.s_bar >= 0.0) {
    reg.bounds = lgc::SupportBounds::from_norms(k, a.s_bar, a.s_tilde >= 0.0 ? a.s_tilde : 0.0);
    source["s_bar"] = a.s_bar;
  }
  const auto report = lgc::stability_report(policy, reg.bounds, reg.samples);
  json doc = lgc::to_json(report);
  doc["config"] = {{"checkpoint", a.checkpoint}, {"supports", source}};
  std::cout << lgc::format_table(report);
  if (a.out.empty()) {
    std::cout << doc.dump(2) << '\n';
  } else {
    open_out(a.out) << doc.dump(2) << '\n';
  }
  return report.certified ? kExitOk : kExitUncertified;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string out;
  std::uint64_t seed = 0;
  std::vector<int> teams{4, 10, 25, 50};
  std::vector<double> ranges{2, 3, 4, 5, 6};
  int episodes = 20;
  double duration = 2.5;
  std::string consensus = "mean_velocity";
};

int cmd_eval(const EvalArgs& a) {
  require_writable(a.out);
  lgc::EvalConfig c;
  c.seed = a.seed;
  c.teams = a.teams;
  c.ranges = a.ranges;
  c.episodes = a.episodes;
  c.duration = a.duration;
  c.scenario.params.consensus = fl::consensus_from_string(a.consensus);

  std::vector<lgc::EvalRow> rows;
  json config = {{"eval", lgc::to_json(c)}};
  if (a.checkpoint.empty()) {
    rows = lgc::evaluate_expert(c);
  } else {
    require_readable(a.checkpoint, "checkpoint");
    const auto policy = lgc::load_checkpoint(a.checkpoint);
    c.scenario.params.filter_length = policy.config.filter_length;
    config["eval"] = lgc::to_json(c);
    config["checkpoint"] = a.checkpoint;
    config["model"] = lgc::checkpoint_to_json(policy).at("hyperparameters");
    rows = lgc::evaluate(policy, c);
  }
  auto out = open_out(a.out);
  out << "# " << config.dump() << '\n';
  lgc::write_eval_csv(out, rows);
  std::cout << "wrote " << rows.size() << " rows to " << a.out << '\n';
  for (double r : c.ranges) {
    std::cout << "R=" << r << "  expert " << lgc::mean_flocking_error(rows, "expert", r);
    if (!a.checkpoint.empty()) {
      std::cout << "  learned " << lgc::mean_flocking_error(rows, rows.front().controller, r);
    }
    std::cout << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimArgs {
  std::string checkpoint;
  std::string out;
  std::uint64_t seed = 0;
  int agents = 10;
  double range = 4.0;
  double duration = 2.5;
  std::string consensus = "mean_velocity";
};

int cmd_simulate(const SimArgs& a) {
  require_writable(a.out);
  fl::ScenarioConfig scenario;
  scenario.params.comm_radius = a.range;
  scenario.params.consensus = fl::consensus_from_string(a.consensus);
  std::optional<lgc::Policy> policy;
  if (!a.checkpoint.empty()) {
    require_readable(a.checkpoint, "checkpoint");
    policy = lgc::load_checkpoint(a.checkpoint);
    scenario.params.filter_length = policy->config.filter_length;
  }
  const auto world = fl::sample_world(scenario, static_cast<std::size_t>(a.agents), a.seed);
  fl::Trajectory t;
  if (policy) {
    lgc::PolicyController c(*policy);
    t = fl::rollout(c, world, a.duration, a.seed);
  } else {
    fl::ExpertController c;
    t = fl::rollout(c, world, a.duration, a.seed);
  }

  json config = {{"seed", a.seed},        {"agents", a.agents},
                 {"duration", a.duration}, {"scenario", lgc::to_json(scenario)},
                 {"controller", policy ? lgc::to_string(policy->config.kind) : "expert"}};
  if (policy) config["checkpoint"] = a.checkpoint;
  auto out = open_out(a.out);
  out << "# " << config.dump() << '\n';
  out << "tick,time,agent,leader,x,y,vx,vy,ux,uy,expert_ux,expert_uy\n" << std::setprecision(17);
  for (const auto& r : t.records) {
    for (Eigen::Index i = 0; i < r.positions.rows(); ++i) {
      out << r.tick << ',' << r.tick * t.params.dt << ',' << i << ',' << (static_cast<std::size_t>(i) == t.leader)
          << ',' << r.positions(i, 0) << ',' << r.positions(i, 1) << ',' << r.velocities(i, 0) << ','
          << r.velocities(i, 1) << ',' << r.applied(i, 0) << ',' << r.applied(i, 1) << ',' << r.expert(i, 0) << ','
          << r.expert(i, 1) << '\n';
    }
  }
  std::cout << "wrote " << t.records.size() << " ticks to " << a.out << "  flocking error "
            << (t.records.empty() ? 0.0 : fl::flocking_error(t)) << (t.diverged ? "  (diverged)" : "") << '\n';
  return t.diverged ? kExitRuntime : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Liquid-graph networks for multi-agent flocking control"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "lgc 0.1");

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Record expert flocking trajectories");
  g->add_option("--seed", gen.seed, "Random seed")->required();
  g->add_option("--out", gen.out, "Dataset file (JSON lines)")->required();
  g->add_option("--trajectories", gen.trajectories, "Number of trajectories")->capture_default_str()
      ->check(CLI::PositiveNumber);
  g->add_option("--duration", gen.duration, "Trajectory duration (s)")->capture_default_str();
  g->add_option("--teams", gen.teams, "Team sizes to draw from")->capture_default_str()->delimiter(',');
  g->add_option("--range", gen.range, "Communication radius R (m)")->capture_default_str();
  g->add_option("--consensus", gen.consensus, "Expert consensus term")
      ->capture_default_str()
      ->check(CLI::IsMember({"mean_velocity", "relative"}));

  TrainArgs tr;
  TrainFlags tf{};
  auto* t = app.add_subcommand("train", "Imitation learning with DAGGER");
  t->add_option("--seed", tr.seed, "Random seed")->required();
  t->add_option("--dataset", tr.dataset, "Dataset file")->required();
  t->add_option("--out", tr.out, "Checkpoint file")->required();
  t->add_option("--metrics", tr.metrics, "Metrics file (default: <out>.metrics.jsonl)");
  t->add_option("--config", tr.config, "Training config JSON; flags override it");
  tf.model = t->add_option("--model", tr.model, "Model kind")->capture_default_str()->check(
      CLI::IsMember({"ggnn", "lgtc", "cfgc"}));
  tf.epochs = t->add_option("--epochs", tr.epochs)->capture_default_str()->check(CLI::NonNegativeNumber);
  tf.dagger_every = t->add_option("--dagger-every", tr.dagger_every, "Epochs between DAGGER rounds (0: off)")
                        ->capture_default_str();
  tf.dagger_rollouts =
      t->add_option("--dagger-rollouts", tr.dagger_rollouts, "Rollouts per round (-1: one per training trajectory)")
          ->capture_default_str();
  tf.batch_size = t->add_option("--batch-size", tr.batch_size, "Trajectories per update")->capture_default_str();
  tf.lr = t->add_option("--lr", tr.lr, "Adam learning rate")->capture_default_str();
  tf.beta = t->add_option("--beta", tr.beta, "Softplus sharpness of the stability penalty")->capture_default_str();
  tf.no_regularizer = t->add_flag("--no-regularizer", tr.no_regularizer, "Disable the stability penalty");
  tf.clip = t->add_option("--clip", tr.clip, "Gradient clipping limit")->capture_default_str();
  tf.hidden = t->add_option("--hidden", tr.hidden, "Encoder/readout width")->capture_default_str();
  tf.features = t->add_option("--features", tr.features, "State features F")->capture_default_str();
  tf.taps = t->add_option("--taps", tr.taps, "Filter length K")->capture_default_str();
  tf.f_shared = t->add_option("--f-shared", tr.f_shared, "Communicated state features")->capture_default_str();
  tf.g_shared = t->add_option("--g-shared", tr.g_shared, "Communicated input features")->capture_default_str();
  tf.t_cf = t->add_option("--t-cf", tr.t_cf, "Closed-form horizon")->capture_default_str();
  tf.epsilon = t->add_option("--epsilon", tr.epsilon, "Division guard")->capture_default_str();
  tf.solver_steps = t->add_option("--solver-steps", tr.solver_steps, "Hybrid steps per tick (lgtc)")
                        ->capture_default_str();
  t->add_flag("--quiet", tr.quiet, "No per-epoch progress");

  CheckArgs ck;
  auto* c = app.add_subcommand("check-stability", "Stability certificate of a checkpoint");
  c->add_option("--checkpoint", ck.checkpoint)->required();
  c->add_option("--dataset", ck.dataset, "Take sample supports from this dataset");
  c->add_option("--model", ck.model, "Expected model kind")->check(CLI::IsMember({"ggnn", "lgtc", "cfgc"}));
  c->add_option("--out", ck.out, "Report JSON file (default: stdout)");
  c->add_option("--seed", ck.seed, "Seed for sampled formations")->capture_default_str();
  c->add_option("--samples", ck.samples, "Number of sample supports")->capture_default_str()->check(
      CLI::PositiveNumber);
  c->add_option("--s-bar", ck.s_bar, "Override the support norm bound");
  c->add_option("--s-tilde", ck.s_tilde, "Lower support norm bound (with --s-bar)");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Sweep team size and communication range");
  e->add_option("--checkpoint", ev.checkpoint, "Learned controller (omit for expert only)");
  e->add_option("--out", ev.out, "CSV file")->required();
  e->add_option("--seed", ev.seed)->required();
  e->add_option("--teams", ev.teams)->capture_default_str()->delimiter(',');
  e->add_option("--range", ev.ranges, "Communication radii (m)")->capture_default_str()->delimiter(',');
  e->add_option("--episodes", ev.episodes)->capture_default_str()->check(CLI::PositiveNumber);
  e->add_option("--duration", ev.duration)->capture_default_str();
  e->add_option("--consensus", ev.consensus)->capture_default_str()->check(
      CLI::IsMember({"mean_velocity", "relative"}));

  SimArgs sim;
  auto* s = app.add_subcommand("simulate", "Export one rollout as CSV");
  s->add_option("--checkpoint", sim.checkpoint, "Learned controller (omit for expert)");
  s->add_option("--out", sim.out, "CSV file")->required();
  s->add_option("--seed", sim.seed)->capture_default_str();
  s->add_option("--agents", sim.agents)->capture_default_str()->check(CLI::Range(2, 100000));
  s->add_option("--range", sim.range)->capture_default_str();
  s->add_option("--duration", sim.duration)->capture_default_str();
  s->add_option("--consensus", sim.consensus)->capture_default_str()->check(
      CLI::IsMember({"mean_velocity", "relative"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*g) return cmd_gen_data(gen);
    if (*t) return cmd_train(tr, tf);
    if (*c) return cmd_check_stability(ck);
    if (*e) return cmd_eval(ev);
    if (*s) return cmd_simulate(sim);
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
