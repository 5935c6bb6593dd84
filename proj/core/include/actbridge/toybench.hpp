#pragma once

#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "actbridge/backbone.hpp"
#include "actbridge/config.hpp"

namespace actbridge {

struct DatasetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// 2.5-D tabletop world in the unit workspace.
struct ObjectState {
  int id = 0;
  int color = 0;  // 0..3
  double x = 0, y = 0, z = 0;
  bool held = false;
};

struct Zone {
  int id = 0;
  double x = 0, y = 0;
  double radius = 0.08;
};

struct WorldState {
  double ex = 0.5, ey = 0.5, ez = 0.2;  // effector
  bool gripper_open = true;
  std::vector<ObjectState> objects;
  std::vector<Zone> zones;

  const ObjectState* held_object() const {
    for (const auto& o : objects)
      if (o.held) return &o;
    return nullptr;
  }
};

enum class TaskTemplate : int {
  kPickPlace = 0,
  kMoveLeftRight = 1,
  kStack = 2,
  kLongHorizon2Stage = 3,
};

constexpr int kNumTemplates = 4;
const char* template_name(TaskTemplate t);

// Ordered goal predicates. kInZone: object within zone radius with the
// gripper open; kStacked: upper object within 0.05 horizontally of the
// lower one and above it.
struct Predicate {
  enum Kind { kInZone, kStacked } kind = kInZone;
  int object = 0;
  int target = 0;  // zone id or lower-object id
};

struct TaskSpec {
  TaskTemplate tmpl = TaskTemplate::kPickPlace;
  std::vector<int> instruction_ids;
  std::vector<Predicate> predicates;  // satisfied in order
};

struct EpisodeResult {
  TaskTemplate tmpl = TaskTemplate::kPickPlace;
  bool success = false;
  int steps_used = 0;
  int first_failure = -1;  // index of the first unmet predicate
};

constexpr int kEpisodeCap = 160;
constexpr double kDeltaClamp = 0.05;
constexpr double kGraspRadius = 0.03;
constexpr double kObjectHeight = 0.04;

// Kinematic update: clamped deltas, grasp/release handling, held object
// tracking. Deterministic; throws NonFiniteError on NaN actions.
WorldState env_step(const WorldState& state, const std::vector<double>& action);

bool predicate_satisfied(const WorldState& state, const Predicate& pred);

// Randomized scene + task for one template; rejects overlapping layouts.
struct Scenario {
  WorldState world;
  TaskSpec task;
};
Scenario make_scenario(TaskTemplate tmpl, Rng& rng);

// Proportional controller toward the current subgoal, emitting an H-step
// chunk (H rows x 7 action dims, flattened row-major).
std::vector<double> scripted_expert(const WorldState& state,
                                    const TaskSpec& task, std::size_t horizon);

// Observation features for the backbone stub.
ObservationStub observe(const WorldState& state, const TaskSpec& task,
                        const PolicyConfig& cfg);

// ---- dataset ---------------------------------------------------------------

struct StepRecord {
  std::vector<double> grid;      // G*G*c
  std::vector<double> gripper;   // g*g*c
  std::vector<int> instruction;  // token ids
  std::vector<double> proprio;   // P_dim
  std::vector<double> chunk;     // H*A expert actions
  int task_template = 0;
  std::uint64_t episode = 0;
  int step = 0;
};

struct Dataset {
  std::vector<StepRecord> records;
  std::set<std::uint64_t> placement_seeds;
};

extern const char kDatasetSchema[];

// Stratified episode generation: n_episodes split evenly across the
// given templates; same seed yields a byte-identical file.
Dataset generate_dataset(std::size_t n_episodes,
                         const std::vector<TaskTemplate>& templates,
                         std::uint64_t seed, const PolicyConfig& cfg);

void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);
std::uint64_t dataset_hash(const Dataset& ds);

// ---- evaluation ------------------------------------------------------------

// A policy maps an observation to an H x A chunk (flattened row-major).
using PolicyFn =
    std::function<std::vector<double>(const ObservationStub&)>;

struct SuccessTable {
  std::vector<TaskTemplate> templates;
  std::vector<double> success_rate;  // percent, aligned with templates
  std::vector<EpisodeResult> episodes;
  double average() const;
  std::string format() const;
};

// Open-loop chunked evaluation: query every H steps, execute all H
// actions. Placement seeds are drawn from the "eval" stream of `seed`
// and asserted disjoint from `train_seeds` when provided.
SuccessTable evaluate(const PolicyFn& policy, std::size_t horizon,
                      const std::vector<TaskTemplate>& templates,
                      std::size_t episodes_per_task, std::uint64_t seed,
                      const PolicyConfig& cfg,
                      const std::set<std::uint64_t>* train_seeds = nullptr);

// Single-episode rollout used by both evaluation and dataset generation.
// `on_query`, when set, sees every (observation, chunk) pair.
EpisodeResult run_episode(
    const PolicyFn& policy, std::size_t horizon, const Scenario& scenario,
    const PolicyConfig& cfg,
    const std::function<void(const ObservationStub&,
                             const std::vector<double>&)>& on_query = {});

}  // namespace actbridge
