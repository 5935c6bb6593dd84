#include "actbridge/toybench.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "actbridge/tensor.hpp"
#include "json.hpp"

namespace actbridge {

namespace {

using nlohmann::json;

// Instruction vocabulary. Verbs 1..4, colors 10..13, zones 20..23,
// directions 30..31, "on" 32. All well below the configured vocab.
constexpr int kVerbPlace = 1;
constexpr int kVerbMove = 2;
constexpr int kVerbStack = 3;
constexpr int kVerbThen = 4;
constexpr int kColorBase = 10;
constexpr int kZoneBase = 20;
constexpr int kDirBase = 30;  // 30 = left, 31 = right
constexpr int kTokenOn = 32;

constexpr double kTravelHeight = 0.12;
constexpr double kPlaceHeight = 0.05;
constexpr double kStackRelease = 0.10;
constexpr double kAlignTol = 0.01;

double clampd(double v, double lo, double hi) {
  return std::min(hi, std::max(lo, v));
}

double hdist(double ax, double ay, double bx, double by) {
  return std::hypot(ax - bx, ay - by);
}

// Relaxed check used by the expert to pick the active subgoal: ignores
// the gripper so an earlier placement stays "done" while the arm is busy
// with the next object.
bool predicate_progressed(const WorldState& s, const Predicate& p) {
  const ObjectState& obj = s.objects.at(static_cast<std::size_t>(p.object));
  if (obj.held) return false;
  if (p.kind == Predicate::kInZone) {
    const Zone& z = s.zones.at(static_cast<std::size_t>(p.target));
    return hdist(obj.x, obj.y, z.x, z.y) <= z.radius;
  }
  const ObjectState& lower = s.objects.at(static_cast<std::size_t>(p.target));
  return hdist(obj.x, obj.y, lower.x, lower.y) <= 0.05 && obj.z > lower.z;
}

int first_unmet(const WorldState& s, const TaskSpec& task) {
  for (std::size_t i = 0; i < task.predicates.size(); ++i)
    if (!predicate_progressed(s, task.predicates[i])) return static_cast<int>(i);
  return -1;
}

}  // namespace

const char kDatasetSchema[] = "toybench.v1";

const char* template_name(TaskTemplate t) {
  switch (t) {
    case TaskTemplate::kPickPlace: return "pick_place";
    case TaskTemplate::kMoveLeftRight: return "move_left_right";
    case TaskTemplate::kStack: return "stack";
    case TaskTemplate::kLongHorizon2Stage: return "long_horizon_2stage";
  }
  return "unknown";
}

WorldState env_step(const WorldState& state, const std::vector<double>& action) {
  if (action.size() != PolicyConfig::kActionDim)
    throw ShapeError("env_step: action must have 7 dims");
  for (double a : action)
    if (!std::isfinite(a)) throw NonFiniteError("env_step: non-finite action");

  WorldState next = state;
  next.ex = clampd(next.ex + clampd(action[0], -kDeltaClamp, kDeltaClamp), 0, 1);
  next.ey = clampd(next.ey + clampd(action[1], -kDeltaClamp, kDeltaClamp), 0, 1);
  next.ez = clampd(next.ez + clampd(action[2], -kDeltaClamp, kDeltaClamp), 0, 1);

  bool close_cmd = action[6] > 0;

  if (!close_cmd && !next.gripper_open) {
    // Release: the object settles straight down, stacking if another
    // object sits within 0.05 horizontally.
    next.gripper_open = true;
    for (auto& o : next.objects) {
      if (!o.held) continue;
      o.held = false;
      o.x = next.ex;
      o.y = next.ey;
      double rest = 0.0;
      for (const auto& other : next.objects) {
        if (other.id == o.id || other.held) continue;
        if (hdist(o.x, o.y, other.x, other.y) <= 0.05)
          rest = std::max(rest, other.z + kObjectHeight);
      }
      o.z = rest;
    }
  } else if (close_cmd) {
    next.gripper_open = false;
    if (next.held_object() == nullptr) {
      // Grasp the nearest object within reach.
      ObjectState* best = nullptr;
      double best_d = kGraspRadius;
      for (auto& o : next.objects) {
        double d = std::sqrt((o.x - next.ex) * (o.x - next.ex) +
                             (o.y - next.ey) * (o.y - next.ey) +
                             (o.z - next.ez) * (o.z - next.ez));
        if (d <= best_d) {
          best_d = d;
          best = &o;
        }
      }
      if (best != nullptr) best->held = true;
    }
  }

  for (auto& o : next.objects) {
    if (o.held) {
      o.x = next.ex;
      o.y = next.ey;
      o.z = next.ez;
    }
  }
  return next;
}

bool predicate_satisfied(const WorldState& state, const Predicate& pred) {
  const ObjectState& obj =
      state.objects.at(static_cast<std::size_t>(pred.object));
  if (obj.held) return false;
  if (pred.kind == Predicate::kInZone) {
    const Zone& z = state.zones.at(static_cast<std::size_t>(pred.target));
    return state.gripper_open && hdist(obj.x, obj.y, z.x, z.y) <= z.radius;
  }
  const ObjectState& lower =
      state.objects.at(static_cast<std::size_t>(pred.target));
  return hdist(obj.x, obj.y, lower.x, lower.y) <= 0.05 && obj.z > lower.z;
}

Scenario make_scenario(TaskTemplate tmpl, Rng& rng) {
  auto place = [&rng]() {
    return std::pair<double, double>{rng.uniform(0.15, 0.85),
                                     rng.uniform(0.15, 0.85)};
  };

  for (int attempt = 0; attempt < 1000; ++attempt) {
    Scenario sc;
    sc.task.tmpl = tmpl;
    WorldState& w = sc.world;
    w.ex = rng.uniform(0.3, 0.7);
    w.ey = rng.uniform(0.3, 0.7);
    w.ez = kTravelHeight;

    switch (tmpl) {
      case TaskTemplate::kPickPlace: {
        int color = static_cast<int>(rng.next_below(4));
        auto [ox, oy] = place();
        auto [zx, zy] = place();
        if (hdist(ox, oy, zx, zy) < 0.25) continue;
        w.objects.push_back({0, color, ox, oy, 0, false});
        w.zones.push_back({0, zx, zy, 0.08});
        sc.task.instruction_ids = {kVerbPlace, kColorBase + color, kZoneBase};
        sc.task.predicates = {{Predicate::kInZone, 0, 0}};
        break;
      }
      case TaskTemplate::kMoveLeftRight: {
        int color = static_cast<int>(rng.next_below(4));
        auto [ox, oy] = place();
        double yl = rng.uniform(0.2, 0.8);
        double yr = rng.uniform(0.2, 0.8);
        int dir = static_cast<int>(rng.next_below(2));  // 0 left, 1 right
        w.objects.push_back({0, color, ox, oy, 0, false});
        w.zones.push_back({0, 0.1, yl, 0.08});
        w.zones.push_back({1, 0.9, yr, 0.08});
        const Zone& tgt = w.zones[static_cast<std::size_t>(dir)];
        if (hdist(ox, oy, tgt.x, tgt.y) < 0.25) continue;
        sc.task.instruction_ids = {kVerbMove, kColorBase + color,
                                   kDirBase + dir};
        sc.task.predicates = {{Predicate::kInZone, 0, dir}};
        break;
      }
      case TaskTemplate::kStack: {
        int c0 = static_cast<int>(rng.next_below(4));
        int c1 = (c0 + 1 + static_cast<int>(rng.next_below(3))) % 4;
        auto [x0, y0] = place();
        auto [x1, y1] = place();
        if (hdist(x0, y0, x1, y1) < 0.25) continue;
        w.objects.push_back({0, c0, x0, y0, 0, false});
        w.objects.push_back({1, c1, x1, y1, 0, false});
        int upper = static_cast<int>(rng.next_below(2));
        int lower = 1 - upper;
        sc.task.instruction_ids = {kVerbStack,
                                   kColorBase + w.objects[upper].color,
                                   kTokenOn,
                                   kColorBase + w.objects[lower].color};
        sc.task.predicates = {{Predicate::kStacked, upper, lower}};
        break;
      }
      case TaskTemplate::kLongHorizon2Stage: {
        int c0 = static_cast<int>(rng.next_below(4));
        int c1 = (c0 + 1 + static_cast<int>(rng.next_below(3))) % 4;
        auto [x0, y0] = place();
        auto [x1, y1] = place();
        auto [zx0, zy0] = place();
        auto [zx1, zy1] = place();
        double pts[4][2] = {{x0, y0}, {x1, y1}, {zx0, zy0}, {zx1, zy1}};
        bool ok = true;
        for (int i = 0; i < 4 && ok; ++i)
          for (int j = i + 1; j < 4; ++j)
            if (hdist(pts[i][0], pts[i][1], pts[j][0], pts[j][1]) < 0.2)
              ok = false;
        if (!ok) continue;
        w.objects.push_back({0, c0, x0, y0, 0, false});
        w.objects.push_back({1, c1, x1, y1, 0, false});
        w.zones.push_back({0, zx0, zy0, 0.08});
        w.zones.push_back({1, zx1, zy1, 0.08});
        sc.task.instruction_ids = {kVerbThen, kColorBase + c0, kZoneBase,
                                   kColorBase + c1, kZoneBase + 1};
        sc.task.predicates = {{Predicate::kInZone, 0, 0},
                              {Predicate::kInZone, 1, 1}};
        break;
      }
    }
    return sc;
  }
  throw DatasetError("make_scenario: layout rejection budget exceeded");
}

namespace {

// One proportional step toward the active subgoal.
std::vector<double> expert_action(const WorldState& s, const TaskSpec& task) {
  std::vector<double> a(PolicyConfig::kActionDim, 0.0);
  a[6] = s.gripper_open ? -1.0 : 1.0;

  int active = first_unmet(s, task);
  if (active < 0) {
    a[6] = -1.0;
    return a;
  }
  const Predicate& pred = task.predicates[static_cast<std::size_t>(active)];
  const ObjectState& obj =
      s.objects.at(static_cast<std::size_t>(pred.object));

  double tx, ty, release_z;
  if (pred.kind == Predicate::kInZone) {
    const Zone& z = s.zones.at(static_cast<std::size_t>(pred.target));
    tx = z.x;
    ty = z.y;
    release_z = kPlaceHeight;
  } else {
    const ObjectState& lower =
        s.objects.at(static_cast<std::size_t>(pred.target));
    tx = lower.x;
    ty = lower.y;
    release_z = kStackRelease;
  }

  // Proportional approach, clamped to what the env will execute. The
  // gain keeps each step a contraction toward the target, so open-loop
  // replay of a slightly wrong chunk still converges instead of
  // overshooting and oscillating around the goal.
  auto go = [&a, &s](double gx, double gy, double gz) {
    a[0] = clampd(0.6 * (gx - s.ex), -kDeltaClamp, kDeltaClamp);
    a[1] = clampd(0.6 * (gy - s.ey), -kDeltaClamp, kDeltaClamp);
    a[2] = clampd(0.6 * (gz - s.ez), -kDeltaClamp, kDeltaClamp);
  };

  if (!obj.held) {
    if (s.held_object() != nullptr) {
      a[6] = -1.0;  // wrong object; drop it
      return a;
    }
    a[6] = -1.0;
    double dh = hdist(s.ex, s.ey, obj.x, obj.y);
    double d3 = std::hypot(dh, s.ez - obj.z);
    if (d3 <= kGraspRadius - 0.005) {
      go(obj.x, obj.y, obj.z);
      a[6] = 1.0;  // within reach: close
    } else if (dh <= 2 * kAlignTol) {
      go(obj.x, obj.y, obj.z);  // roughly above: descend, keep centering
    } else {
      go(obj.x, obj.y, kTravelHeight);
    }
    return a;
  }

  a[6] = 1.0;
  if (hdist(s.ex, s.ey, tx, ty) > 2 * kAlignTol) {
    // Lift before traveling. Horizontal motion toward the drop target
    // only starts once the object is held and high, so a chunk whose
    // grasp misses lifts in place and the next chunk retries instead
    // of carrying on to the target empty-handed.
    if (s.ez < kTravelHeight - 0.01)
      go(s.ex, s.ey, kTravelHeight);
    else
      go(tx, ty, kTravelHeight);
  } else if (s.ez > release_z + 0.005) {
    go(tx, ty, release_z);
  } else {
    a[6] = -1.0;  // in place: open
  }
  return a;
}

}  // namespace

std::vector<double> scripted_expert(const WorldState& state,
                                    const TaskSpec& task,
                                    std::size_t horizon) {
  std::vector<double> chunk;
  chunk.reserve(horizon * PolicyConfig::kActionDim);
  WorldState sim = state;
  for (std::size_t h = 0; h < horizon; ++h) {
    std::vector<double> a = expert_action(sim, task);
    chunk.insert(chunk.end(), a.begin(), a.end());
    sim = env_step(sim, a);
  }
  return chunk;
}

ObservationStub observe(const WorldState& state, const TaskSpec& task,
                        const PolicyConfig& cfg) {
  const std::size_t G = cfg.grid;
  const std::size_t g = cfg.gripper_grid;
  const std::size_t c = cfg.channels;
  if (c < 12) throw ConfigError("observe: needs at least 12 channels");

  ObservationStub obs;
  obs.third_view_grid.assign(G * G * c, 0.0);
  obs.gripper_patch.assign(g * g * c, 0.0);

  // Channels carry the absolute window coordinates, not within-cell
  // offsets: pooled attention features then stay linearly informative
  // about entity positions even when attention weights are near-uniform.
  auto paint = [&c](std::vector<double>& buf, std::size_t cells,
                    double u, double v, std::size_t base_ch,
                    double id_val, double extra) {
    double cu = clampd(u, 0.0, 1.0 - 1e-9) * static_cast<double>(cells);
    double cv = clampd(v, 0.0, 1.0 - 1e-9) * static_cast<double>(cells);
    auto gx = static_cast<std::size_t>(cu);
    auto gy = static_cast<std::size_t>(cv);
    std::size_t cell = (gy * cells + gx) * c;
    buf[cell + base_ch + 0] = id_val;
    buf[cell + base_ch + 1] = clampd(u, 0.0, 1.0);
    buf[cell + base_ch + 2] = clampd(v, 0.0, 1.0);
    buf[cell + base_ch + 3] = extra;
  };

  for (const auto& o : state.objects) {
    double id_val = (o.color + 1) / 4.0;
    paint(obs.third_view_grid, G, o.x, o.y, 0, id_val, o.held ? 1.0 : 0.0);
    // Gripper view: a zoomed window of half-width 0.1 around the effector.
    double u = (o.x - state.ex + 0.1) / 0.2;
    double v = (o.y - state.ey + 0.1) / 0.2;
    if (u >= 0 && u < 1 && v >= 0 && v < 1)
      paint(obs.gripper_patch, g, u, v, 0, id_val, o.held ? 1.0 : 0.0);
  }
  for (const auto& z : state.zones) {
    double id_val = (z.id + 1) / 4.0;
    paint(obs.third_view_grid, G, z.x, z.y, 4, id_val, 0.0);
    double u = (z.x - state.ex + 0.1) / 0.2;
    double v = (z.y - state.ey + 0.1) / 0.2;
    if (u >= 0 && u < 1 && v >= 0 && v < 1)
      paint(obs.gripper_patch, g, u, v, 4, id_val, 0.0);
  }
  // The effector gets its own channel group in the third view so
  // effector-object geometry is visible to the encoder in the same
  // modality as the entities, not only through the proprio token.
  paint(obs.third_view_grid, G, state.ex, state.ey, 8, 1.0, state.ez);

  obs.instruction_ids = task.instruction_ids;
  obs.proprio = {state.ex, state.ey, state.ez,
                 state.gripper_open ? 1.0 : -1.0,
                 state.held_object() != nullptr ? 1.0 : -1.0};
  if (obs.proprio.size() != cfg.proprio_dim)
    throw ConfigError("observe: proprio_dim must be 5");
  return obs;
}

EpisodeResult run_episode(
    const PolicyFn& policy, std::size_t horizon, const Scenario& scenario,
    const PolicyConfig& cfg,
    const std::function<void(const ObservationStub&,
                             const std::vector<double>&)>& on_query) {
  EpisodeResult res;
  res.tmpl = scenario.task.tmpl;
  WorldState state = scenario.world;
  const auto& preds = scenario.task.predicates;
  std::size_t latched = 0;
  int steps = 0;

  while (steps < kEpisodeCap) {
    ObservationStub obs = observe(state, scenario.task, cfg);
    std::vector<double> chunk;
    try {
      chunk = policy(obs);
    } catch (const NonFiniteError&) {
      break;
    }
    if (chunk.size() != horizon * PolicyConfig::kActionDim)
      throw ShapeError("run_episode: chunk size mismatch");
    if (on_query) on_query(obs, chunk);

    bool aborted = false;
    for (std::size_t h = 0; h < horizon && steps < kEpisodeCap; ++h) {
      std::vector<double> a(
          chunk.begin() +
              static_cast<std::ptrdiff_t>(h * PolicyConfig::kActionDim),
          chunk.begin() +
              static_cast<std::ptrdiff_t>((h + 1) * PolicyConfig::kActionDim));
      try {
        state = env_step(state, a);
      } catch (const NonFiniteError&) {
        aborted = true;
        break;
      }
      ++steps;
      while (latched < preds.size() &&
             predicate_satisfied(state, preds[latched]))
        ++latched;
      if (latched == preds.size()) {
        res.success = true;
        res.steps_used = steps;
        return res;
      }
    }
    if (aborted) break;
  }
  res.steps_used = steps;
  res.first_failure = static_cast<int>(latched);
  return res;
}

Dataset generate_dataset(std::size_t n_episodes,
                         const std::vector<TaskTemplate>& templates,
                         std::uint64_t seed, const PolicyConfig& cfg) {
  if (templates.empty())
    throw DatasetError("generate_dataset: no templates given");
  Dataset ds;
  Rng base = Rng(seed).split(0x747261696eULL);  // "train"

  for (std::size_t e = 0; e < n_episodes; ++e) {
    TaskTemplate tmpl = templates[e % templates.size()];
    std::uint64_t pseed = base.split(e).next_u64();
    ds.placement_seeds.insert(pseed);
    Rng rng(pseed);
    Scenario sc = make_scenario(tmpl, rng);

    // The expert reads the simulator state directly; track it alongside
    // the rollout so recorded chunks match executed chunks exactly.
    WorldState tracked = sc.world;
    std::size_t H = cfg.horizon;
    PolicyFn expert = [&tracked, &sc, H](const ObservationStub&) {
      return scripted_expert(tracked, sc.task, H);
    };
    int step_in_episode = 0;
    // Chunked execution is open loop, so a trained policy drifts into
    // states the expert trajectory never visits. Pair every
    // on-trajectory chunk with a corrective chunk from a jittered
    // effector state to cover that neighborhood.
    Rng jitter = Rng(pseed).split(0x6a6974ULL);
    auto push_record = [&](const ObservationStub& obs,
                           const std::vector<double>& chunk) {
      StepRecord r;
      r.grid = obs.third_view_grid;
      r.gripper = obs.gripper_patch;
      r.instruction = obs.instruction_ids;
      r.proprio = obs.proprio;
      r.chunk = chunk;
      r.task_template = static_cast<int>(tmpl);
      r.episode = pseed;
      r.step = step_in_episode;
      ds.records.push_back(std::move(r));
    };
    auto record = [&](const ObservationStub& obs,
                      const std::vector<double>& chunk) {
      push_record(obs, chunk);
      WorldState off = tracked;
      off.ex = clampd(off.ex + jitter.uniform(-0.08, 0.08), 0, 1);
      off.ey = clampd(off.ey + jitter.uniform(-0.08, 0.08), 0, 1);
      off.ez = clampd(off.ez + jitter.uniform(-0.06, 0.06), 0, 1);
      for (auto& o : off.objects)
        if (o.held) {
          o.x = off.ex;
          o.y = off.ey;
          o.z = off.ez;
        }
      push_record(observe(off, sc.task, cfg),
                  scripted_expert(off, sc.task, H));
      // The approach cone above the next object to pick is where missed
      // grasps strand the policy, and on-trajectory data barely covers
      // it. Sample it densely, including a closed-empty gripper.
      int active = first_unmet(tracked, sc.task);
      if (active >= 0 && tracked.held_object() == nullptr) {
        const Predicate& pr =
            sc.task.predicates[static_cast<std::size_t>(active)];
        const ObjectState& tgt =
            tracked.objects[static_cast<std::size_t>(pr.object)];
        WorldState cone = tracked;
        cone.ex = clampd(tgt.x + jitter.uniform(-0.05, 0.05), 0, 1);
        cone.ey = clampd(tgt.y + jitter.uniform(-0.05, 0.05), 0, 1);
        cone.ez = clampd(tgt.z + jitter.uniform(0.0, 0.14), 0, 1);
        cone.gripper_open = jitter.uniform(0.0, 1.0) > 0.25;
        push_record(observe(cone, sc.task, cfg),
                    scripted_expert(cone, sc.task, H));
      }
      // Replay the chunk so `tracked` mirrors the env between queries.
      for (std::size_t h = 0; h < H; ++h) {
        std::vector<double> a(
            chunk.begin() +
                static_cast<std::ptrdiff_t>(h * PolicyConfig::kActionDim),
            chunk.begin() +
                static_cast<std::ptrdiff_t>((h + 1) *
                                            PolicyConfig::kActionDim));
        tracked = env_step(tracked, a);
      }
      step_in_episode += static_cast<int>(H);
    };

    EpisodeResult r = run_episode(expert, H, sc, cfg, record);
    if (!r.success)
      throw DatasetError(std::string("generate_dataset: expert failed on ") +
                         template_name(tmpl));
  }
  return ds;
}

namespace {

json record_to_json(const StepRecord& r) {
  return json{{"chunk", r.chunk},       {"episode", r.episode},
              {"grid", r.grid},         {"gripper", r.gripper},
              {"instruction", r.instruction},
              {"proprio", r.proprio},   {"step", r.step},
              {"template", r.task_template}};
}

StepRecord record_from_json(const json& j) {
  StepRecord r;
  r.grid = j.at("grid").get<std::vector<double>>();
  r.gripper = j.at("gripper").get<std::vector<double>>();
  r.instruction = j.at("instruction").get<std::vector<int>>();
  r.proprio = j.at("proprio").get<std::vector<double>>();
  r.chunk = j.at("chunk").get<std::vector<double>>();
  r.task_template = j.at("template").get<int>();
  r.episode = j.at("episode").get<std::uint64_t>();
  r.step = j.at("step").get<int>();
  return r;
}

}  // namespace

void save_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("save_dataset: cannot open " + path);
  json header{{"records", ds.records.size()},
              {"schema", kDatasetSchema},
              {"seeds", std::vector<std::uint64_t>(ds.placement_seeds.begin(),
                                                   ds.placement_seeds.end())}};
  out << header.dump() << "\n";
  for (const auto& r : ds.records) out << record_to_json(r).dump() << "\n";
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("load_dataset: cannot open " + path);
  std::string line;
  if (!std::getline(in, line))
    throw DatasetError("load_dataset: empty file " + path);
  json header = json::parse(line, nullptr, false);
  if (header.is_discarded() || !header.contains("schema") ||
      header.at("schema").get<std::string>() != kDatasetSchema)
    throw DatasetError("load_dataset: bad schema header in " + path);

  Dataset ds;
  for (auto s : header.at("seeds").get<std::vector<std::uint64_t>>())
    ds.placement_seeds.insert(s);
  auto expected = header.at("records").get<std::size_t>();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw DatasetError("load_dataset: malformed record line");
    ds.records.push_back(record_from_json(j));
  }
  if (ds.records.size() != expected)
    throw DatasetError("load_dataset: record count mismatch");
  return ds;
}

std::uint64_t dataset_hash(const Dataset& ds) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  auto feed = [&h](const std::string& s) {
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 1099511628211ULL;
    }
  };
  for (const auto& r : ds.records) feed(record_to_json(r).dump());
  return h;
}

double SuccessTable::average() const {
  if (success_rate.empty()) return 0.0;
  double sum = 0;
  for (double s : success_rate) sum += s;
  return sum / static_cast<double>(success_rate.size());
}

std::string SuccessTable::format() const {
  std::ostringstream out;
  for (std::size_t i = 0; i < templates.size(); ++i) {
    out << template_name(templates[i]) << ": " << success_rate[i] << "%\n";
  }
  out << "average: " << average() << "%\n";
  return out.str();
}

SuccessTable evaluate(const PolicyFn& policy, std::size_t horizon,
                      const std::vector<TaskTemplate>& templates,
                      std::size_t episodes_per_task, std::uint64_t seed,
                      const PolicyConfig& cfg,
                      const std::set<std::uint64_t>* train_seeds) {
  SuccessTable table;
  table.templates = templates;
  Rng base = Rng(seed).split(0x6576616cULL);  // "eval"

  for (std::size_t ti = 0; ti < templates.size(); ++ti) {
    std::size_t succ = 0;
    for (std::size_t e = 0; e < episodes_per_task; ++e) {
      std::uint64_t pseed =
          base.split((static_cast<std::uint64_t>(ti) << 32) | e).next_u64();
      if (train_seeds != nullptr && train_seeds->count(pseed) != 0)
        throw DatasetError("evaluate: placement seed overlaps training set");
      Rng rng(pseed);
      Scenario sc = make_scenario(templates[ti], rng);
      EpisodeResult r = run_episode(policy, horizon, sc, cfg);
      if (r.success) ++succ;
      table.episodes.push_back(r);
    }
    table.success_rate.push_back(
        100.0 * static_cast<double>(succ) /
        static_cast<double>(std::max<std::size_t>(1, episodes_per_task)));
  }
  return table;
}

}  // namespace actbridge
