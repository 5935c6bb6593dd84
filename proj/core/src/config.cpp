#include "actbridge/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace actbridge {

using nlohmann::json;

void PolicyConfig::validate() const {
  if (hidden == 0 || layers == 0 || horizon == 0)
    throw ConfigError("hidden, layers, and horizon must be positive");
  if (heads == 0 || hidden % heads != 0)
    throw ConfigError("hidden (" + std::to_string(hidden) +
                      ") must be divisible by heads (" +
                      std::to_string(heads) + ")");
  if (n_query == 0)
    throw ConfigError("n_query must be positive: the ActionQuery path "
                      "cannot be empty");
  if (pro && (hidden / heads) % 2 != 0)
    throw ConfigError("pro variant requires an even head dimension for "
                      "rotary embeddings; got " +
                      std::to_string(hidden / heads));
  if (variant == Variant::kDit) {
    if (diffusion_steps == 0)
      throw ConfigError("diffusion_steps must be positive");
    if (!(beta_min > 0.0 && beta_max < 1.0 && beta_min <= beta_max))
      throw ConfigError("betas must satisfy 0 < beta_min <= beta_max < 1");
  }
}

void TrainConfig::validate() const {
  if (lr <= 0.0) throw ConfigError("lr must be positive");
  if (warmup_fraction < 0.0 || warmup_fraction >= 1.0)
    throw ConfigError("warmup_fraction must be in [0, 1)");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (loss != "l1" && loss != "ddpm")
    throw ConfigError("loss must be 'l1' or 'ddpm', got '" + loss + "'");
}

PolicyConfig desk_preset() { return PolicyConfig{}; }

PolicyConfig reference_preset() {
  PolicyConfig cfg;
  cfg.layers = 24;
  cfg.hidden = 896;
  cfg.heads = 8;
  cfg.horizon = 8;
  cfg.n_query = 64;
  return cfg;
}

std::string to_string(Routing r) {
  switch (r) {
    case Routing::kLastRaw: return "last_raw";
    case Routing::kLastAq: return "last_aq";
    case Routing::kMidRaw: return "mid_raw";
    case Routing::kAllRaw: return "all_raw";
    case Routing::kAllAq: return "all_aq";
    case Routing::kAllBoth: return "all_both";
  }
  return "?";
}

std::string to_string(GateMode m) {
  switch (m) {
    case GateMode::kGateRawFixAq: return "gate_raw_fix_aq";
    case GateMode::kFixBoth: return "fix_both";
    case GateMode::kFixRawGateAq: return "fix_raw_gate_aq";
    case GateMode::kGateBoth: return "gate_both";
  }
  return "?";
}

Routing routing_from_string(const std::string& s) {
  if (s == "last_raw") return Routing::kLastRaw;
  if (s == "last_aq") return Routing::kLastAq;
  if (s == "mid_raw") return Routing::kMidRaw;
  if (s == "all_raw") return Routing::kAllRaw;
  if (s == "all_aq") return Routing::kAllAq;
  if (s == "all_both") return Routing::kAllBoth;
  throw ConfigError("unknown routing: '" + s + "'");
}

GateMode gate_mode_from_string(const std::string& s) {
  if (s == "gate_raw_fix_aq") return GateMode::kGateRawFixAq;
  if (s == "fix_both") return GateMode::kFixBoth;
  if (s == "fix_raw_gate_aq") return GateMode::kFixRawGateAq;
  if (s == "gate_both") return GateMode::kGateBoth;
  throw ConfigError("unknown gate_mode: '" + s + "'");
}

namespace {

void check_keys(const json& obj, const std::set<std::string>& allowed,
                const std::string& section) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!allowed.count(it.key()))
      throw ConfigError("unknown config key '" + it.key() + "' in section '" +
                        section + "'");
  }
}

template <typename T>
void maybe(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

PolicyConfig parse_policy(const json& obj) {
  static const std::set<std::string> allowed = {
      "preset",   "variant",     "pro",        "rope",      "routing",
      "n_query",  "gate_mode",   "M",          "d",         "heads",
      "H",        "seed",        "T",          "beta_min",  "beta_max",
      "grid",     "gripper_grid", "channels",  "proprio_dim", "vocab",
      "causal_encoder"};
  check_keys(obj, allowed, "policy");
  PolicyConfig cfg;
  if (obj.contains("preset")) {
    const std::string p = obj.at("preset").get<std::string>();
    if (p == "desk")
      cfg = desk_preset();
    else if (p == "reference")
      cfg = reference_preset();
    else
      throw ConfigError("unknown preset '" + p + "'");
  }
  if (obj.contains("variant")) {
    const std::string v = obj.at("variant").get<std::string>();
    if (v == "l1")
      cfg.variant = Variant::kL1;
    else if (v == "dit")
      cfg.variant = Variant::kDit;
    else
      throw ConfigError("variant must be 'l1' or 'dit', got '" + v + "'");
  }
  maybe(obj, "pro", cfg.pro);
  maybe(obj, "rope", cfg.rope);
  if (obj.contains("routing"))
    cfg.routing = routing_from_string(obj.at("routing").get<std::string>());
  maybe(obj, "n_query", cfg.n_query);
  if (obj.contains("gate_mode"))
    cfg.gate_mode =
        gate_mode_from_string(obj.at("gate_mode").get<std::string>());
  maybe(obj, "M", cfg.layers);
  maybe(obj, "d", cfg.hidden);
  maybe(obj, "heads", cfg.heads);
  maybe(obj, "H", cfg.horizon);
  maybe(obj, "seed", cfg.seed);
  maybe(obj, "T", cfg.diffusion_steps);
  maybe(obj, "beta_min", cfg.beta_min);
  maybe(obj, "beta_max", cfg.beta_max);
  maybe(obj, "grid", cfg.grid);
  maybe(obj, "gripper_grid", cfg.gripper_grid);
  maybe(obj, "channels", cfg.channels);
  maybe(obj, "proprio_dim", cfg.proprio_dim);
  maybe(obj, "vocab", cfg.vocab);
  maybe(obj, "causal_encoder", cfg.causal_encoder);
  cfg.validate();
  return cfg;
}

TrainConfig parse_train(const json& obj) {
  static const std::set<std::string> allowed = {
      "lr",   "batch_size",     "max_steps", "warmup_fraction",
      "weight_decay", "seed",   "freeze_backbone", "loss", "eval_every"};
  check_keys(obj, allowed, "train");
  TrainConfig cfg;
  maybe(obj, "lr", cfg.lr);
  maybe(obj, "batch_size", cfg.batch_size);
  maybe(obj, "max_steps", cfg.max_steps);
  maybe(obj, "warmup_fraction", cfg.warmup_fraction);
  maybe(obj, "weight_decay", cfg.weight_decay);
  maybe(obj, "seed", cfg.seed);
  maybe(obj, "freeze_backbone", cfg.freeze_backbone);
  maybe(obj, "loss", cfg.loss);
  maybe(obj, "eval_every", cfg.eval_every);
  cfg.validate();
  return cfg;
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(root, {"policy", "train"}, "<top level>");
  RunConfig cfg;
  if (root.contains("policy")) cfg.policy = parse_policy(root.at("policy"));
  if (root.contains("train")) cfg.train = parse_train(root.at("train"));
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str());
}

std::string dump_run_config(const RunConfig& cfg) {
  json p;
  p["variant"] = cfg.policy.variant == Variant::kDit ? "dit" : "l1";
  p["pro"] = cfg.policy.pro;
  p["rope"] = cfg.policy.rope;
  p["routing"] = to_string(cfg.policy.routing);
  p["n_query"] = cfg.policy.n_query;
  p["gate_mode"] = to_string(cfg.policy.gate_mode);
  p["M"] = cfg.policy.layers;
  p["d"] = cfg.policy.hidden;
  p["heads"] = cfg.policy.heads;
  p["H"] = cfg.policy.horizon;
  p["seed"] = cfg.policy.seed;
  p["T"] = cfg.policy.diffusion_steps;
  p["beta_min"] = cfg.policy.beta_min;
  p["beta_max"] = cfg.policy.beta_max;
  p["grid"] = cfg.policy.grid;
  p["gripper_grid"] = cfg.policy.gripper_grid;
  p["channels"] = cfg.policy.channels;
  p["proprio_dim"] = cfg.policy.proprio_dim;
  p["vocab"] = cfg.policy.vocab;
  p["causal_encoder"] = cfg.policy.causal_encoder;
  json t;
  t["lr"] = cfg.train.lr;
  t["batch_size"] = cfg.train.batch_size;
  t["max_steps"] = cfg.train.max_steps;
  t["warmup_fraction"] = cfg.train.warmup_fraction;
  t["weight_decay"] = cfg.train.weight_decay;
  t["seed"] = cfg.train.seed;
  t["freeze_backbone"] = cfg.train.freeze_backbone;
  t["loss"] = cfg.train.loss;
  t["eval_every"] = cfg.train.eval_every;
  json root;
  root["policy"] = p;
  root["train"] = t;
  return root.dump(2);
}

}  // namespace actbridge
