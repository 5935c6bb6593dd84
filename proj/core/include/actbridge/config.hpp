#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace actbridge {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Variant { kL1, kDit };

enum class Routing {
  kLastRaw,
  kLastAq,
  kMidRaw,
  kAllRaw,
  kAllAq,
  kAllBoth,
};

// Which attention branches get scaled by tanh(g). The first entry of the
// pair is the raw-condition branch, the second the query branch.
enum class GateMode {
  kGateRawFixAq,  // (tanh g, 1) — default
  kFixBoth,       // (1, 1)
  kFixRawGateAq,  // (1, tanh g)
  kGateBoth,      // (tanh g, tanh g)
};

struct PolicyConfig {
  Variant variant = Variant::kL1;
  bool pro = false;
  bool rope = true;  // Pro variant only
  Routing routing = Routing::kAllBoth;
  std::size_t n_query = 8;
  GateMode gate_mode = GateMode::kGateRawFixAq;
  std::size_t layers = 4;   // M
  std::size_t hidden = 64;  // d
  std::size_t heads = 4;
  std::size_t horizon = 8;  // H
  std::uint64_t seed = 0;

  // Diffusion head (variant == kDit).
  std::size_t diffusion_steps = 50;  // T
  double beta_min = 1e-4;
  double beta_max = 2e-2;

  // Observation extents. Width of the encoder equals `hidden`, so the
  // policy consumes conditions without an adapter projection.
  std::size_t grid = 4;          // G
  std::size_t gripper_grid = 2;  // g
  std::size_t channels = 12;     // c
  std::size_t proprio_dim = 5;   // P_dim
  std::size_t vocab = 64;
  bool causal_encoder = false;

  static constexpr std::size_t kActionDim = 7;  // A

  std::size_t max_seq_len() const {
    return grid * grid + gripper_grid * gripper_grid + 16 + n_query;
  }

  void validate() const;
};

struct TrainConfig {
  double lr = 1e-4;
  std::size_t batch_size = 16;
  std::size_t max_steps = 2000;
  double warmup_fraction = 0.1;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  bool freeze_backbone = false;
  std::string loss = "l1";  // l1 | ddpm
  std::size_t eval_every = 0;  // 0 disables periodic eval

  void validate() const;
};

struct RunConfig {
  PolicyConfig policy;
  TrainConfig train;
};

// Desk-scale default (M=4, d=64, heads=4, H=8, N_q=8).
PolicyConfig desk_preset();
// Mirror of the full-scale hyperparameters (M=24, d=896, heads=8, N_q=64).
PolicyConfig reference_preset();

std::string to_string(Routing r);
std::string to_string(GateMode m);
Routing routing_from_string(const std::string& s);
GateMode gate_mode_from_string(const std::string& s);

// Parses a JSON config file with top-level "policy" and "train" sections.
// Unknown keys at any level are errors.
RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const std::string& json_text);
std::string dump_run_config(const RunConfig& cfg);

}  // namespace actbridge
