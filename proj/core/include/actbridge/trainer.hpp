#pragma once

#include <memory>
#include <string>
#include <vector>

#include "actbridge/backbone.hpp"
#include "actbridge/bridge_policy.hpp"
#include "actbridge/config.hpp"
#include "actbridge/dit_policy.hpp"
#include "actbridge/param_store.hpp"
#include "actbridge/toybench.hpp"

namespace actbridge {

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Learning rate at `step`: linear ramp from zero over the warmup span,
// then cosine decay to zero at max_steps. Throws past the last step.
double lr_schedule(std::size_t step, const TrainConfig& cfg);

// Position deltas clamp to ±0.05 while the gripper channel is ±1, so
// models train on a rescaled action space where both spans are
// comparable. The gripper channel is additionally upweighted: a grasp
// or release at the wrong step loses the episode outright, which the
// plain per-dimension loss does not reflect. Predictions are mapped
// back before execution.
constexpr double kDeltaScale = 20.0;
constexpr double kGripScale = 2.0;
std::vector<double> to_model_actions(std::vector<double> chunk);
std::vector<double> to_env_actions(std::vector<double> chunk);

// Encoder + policy sharing one parameter store. Non-movable: the
// submodules hold pointers into the store.
struct ModelBundle {
  PolicyConfig cfg;
  ParameterStore store;
  std::unique_ptr<BackboneStub> backbone;
  std::unique_ptr<BridgePolicy> l1;
  std::unique_ptr<DitPolicy> dit;
  NoiseSchedule sched;  // kDit only

  explicit ModelBundle(const PolicyConfig& cfg);
  ModelBundle(const ModelBundle&) = delete;
  ModelBundle& operator=(const ModelBundle&) = delete;

  // Per-record training loss: chunk regression (L1) or noise-prediction
  // MSE (DiT; tau and noise drawn from rng).
  Tensor loss(const StepRecord& rec, Rng& rng) const;

  // Inference: one H x A chunk. `seed` drives DiT sampling only.
  std::vector<double> predict(const ObservationStub& obs,
                              std::uint64_t seed = 0) const;
  PolicyFn as_policy(std::uint64_t seed = 0) const;
};

std::unique_ptr<ModelBundle> make_model(const PolicyConfig& cfg);

// Decoupled weight decay Adam over the trainable parameters, with global
// gradient-norm clipping at 1.0. Parameter and moment values are rounded
// to float32 after every step so checkpoints restore state bit-exactly.
class AdamW {
 public:
  AdamW(ParameterStore& params, const TrainConfig& cfg);

  // Applies one update from the accumulated grads; returns the pre-clip
  // global gradient norm.
  double step(double lr);

  std::size_t steps_done() const { return steps_; }
  ParameterStore& state() { return state_; }
  const ParameterStore& state() const { return state_; }
  void sync_step_from_state();

  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  static constexpr double kClipNorm = 1.0;

 private:
  ParameterStore* params_;
  ParameterStore state_;  // opt.m.<name>, opt.v.<name>, opt.step
  double weight_decay_;
  std::size_t steps_ = 0;
};

struct MetricsRecord {
  std::size_t step = 0;
  double lr = 0;
  double loss = 0;
  double grad_norm = 0;
};

struct TrainReport {
  std::vector<MetricsRecord> metrics;
  double final_loss = 0;
};

// Full loop: uniform minibatches from `data`, scheduled AdamW updates,
// optional JSONL metrics. Aborts with TrainingError naming the producing
// op if any loss turns non-finite.
TrainReport train(ModelBundle& model, const Dataset& data,
                  const TrainConfig& tcfg,
                  const std::string& metrics_path = "");

// Model parameters and optimizer state in a single checkpoint file.
void save_checkpoint(const std::string& path, const ModelBundle& model,
                     const AdamW* opt = nullptr,
                     const std::string& metadata = "");
void load_checkpoint(const std::string& path, ModelBundle& model,
                     AdamW* opt = nullptr, std::string* metadata_out = nullptr);

}  // namespace actbridge
