#include "actbridge/trainer.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

namespace actbridge {

double lr_schedule(std::size_t step, const TrainConfig& cfg) {
  if (step >= cfg.max_steps)
    throw TrainingError("lr_schedule: step " + std::to_string(step) +
                        " past max_steps " + std::to_string(cfg.max_steps));
  auto warmup = static_cast<std::size_t>(
      cfg.warmup_fraction * static_cast<double>(cfg.max_steps));
  if (warmup > 0 && step < warmup)
    return cfg.lr * static_cast<double>(step) / static_cast<double>(warmup);
  double span = static_cast<double>(cfg.max_steps - warmup);
  double progress = static_cast<double>(step - warmup) / span;
  return cfg.lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

ModelBundle::ModelBundle(const PolicyConfig& c) : cfg(c) {
  cfg.validate();
  Rng root(cfg.seed);
  Rng brng = root.split(0x6261636bULL);
  backbone = std::make_unique<BackboneStub>(cfg, store, brng);
  Rng prng = root.split(0x706f6c6963ULL);
  if (cfg.variant == Variant::kL1) {
    l1 = std::make_unique<BridgePolicy>(cfg, store, prng);
  } else {
    dit = std::make_unique<DitPolicy>(cfg, store, prng);
    sched = make_noise_schedule(cfg.diffusion_steps, cfg.beta_min,
                                cfg.beta_max);
  }
  store.round_to_f32();
}

std::unique_ptr<ModelBundle> make_model(const PolicyConfig& cfg) {
  return std::make_unique<ModelBundle>(cfg);
}

std::vector<double> to_model_actions(std::vector<double> chunk) {
  for (std::size_t i = 0; i < chunk.size(); ++i)
    if (i % PolicyConfig::kActionDim != PolicyConfig::kActionDim - 1)
      chunk[i] *= kDeltaScale;
    else
      chunk[i] *= kGripScale;
  return chunk;
}

std::vector<double> to_env_actions(std::vector<double> chunk) {
  for (std::size_t i = 0; i < chunk.size(); ++i)
    if (i % PolicyConfig::kActionDim != PolicyConfig::kActionDim - 1)
      chunk[i] /= kDeltaScale;
    else
      chunk[i] /= kGripScale;
  return chunk;
}

Tensor ModelBundle::loss(const StepRecord& rec, Rng& rng) const {
  ObservationStub obs{rec.grid, rec.gripper, rec.instruction, rec.proprio};
  ConditionSet conds = backbone->encode(obs);
  Tensor proprio =
      Tensor::from_data(1, rec.proprio.size(), rec.proprio);
  const std::size_t H = cfg.horizon;
  const std::size_t A = PolicyConfig::kActionDim;
  if (rec.chunk.size() != H * A)
    throw TrainingError("loss: chunk length mismatch");

  if (cfg.variant == Variant::kL1) {
    Tensor target = Tensor::from_data(H, A, to_model_actions(rec.chunk));
    return mean_abs_diff(l1->forward(conds, proprio), target);
  }

  std::size_t tau = static_cast<std::size_t>(rng.next_below(sched.steps));
  std::vector<double> eps(H * A);
  for (double& e : eps) e = rng.normal();
  std::vector<double> noisy =
      add_noise(to_model_actions(rec.chunk), tau, eps, sched);
  Tensor pred = dit->forward(Tensor::from_data(H, A, noisy), tau, conds,
                             proprio);
  return mean_sq_diff(pred, Tensor::from_data(H, A, eps));
}

std::vector<double> ModelBundle::predict(const ObservationStub& obs,
                                         std::uint64_t seed) const {
  ConditionSet conds = backbone->encode(obs);
  Tensor proprio = Tensor::from_data(1, obs.proprio.size(), obs.proprio);
  if (cfg.variant == Variant::kL1)
    return to_env_actions(l1->forward(conds, proprio).data());
  return to_env_actions(dit->sample(conds, proprio, sched, seed));
}

PolicyFn ModelBundle::as_policy(std::uint64_t seed) const {
  return [this, seed](const ObservationStub& obs) {
    return predict(obs, seed);
  };
}

AdamW::AdamW(ParameterStore& params, const TrainConfig& cfg)
    : params_(&params), weight_decay_(cfg.weight_decay) {
  for (const auto& name : params.names()) {
    Tensor t = params.get(name);
    state_.add("opt.m." + name, Tensor::zeros(t.rows(), t.cols()), false);
    state_.add("opt.v." + name, Tensor::zeros(t.rows(), t.cols()), false);
  }
  state_.add("opt.step", Tensor::zeros(1, 1), false);
}

void AdamW::sync_step_from_state() {
  steps_ = static_cast<std::size_t>(state_.get("opt.step").item());
}

double AdamW::step(double lr) {
  const auto trainable = params_->trainable_names();
  double sq = 0;
  for (const auto& name : trainable) {
    Tensor t = params_->get(name);
    if (!t.has_grad()) continue;
    for (double g : t.grad()) sq += g * g;
  }
  double norm = std::sqrt(sq);
  double clip = norm > kClipNorm ? kClipNorm / norm : 1.0;

  ++steps_;
  double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(steps_));
  double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(steps_));

  for (const auto& name : trainable) {
    Tensor t = params_->get(name);
    Tensor m = state_.get("opt.m." + name);
    Tensor v = state_.get("opt.v." + name);
    const bool has = t.has_grad();
    for (std::size_t i = 0; i < t.size(); ++i) {
      double g = has ? t.grad()[i] * clip : 0.0;
      double mi = kBeta1 * m.data()[i] + (1.0 - kBeta1) * g;
      double vi = kBeta2 * v.data()[i] + (1.0 - kBeta2) * g * g;
      m.set_value(i, mi);
      v.set_value(i, vi);
      double update = lr * ((mi / bc1) / (std::sqrt(vi / bc2) + kEps) +
                            weight_decay_ * t.data()[i]);
      t.set_value(i, t.data()[i] - update);
    }
  }
  params_->round_to_f32();
  state_.round_to_f32();
  state_.get("opt.step").set_value(0, static_cast<double>(steps_));
  return norm;
}

TrainReport train(ModelBundle& model, const Dataset& data,
                  const TrainConfig& tcfg, const std::string& metrics_path) {
  tcfg.validate();
  if (data.records.empty()) throw TrainingError("train: empty dataset");
  const bool want_ddpm = tcfg.loss == "ddpm";
  if (want_ddpm != (model.cfg.variant == Variant::kDit))
    throw TrainingError("train: loss '" + tcfg.loss +
                        "' does not match the policy variant");

  BackboneStub::set_frozen(model.store, tcfg.freeze_backbone);
  AdamW opt(model.store, tcfg);
  Rng root(tcfg.seed);
  Rng batch_rng = root.split(0x6261746368ULL);
  Rng noise_rng = root.split(0x6e6f697365ULL);

  std::ofstream metrics;
  if (!metrics_path.empty()) {
    metrics.open(metrics_path);
    if (!metrics)
      throw TrainingError("train: cannot open metrics file " + metrics_path);
  }

  TrainReport report;
  const std::size_t n = data.records.size();
  for (std::size_t step = 0; step < tcfg.max_steps; ++step) {
    model.store.zero_grads();
    Tensor total;
    for (std::size_t b = 0; b < tcfg.batch_size; ++b) {
      const StepRecord& rec =
          data.records[static_cast<std::size_t>(batch_rng.next_below(n))];
      Tensor li = model.loss(rec, noise_rng);
      total = total.defined() ? add(total, li) : li;
    }
    total = scale(total, 1.0 / static_cast<double>(tcfg.batch_size));
    if (!all_finite(total)) {
      std::string op = first_non_finite(total);
      throw TrainingError("train: non-finite loss at step " +
                          std::to_string(step) + " (first bad op: " + op +
                          ")");
    }
    total.backward();

    double lr = lr_schedule(step, tcfg);
    double gn = opt.step(lr);
    MetricsRecord rec{step, lr, total.item(), gn};
    report.metrics.push_back(rec);
    report.final_loss = rec.loss;
    if (metrics.is_open()) {
      nlohmann::json j{{"grad_norm", rec.grad_norm},
                       {"loss", rec.loss},
                       {"lr", rec.lr},
                       {"step", rec.step}};
      metrics << j.dump() << "\n";
    }
  }
  return report;
}

namespace {

ParameterStore combined_view(const ModelBundle& model, const AdamW* opt) {
  ParameterStore all;
  for (const auto& name : model.store.names())
    all.add(name, model.store.get(name), false);
  if (opt != nullptr)
    for (const auto& name : opt->state().names())
      all.add(name, opt->state().get(name), false);
  return all;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelBundle& model,
                     const AdamW* opt, const std::string& metadata) {
  save_store(path, combined_view(model, opt), metadata);
}

void load_checkpoint(const std::string& path, ModelBundle& model, AdamW* opt,
                     std::string* metadata_out) {
  ParameterStore all = combined_view(model, opt);
  load_store(path, all, metadata_out);
  if (opt != nullptr) opt->sync_step_from_state();
}

}  // namespace actbridge
