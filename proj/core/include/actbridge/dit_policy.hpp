#pragma once

#include "actbridge/backbone.hpp"
#include "actbridge/bridge_policy.hpp"
#include "actbridge/config.hpp"
#include "actbridge/param_store.hpp"

namespace actbridge {

// DDPM forward-process coefficients.
struct NoiseSchedule {
  std::size_t steps = 0;            // T
  std::vector<double> betas;        // T entries, each in (0, 1)
  std::vector<double> alphas;       // 1 - beta
  std::vector<double> alpha_bars;   // running products, strictly decreasing
};

NoiseSchedule make_noise_schedule(std::size_t steps, double beta_min = 1e-4,
                                  double beta_max = 2e-2);

// sqrt(abar_tau) * clean + sqrt(1 - abar_tau) * eps. Plain arithmetic on
// the H x A data; not part of the gradient graph.
std::vector<double> add_noise(const std::vector<double>& clean,
                              std::size_t tau,
                              const std::vector<double>& eps,
                              const NoiseSchedule& sched);

// Diffusion-transformer policy: per block, zero-gated conditional
// modulation, a Bridge Attention core, and a zero-gated conditional FFN,
// so every block is the exact identity on its action latent at
// initialization. Registers parameters under "policy." (it is the
// policy; freeze semantics match the L1 variant).
class DitPolicy {
 public:
  DitPolicy(const PolicyConfig& cfg, ParameterStore& store, Rng& rng);

  // Per-layer conditioning vector: projected pooled raw condition plus
  // the proprio embedding plus a sinusoidal embedding of tau.
  Tensor cond_vector(const Tensor& raw_cond, const Tensor& proprio_emb,
                     std::size_t tau) const;

  // The modulation step alone: x + alpha ⊙ eps(gamma LN(x) + beta).
  Tensor modulate(std::size_t layer, const Tensor& x, const Tensor& c_m) const;

  // One full block (modulation, gated attention core, conditional FFN).
  Tensor block(std::size_t layer, const Tensor& x, const LayerConditions& lc,
               const Tensor& proprio_emb, std::size_t tau) const;

  // Predicts the injected noise for a noisy H x A chunk at timestep tau.
  Tensor forward(const Tensor& noisy_chunk, std::size_t tau,
                 const ConditionSet& conds, const Tensor& proprio) const;

  // Ancestral sampling from pure noise; deterministic given the seed.
  std::vector<double> sample(const ConditionSet& conds, const Tensor& proprio,
                             const NoiseSchedule& sched,
                             std::uint64_t seed) const;

  const PolicyConfig& config() const { return cfg_; }

 private:
  Tensor p(const std::string& name) const { return store_->get(name); }
  Tensor proprio_embedding(const Tensor& proprio) const;

  PolicyConfig cfg_;
  const ParameterStore* store_;
};

}  // namespace actbridge
