#pragma once

#include "actbridge/backbone.hpp"
#include "actbridge/config.hpp"
#include "actbridge/param_store.hpp"
#include "actbridge/tensor.hpp"

namespace actbridge {

struct RoutingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Learnable injection ratio; zero at initialization.
inline Tensor gate_ratio(const Tensor& g) { return tanh_t(g); }

// Per-layer conditions after routing. Absent tensors disable their
// branch; layer tags catch mismatched sources.
struct LayerConditions {
  const Tensor* raw = nullptr;
  const Tensor* aq = nullptr;
  int raw_layer = -1;
  int aq_layer = -1;
};

// Maps the configured routing onto block index `layer`. Shared by the
// L1 and DiT variants.
LayerConditions route_conditions(const PolicyConfig& cfg,
                                 const ConditionSet& conds,
                                 std::size_t layer);

// L1 policy: M blocks, each fusing gated cross-attention to the raw
// condition, cross-attention to the query condition plus the proprio
// token, and self-attention over the action latent. Parameters are
// registered under "policy.".
class BridgePolicy {
 public:
  BridgePolicy(const PolicyConfig& cfg, ParameterStore& store, Rng& rng);

  // Two-layer proprio embedding. proprio is 1 x P_dim.
  Tensor proprio_embedding(const Tensor& proprio) const;

  // One block of the shared-projection variant.
  Tensor block_forward(std::size_t layer, const Tensor& a_latent,
                       const LayerConditions& conds,
                       const Tensor& proprio_emb) const;

  // One block of the Pro variant: separate projections per source, RoPE
  // on Q/K, a single softmax over the concatenated scores, and the raw
  // source gated on its pre-softmax scores.
  Tensor pro_block_forward(std::size_t layer, const Tensor& a_latent,
                           const LayerConditions& conds,
                           const Tensor& proprio_emb) const;

  // Full forward: zero-initialized chunk through M blocks to the H x d
  // latent, then the LN+MLP head to the H x A chunk.
  Tensor forward(const ConditionSet& conds, const Tensor& proprio) const;

  // Routed per-layer conditions for block index `layer`.
  LayerConditions route(const ConditionSet& conds, std::size_t layer) const;

  const PolicyConfig& config() const { return cfg_; }

  // Closed-form count of "policy." parameters; unit-tested against
  // store enumeration.
  static std::size_t param_count_formula(const PolicyConfig& cfg);

 private:
  Tensor p(const std::string& name) const { return store_->get(name); }
  Tensor input_latent() const;
  Tensor head(const Tensor& latent) const;

  PolicyConfig cfg_;
  const ParameterStore* store_;
};

}  // namespace actbridge
