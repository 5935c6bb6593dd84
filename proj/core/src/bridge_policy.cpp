#include "actbridge/bridge_policy.hpp"

#include <cmath>

namespace actbridge {

namespace {

double init_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

Tensor affine_param(ParameterStore& store, const std::string& name,
                    std::size_t rows, std::size_t cols, Rng& rng) {
  return store.add(name,
                   Tensor::rand_uniform(rows, cols, init_bound(rows, cols),
                                        rng, true));
}

void bias_param(ParameterStore& store, const std::string& name,
                std::size_t cols) {
  store.add(name, Tensor::zeros(1, cols, true));
}

void ln_param(ParameterStore& store, const std::string& prefix,
              std::size_t d) {
  store.add(prefix + ".gain", Tensor::full(1, d, 1.0, true));
  store.add(prefix + ".bias", Tensor::zeros(1, d, true));
}

std::size_t ffn_hidden(std::size_t d) { return std::max<std::size_t>(d / 8, 4); }

std::vector<int> iota_positions(std::size_t n) {
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<int>(i);
  return out;
}

}  // namespace

BridgePolicy::BridgePolicy(const PolicyConfig& cfg, ParameterStore& store,
                           Rng& rng)
    : cfg_(cfg), store_(&store) {
  cfg_.validate();
  const std::size_t d = cfg_.hidden;
  const std::size_t a = PolicyConfig::kActionDim;
  Rng r = rng.split(0x706f6c);  // policy stream

  affine_param(store, "policy.proprio.w1", cfg_.proprio_dim, d, r);
  bias_param(store, "policy.proprio.b1", d);
  affine_param(store, "policy.proprio.w2", d, d, r);
  bias_param(store, "policy.proprio.b2", d);

  ln_param(store, "policy.in.ln", a);
  affine_param(store, "policy.in.w1", a, d, r);
  bias_param(store, "policy.in.b1", d);
  affine_param(store, "policy.in.w2", d, d, r);
  bias_param(store, "policy.in.b2", d);
  // Blocks have no skip from the latent itself, so with identical rows
  // self-attention stays uniform and outputs could never vary along the
  // horizon. Full-scale sinusoidal row embeddings (trainable) give the
  // attention maps a strong positional signal from step one.
  {
    Tensor pos = Tensor::zeros(cfg_.horizon, d, true);
    for (std::size_t h = 0; h < cfg_.horizon; ++h) {
      Tensor row = sinusoidal_embedding(static_cast<double>(h), d);
      for (std::size_t j = 0; j < d; ++j)
        pos.set_value(h * d + j, row.data()[j]);
    }
    store.add("policy.in.pos", pos);
  }

  const std::size_t ff = ffn_hidden(d);
  for (std::size_t i = 0; i < cfg_.layers; ++i) {
    const std::string pfx = "policy.layer" + std::to_string(i);
    store.add(pfx + ".g", Tensor::zeros(1, 1, true));
    if (!cfg_.pro) {
      affine_param(store, pfx + ".sigma1.w", d, d, r);
      bias_param(store, pfx + ".sigma1.b", d);
      affine_param(store, pfx + ".sigma2.w", d, d, r);
      bias_param(store, pfx + ".sigma2.b", d);
      // Small-uniform default; the concatenation axis is the feature
      // axis, so the projection maps 3d back to d.
      affine_param(store, pfx + ".wo", 3 * d, d, r);
      bias_param(store, pfx + ".wo_b", d);
      ln_param(store, pfx + ".ffn.ln", d);
      affine_param(store, pfx + ".ffn.w1", d, ff, r);
      bias_param(store, pfx + ".ffn.b1", ff);
      affine_param(store, pfx + ".ffn.w2", ff, d, r);
      bias_param(store, pfx + ".ffn.b2", d);
    } else {
      for (const char* proj :
           {"q", "kself", "vself", "kad", "vad", "ktask", "vtask", "o"}) {
        affine_param(store, pfx + "." + proj + ".w", d, d, r);
        bias_param(store, pfx + "." + proj + ".b", d);
      }
      ln_param(store, pfx + ".ffn.ln", d);
      affine_param(store, pfx + ".ffn.w", d, d, r);
      bias_param(store, pfx + ".ffn.b", d);
    }
  }

  ln_param(store, "policy.out.ln", d);
  affine_param(store, "policy.out.w1", d, d, r);
  bias_param(store, "policy.out.b1", d);
  affine_param(store, "policy.out.w2", d, a, r);
  bias_param(store, "policy.out.b2", a);
}

Tensor BridgePolicy::proprio_embedding(const Tensor& proprio) const {
  if (proprio.rows() != 1 || proprio.cols() != cfg_.proprio_dim)
    throw ShapeError("proprio must be 1x" + std::to_string(cfg_.proprio_dim) +
                     ", got " + std::to_string(proprio.rows()) + "x" +
                     std::to_string(proprio.cols()));
  Tensor h = silu_t(
      linear(proprio, p("policy.proprio.w1"), p("policy.proprio.b1")));
  return linear(h, p("policy.proprio.w2"), p("policy.proprio.b2"));
}

LayerConditions route_conditions(const PolicyConfig& cfg,
                                 const ConditionSet& conds,
                                 std::size_t layer) {
  const std::size_t m = cfg.layers;
  if (conds.raw.size() != m || conds.aq.size() != m)
    throw RoutingError("condition set has " +
                       std::to_string(conds.raw.size()) +
                       " layers, policy expects " + std::to_string(m));
  if (layer >= m)
    throw ConfigError("routing references layer " + std::to_string(layer) +
                      " beyond policy depth " + std::to_string(m));
  LayerConditions lc;
  switch (cfg.routing) {
    case Routing::kAllBoth:
      lc.raw = &conds.raw[layer];
      lc.aq = &conds.aq[layer];
      lc.raw_layer = lc.aq_layer = static_cast<int>(layer);
      break;
    case Routing::kAllRaw:
      lc.raw = &conds.raw[layer];
      lc.raw_layer = static_cast<int>(layer);
      break;
    case Routing::kAllAq:
      lc.aq = &conds.aq[layer];
      lc.aq_layer = static_cast<int>(layer);
      break;
    case Routing::kLastRaw:
      lc.raw = &conds.raw[m - 1];
      lc.raw_layer = static_cast<int>(m - 1);
      break;
    case Routing::kLastAq:
      lc.aq = &conds.aq[m - 1];
      lc.aq_layer = static_cast<int>(m - 1);
      break;
    case Routing::kMidRaw:
      lc.raw = &conds.raw[m / 2];
      lc.raw_layer = static_cast<int>(m / 2);
      break;
  }
  return lc;
}

LayerConditions BridgePolicy::route(const ConditionSet& conds,
                                    std::size_t layer) const {
  return route_conditions(cfg_, conds, layer);
}

Tensor BridgePolicy::block_forward(std::size_t layer, const Tensor& a_latent,
                                   const LayerConditions& conds,
                                   const Tensor& proprio_emb) const {
  if (conds.raw && conds.aq && conds.raw_layer >= 0 && conds.aq_layer >= 0 &&
      conds.raw_layer != conds.aq_layer &&
      cfg_.routing == Routing::kAllBoth) {
    throw RoutingError("raw condition from layer " +
                       std::to_string(conds.raw_layer) +
                       " paired with query condition from layer " +
                       std::to_string(conds.aq_layer));
  }
  const std::string pfx = "policy.layer" + std::to_string(layer);
  const Tensor ratio = gate_ratio(p(pfx + ".g"));
  const bool gate_raw = cfg_.gate_mode == GateMode::kGateRawFixAq ||
                        cfg_.gate_mode == GateMode::kGateBoth;
  const bool gate_aq = cfg_.gate_mode == GateMode::kFixRawGateAq ||
                       cfg_.gate_mode == GateMode::kGateBoth;

  Tensor ca1;
  if (conds.raw) {
    Tensor kv1 =
        linear(*conds.raw, p(pfx + ".sigma1.w"), p(pfx + ".sigma1.b"));
    ca1 = scaled_dot_attention(a_latent, kv1, kv1, cfg_.heads);
    if (gate_raw) ca1 = mul_scalar(ca1, ratio);
  } else {
    ca1 = Tensor::zeros(a_latent.rows(), cfg_.hidden);
  }

  Tensor aq_keys = conds.aq ? concat_rows({*conds.aq, proprio_emb})
                            : proprio_emb;
  Tensor kv2 = linear(aq_keys, p(pfx + ".sigma2.w"), p(pfx + ".sigma2.b"));
  Tensor ca2 = scaled_dot_attention(a_latent, kv2, kv2, cfg_.heads);
  if (gate_aq) ca2 = mul_scalar(ca2, ratio);

  Tensor sa = scaled_dot_attention(a_latent, a_latent, a_latent, cfg_.heads);

  Tensor ahat = linear(concat_cols({ca1, ca2, sa}), p(pfx + ".wo"),
                       p(pfx + ".wo_b"));
  Tensor h = layer_norm(ahat, p(pfx + ".ffn.ln.gain"), p(pfx + ".ffn.ln.bias"));
  Tensor f = linear(relu_t(linear(h, p(pfx + ".ffn.w1"), p(pfx + ".ffn.b1"))),
                    p(pfx + ".ffn.w2"), p(pfx + ".ffn.b2"));
  return add(ahat, f);
}

Tensor BridgePolicy::pro_block_forward(std::size_t layer,
                                       const Tensor& a_latent,
                                       const LayerConditions& conds,
                                       const Tensor& proprio_emb) const {
  const std::string pfx = "policy.layer" + std::to_string(layer);
  const std::size_t d = cfg_.hidden;
  const std::size_t heads = cfg_.heads;
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const Tensor ratio = gate_ratio(p(pfx + ".g"));
  const bool gate_raw = cfg_.gate_mode == GateMode::kGateRawFixAq ||
                        cfg_.gate_mode == GateMode::kGateBoth;
  const bool gate_aq = cfg_.gate_mode == GateMode::kFixRawGateAq ||
                       cfg_.gate_mode == GateMode::kGateBoth;

  Tensor h_adapter = conds.aq ? concat_rows({*conds.aq, proprio_emb})
                              : proprio_emb;
  Tensor q = linear(a_latent, p(pfx + ".q.w"), p(pfx + ".q.b"));
  Tensor k_self = linear(a_latent, p(pfx + ".kself.w"), p(pfx + ".kself.b"));
  Tensor v_self = linear(a_latent, p(pfx + ".vself.w"), p(pfx + ".vself.b"));
  Tensor k_ad = linear(h_adapter, p(pfx + ".kad.w"), p(pfx + ".kad.b"));
  Tensor v_ad = linear(h_adapter, p(pfx + ".vad.w"), p(pfx + ".vad.b"));
  Tensor k_task, v_task;
  if (conds.raw) {
    k_task = linear(*conds.raw, p(pfx + ".ktask.w"), p(pfx + ".ktask.b"));
    v_task = linear(*conds.raw, p(pfx + ".vtask.w"), p(pfx + ".vtask.b"));
  }

  const auto pos_q = iota_positions(a_latent.rows());
  const auto pos_ad = iota_positions(k_ad.rows());
  const auto pos_task = conds.raw ? iota_positions(k_task.rows())
                                  : std::vector<int>{};

  std::vector<Tensor> head_outs;
  head_outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, dh);
    Tensor ksh = slice_cols(k_self, h * dh, dh);
    Tensor vsh = slice_cols(v_self, h * dh, dh);
    Tensor kah = slice_cols(k_ad, h * dh, dh);
    Tensor vah = slice_cols(v_ad, h * dh, dh);
    if (cfg_.rope) {
      qh = apply_rope(qh, pos_q);
      ksh = apply_rope(ksh, pos_q);
      kah = apply_rope(kah, pos_ad);
    }
    std::vector<Tensor> score_parts;
    std::vector<Tensor> value_parts;
    score_parts.push_back(matmul(qh, transpose(ksh)));
    value_parts.push_back(vsh);
    {
      Tensor s = matmul(qh, transpose(kah));
      if (gate_aq) s = mul_scalar(s, ratio);
      score_parts.push_back(s);
      value_parts.push_back(vah);
    }
    if (conds.raw) {
      Tensor kth = slice_cols(k_task, h * dh, dh);
      if (cfg_.rope) kth = apply_rope(kth, pos_task);
      Tensor s = matmul(qh, transpose(kth));
      if (gate_raw) s = mul_scalar(s, ratio);
      score_parts.push_back(s);
      value_parts.push_back(slice_cols(v_task, h * dh, dh));
    }
    Tensor scores = scale(concat_cols(score_parts), inv_sqrt);
    Tensor weights = softmax_rows(scores);
    head_outs.push_back(matmul(weights, concat_rows(value_parts)));
  }
  Tensor output = linear(heads == 1 ? head_outs[0] : concat_cols(head_outs),
                         p(pfx + ".o.w"), p(pfx + ".o.b"));

  // Literal structure of the Pro block: FFN(output + x), the FFN being
  // LN -> Linear -> ReLU with no outer residual.
  Tensor x = add(output, a_latent);
  Tensor h2 = layer_norm(x, p(pfx + ".ffn.ln.gain"), p(pfx + ".ffn.ln.bias"));
  return relu_t(linear(h2, p(pfx + ".ffn.w"), p(pfx + ".ffn.b")));
}

Tensor BridgePolicy::input_latent() const {
  Tensor zeros = Tensor::zeros(cfg_.horizon, PolicyConfig::kActionDim);
  Tensor h = layer_norm(zeros, p("policy.in.ln.gain"), p("policy.in.ln.bias"));
  Tensor t = silu_t(linear(h, p("policy.in.w1"), p("policy.in.b1")));
  return add(linear(t, p("policy.in.w2"), p("policy.in.b2")),
             p("policy.in.pos"));
}

Tensor BridgePolicy::head(const Tensor& latent) const {
  Tensor h = layer_norm(latent, p("policy.out.ln.gain"),
                        p("policy.out.ln.bias"));
  Tensor t = silu_t(linear(h, p("policy.out.w1"), p("policy.out.b1")));
  return linear(t, p("policy.out.w2"), p("policy.out.b2"));
}

Tensor BridgePolicy::forward(const ConditionSet& conds,
                             const Tensor& proprio) const {
  Tensor pe = proprio_embedding(proprio);
  Tensor x = input_latent();
  for (std::size_t i = 0; i < cfg_.layers; ++i) {
    const LayerConditions lc = route(conds, i);
    // Attention mixes rows toward their mean, and the block has no skip
    // of the latent itself, so the positional signal is re-injected at
    // every depth to keep the horizon rows distinguishable.
    if (i > 0) x = add(x, p("policy.in.pos"));
    x = cfg_.pro ? pro_block_forward(i, x, lc, pe)
                 : block_forward(i, x, lc, pe);
  }
  return head(add(x, p("policy.in.pos")));
}

std::size_t BridgePolicy::param_count_formula(const PolicyConfig& cfg) {
  const std::size_t d = cfg.hidden;
  const std::size_t a = PolicyConfig::kActionDim;
  const std::size_t ff = ffn_hidden(d);
  // Shared head/embedding parameters.
  std::size_t n = 0;
  n += cfg.proprio_dim * d + d + d * d + d;      // proprio MLP
  n += 2 * a + a * d + d + d * d + d;            // input LN+MLP
  n += cfg.horizon * d;                          // chunk position term
  n += 2 * d + d * d + d + d * a + a;            // output LN+MLP
  std::size_t per_layer = 1;  // gate g
  if (!cfg.pro) {
    per_layer += d * d + d;          // sigma1
    per_layer += d * d + d;          // sigma2
    per_layer += 3 * d * d + d;      // W_o
    per_layer += 2 * d;              // FFN LN
    per_layer += d * ff + ff + ff * d + d;  // FFN
  } else {
    per_layer += 8 * (d * d + d);    // q, k/v per source, o
    per_layer += 2 * d;              // FFN LN
    per_layer += d * d + d;          // FFN linear
  }
  return n + cfg.layers * per_layer;
}

}  // namespace actbridge
