#include "actbridge/dit_policy.hpp"

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

void zero_param(ParameterStore& store, const std::string& name,
                std::size_t rows, std::size_t cols) {
  store.add(name, Tensor::zeros(rows, cols, true));
}

void bias_param(ParameterStore& store, const std::string& name,
                std::size_t cols) {
  store.add(name, Tensor::zeros(1, cols, true));
}

Tensor ln_noaffine(const Tensor& x) {
  return layer_norm(x, Tensor::full(1, x.cols(), 1.0),
                    Tensor::zeros(1, x.cols()));
}

std::size_t ffn_hidden(std::size_t d) { return std::max<std::size_t>(d / 8, 4); }

}  // namespace

NoiseSchedule make_noise_schedule(std::size_t steps, double beta_min,
                                  double beta_max) {
  if (steps == 0) throw ConfigError("noise schedule needs at least one step");
  if (!(beta_min > 0.0 && beta_max < 1.0 && beta_min <= beta_max))
    throw ConfigError("betas must satisfy 0 < beta_min <= beta_max < 1");
  NoiseSchedule s;
  s.steps = steps;
  s.betas.resize(steps);
  s.alphas.resize(steps);
  s.alpha_bars.resize(steps);
  double running = 1.0;
  for (std::size_t i = 0; i < steps; ++i) {
    const double frac =
        steps == 1 ? 0.0
                   : static_cast<double>(i) / static_cast<double>(steps - 1);
    s.betas[i] = beta_min + (beta_max - beta_min) * frac;
    s.alphas[i] = 1.0 - s.betas[i];
    running *= s.alphas[i];
    s.alpha_bars[i] = running;
  }
  return s;
}

std::vector<double> add_noise(const std::vector<double>& clean,
                              std::size_t tau,
                              const std::vector<double>& eps,
                              const NoiseSchedule& sched) {
  if (tau >= sched.steps)
    throw std::out_of_range("add_noise: tau " + std::to_string(tau) +
                            " outside schedule of " +
                            std::to_string(sched.steps) + " steps");
  if (clean.size() != eps.size())
    throw ShapeError("add_noise: clean and eps sizes differ");
  const double sa = std::sqrt(sched.alpha_bars[tau]);
  const double sb = std::sqrt(1.0 - sched.alpha_bars[tau]);
  std::vector<double> out(clean.size());
  for (std::size_t i = 0; i < clean.size(); ++i)
    out[i] = sa * clean[i] + sb * eps[i];
  return out;
}

DitPolicy::DitPolicy(const PolicyConfig& cfg, ParameterStore& store, Rng& rng)
    : cfg_(cfg), store_(&store) {
  cfg_.validate();
  const std::size_t d = cfg_.hidden;
  const std::size_t a = PolicyConfig::kActionDim;
  const std::size_t ff = ffn_hidden(d);
  Rng r = rng.split(0x646974);  // dit stream

  affine_param(store, "policy.proprio.w1", cfg_.proprio_dim, d, r);
  bias_param(store, "policy.proprio.b1", d);
  affine_param(store, "policy.proprio.w2", d, d, r);
  bias_param(store, "policy.proprio.b2", d);

  affine_param(store, "policy.in.w", a, d, r);
  bias_param(store, "policy.in.b", d);
  affine_param(store, "policy.cond.w", d, d, r);
  bias_param(store, "policy.cond.b", d);

  for (std::size_t i = 0; i < cfg_.layers; ++i) {
    const std::string pfx = "policy.layer" + std::to_string(i);
    affine_param(store, pfx + ".adaln.mod.w", d, 2 * d, r);
    bias_param(store, pfx + ".adaln.mod.b", 2 * d);
    // AdaLN-Zero contract: gate projections start at exactly zero.
    zero_param(store, pfx + ".adaln.gate.w", d, d);
    bias_param(store, pfx + ".adaln.gate.b", d);
    affine_param(store, pfx + ".eps.w", d, d, r);
    bias_param(store, pfx + ".eps.b", d);

    store.add(pfx + ".g", Tensor::zeros(1, 1, true));
    affine_param(store, pfx + ".sigma1.w", d, d, r);
    bias_param(store, pfx + ".sigma1.b", d);
    affine_param(store, pfx + ".sigma2.w", d, d, r);
    bias_param(store, pfx + ".sigma2.b", d);
    affine_param(store, pfx + ".wo", 3 * d, d, r);
    bias_param(store, pfx + ".wo_b", d);
    zero_param(store, pfx + ".gate2.w", d, d);
    bias_param(store, pfx + ".gate2.b", d);

    affine_param(store, pfx + ".ffn.mod.w", d, 2 * d, r);
    bias_param(store, pfx + ".ffn.mod.b", 2 * d);
    affine_param(store, pfx + ".ffn.w1", d, ff, r);
    bias_param(store, pfx + ".ffn.b1", ff);
    affine_param(store, pfx + ".ffn.w2", ff, d, r);
    bias_param(store, pfx + ".ffn.b2", d);
    zero_param(store, pfx + ".gate3.w", d, d);
    bias_param(store, pfx + ".gate3.b", d);
  }

  store.add("policy.out.ln.gain", Tensor::full(1, d, 1.0, true));
  store.add("policy.out.ln.bias", Tensor::zeros(1, d, true));
  affine_param(store, "policy.out.w", d, a, r);
  bias_param(store, "policy.out.b", a);
}

Tensor DitPolicy::proprio_embedding(const Tensor& proprio) const {
  Tensor h = silu_t(
      linear(proprio, p("policy.proprio.w1"), p("policy.proprio.b1")));
  return linear(h, p("policy.proprio.w2"), p("policy.proprio.b2"));
}

Tensor DitPolicy::cond_vector(const Tensor& raw_cond,
                              const Tensor& proprio_emb,
                              std::size_t tau) const {
  Tensor c = add(proprio_emb, sinusoidal_embedding(
                                  static_cast<double>(tau), cfg_.hidden));
  if (raw_cond.defined()) {
    Tensor pooled = mean_rows(raw_cond);
    c = add(c, linear(pooled, p("policy.cond.w"), p("policy.cond.b")));
  }
  return c;
}

Tensor DitPolicy::modulate(std::size_t layer, const Tensor& x,
                           const Tensor& c_m) const {
  const std::string pfx = "policy.layer" + std::to_string(layer);
  const std::size_t d = cfg_.hidden;
  Tensor s = silu_t(c_m);
  Tensor mod = linear(s, p(pfx + ".adaln.mod.w"), p(pfx + ".adaln.mod.b"));
  Tensor beta = slice_cols(mod, 0, d);
  Tensor gamma = slice_cols(mod, d, d);
  Tensor alpha = linear(s, p(pfx + ".adaln.gate.w"), p(pfx + ".adaln.gate.b"));
  Tensor y = add_row(mul_row(ln_noaffine(x), gamma), beta);
  Tensor e = linear(scaled_dot_attention(y, y, y, cfg_.heads),
                    p(pfx + ".eps.w"), p(pfx + ".eps.b"));
  return add(x, mul_row(e, alpha));
}

Tensor DitPolicy::block(std::size_t layer, const Tensor& x,
                        const LayerConditions& lc, const Tensor& proprio_emb,
                        std::size_t tau) const {
  const std::string pfx = "policy.layer" + std::to_string(layer);
  const std::size_t d = cfg_.hidden;
  Tensor c_m = cond_vector(lc.raw ? *lc.raw : Tensor{}, proprio_emb, tau);
  Tensor s = silu_t(c_m);

  // Conditional modulation.
  Tensor x1 = modulate(layer, x, c_m);

  // Conditional attention: the Bridge Attention core behind a zero-init
  // gate so the block is the identity before training.
  const Tensor ratio = gate_ratio(p(pfx + ".g"));
  const bool gate_raw = cfg_.gate_mode == GateMode::kGateRawFixAq ||
                        cfg_.gate_mode == GateMode::kGateBoth;
  const bool gate_aq = cfg_.gate_mode == GateMode::kFixRawGateAq ||
                       cfg_.gate_mode == GateMode::kGateBoth;
  Tensor ca1;
  if (lc.raw) {
    Tensor kv1 = linear(*lc.raw, p(pfx + ".sigma1.w"), p(pfx + ".sigma1.b"));
    ca1 = scaled_dot_attention(x1, kv1, kv1, cfg_.heads);
    if (gate_raw) ca1 = mul_scalar(ca1, ratio);
  } else {
    ca1 = Tensor::zeros(x1.rows(), d);
  }
  Tensor aq_keys = lc.aq ? concat_rows({*lc.aq, proprio_emb}) : proprio_emb;
  Tensor kv2 = linear(aq_keys, p(pfx + ".sigma2.w"), p(pfx + ".sigma2.b"));
  Tensor ca2 = scaled_dot_attention(x1, kv2, kv2, cfg_.heads);
  if (gate_aq) ca2 = mul_scalar(ca2, ratio);
  Tensor sa = scaled_dot_attention(x1, x1, x1, cfg_.heads);
  Tensor bc = linear(concat_cols({ca1, ca2, sa}), p(pfx + ".wo"),
                     p(pfx + ".wo_b"));
  Tensor alpha2 = linear(s, p(pfx + ".gate2.w"), p(pfx + ".gate2.b"));
  Tensor x2 = add(x1, mul_row(bc, alpha2));

  // Conditional feedforward.
  Tensor mod2 = linear(s, p(pfx + ".ffn.mod.w"), p(pfx + ".ffn.mod.b"));
  Tensor beta2 = slice_cols(mod2, 0, d);
  Tensor gamma2 = slice_cols(mod2, d, d);
  Tensor y2 = add_row(mul_row(ln_noaffine(x2), gamma2), beta2);
  Tensor f = linear(relu_t(linear(y2, p(pfx + ".ffn.w1"), p(pfx + ".ffn.b1"))),
                    p(pfx + ".ffn.w2"), p(pfx + ".ffn.b2"));
  Tensor alpha3 = linear(s, p(pfx + ".gate3.w"), p(pfx + ".gate3.b"));
  return add(x2, mul_row(f, alpha3));
}

Tensor DitPolicy::forward(const Tensor& noisy_chunk, std::size_t tau,
                          const ConditionSet& conds,
                          const Tensor& proprio) const {
  if (noisy_chunk.rows() != cfg_.horizon ||
      noisy_chunk.cols() != PolicyConfig::kActionDim)
    throw ShapeError("noisy chunk must be " + std::to_string(cfg_.horizon) +
                     "x" + std::to_string(PolicyConfig::kActionDim));
  Tensor pe = proprio_embedding(proprio);
  Tensor x = linear(noisy_chunk, p("policy.in.w"), p("policy.in.b"));
  for (std::size_t i = 0; i < cfg_.layers; ++i) {
    const LayerConditions lc = route_conditions(cfg_, conds, i);
    x = block(i, x, lc, pe, tau);
  }
  Tensor h = layer_norm(x, p("policy.out.ln.gain"), p("policy.out.ln.bias"));
  return linear(h, p("policy.out.w"), p("policy.out.b"));
}

std::vector<double> DitPolicy::sample(const ConditionSet& conds,
                                      const Tensor& proprio,
                                      const NoiseSchedule& sched,
                                      std::uint64_t seed) const {
  const std::size_t n = cfg_.horizon * PolicyConfig::kActionDim;
  Rng rng = Rng(seed).split(0x73616d70);
  std::vector<double> x(n);
  for (double& v : x) v = rng.normal();
  for (std::size_t step = sched.steps; step-- > 0;) {
    Tensor noisy = Tensor::from_data(cfg_.horizon, PolicyConfig::kActionDim,
                                     x);
    Tensor eps_hat = forward(noisy, step, conds, proprio);
    const double beta = sched.betas[step];
    const double alpha = sched.alphas[step];
    const double abar = sched.alpha_bars[step];
    const double abar_prev = step == 0 ? 1.0 : sched.alpha_bars[step - 1];
    const double mean_scale = 1.0 / std::sqrt(alpha);
    const double eps_scale = beta / std::sqrt(1.0 - abar);
    const double sigma =
        step == 0 ? 0.0
                  : std::sqrt((1.0 - abar_prev) / (1.0 - abar) * beta);
    for (std::size_t i = 0; i < n; ++i) {
      double v = mean_scale * (x[i] - eps_scale * eps_hat.data()[i]);
      if (sigma > 0.0) v += sigma * rng.normal();
      x[i] = v;
    }
  }
  return x;
}

}  // namespace actbridge
