#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "actbridge/bridge_policy.hpp"
#include "actbridge/gradcheck.hpp"
#include "actbridge/toybench.hpp"
#include "actbridge/trainer.hpp"

using namespace actbridge;

namespace {

PolicyConfig desk4() {
  PolicyConfig cfg;
  cfg.layers = 4;
  cfg.hidden = 32;
  cfg.heads = 2;
  cfg.horizon = 4;
  cfg.n_query = 4;
  return cfg;
}

ConditionSet random_conds(const PolicyConfig& cfg, std::uint64_t seed,
                          std::size_t raw_len = 10) {
  Rng rng(seed);
  ConditionSet conds;
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    conds.raw.push_back(Tensor::randn(raw_len, cfg.hidden, 1.0, rng));
    conds.aq.push_back(Tensor::randn(cfg.n_query, cfg.hidden, 1.0, rng));
  }
  return conds;
}

Tensor random_proprio(const PolicyConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  return Tensor::randn(1, cfg.proprio_dim, 1.0, rng);
}

}  // namespace

TEST_CASE("gate ratio is tanh of the gate") {
  CHECK(gate_ratio(Tensor::scalar(0.0)).item() == 0.0);
  CHECK(gate_ratio(Tensor::scalar(0.5)).item() ==
        doctest::Approx(0.46211716).epsilon(1e-8));
  CHECK(gate_ratio(Tensor::scalar(5.0)).item() < 1.0);
  CHECK(gate_ratio(Tensor::scalar(5.0)).item() ==
        doctest::Approx(std::tanh(5.0)).epsilon(1e-12));
}

TEST_CASE("gate at init makes the output invariant to sigma1 and raw conditions") {
  PolicyConfig cfg = desk4();
  ParameterStore store;
  Rng rng(1);
  BridgePolicy policy(cfg, store, rng);
  Tensor proprio = random_proprio(cfg, 2);

  ConditionSet conds = random_conds(cfg, 3);
  std::vector<double> base = policy.forward(conds, proprio).data();

  // Scribble over every sigma1 weight and every raw condition.
  Rng scr(4);
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    std::string pfx = "policy.layer" + std::to_string(i);
    for (const char* name : {".sigma1.w", ".sigma1.b"}) {
      Tensor t = store.get(pfx + name);
      std::vector<double> d = t.data();
      for (double& v : d) v += scr.normal() * 10.0;
      t.set_data(d);
    }
  }
  ConditionSet other = conds;
  for (auto& r : other.raw) {
    Rng rr(99);
    r = Tensor::randn(r.rows(), r.cols(), 25.0, rr);
  }
  std::vector<double> perturbed = policy.forward(other, proprio).data();
  CHECK(perturbed == base);  // bit-identical
}

TEST_CASE("g=0 equals replacing the raw branch by zeros, bit for bit") {
  PolicyConfig cfg = desk4();
  ParameterStore store;
  Rng rng(5);
  BridgePolicy policy(cfg, store, rng);
  Tensor proprio = random_proprio(cfg, 6);
  ConditionSet conds = random_conds(cfg, 7);

  Tensor pe = policy.proprio_embedding(proprio);
  Rng lr(8);
  Tensor latent = Tensor::randn(cfg.horizon, cfg.hidden, 1.0, lr);

  LayerConditions with_raw = policy.route(conds, 1);
  LayerConditions no_raw = with_raw;
  no_raw.raw = nullptr;
  no_raw.raw_layer = -1;
  CHECK(policy.block_forward(1, latent, with_raw, pe).data() ==
        policy.block_forward(1, latent, no_raw, pe).data());
}

TEST_CASE("single-key block matches a hand-evaluated oracle") {
  PolicyConfig cfg;
  cfg.layers = 1;
  cfg.hidden = 2;
  cfg.heads = 1;
  cfg.horizon = 1;
  cfg.n_query = 1;
  ParameterStore store;
  Rng rng(9);
  BridgePolicy policy(cfg, store, rng);
  store.get("policy.layer0.g").set_value(0, 0.3);

  Rng ir(10);
  Tensor latent = Tensor::randn(1, 2, 1.0, ir);
  Tensor raw = Tensor::randn(1, 2, 1.0, ir);
  Tensor aq = Tensor::randn(1, 2, 1.0, ir);
  Tensor pe = Tensor::randn(1, 2, 1.0, ir);
  ConditionSet conds;
  conds.raw = {raw};
  conds.aq = {aq};
  Tensor out = policy.block_forward(0, latent, policy.route(conds, 0), pe);

  // Hand evaluation with plain doubles.
  auto affine = [&](const std::vector<double>& x, const std::string& w,
                    const std::string& b, std::size_t in, std::size_t outd) {
    std::vector<double> y(x.size() / in * outd, 0.0);
    const auto& W = store.get(w).data();
    const auto& B = store.get(b).data();
    for (std::size_t r = 0; r < x.size() / in; ++r)
      for (std::size_t c = 0; c < outd; ++c) {
        double s = B[c];
        for (std::size_t k = 0; k < in; ++k) s += x[r * in + k] * W[k * outd + c];
        y[r * outd + c] = s;
      }
    return y;
  };
  std::vector<double> A = latent.data();

  // CA1: one key, so attention returns sigma1(raw); gated by tanh(g).
  std::vector<double> kv1 = affine(raw.data(), "policy.layer0.sigma1.w",
                                   "policy.layer0.sigma1.b", 2, 2);
  double g = std::tanh(0.3);
  std::vector<double> ca1 = {kv1[0] * g, kv1[1] * g};

  // CA2: two keys (aq token, proprio token), one softmax.
  std::vector<double> aqp = {aq.at(0, 0), aq.at(0, 1), pe.at(0, 0),
                             pe.at(0, 1)};
  std::vector<double> kv2 = affine(aqp, "policy.layer0.sigma2.w",
                                   "policy.layer0.sigma2.b", 2, 2);
  double s0 = (A[0] * kv2[0] + A[1] * kv2[1]) / std::sqrt(2.0);
  double s1 = (A[0] * kv2[2] + A[1] * kv2[3]) / std::sqrt(2.0);
  double m = std::max(s0, s1);
  double w0 = std::exp(s0 - m), w1 = std::exp(s1 - m);
  double z = w0 + w1;
  std::vector<double> ca2 = {(w0 * kv2[0] + w1 * kv2[2]) / z,
                             (w0 * kv2[1] + w1 * kv2[3]) / z};

  // SA over a single row returns the row itself.
  std::vector<double> cat = {ca1[0], ca1[1], ca2[0], ca2[1], A[0], A[1]};
  std::vector<double> ahat =
      affine(cat, "policy.layer0.wo", "policy.layer0.wo_b", 6, 2);

  // LN(ahat) then the bottleneck FFN, with the residual.
  double mu = (ahat[0] + ahat[1]) / 2.0;
  double var = ((ahat[0] - mu) * (ahat[0] - mu) +
                (ahat[1] - mu) * (ahat[1] - mu)) / 2.0;
  const auto& gain = store.get("policy.layer0.ffn.ln.gain").data();
  const auto& bias = store.get("policy.layer0.ffn.ln.bias").data();
  std::vector<double> h(2);
  for (int i = 0; i < 2; ++i)
    h[i] = (ahat[i] - mu) / std::sqrt(var + 1e-5) * gain[i] + bias[i];
  std::vector<double> f1 =
      affine(h, "policy.layer0.ffn.w1", "policy.layer0.ffn.b1", 2, 4);
  for (double& v : f1) v = v > 0 ? v : 0;
  std::vector<double> f2 =
      affine(f1, "policy.layer0.ffn.w2", "policy.layer0.ffn.b2", 4, 2);

  CHECK(out.at(0, 0) == doctest::Approx(ahat[0] + f2[0]).epsilon(1e-12));
  CHECK(out.at(0, 1) == doctest::Approx(ahat[1] + f2[1]).epsilon(1e-12));
}

TEST_CASE("gate modes are distinguishable at g=0") {
  PolicyConfig gated = desk4();
  PolicyConfig fixed = desk4();
  fixed.gate_mode = GateMode::kFixBoth;
  ParameterStore s1, s2;
  Rng r1(11), r2(11);
  BridgePolicy p1(gated, s1, r1);
  BridgePolicy p2(fixed, s2, r2);
  Tensor proprio = random_proprio(gated, 12);
  ConditionSet conds = random_conds(gated, 13);
  CHECK(p1.forward(conds, proprio).data() != p2.forward(conds, proprio).data());
}

TEST_CASE("routing selects the documented layers") {
  PolicyConfig cfg = desk4();
  ConditionSet conds = random_conds(cfg, 14);

  auto layers_of = [&](Routing r) {
    PolicyConfig c = cfg;
    c.routing = r;
    std::vector<std::pair<int, int>> out;
    for (std::size_t i = 0; i < c.layers; ++i) {
      LayerConditions lc = route_conditions(c, conds, i);
      out.push_back({lc.raw_layer, lc.aq_layer});
    }
    return out;
  };
  using V = std::vector<std::pair<int, int>>;
  CHECK(layers_of(Routing::kAllBoth) == V{{0, 0}, {1, 1}, {2, 2}, {3, 3}});
  CHECK(layers_of(Routing::kAllRaw) == V{{0, -1}, {1, -1}, {2, -1}, {3, -1}});
  CHECK(layers_of(Routing::kAllAq) == V{{-1, 0}, {-1, 1}, {-1, 2}, {-1, 3}});
  CHECK(layers_of(Routing::kLastRaw) == V{{3, -1}, {3, -1}, {3, -1}, {3, -1}});
  CHECK(layers_of(Routing::kLastAq) == V{{-1, 3}, {-1, 3}, {-1, 3}, {-1, 3}});
  CHECK(layers_of(Routing::kMidRaw) == V{{2, -1}, {2, -1}, {2, -1}, {2, -1}});
}

TEST_CASE("mismatched layer tags raise a routing error") {
  PolicyConfig cfg = desk4();
  ParameterStore store;
  Rng rng(15);
  BridgePolicy policy(cfg, store, rng);
  ConditionSet conds = random_conds(cfg, 16);
  LayerConditions lc = policy.route(conds, 2);
  lc.aq = &conds.aq[1];
  lc.aq_layer = 1;
  Tensor pe = policy.proprio_embedding(random_proprio(cfg, 17));
  Rng lr(18);
  Tensor latent = Tensor::randn(cfg.horizon, cfg.hidden, 1.0, lr);
  CHECK_THROWS_AS(policy.block_forward(2, latent, lc, pe), RoutingError);

  ConditionSet short_set;
  short_set.raw.push_back(conds.raw[0]);
  short_set.aq.push_back(conds.aq[0]);
  CHECK_THROWS_AS(policy.route(short_set, 0), RoutingError);
}

TEST_CASE("perturbing layer-i conditions changes layer i and no earlier layer") {
  PolicyConfig cfg = desk4();
  ParameterStore store;
  Rng rng(19);
  BridgePolicy policy(cfg, store, rng);
  // Nonzero gates so the raw branch is live.
  for (std::size_t i = 0; i < cfg.layers; ++i)
    store.get("policy.layer" + std::to_string(i) + ".g").set_value(0, 0.7);
  Tensor pe = policy.proprio_embedding(random_proprio(cfg, 20));
  ConditionSet conds = random_conds(cfg, 21);

  auto latents = [&](const ConditionSet& cs) {
    std::vector<std::vector<double>> out;
    Tensor x = Tensor::zeros(cfg.horizon, cfg.hidden);
    for (std::size_t i = 0; i < cfg.layers; ++i) {
      x = policy.block_forward(i, x, policy.route(cs, i), pe);
      out.push_back(x.data());
    }
    return out;
  };
  auto base = latents(conds);
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    ConditionSet mutated = conds;
    Rng mr(50 + i);
    mutated.raw[i] = Tensor::randn(10, cfg.hidden, 1.0, mr);
    mutated.aq[i] = Tensor::randn(cfg.n_query, cfg.hidden, 1.0, mr);
    auto got = latents(mutated);
    for (std::size_t j = 0; j < i; ++j) CHECK(got[j] == base[j]);
    CHECK(got[i] != base[i]);
  }
}

TEST_CASE("gradient reaches the gate within one optimizer step") {
  PolicyConfig cfg = desk4();
  auto model = make_model(cfg);
  Rng rng(22);
  Scenario sc = make_scenario(TaskTemplate::kPickPlace, rng);
  StepRecord rec;
  ObservationStub obs = observe(sc.world, sc.task, cfg);
  rec.grid = obs.third_view_grid;
  rec.gripper = obs.gripper_patch;
  rec.instruction = obs.instruction_ids;
  rec.proprio = obs.proprio;
  rec.chunk = scripted_expert(sc.world, sc.task, cfg.horizon);

  TrainConfig tc;
  AdamW opt(model->store, tc);
  Rng noise(1);
  model->store.zero_grads();
  model->loss(rec, noise).backward();
  opt.step(1e-3);
  CHECK(std::abs(model->store.get("policy.layer0.g").item()) > 0.0);
}

TEST_CASE("chunk shape is H x A regardless of condition extents") {
  for (std::size_t nq : {1u, 4u, 16u}) {
    for (std::size_t raw_len : {5u, 23u}) {
      PolicyConfig cfg = desk4();
      cfg.n_query = nq;
      ParameterStore store;
      Rng rng(23);
      BridgePolicy policy(cfg, store, rng);
      ConditionSet conds = random_conds(cfg, 24, raw_len);
      Tensor out = policy.forward(conds, random_proprio(cfg, 25));
      CHECK(out.rows() == cfg.horizon);
      CHECK(out.cols() == PolicyConfig::kActionDim);
    }
  }
}

TEST_CASE("horizon rows are distinguishable from the first forward pass") {
  // The blocks carry no skip of the latent, so without a positional
  // term every chunk row would collapse to the same action.
  PolicyConfig cfg = desk4();
  ParameterStore store;
  Rng rng(26);
  BridgePolicy policy(cfg, store, rng);
  ConditionSet conds;
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    conds.raw.push_back(Tensor::zeros(6, cfg.hidden));
    conds.aq.push_back(Tensor::zeros(cfg.n_query, cfg.hidden));
  }
  Tensor out = policy.forward(conds, Tensor::zeros(1, cfg.proprio_dim));
  double diff = 0.0;
  for (std::size_t r = 1; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c)
      diff = std::max(diff, std::abs(out.at(r, c) - out.at(0, c)));
  CHECK(diff > 1e-3);
}

TEST_CASE("pro block keeps raw keys in the softmax at g=0") {
  PolicyConfig std_cfg = desk4();
  PolicyConfig pro_cfg = desk4();
  pro_cfg.pro = true;

  ParameterStore s1, s2;
  Rng r1(27), r2(27);
  BridgePolicy std_p(std_cfg, s1, r1);
  BridgePolicy pro_p(pro_cfg, s2, r2);
  ConditionSet conds = random_conds(std_cfg, 28);
  Tensor proprio = random_proprio(std_cfg, 29);

  // Standard variant: dropping the raw condition changes nothing at g=0.
  Tensor std_pe = std_p.proprio_embedding(proprio);
  Rng slr(40);
  Tensor std_latent = Tensor::randn(std_cfg.horizon, std_cfg.hidden, 1.0, slr);
  LayerConditions std_with = std_p.route(conds, 0);
  LayerConditions std_without = std_with;
  std_without.raw = nullptr;
  std_without.raw_layer = -1;
  CHECK(std_p.block_forward(0, std_latent, std_with, std_pe).data() ==
        std_p.block_forward(0, std_latent, std_without, std_pe).data());

  Tensor pe = pro_p.proprio_embedding(proprio);
  Rng lr(30);
  Tensor latent = Tensor::randn(pro_cfg.horizon, pro_cfg.hidden, 1.0, lr);
  LayerConditions with_raw = pro_p.route(conds, 0);
  LayerConditions without = with_raw;
  without.raw = nullptr;
  without.raw_layer = -1;
  // Pro variant: zeroed scores still admit the raw values at uniform
  // weight, so removing the source changes the output.
  CHECK(pro_p.pro_block_forward(0, latent, with_raw, pe).data() !=
        pro_p.pro_block_forward(0, latent, without, pe).data());
}

TEST_CASE("rope flag is the identity on length-one sequences") {
  PolicyConfig on = desk4();
  on.pro = true;
  on.horizon = 1;
  PolicyConfig off = on;
  off.rope = false;

  ParameterStore s1, s2;
  Rng r1(31), r2(31);
  BridgePolicy p_on(on, s1, r1);
  BridgePolicy p_off(off, s2, r2);
  Tensor proprio = random_proprio(on, 32);
  Tensor pe1 = p_on.proprio_embedding(proprio);
  Rng lr(33);
  Tensor latent = Tensor::randn(1, on.hidden, 1.0, lr);
  LayerConditions none;  // adapter source reduces to the proprio token
  CHECK(p_on.pro_block_forward(0, latent, none, pe1).data() ==
        p_off.pro_block_forward(0, latent, none, pe1).data());
}

TEST_CASE("rope changes multi-token pro outputs") {
  PolicyConfig on = desk4();
  on.pro = true;
  PolicyConfig off = on;
  off.rope = false;
  ParameterStore s1, s2;
  Rng r1(34), r2(34);
  BridgePolicy p_on(on, s1, r1);
  BridgePolicy p_off(off, s2, r2);
  ConditionSet conds = random_conds(on, 35);
  Tensor proprio = random_proprio(on, 36);
  CHECK(p_on.forward(conds, proprio).data() !=
        p_off.forward(conds, proprio).data());
}

TEST_CASE("full pipeline gradient check on a 2-layer config") {
  PolicyConfig cfg;
  cfg.layers = 2;
  cfg.hidden = 16;
  cfg.heads = 2;
  cfg.horizon = 2;
  cfg.n_query = 2;
  for (bool pro : {false, true}) {
    cfg.pro = pro;
    auto model = make_model(cfg);
    Rng rng(37);
    Scenario sc = make_scenario(TaskTemplate::kMoveLeftRight, rng);
    StepRecord rec;
    ObservationStub obs = observe(sc.world, sc.task, cfg);
    rec.grid = obs.third_view_grid;
    rec.gripper = obs.gripper_patch;
    rec.instruction = obs.instruction_ids;
    rec.proprio = obs.proprio;
    rec.chunk = scripted_expert(sc.world, sc.task, cfg.horizon);
    Rng noise(2);
    auto report = finite_diff_grad_check(
        [&]() { return model->loss(rec, noise); }, model->store, 1e-6, 8);
    CHECK_MESSAGE(report.max_rel_err < 1e-3,
                  (pro ? "pro" : "standard")
                      << ": " << report.max_rel_err << " at "
                      << report.worst_param);
  }
}

TEST_CASE("parameter formula matches store enumeration at desk sizes") {
  for (bool pro : {false, true}) {
    for (std::size_t d : {16u, 64u}) {
      PolicyConfig cfg = desk4();
      cfg.pro = pro;
      cfg.hidden = d;
      ParameterStore store;
      Rng rng(38);
      BridgePolicy policy(cfg, store, rng);
      std::size_t counted = 0;
      for (const auto& name : store.names())
        if (name.rfind("policy.", 0) == 0) counted += store.get(name).size();
      CHECK(BridgePolicy::param_count_formula(cfg) == counted);
    }
  }
}

TEST_CASE("reference preset lands within 10 percent of 97M policy parameters") {
  std::size_t n = BridgePolicy::param_count_formula(reference_preset());
  double ratio = static_cast<double>(n) / 97e6;
  CHECK(ratio > 0.9);
  CHECK(ratio < 1.1);
}
