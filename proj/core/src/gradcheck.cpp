#include "actbridge/gradcheck.hpp"

#include <cmath>

#include "actbridge/bridge_policy.hpp"
#include "actbridge/dit_policy.hpp"
#include "actbridge/rng.hpp"

namespace actbridge {

GradCheckReport finite_diff_grad_check(const std::function<Tensor()>& f,
                                       ParameterStore& store, double h,
                                       std::size_t max_coords,
                                       std::uint64_t seed) {
  store.zero_grads();
  Tensor loss = f();
  if (!all_finite(loss))
    throw NonFiniteError("gradcheck: loss is non-finite");
  loss.backward();

  GradCheckReport report;
  Rng rng(seed ^ 0x67726463u);
  for (const std::string& name : store.trainable_names()) {
    Tensor p = store.get(name);
    const std::vector<double> analytic =
        p.has_grad() ? p.grad() : std::vector<double>(p.size(), 0.0);
    std::vector<std::size_t> coords;
    if (p.size() <= max_coords) {
      for (std::size_t i = 0; i < p.size(); ++i) coords.push_back(i);
    } else {
      Rng local = rng.split(std::hash<std::string>{}(name));
      for (std::size_t k = 0; k < max_coords; ++k)
        coords.push_back(local.next_below(p.size()));
    }
    std::vector<double> base = p.data();
    for (std::size_t i : coords) {
      std::vector<double> v = base;
      v[i] = base[i] + h;
      p.set_data(v);
      const double fp = f().item();
      v[i] = base[i] - h;
      p.set_data(v);
      const double fm = f().item();
      p.set_data(base);
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw NonFiniteError("gradcheck: non-finite perturbation value at " +
                             name + "[" + std::to_string(i) + "]");
      const double numeric = (fp - fm) / (2.0 * h);
      const double denom =
          std::max({std::abs(analytic[i]), std::abs(numeric), 1.0});
      const double rel = std::abs(analytic[i] - numeric) / denom;
      ++report.checked_coords;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = name;
        report.worst_index = i;
      }
    }
  }
  return report;
}

namespace {

// Scalarize an op output through a fixed random weighting so every
// output coordinate contributes to a smooth objective.
SuiteEntry check_op(const std::string& name,
                    const std::function<Tensor()>& fn, ParameterStore& store,
                    double tol, std::size_t max_coords = 64) {
  Tensor probe = fn();
  Rng wrng(std::hash<std::string>{}(name));
  Tensor wt = Tensor::randn(probe.rows(), probe.cols(), 1.0, wrng);
  GradCheckReport rep = finite_diff_grad_check(
      [&]() { return sum_all(mul(fn(), wt)); }, store, 1e-5, max_coords);
  return {name, rep, tol};
}

PolicyConfig suite_cfg() {
  PolicyConfig cfg;
  cfg.layers = 1;
  cfg.hidden = 16;
  cfg.heads = 2;
  cfg.n_query = 3;
  return cfg;
}

ConditionSet suite_conds(const PolicyConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  ConditionSet conds;
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    conds.raw.push_back(Tensor::randn(5, cfg.hidden, 1.0, rng));
    conds.aq.push_back(Tensor::randn(cfg.n_query, cfg.hidden, 1.0, rng));
  }
  return conds;
}

}  // namespace

std::vector<SuiteEntry> gradient_suite() {
  std::vector<SuiteEntry> entries;

  {
    Rng rng(9);
    ParameterStore store;
    Tensor a = store.add("a", Tensor::randn(4, 8, 1.0, rng, true));
    Tensor b = store.add("b", Tensor::randn(4, 8, 1.0, rng, true));
    Tensor sq = store.add("sq", Tensor::randn(4, 16, 1.0, rng, true));
    Tensor sk = store.add("sk", Tensor::randn(6, 16, 1.0, rng, true));
    Tensor sv = store.add("sv", Tensor::randn(6, 16, 1.0, rng, true));
    Tensor w = store.add("w", Tensor::randn(8, 5, 1.0, rng, true));
    Tensor bias = store.add("bias", Tensor::randn(1, 5, 1.0, rng, true));
    Tensor row = store.add("row", Tensor::randn(1, 8, 1.0, rng, true));
    Tensor g1 = store.add("g1", Tensor::randn(1, 8, 0.5, rng, true));

    const std::vector<std::pair<const char*, std::function<Tensor()>>> ops = {
        {"add", [=] { return add(a, b); }},
        {"sub", [=] { return sub(a, b); }},
        {"mul", [=] { return mul(a, b); }},
        {"scale", [=] { return scale(a, -2.5); }},
        {"matmul", [=] { return matmul(a, w); }},
        {"transpose", [=] { return transpose(a); }},
        {"add_row", [=] { return add_row(a, row); }},
        {"mul_row", [=] { return mul_row(a, row); }},
        {"mean_rows", [=] { return mean_rows(a); }},
        {"tanh", [=] { return tanh_t(a); }},
        {"relu", [=] { return relu_t(a); }},
        {"silu", [=] { return silu_t(a); }},
        {"softmax_rows", [=] { return softmax_rows(a); }},
        {"layer_norm", [=] { return layer_norm(a, g1, row); }},
        {"concat_rows", [=] { return concat_rows({a, b}); }},
        {"concat_cols", [=] { return concat_cols({a, b}); }},
        {"slice_rows", [=] { return slice_rows(a, 1, 2); }},
        {"slice_cols", [=] { return slice_cols(a, 2, 5); }},
        {"linear", [=] { return linear(a, w, bias); }},
        {"rope", [=] { return apply_rope(a, {0, 2, 5, 9}); }},
        {"attention_1h",
         [=] { return scaled_dot_attention(sq, sk, sv, 1); }},
        {"attention_4h",
         [=] { return scaled_dot_attention(sq, sk, sv, 4); }},
    };
    for (const auto& [name, fn] : ops)
      entries.push_back(check_op(name, fn, store, 1e-4));
  }

  {
    PolicyConfig cfg = suite_cfg();
    ParameterStore store;
    Rng rng(17);
    BridgePolicy policy(cfg, store, rng);
    store.get("policy.layer0.g").set_data({0.3});
    ConditionSet conds = suite_conds(cfg, 18);
    Tensor proprio = Tensor::randn(1, cfg.proprio_dim, 0.5, rng);
    entries.push_back(check_op(
        "block_l1_standard",
        [&] { return policy.forward(conds, proprio); }, store, 1e-3, 6));
  }

  {
    PolicyConfig cfg = suite_cfg();
    cfg.pro = true;
    cfg.rope = true;
    ParameterStore store;
    Rng rng(19);
    BridgePolicy policy(cfg, store, rng);
    store.get("policy.layer0.g").set_data({0.3});
    ConditionSet conds = suite_conds(cfg, 20);
    Tensor proprio = Tensor::randn(1, cfg.proprio_dim, 0.5, rng);
    entries.push_back(check_op(
        "block_l1_pro", [&] { return policy.forward(conds, proprio); },
        store, 1e-3, 6));
  }

  {
    PolicyConfig cfg = suite_cfg();
    cfg.variant = Variant::kDit;
    ParameterStore store;
    Rng rng(21);
    DitPolicy policy(cfg, store, rng);
    // Open every zero-init gate so all conditioning paths carry signal.
    const std::size_t d = cfg.hidden;
    store.get("policy.layer0.g").set_data({0.3});
    for (const char* gate : {"adaln.gate.b", "gate2.b", "gate3.b"})
      store.get(std::string("policy.layer0.") + gate)
          .set_data(std::vector<double>(d, 0.2));
    ConditionSet conds = suite_conds(cfg, 22);
    Rng drng(23);
    Tensor proprio = Tensor::randn(1, cfg.proprio_dim, 0.5, drng);
    Tensor noisy =
        Tensor::randn(cfg.horizon, PolicyConfig::kActionDim, 1.0, drng);
    entries.push_back(check_op(
        "block_dit",
        [&] { return policy.forward(noisy, 2, conds, proprio); }, store,
        1e-3, 6));
  }

  return entries;
}

}  // namespace actbridge
