#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "actbridge/gradcheck.hpp"
#include "actbridge/tensor.hpp"

using namespace actbridge;

namespace {

// Scalarizes a tensor-valued op with fixed random weights so invariances
// (softmax row sums, LN shifts) do not hide gradient errors.
Tensor weighted(const Tensor& t, Rng& rng) {
  Tensor w = Tensor::randn(t.rows(), t.cols(), 1.0, rng);
  return sum_all(mul(t, w));
}

}  // namespace

TEST_CASE("attention with a single key returns V exactly") {
  Rng rng(1);
  Tensor q = Tensor::randn(1, 4, 1.0, rng);
  Tensor k = Tensor::randn(1, 4, 1.0, rng);
  Tensor v = Tensor::randn(1, 4, 1.0, rng);
  Tensor out = scaled_dot_attention(q, k, v, 1);
  for (std::size_t i = 0; i < 4; ++i) CHECK(out.data()[i] == v.data()[i]);
}

TEST_CASE("attention matches hand-evaluated softmax oracle") {
  Tensor q = Tensor::from_data(1, 2, {1, 0});
  Tensor k = Tensor::from_data(2, 2, {1, 0, 0, 1});
  Tensor v = Tensor::from_data(2, 2, {1, 0, 0, 1});
  Tensor out = scaled_dot_attention(q, k, v, 1);
  double s = 1.0 / std::sqrt(2.0);
  double w0 = std::exp(s) / (std::exp(s) + std::exp(0.0));
  double w1 = 1.0 - w0;
  CHECK(out.at(0, 0) == doctest::Approx(w0).epsilon(1e-12));
  CHECK(out.at(0, 1) == doctest::Approx(w1).epsilon(1e-12));
}

TEST_CASE("attention with zero scores averages V columns") {
  Rng rng(2);
  Tensor q = Tensor::zeros(2, 4);
  Tensor k = Tensor::zeros(3, 4);
  Tensor v = Tensor::randn(3, 4, 1.0, rng);
  Tensor out = scaled_dot_attention(q, k, v, 2);
  for (std::size_t c = 0; c < 4; ++c) {
    double mean = (v.at(0, c) + v.at(1, c) + v.at(2, c)) / 3.0;
    CHECK(out.at(0, c) == doctest::Approx(mean).epsilon(1e-12));
    CHECK(out.at(1, c) == doctest::Approx(mean).epsilon(1e-12));
  }
}

TEST_CASE("attention rejects mismatched shapes with the operand name") {
  Tensor q = Tensor::zeros(1, 4);
  Tensor k = Tensor::zeros(2, 6);
  Tensor v = Tensor::zeros(2, 6);
  CHECK_THROWS_AS(scaled_dot_attention(q, k, v, 2), ShapeError);
}

TEST_CASE("softmax rows sum to one and weights are nonnegative") {
  Rng rng(3);
  Tensor x = Tensor::randn(5, 7, 3.0, rng);
  Tensor s = softmax_rows(x);
  for (std::size_t r = 0; r < 5; ++r) {
    double sum = 0;
    for (std::size_t c = 0; c < 7; ++c) {
      CHECK(s.at(r, c) >= 0.0);
      sum += s.at(r, c);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("layer_norm maps a constant row to zero") {
  Tensor x = Tensor::full(1, 6, 3.7);
  Tensor gain = Tensor::full(1, 6, 1.0);
  Tensor bias = Tensor::zeros(1, 6);
  Tensor out = layer_norm(x, gain, bias);
  for (double v : out.data()) CHECK(std::abs(v) < 1e-9);
}

TEST_CASE("layer_norm leaves a unit-variance row nearly unchanged") {
  Tensor x = Tensor::from_data(1, 2, {1, -1});
  Tensor gain = Tensor::full(1, 2, 1.0);
  Tensor bias = Tensor::zeros(1, 2);
  Tensor out = layer_norm(x, gain, bias);
  CHECK(out.at(0, 0) == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(out.at(0, 1) == doctest::Approx(-1.0).epsilon(1e-4));
}

TEST_CASE("layer_norm with zero gain returns the bias") {
  Rng rng(4);
  Tensor x = Tensor::randn(3, 4, 1.0, rng);
  Tensor gain = Tensor::zeros(1, 4);
  Tensor bias = Tensor::from_data(1, 4, {0.5, -1, 2, 0});
  Tensor out = layer_norm(x, gain, bias);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 4; ++c)
      CHECK(out.at(r, c) == bias.at(0, c));
}

TEST_CASE("rope at position zero is the identity") {
  Rng rng(5);
  Tensor x = Tensor::randn(1, 8, 1.0, rng);
  Tensor out = apply_rope(x, {0});
  for (std::size_t i = 0; i < 8; ++i) CHECK(out.data()[i] == x.data()[i]);
}

TEST_CASE("rope on one pair rotates by exactly one radian") {
  Tensor x = Tensor::from_data(1, 2, {0.3, -0.8});
  Tensor out = apply_rope(x, {1});
  double c = std::cos(1.0), s = std::sin(1.0);
  CHECK(out.at(0, 0) == doctest::Approx(0.3 * c + 0.8 * s).epsilon(1e-12));
  CHECK(out.at(0, 1) == doctest::Approx(0.3 * s - 0.8 * c).epsilon(1e-12));
  double n0 = std::hypot(x.at(0, 0), x.at(0, 1));
  double n1 = std::hypot(out.at(0, 0), out.at(0, 1));
  CHECK(n1 == doctest::Approx(n0).epsilon(1e-12));
}

TEST_CASE("rope preserves per-pair norms") {
  Rng rng(6);
  Tensor x = Tensor::randn(4, 8, 2.0, rng);
  Tensor out = apply_rope(x, {0, 3, 11, 25});
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t i = 0; i < 8; i += 2) {
      double n0 = std::hypot(x.at(r, i), x.at(r, i + 1));
      double n1 = std::hypot(out.at(r, i), out.at(r, i + 1));
      CHECK(std::abs(n1 - n0) < 1e-10);
    }
}

TEST_CASE("rope dot products depend only on relative position") {
  Rng rng(7);
  Tensor q = Tensor::randn(1, 2, 1.0, rng);
  Tensor k = Tensor::randn(1, 2, 1.0, rng);
  auto dot_at = [&](int p1, int p2) {
    Tensor rq = apply_rope(q, {p1});
    Tensor rk = apply_rope(k, {p2});
    return rq.at(0, 0) * rk.at(0, 0) + rq.at(0, 1) * rk.at(0, 1);
  };
  for (int delta : {-3, -1, 0, 2, 5}) {
    double ref = dot_at(10 + delta, 10);
    for (int base : {0, 4, 17})
      CHECK(dot_at(base + delta, base) == doctest::Approx(ref).epsilon(1e-10));
  }
}

TEST_CASE("rope rejects odd feature width") {
  Tensor x = Tensor::zeros(1, 3);
  CHECK_THROWS_AS(apply_rope(x, {1}), ShapeError);
}

TEST_CASE("gradcheck on a quadratic is near machine precision") {
  Rng rng(8);
  ParameterStore store;
  Tensor x = store.add("x", Tensor::randn(3, 4, 1.0, rng, true));
  auto report =
      finite_diff_grad_check([&]() { return sum_all(mul(x, x)); }, store);
  CHECK(report.max_rel_err < 1e-7);
}

TEST_CASE("every primitive passes finite-difference validation") {
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

  Rng wrng(100);
  std::vector<std::pair<const char*, std::function<Tensor()>>> cases = {
      {"add", [&] { return add(a, b); }},
      {"sub", [&] { return sub(a, b); }},
      {"mul", [&] { return mul(a, b); }},
      {"scale", [&] { return scale(a, -2.5); }},
      {"matmul", [&] { return matmul(a, w); }},
      {"transpose", [&] { return transpose(a); }},
      {"add_row", [&] { return add_row(a, row); }},
      {"mul_row", [&] { return mul_row(a, row); }},
      {"mean_rows", [&] { return mean_rows(a); }},
      {"tanh", [&] { return tanh_t(a); }},
      {"relu", [&] { return relu_t(a); }},
      {"silu", [&] { return silu_t(a); }},
      {"softmax", [&] { return softmax_rows(a); }},
      {"layer_norm", [&] { return layer_norm(a, g1, row); }},
      {"concat_rows", [&] { return concat_rows({a, b}); }},
      {"concat_cols", [&] { return concat_cols({a, b}); }},
      {"slice_rows", [&] { return slice_rows(a, 1, 2); }},
      {"slice_cols", [&] { return slice_cols(a, 2, 5); }},
      {"linear", [&] { return linear(a, w, bias); }},
      {"rope", [&] { return apply_rope(a, {0, 2, 5, 9}); }},
      {"attention_1h", [&] { return scaled_dot_attention(sq, sk, sv, 1); }},
      {"attention_4h", [&] { return scaled_dot_attention(sq, sk, sv, 4); }},
  };
  for (auto& [name, fn] : cases) {
    CAPTURE(name);
    Tensor probe = fn();
    Tensor wt = Tensor::randn(probe.rows(), probe.cols(), 1.0, wrng);
    auto report = finite_diff_grad_check(
        [&]() { return sum_all(mul(fn(), wt)); }, store);
    CHECK_MESSAGE(report.max_rel_err < 1e-4,
                  name << ": " << report.max_rel_err << " at "
                       << report.worst_param);
  }
}

TEST_CASE("reduction losses match hand values") {
  Tensor p = Tensor::from_data(2, 2, {1, -1, 0, 2});
  Tensor z = Tensor::zeros(2, 2);
  CHECK(mean_abs_diff(p, z).item() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(mean_sq_diff(p, z).item() == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(mean_abs_diff(z, z).item() == 0.0);
  Tensor q = Tensor::from_data(2, 2, {2, 0, 1, 3});
  CHECK(mean_abs_diff(q, p).item() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(mean_sq_diff(q, p).item() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("forward passes are bit-deterministic under one seed") {
  auto run = [] {
    Rng rng(42);
    Tensor a = Tensor::randn(4, 8, 1.0, rng);
    Tensor b = Tensor::randn(8, 8, 1.0, rng);
    return scaled_dot_attention(matmul(a, b), a, a, 2).data();
  };
  CHECK(run() == run());
}

TEST_CASE("non-finite detection names the producing op") {
  Tensor a = Tensor::from_data(1, 2, {1.0, 0.0});
  Tensor b = Tensor::from_data(1, 2, {0.0, 0.0});
  Tensor bad = mul(a, Tensor::from_data(1, 2, {1e308, 1e308}));
  Tensor worse = mul(bad, bad);  // overflows to inf
  CHECK(!all_finite(worse));
  CHECK(first_non_finite(worse) == "mul");
  CHECK(all_finite(b));
  CHECK(first_non_finite(b).empty());
}

TEST_CASE("shape errors name the offending operand") {
  Tensor a = Tensor::zeros(2, 3);
  Tensor b = Tensor::zeros(3, 2);
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("add"), ShapeError);
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
}
