#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "actbridge/rng.hpp"

namespace actbridge {

// Raised when operand shapes are incompatible; names the offending operand.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when a forward value turns non-finite; names the producing op.
struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

struct Node {
  std::string op;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;
  std::vector<double> grad;  // allocated lazily by backward()
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Accumulates into parents' grad buffers given this node's grad.
  std::function<void(Node&)> backward_fn;

  std::size_t size() const { return rows * cols; }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

// Dense row-major 2-D tensor with reverse-mode gradient tracking.
// Scalars are 1x1; vectors are 1xN rows. Values are immutable once an
// op has produced them; parameter mutation goes through set_data().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::size_t rows, std::size_t cols,
                      bool requires_grad = false);
  static Tensor full(std::size_t rows, std::size_t cols, double value,
                     bool requires_grad = false);
  static Tensor from_data(std::size_t rows, std::size_t cols,
                          std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  // i.i.d. normal(0, stddev) entries drawn from rng.
  static Tensor randn(std::size_t rows, std::size_t cols, double stddev,
                      Rng& rng, bool requires_grad = false);
  // uniform in [-bound, bound].
  static Tensor rand_uniform(std::size_t rows, std::size_t cols, double bound,
                             Rng& rng, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  std::size_t rows() const { return node_->rows; }
  std::size_t cols() const { return node_->cols; }
  std::size_t size() const { return node_->size(); }
  bool requires_grad() const { return node_->requires_grad; }

  const std::vector<double>& data() const { return node_->data; }
  const std::vector<double>& grad() const;
  bool has_grad() const { return node_ && !node_->grad.empty(); }

  double at(std::size_t r, std::size_t c) const {
    return node_->data[r * node_->cols + c];
  }
  double item() const;

  // In-place mutation for parameters/optimizer only; not tracked.
  void set_data(const std::vector<double>& values);
  void set_value(std::size_t i, double v) { node_->data[i] = v; }
  void zero_grad() { node_->grad.clear(); }

  // Reverse-mode accumulation from this (scalar) tensor.
  void backward() const;

  std::shared_ptr<detail::Node> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor make_op(std::string op, std::size_t rows, std::size_t cols,
                        std::vector<Tensor> parents,
                        std::function<void(detail::Node&)> backward_fn);
};

Tensor make_op(std::string op, std::size_t rows, std::size_t cols,
               std::vector<Tensor> parents,
               std::function<void(detail::Node&)> backward_fn);

// ---- primitives ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);       // elementwise
Tensor scale(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, const Tensor& s);  // s is 1x1
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add_row(const Tensor& a, const Tensor& row);   // broadcast 1xC over rows
Tensor mul_row(const Tensor& a, const Tensor& row);   // broadcast 1xC over rows
Tensor mean_rows(const Tensor& a);                    // 1xC column means
Tensor tanh_t(const Tensor& a);
Tensor relu_t(const Tensor& a);
Tensor silu_t(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t len);
Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t len);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor mean_abs_diff(const Tensor& a, const Tensor& b);  // L1, mean reduction
Tensor mean_sq_diff(const Tensor& a, const Tensor& b);   // MSE, mean reduction

// Rotates consecutive feature pairs of each row by pos * base^(-2i/d).
// d (cols) must be even. Norm of each pair is preserved.
Tensor apply_rope(const Tensor& x, const std::vector<int>& positions,
                  double base = 10000.0);

// x @ W + b with W [in x out], b [1 x out] (b may be undefined).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Multi-head scaled dot-product attention. Q [Lq x d], K,V [Lk x d],
// d divisible by heads; heads re-concatenated along features.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            std::size_t heads);

// Non-differentiable helpers.
Tensor sinusoidal_embedding(double position, std::size_t dim);
bool all_finite(const Tensor& t);
// Walks the graph below `root` and returns the op name of the first
// (deepest) node holding a non-finite value, or "" if all are finite.
std::string first_non_finite(const Tensor& root);

}  // namespace actbridge
