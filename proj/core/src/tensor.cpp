#include "actbridge/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace actbridge {

using detail::Node;

namespace {

using MatMap = Eigen::Map<
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic,
                                                   Eigen::Dynamic,
                                                   Eigen::RowMajor>>;

ConstMatMap map_of(const Node& n) {
  return ConstMatMap(n.data.data(), static_cast<Eigen::Index>(n.rows),
                     static_cast<Eigen::Index>(n.cols));
}

ConstMatMap grad_of(const Node& n) {
  return ConstMatMap(n.grad.data(), static_cast<Eigen::Index>(n.rows),
                     static_cast<Eigen::Index>(n.cols));
}

MatMap grad_map(Node& n) {
  n.ensure_grad();
  return MatMap(n.grad.data(), static_cast<Eigen::Index>(n.rows),
                static_cast<Eigen::Index>(n.cols));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": operand shapes differ: lhs " +
                     std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " vs rhs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
  }
}

std::shared_ptr<Node> make_leaf(std::size_t rows, std::size_t cols,
                                std::vector<double> data, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->op = "leaf";
  n->rows = rows;
  n->cols = cols;
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  return n;
}

}  // namespace

Tensor make_op(std::string op, std::size_t rows, std::size_t cols,
               std::vector<Tensor> parents,
               std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->op = std::move(op);
  n->rows = rows;
  n->cols = cols;
  n->data.resize(rows * cols);
  for (const Tensor& p : parents) {
    n->parents.push_back(p.node());
    if (p.requires_grad()) n->requires_grad = true;
  }
  if (n->requires_grad) n->backward_fn = std::move(backward_fn);
  return Tensor(std::move(n));
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols, bool requires_grad) {
  return Tensor(make_leaf(rows, cols, std::vector<double>(rows * cols, 0.0),
                          requires_grad));
}

Tensor Tensor::full(std::size_t rows, std::size_t cols, double value,
                    bool requires_grad) {
  return Tensor(make_leaf(rows, cols, std::vector<double>(rows * cols, value),
                          requires_grad));
}

Tensor Tensor::from_data(std::size_t rows, std::size_t cols,
                         std::vector<double> data, bool requires_grad) {
  if (data.size() != rows * cols) {
    throw ShapeError("from_data: data length " + std::to_string(data.size()) +
                     " does not match shape " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
  return Tensor(make_leaf(rows, cols, std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(make_leaf(1, 1, {value}, requires_grad));
}

Tensor Tensor::randn(std::size_t rows, std::size_t cols, double stddev,
                     Rng& rng, bool requires_grad) {
  std::vector<double> d(rows * cols);
  for (double& v : d) v = stddev * rng.normal();
  return Tensor(make_leaf(rows, cols, std::move(d), requires_grad));
}

Tensor Tensor::rand_uniform(std::size_t rows, std::size_t cols, double bound,
                            Rng& rng, bool requires_grad) {
  std::vector<double> d(rows * cols);
  for (double& v : d) v = rng.uniform(-bound, bound);
  return Tensor(make_leaf(rows, cols, std::move(d), requires_grad));
}

const std::vector<double>& Tensor::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

double Tensor::item() const {
  if (size() != 1) {
    throw ShapeError("item: tensor is " + std::to_string(rows()) + "x" +
                     std::to_string(cols()) + ", expected 1x1");
  }
  return node_->data[0];
}

void Tensor::set_data(const std::vector<double>& values) {
  if (values.size() != node_->data.size()) {
    throw ShapeError("set_data: length mismatch");
  }
  node_->data = values;
}

void Tensor::backward() const {
  if (size() != 1) throw ShapeError("backward: loss must be scalar");
  // Topological order by iterative DFS.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node* p = n->parents[idx++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = make_op("add", a.rows(), a.cols(), {a, b}, [](Node& n) {
    for (std::size_t i = 0; i < 2; ++i) {
      Node& p = *n.parents[i];
      if (!p.requires_grad) continue;
      p.ensure_grad();
      for (std::size_t j = 0; j < n.grad.size(); ++j) p.grad[j] += n.grad[j];
    }
  });
  auto& o = out.node()->data;
  const auto& da = a.data();
  const auto& db = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = da[i] + db[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = make_op("sub", a.rows(), a.cols(), {a, b}, [](Node& n) {
    Node& pa = *n.parents[0];
    Node& pb = *n.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t j = 0; j < n.grad.size(); ++j) pa.grad[j] += n.grad[j];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t j = 0; j < n.grad.size(); ++j) pb.grad[j] -= n.grad[j];
    }
  });
  auto& o = out.node()->data;
  const auto& da = a.data();
  const auto& db = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = da[i] - db[i];
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = make_op("mul", a.rows(), a.cols(), {a, b}, [](Node& n) {
    Node& pa = *n.parents[0];
    Node& pb = *n.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t j = 0; j < n.grad.size(); ++j)
        pa.grad[j] += n.grad[j] * pb.data[j];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t j = 0; j < n.grad.size(); ++j)
        pb.grad[j] += n.grad[j] * pa.data[j];
    }
  });
  auto& o = out.node()->data;
  const auto& da = a.data();
  const auto& db = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = da[i] * db[i];
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = make_op("scale", a.rows(), a.cols(), {a}, [c](Node& n) {
    Node& p = *n.parents[0];
    p.ensure_grad();
    for (std::size_t j = 0; j < n.grad.size(); ++j) p.grad[j] += c * n.grad[j];
  });
  auto& o = out.node()->data;
  const auto& da = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = c * da[i];
  return out;
}

Tensor mul_scalar(const Tensor& a, const Tensor& s) {
  if (s.size() != 1) throw ShapeError("mul_scalar: scalar operand must be 1x1");
  Tensor out = make_op("mul_scalar", a.rows(), a.cols(), {a, s}, [](Node& n) {
    Node& pa = *n.parents[0];
    Node& ps = *n.parents[1];
    const double sv = ps.data[0];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t j = 0; j < n.grad.size(); ++j)
        pa.grad[j] += sv * n.grad[j];
    }
    if (ps.requires_grad) {
      ps.ensure_grad();
      double acc = 0.0;
      for (std::size_t j = 0; j < n.grad.size(); ++j)
        acc += n.grad[j] * pa.data[j];
      ps.grad[0] += acc;
    }
  });
  auto& o = out.node()->data;
  const auto& da = a.data();
  const double sv = s.item();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = sv * da[i];
  return out;
}

// ---- linear algebra --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ: lhs " +
                     std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " vs rhs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
  }
  Tensor out = make_op("matmul", a.rows(), b.cols(), {a, b}, [](Node& n) {
    Node& pa = *n.parents[0];
    Node& pb = *n.parents[1];
    auto g = grad_of(n);
    if (pa.requires_grad) grad_map(pa) += g * map_of(pb).transpose();
    if (pb.requires_grad) grad_map(pb) += map_of(pa).transpose() * g;
  });
  MatMap(out.node()->data.data(), static_cast<Eigen::Index>(a.rows()),
         static_cast<Eigen::Index>(b.cols())) =
      map_of(*a.node()) * map_of(*b.node());
  return out;
}

Tensor transpose(const Tensor& a) {
  Tensor out = make_op("transpose", a.cols(), a.rows(), {a}, [](Node& n) {
    Node& p = *n.parents[0];
    grad_map(p) += grad_of(n).transpose();
  });
  MatMap(out.node()->data.data(), static_cast<Eigen::Index>(a.cols()),
         static_cast<Eigen::Index>(a.rows())) = map_of(*a.node()).transpose();
  return out;
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError("add_row: bias must be 1x" + std::to_string(a.cols()) +
                     ", got " + std::to_string(row.rows()) + "x" +
                     std::to_string(row.cols()));
  }
  Tensor out = make_op("add_row", a.rows(), a.cols(), {a, row}, [](Node& n) {
    Node& pa = *n.parents[0];
    Node& pr = *n.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t j = 0; j < n.grad.size(); ++j) pa.grad[j] += n.grad[j];
    }
    if (pr.requires_grad) {
      pr.ensure_grad();
      for (std::size_t r = 0; r < n.rows; ++r)
        for (std::size_t c = 0; c < n.cols; ++c)
          pr.grad[c] += n.grad[r * n.cols + c];
    }
  });
  auto& o = out.node()->data;
  const auto& da = a.data();
  const auto& dr = row.data();
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c)
      o[r * a.cols() + c] = da[r * a.cols() + c] + dr[c];
  return out;
}

Tensor mul_row(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError("mul_row: row must be 1x" + std::to_string(a.cols()) +
                     ", got " + std::to_string(row.rows()) + "x" +
                     std::to_string(row.cols()));
  }
  Tensor out = make_op("mul_row", a.rows(), a.cols(), {a, row}, [](Node& n) {
    Node& pa = *n.parents[0];
    Node& pr = *n.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t r = 0; r < n.rows; ++r)
        for (std::size_t c = 0; c < n.cols; ++c)
          pa.grad[r * n.cols + c] += n.grad[r * n.cols + c] * pr.data[c];
    }
    if (pr.requires_grad) {
      pr.ensure_grad();
      for (std::size_t r = 0; r < n.rows; ++r)
        for (std::size_t c = 0; c < n.cols; ++c)
          pr.grad[c] += n.grad[r * n.cols + c] * pa.data[r * n.cols + c];
    }
  });
  auto& o = out.node()->data;
  const auto& da = a.data();
  const auto& dr = row.data();
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c)
      o[r * a.cols() + c] = da[r * a.cols() + c] * dr[c];
  return out;
}

Tensor mean_rows(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.rows());
  Tensor out = make_op("mean_rows", 1, a.cols(), {a}, [inv](Node& n) {
    Node& p = *n.parents[0];
    p.ensure_grad();
    for (std::size_t r = 0; r < p.rows; ++r)
      for (std::size_t c = 0; c < p.cols; ++c)
        p.grad[r * p.cols + c] += inv * n.grad[c];
  });
  auto& o = out.node()->data;
  const auto& da = a.data();
  for (std::size_t c = 0; c < a.cols(); ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < a.rows(); ++r) s += da[r * a.cols() + c];
    o[c] = s * inv;
  }
  return out;
}

// ---- nonlinearities --------------------------------------------------------

Tensor tanh_t(const Tensor& a) {
  Tensor out = make_op("tanh", a.rows(), a.cols(), {a}, [](Node& n) {
    Node& p = *n.parents[0];
    p.ensure_grad();
    for (std::size_t j = 0; j < n.grad.size(); ++j)
      p.grad[j] += n.grad[j] * (1.0 - n.data[j] * n.data[j]);
  });
  auto& o = out.node()->data;
  const auto& da = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::tanh(da[i]);
  return out;
}

Tensor relu_t(const Tensor& a) {
  Tensor out = make_op("relu", a.rows(), a.cols(), {a}, [](Node& n) {
    Node& p = *n.parents[0];
    p.ensure_grad();
    for (std::size_t j = 0; j < n.grad.size(); ++j)
      if (n.data[j] > 0.0) p.grad[j] += n.grad[j];
  });
  auto& o = out.node()->data;
  const auto& da = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = da[i] > 0.0 ? da[i] : 0.0;
  return out;
}

Tensor silu_t(const Tensor& a) {
  Tensor out = make_op("silu", a.rows(), a.cols(), {a}, [](Node& n) {
    Node& p = *n.parents[0];
    p.ensure_grad();
    for (std::size_t j = 0; j < n.grad.size(); ++j) {
      const double x = p.data[j];
      const double s = 1.0 / (1.0 + std::exp(-x));
      p.grad[j] += n.grad[j] * (s * (1.0 + x * (1.0 - s)));
    }
  });
  auto& o = out.node()->data;
  const auto& da = a.data();
  for (std::size_t i = 0; i < o.size(); ++i)
    o[i] = da[i] / (1.0 + std::exp(-da[i]));
  return out;
}

Tensor softmax_rows(const Tensor& a) {
  Tensor out = make_op("softmax", a.rows(), a.cols(), {a}, [](Node& n) {
    Node& p = *n.parents[0];
    p.ensure_grad();
    for (std::size_t r = 0; r < n.rows; ++r) {
      const double* y = n.data.data() + r * n.cols;
      const double* gy = n.grad.data() + r * n.cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < n.cols; ++c) dot += y[c] * gy[c];
      double* gx = p.grad.data() + r * n.cols;
      for (std::size_t c = 0; c < n.cols; ++c)
        gx[c] += y[c] * (gy[c] - dot);
    }
  });
  auto& o = out.node()->data;
  const auto& da = a.data();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double* x = da.data() + r * a.cols();
    double* y = o.data() + r * a.cols();
    double mx = x[0];
    for (std::size_t c = 1; c < a.cols(); ++c) mx = std::max(mx, x[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < a.cols(); ++c) {
      y[c] = std::exp(x[c] - mx);
      sum += y[c];
    }
    for (std::size_t c = 0; c < a.cols(); ++c) y[c] /= sum;
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  const std::size_t d = x.cols();
  if (d == 0) throw ShapeError("layer_norm: empty normalization axis");
  if (gain.size() != d || bias.size() != d) {
    throw ShapeError("layer_norm: gain/bias must have length " +
                     std::to_string(d));
  }
  // Cache x_hat and inv_std per row for the backward pass.
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(x.rows());
  Tensor out = make_op(
      "layer_norm", x.rows(), x.cols(), {x, gain, bias},
      [xhat, inv_std](Node& n) {
        Node& px = *n.parents[0];
        Node& pg = *n.parents[1];
        Node& pb = *n.parents[2];
        const std::size_t d = n.cols;
        for (std::size_t r = 0; r < n.rows; ++r) {
          const double* gy = n.grad.data() + r * d;
          const double* xh = xhat->data() + r * d;
          if (pg.requires_grad) {
            pg.ensure_grad();
            for (std::size_t c = 0; c < d; ++c) pg.grad[c] += gy[c] * xh[c];
          }
          if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t c = 0; c < d; ++c) pb.grad[c] += gy[c];
          }
          if (px.requires_grad) {
            px.ensure_grad();
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
              const double gyg = gy[c] * pg.data[c];
              m1 += gyg;
              m2 += gyg * xh[c];
            }
            m1 /= static_cast<double>(d);
            m2 /= static_cast<double>(d);
            double* gx = px.grad.data() + r * d;
            const double is = (*inv_std)[r];
            for (std::size_t c = 0; c < d; ++c) {
              const double gyg = gy[c] * pg.data[c];
              gx[c] += is * (gyg - m1 - xh[c] * m2);
            }
          }
        }
      });
  auto& o = out.node()->data;
  const auto& dx = x.data();
  const auto& dg = gain.data();
  const auto& db = bias.data();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double* xr = dx.data() + r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += xr[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double dvc = xr[c] - mean;
      var += dvc * dvc;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < d; ++c) {
      const double xh = (xr[c] - mean) * is;
      (*xhat)[r * d + c] = xh;
      o[r * d + c] = dg[c] * xh + db[c];
    }
  }
  return out;
}

// ---- shape ops -------------------------------------------------------------

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const Tensor& p : parts) {
    if (p.cols() != cols)
      throw ShapeError("concat_rows: column counts differ");
    rows += p.rows();
  }
  Tensor out = make_op("concat_rows", rows, cols, parts, [](Node& n) {
    std::size_t off = 0;
    for (auto& pp : n.parents) {
      Node& p = *pp;
      if (p.requires_grad) {
        p.ensure_grad();
        for (std::size_t j = 0; j < p.data.size(); ++j)
          p.grad[j] += n.grad[off + j];
      }
      off += p.data.size();
    }
  });
  auto& o = out.node()->data;
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    std::copy(p.data().begin(), p.data().end(), o.begin() + off);
    off += p.size();
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const Tensor& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Tensor out = make_op("concat_cols", rows, cols, parts, [](Node& n) {
    std::size_t off = 0;
    for (auto& pp : n.parents) {
      Node& p = *pp;
      if (p.requires_grad) {
        p.ensure_grad();
        for (std::size_t r = 0; r < p.rows; ++r)
          for (std::size_t c = 0; c < p.cols; ++c)
            p.grad[r * p.cols + c] += n.grad[r * n.cols + off + c];
      }
      off += p.cols;
    }
  });
  auto& o = out.node()->data;
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < p.cols(); ++c)
        o[r * cols + off + c] = p.data()[r * p.cols() + c];
    off += p.cols();
  }
  return out;
}

Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t len) {
  if (start + len > a.rows()) throw ShapeError("slice_rows: out of range");
  Tensor out =
      make_op("slice_rows", len, a.cols(), {a}, [start](Node& n) {
        Node& p = *n.parents[0];
        p.ensure_grad();
        const std::size_t off = start * n.cols;
        for (std::size_t j = 0; j < n.grad.size(); ++j)
          p.grad[off + j] += n.grad[j];
      });
  auto& o = out.node()->data;
  std::copy(a.data().begin() + start * a.cols(),
            a.data().begin() + (start + len) * a.cols(), o.begin());
  return out;
}

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t len) {
  if (start + len > a.cols()) throw ShapeError("slice_cols: out of range");
  Tensor out =
      make_op("slice_cols", a.rows(), len, {a}, [start](Node& n) {
        Node& p = *n.parents[0];
        p.ensure_grad();
        for (std::size_t r = 0; r < n.rows; ++r)
          for (std::size_t c = 0; c < n.cols; ++c)
            p.grad[r * p.cols + start + c] += n.grad[r * n.cols + c];
      });
  auto& o = out.node()->data;
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < len; ++c)
      o[r * len + c] = a.data()[r * a.cols() + start + c];
  return out;
}

// ---- reductions ------------------------------------------------------------

Tensor sum_all(const Tensor& a) {
  Tensor out = make_op("sum", 1, 1, {a}, [](Node& n) {
    Node& p = *n.parents[0];
    p.ensure_grad();
    for (std::size_t j = 0; j < p.grad.size(); ++j) p.grad[j] += n.grad[0];
  });
  double s = 0.0;
  for (double v : a.data()) s += v;
  out.node()->data[0] = s;
  return out;
}

Tensor mean_all(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.size());
  Tensor out = make_op("mean", 1, 1, {a}, [inv](Node& n) {
    Node& p = *n.parents[0];
    p.ensure_grad();
    for (std::size_t j = 0; j < p.grad.size(); ++j)
      p.grad[j] += inv * n.grad[0];
  });
  double s = 0.0;
  for (double v : a.data()) s += v;
  out.node()->data[0] = s * inv;
  return out;
}

Tensor mean_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mean_abs_diff");
  const double inv = 1.0 / static_cast<double>(a.size());
  Tensor out = make_op("mean_abs_diff", 1, 1, {a, b}, [inv](Node& n) {
    Node& pa = *n.parents[0];
    Node& pb = *n.parents[1];
    const double g = n.grad[0] * inv;
    for (std::size_t j = 0; j < pa.data.size(); ++j) {
      const double d = pa.data[j] - pb.data[j];
      const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
      if (pa.requires_grad) {
        pa.ensure_grad();
        pa.grad[j] += g * s;
      }
      if (pb.requires_grad) {
        pb.ensure_grad();
        pb.grad[j] -= g * s;
      }
    }
  });
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j)
    s += std::abs(a.data()[j] - b.data()[j]);
  out.node()->data[0] = s * inv;
  return out;
}

Tensor mean_sq_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mean_sq_diff");
  const double inv = 1.0 / static_cast<double>(a.size());
  Tensor out = make_op("mean_sq_diff", 1, 1, {a, b}, [inv](Node& n) {
    Node& pa = *n.parents[0];
    Node& pb = *n.parents[1];
    const double g = n.grad[0] * inv * 2.0;
    for (std::size_t j = 0; j < pa.data.size(); ++j) {
      const double d = pa.data[j] - pb.data[j];
      if (pa.requires_grad) {
        pa.ensure_grad();
        pa.grad[j] += g * d;
      }
      if (pb.requires_grad) {
        pb.ensure_grad();
        pb.grad[j] -= g * d;
      }
    }
  });
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = a.data()[j] - b.data()[j];
    s += d * d;
  }
  out.node()->data[0] = s * inv;
  return out;
}

// ---- rope ------------------------------------------------------------------

Tensor apply_rope(const Tensor& x, const std::vector<int>& positions,
                  double base) {
  const std::size_t d = x.cols();
  if (d % 2 != 0)
    throw ShapeError("apply_rope: feature dimension must be even, got " +
                     std::to_string(d));
  if (positions.size() != x.rows())
    throw ShapeError("apply_rope: positions length must equal row count");
  // Precompute per (row, pair) angles once; backward applies the inverse
  // rotation to the incoming gradient.
  auto cs = std::make_shared<std::vector<double>>(x.size());
  const std::size_t pairs = d / 2;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t i = 0; i < pairs; ++i) {
      const double theta =
          static_cast<double>(positions[r]) *
          std::pow(base, -2.0 * static_cast<double>(i) /
                             static_cast<double>(d));
      (*cs)[(r * pairs + i) * 2] = std::cos(theta);
      (*cs)[(r * pairs + i) * 2 + 1] = std::sin(theta);
    }
  }
  Tensor out = make_op("rope", x.rows(), x.cols(), {x}, [cs, pairs](Node& n) {
    Node& p = *n.parents[0];
    p.ensure_grad();
    for (std::size_t r = 0; r < n.rows; ++r) {
      for (std::size_t i = 0; i < pairs; ++i) {
        const double c = (*cs)[(r * pairs + i) * 2];
        const double s = (*cs)[(r * pairs + i) * 2 + 1];
        const double g0 = n.grad[r * n.cols + 2 * i];
        const double g1 = n.grad[r * n.cols + 2 * i + 1];
        p.grad[r * n.cols + 2 * i] += c * g0 + s * g1;
        p.grad[r * n.cols + 2 * i + 1] += -s * g0 + c * g1;
      }
    }
  });
  auto& o = out.node()->data;
  const auto& dx = x.data();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t i = 0; i < pairs; ++i) {
      const double c = (*cs)[(r * pairs + i) * 2];
      const double s = (*cs)[(r * pairs + i) * 2 + 1];
      const double x0 = dx[r * d + 2 * i];
      const double x1 = dx[r * d + 2 * i + 1];
      o[r * d + 2 * i] = c * x0 - s * x1;
      o[r * d + 2 * i + 1] = s * x0 + c * x1;
    }
  }
  return out;
}

// ---- composites ------------------------------------------------------------

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul(x, w);
  if (b.defined()) y = add_row(y, b);
  return y;
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            std::size_t heads) {
  if (q.rows() < 1 || k.rows() < 1)
    throw ShapeError("attention: empty query or key sequence");
  if (q.cols() != k.cols())
    throw ShapeError("attention: Q width " + std::to_string(q.cols()) +
                     " differs from K width " + std::to_string(k.cols()));
  if (k.rows() != v.rows())
    throw ShapeError("attention: K has " + std::to_string(k.rows()) +
                     " keys but V has " + std::to_string(v.rows()));
  if (q.cols() != v.cols())
    throw ShapeError("attention: V width " + std::to_string(v.cols()) +
                     " differs from Q width " + std::to_string(q.cols()));
  if (heads == 0 || q.cols() % heads != 0)
    throw ShapeError("attention: width " + std::to_string(q.cols()) +
                     " not divisible by heads " + std::to_string(heads));
  const std::size_t dh = q.cols() / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = heads == 1 ? q : slice_cols(q, h * dh, dh);
    Tensor kh = heads == 1 ? k : slice_cols(k, h * dh, dh);
    Tensor vh = heads == 1 ? v : slice_cols(v, h * dh, dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    Tensor weights = softmax_rows(scores);
    outs.push_back(matmul(weights, vh));
  }
  return heads == 1 ? outs[0] : concat_cols(outs);
}

Tensor sinusoidal_embedding(double position, std::size_t dim) {
  std::vector<double> d(dim);
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::pow(
        10000.0, -static_cast<double>(i) / static_cast<double>(half));
    d[i] = std::sin(position * freq);
    d[half + i] = std::cos(position * freq);
  }
  if (dim % 2 == 1) d[dim - 1] = 0.0;
  return Tensor::from_data(1, dim, std::move(d));
}

bool all_finite(const Tensor& t) {
  for (double v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}

std::string first_non_finite(const Tensor& root) {
  // Post-order walk so the deepest offending node is reported.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node* p = n->parents[idx++].get();
      if (seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (Node* n : order) {
    for (double v : n->data) {
      if (!std::isfinite(v)) return n->op;
    }
  }
  return "";
}

}  // namespace actbridge
