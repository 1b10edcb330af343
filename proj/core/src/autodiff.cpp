#include "distil/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "distil/error.hpp"

namespace distil {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

thread_local Precision g_precision = Precision::float64;
thread_local bool g_no_grad = false;

void check_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + to_string(shape));
  }
}

void finalize_values(const char* op, std::vector<double>& values) {
  if (g_precision == Precision::float32) {
    for (double& v : values) v = static_cast<double>(static_cast<float>(v));
  }
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by ") + op);
    }
  }
}

std::size_t rows_of(const Shape& s) {
  std::size_t r = 1;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) r *= s[i];
  return r;
}

}  // namespace

// Grants the op implementations access to Tensor internals.
struct OpAccess {
  static Node& node(const Tensor& t) { return t.node(); }
  static const NodePtr& ptr(const Tensor& t) {
    if (!t.defined()) throw ContractError("operation on an undefined tensor");
    return t.node_;
  }

  static Tensor make(const char* op, Shape shape, std::vector<double> values,
                     std::vector<NodePtr> inputs, std::function<void(Node&)> backward) {
    finalize_values(op, values);
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->op = op;
    node->requires_grad = !g_no_grad &&
        std::any_of(inputs.begin(), inputs.end(), [](const NodePtr& n) { return n->requires_grad; });
    if (node->requires_grad) {
      node->inputs = std::move(inputs);
      node->backward = std::move(backward);
    }
    return Tensor(std::move(node));
  }
};

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

Precision current_precision() { return g_precision; }

PrecisionScope::PrecisionScope(Precision precision) : previous_(g_precision) {
  g_precision = precision;
}

PrecisionScope::~PrecisionScope() { g_precision = previous_; }

NoGradScope::NoGradScope() : previous_(g_no_grad) { g_no_grad = true; }
NoGradScope::~NoGradScope() { g_no_grad = previous_; }

// --- Tensor -----------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  check_shape(shape);
  if (element_count(shape) != values.size()) {
    throw DimensionError("shape " + to_string(shape) + " needs " +
                         std::to_string(element_count(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  finalize_values("leaf", values);
  node_ = std::make_shared<Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  check_shape(shape);
  std::vector<double> values(element_count(shape), value);
  return Tensor(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

Node& Tensor::node() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return *node_;
}

const Shape& Tensor::shape() const { return node().shape; }
std::size_t Tensor::size() const { return node().value.size(); }
std::size_t Tensor::rows() const { return rows_of(node().shape); }
std::size_t Tensor::cols() const { return node().shape.back(); }

std::span<const double> Tensor::values() const { return node().value; }

std::span<double> Tensor::mutable_values() {
  if (!is_leaf()) throw ContractError(std::string("cannot write into the result of ") + node().op);
  return node().value;
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on a tensor of shape " + to_string(shape()));
  return node().value[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (row >= rows() || col >= cols()) throw DimensionError("index out of range for " + to_string(shape()));
  return node().value[row * cols() + col];
}

bool Tensor::is_leaf() const { return node().inputs.empty() && !node().backward; }
bool Tensor::requires_grad() const { return node().requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!is_leaf()) throw ContractError("requires_grad can only be set on leaves");
  node().requires_grad = flag;
  if (!flag) node().grad.clear();
}

bool Tensor::has_grad() const { return !node().grad.empty(); }
std::span<const double> Tensor::grad() const { return node().grad; }
void Tensor::zero_grad() { node().grad.clear(); }

Tensor Tensor::clone() const { return Tensor(shape(), node().value, requires_grad()); }
Tensor Tensor::detach() const { return Tensor(shape(), node().value, false); }

const char* Tensor::op_name() const { return node().op; }

void Tensor::backward() const {
  Node& root = node();
  if (root.value.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + to_string(root.shape));
  }
  if (!root.requires_grad) return;

  // Iterative post-order DFS gives inputs before consumers.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{&root, 0}};
  seen.insert(&root);
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node* child = n->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  // Intermediate grads restart from zero on each sweep; leaves accumulate.
  for (Node* n : order) {
    if (n->backward) {
      n->grad.assign(n->value.size(), 0.0);
    } else {
      n->ensure_grad();
    }
  }
  root.grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

// --- primitives --------------------------------------------------------------

namespace {

const NodePtr& in(const Tensor& t) { return OpAccess::ptr(t); }

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

// Elementwise unary op; derivative(x, y) returns dy/dx.
template <typename Fwd, typename Deriv>
Tensor unary(const char* op, const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto& src = in(x)->value;
  std::vector<double> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = fwd(src[i]);
  return OpAccess::make(op, x.shape(), std::move(out), {in(x)}, [deriv](Node& self) {
    Node& a = *self.inputs[0];
    if (!a.requires_grad) return;
    auto& ga = a.ensure_grad();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * deriv(a.value[i], self.value[i]);
  });
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul: cannot multiply " + to_string(a.shape()) + " by " + to_string(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  const auto& av = in(a)->value;
  const auto& bv = in(b)->value;
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = &out[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const double s = av[i * k + p];
      const double* brow = &bv[p * n];
      for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
    }
  }
  return OpAccess::make("matmul", {m, n}, std::move(out), {in(a), in(b)}, [m, k, n](Node& self) {
    Node& A = *self.inputs[0];
    Node& B = *self.inputs[1];
    const auto& g = self.grad;
    if (A.requires_grad) {
      auto& ga = A.ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = &g[i * n];
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = &B.value[p * n];
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (B.requires_grad) {
      auto& gb = B.ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = &g[i * n];
        for (std::size_t p = 0; p < k; ++p) {
          const double s = A.value[i * k + p];
          double* gbrow = &gb[p * n];
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += s * grow[j];
        }
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  if (a.shape().size() != 2) throw DimensionError("transpose needs a matrix, got " + to_string(a.shape()));
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  const auto& av = in(a)->value;
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  return OpAccess::make("transpose", {n, m}, std::move(out), {in(a)}, [m, n](Node& self) {
    Node& A = *self.inputs[0];
    auto& ga = A.ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += self.grad[j * m + i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  const auto& av = in(a)->value;
  const auto& bv = in(b)->value;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return OpAccess::make("add", a.shape(), std::move(out), {in(a), in(b)}, [](Node& self) {
    for (auto& input : self.inputs) {
      if (!input->requires_grad) continue;
      auto& g = input->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  const auto& av = in(a)->value;
  const auto& bv = in(b)->value;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return OpAccess::make("sub", a.shape(), std::move(out), {in(a), in(b)}, [](Node& self) {
    Node& A = *self.inputs[0];
    Node& B = *self.inputs[1];
    if (A.requires_grad) {
      auto& g = A.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (B.requires_grad) {
      auto& g = B.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  const auto& av = in(a)->value;
  const auto& bv = in(b)->value;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return OpAccess::make("mul", a.shape(), std::move(out), {in(a), in(b)}, [](Node& self) {
    Node& A = *self.inputs[0];
    Node& B = *self.inputs[1];
    if (A.requires_grad) {
      auto& g = A.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * B.value[i];
    }
    if (B.requires_grad) {
      auto& g = B.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * A.value[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary("scale", a, [factor](double x) { return x * factor; },
               [factor](double, double) { return factor; });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t n = x.cols();
  if (bias.size() != n) {
    throw DimensionError("add_bias: bias " + to_string(bias.shape()) + " does not match " +
                         to_string(x.shape()));
  }
  const auto& xv = in(x)->value;
  const auto& bv = in(bias)->value;
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + bv[i % n];
  return OpAccess::make("add_bias", x.shape(), std::move(out), {in(x), in(bias)}, [n](Node& self) {
    Node& X = *self.inputs[0];
    Node& Bv = *self.inputs[1];
    if (X.requires_grad) {
      auto& g = X.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (Bv.requires_grad) {
      auto& g = Bv.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % n] += self.grad[i];
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  return unary("sigmoid", x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary("tanh", x, [](double v) { return std::tanh(v); },
               [](double, double y) { return 1.0 - y * y; });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary(
      "gelu", x, [=](double v) { return v * 0.5 * std::erfc(-v * inv_sqrt2); },
      [=](double v, double) {
        const double cdf = 0.5 * std::erfc(-v * inv_sqrt2);
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        return cdf + v * pdf;
      });
}

Tensor log(const Tensor& x) {
  return unary("log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor clamp_min(const Tensor& x, double floor) {
  return unary("clamp_min", x, [floor](double v) { return std::max(v, floor); },
               [floor](double v, double) { return v > floor ? 1.0 : 0.0; });
}

Tensor softmax(const Tensor& x) {
  const std::size_t n = x.cols();
  if (n < 2) throw DimensionError("softmax needs at least 2 classes, got " + to_string(x.shape()));
  const std::size_t m = x.rows();
  const auto& xv = in(x)->value;
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = &xv[r * n];
    const double top = *std::max_element(row, row + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += out[r * n + j] = std::exp(row[j] - top);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] /= total;
  }
  return OpAccess::make("softmax", x.shape(), std::move(out), {in(x)}, [m, n](Node& self) {
    Node& X = *self.inputs[0];
    auto& g = X.ensure_grad();
    for (std::size_t r = 0; r < m; ++r) {
      const double* y = &self.value[r * n];
      const double* gy = &self.grad[r * n];
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += gy[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += y[j] * (gy[j] - dot);
    }
  });
}

Tensor sum(const Tensor& x) {
  const auto& xv = in(x)->value;
  double total = 0.0;
  for (double v : xv) total += v;
  return OpAccess::make("sum", {1}, {total}, {in(x)}, [](Node& self) {
    Node& X = *self.inputs[0];
    auto& g = X.ensure_grad();
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  const auto& xv = in(x)->value;
  const double inv = 1.0 / static_cast<double>(xv.size());
  double total = 0.0;
  for (double v : xv) total += v;
  return OpAccess::make("mean", {1}, {total * inv}, {in(x)}, [inv](Node& self) {
    Node& X = *self.inputs[0];
    auto& g = X.ensure_grad();
    for (double& v : g) v += self.grad[0] * inv;
  });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> index) {
  if (index.empty()) throw DimensionError("gather_rows: empty index");
  const std::size_t n = table.cols();
  const std::size_t vocab = table.rows();
  const auto& tv = in(table)->value;
  std::vector<double> out(index.size() * n);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= vocab) {
      throw DimensionError("gather_rows: index " + std::to_string(index[r]) + " out of range for " +
                           to_string(table.shape()));
    }
    std::copy_n(&tv[index[r] * n], n, &out[r * n]);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return OpAccess::make("gather_rows", {index.size(), n}, std::move(out), {in(table)},
                        [idx = std::move(idx), n](Node& self) {
                          auto& g = self.inputs[0]->ensure_grad();
                          for (std::size_t r = 0; r < idx.size(); ++r)
                            for (std::size_t j = 0; j < n; ++j) g[idx[r] * n + j] += self.grad[r * n + j];
                        });
}

Tensor pick(const Tensor& x, std::span<const std::size_t> column) {
  const std::size_t m = x.rows(), n = x.cols();
  if (column.size() != m) {
    throw DimensionError("pick: " + std::to_string(column.size()) + " indices for " + to_string(x.shape()));
  }
  const auto& xv = in(x)->value;
  std::vector<double> out(m);
  for (std::size_t r = 0; r < m; ++r) {
    if (column[r] >= n) throw DimensionError("pick: column " + std::to_string(column[r]) + " out of range");
    out[r] = xv[r * n + column[r]];
  }
  std::vector<std::size_t> cols(column.begin(), column.end());
  return OpAccess::make("pick", {m}, std::move(out), {in(x)}, [cols = std::move(cols), n](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t r = 0; r < cols.size(); ++r) g[r * n + cols[r]] += self.grad[r];
  });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  const std::size_t n = x.cols();
  if (x.shape().size() != 2 || count == 0 || begin + count > x.rows()) {
    throw DimensionError("slice_rows [" + std::to_string(begin) + ", +" + std::to_string(count) +
                         ") out of range for " + to_string(x.shape()));
  }
  const auto& xv = in(x)->value;
  std::vector<double> out(xv.begin() + static_cast<std::ptrdiff_t>(begin * n),
                          xv.begin() + static_cast<std::ptrdiff_t>((begin + count) * n));
  return OpAccess::make("slice_rows", {count, n}, std::move(out), {in(x)}, [begin, n](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * n + i] += self.grad[i];
  });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  const std::size_t m = x.rows(), n = x.cols();
  if (count == 0 || begin + count > n) {
    throw DimensionError("slice_cols [" + std::to_string(begin) + ", +" + std::to_string(count) +
                         ") out of range for " + to_string(x.shape()));
  }
  const auto& xv = in(x)->value;
  std::vector<double> out(m * count);
  for (std::size_t r = 0; r < m; ++r) std::copy_n(&xv[r * n + begin], count, &out[r * count]);
  return OpAccess::make("slice_cols", {m, count}, std::move(out), {in(x)}, [m, n, begin, count](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t j = 0; j < count; ++j) g[r * n + begin + j] += self.grad[r * count + j];
  });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows();
  if (b.rows() != m) {
    throw DimensionError("concat_cols: row mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  const std::size_t na = a.cols(), nb = b.cols(), n = na + nb;
  const auto& av = in(a)->value;
  const auto& bv = in(b)->value;
  std::vector<double> out(m * n);
  for (std::size_t r = 0; r < m; ++r) {
    std::copy_n(&av[r * na], na, &out[r * n]);
    std::copy_n(&bv[r * nb], nb, &out[r * n + na]);
  }
  return OpAccess::make("concat_cols", {m, n}, std::move(out), {in(a), in(b)}, [m, na, nb, n](Node& self) {
    Node& A = *self.inputs[0];
    Node& B = *self.inputs[1];
    if (A.requires_grad) {
      auto& g = A.ensure_grad();
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t j = 0; j < na; ++j) g[r * na + j] += self.grad[r * n + j];
    }
    if (B.requires_grad) {
      auto& g = B.ensure_grad();
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t j = 0; j < nb; ++j) g[r * nb + j] += self.grad[r * n + na + j];
    }
  });
}

Tensor select_rows(std::span<const std::uint8_t> take, const Tensor& when_set, const Tensor& when_clear) {
  require_same_shape("select_rows", when_set, when_clear);
  const std::size_t m = when_set.rows(), n = when_set.cols();
  if (take.size() != m) throw DimensionError("select_rows: mask length does not match row count");
  const auto& sv = in(when_set)->value;
  const auto& cv = in(when_clear)->value;
  std::vector<double> out(m * n);
  for (std::size_t r = 0; r < m; ++r) std::copy_n(take[r] ? &sv[r * n] : &cv[r * n], n, &out[r * n]);
  std::vector<std::uint8_t> mask(take.begin(), take.end());
  return OpAccess::make("select_rows", when_set.shape(), std::move(out), {in(when_set), in(when_clear)},
                        [mask = std::move(mask), n](Node& self) {
                          Node& S = *self.inputs[0];
                          Node& C = *self.inputs[1];
                          for (std::size_t r = 0; r < mask.size(); ++r) {
                            Node& target = mask[r] ? S : C;
                            if (!target.requires_grad) continue;
                            auto& g = target.ensure_grad();
                            for (std::size_t j = 0; j < n; ++j) g[r * n + j] += self.grad[r * n + j];
                          }
                        });
}

Tensor max_over_time(std::span<const Tensor> steps, std::span<const std::size_t> lengths) {
  if (steps.empty()) throw DimensionError("max_over_time: no steps");
  const Shape& shape = steps.front().shape();
  const std::size_t batch = steps.front().rows(), dim = steps.front().cols();
  if (lengths.size() != batch) throw DimensionError("max_over_time: lengths do not match batch size");
  std::vector<NodePtr> inputs;
  inputs.reserve(steps.size());
  for (const Tensor& s : steps) {
    if (s.shape() != shape) throw DimensionError("max_over_time: steps disagree in shape");
    inputs.push_back(in(s));
  }
  std::vector<double> out(batch * dim);
  std::vector<std::uint32_t> source(batch * dim, 0);
  for (std::size_t b = 0; b < batch; ++b) {
    if (lengths[b] == 0 || lengths[b] > steps.size()) {
      throw DimensionError("max_over_time: length " + std::to_string(lengths[b]) + " outside [1, " +
                           std::to_string(steps.size()) + "]");
    }
    for (std::size_t d = 0; d < dim; ++d) {
      const std::size_t k = b * dim + d;
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t t = 0; t < lengths[b]; ++t) {
        const double v = inputs[t]->value[k];
        if (v > best) {
          best = v;
          source[k] = static_cast<std::uint32_t>(t);
        }
      }
      out[k] = best;
    }
  }
  return OpAccess::make("max_over_time", {batch, dim}, std::move(out), std::move(inputs),
                        [source = std::move(source)](Node& self) {
                          for (std::size_t k = 0; k < source.size(); ++k) {
                            Node& s = *self.inputs[source[k]];
                            if (s.requires_grad) s.ensure_grad()[k] += self.grad[k];
                          }
                        });
}

Tensor dropout_mask(Shape shape, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ContractError("dropout rate must be in [0, 1), got " + std::to_string(rate));
  check_shape(shape);
  const double keep_scale = 1.0 / (1.0 - rate);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> mask(element_count(shape));
  for (double& m : mask) m = unit(rng) < rate ? 0.0 : keep_scale;
  return Tensor(std::move(shape), std::move(mask), false);
}

Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ContractError("dropout rate must be in [0, 1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return x;
  return mul(x, dropout_mask(x.shape(), rate, rng));
}

}  // namespace distil
