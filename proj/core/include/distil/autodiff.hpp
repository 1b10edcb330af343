#pragma once

// Dense tensors with define-by-run reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared node. Every primitive below
// creates a fresh node that remembers its inputs and a backward rule; the
// graph is whatever is reachable from the tensor you call backward() on, and
// it is released together with the last handle that references it. Leaves
// created by the caller (parameters, inputs) accumulate gradients across
// backward() calls until zero_grad().
//
// Matrix-style primitives treat a tensor as rows x cols where cols is the
// last dimension and rows is the product of the others.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace distil {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

std::string to_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

// Forward values of every primitive are rounded to this precision.
enum class Precision { float64, float32 };

Precision current_precision();

// Sets the precision for the current thread for the lifetime of the scope.
class PrecisionScope {
 public:
  explicit PrecisionScope(Precision precision);
  ~PrecisionScope();
  PrecisionScope(const PrecisionScope&) = delete;
  PrecisionScope& operator=(const PrecisionScope&) = delete;

 private:
  Precision previous_;
};

// While alive, ops on the current thread record no graph.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  bool previous_;
};

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const;
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const;
  // Writable view of a leaf's storage. Throws for op results.
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t row, std::size_t col) const;

  bool is_leaf() const;
  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  // Deep copy of the values as a new leaf; keeps the requires_grad flag.
  Tensor clone() const;
  // Deep copy of the values as a new leaf that never requires grad.
  Tensor detach() const;

  // Reverse sweep from this scalar through every reachable node.
  void backward() const;

  const char* op_name() const;

  // Identity of the underlying node (two handles onto one node compare equal).
  bool same_node(const Tensor& other) const noexcept { return node_ == other.node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  detail::Node& node() const;

  std::shared_ptr<detail::Node> node_;

  friend struct OpAccess;
};

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// x[rows x n] + bias[n], broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
// Exact x * Phi(x) with Phi the standard normal CDF.
Tensor gelu(const Tensor& x);
Tensor log(const Tensor& x);
Tensor clamp_min(const Tensor& x, double floor);

// Row-wise softmax over the last dimension (which must be >= 2).
Tensor softmax(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Row lookup: out[r] = table[index[r]]. Gradients scatter-add into table.
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> index);
// out[r] = x[r, column[r]], shape {rows}.
Tensor pick(const Tensor& x, std::span<const std::size_t> column);

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
Tensor concat_cols(const Tensor& a, const Tensor& b);

// Row r comes from when_set if take[r] != 0, otherwise from when_clear.
Tensor select_rows(std::span<const std::uint8_t> take, const Tensor& when_set,
                   const Tensor& when_clear);

// Per-channel maximum over the first lengths[b] steps of each row b.
// Every step is [B x D]; ties resolve to the earliest step.
Tensor max_over_time(std::span<const Tensor> steps, std::span<const std::size_t> lengths);

// Inverted dropout: survivors are scaled by 1/(1-rate). Identity when
// training is false or rate is 0.
Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng);

// Constant keep-mask with entries 0 or 1/(1-rate), for masks that must be
// reused across several ops (variational recurrent dropout).
Tensor dropout_mask(Shape shape, double rate, Rng& rng);

}  // namespace distil
