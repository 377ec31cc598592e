#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace setdet {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// View of one operation input handed to a backward function. `grad` is
/// empty when that input does not take part in differentiation.
struct GradSlot {
  std::span<const double> value;
  std::span<double> grad;
};

/// Accumulates input gradients given the gradient of the operation output.
/// Implementations must add into GradSlot::grad, never overwrite.
using BackwardFn = std::function<void(std::span<const double> grad_out,
                                      std::span<const double> out_value,
                                      std::span<GradSlot> inputs)>;

namespace detail {
struct Node;
}

struct ComputationRecord;

/// Dense row-major array of doubles with optional reverse-mode gradient.
///
/// A Tensor is a cheap handle; copies share storage. Results of operations
/// keep their inputs alive so that backward() can walk the graph. Values of
/// non-leaf tensors are immutable; only leaves (parameters, inputs) may be
/// edited in place, which is how optimizers update weights.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const double> values() const;
  /// Leaves only. Throws ContractError for operation results.
  std::span<double> mutable_values();

  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  bool is_leaf() const;
  const char* op_name() const;

  bool has_grad() const;
  /// Accumulated gradient; empty span before the first backward() reaching it.
  std::span<const double> grad() const;
  void zero_grad();

  /// Fresh leaf holding a copy of the values, disconnected from any graph.
  Tensor detach(bool requires_grad = false) const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor make_op(const char*, Shape, std::vector<double>, const std::vector<Tensor>&,
                        BackwardFn);
  friend void backward(const Tensor&);
  friend struct ComputationRecord;
  friend ComputationRecord record_of(const Tensor&);
};

/// Builds an operation result. If no input requires a gradient the result is
/// a plain constant and `backward_fn` is dropped. Throws NonFiniteError if any
/// value is NaN or Inf.
Tensor make_op(const char* name, Shape shape, std::vector<double> values,
               const std::vector<Tensor>& inputs, BackwardFn backward_fn);

/// Reverse-mode sweep from a scalar. Leaf gradients accumulate across calls;
/// gradients of intermediate results are recomputed from zero every call.
void backward(const Tensor& loss);

/// Operations reachable from a root, in execution (topological) order.
struct ComputationRecord {
  struct Entry {
    std::string op;
    std::vector<std::size_t> inputs;  // indices into `entries`
  };
  std::vector<Entry> entries;
};
ComputationRecord record_of(const Tensor& root);

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                              double h);

/// Same, but perturbs a leaf in place and re-evaluates `f` with it. Restores
/// the original values before returning. Used for whole-model gradient checks.
std::vector<double> finite_difference_grad_inplace(const std::function<double()>& f,
                                                   Tensor& leaf, double h);

// ---- primitives -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// a[m x n] + bias[n] on every row. The only broadcast supported.
Tensor add_row_bias(const Tensor& a, const Tensor& bias);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor abs(const Tensor& x);
/// log(max(x, floor)); gradient is zero where the floor is active.
Tensor log_clamped(const Tensor& x, double floor);
Tensor softmax_rows(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Weighted sum of a vector: sum_i w_i * x_i with constant weights.
Tensor weighted_sum(const Tensor& x, std::span<const double> weights);

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
/// out[k] = x[rows[k], cols[k]].
Tensor pick(const Tensor& x, std::span<const std::size_t> rows, std::span<const std::size_t> cols);

/// Non-overlapping 2x2 mean pool of a channels-last grid: x is [height*width x C]
/// with row-major positions; height and width must be even.
Tensor avg_pool2x2(const Tensor& x, std::size_t height, std::size_t width);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

}  // namespace setdet
