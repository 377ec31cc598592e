#include "setdet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "setdet/errors.hpp"

namespace setdet {

namespace detail {
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
};
}  // namespace detail

using detail::Node;

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  for (auto e : shape)
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
}

void check_finite(const char* op, std::span<const double> values) {
  for (double v : values)
    if (!std::isfinite(v)) throw NonFiniteError(std::string("non-finite value produced by ") + op);
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
}

}  // namespace

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_size(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  check_shape(shape);
  if (shape_size(shape) != values.size())
    throw DimensionError("tensor " + shape_string(shape) + " cannot hold " +
                         std::to_string(values.size()) + " values");
  check_finite("leaf", values);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw DimensionError("axis out of range for " + shape_string(shape()));
  return node_->shape[axis];
}

std::size_t Tensor::size() const { return node_->value.size(); }

std::span<const double> Tensor::values() const { return node_->value; }

std::span<double> Tensor::mutable_values() {
  if (!node_->leaf) throw ContractError("only leaf tensors may be modified in place");
  return node_->value;
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

double Tensor::at(std::size_t i) const { return node_->value.at(i); }

double Tensor::at(std::size_t row, std::size_t col) const {
  if (rank() != 2 || row >= dim(0) || col >= dim(1)) throw DimensionError("at(row, col) out of range");
  return node_->value[row * dim(1) + col];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::is_leaf() const { return node_->leaf; }
const char* Tensor::op_name() const { return node_->op; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach(bool requires_grad) const { return from(shape(), node_->value, requires_grad); }

// ---- graph -----------------------------------------------------------------

Tensor make_op(const char* name, Shape shape, std::vector<double> values,
               const std::vector<Tensor>& inputs, BackwardFn backward_fn) {
  check_shape(shape);
  if (shape_size(shape) != values.size())
    throw DimensionError(std::string(name) + ": result shape does not match value count");
  check_finite(name, values);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->leaf = false;
  node->op = name;
  const bool needs_grad =
      std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (needs_grad) {
    node->requires_grad = true;
    node->backward = std::move(backward_fn);
    node->inputs.reserve(inputs.size());
    for (const auto& t : inputs) node->inputs.push_back(t.node_);
  }
  return Tensor(std::move(node));
}

namespace {

// Post-order DFS: every node appears after all of its inputs.
std::vector<Node*> topological_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw ContractError("backward() needs a scalar loss");
  Node* root = loss.node_.get();
  if (!root->requires_grad) throw ContractError("loss does not depend on any tensor requiring grad");

  const auto order = topological_order(root);
  for (Node* n : order) {
    if (!n->leaf) n->grad.assign(n->value.size(), 0.0);
  }
  if (root->grad.empty()) root->grad.assign(1, 0.0);
  root->grad[0] += 1.0;

  std::vector<GradSlot> slots;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->leaf || !n->backward) continue;
    slots.clear();
    for (auto& in : n->inputs) {
      GradSlot slot{in->value, {}};
      if (in->requires_grad) {
        if (in->grad.empty()) in->grad.assign(in->value.size(), 0.0);
        slot.grad = in->grad;
      }
      slots.push_back(slot);
    }
    n->backward(n->grad, n->value, slots);
  }
}

ComputationRecord record_of(const Tensor& root) {
  ComputationRecord rec;
  if (!root.defined()) return rec;
  // Constants have no recorded inputs; still report the root itself.
  const auto order = topological_order(root.node_.get());
  std::unordered_map<const Node*, std::size_t> index;
  for (const Node* n : order) {
    ComputationRecord::Entry e;
    e.op = n->op;
    for (const auto& in : n->inputs) {
      auto it = index.find(in.get());
      if (it != index.end()) e.inputs.push_back(it->second);
    }
    index[n] = rec.entries.size();
    rec.entries.push_back(std::move(e));
  }
  return rec;
}

Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                              double h) {
  if (!(h > 0.0)) throw ContractError("finite difference step must be positive");
  std::vector<double> base(x.values().begin(), x.values().end());
  std::vector<double> out(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto plus = base;
    auto minus = base;
    plus[i] += h;
    minus[i] -= h;
    const double fp = f(Tensor::from(x.shape(), std::move(plus)));
    const double fm = f(Tensor::from(x.shape(), std::move(minus)));
    out[i] = (fp - fm) / (2.0 * h);
  }
  return Tensor::from(x.shape(), std::move(out));
}

std::vector<double> finite_difference_grad_inplace(const std::function<double()>& f, Tensor& leaf,
                                                   double h) {
  if (!(h > 0.0)) throw ContractError("finite difference step must be positive");
  auto values = leaf.mutable_values();
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double orig = values[i];
    values[i] = orig + h;
    const double fp = f();
    values[i] = orig - h;
    const double fm = f();
    values[i] = orig;
    out[i] = (fp - fm) / (2.0 * h);
  }
  return out;
}

// ---- primitives --------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw DimensionError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  std::vector<double> c(m * n, 0.0);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  return make_op("matmul", {m, n}, std::move(c), {a, b},
                 [m, k, n](std::span<const double> gc, std::span<const double>,
                           std::span<GradSlot> in) {
                   const auto av = in[0].value;
                   const auto bv = in[1].value;
                   if (!in[0].grad.empty()) {
                     auto ga = in[0].grad;
                     for (std::size_t i = 0; i < m; ++i) {
                       const double* grow = gc.data() + i * n;
                       for (std::size_t p = 0; p < k; ++p) {
                         const double* brow = bv.data() + p * n;
                         double acc = 0.0;
                         for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                         ga[i * k + p] += acc;
                       }
                     }
                   }
                   if (!in[1].grad.empty()) {
                     auto gb = in[1].grad;
                     for (std::size_t i = 0; i < m; ++i) {
                       const double* grow = gc.data() + i * n;
                       for (std::size_t p = 0; p < k; ++p) {
                         const double aip = av[i * k + p];
                         if (aip == 0.0) continue;
                         double* gbrow = gb.data() + p * n;
                         for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
                       }
                     }
                   }
                 });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  const auto av = a.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  return make_op("transpose", {n, m}, std::move(out), {a},
                 [m, n](std::span<const double> g, std::span<const double>, std::span<GradSlot> in) {
                   auto ga = in[0].grad;
                   for (std::size_t i = 0; i < m; ++i)
                     for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
                 });
}

Tensor reshape(const Tensor& a, Shape shape) {
  check_shape(shape);
  if (shape_size(shape) != a.size())
    throw DimensionError("reshape: " + shape_string(a.shape()) + " -> " + shape_string(shape));
  std::vector<double> out(a.values().begin(), a.values().end());
  return make_op("reshape", std::move(shape), std::move(out), {a},
                 [](std::span<const double> g, std::span<const double>, std::span<GradSlot> in) {
                   auto ga = in[0].grad;
                   for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                 });
}

namespace {

template <typename Fwd, typename GradA, typename GradB>
Tensor binary_elementwise(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, GradA da,
                          GradB db) {
  require_same_shape(a, b, name);
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
  return make_op(name, a.shape(), std::move(out), {a, b},
                 [da, db](std::span<const double> g, std::span<const double>, std::span<GradSlot> in) {
                   const auto x = in[0].value;
                   const auto y = in[1].value;
                   if (!in[0].grad.empty())
                     for (std::size_t i = 0; i < g.size(); ++i) in[0].grad[i] += g[i] * da(x[i], y[i]);
                   if (!in[1].grad.empty())
                     for (std::size_t i = 0; i < g.size(); ++i) in[1].grad[i] += g[i] * db(x[i], y[i]);
                 });
}

template <typename Fwd, typename Deriv>
Tensor unary_elementwise(const char* name, const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  // deriv(x, y) receives the input and the cached output.
  return make_op(name, x.shape(), std::move(out), {x},
                 [deriv](std::span<const double> g, std::span<const double> y, std::span<GradSlot> in) {
                   const auto xv = in[0].value;
                   for (std::size_t i = 0; i < g.size(); ++i) in[0].grad[i] += g[i] * deriv(xv[i], y[i]);
                 });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double factor) {
  return unary_elementwise(
      "scale", a, [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Tensor add_row_bias(const Tensor& a, const Tensor& bias) {
  require_rank(a, 2, "add_row_bias");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (bias.size() != n)
    throw DimensionError("add_row_bias: bias of size " + std::to_string(bias.size()) +
                         " for rows of width " + std::to_string(n));
  const auto av = a.values();
  const auto bv = bias.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = av[i * n + j] + bv[j];
  return make_op("add_row_bias", a.shape(), std::move(out), {a, bias},
                 [m, n](std::span<const double> g, std::span<const double>, std::span<GradSlot> in) {
                   if (!in[0].grad.empty())
                     for (std::size_t i = 0; i < m * n; ++i) in[0].grad[i] += g[i];
                   if (!in[1].grad.empty())
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < n; ++j) in[1].grad[j] += g[i * n + j];
                 });
}

Tensor relu(const Tensor& x) {
  return unary_elementwise(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_elementwise(
      "sigmoid", x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor abs(const Tensor& x) {
  return unary_elementwise(
      "abs", x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor log_clamped(const Tensor& x, double floor) {
  if (!(floor > 0.0)) throw ContractError("log_clamped floor must be positive");
  return unary_elementwise(
      "log", x, [floor](double v) { return std::log(std::max(v, floor)); },
      [floor](double v, double) { return v > floor ? 1.0 / v : 0.0; });
}

Tensor softmax_rows(const Tensor& x) {
  require_rank(x, 2, "softmax_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  const auto xv = x.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xv.data() + i * n;
    double* o = out.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += (o[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < n; ++j) o[j] /= total;
  }
  return make_op("softmax_rows", x.shape(), std::move(out), {x},
                 [m, n](std::span<const double> g, std::span<const double> y, std::span<GradSlot> in) {
                   for (std::size_t i = 0; i < m; ++i) {
                     const double* yr = y.data() + i * n;
                     const double* gr = g.data() + i * n;
                     double dot = 0.0;
                     for (std::size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
                     for (std::size_t j = 0; j < n; ++j) in[0].grad[i * n + j] += yr[j] * (gr[j] - dot);
                   }
                 });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank(x, 2, "layer_norm");
  const std::size_t m = x.dim(0), d = x.dim(1);
  if (gamma.size() != d || beta.size() != d)
    throw DimensionError("layer_norm: gamma/beta must have " + std::to_string(d) + " entries");
  const auto xv = x.values();
  const auto gv = gamma.values();
  const auto bv = beta.values();
  std::vector<double> out(m * d);
  auto xhat = std::make_shared<std::vector<double>>(m * d);
  auto inv_std = std::make_shared<std::vector<double>>(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xv.data() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * is;
      (*xhat)[i * d + j] = h;
      out[i * d + j] = gv[j] * h + bv[j];
    }
  }
  return make_op(
      "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
      [m, d, xhat, inv_std](std::span<const double> g, std::span<const double>, std::span<GradSlot> in) {
        const auto gv = in[1].value;
        if (!in[1].grad.empty())
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j) in[1].grad[j] += g[i * d + j] * (*xhat)[i * d + j];
        if (!in[2].grad.empty())
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j) in[2].grad[j] += g[i * d + j];
        if (in[0].grad.empty()) return;
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t i = 0; i < m; ++i) {
          double mean_dh = 0.0, mean_dh_h = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = g[i * d + j] * gv[j];
            mean_dh += dh;
            mean_dh_h += dh * (*xhat)[i * d + j];
          }
          mean_dh *= inv_d;
          mean_dh_h *= inv_d;
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = g[i * d + j] * gv[j];
            in[0].grad[i * d + j] +=
                (*inv_std)[i] * (dh - mean_dh - (*xhat)[i * d + j] * mean_dh_h);
          }
        }
      });
}

Tensor sum(const Tensor& x) {
  const auto xv = x.values();
  const double s = std::accumulate(xv.begin(), xv.end(), 0.0);
  return make_op("sum", {1}, {s}, {x},
                 [](std::span<const double> g, std::span<const double>, std::span<GradSlot> in) {
                   for (auto& v : in[0].grad) v += g[0];
                 });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor weighted_sum(const Tensor& x, std::span<const double> weights) {
  if (weights.size() != x.size()) throw DimensionError("weighted_sum: weight count mismatch");
  const auto xv = x.values();
  double s = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) s += weights[i] * xv[i];
  std::vector<double> w(weights.begin(), weights.end());
  return make_op("weighted_sum", {1}, {s}, {x},
                 [w = std::move(w)](std::span<const double> g, std::span<const double>,
                                    std::span<GradSlot> in) {
                   for (std::size_t i = 0; i < w.size(); ++i) in[0].grad[i] += g[0] * w[i];
                 });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  require_rank(x, 2, "slice_cols");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (count == 0 || begin + count > n) throw DimensionError("slice_cols: range out of bounds");
  const auto xv = x.values();
  std::vector<double> out(m * count);
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(xv.data() + i * n + begin, count, out.data() + i * count);
  return make_op("slice_cols", {m, count}, std::move(out), {x},
                 [m, n, begin, count](std::span<const double> g, std::span<const double>,
                                      std::span<GradSlot> in) {
                   for (std::size_t i = 0; i < m; ++i)
                     for (std::size_t j = 0; j < count; ++j)
                       in[0].grad[i * n + begin + j] += g[i * count + j];
                 });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts[0].dim(0);
  std::vector<std::size_t> widths;
  std::size_t n = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != m) throw DimensionError("concat_cols: row counts differ");
    widths.push_back(p.dim(1));
    n += p.dim(1);
  }
  std::vector<double> out(m * n);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pv = parts[k].values();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(pv.data() + i * widths[k], widths[k], out.data() + i * n + offset);
    offset += widths[k];
  }
  return make_op("concat_cols", {m, n}, std::move(out), parts,
                 [m, n, widths](std::span<const double> g, std::span<const double>, std::span<GradSlot> in) {
                   std::size_t off = 0;
                   for (std::size_t k = 0; k < in.size(); ++k) {
                     if (!in[k].grad.empty())
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < widths[k]; ++j)
                           in[k].grad[i * widths[k] + j] += g[i * n + off + j];
                     off += widths[k];
                   }
                 });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_rank(x, 2, "gather_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (rows.empty()) throw DimensionError("gather_rows: empty index list");
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  const auto xv = x.values();
  std::vector<double> out(idx.size() * n);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] >= m) throw DimensionError("gather_rows: row index out of range");
    std::copy_n(xv.data() + idx[k] * n, n, out.data() + k * n);
  }
  const std::size_t count = idx.size();
  return make_op("gather_rows", {count, n}, std::move(out), {x},
                 [n, idx = std::move(idx)](std::span<const double> g, std::span<const double>,
                                           std::span<GradSlot> in) {
                   for (std::size_t k = 0; k < idx.size(); ++k)
                     for (std::size_t j = 0; j < n; ++j) in[0].grad[idx[k] * n + j] += g[k * n + j];
                 });
}

Tensor pick(const Tensor& x, std::span<const std::size_t> rows, std::span<const std::size_t> cols) {
  require_rank(x, 2, "pick");
  if (rows.size() != cols.size() || rows.empty()) throw DimensionError("pick: index lists differ");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<std::size_t> flat(rows.size());
  std::vector<double> out(rows.size());
  const auto xv = x.values();
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= m || cols[k] >= n) throw DimensionError("pick: index out of range");
    flat[k] = rows[k] * n + cols[k];
    out[k] = xv[flat[k]];
  }
  return make_op("pick", {rows.size()}, std::move(out), {x},
                 [flat = std::move(flat)](std::span<const double> g, std::span<const double>,
                                          std::span<GradSlot> in) {
                   for (std::size_t k = 0; k < flat.size(); ++k) in[0].grad[flat[k]] += g[k];
                 });
}

Tensor avg_pool2x2(const Tensor& x, std::size_t height, std::size_t width) {
  require_rank(x, 2, "avg_pool2x2");
  if (height % 2 || width % 2 || x.dim(0) != height * width)
    throw DimensionError("avg_pool2x2: grid " + std::to_string(height) + "x" + std::to_string(width) +
                         " does not match " + shape_string(x.shape()));
  const std::size_t c = x.dim(1), oh = height / 2, ow = width / 2;
  const auto xv = x.values();
  std::vector<double> out(oh * ow * c, 0.0);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t xo = 0; xo < ow; ++xo) {
      double* o = out.data() + (y * ow + xo) * c;
      for (std::size_t dy = 0; dy < 2; ++dy)
        for (std::size_t dx = 0; dx < 2; ++dx) {
          const double* in = xv.data() + ((2 * y + dy) * width + 2 * xo + dx) * c;
          for (std::size_t k = 0; k < c; ++k) o[k] += in[k];
        }
      for (std::size_t k = 0; k < c; ++k) o[k] *= 0.25;
    }
  }
  return make_op("avg_pool2x2", {oh * ow, c}, std::move(out), {x},
                 [width, c, oh, ow](std::span<const double> g, std::span<const double>,
                                    std::span<GradSlot> in) {
                   for (std::size_t y = 0; y < oh; ++y)
                     for (std::size_t xo = 0; xo < ow; ++xo) {
                       const double* go = g.data() + (y * ow + xo) * c;
                       for (std::size_t dy = 0; dy < 2; ++dy)
                         for (std::size_t dx = 0; dx < 2; ++dx) {
                           double* gi = in[0].grad.data() + ((2 * y + dy) * width + 2 * xo + dx) * c;
                           for (std::size_t k = 0; k < c; ++k) gi[k] += 0.25 * go[k];
                         }
                     }
                 });
}

}  // namespace setdet
