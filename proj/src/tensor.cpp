#include "jpfa/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace jpfa {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("non-positive dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

namespace {
std::atomic<std::uint64_t> g_seq{0};
}

std::vector<double>& TensorImpl::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  return grad;
}

void TensorImpl::accumulate(const std::vector<double>& g) {
  if (!requires_grad) return;
  ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
}

Tensor make_node(Shape shape, std::vector<double> data,
                 std::vector<std::shared_ptr<TensorImpl>> parents,
                 std::function<void(TensorImpl&)> backward_fn) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  bool rg = false;
  for (const auto& p : parents) rg = rg || (p && p->requires_grad);
  impl->requires_grad = rg;
  if (rg) {
    impl->parents = std::move(parents);
    impl->backward_fn = std::move(backward_fn);
  }
  impl->seq = g_seq.fetch_add(1, std::memory_order_relaxed) + 1;
  return Tensor(std::move(impl));
}

void check_finite(const Tensor& t, const char* op) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) {
      throw std::runtime_error(std::string("non-finite value produced by ") + op);
    }
  }
}

}  // namespace detail

using detail::TensorImpl;

namespace {

std::shared_ptr<TensorImpl> make_leaf(Shape shape, std::vector<double> data,
                                      bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  if (static_cast<std::int64_t>(data.size()) != numel(shape)) {
    throw std::invalid_argument("data length " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  }
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return impl;
}

const std::shared_ptr<TensorImpl>& require(const std::shared_ptr<TensorImpl>& p) {
  if (!p) throw std::logic_error("operation on undefined Tensor");
  return p;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

// Unary elementwise helper: fwd maps input value to output value, dfn maps
// (input, output) to the local derivative.
template <typename F, typename D>
Tensor unary(const Tensor& x, F fwd, D dfn) {
  const auto& xi = require(x.impl());
  std::vector<double> out(xi->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xi->data[i]);
  auto p = xi;
  return detail::make_node(xi->shape, std::move(out), {p},
                           [p, dfn](TensorImpl& self) {
                             auto& g = p->ensure_grad();
                             for (std::size_t i = 0; i < g.size(); ++i) {
                               g[i] += self.grad[i] * dfn(p->data[i], self.data[i]);
                             }
                           });
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(make_leaf({1}, {value}, requires_grad));
}

const Shape& Tensor::shape() const { return require(impl_)->shape; }
std::int64_t Tensor::size() const { return static_cast<std::int64_t>(require(impl_)->data.size()); }
const std::vector<double>& Tensor::data() const { return require(impl_)->data; }
std::vector<double>& Tensor::mutable_data() { return require(impl_)->data; }

double Tensor::value() const {
  const auto& d = data();
  if (d.size() != 1) {
    throw std::logic_error("value() requires a single-element tensor, got shape " +
                           shape_str(shape()));
  }
  return d[0];
}

bool Tensor::requires_grad() const { return require(impl_)->requires_grad; }
bool Tensor::is_leaf() const { return require(impl_)->parents.empty(); }

const std::vector<double>& Tensor::grad() const {
  return require(impl_)->ensure_grad();
}

void Tensor::zero_grad() {
  auto& g = require(impl_)->ensure_grad();
  std::fill(g.begin(), g.end(), 0.0);
}

Tensor Tensor::detach() const {
  const auto& p = require(impl_);
  return Tensor(make_leaf(p->shape, p->data, false));
}

Tensor Tensor::relu() const {
  return unary(*this, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor Tensor::tanh() const {
  return unary(*this, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Tensor Tensor::sigmoid() const {
  return unary(*this, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
               [](double, double y) { return y * (1.0 - y); });
}

Tensor Tensor::abs() const {
  return unary(*this, [](double x) { return std::fabs(x); },
               [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor Tensor::negate() const {
  return unary(*this, [](double x) { return -x; },
               [](double, double) { return -1.0; });
}

Tensor Tensor::square() const {
  return unary(*this, [](double x) { return x * x; },
               [](double x, double) { return 2.0 * x; });
}

Tensor Tensor::sqrt() const {
  return unary(*this, [](double x) { return std::sqrt(x); },
               [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Tensor Tensor::exp() const {
  return unary(*this, [](double x) { return std::exp(x); },
               [](double, double y) { return y; });
}

Tensor Tensor::scale(double c) const {
  return unary(*this, [c](double x) { return c * x; },
               [c](double, double) { return c; });
}

Tensor Tensor::add_scalar(double c) const {
  return unary(*this, [c](double x) { return x + c; },
               [](double, double) { return 1.0; });
}

Tensor Tensor::operator+(const Tensor& other) const {
  require_same_shape(*this, other, "add");
  const auto& a = require(impl_);
  const auto& b = require(other.impl());
  std::vector<double> out(a->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] + b->data[i];
  return detail::make_node(a->shape, std::move(out), {a, b}, [a, b](TensorImpl& self) {
    if (a->requires_grad) a->accumulate(self.grad);
    if (b->requires_grad) b->accumulate(self.grad);
  });
}

Tensor Tensor::operator-(const Tensor& other) const {
  require_same_shape(*this, other, "subtract");
  const auto& a = require(impl_);
  const auto& b = require(other.impl());
  std::vector<double> out(a->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] - b->data[i];
  return detail::make_node(a->shape, std::move(out), {a, b}, [a, b](TensorImpl& self) {
    if (a->requires_grad) a->accumulate(self.grad);
    if (b->requires_grad) {
      auto& g = b->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor Tensor::mul(const Tensor& other) const {
  require_same_shape(*this, other, "mul");
  const auto& a = require(impl_);
  const auto& b = require(other.impl());
  std::vector<double> out(a->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] * b->data[i];
  return detail::make_node(a->shape, std::move(out), {a, b}, [a, b](TensorImpl& self) {
    if (a->requires_grad) {
      auto& g = a->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * b->data[i];
    }
    if (b->requires_grad) {
      auto& g = b->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * a->data[i];
    }
  });
}

Tensor Tensor::sum() const {
  const auto& a = require(impl_);
  double s = 0.0;
  for (double v : a->data) s += v;
  return detail::make_node({1}, {s}, {a}, [a](TensorImpl& self) {
    auto& g = a->ensure_grad();
    for (double& v : g) v += self.grad[0];
  });
}

Tensor Tensor::mean() const {
  const auto& a = require(impl_);
  double s = 0.0;
  for (double v : a->data) s += v;
  const double inv = 1.0 / static_cast<double>(a->data.size());
  return detail::make_node({1}, {s * inv}, {a}, [a, inv](TensorImpl& self) {
    auto& g = a->ensure_grad();
    const double u = self.grad[0] * inv;
    for (double& v : g) v += u;
  });
}

BackwardStats backward(const Tensor& loss) {
  const auto root = loss.impl();
  if (!root) throw std::logic_error("backward on undefined Tensor");
  if (root->data.size() != 1) {
    throw std::invalid_argument("backward requires a scalar loss, got shape " +
                                shape_str(root->shape));
  }

  // Reachable grad-requiring subgraph; nodes with !requires_grad are
  // constants and pruned from the walk.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  std::vector<TensorImpl*> stack;
  if (root->requires_grad) {
    stack.push_back(root.get());
    seen.insert(root.get());
  }
  while (!stack.empty()) {
    TensorImpl* node = stack.back();
    stack.pop_back();
    order.push_back(node);
    for (const auto& p : node->parents) {
      if (p && p->requires_grad && seen.insert(p.get()).second) {
        stack.push_back(p.get());
      }
    }
  }
  std::sort(order.begin(), order.end(),
            [](const TensorImpl* a, const TensorImpl* b) { return a->seq > b->seq; });

  // Interior grads are per-pass scratch; leaf grads accumulate.
  for (TensorImpl* node : order) {
    if (!node->parents.empty()) {
      node->ensure_grad();
      std::fill(node->grad.begin(), node->grad.end(), 0.0);
    } else {
      node->ensure_grad();
    }
  }

  BackwardStats stats;
  stats.nodes_visited = order.size();
  if (root->requires_grad) root->ensure_grad()[0] += 1.0;
  for (TensorImpl* node : order) {
    if (node->backward_fn) {
      node->backward_fn(*node);
      ++stats.backward_calls;
    }
  }
  return stats;
}

}  // namespace jpfa
