#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace jpfa {

using Shape = std::vector<int>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One node of the reverse-mode graph. Nodes are created in topological
// order (parents before children); `seq` records that order so backward
// can walk the graph strictly in reverse construction order.
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // allocated lazily, same length as data
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backward_fn;
  std::uint64_t seq = 0;

  std::vector<double>& ensure_grad();
  void accumulate(const std::vector<double>& g);
};

}  // namespace detail

struct BackwardStats {
  std::size_t nodes_visited = 0;   // unique grad-requiring nodes reached
  std::size_t backward_calls = 0;  // backward_fn invocations (one per op node)
};

// Dense 64-bit tensor participating in a reverse-mode graph. Value
// semantics: copying a Tensor copies a handle to the same node. Forward
// ops never mutate their inputs.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t size() const;
  const std::vector<double>& data() const;
  std::vector<double>& mutable_data();  // for parameter init / loading only
  double value() const;                 // single-element tensors
  bool requires_grad() const;
  bool is_leaf() const;
  const std::vector<double>& grad() const;
  void zero_grad();

  // Leaf copy sharing nothing with the graph (stop-gradient).
  Tensor detach() const;

  // elementwise, each differentiable with the documented kink rules
  Tensor relu() const;     // relu'(0) = 0
  Tensor tanh() const;
  Tensor sigmoid() const;
  Tensor abs() const;      // abs'(0) = 0
  Tensor negate() const;
  Tensor square() const;
  Tensor sqrt() const;     // sqrt'(0) treated as 0
  Tensor exp() const;
  Tensor scale(double c) const;
  Tensor add_scalar(double c) const;

  Tensor operator+(const Tensor& other) const;
  Tensor operator-(const Tensor& other) const;
  Tensor mul(const Tensor& other) const;

  Tensor sum() const;
  Tensor mean() const;

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl)
      : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

namespace detail {
Tensor make_node(Shape shape, std::vector<double> data,
                 std::vector<std::shared_ptr<TensorImpl>> parents,
                 std::function<void(TensorImpl&)> backward_fn);
void check_finite(const Tensor& t, const char* op);
}  // namespace detail

// Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable from
// `loss`. Loss must be a single-element tensor. Grad buffers of interior
// nodes are scratch and reset at the start of each call; leaf grads
// accumulate across calls until zero_grad().
BackwardStats backward(const Tensor& loss);

}  // namespace jpfa
