#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <vector>

namespace ha2f {

class Tensor;

namespace detail {

struct TensorImpl {
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated on demand, same length as value
  bool requires_grad = false;

  // Reverse-mode node: backward_fn reads this->grad and accumulates into
  // the parents' grads. Leaf tensors have no backward_fn.
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backward_fn;

  int numel() const { return static_cast<int>(value.size()); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

/// Dense double tensor with reverse-mode autodiff. Copies are shallow
/// (shared storage); use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const std::vector<int>& shape, bool requires_grad = false);
  static Tensor full(const std::vector<int>& shape, double v, bool requires_grad = false);
  static Tensor from_vector(const std::vector<int>& shape, std::vector<double> data,
                            bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  /// Graph-building constructor used by ops. Attaches the node only when a
  /// parent participates in autodiff; otherwise returns a plain tensor.
  static Tensor make(std::vector<int> shape, std::vector<double> value,
                     const std::vector<Tensor>& parents,
                     std::function<void(detail::TensorImpl&)> backward_fn);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const;  // negative indices count from the back
  int numel() const { return impl_->numel(); }

  double* data() { return impl_->value.data(); }
  const double* data() const { return impl_->value.data(); }
  const std::vector<double>& values() const { return impl_->value; }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool rg);
  double* grad_data();
  const std::vector<double>& grad() const { return impl_->grad; }
  void zero_grad();

  double item() const;
  double at(std::initializer_list<int> idx) const;
  bool all_finite() const;

  /// Shares storage, drops the autodiff graph.
  Tensor detach() const;
  /// Deep copy of values, no graph.
  Tensor clone() const;

  /// Backpropagate from this scalar through the recorded graph.
  void backward();

  std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

int shape_numel(const std::vector<int>& shape);

}  // namespace ha2f
