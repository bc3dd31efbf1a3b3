#include "ha2f/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "ha2f/errors.hpp"

namespace ha2f {

int shape_numel(const std::vector<int>& shape) {
  int n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape");
    n *= d;
  }
  return n;
}

Tensor Tensor::zeros(const std::vector<int>& shape, bool requires_grad) {
  return from_vector(shape, std::vector<double>(shape_numel(shape), 0.0), requires_grad);
}

Tensor Tensor::full(const std::vector<int>& shape, double v, bool requires_grad) {
  return from_vector(shape, std::vector<double>(shape_numel(shape), v), requires_grad);
}

Tensor Tensor::from_vector(const std::vector<int>& shape, std::vector<double> data,
                           bool requires_grad) {
  if (static_cast<int>(data.size()) != shape_numel(shape))
    throw ShapeError("from_vector: data length does not match shape");
  Tensor t;
  t.impl_ = std::make_shared<detail::TensorImpl>();
  t.impl_->shape = shape;
  t.impl_->value = std::move(data);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from_vector({1}, {v}, requires_grad);
}

Tensor Tensor::make(std::vector<int> shape, std::vector<double> value,
                    const std::vector<Tensor>& parents,
                    std::function<void(detail::TensorImpl&)> backward_fn) {
  Tensor t = from_vector(shape, std::move(value), false);
  bool any_grad = false;
  for (const Tensor& p : parents) any_grad = any_grad || p.requires_grad();
  if (any_grad) {
    t.impl_->requires_grad = true;
    t.impl_->parents.reserve(parents.size());
    for (const Tensor& p : parents) t.impl_->parents.push_back(p.impl());
    t.impl_->backward_fn = std::move(backward_fn);
  }
  return t;
}

int Tensor::dim(int i) const {
  const int r = rank();
  if (i < 0) i += r;
  if (i < 0 || i >= r) throw ShapeError("dim index out of range");
  return impl_->shape[i];
}

Tensor& Tensor::set_requires_grad(bool rg) {
  impl_->requires_grad = rg;
  return *this;
}

double* Tensor::grad_data() {
  impl_->ensure_grad();
  return impl_->grad.data();
}

void Tensor::zero_grad() {
  impl_->grad.assign(impl_->value.size(), 0.0);
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() requires a single-element tensor");
  return impl_->value[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
  if (static_cast<int>(idx.size()) != rank()) throw ShapeError("at(): index rank mismatch");
  int flat = 0, i = 0;
  for (int v : idx) {
    if (v < 0 || v >= impl_->shape[i]) throw ShapeError("at(): index out of bounds");
    flat = flat * impl_->shape[i] + v;
    ++i;
  }
  return impl_->value[flat];
}

bool Tensor::all_finite() const {
  for (double v : impl_->value)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor Tensor::detach() const {
  Tensor t;
  t.impl_ = std::make_shared<detail::TensorImpl>();
  t.impl_->shape = impl_->shape;
  t.impl_->value = impl_->value;  // copy of values, no graph
  return t;
}

Tensor Tensor::clone() const {
  return detach();
}

void Tensor::backward() {
  if (numel() != 1) throw ShapeError("backward() requires a scalar");
  if (!impl_->requires_grad) return;

  // Iterative post-order DFS for a topological ordering.
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<detail::TensorImpl*> seen;
  std::vector<std::pair<detail::TensorImpl*, size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  seen.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::TensorImpl* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  impl_->ensure_grad();
  impl_->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* node = *it;
    if (node->backward_fn) {
      node->ensure_grad();
      node->backward_fn(*node);
    }
  }
}

}  // namespace ha2f
