#include "ha2f/nn.hpp"

#include <cmath>

#include "ha2f/errors.hpp"
#include "ha2f/ops.hpp"
#include "ha2f/rng.hpp"

namespace ha2f::nn {

Tensor ParamStore::add(const std::string& name, const std::vector<int>& shape,
                       std::vector<double> data) {
  if (params_.count(name)) throw ContractError("duplicate parameter name: " + name);
  Tensor t = Tensor::from_vector(shape, std::move(data), /*requires_grad=*/true);
  params_.emplace(name, t);
  return t;
}

Tensor ParamStore::gaussian(const std::string& name, const std::vector<int>& shape,
                            double stddev) {
  Rng rng(derive_seed(seed_, name));
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = stddev * rng.normal();
  return add(name, shape, std::move(data));
}

Tensor ParamStore::uniform(const std::string& name, const std::vector<int>& shape, double bound) {
  Rng rng(derive_seed(seed_, name));
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = rng.uniform(-bound, bound);
  return add(name, shape, std::move(data));
}

Tensor ParamStore::constant(const std::string& name, const std::vector<int>& shape, double value) {
  return add(name, shape, std::vector<double>(shape_numel(shape), value));
}

std::shared_ptr<std::vector<double>> ParamStore::buffer(const std::string& name, int size,
                                                        double fill) {
  if (buffers_.count(name)) throw ContractError("duplicate buffer name: " + name);
  auto buf = std::make_shared<std::vector<double>>(size, fill);
  buffers_.emplace(name, buf);
  return buf;
}

long long ParamStore::param_count() const {
  long long n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& [name, t] : params_) t.zero_grad();
}

Conv2d::Conv2d(ParamStore& ps, const std::string& name, int cin, int cout, int k, int stride_,
               int pad_, int groups_, bool has_bias)
    : stride(stride_), pad(pad_), groups(groups_) {
  const int fan_in = (cin / groups_) * k * k;
  w = ps.gaussian(name + ".w", {cout, cin / groups_, k, k}, std::sqrt(2.0 / fan_in));
  if (has_bias) b = ps.constant(name + ".b", {cout}, 0.0);
}

Tensor Conv2d::forward(const Tensor& x) const { return ops::conv2d(x, w, b, stride, pad, groups); }

BatchNorm2d::BatchNorm2d(ParamStore& ps, const std::string& name, int channels) {
  gamma = ps.constant(name + ".gamma", {channels}, 1.0);
  beta = ps.constant(name + ".beta", {channels}, 0.0);
  running_mean = ps.buffer(name + ".running_mean", channels, 0.0);
  running_var = ps.buffer(name + ".running_var", channels, 1.0);
}

Tensor BatchNorm2d::forward(const Tensor& x, bool training) const {
  return ops::batchnorm2d(x, gamma, beta, *running_mean, *running_var, training, momentum, eps);
}

Linear::Linear(ParamStore& ps, const std::string& name, int din, int dout, bool has_bias) {
  const double bound = std::sqrt(6.0 / (din + dout));
  w = ps.uniform(name + ".w", {din, dout}, bound);
  if (has_bias) b = ps.constant(name + ".b", {dout}, 0.0);
}

Tensor Linear::forward(const Tensor& x) const { return ops::linear(x, w, b); }

LayerNorm::LayerNorm(ParamStore& ps, const std::string& name, int dim) {
  gamma = ps.constant(name + ".gamma", {dim}, 1.0);
  beta = ps.constant(name + ".beta", {dim}, 0.0);
}

Tensor LayerNorm::forward(const Tensor& x) const { return ops::layernorm(x, gamma, beta, eps); }

}  // namespace ha2f::nn
