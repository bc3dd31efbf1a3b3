#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ha2f/tensor.hpp"

namespace ha2f::nn {

/// Registry of learnable parameters and persistent buffers (BN running stats).
/// Every entry has a unique name; initialization draws from a stream derived
/// from (seed, name), so values never depend on registration order or on which
/// sibling modules happen to exist.
class ParamStore {
 public:
  explicit ParamStore(uint64_t seed = 0) : seed_(seed) {}

  uint64_t seed() const { return seed_; }

  Tensor gaussian(const std::string& name, const std::vector<int>& shape, double stddev);
  Tensor uniform(const std::string& name, const std::vector<int>& shape, double bound);
  Tensor constant(const std::string& name, const std::vector<int>& shape, double value);
  std::shared_ptr<std::vector<double>> buffer(const std::string& name, int size, double fill);

  const std::map<std::string, Tensor>& params() const { return params_; }
  std::map<std::string, Tensor>& params() { return params_; }
  const std::map<std::string, std::shared_ptr<std::vector<double>>>& buffers() const {
    return buffers_;
  }
  long long param_count() const;  // total learnable scalars
  void zero_grads();

 private:
  Tensor add(const std::string& name, const std::vector<int>& shape, std::vector<double> data);

  uint64_t seed_;
  std::map<std::string, Tensor> params_;
  std::map<std::string, std::shared_ptr<std::vector<double>>> buffers_;
};

struct Conv2d {
  Tensor w, b;
  int stride = 1, pad = 0, groups = 1;

  Conv2d() = default;
  /// Fan-in-scaled Gaussian weights; zero bias (pass has_bias = false for BN-followed convs).
  Conv2d(ParamStore& ps, const std::string& name, int cin, int cout, int k, int stride, int pad,
         int groups = 1, bool has_bias = true);
  Tensor forward(const Tensor& x) const;
};

struct BatchNorm2d {
  Tensor gamma, beta;
  std::shared_ptr<std::vector<double>> running_mean, running_var;
  double momentum = 0.9;
  double eps = 1e-5;

  BatchNorm2d() = default;
  BatchNorm2d(ParamStore& ps, const std::string& name, int channels);
  Tensor forward(const Tensor& x, bool training) const;
};

struct Linear {
  Tensor w, b;  // w is (din, dout)

  Linear() = default;
  /// Scaled-uniform weights, zero bias.
  Linear(ParamStore& ps, const std::string& name, int din, int dout, bool has_bias = true);
  Tensor forward(const Tensor& x) const;
};

struct LayerNorm {
  Tensor gamma, beta;
  double eps = 1e-5;

  LayerNorm() = default;
  LayerNorm(ParamStore& ps, const std::string& name, int dim);
  Tensor forward(const Tensor& x) const;
};

}  // namespace ha2f::nn
