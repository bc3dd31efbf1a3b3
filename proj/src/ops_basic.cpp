#include <algorithm>
#include <cmath>
#include <string>

#include "ha2f/errors.hpp"
#include "ha2f/ops.hpp"

namespace ha2f::ops {

namespace {

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    std::string msg(op);
    msg += ": shape mismatch (";
    for (int d : a.shape()) msg += std::to_string(d) + " ";
    msg += "vs ";
    for (int d : b.shape()) msg += std::to_string(d) + " ";
    msg += ")";
    throw ShapeError(msg);
  }
}

using Impl = detail::TensorImpl;
using ImplPtr = std::shared_ptr<Impl>;

void accumulate(const ImplPtr& p, const std::vector<double>& g) {
  if (!p->requires_grad) return;
  p->ensure_grad();
  for (size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i];
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  const int n = a.numel();
  std::vector<double> out(n);
  const double* pa = a.data();
  const double* pb = b.data();
  for (int i = 0; i < n; ++i) out[i] = pa[i] + pb[i];
  ImplPtr ai = a.impl(), bi = b.impl();
  return Tensor::make(a.shape(), std::move(out), {a, b}, [ai, bi](Impl& node) {
    accumulate(ai, node.grad);
    accumulate(bi, node.grad);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  const int n = a.numel();
  std::vector<double> out(n);
  const double* pa = a.data();
  const double* pb = b.data();
  for (int i = 0; i < n; ++i) out[i] = pa[i] - pb[i];
  ImplPtr ai = a.impl(), bi = b.impl();
  return Tensor::make(a.shape(), std::move(out), {a, b}, [ai, bi](Impl& node) {
    accumulate(ai, node.grad);
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (size_t i = 0; i < node.grad.size(); ++i) bi->grad[i] -= node.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  const int n = a.numel();
  std::vector<double> out(n);
  const double* pa = a.data();
  const double* pb = b.data();
  for (int i = 0; i < n; ++i) out[i] = pa[i] * pb[i];
  ImplPtr ai = a.impl(), bi = b.impl();
  return Tensor::make(a.shape(), std::move(out), {a, b}, [ai, bi](Impl& node) {
    if (ai->requires_grad) {
      ai->ensure_grad();
      for (size_t i = 0; i < node.grad.size(); ++i) ai->grad[i] += node.grad[i] * bi->value[i];
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (size_t i = 0; i < node.grad.size(); ++i) bi->grad[i] += node.grad[i] * ai->value[i];
    }
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  check_same_shape("div", a, b);
  const int n = a.numel();
  std::vector<double> out(n);
  const double* pa = a.data();
  const double* pb = b.data();
  for (int i = 0; i < n; ++i) out[i] = pa[i] / pb[i];
  ImplPtr ai = a.impl(), bi = b.impl();
  return Tensor::make(a.shape(), std::move(out), {a, b}, [ai, bi](Impl& node) {
    if (ai->requires_grad) {
      ai->ensure_grad();
      for (size_t i = 0; i < node.grad.size(); ++i) ai->grad[i] += node.grad[i] / bi->value[i];
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (size_t i = 0; i < node.grad.size(); ++i) {
        const double q = ai->value[i] / bi->value[i];
        bi->grad[i] -= node.grad[i] * q / bi->value[i];
      }
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  const int n = a.numel();
  std::vector<double> out(n);
  const double* pa = a.data();
  for (int i = 0; i < n; ++i) out[i] = pa[i] * s;
  ImplPtr ai = a.impl();
  return Tensor::make(a.shape(), std::move(out), {a}, [ai, s](Impl& node) {
    if (!ai->requires_grad) return;
    ai->ensure_grad();
    for (size_t i = 0; i < node.grad.size(); ++i) ai->grad[i] += node.grad[i] * s;
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  const int n = a.numel();
  std::vector<double> out(n);
  const double* pa = a.data();
  for (int i = 0; i < n; ++i) out[i] = pa[i] + s;
  ImplPtr ai = a.impl();
  return Tensor::make(a.shape(), std::move(out), {a},
                      [ai](Impl& node) { accumulate(ai, node.grad); });
}

Tensor abs(const Tensor& a) {
  const int n = a.numel();
  std::vector<double> out(n);
  const double* pa = a.data();
  for (int i = 0; i < n; ++i) out[i] = std::fabs(pa[i]);
  ImplPtr ai = a.impl();
  return Tensor::make(a.shape(), std::move(out), {a}, [ai](Impl& node) {
    if (!ai->requires_grad) return;
    ai->ensure_grad();
    for (size_t i = 0; i < node.grad.size(); ++i) {
      const double v = ai->value[i];
      const double s = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
      ai->grad[i] += node.grad[i] * s;
    }
  });
}

Tensor relu(const Tensor& a) {
  const int n = a.numel();
  std::vector<double> out(n);
  const double* pa = a.data();
  for (int i = 0; i < n; ++i) out[i] = pa[i] > 0.0 ? pa[i] : 0.0;
  ImplPtr ai = a.impl();
  return Tensor::make(a.shape(), std::move(out), {a}, [ai](Impl& node) {
    if (!ai->requires_grad) return;
    ai->ensure_grad();
    for (size_t i = 0; i < node.grad.size(); ++i)
      if (ai->value[i] > 0.0) ai->grad[i] += node.grad[i];
  });
}

Tensor gelu(const Tensor& a) {
  static constexpr double kInvSqrt2 = 0.7071067811865475244;
  static constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  const int n = a.numel();
  std::vector<double> out(n);
  const double* pa = a.data();
  for (int i = 0; i < n; ++i) out[i] = 0.5 * pa[i] * (1.0 + std::erf(pa[i] * kInvSqrt2));
  ImplPtr ai = a.impl();
  return Tensor::make(a.shape(), std::move(out), {a}, [ai](Impl& node) {
    if (!ai->requires_grad) return;
    ai->ensure_grad();
    for (size_t i = 0; i < node.grad.size(); ++i) {
      const double x = ai->value[i];
      const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
      ai->grad[i] += node.grad[i] * (cdf + x * pdf);
    }
  });
}

Tensor sigmoid(const Tensor& a) {
  const int n = a.numel();
  std::vector<double> out(n);
  const double* pa = a.data();
  for (int i = 0; i < n; ++i) {
    const double x = pa[i];
    out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  ImplPtr ai = a.impl();
  std::vector<double> saved = out;
  return Tensor::make(a.shape(), std::move(out), {a}, [ai, saved](Impl& node) {
    if (!ai->requires_grad) return;
    ai->ensure_grad();
    for (size_t i = 0; i < node.grad.size(); ++i) {
      const double s = saved[i];
      ai->grad[i] += node.grad[i] * s * (1.0 - s);
    }
  });
}

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  const double* pa = a.data();
  for (int i = 0; i < a.numel(); ++i) s += pa[i];
  ImplPtr ai = a.impl();
  return Tensor::make({1}, {s}, {a}, [ai](Impl& node) {
    if (!ai->requires_grad) return;
    ai->ensure_grad();
    for (double& g : ai->grad) g += node.grad[0];
  });
}

Tensor mean_all(const Tensor& a) {
  return scale(sum_all(a), 1.0 / a.numel());
}

Tensor weighted_sum(const Tensor& a, const std::vector<double>& w) {
  if (static_cast<int>(w.size()) != a.numel())
    throw ShapeError("weighted_sum: weight length mismatch");
  double s = 0.0;
  const double* pa = a.data();
  for (int i = 0; i < a.numel(); ++i) s += pa[i] * w[i];
  ImplPtr ai = a.impl();
  std::vector<double> wc = w;
  return Tensor::make({1}, {s}, {a}, [ai, wc](Impl& node) {
    if (!ai->requires_grad) return;
    ai->ensure_grad();
    for (size_t i = 0; i < wc.size(); ++i) ai->grad[i] += node.grad[0] * wc[i];
  });
}

Tensor reshape(const Tensor& a, const std::vector<int>& shape) {
  if (shape_numel(shape) != a.numel()) throw ShapeError("reshape: element count mismatch");
  ImplPtr ai = a.impl();
  return Tensor::make(shape, std::vector<double>(a.data(), a.data() + a.numel()), {a},
                      [ai](Impl& node) { accumulate(ai, node.grad); });
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  const int n = xs[0].dim(0), h = xs[0].dim(2), w = xs[0].dim(3);
  int ctotal = 0;
  for (const Tensor& x : xs) {
    if (x.rank() != 4 || x.dim(0) != n || x.dim(2) != h || x.dim(3) != w)
      throw ShapeError("concat_channels: inputs must agree on N, H, W");
    ctotal += x.dim(1);
  }
  const int plane = h * w;
  std::vector<double> out(static_cast<size_t>(n) * ctotal * plane);
  int coff = 0;
  for (const Tensor& x : xs) {
    const int c = x.dim(1);
    const double* px = x.data();
    for (int in = 0; in < n; ++in) {
      double* dst = out.data() + (static_cast<size_t>(in) * ctotal + coff) * plane;
      const double* src = px + static_cast<size_t>(in) * c * plane;
      std::copy(src, src + static_cast<size_t>(c) * plane, dst);
    }
    coff += c;
  }
  std::vector<ImplPtr> impls;
  for (const Tensor& x : xs) impls.push_back(x.impl());
  return Tensor::make({n, ctotal, h, w}, std::move(out), xs,
                      [impls, n, ctotal, plane](Impl& node) {
                        int coff2 = 0;
                        for (const ImplPtr& p : impls) {
                          const int c = p->shape[1];
                          if (p->requires_grad) {
                            p->ensure_grad();
                            for (int in = 0; in < n; ++in) {
                              const double* src =
                                  node.grad.data() + (static_cast<size_t>(in) * ctotal + coff2) * plane;
                              double* dst = p->grad.data() + static_cast<size_t>(in) * c * plane;
                              for (int i = 0; i < c * plane; ++i) dst[i] += src[i];
                            }
                          }
                          coff2 += c;
                        }
                      });
}

Tensor slice_channels(const Tensor& x, int c0, int c1) {
  if (x.rank() != 4) throw ShapeError("slice_channels: expected NCHW");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (c0 < 0 || c1 > c || c0 >= c1) throw ShapeError("slice_channels: bad channel range");
  const int cs = c1 - c0, plane = h * w;
  std::vector<double> out(static_cast<size_t>(n) * cs * plane);
  const double* px = x.data();
  for (int in = 0; in < n; ++in) {
    const double* src = px + (static_cast<size_t>(in) * c + c0) * plane;
    std::copy(src, src + static_cast<size_t>(cs) * plane,
              out.data() + static_cast<size_t>(in) * cs * plane);
  }
  ImplPtr xi = x.impl();
  return Tensor::make({n, cs, h, w}, std::move(out), {x}, [xi, c0, cs, plane, c, n](Impl& node) {
    if (!xi->requires_grad) return;
    xi->ensure_grad();
    for (int in = 0; in < n; ++in) {
      double* dst = xi->grad.data() + (static_cast<size_t>(in) * c + c0) * plane;
      const double* src = node.grad.data() + static_cast<size_t>(in) * cs * plane;
      for (int i = 0; i < cs * plane; ++i) dst[i] += src[i];
    }
  });
}

Tensor tokens_from_nchw(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("tokens_from_nchw: expected NCHW");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int t = h * w;
  std::vector<double> out(static_cast<size_t>(n) * t * c);
  const double* px = x.data();
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic)
      for (int it = 0; it < t; ++it)
        out[(static_cast<size_t>(in) * t + it) * c + ic] =
            px[(static_cast<size_t>(in) * c + ic) * t + it];
  ImplPtr xi = x.impl();
  return Tensor::make({n, t, c}, std::move(out), {x}, [xi, n, c, t](Impl& node) {
    if (!xi->requires_grad) return;
    xi->ensure_grad();
    for (int in = 0; in < n; ++in)
      for (int ic = 0; ic < c; ++ic)
        for (int it = 0; it < t; ++it)
          xi->grad[(static_cast<size_t>(in) * c + ic) * t + it] +=
              node.grad[(static_cast<size_t>(in) * t + it) * c + ic];
  });
}

Tensor nchw_from_tokens(const Tensor& x, int height, int width) {
  if (x.rank() != 3) throw ShapeError("nchw_from_tokens: expected (N,T,C)");
  const int n = x.dim(0), t = x.dim(1), c = x.dim(2);
  if (t != height * width) throw ShapeError("nchw_from_tokens: T != H*W");
  std::vector<double> out(static_cast<size_t>(n) * c * t);
  const double* px = x.data();
  for (int in = 0; in < n; ++in)
    for (int it = 0; it < t; ++it)
      for (int ic = 0; ic < c; ++ic)
        out[(static_cast<size_t>(in) * c + ic) * t + it] =
            px[(static_cast<size_t>(in) * t + it) * c + ic];
  ImplPtr xi = x.impl();
  return Tensor::make({n, c, height, width}, std::move(out), {x}, [xi, n, c, t](Impl& node) {
    if (!xi->requires_grad) return;
    xi->ensure_grad();
    for (int in = 0; in < n; ++in)
      for (int it = 0; it < t; ++it)
        for (int ic = 0; ic < c; ++ic)
          xi->grad[(static_cast<size_t>(in) * t + it) * c + ic] +=
              node.grad[(static_cast<size_t>(in) * c + ic) * t + it];
  });
}

Tensor split_heads(const Tensor& x, int heads) {
  if (x.rank() != 3 || x.dim(2) % heads != 0)
    throw ShapeError("split_heads: expected (N,T,D) with D divisible by heads");
  const int n = x.dim(0), t = x.dim(1), d = x.dim(2), dh = d / heads;
  std::vector<double> out(x.numel());
  const double* px = x.data();
  for (int in = 0; in < n; ++in)
    for (int ih = 0; ih < heads; ++ih)
      for (int it = 0; it < t; ++it)
        for (int j = 0; j < dh; ++j)
          out[((static_cast<size_t>(in) * heads + ih) * t + it) * dh + j] =
              px[(static_cast<size_t>(in) * t + it) * d + ih * dh + j];
  ImplPtr xi = x.impl();
  return Tensor::make({n * heads, t, dh}, std::move(out), {x}, [xi, n, heads, t, dh, d](Impl& node) {
    if (!xi->requires_grad) return;
    xi->ensure_grad();
    for (int in = 0; in < n; ++in)
      for (int ih = 0; ih < heads; ++ih)
        for (int it = 0; it < t; ++it)
          for (int j = 0; j < dh; ++j)
            xi->grad[(static_cast<size_t>(in) * t + it) * d + ih * dh + j] +=
                node.grad[((static_cast<size_t>(in) * heads + ih) * t + it) * dh + j];
  });
}

Tensor merge_heads(const Tensor& x, int heads) {
  if (x.rank() != 3 || x.dim(0) % heads != 0)
    throw ShapeError("merge_heads: expected (N*heads,T,Dh)");
  const int n = x.dim(0) / heads, t = x.dim(1), dh = x.dim(2), d = dh * heads;
  std::vector<double> out(x.numel());
  const double* px = x.data();
  for (int in = 0; in < n; ++in)
    for (int ih = 0; ih < heads; ++ih)
      for (int it = 0; it < t; ++it)
        for (int j = 0; j < dh; ++j)
          out[(static_cast<size_t>(in) * t + it) * d + ih * dh + j] =
              px[((static_cast<size_t>(in) * heads + ih) * t + it) * dh + j];
  ImplPtr xi = x.impl();
  return Tensor::make({n, t, d}, std::move(out), {x}, [xi, n, heads, t, dh, d](Impl& node) {
    if (!xi->requires_grad) return;
    xi->ensure_grad();
    for (int in = 0; in < n; ++in)
      for (int ih = 0; ih < heads; ++ih)
        for (int it = 0; it < t; ++it)
          for (int j = 0; j < dh; ++j)
            xi->grad[((static_cast<size_t>(in) * heads + ih) * t + it) * dh + j] +=
                node.grad[(static_cast<size_t>(in) * t + it) * d + ih * dh + j];
  });
}

Tensor patchify(const Tensor& x, int patch) {
  if (x.rank() != 4) throw ShapeError("patchify: expected NCHW");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % patch != 0 || w % patch != 0)
    throw ShapeError("patchify: spatial size " + std::to_string(h) + "x" + std::to_string(w) +
                     " not divisible by patch " + std::to_string(patch));
  const int gh = h / patch, gw = w / patch, t = gh * gw, pd = c * patch * patch;
  std::vector<double> out(static_cast<size_t>(n) * t * pd);
  const double* px = x.data();
  for (int in = 0; in < n; ++in)
    for (int gy = 0; gy < gh; ++gy)
      for (int gx = 0; gx < gw; ++gx) {
        double* dst = out.data() + ((static_cast<size_t>(in) * t) + gy * gw + gx) * pd;
        for (int ic = 0; ic < c; ++ic)
          for (int py = 0; py < patch; ++py)
            for (int pxx = 0; pxx < patch; ++pxx)
              *dst++ = px[((static_cast<size_t>(in) * c + ic) * h + gy * patch + py) * w +
                          gx * patch + pxx];
      }
  ImplPtr xi = x.impl();
  return Tensor::make({n, t, pd}, std::move(out), {x},
                      [xi, n, c, h, w, patch, gh, gw, t, pd](Impl& node) {
                        if (!xi->requires_grad) return;
                        xi->ensure_grad();
                        for (int in = 0; in < n; ++in)
                          for (int gy = 0; gy < gh; ++gy)
                            for (int gx = 0; gx < gw; ++gx) {
                              const double* src =
                                  node.grad.data() + ((static_cast<size_t>(in) * t) + gy * gw + gx) * pd;
                              for (int ic = 0; ic < c; ++ic)
                                for (int py = 0; py < patch; ++py)
                                  for (int pxx = 0; pxx < patch; ++pxx)
                                    xi->grad[((static_cast<size_t>(in) * c + ic) * h + gy * patch + py) * w +
                                             gx * patch + pxx] += *src++;
                            }
                      });
}

Tensor add_broadcast0(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || b.dim(0) != 1)
    throw ShapeError("add_broadcast0: b must have leading dimension 1");
  for (int i = 1; i < a.rank(); ++i)
    if (a.dim(i) != b.dim(i)) throw ShapeError("add_broadcast0: trailing shape mismatch");
  const int n = a.dim(0);
  const int inner = b.numel();
  std::vector<double> out(a.numel());
  const double* pa = a.data();
  const double* pb = b.data();
  for (int in = 0; in < n; ++in)
    for (int i = 0; i < inner; ++i)
      out[static_cast<size_t>(in) * inner + i] = pa[static_cast<size_t>(in) * inner + i] + pb[i];
  ImplPtr ai = a.impl(), bi = b.impl();
  return Tensor::make(a.shape(), std::move(out), {a, b}, [ai, bi, n, inner](Impl& node) {
    accumulate(ai, node.grad);
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (int in = 0; in < n; ++in)
        for (int i = 0; i < inner; ++i)
          bi->grad[i] += node.grad[static_cast<size_t>(in) * inner + i];
    }
  });
}

Tensor mul_channel_gate(const Tensor& x, const Tensor& gate) {
  if (x.rank() != 4 || gate.rank() != 2 || gate.dim(0) != x.dim(0) || gate.dim(1) != x.dim(1))
    throw ShapeError("mul_channel_gate: gate must be (N,C) matching x");
  const int n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  std::vector<double> out(x.numel());
  const double* px = x.data();
  const double* pg = gate.data();
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic) {
      const double g = pg[in * c + ic];
      const double* src = px + (static_cast<size_t>(in) * c + ic) * plane;
      double* dst = out.data() + (static_cast<size_t>(in) * c + ic) * plane;
      for (int i = 0; i < plane; ++i) dst[i] = src[i] * g;
    }
  ImplPtr xi = x.impl(), gi = gate.impl();
  return Tensor::make(x.shape(), std::move(out), {x, gate}, [xi, gi, n, c, plane](Impl& node) {
    for (int in = 0; in < n; ++in)
      for (int ic = 0; ic < c; ++ic) {
        const size_t base = (static_cast<size_t>(in) * c + ic) * plane;
        if (xi->requires_grad) {
          xi->ensure_grad();
          const double g = gi->value[in * c + ic];
          for (int i = 0; i < plane; ++i) xi->grad[base + i] += node.grad[base + i] * g;
        }
        if (gi->requires_grad) {
          gi->ensure_grad();
          double s = 0.0;
          for (int i = 0; i < plane; ++i) s += node.grad[base + i] * xi->value[base + i];
          gi->grad[in * c + ic] += s;
        }
      }
  });
}

Tensor mul_spatial_gate(const Tensor& x, const Tensor& gate) {
  if (x.rank() != 4 || gate.rank() != 4 || gate.dim(0) != x.dim(0) || gate.dim(1) != 1 ||
      gate.dim(2) != x.dim(2) || gate.dim(3) != x.dim(3))
    throw ShapeError("mul_spatial_gate: gate must be (N,1,H,W) matching x");
  const int n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  std::vector<double> out(x.numel());
  const double* px = x.data();
  const double* pg = gate.data();
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic) {
      const size_t base = (static_cast<size_t>(in) * c + ic) * plane;
      const double* g = pg + static_cast<size_t>(in) * plane;
      for (int i = 0; i < plane; ++i) out[base + i] = px[base + i] * g[i];
    }
  ImplPtr xi = x.impl(), gi = gate.impl();
  return Tensor::make(x.shape(), std::move(out), {x, gate}, [xi, gi, n, c, plane](Impl& node) {
    for (int in = 0; in < n; ++in) {
      const double* g = gi->value.data() + static_cast<size_t>(in) * plane;
      for (int ic = 0; ic < c; ++ic) {
        const size_t base = (static_cast<size_t>(in) * c + ic) * plane;
        if (xi->requires_grad) {
          xi->ensure_grad();
          for (int i = 0; i < plane; ++i) xi->grad[base + i] += node.grad[base + i] * g[i];
        }
        if (gi->requires_grad) {
          gi->ensure_grad();
          double* gg = gi->grad.data() + static_cast<size_t>(in) * plane;
          for (int i = 0; i < plane; ++i) gg[i] += node.grad[base + i] * xi->value[base + i];
        }
      }
    }
  });
}

Tensor softmax_lastdim(const Tensor& x) {
  const int k = x.dim(-1);
  const int rows = x.numel() / k;
  std::vector<double> out(x.numel());
  const double* px = x.data();
  for (int r = 0; r < rows; ++r) {
    const double* row = px + static_cast<size_t>(r) * k;
    double* orow = out.data() + static_cast<size_t>(r) * k;
    double mx = row[0];
    for (int i = 1; i < k; ++i) mx = std::max(mx, row[i]);
    double z = 0.0;
    for (int i = 0; i < k; ++i) {
      orow[i] = std::exp(row[i] - mx);
      z += orow[i];
    }
    for (int i = 0; i < k; ++i) orow[i] /= z;
  }
  ImplPtr xi = x.impl();
  std::vector<double> saved = out;
  return Tensor::make(x.shape(), std::move(out), {x}, [xi, saved, rows, k](Impl& node) {
    if (!xi->requires_grad) return;
    xi->ensure_grad();
    for (int r = 0; r < rows; ++r) {
      const double* s = saved.data() + static_cast<size_t>(r) * k;
      const double* dy = node.grad.data() + static_cast<size_t>(r) * k;
      double* dx = xi->grad.data() + static_cast<size_t>(r) * k;
      double dot = 0.0;
      for (int i = 0; i < k; ++i) dot += dy[i] * s[i];
      for (int i = 0; i < k; ++i) dx[i] += s[i] * (dy[i] - dot);
    }
  });
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const int d = x.dim(-1);
  if (gamma.numel() != d || beta.numel() != d)
    throw ShapeError("layernorm: affine parameters must match the last dimension");
  const int rows = x.numel() / d;
  std::vector<double> out(x.numel());
  std::vector<double> mean(rows), inv_std(rows);
  const double* px = x.data();
  const double* pg = gamma.data();
  const double* pb = beta.data();
  for (int r = 0; r < rows; ++r) {
    const double* row = px + static_cast<size_t>(r) * d;
    double m = 0.0;
    for (int i = 0; i < d; ++i) m += row[i];
    m /= d;
    double v = 0.0;
    for (int i = 0; i < d; ++i) {
      const double c = row[i] - m;
      v += c * c;
    }
    v /= d;
    const double istd = 1.0 / std::sqrt(v + eps);
    mean[r] = m;
    inv_std[r] = istd;
    double* orow = out.data() + static_cast<size_t>(r) * d;
    for (int i = 0; i < d; ++i) orow[i] = pg[i] * (row[i] - m) * istd + pb[i];
  }
  ImplPtr xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
  return Tensor::make(x.shape(), std::move(out), {x, gamma, beta},
                      [xi, gi, bi, mean, inv_std, rows, d](Impl& node) {
                        for (int r = 0; r < rows; ++r) {
                          const double* xrow = xi->value.data() + static_cast<size_t>(r) * d;
                          const double* dy = node.grad.data() + static_cast<size_t>(r) * d;
                          const double m = mean[r], istd = inv_std[r];
                          if (gi->requires_grad || bi->requires_grad) {
                            if (gi->requires_grad) gi->ensure_grad();
                            if (bi->requires_grad) bi->ensure_grad();
                            for (int i = 0; i < d; ++i) {
                              const double xhat = (xrow[i] - m) * istd;
                              if (gi->requires_grad) gi->grad[i] += dy[i] * xhat;
                              if (bi->requires_grad) bi->grad[i] += dy[i];
                            }
                          }
                          if (xi->requires_grad) {
                            xi->ensure_grad();
                            double sum_g = 0.0, sum_gx = 0.0;
                            for (int i = 0; i < d; ++i) {
                              const double g = dy[i] * gi->value[i];
                              const double xhat = (xrow[i] - m) * istd;
                              sum_g += g;
                              sum_gx += g * xhat;
                            }
                            double* dx = xi->grad.data() + static_cast<size_t>(r) * d;
                            for (int i = 0; i < d; ++i) {
                              const double g = dy[i] * gi->value[i];
                              const double xhat = (xrow[i] - m) * istd;
                              dx[i] += istd * (g - sum_g / d - xhat * sum_gx / d);
                            }
                          }
                        }
                      });
}

Tensor bce_with_logits_mean(const Tensor& logits, const Tensor& targets) {
  check_same_shape("bce_with_logits_mean", logits, targets);
  const int n = logits.numel();
  const double* pl = logits.data();
  const double* pt = targets.data();
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = pl[i], z = pt[i];
    total += std::max(x, 0.0) - x * z + std::log1p(std::exp(-std::fabs(x)));
  }
  total /= n;
  ImplPtr li = logits.impl(), ti = targets.impl();
  return Tensor::make({1}, {total}, {logits, targets}, [li, ti, n](Impl& node) {
    if (!li->requires_grad) return;
    li->ensure_grad();
    const double g0 = node.grad[0] / n;
    for (int i = 0; i < n; ++i) {
      const double x = li->value[i];
      const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      li->grad[i] += g0 * (s - ti->value[i]);
    }
  });
}

}  // namespace ha2f::ops
