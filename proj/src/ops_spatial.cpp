#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "ha2f/errors.hpp"
#include "ha2f/ops.hpp"

namespace ha2f::ops {

namespace {

using Impl = detail::TensorImpl;
using ImplPtr = std::shared_ptr<Impl>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMat>;
using CMapM = Eigen::Map<const RowMat>;

// im2col for one sample and one group slice.
// x: (cin, h, w) base pointer; col: (cin*k*k, ho*wo).
void im2col(const double* x, int cin, int h, int w, int k, int stride, int pad, int ho, int wo,
            double* col) {
  for (int c = 0; c < cin; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        double* dst = col + ((static_cast<size_t>(c) * k + ki) * k + kj) * (static_cast<size_t>(ho) * wo);
        for (int oi = 0; oi < ho; ++oi) {
          const int iy = oi * stride - pad + ki;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, 0.0);
            dst += wo;
            continue;
          }
          const double* src = x + (static_cast<size_t>(c) * h + iy) * w;
          for (int oj = 0; oj < wo; ++oj) {
            const int ix = oj * stride - pad + kj;
            *dst++ = (ix >= 0 && ix < w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_accum(const double* col, int cin, int h, int w, int k, int stride, int pad, int ho,
                  int wo, double* x) {
  for (int c = 0; c < cin; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const double* src =
            col + ((static_cast<size_t>(c) * k + ki) * k + kj) * (static_cast<size_t>(ho) * wo);
        for (int oi = 0; oi < ho; ++oi) {
          const int iy = oi * stride - pad + ki;
          if (iy < 0 || iy >= h) {
            src += wo;
            continue;
          }
          double* dst = x + (static_cast<size_t>(c) * h + iy) * w;
          for (int oj = 0; oj < wo; ++oj, ++src) {
            const int ix = oj * stride - pad + kj;
            if (ix >= 0 && ix < w) dst[ix] += *src;
          }
        }
      }
    }
  }
}

struct BilinearTap {
  int x0, x1, y0, y1;
  double fx, fy;
  bool dx_active, dy_active;  // false where the sample clamped to the border
};

BilinearTap make_tap(double sx, double sy, int w, int h) {
  BilinearTap t;
  t.dx_active = sx > 0.0 && sx < w - 1;
  t.dy_active = sy > 0.0 && sy < h - 1;
  sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
  sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
  t.x0 = static_cast<int>(std::floor(sx));
  t.y0 = static_cast<int>(std::floor(sy));
  t.x0 = std::min(t.x0, w - 1);
  t.y0 = std::min(t.y0, h - 1);
  t.x1 = std::min(t.x0 + 1, w - 1);
  t.y1 = std::min(t.y0 + 1, h - 1);
  t.fx = sx - t.x0;
  t.fy = sy - t.y0;
  return t;
}

double sample_tap(const double* plane, int w, const BilinearTap& t) {
  const double a = plane[t.y0 * w + t.x0];
  const double b = plane[t.y0 * w + t.x1];
  const double c = plane[t.y1 * w + t.x0];
  const double d = plane[t.y1 * w + t.x1];
  return (1.0 - t.fy) * ((1.0 - t.fx) * a + t.fx * b) + t.fy * ((1.0 - t.fx) * c + t.fx * d);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<size_t>(m) * n);
  CMapM A(a.data(), m, k), B(b.data(), k, n);
  MapM(out.data(), m, n).noalias() = A * B;
  ImplPtr ai = a.impl(), bi = b.impl();
  return Tensor::make({m, n}, std::move(out), {a, b}, [ai, bi, m, k, n](Impl& node) {
    CMapM dC(node.grad.data(), m, n);
    if (ai->requires_grad) {
      ai->ensure_grad();
      MapM(ai->grad.data(), m, k).noalias() += dC * CMapM(bi->value.data(), k, n).transpose();
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      MapM(bi->grad.data(), k, n).noalias() += CMapM(ai->value.data(), m, k).transpose() * dC;
    }
  });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0))
    throw ShapeError("bmm: expected matching 3D batches");
  const int bs = a.dim(0), m = a.dim(1), k = a.dim(2);
  const int n = transpose_b ? b.dim(1) : b.dim(2);
  if ((transpose_b ? b.dim(2) : b.dim(1)) != k) throw ShapeError("bmm: inner dimension mismatch");
  std::vector<double> out(static_cast<size_t>(bs) * m * n);
  for (int i = 0; i < bs; ++i) {
    CMapM A(a.data() + static_cast<size_t>(i) * m * k, m, k);
    MapM C(out.data() + static_cast<size_t>(i) * m * n, m, n);
    if (transpose_b) {
      CMapM B(b.data() + static_cast<size_t>(i) * n * k, n, k);
      C.noalias() = A * B.transpose();
    } else {
      CMapM B(b.data() + static_cast<size_t>(i) * k * n, k, n);
      C.noalias() = A * B;
    }
  }
  ImplPtr ai = a.impl(), bi = b.impl();
  return Tensor::make({bs, m, n}, std::move(out), {a, b},
                      [ai, bi, bs, m, k, n, transpose_b](Impl& node) {
                        for (int i = 0; i < bs; ++i) {
                          CMapM dC(node.grad.data() + static_cast<size_t>(i) * m * n, m, n);
                          if (ai->requires_grad) {
                            ai->ensure_grad();
                            MapM dA(ai->grad.data() + static_cast<size_t>(i) * m * k, m, k);
                            if (transpose_b)
                              dA.noalias() += dC * CMapM(bi->value.data() + static_cast<size_t>(i) * n * k, n, k);
                            else
                              dA.noalias() += dC * CMapM(bi->value.data() + static_cast<size_t>(i) * k * n, k, n).transpose();
                          }
                          if (bi->requires_grad) {
                            bi->ensure_grad();
                            CMapM A(ai->value.data() + static_cast<size_t>(i) * m * k, m, k);
                            if (transpose_b) {
                              MapM dB(bi->grad.data() + static_cast<size_t>(i) * n * k, n, k);
                              dB.noalias() += dC.transpose() * A;
                            } else {
                              MapM dB(bi->grad.data() + static_cast<size_t>(i) * k * n, k, n);
                              dB.noalias() += A.transpose() * dC;
                            }
                          }
                        }
                      });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.rank() != 2) throw ShapeError("linear: weight must be 2D (din,dout)");
  const int din = w.dim(0), dout = w.dim(1);
  if (x.dim(-1) != din) throw ShapeError("linear: input feature dimension mismatch");
  if (b.defined() && b.numel() != dout) throw ShapeError("linear: bias dimension mismatch");
  const int rows = x.numel() / din;
  std::vector<double> out(static_cast<size_t>(rows) * dout);
  CMapM X(x.data(), rows, din), W(w.data(), din, dout);
  MapM Y(out.data(), rows, dout);
  Y.noalias() = X * W;
  if (b.defined()) {
    Eigen::Map<const Eigen::RowVectorXd> bias(b.data(), dout);
    Y.rowwise() += bias;
  }
  std::vector<int> oshape = x.shape();
  oshape.back() = dout;
  ImplPtr xi = x.impl(), wi = w.impl(), bi = b.defined() ? b.impl() : nullptr;
  std::vector<Tensor> parents = {x, w};
  if (b.defined()) parents.push_back(b);
  return Tensor::make(oshape, std::move(out), parents, [xi, wi, bi, rows, din, dout](Impl& node) {
    CMapM dY(node.grad.data(), rows, dout);
    if (xi->requires_grad) {
      xi->ensure_grad();
      MapM(xi->grad.data(), rows, din).noalias() += dY * CMapM(wi->value.data(), din, dout).transpose();
    }
    if (wi->requires_grad) {
      wi->ensure_grad();
      MapM(wi->grad.data(), din, dout).noalias() +=
          CMapM(xi->value.data(), rows, din).transpose() * dY;
    }
    if (bi && bi->requires_grad) {
      bi->ensure_grad();
      Eigen::Map<Eigen::RowVectorXd>(bi->grad.data(), dout) += dY.colwise().sum();
    }
  });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad, int groups) {
  if (x.rank() != 4 || w.rank() != 4) throw ShapeError("conv2d: expected NCHW input and OIHW weight");
  const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int cout = w.dim(0), cin_g = w.dim(1), k = w.dim(2);
  if (w.dim(3) != k) throw ShapeError("conv2d: only square kernels are supported");
  if (cin % groups != 0 || cout % groups != 0 || cin / groups != cin_g)
    throw ShapeError("conv2d: channel/group mismatch (cin=" + std::to_string(cin) +
                     ", groups=" + std::to_string(groups) + ", weight cin=" + std::to_string(cin_g) + ")");
  if (b.defined() && b.numel() != cout) throw ShapeError("conv2d: bias size mismatch");
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (wd + 2 * pad - k) / stride + 1;
  if (ho <= 0 || wo <= 0) throw ShapeError("conv2d: empty output");
  const int cout_g = cout / groups;
  const int patch = cin_g * k * k;
  const size_t plane_out = static_cast<size_t>(ho) * wo;

  std::vector<double> out(static_cast<size_t>(n) * cout * plane_out, 0.0);
  std::vector<double> col(static_cast<size_t>(patch) * plane_out);
  for (int in = 0; in < n; ++in) {
    for (int g = 0; g < groups; ++g) {
      const double* xg = x.data() + (static_cast<size_t>(in) * cin + g * cin_g) * h * wd;
      im2col(xg, cin_g, h, wd, k, stride, pad, ho, wo, col.data());
      CMapM W(w.data() + static_cast<size_t>(g) * cout_g * patch, cout_g, patch);
      CMapM C(col.data(), patch, static_cast<Eigen::Index>(plane_out));
      MapM Y(out.data() + (static_cast<size_t>(in) * cout + g * cout_g) * plane_out, cout_g,
             static_cast<Eigen::Index>(plane_out));
      Y.noalias() = W * C;
    }
  }
  if (b.defined()) {
    const double* pb = b.data();
    for (int in = 0; in < n; ++in)
      for (int c = 0; c < cout; ++c) {
        double* dst = out.data() + (static_cast<size_t>(in) * cout + c) * plane_out;
        for (size_t i = 0; i < plane_out; ++i) dst[i] += pb[c];
      }
  }

  ImplPtr xi = x.impl(), wi = w.impl(), bi = b.defined() ? b.impl() : nullptr;
  std::vector<Tensor> parents = {x, w};
  if (b.defined()) parents.push_back(b);
  return Tensor::make(
      {n, cout, ho, wo}, std::move(out), parents,
      [xi, wi, bi, n, cin, h, wd, cout, k, stride, pad, groups, cin_g, cout_g, patch, ho,
       wo](Impl& node) {
        const size_t plane_out = static_cast<size_t>(ho) * wo;
        std::vector<double> col(static_cast<size_t>(patch) * plane_out);
        std::vector<double> dcol(static_cast<size_t>(patch) * plane_out);
        if (xi->requires_grad) xi->ensure_grad();
        if (wi->requires_grad) wi->ensure_grad();
        for (int in = 0; in < n; ++in) {
          for (int g = 0; g < groups; ++g) {
            CMapM dY(node.grad.data() + (static_cast<size_t>(in) * cout + g * cout_g) * plane_out,
                     cout_g, static_cast<Eigen::Index>(plane_out));
            const bool need_col = wi->requires_grad;
            if (need_col) {
              const double* xg = xi->value.data() + (static_cast<size_t>(in) * cin + g * cin_g) * h * wd;
              im2col(xg, cin_g, h, wd, k, stride, pad, ho, wo, col.data());
              MapM dW(wi->grad.data() + static_cast<size_t>(g) * cout_g * patch, cout_g, patch);
              dW.noalias() += dY * CMapM(col.data(), patch, static_cast<Eigen::Index>(plane_out)).transpose();
            }
            if (xi->requires_grad) {
              CMapM W(wi->value.data() + static_cast<size_t>(g) * cout_g * patch, cout_g, patch);
              MapM dCol(dcol.data(), patch, static_cast<Eigen::Index>(plane_out));
              dCol.noalias() = W.transpose() * dY;
              double* dxg = xi->grad.data() + (static_cast<size_t>(in) * cin + g * cin_g) * h * wd;
              col2im_accum(dcol.data(), cin_g, h, wd, k, stride, pad, ho, wo, dxg);
            }
          }
        }
        if (bi && bi->requires_grad) {
          bi->ensure_grad();
          for (int in = 0; in < n; ++in)
            for (int c = 0; c < cout; ++c) {
              const double* src = node.grad.data() + (static_cast<size_t>(in) * cout + c) * plane_out;
              double s = 0.0;
              for (size_t i = 0; i < plane_out; ++i) s += src[i];
              bi->grad[c] += s;
            }
        }
      });
}

Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   std::vector<double>& running_mean, std::vector<double>& running_var,
                   bool training, double momentum, double eps) {
  if (x.rank() != 4) throw ShapeError("batchnorm2d: expected NCHW");
  const int n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (gamma.numel() != c || beta.numel() != c ||
      static_cast<int>(running_mean.size()) != c || static_cast<int>(running_var.size()) != c)
    throw ShapeError("batchnorm2d: per-channel parameter size mismatch");
  const int m = n * plane;
  std::vector<double> mean(c), inv_std(c);
  const double* px = x.data();
  if (training) {
    for (int ic = 0; ic < c; ++ic) {
      double s = 0.0;
      for (int in = 0; in < n; ++in) {
        const double* p = px + (static_cast<size_t>(in) * c + ic) * plane;
        for (int i = 0; i < plane; ++i) s += p[i];
      }
      const double mu = s / m;
      double v = 0.0;
      for (int in = 0; in < n; ++in) {
        const double* p = px + (static_cast<size_t>(in) * c + ic) * plane;
        for (int i = 0; i < plane; ++i) {
          const double d = p[i] - mu;
          v += d * d;
        }
      }
      v /= m;  // biased batch variance, as used for normalization
      mean[ic] = mu;
      inv_std[ic] = 1.0 / std::sqrt(v + eps);
      running_mean[ic] = momentum * running_mean[ic] + (1.0 - momentum) * mu;
      running_var[ic] = momentum * running_var[ic] + (1.0 - momentum) * v;
    }
  } else {
    for (int ic = 0; ic < c; ++ic) {
      mean[ic] = running_mean[ic];
      inv_std[ic] = 1.0 / std::sqrt(running_var[ic] + eps);
    }
  }

  std::vector<double> out(x.numel());
  const double* pg = gamma.data();
  const double* pb = beta.data();
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic) {
      const size_t base = (static_cast<size_t>(in) * c + ic) * plane;
      const double mu = mean[ic], istd = inv_std[ic], g = pg[ic], bv = pb[ic];
      for (int i = 0; i < plane; ++i) out[base + i] = g * (px[base + i] - mu) * istd + bv;
    }

  ImplPtr xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
  return Tensor::make(
      x.shape(), std::move(out), {x, gamma, beta},
      [xi, gi, bi, mean, inv_std, n, c, plane, m, training](Impl& node) {
        if (gi->requires_grad) gi->ensure_grad();
        if (bi->requires_grad) bi->ensure_grad();
        if (xi->requires_grad) xi->ensure_grad();
        for (int ic = 0; ic < c; ++ic) {
          const double mu = mean[ic], istd = inv_std[ic];
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (int in = 0; in < n; ++in) {
            const size_t base = (static_cast<size_t>(in) * c + ic) * plane;
            for (int i = 0; i < plane; ++i) {
              const double dy = node.grad[base + i];
              const double xhat = (xi->value[base + i] - mu) * istd;
              sum_dy += dy;
              sum_dy_xhat += dy * xhat;
            }
          }
          if (gi->requires_grad) gi->grad[ic] += sum_dy_xhat;
          if (bi->requires_grad) bi->grad[ic] += sum_dy;
          if (!xi->requires_grad) continue;
          const double g = gi->value[ic];
          if (training) {
            // Full batch-statistics backward.
            for (int in = 0; in < n; ++in) {
              const size_t base = (static_cast<size_t>(in) * c + ic) * plane;
              for (int i = 0; i < plane; ++i) {
                const double dy = node.grad[base + i];
                const double xhat = (xi->value[base + i] - mu) * istd;
                xi->grad[base + i] +=
                    g * istd * (dy - sum_dy / m - xhat * sum_dy_xhat / m);
              }
            }
          } else {
            const double gs = g * istd;
            for (int in = 0; in < n; ++in) {
              const size_t base = (static_cast<size_t>(in) * c + ic) * plane;
              for (int i = 0; i < plane; ++i) xi->grad[base + i] += gs * node.grad[base + i];
            }
          }
        }
      });
}

Tensor bilinear_up2(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("bilinear_up2: expected NCHW");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = 2 * h, wo = 2 * w;
  std::vector<BilinearTap> taps(static_cast<size_t>(ho) * wo);
  for (int oy = 0; oy < ho; ++oy)
    for (int ox = 0; ox < wo; ++ox) {
      const double sy = (oy + 0.5) * 0.5 - 0.5;
      const double sx = (ox + 0.5) * 0.5 - 0.5;
      taps[static_cast<size_t>(oy) * wo + ox] = make_tap(sx, sy, w, h);
    }
  std::vector<double> out(static_cast<size_t>(n) * c * ho * wo);
  const double* px = x.data();
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic) {
      const double* plane = px + (static_cast<size_t>(in) * c + ic) * h * w;
      double* dst = out.data() + (static_cast<size_t>(in) * c + ic) * ho * wo;
      for (size_t i = 0; i < taps.size(); ++i) dst[i] = sample_tap(plane, w, taps[i]);
    }
  ImplPtr xi = x.impl();
  return Tensor::make({n, c, ho, wo}, std::move(out), {x}, [xi, taps, n, c, h, w, ho, wo](Impl& node) {
    if (!xi->requires_grad) return;
    xi->ensure_grad();
    for (int in = 0; in < n; ++in)
      for (int ic = 0; ic < c; ++ic) {
        double* dplane = xi->grad.data() + (static_cast<size_t>(in) * c + ic) * h * w;
        const double* dy = node.grad.data() + (static_cast<size_t>(in) * c + ic) * ho * wo;
        for (size_t i = 0; i < taps.size(); ++i) {
          const BilinearTap& t = taps[i];
          const double g = dy[i];
          dplane[t.y0 * w + t.x0] += g * (1.0 - t.fy) * (1.0 - t.fx);
          dplane[t.y0 * w + t.x1] += g * (1.0 - t.fy) * t.fx;
          dplane[t.y1 * w + t.x0] += g * t.fy * (1.0 - t.fx);
          dplane[t.y1 * w + t.x1] += g * t.fy * t.fx;
        }
      }
  });
}

Tensor warp(const Tensor& x, const Tensor& flow) {
  if (x.rank() != 4 || flow.rank() != 4) throw ShapeError("warp: expected NCHW tensors");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (flow.dim(0) != n || flow.dim(1) != 2 || flow.dim(2) != h || flow.dim(3) != w)
    throw ShapeError("warp: flow must be (N,2,H,W) matching the feature");
  if (!flow.all_finite()) throw NumericError("warp: non-finite flow");
  const size_t plane = static_cast<size_t>(h) * w;
  std::vector<BilinearTap> taps(static_cast<size_t>(n) * plane);
  const double* pf = flow.data();
  for (int in = 0; in < n; ++in) {
    const double* fx = pf + static_cast<size_t>(in) * 2 * plane;
    const double* fy = fx + plane;
    for (int y = 0; y < h; ++y)
      for (int xpos = 0; xpos < w; ++xpos) {
        const size_t i = static_cast<size_t>(y) * w + xpos;
        taps[in * plane + i] = make_tap(xpos + fx[i], y + fy[i], w, h);
      }
  }
  std::vector<double> out(x.numel());
  const double* px = x.data();
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic) {
      const double* splane = px + (static_cast<size_t>(in) * c + ic) * plane;
      double* dst = out.data() + (static_cast<size_t>(in) * c + ic) * plane;
      const BilinearTap* ts = taps.data() + in * plane;
      for (size_t i = 0; i < plane; ++i) dst[i] = sample_tap(splane, w, ts[i]);
    }
  ImplPtr xi = x.impl(), fi = flow.impl();
  return Tensor::make(x.shape(), std::move(out), {x, flow}, [xi, fi, taps, n, c, h, w](Impl& node) {
    const size_t plane = static_cast<size_t>(h) * w;
    if (xi->requires_grad) xi->ensure_grad();
    if (fi->requires_grad) fi->ensure_grad();
    for (int in = 0; in < n; ++in) {
      const BilinearTap* ts = taps.data() + in * plane;
      for (int ic = 0; ic < c; ++ic) {
        const size_t base = (static_cast<size_t>(in) * c + ic) * plane;
        const double* dy = node.grad.data() + base;
        const double* sv = xi->value.data() + base;
        double* dxp = xi->requires_grad ? xi->grad.data() + base : nullptr;
        double* dfx = fi->requires_grad ? fi->grad.data() + static_cast<size_t>(in) * 2 * plane : nullptr;
        double* dfy = dfx ? dfx + plane : nullptr;
        for (size_t i = 0; i < plane; ++i) {
          const BilinearTap& t = ts[i];
          const double g = dy[i];
          if (g == 0.0) continue;
          if (dxp) {
            dxp[t.y0 * w + t.x0] += g * (1.0 - t.fy) * (1.0 - t.fx);
            dxp[t.y0 * w + t.x1] += g * (1.0 - t.fy) * t.fx;
            dxp[t.y1 * w + t.x0] += g * t.fy * (1.0 - t.fx);
            dxp[t.y1 * w + t.x1] += g * t.fy * t.fx;
          }
          if (dfx) {
            const double a = sv[t.y0 * w + t.x0];
            const double b = sv[t.y0 * w + t.x1];
            const double cc = sv[t.y1 * w + t.x0];
            const double d = sv[t.y1 * w + t.x1];
            if (t.dx_active)
              dfx[i] += g * ((1.0 - t.fy) * (b - a) + t.fy * (d - cc));
            if (t.dy_active)
              dfy[i] += g * ((1.0 - t.fx) * (cc - a) + t.fx * (d - b));
          }
        }
      }
    }
  });
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("global_avg_pool: expected NCHW");
  const int n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  std::vector<double> out(static_cast<size_t>(n) * c);
  const double* px = x.data();
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic) {
      const double* p = px + (static_cast<size_t>(in) * c + ic) * plane;
      double s = 0.0;
      for (int i = 0; i < plane; ++i) s += p[i];
      out[in * c + ic] = s / plane;
    }
  ImplPtr xi = x.impl();
  return Tensor::make({n, c}, std::move(out), {x}, [xi, n, c, plane](Impl& node) {
    if (!xi->requires_grad) return;
    xi->ensure_grad();
    for (int in = 0; in < n; ++in)
      for (int ic = 0; ic < c; ++ic) {
        const double g = node.grad[in * c + ic] / plane;
        double* dst = xi->grad.data() + (static_cast<size_t>(in) * c + ic) * plane;
        for (int i = 0; i < plane; ++i) dst[i] += g;
      }
  });
}

Tensor channel_mean_std(const Tensor& x, double var_floor) {
  if (x.rank() != 4) throw ShapeError("channel_mean_std: expected NCHW");
  const int n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  std::vector<double> out(static_cast<size_t>(n) * 2 * plane);
  const double* px = x.data();
  for (int in = 0; in < n; ++in) {
    double* mu = out.data() + static_cast<size_t>(in) * 2 * plane;
    double* sd = mu + plane;
    for (int i = 0; i < plane; ++i) {
      double s = 0.0;
      for (int ic = 0; ic < c; ++ic) s += px[(static_cast<size_t>(in) * c + ic) * plane + i];
      const double m = s / c;
      double v = 0.0;
      for (int ic = 0; ic < c; ++ic) {
        const double d = px[(static_cast<size_t>(in) * c + ic) * plane + i] - m;
        v += d * d;
      }
      v /= c;  // population variance over channels
      mu[i] = m;
      sd[i] = std::sqrt(std::max(v, var_floor));
    }
  }
  ImplPtr xi = x.impl();
  std::vector<double> saved = out;
  return Tensor::make({n, 2, x.dim(2), x.dim(3)}, std::move(out), {x},
                      [xi, saved, n, c, plane, var_floor](Impl& node) {
                        if (!xi->requires_grad) return;
                        xi->ensure_grad();
                        const double floor_std = std::sqrt(var_floor);
                        for (int in = 0; in < n; ++in) {
                          const double* mu = saved.data() + static_cast<size_t>(in) * 2 * plane;
                          const double* sd = mu + plane;
                          const double* dmu = node.grad.data() + static_cast<size_t>(in) * 2 * plane;
                          const double* dsd = dmu + plane;
                          for (int i = 0; i < plane; ++i) {
                            const double gm = dmu[i] / c;
                            // d std / dx_c = (x_c - mu) / (C * std); zero in the floored region.
                            const bool floored = sd[i] <= floor_std;
                            const double gs = floored ? 0.0 : dsd[i] / (c * sd[i]);
                            for (int ic = 0; ic < c; ++ic) {
                              const size_t idx = (static_cast<size_t>(in) * c + ic) * plane + i;
                              xi->grad[idx] += gm + gs * (xi->value[idx] - mu[i]);
                            }
                          }
                        }
                      });
}

}  // namespace ha2f::ops
