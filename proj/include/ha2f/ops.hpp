#pragma once

#include <vector>

#include "ha2f/tensor.hpp"

namespace ha2f::ops {

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor abs(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

// ---- reductions ----
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
/// sum_i w[i] * a[i]; handy as a randomized scalar probe in gradient tests.
Tensor weighted_sum(const Tensor& a, const std::vector<double>& w);

// ---- shape ----
Tensor reshape(const Tensor& a, const std::vector<int>& shape);
Tensor concat_channels(const std::vector<Tensor>& xs);        // NCHW, along C
Tensor slice_channels(const Tensor& x, int c0, int c1);       // [c0, c1)
Tensor tokens_from_nchw(const Tensor& x);                     // (N,C,H,W) -> (N,HW,C)
Tensor nchw_from_tokens(const Tensor& t, int height, int width);
Tensor split_heads(const Tensor& x, int heads);               // (N,T,D) -> (N*heads,T,D/heads)
Tensor merge_heads(const Tensor& x, int heads);               // inverse of split_heads
/// Non-overlapping square patches: (N,C,H,W) -> (N, (H/p)*(W/p), C*p*p).
Tensor patchify(const Tensor& x, int patch);
/// a + b with b broadcast over the leading dimension (b.dim(0) == 1).
Tensor add_broadcast0(const Tensor& a, const Tensor& b);

// ---- broadcast gates ----
Tensor mul_channel_gate(const Tensor& x, const Tensor& gate);  // gate (N,C)
Tensor mul_spatial_gate(const Tensor& x, const Tensor& gate);  // gate (N,1,H,W)

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);                        // (m,k)x(k,n)
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false); // (B,m,k)x(B,k,n)
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);       // x (...,din), w (din,dout)
Tensor softmax_lastdim(const Tensor& x);
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// ---- spatial ----
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad,
              int groups = 1);
Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   std::vector<double>& running_mean, std::vector<double>& running_var,
                   bool training, double momentum = 0.9, double eps = 1e-5);
Tensor bilinear_up2(const Tensor& x);
/// Backward bilinear sampling: out(x,y) = in(x+dx, y+dy), clamp-to-edge.
/// flow is (N,2,H,W) with channel 0 = dx (horizontal), channel 1 = dy.
Tensor warp(const Tensor& x, const Tensor& flow);
Tensor global_avg_pool(const Tensor& x);                       // (N,C,H,W)->(N,C)
/// Per-position channel mean and population std, stacked as (N,2,H,W).
/// Variance is floored before the square root.
Tensor channel_mean_std(const Tensor& x, double var_floor = 1e-12);

// ---- losses ----
Tensor bce_with_logits_mean(const Tensor& logits, const Tensor& targets);

}  // namespace ha2f::ops
