#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "dcnas/tape.hpp"

// Differentiable primitives. Every function records one node on the tape of
// its first argument and returns the output handle.
namespace dcnas {

inline constexpr int kIgnoreLabel = 255;

struct Conv2dOptions {
  int stride = 1;
  int dilation = 1;
  int groups = 1;
  int pad = 0;
};

/// "Same" padding for an odd kernel: dilation * (k - 1) / 2.
int same_padding(int kernel, int dilation);

/// Cross-correlation. `w` is (C_out, C_in/groups, kH, kW); `b`, when given, is (1,C_out,1,1).
Var conv2d(Var x, Var w, std::optional<Var> b, const Conv2dOptions& opt);

/// Stacks two (N,C,H,W) tensors along a new depth axis: (N,C,2,H,W).
Var stack_depth(Var a, Var b);

/// (N,C,2,H,W) convolved by a (C_out,C,2,3,3) kernel with spatial pad 1 and no
/// depth pad; the collapsed depth axis is squeezed, giving (N,C_out,H,W).
Var conv3d_2x3x3(Var x, Var w, std::optional<Var> b);

/// Bilinear resize with align-corners sampling.
Var bilinear_resize(Var x, int out_h, int out_w);

/// Samples x (N,C,H,W) at grid (N,Ho,Wo,2) holding normalized (x,y) in [-1,1],
/// align-corners convention, zeros outside the input.
Var grid_sample(Var x, Var grid);

/// theta (N,6,1,1) -> grid (N,H,W,2), align-corners base coordinates.
Var affine_grid(Var theta, int h, int w);

/// Identity sampling grid (N,H,W,2) as a plain tensor.
Tensor identity_grid(int n, int h, int w);

Var global_avg_pool(Var x);
Var adaptive_avg_pool(Var x, int out_h, int out_w);

/// Elementwise a+b and a*b. `b` may broadcast along any axis where its extent is 1.
Var add(Var a, Var b);
Var mul(Var a, Var b);
/// a (N,C,H,W) scaled by per-channel factors s of shape (1,C,1,1) or (N,C,1,1).
Var scale_by_channel(Var a, Var s);
Var scale(Var x, double factor);

Var sigmoid(Var x);
Var relu(Var x);
Var tanh(Var x);
Var exp(Var x);

Var concat_channels(const std::vector<Var>& xs);
Var slice_channels(Var x, int start, int count);

/// x (N,F,1,1), w (O,F,1,1), b (1,O,1,1) -> (N,O,1,1).
Var linear(Var x, Var w, std::optional<Var> b);

Var sum(Var x);
Var mean(Var x);
/// sum(x * weights) for a fixed weight tensor of the same shape.
Var weighted_sum(Var x, const Tensor& weights);

/// Mean over non-ignored pixels of -log softmax(logits)[label]. labels is (N,H,W)
/// flattened; kIgnoreLabel pixels are skipped. Returns 0 when everything is ignored.
Var softmax_cross_entropy(Var logits, const std::vector<std::uint8_t>& labels);
/// Same, but returns the sum over scored pixels instead of the mean.
Var softmax_cross_entropy_sum(Var logits, const std::vector<std::uint8_t>& labels);

/// Each (n,c) plane divided by (sum |x| + eps).
Var l1_normalize_planes(Var x, double eps = 1e-6);
/// Per-sample depthwise correlation of x (N,C,H,W) with filters (N,C,3,3), pad 1.
Var dynamic_depthwise_conv3x3(Var filters, Var x);

/// Deformable 3x3 convolution, stride 1, pad 1. offset is (N,18,H,W) holding
/// (dy,dx) for each of the nine taps in row-major tap order.
Var deform_conv3x3(Var x, Var offset, Var w, std::optional<Var> b);

/// Row-wise log-softmax over the first `valid` logits of (N,V,1,1); output (N,valid,1,1).
Var log_softmax_rows(Var logits, int valid);
/// Picks x[n, index[n]] from (N,V,1,1) into (N,1,1,1).
Var gather_rows(Var x, const std::vector<int>& index);
/// -sum_j exp(l_j) l_j per row of log-probabilities (N,V,1,1) -> (N,1,1,1).
Var entropy_rows(Var logp);
/// Rows of table (V,E,1,1) -> (N,E,1,1).
Var embedding(Var table, const std::vector<int>& index);

/// Mean over n of min(r_n A_n, clip(r_n, 1-eps, 1+eps) A_n), r_n = exp(logp_new_n - logp_old_n).
Var ppo_clipped_surrogate(Var logp_new, const std::vector<double>& logp_old,
                          const std::vector<double>& advantage, double clip_eps);

/// Channel argmax of (N,C,H,W) as (N,H,W) labels; not differentiable.
std::vector<std::uint8_t> argmax_channels(const Tensor& logits);

}  // namespace dcnas
