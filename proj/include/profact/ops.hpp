#pragma once

#include "profact/tensor.hpp"

#include <vector>

// Differentiable tensor operations used by the network. Image-like tensors
// are laid out as [N, C, H, W]; token sequences as [N, L, C].
namespace profact::ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

/// x[N,C,H,W] * m[N,1,H,W], the mask broadcast over channels.
Tensor mul_channel_broadcast(const Tensor& x, const Tensor& mask);

/// Element-wise max; the gradient goes to the larger operand (to `a` on ties).
Tensor maximum(const Tensor& a, const Tensor& b);
Tensor clamp(const Tensor& a, double lo, double hi);

Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// Softmax over the last axis.
Tensor softmax(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);

/// y = x W^T + b over the last axis. w: [out, in], b: [out] or undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
/// Per-pixel linear map over channels of x[N,Cin,H,W]; w: [Cout, Cin].
Tensor pointwise(const Tensor& x, const Tensor& w, const Tensor& b);

struct Conv2dOptions {
    int stride = 1;
    int padding = 0;
    int dilation = 1;
    int groups = 1;
};

/// Zero-padded 2-D convolution. w: [Cout, Cin/groups, kh, kw].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, const Conv2dOptions& opt = {});
int64_t conv_out_size(int64_t in, int kernel, const Conv2dOptions& opt);

/// Stride-1 max pooling with -inf padding; shape preserving when padding = kernel/2.
Tensor max_pool2d(const Tensor& x, int kernel, int padding);

/// Layer normalization over the last axis of x (tokens) with affine params [C].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);
/// Layer normalization over channels of x[N,C,H,W], independently per pixel.
Tensor layer_norm_channels(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                           double eps = 1e-6);

/// [N,C,H,W] -> [N,H*W,C]
Tensor to_tokens(const Tensor& x);
/// [N,H*W,C] -> [N,C,H,W]
Tensor from_tokens(const Tensor& t, int64_t h, int64_t w);
/// [N,L,C] -> [N*heads, L, C/heads]
Tensor split_heads(const Tensor& t, int heads);
/// [N*heads, L, d] -> [N, L, heads*d]
Tensor merge_heads(const Tensor& t, int heads);

/// Batched a[B,M,K] x b[B,K,N].
Tensor bmm(const Tensor& a, const Tensor& b);
/// Batched a[B,M,K] x b[B,N,K]^T.
Tensor bmm_nt(const Tensor& a, const Tensor& b);

Tensor concat_channels(const std::vector<Tensor>& xs);
/// Channel slice [begin, end) of x[N,C,H,W].
Tensor slice_channels(const Tensor& x, int64_t begin, int64_t end);
/// Samples [begin, end) of a batched tensor.
Tensor slice_batch(const Tensor& x, int64_t begin, int64_t end);

/// Bilinear resize with half-pixel centers (align_corners = false).
Tensor resize_bilinear(const Tensor& x, int64_t out_h, int64_t out_w);
/// Top-left crop of x[N,C,H,W].
Tensor crop(const Tensor& x, int64_t out_h, int64_t out_w);

/// Divides each sample of x[N,...] by its maximum. Samples whose maximum is
/// not positive pass through unchanged.
Tensor normalize_by_max(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

} // namespace profact::ops
