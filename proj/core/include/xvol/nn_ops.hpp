#pragma once

#include <vector>

#include "xvol/tensor.hpp"

namespace xvol {

/// Static convolution weight (c_out, c_in, k, k) with per-output-channel bias.
///
/// Taps are applied as a correlation centred on the output pixel:
///   y[o,i,j] = b[o] + sum_{c,a,b} W[o,c,a,b] * x[c, i*s + (a - k/2)*d, j*s + (b - k/2)*d]
/// with zero padding outside the input.
struct ConvKernel {
  Tensor4 weight;
  std::vector<float> bias;
  int stride = 1;
  int dilation = 1;
  int padding = 0;  // per side

  /// Kernel whose padding keeps spatial dims unchanged at stride 1.
  static ConvKernel same(Tensor4 weight, std::vector<float> bias, int dilation = 1);
  static ConvKernel zeros(int c_out, int c_in, int k, int dilation = 1);

  int c_out() const { return weight.n(); }
  int c_in() const { return weight.c(); }
  int k() const { return weight.h(); }
  /// Spatial extent covered by the dilated taps.
  int extent() const { return dilation * (k() - 1) + 1; }
  bool is_same() const { return stride == 1 && padding == dilation * (k() / 2); }

  /// Throws DomainError on even/non-square kernels, bad stride or dilation,
  /// or a bias of the wrong length.
  void validate() const;
};

/// Inference-mode batch-normalisation statistics.
struct BatchNormParams {
  std::vector<float> gamma;
  std::vector<float> beta;
  std::vector<float> mean;
  std::vector<float> var;
  float eps = 1e-5f;

  static BatchNormParams identity(int channels, float eps = 1e-5f);

  int channels() const { return static_cast<int>(gamma.size()); }
  /// gamma / sqrt(var + eps), computed in double.
  std::vector<double> scale() const;
  /// beta - mean * scale.
  std::vector<double> shift() const;
  void validate() const;
};

/// 1x1 query / key / value embeddings, each (c_emb, c_in, 1, 1).
struct AttentionParams {
  Tensor4 wq;
  Tensor4 wk;
  Tensor4 wv;

  int c_emb() const { return wq.n(); }
  int c_in() const { return wq.c(); }
  void validate() const;
};

struct AttentionOptions {
  /// Divide logits by sqrt(c_emb). Off by default: plain softmax(Q^T K).
  bool scale_logits = false;
};

/// Per-position, per-offset similarity coefficients of a dynamic kernel.
///
/// coeff is laid out (n, h, w, offset, group). groups == 1 holds a single
/// channel-reduced inner product per offset; groups == c_emb holds one
/// coefficient per embedding channel.
struct DynamicKernelField {
  int n = 0;
  int h = 0;
  int w = 0;
  int groups = 1;
  std::vector<ShiftOffset> offsets;
  TrackedVector<float> coeff;

  DynamicKernelField() = default;
  DynamicKernelField(int n, int h, int w, int groups, std::vector<ShiftOffset> offsets);

  std::size_t index(int b, int y, int x, int off, int g) const {
    return ((((static_cast<std::size_t>(b) * h + y) * w + x) * offsets.size() + off) * groups) + g;
  }
  float& at(int b, int y, int x, int off, int g) { return coeff[index(b, y, x, off, g)]; }
  float at(int b, int y, int x, int off, int g) const { return coeff[index(b, y, x, off, g)]; }
};

/// Value path of a dynamic convolution: a shared embedding wv (c_emb, c_in, 1, 1)
/// and one mixing matrix per offset, stored as mix (n_offsets, c_out, c_emb, 1).
///
/// The contribution of neighbour x(p - d) at offset d is
///   sum_e mix[d, o, e] * coeff(p, d, g(e)) * (wv x(p - d))_e
/// where g(e) = e for per-channel fields and 0 for reduced fields.
struct DynamicValue {
  Tensor4 wv;
  Tensor4 mix;

  int c_emb() const { return wv.n(); }
  int c_in() const { return wv.c(); }
  int c_out() const { return mix.c(); }
};

Tensor4 conv2d(const Tensor4& x, const ConvKernel& kern);

Tensor4 batchnorm(const Tensor4& x, const BatchNormParams& bn);

/// Returns k' with conv2d(x, k') == batchnorm(conv2d(x, kern), bn).
ConvKernel fold_bn_into_conv(const ConvKernel& kern, const BatchNormParams& bn);

/// Numerically stable row-wise softmax.
Matrix softmax_rows(const Matrix& m);

/// Global self-attention over all h*w positions of each batch item.
/// Output has c_emb channels and the input's spatial dims. Cost is O((h*w)^2).
Tensor4 self_attention_exact(const Tensor4& x, const AttentionParams& p, AttentionOptions opts = {});

/// Raw attention logits (q_p . k_j) for one batch item, (h*w) x (h*w).
Matrix attention_logits(const Tensor4& x, const AttentionParams& p, int n_index, AttentionOptions opts = {});

/// Applies a 1x1 embedding (c_emb, c_in, 1, 1) with no bias.
Tensor4 embed_1x1(const Tensor4& x, const Tensor4& weight);

/// Spatially varying convolution: static taps plus content-dependent taps.
///
/// out(p) = bias + conv2d(x, static_kern)(p)
///        + sum_d sum_e mix[d,:,e] * field(p,d,g(e)) * (wv x(p - d))_e
///
/// Neighbours outside the image contribute nothing. static_kern must be a
/// stride-1 "same" kernel; its own bias is added as well.
Tensor4 dynamic_conv2d(const Tensor4& x, const DynamicKernelField& field, const ConvKernel& static_kern,
                       const DynamicValue& value, const std::vector<float>& bias);

}  // namespace xvol
