#pragma once

#include <span>
#include <vector>

#include "xvol/io.hpp"
#include "xvol/nn_ops.hpp"
#include "xvol/pssa.hpp"
#include "xvol/random.hpp"

namespace xvol {

/// Training-time X-volution block: a static branch (3x3 conv in parallel with a
/// 5x5 dilation-2 conv, followed by BN) summed with a PSSA branch.
struct XvolutionTrainParams {
  ConvKernel conv3;
  ConvKernel conv5d;
  BatchNormParams conv_bn;
  PssaParams pssa;
  PssaConfig pssa_cfg;

  int c_in() const { return conv3.c_in(); }
  int c_out() const { return conv3.c_out(); }
  void validate() const;
};

/// Q/K embeddings that produce the content-dependent half of the kernel.
struct AttentionEmbed {
  Tensor4 wq;
  Tensor4 wk;
  ProductMode product = ProductMode::Elementwise;
};

/// Inference-time X-volution: one dynamic convolution whose kernel is a
/// trained 9x9 static part plus a per-position attention field.
struct XvolutionInferParams {
  ConvKernel static_kern;  // 9x9, zero bias
  DynamicValue value;      // W^V and BN-scaled per-offset mix
  AttentionEmbed embed;
  std::vector<ShiftOffset> offsets;
  std::vector<float> bias;  // merged static bias plus the PSSA-branch BN shift

  int c_in() const { return static_kern.c_in(); }
  int c_out() const { return static_kern.c_out(); }
};

/// BN(conv3(x) + conv5d(x)).
Tensor4 xvolution_conv_branch(const Tensor4& x, const XvolutionTrainParams& p);
/// pssa_forward(x) + BN(conv3(x) + conv5d(x)).
Tensor4 xvolution_train_forward(const Tensor4& x, const XvolutionTrainParams& p);

/// Sums stride-1 "same" kernels of possibly different size and dilation into
/// one undilated kernel whose size is the largest extent.
ConvKernel merge_parallel_kernels(std::span<const ConvKernel> kernels);

/// Single 9x9 kernel k* with conv2d(x, k*) == BN(conv3(x) + conv5d(x)).
ConvKernel merge_static_branch(const ConvKernel& conv3, const ConvKernel& conv5d, const BatchNormParams& conv_bn);

/// coeff[n, i, j, d, g]:
///   Elementwise: q_g(x)[i, j] * k_g(x)[i - dy, j - dx]
///   Reduce:      sum_e q_e(x)[i, j] * k_e(x)[i - dy, j - dx]
/// Out-of-bounds neighbours get 0.
DynamicKernelField attention_field(const Tensor4& x, const AttentionEmbed& embed,
                                   std::span<const ShiftOffset> offsets);

/// Rejects blocks that cannot be collapsed: non-unit stride, padding that is
/// not "same", wrong kernel geometry, non-1x1 mix, or a stacked PSSA.
XvolutionInferParams reparameterize(const XvolutionTrainParams& p);

/// dynamic_conv2d(x, attention_field(x, embed, offsets), static_kern, value, bias).
Tensor4 xvolution_infer_forward(const Tensor4& x, const XvolutionInferParams& ip);

/// Random block with fan-in scaled weights and non-trivial BN statistics.
XvolutionTrainParams random_xvolution(int c_in, int c_out, int c_emb, Rng& rng, const PssaConfig& cfg = {});

Bundle to_bundle(const XvolutionTrainParams& p);
XvolutionTrainParams train_params_from_bundle(const Bundle& b);
Bundle to_bundle(const XvolutionInferParams& p);
XvolutionInferParams infer_params_from_bundle(const Bundle& b);

}  // namespace xvol
