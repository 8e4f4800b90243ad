#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xvol/nn_ops.hpp"

namespace xvol {

/// How a query pixel and a shifted key pixel are combined.
enum class ProductMode {
  /// Per-channel product q_e(p) * k_e(p - d): one transformed map per embedding channel.
  Elementwise,
  /// Channel-summed inner product <q(p), k(p - d)> broadcast over the value channels.
  Reduce,
};

/// How the transformed maps are combined into the output.
enum class MixMode {
  /// Learned 1x1 convolution over all (offset, channel) maps.
  Learned,
  /// Plain sum over offsets per embedding channel (c_out == c_emb).
  Identity,
};

const char* to_string(ProductMode m);
const char* to_string(MixMode m);

struct PssaConfig {
  std::vector<int> shift_lengths{1, 3, 5};
  int directions = 8;  // 8 compass directions, or 4 (N, E, S, W)
  bool include_identity = true;
  int stack_depth = 1;
  ProductMode product = ProductMode::Elementwise;
  MixMode mix = MixMode::Learned;

  /// Offset table in its fixed order: lengths ascending, and for each length
  /// the directions clockwise starting at north (content moving up); the
  /// unshifted map comes last when enabled.
  std::vector<ShiftOffset> offsets() const;
  int num_offsets() const;
  int max_shift() const;
  void validate() const;

  /// Reads pssa.lengths / pssa.directions / pssa.identity / pssa.depth /
  /// pssa.product / pssa.mix from a key=value map; unknown keys are ignored.
  static PssaConfig from_kv(const std::map<std::string, std::string>& kv);
  std::map<std::string, std::string> to_kv() const;

  friend bool operator==(const PssaConfig&, const PssaConfig&) = default;
};

struct PssaParams {
  AttentionParams attn;
  /// 1x1 kernel from num_offsets * c_emb maps to c_out channels. Ignored in MixMode::Identity.
  ConvKernel mix;
  BatchNormParams bn;

  int c_in() const { return attn.c_in(); }
  int c_emb() const { return attn.c_emb(); }
  int c_out(const PssaConfig& cfg) const { return cfg.mix == MixMode::Identity ? c_emb() : mix.c_out(); }
  void validate(const PssaConfig& cfg) const;
};

/// For every offset d: q(x) * shift2d(k(x), d), stacked along channels in
/// offset order. In Reduce mode each offset contributes one channel.
Tensor4 transformed_features(const Tensor4& x, const PssaParams& params, const PssaConfig& cfg);

/// The value-weighted maps that feed the mix: for every offset d,
///   Elementwise: q(p) * k(p - d) * v(p - d)            (c_emb channels)
///   Reduce:      <q(p), k(p - d)> * v(p - d)           (c_emb channels)
/// stacked along channels in offset order.
Tensor4 value_features(const Tensor4& x, const PssaParams& params, const PssaConfig& cfg);

/// mix (learned 1x1 or identity sum) applied to value_features.
Tensor4 pssa_mix(const Tensor4& features, const PssaParams& params, const PssaConfig& cfg);

/// batchnorm(mix(value_features(x))).
Tensor4 pssa_forward(const Tensor4& x, const PssaParams& params, const PssaConfig& cfg);

/// Sequential application of layers; output channels of layer i must equal
/// input channels of layer i + 1.
Tensor4 pssa_stack(const Tensor4& x, std::span<const PssaParams> layers, const PssaConfig& cfg);

struct ApproxQuality {
  std::optional<double> cosine;       // empty when either side has zero norm
  std::optional<double> relative_l2;  // empty when the reference has zero norm
};

/// Flattened cosine similarity and relative L2 of an approximation against a reference.
ApproxQuality approx_quality(const Tensor4& approx, const Tensor4& reference);

}  // namespace xvol
