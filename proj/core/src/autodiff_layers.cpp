#include "xvol/layers.hpp"

namespace xvol::ad {

ConvVars record(Tape& t, const ConvKernel& k) {
  k.validate();
  return ConvVars{t.leaf(k.weight), t.leaf(as_channel_tensor(k.bias)), ConvAttrs{k.stride, k.dilation, k.padding}};
}

BnVars record(Tape& t, const BatchNormParams& bn) {
  bn.validate();
  return BnVars{t.leaf(as_channel_tensor(bn.gamma)), t.leaf(as_channel_tensor(bn.beta)), bn.mean, bn.var, bn.eps};
}

PssaVars record(Tape& t, const PssaParams& p, const PssaConfig& cfg) {
  p.validate(cfg);
  PssaVars v{t.leaf(p.attn.wq), t.leaf(p.attn.wk), t.leaf(p.attn.wv), std::nullopt, {}};
  if (cfg.mix == MixMode::Learned) v.mix = record(t, p.mix);
  v.bn = record(t, p.bn);
  return v;
}

XvolutionVars record(Tape& t, const XvolutionTrainParams& p) {
  p.validate();
  XvolutionVars v;
  v.conv3 = record(t, p.conv3);
  v.conv5d = record(t, p.conv5d);
  v.conv_bn = record(t, p.conv_bn);
  v.pssa = record(t, p.pssa, p.pssa_cfg);
  return v;
}

std::vector<Var> parameters(const ConvVars& v) {
  std::vector<Var> out{v.weight};
  if (v.bias) out.push_back(*v.bias);
  return out;
}

std::vector<Var> parameters(const BnVars& v) { return {v.gamma, v.beta}; }

std::vector<Var> parameters(const PssaVars& v) {
  std::vector<Var> out{v.wq, v.wk, v.wv};
  if (v.mix) {
    auto m = parameters(*v.mix);
    out.insert(out.end(), m.begin(), m.end());
  }
  auto b = parameters(v.bn);
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

std::vector<Var> parameters(const XvolutionVars& v) {
  std::vector<Var> out;
  for (auto part : {parameters(v.conv3), parameters(v.conv5d), parameters(v.conv_bn), parameters(v.pssa)})
    out.insert(out.end(), part.begin(), part.end());
  return out;
}

Var conv(Tape& t, Var x, const ConvVars& k) { return conv2d(t, x, k.weight, k.bias, k.attrs); }

Var batchnorm(Tape& t, Var x, const BnVars& bn, BnMode mode) {
  if (mode == BnMode::Batch) return batchnorm_train(t, x, bn.gamma, bn.beta, bn.eps);
  return batchnorm_infer(t, x, bn.gamma, bn.beta, bn.mean, bn.var, bn.eps);
}

Var embed(Tape& t, Var x, Var weight) { return conv2d(t, x, weight, std::nullopt, ConvAttrs{}); }

Var pssa_value_features(Tape& t, Var x, const PssaVars& p, const PssaConfig& cfg) {
  const Var q = embed(t, x, p.wq);
  const Var k = embed(t, x, p.wk);
  const Var v = embed(t, x, p.wv);
  std::vector<Var> parts;
  if (cfg.product == ProductMode::Elementwise) {
    const Var kv = hadamard(t, k, v);
    for (const auto& off : cfg.offsets()) parts.push_back(hadamard(t, q, shift2d(t, kv, off)));
  } else {
    for (const auto& off : cfg.offsets()) {
      const Var sim = channel_sum(t, hadamard(t, q, shift2d(t, k, off)));
      parts.push_back(broadcast_mul(t, sim, shift2d(t, v, off)));
    }
  }
  return concat_channels(t, std::move(parts));
}

Var pssa_forward(Tape& t, Var x, const PssaVars& p, const PssaConfig& cfg, BnMode mode) {
  const Var features = pssa_value_features(t, x, p, cfg);
  const Var mixed = cfg.mix == MixMode::Learned ? conv(t, features, *p.mix)
                                                : offset_sum(t, features, t.value(p.wq).n());
  return batchnorm(t, mixed, p.bn, mode);
}

Var xvolution_train_forward(Tape& t, Var x, const XvolutionVars& p, const PssaConfig& cfg, BnMode mode) {
  const Var branch = batchnorm(t, add(t, conv(t, x, p.conv3), conv(t, x, p.conv5d)), p.conv_bn, mode);
  return add(t, pssa_forward(t, x, p.pssa, cfg, mode), branch);
}

}  // namespace xvol::ad
