#include "xvol/xvolution.hpp"

#include <algorithm>
#include <cmath>

#include "xvol/parallel.hpp"

namespace xvol {

void XvolutionTrainParams::validate() const {
  conv3.validate();
  conv5d.validate();
  conv_bn.validate();
  pssa.validate(pssa_cfg);
  if (conv5d.c_in() != conv3.c_in() || conv5d.c_out() != conv3.c_out())
    throw DomainError("X-volution: conv3 and conv5d must map the same channels");
  if (conv_bn.channels() != c_out()) throw DomainError("X-volution: conv BN channels != c_out");
  if (pssa.c_in() != c_in() || pssa.c_out(pssa_cfg) != c_out())
    throw DomainError("X-volution: PSSA branch channels do not match the conv branch");
}

Tensor4 xvolution_conv_branch(const Tensor4& x, const XvolutionTrainParams& p) {
  return batchnorm(add(conv2d(x, p.conv3), conv2d(x, p.conv5d)), p.conv_bn);
}

Tensor4 xvolution_train_forward(const Tensor4& x, const XvolutionTrainParams& p) {
  p.validate();
  return add(pssa_forward(x, p.pssa, p.pssa_cfg), xvolution_conv_branch(x, p));
}

ConvKernel merge_parallel_kernels(std::span<const ConvKernel> kernels) {
  if (kernels.empty()) throw DomainError("merge_parallel_kernels: no kernels");
  int extent = 1;
  for (const auto& k : kernels) {
    k.validate();
    if (!k.is_same()) throw DomainError("merge_parallel_kernels: kernels must be stride-1 'same'");
    if (k.c_in() != kernels.front().c_in() || k.c_out() != kernels.front().c_out())
      throw DomainError("merge_parallel_kernels: incompatible channel counts");
    extent = std::max(extent, k.extent());
  }
  ConvKernel merged = ConvKernel::zeros(kernels.front().c_out(), kernels.front().c_in(), extent);
  const int center = extent / 2;
  for (int o = 0; o < merged.c_out(); ++o) {
    double b = 0.0;
    for (const auto& k : kernels) b += k.bias[o];
    merged.bias[o] = static_cast<float>(b);
  }
  // Accumulate in double so overlapping taps round once.
  std::vector<double> acc(merged.weight.size(), 0.0);
  for (const auto& k : kernels) {
    const int kc = k.k() / 2;
    for (int o = 0; o < k.c_out(); ++o)
      for (int c = 0; c < k.c_in(); ++c)
        for (int a = 0; a < k.k(); ++a)
          for (int b = 0; b < k.k(); ++b)
            acc[merged.weight.index(o, c, center + (a - kc) * k.dilation, center + (b - kc) * k.dilation)] +=
                k.weight(o, c, a, b);
  }
  for (std::size_t i = 0; i < acc.size(); ++i) merged.weight[i] = static_cast<float>(acc[i]);
  return merged;
}

ConvKernel merge_static_branch(const ConvKernel& conv3, const ConvKernel& conv5d, const BatchNormParams& conv_bn) {
  const ConvKernel parts[] = {conv3, conv5d};
  return fold_bn_into_conv(merge_parallel_kernels(parts), conv_bn);
}

DynamicKernelField attention_field(const Tensor4& x, const AttentionEmbed& embed,
                                   std::span<const ShiftOffset> offsets) {
  if (embed.wq.dims() != embed.wk.dims()) throw DomainError("attention_field: wq and wk shapes differ");
  const Tensor4 q = embed_1x1(x, embed.wq);
  const Tensor4 k = embed_1x1(x, embed.wk);
  const int c_emb = embed.wq.n();
  const bool reduce = embed.product == ProductMode::Reduce;
  DynamicKernelField field(x.n(), x.h(), x.w(), reduce ? 1 : c_emb, {offsets.begin(), offsets.end()});
  const int h = x.h();
  const int w = x.w();
  const int n_off = static_cast<int>(offsets.size());
  parallel_for(static_cast<std::size_t>(x.n()) * h, [&](std::size_t job) {
    const int n = static_cast<int>(job / h);
    const int y = static_cast<int>(job % h);
    for (int xx = 0; xx < w; ++xx)
      for (int d = 0; d < n_off; ++d) {
        const int ny = y - offsets[d].dy;
        const int nx = xx - offsets[d].dx;
        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
        if (reduce) {
          double acc = 0.0;
          for (int e = 0; e < c_emb; ++e) acc += q(n, e, y, xx) * k(n, e, ny, nx);
          field.at(n, y, xx, d, 0) = static_cast<float>(acc);
        } else {
          for (int e = 0; e < c_emb; ++e) field.at(n, y, xx, d, e) = q(n, e, y, xx) * k(n, e, ny, nx);
        }
      }
  });
  return field;
}

XvolutionInferParams reparameterize(const XvolutionTrainParams& p) {
  p.validate();
  const auto require = [](bool ok, const char* why) {
    if (!ok) throw DomainError(std::string("reparameterize: ") + why);
  };
  require(p.conv3.stride == 1 && p.conv5d.stride == 1 && p.pssa.mix.stride == 1, "all strides must be 1");
  require(p.conv3.is_same() && p.conv5d.is_same(), "static branches must use 'same' padding");
  require(p.conv3.k() == 3 && p.conv3.dilation == 1, "conv3 must be an undilated 3x3 kernel");
  require(p.conv5d.k() == 5 && p.conv5d.dilation == 2, "conv5d must be a 5x5 kernel with dilation 2");
  require(p.pssa_cfg.stack_depth == 1, "only a single PSSA layer can be collapsed");

  XvolutionInferParams ip;
  ip.static_kern = merge_static_branch(p.conv3, p.conv5d, p.conv_bn);
  ip.bias = ip.static_kern.bias;
  std::fill(ip.static_kern.bias.begin(), ip.static_kern.bias.end(), 0.0f);

  ip.offsets = p.pssa_cfg.offsets();
  ip.embed = AttentionEmbed{p.pssa.attn.wq, p.pssa.attn.wk, p.pssa_cfg.product};

  const int c_out = p.c_out();
  const int c_emb = p.pssa.c_emb();
  const int n_off = static_cast<int>(ip.offsets.size());
  const auto sc = p.pssa.bn.scale();
  const bool learned = p.pssa_cfg.mix == MixMode::Learned;
  ip.value.wv = p.pssa.attn.wv;
  ip.value.mix = Tensor4(Dims{n_off, c_out, c_emb, 1});
  for (int d = 0; d < n_off; ++d)
    for (int o = 0; o < c_out; ++o)
      for (int e = 0; e < c_emb; ++e) {
        const double m = learned ? p.pssa.mix.weight(o, d * c_emb + e, 0, 0) : (o == e ? 1.0 : 0.0);
        ip.value.mix(d, o, e, 0) = static_cast<float>(m * sc[o]);
      }
  for (int o = 0; o < c_out; ++o) {
    const double mix_bias = learned ? p.pssa.mix.bias[o] : 0.0;
    const double shift = (mix_bias - p.pssa.bn.mean[o]) * sc[o] + p.pssa.bn.beta[o];
    ip.bias[o] = static_cast<float>(static_cast<double>(ip.bias[o]) + shift);
  }
  return ip;
}

Tensor4 xvolution_infer_forward(const Tensor4& x, const XvolutionInferParams& ip) {
  const auto field = attention_field(x, ip.embed, ip.offsets);
  return dynamic_conv2d(x, field, ip.static_kern, ip.value, ip.bias);
}

// ---------------------------------------------------------------------------
// Random initialisation
// ---------------------------------------------------------------------------

namespace {

ConvKernel random_kernel(Rng& rng, int c_out, int c_in, int k, int dilation) {
  const double std = 1.0 / std::sqrt(static_cast<double>(c_in * k * k));
  return ConvKernel::same(rng.normal_tensor(Dims{c_out, c_in, k, k}, std), rng.normal_vector(c_out, 0.0, 0.1),
                          dilation);
}

BatchNormParams random_bn(Rng& rng, int c) {
  BatchNormParams bn;
  bn.gamma = rng.uniform_vector(c, 0.5, 1.5);
  bn.beta = rng.normal_vector(c, 0.0, 0.2);
  bn.mean = rng.normal_vector(c, 0.0, 0.2);
  bn.var = rng.uniform_vector(c, 0.5, 2.0);
  bn.eps = 1e-5f;
  return bn;
}

}  // namespace

XvolutionTrainParams random_xvolution(int c_in, int c_out, int c_emb, Rng& rng, const PssaConfig& cfg) {
  cfg.validate();
  XvolutionTrainParams p;
  p.pssa_cfg = cfg;
  p.conv3 = random_kernel(rng, c_out, c_in, 3, 1);
  p.conv5d = random_kernel(rng, c_out, c_in, 5, 2);
  p.conv_bn = random_bn(rng, c_out);
  const double emb_std = 1.0 / std::sqrt(static_cast<double>(c_in));
  p.pssa.attn.wq = rng.normal_tensor(Dims{c_emb, c_in, 1, 1}, emb_std);
  p.pssa.attn.wk = rng.normal_tensor(Dims{c_emb, c_in, 1, 1}, emb_std);
  p.pssa.attn.wv = rng.normal_tensor(Dims{c_emb, c_in, 1, 1}, emb_std);
  if (cfg.mix == MixMode::Learned) {
    p.pssa.mix = random_kernel(rng, c_out, cfg.num_offsets() * c_emb, 1, 1);
  } else {
    if (c_out != c_emb) throw DomainError("random_xvolution: identity mix needs c_out == c_emb");
    p.pssa.mix = ConvKernel::zeros(c_out, cfg.num_offsets() * c_emb, 1);
  }
  p.pssa.bn = random_bn(rng, c_out);
  p.validate();
  return p;
}

// ---------------------------------------------------------------------------
// Bundles
// ---------------------------------------------------------------------------

namespace {

void put_kernel(Bundle& b, const std::string& prefix, const ConvKernel& k) {
  b.put(prefix + ".weight", k.weight);
  b.put_vector(prefix + ".bias", k.bias);
  b.put_text(prefix + ".meta", format_kv({{"stride", std::to_string(k.stride)},
                                          {"dilation", std::to_string(k.dilation)},
                                          {"padding", std::to_string(k.padding)}}));
}

ConvKernel get_kernel(const Bundle& b, const std::string& prefix) {
  ConvKernel k;
  k.weight = b.tensor(prefix + ".weight");
  k.bias = b.vector(prefix + ".bias");
  const auto meta = parse_kv(b.text(prefix + ".meta"));
  try {
    k.stride = std::stoi(meta.at("stride"));
    k.dilation = std::stoi(meta.at("dilation"));
    k.padding = std::stoi(meta.at("padding"));
  } catch (const std::exception&) {
    throw IoError("bundle: malformed metadata in " + prefix + ".meta");
  }
  k.validate();
  return k;
}

void put_bn(Bundle& b, const std::string& prefix, const BatchNormParams& bn) {
  b.put_vector(prefix + ".gamma", bn.gamma);
  b.put_vector(prefix + ".beta", bn.beta);
  b.put_vector(prefix + ".mean", bn.mean);
  b.put_vector(prefix + ".var", bn.var);
  b.put_vector(prefix + ".eps", {bn.eps});
}

BatchNormParams get_bn(const Bundle& b, const std::string& prefix) {
  BatchNormParams bn;
  bn.gamma = b.vector(prefix + ".gamma");
  bn.beta = b.vector(prefix + ".beta");
  bn.mean = b.vector(prefix + ".mean");
  bn.var = b.vector(prefix + ".var");
  const auto eps = b.vector(prefix + ".eps");
  if (eps.size() != 1) throw IoError("bundle: " + prefix + ".eps must hold one value");
  bn.eps = eps[0];
  bn.validate();
  return bn;
}

}  // namespace

Bundle to_bundle(const XvolutionTrainParams& p) {
  p.validate();
  Bundle b;
  b.put_text("kind", "xvolution-train\n");
  put_kernel(b, "conv3", p.conv3);
  put_kernel(b, "conv5d", p.conv5d);
  put_bn(b, "conv_bn", p.conv_bn);
  b.put("pssa.wq", p.pssa.attn.wq);
  b.put("pssa.wk", p.pssa.attn.wk);
  b.put("pssa.wv", p.pssa.attn.wv);
  put_kernel(b, "pssa.mix", p.pssa.mix);
  put_bn(b, "pssa.bn", p.pssa.bn);
  b.put_text("pssa.config", format_kv(p.pssa_cfg.to_kv()));
  return b;
}

XvolutionTrainParams train_params_from_bundle(const Bundle& b) {
  if (!b.has("kind") || b.text("kind") != "xvolution-train\n")
    throw IoError("bundle is not an X-volution training bundle");
  XvolutionTrainParams p;
  p.conv3 = get_kernel(b, "conv3");
  p.conv5d = get_kernel(b, "conv5d");
  p.conv_bn = get_bn(b, "conv_bn");
  p.pssa.attn.wq = b.tensor("pssa.wq");
  p.pssa.attn.wk = b.tensor("pssa.wk");
  p.pssa.attn.wv = b.tensor("pssa.wv");
  p.pssa.mix = get_kernel(b, "pssa.mix");
  p.pssa.bn = get_bn(b, "pssa.bn");
  p.pssa_cfg = PssaConfig::from_kv(parse_kv(b.text("pssa.config")));
  p.validate();
  return p;
}

Bundle to_bundle(const XvolutionInferParams& p) {
  Bundle b;
  b.put_text("kind", "xvolution-infer\n");
  put_kernel(b, "static", p.static_kern);
  b.put("value.wv", p.value.wv);
  b.put("value.mix", p.value.mix);
  b.put("embed.wq", p.embed.wq);
  b.put("embed.wk", p.embed.wk);
  b.put_text("embed.product", std::string(to_string(p.embed.product)) + "\n");
  Tensor4 offs(Dims{1, static_cast<int>(p.offsets.size()), 2, 1});
  for (std::size_t i = 0; i < p.offsets.size(); ++i) {
    offs(0, static_cast<int>(i), 0, 0) = static_cast<float>(p.offsets[i].dy);
    offs(0, static_cast<int>(i), 1, 0) = static_cast<float>(p.offsets[i].dx);
  }
  b.put("offsets", std::move(offs));
  b.put_vector("bias", p.bias);
  return b;
}

XvolutionInferParams infer_params_from_bundle(const Bundle& b) {
  if (!b.has("kind") || b.text("kind") != "xvolution-infer\n")
    throw IoError("bundle is not an X-volution inference bundle");
  XvolutionInferParams p;
  p.static_kern = get_kernel(b, "static");
  p.value.wv = b.tensor("value.wv");
  p.value.mix = b.tensor("value.mix");
  p.embed.wq = b.tensor("embed.wq");
  p.embed.wk = b.tensor("embed.wk");
  const auto& mode = b.text("embed.product");
  if (mode == "elementwise\n") p.embed.product = ProductMode::Elementwise;
  else if (mode == "reduce\n") p.embed.product = ProductMode::Reduce;
  else throw IoError("bundle: unknown product mode");
  const auto& offs = b.tensor("offsets");
  if (offs.h() != 2) throw IoError("bundle: offsets must be (1, k, 2, 1)");
  for (int i = 0; i < offs.c(); ++i)
    p.offsets.push_back({static_cast<int>(offs(0, i, 0, 0)), static_cast<int>(offs(0, i, 1, 0))});
  p.bias = b.vector("bias");
  return p;
}

}  // namespace xvol
