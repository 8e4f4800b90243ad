// Forward and backward rules for every primitive recorded on a Tape.

#include <algorithm>
#include <cmath>

#include "xvol/autodiff.hpp"
#include "xvol/parallel.hpp"

namespace xvol::ad {

namespace {

template <class T>
const T& attrs_as(const Attrs& a) {
  if (const auto* p = std::get_if<T>(&a)) return *p;
  throw std::logic_error("autodiff: op recorded with wrong attribute type");
}

void require_inputs(std::span<const Tensor4* const> in, std::size_t lo, std::size_t hi, const char* op) {
  if (in.size() < lo || in.size() > hi) throw DomainError(std::string(op) + ": wrong number of inputs");
}

// -- conv2d ------------------------------------------------------------------

ConvKernel kernel_from(std::span<const Tensor4* const> in, const ConvAttrs& a) {
  ConvKernel k;
  k.weight = *in[1];
  k.bias = in.size() == 3 ? to_vector(*in[2]) : std::vector<float>(static_cast<std::size_t>(in[1]->n()), 0.0f);
  k.stride = a.stride;
  k.dilation = a.dilation;
  k.padding = a.padding;
  return k;
}

Tensor4 conv_fwd(const ForwardArgs& f) {
  require_inputs(f.inputs, 2, 3, "conv2d");
  if (f.inputs.size() == 3 && f.inputs[2]->size() != static_cast<std::size_t>(f.inputs[1]->n()))
    throw DomainError("conv2d: bias length != c_out");
  return xvol::conv2d(*f.inputs[0], kernel_from(f.inputs, attrs_as<ConvAttrs>(f.attrs)));
}

std::vector<Tensor4> conv_bwd(const BackwardArgs& b) {
  const auto& a = attrs_as<ConvAttrs>(b.attrs);
  const Tensor4& x = *b.inputs[0];
  const Tensor4& w = *b.inputs[1];
  const Tensor4& g = b.out_grad;
  const int k = w.h(), s = a.stride, d = a.dilation, pad = a.padding;
  const int oh = g.h(), ow = g.w();
  Tensor4 gx(x.dims());
  Tensor4 gw(w.dims());
  std::vector<Tensor4> out;

  // Weight gradient: one job per (o, c).
  parallel_for(static_cast<std::size_t>(w.n()) * w.c(), [&](std::size_t job) {
    const int o = static_cast<int>(job / w.c());
    const int c = static_cast<int>(job % w.c());
    for (int ka = 0; ka < k; ++ka)
      for (int kb = 0; kb < k; ++kb) {
        double acc = 0.0;
        for (int n = 0; n < x.n(); ++n)
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * s + ka * d - pad;
            if (iy < 0 || iy >= x.h()) continue;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * s + kb * d - pad;
              if (ix < 0 || ix >= x.w()) continue;
              acc += static_cast<double>(g(n, o, oy, ox)) * x(n, c, iy, ix);
            }
          }
        gw(o, c, ka, kb) = static_cast<float>(acc);
      }
  });

  // Input gradient: one job per (n, c).
  parallel_for(static_cast<std::size_t>(x.n()) * x.c(), [&](std::size_t job) {
    const int n = static_cast<int>(job / x.c());
    const int c = static_cast<int>(job % x.c());
    std::vector<double> acc(x.dims().plane(), 0.0);
    for (int o = 0; o < w.n(); ++o)
      for (int ka = 0; ka < k; ++ka)
        for (int kb = 0; kb < k; ++kb) {
          const double wv = w(o, c, ka, kb);
          if (wv == 0.0) continue;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * s + ka * d - pad;
            if (iy < 0 || iy >= x.h()) continue;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * s + kb * d - pad;
              if (ix < 0 || ix >= x.w()) continue;
              acc[static_cast<std::size_t>(iy) * x.w() + ix] += wv * g(n, o, oy, ox);
            }
          }
        }
    float* dst = gx.plane(n, c);
    for (std::size_t i = 0; i < acc.size(); ++i) dst[i] = static_cast<float>(acc[i]);
  });

  out.push_back(std::move(gx));
  out.push_back(std::move(gw));
  if (b.inputs.size() == 3) {
    std::vector<float> gb(static_cast<std::size_t>(w.n()));
    for (int o = 0; o < w.n(); ++o) {
      double acc = 0.0;
      for (int n = 0; n < g.n(); ++n) {
        const float* p = g.plane(n, o);
        for (std::size_t i = 0; i < g.dims().plane(); ++i) acc += p[i];
      }
      gb[o] = static_cast<float>(acc);
    }
    out.push_back(Tensor4(b.inputs[2]->dims(), gb));
  }
  return out;
}

// -- batch norm ----------------------------------------------------------------

Tensor4 bn_infer_fwd(const ForwardArgs& f) {
  require_inputs(f.inputs, 3, 3, "batchnorm_infer");
  const auto& a = attrs_as<BnInferAttrs>(f.attrs);
  BatchNormParams bn{to_vector(*f.inputs[1]), to_vector(*f.inputs[2]), a.mean, a.var, a.eps};
  return xvol::batchnorm(*f.inputs[0], bn);
}

std::vector<Tensor4> bn_infer_bwd(const BackwardArgs& b) {
  const auto& a = attrs_as<BnInferAttrs>(b.attrs);
  const Tensor4& x = *b.inputs[0];
  const Tensor4& gamma = *b.inputs[1];
  const Tensor4& g = b.out_grad;
  Tensor4 gx(x.dims());
  std::vector<float> gg(static_cast<std::size_t>(x.c())), gbeta(static_cast<std::size_t>(x.c()));
  for (int c = 0; c < x.c(); ++c) {
    const double inv = 1.0 / std::sqrt(static_cast<double>(a.var[c]) + a.eps);
    const double sc = gamma[c] * inv;
    double sg = 0.0, sb = 0.0;
    for (int n = 0; n < x.n(); ++n) {
      const float* xp = x.plane(n, c);
      const float* gp = g.plane(n, c);
      float* dst = gx.plane(n, c);
      for (std::size_t i = 0; i < x.dims().plane(); ++i) {
        dst[i] = static_cast<float>(gp[i] * sc);
        sg += gp[i] * (static_cast<double>(xp[i]) - a.mean[c]) * inv;
        sb += gp[i];
      }
    }
    gg[c] = static_cast<float>(sg);
    gbeta[c] = static_cast<float>(sb);
  }
  return {std::move(gx), Tensor4(gamma.dims(), gg), Tensor4(b.inputs[2]->dims(), gbeta)};
}

Tensor4 bn_train_fwd(const ForwardArgs& f) {
  require_inputs(f.inputs, 3, 3, "batchnorm_train");
  const auto& a = attrs_as<BnTrainAttrs>(f.attrs);
  const Tensor4& x = *f.inputs[0];
  const Tensor4& gamma = *f.inputs[1];
  const Tensor4& beta = *f.inputs[2];
  if (gamma.size() != static_cast<std::size_t>(x.c()) || beta.size() != gamma.size())
    throw DomainError("batchnorm_train: affine length != channels");
  const std::size_t plane = x.dims().plane();
  const double count = static_cast<double>(plane) * x.n();
  Tensor4 xhat(x.dims()), out(x.dims());
  Tensor4 mean(Dims{1, x.c(), 1, 1}), var(Dims{1, x.c(), 1, 1}), inv_std(Dims{1, x.c(), 1, 1});
  for (int c = 0; c < x.c(); ++c) {
    double m = 0.0;
    for (int n = 0; n < x.n(); ++n)
      for (std::size_t i = 0; i < plane; ++i) m += x.plane(n, c)[i];
    m /= count;
    double v = 0.0;
    for (int n = 0; n < x.n(); ++n)
      for (std::size_t i = 0; i < plane; ++i) {
        const double dv = x.plane(n, c)[i] - m;
        v += dv * dv;
      }
    v /= count;
    const double inv = 1.0 / std::sqrt(v + a.eps);
    for (int n = 0; n < x.n(); ++n)
      for (std::size_t i = 0; i < plane; ++i) {
        const double xh = (x.plane(n, c)[i] - m) * inv;
        xhat.plane(n, c)[i] = static_cast<float>(xh);
        out.plane(n, c)[i] = static_cast<float>(gamma[c] * xh + beta[c]);
      }
    mean[c] = static_cast<float>(m);
    var[c] = static_cast<float>(v);
    inv_std[c] = static_cast<float>(inv);
  }
  f.saved = {std::move(xhat), std::move(mean), std::move(var), std::move(inv_std)};
  return out;
}

std::vector<Tensor4> bn_train_bwd(const BackwardArgs& b) {
  const Tensor4& x = *b.inputs[0];
  const Tensor4& gamma = *b.inputs[1];
  const Tensor4& g = b.out_grad;
  const Tensor4& xhat = b.saved.at(0);
  const Tensor4& inv_std = b.saved.at(3);
  const std::size_t plane = x.dims().plane();
  const double count = static_cast<double>(plane) * x.n();
  Tensor4 gx(x.dims());
  std::vector<float> gg(static_cast<std::size_t>(x.c())), gbeta(static_cast<std::size_t>(x.c()));
  for (int c = 0; c < x.c(); ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (int n = 0; n < x.n(); ++n)
      for (std::size_t i = 0; i < plane; ++i) {
        sum_g += g.plane(n, c)[i];
        sum_gx += static_cast<double>(g.plane(n, c)[i]) * xhat.plane(n, c)[i];
      }
    gg[c] = static_cast<float>(sum_gx);
    gbeta[c] = static_cast<float>(sum_g);
    const double k = gamma[c] * static_cast<double>(inv_std[c]) / count;
    for (int n = 0; n < x.n(); ++n)
      for (std::size_t i = 0; i < plane; ++i)
        gx.plane(n, c)[i] = static_cast<float>(
            k * (count * g.plane(n, c)[i] - sum_g - static_cast<double>(xhat.plane(n, c)[i]) * sum_gx));
  }
  return {std::move(gx), Tensor4(gamma.dims(), gg), Tensor4(b.inputs[2]->dims(), gbeta)};
}

// -- element-wise and layout ops -------------------------------------------------

Tensor4 shift_fwd(const ForwardArgs& f) {
  require_inputs(f.inputs, 1, 1, "shift2d");
  return xvol::shift2d(*f.inputs[0], attrs_as<ShiftAttrs>(f.attrs).offset);
}
std::vector<Tensor4> shift_bwd(const BackwardArgs& b) {
  return {xvol::shift2d(b.out_grad, -attrs_as<ShiftAttrs>(b.attrs).offset)};
}

Tensor4 hadamard_fwd(const ForwardArgs& f) {
  require_inputs(f.inputs, 2, 2, "hadamard");
  return xvol::hadamard(*f.inputs[0], *f.inputs[1]);
}
std::vector<Tensor4> hadamard_bwd(const BackwardArgs& b) {
  return {xvol::hadamard(b.out_grad, *b.inputs[1]), xvol::hadamard(b.out_grad, *b.inputs[0])};
}

Tensor4 add_fwd(const ForwardArgs& f) {
  require_inputs(f.inputs, 2, 2, "add");
  return xvol::add(*f.inputs[0], *f.inputs[1]);
}
std::vector<Tensor4> add_bwd(const BackwardArgs& b) { return {b.out_grad, b.out_grad}; }

Tensor4 scale_fwd(const ForwardArgs& f) {
  require_inputs(f.inputs, 1, 1, "scale");
  return xvol::scale(*f.inputs[0], attrs_as<ScaleAttrs>(f.attrs).factor);
}
std::vector<Tensor4> scale_bwd(const BackwardArgs& b) {
  return {xvol::scale(b.out_grad, attrs_as<ScaleAttrs>(b.attrs).factor)};
}

Tensor4 channel_sum_fwd(const ForwardArgs& f) {
  require_inputs(f.inputs, 1, 1, "channel_sum");
  const Tensor4& x = *f.inputs[0];
  Tensor4 out(Dims{x.n(), 1, x.h(), x.w()});
  std::vector<double> acc(x.dims().plane());
  for (int n = 0; n < x.n(); ++n) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (int c = 0; c < x.c(); ++c)
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += x.plane(n, c)[i];
    for (std::size_t i = 0; i < acc.size(); ++i) out.plane(n, 0)[i] = static_cast<float>(acc[i]);
  }
  return out;
}
std::vector<Tensor4> channel_sum_bwd(const BackwardArgs& b) {
  const Tensor4& x = *b.inputs[0];
  Tensor4 gx(x.dims());
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c) std::copy_n(b.out_grad.plane(n, 0), x.dims().plane(), gx.plane(n, c));
  return {std::move(gx)};
}

Tensor4 broadcast_mul_fwd(const ForwardArgs& f) {
  require_inputs(f.inputs, 2, 2, "broadcast_mul");
  const Tensor4& s = *f.inputs[0];
  const Tensor4& v = *f.inputs[1];
  if (s.c() != 1 || s.n() != v.n() || s.h() != v.h() || s.w() != v.w())
    throw DomainError("broadcast_mul: scale map must be (n, 1, h, w) matching the value map");
  Tensor4 out(v.dims());
  for (int n = 0; n < v.n(); ++n)
    for (int c = 0; c < v.c(); ++c)
      for (std::size_t i = 0; i < v.dims().plane(); ++i)
        out.plane(n, c)[i] = s.plane(n, 0)[i] * v.plane(n, c)[i];
  return out;
}
std::vector<Tensor4> broadcast_mul_bwd(const BackwardArgs& b) {
  const Tensor4& s = *b.inputs[0];
  const Tensor4& v = *b.inputs[1];
  const Tensor4& g = b.out_grad;
  Tensor4 gs(s.dims()), gv(v.dims());
  for (int n = 0; n < v.n(); ++n)
    for (std::size_t i = 0; i < v.dims().plane(); ++i) {
      double acc = 0.0;
      for (int c = 0; c < v.c(); ++c) {
        acc += static_cast<double>(g.plane(n, c)[i]) * v.plane(n, c)[i];
        gv.plane(n, c)[i] = g.plane(n, c)[i] * s.plane(n, 0)[i];
      }
      gs.plane(n, 0)[i] = static_cast<float>(acc);
    }
  return {std::move(gs), std::move(gv)};
}

Tensor4 concat_fwd(const ForwardArgs& f) {
  std::vector<Tensor4> parts;
  for (const Tensor4* p : f.inputs) parts.push_back(*p);
  return xvol::concat_channels(parts);
}
std::vector<Tensor4> concat_bwd(const BackwardArgs& b) {
  std::vector<Tensor4> out;
  int c0 = 0;
  for (const Tensor4* p : b.inputs) {
    out.push_back(xvol::slice_channels(b.out_grad, c0, p->c()));
    c0 += p->c();
  }
  return out;
}

Tensor4 offset_sum_fwd(const ForwardArgs& f) {
  require_inputs(f.inputs, 1, 1, "offset_sum");
  const Tensor4& x = *f.inputs[0];
  const int group = attrs_as<GroupAttrs>(f.attrs).group;
  if (group < 1 || x.c() % group != 0) throw DomainError("offset_sum: channels not a multiple of the group");
  const int blocks = x.c() / group;
  Tensor4 out(Dims{x.n(), group, x.h(), x.w()});
  std::vector<double> acc(x.dims().plane());
  for (int n = 0; n < x.n(); ++n)
    for (int e = 0; e < group; ++e) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int blk = 0; blk < blocks; ++blk)
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += x.plane(n, blk * group + e)[i];
      for (std::size_t i = 0; i < acc.size(); ++i) out.plane(n, e)[i] = static_cast<float>(acc[i]);
    }
  return out;
}
std::vector<Tensor4> offset_sum_bwd(const BackwardArgs& b) {
  const Tensor4& x = *b.inputs[0];
  const int group = attrs_as<GroupAttrs>(b.attrs).group;
  Tensor4 gx(x.dims());
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c) std::copy_n(b.out_grad.plane(n, c % group), x.dims().plane(), gx.plane(n, c));
  return {std::move(gx)};
}

Tensor4 relu_fwd(const ForwardArgs& f) {
  require_inputs(f.inputs, 1, 1, "relu");
  Tensor4 out = *f.inputs[0];
  for (auto& v : out.data()) v = std::max(v, 0.0f);
  return out;
}
std::vector<Tensor4> relu_bwd(const BackwardArgs& b) {
  Tensor4 gx = b.out_grad;
  const auto x = b.inputs[0]->data();
  auto g = gx.data();
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!(x[i] > 0.0f)) g[i] = 0.0f;
  return {std::move(gx)};
}

// -- attention ------------------------------------------------------------------

Tensor4 attention_fwd(const ForwardArgs& f) {
  require_inputs(f.inputs, 4, 4, "self_attention");
  AttentionParams p{*f.inputs[1], *f.inputs[2], *f.inputs[3]};
  return xvol::self_attention_exact(*f.inputs[0], p, attrs_as<AttentionAttrs>(f.attrs).options);
}

std::vector<Tensor4> attention_bwd(const BackwardArgs& b) {
  const Tensor4& x = *b.inputs[0];
  const Tensor4* w[3] = {b.inputs[1], b.inputs[2], b.inputs[3]};
  const Tensor4& g = b.out_grad;
  const int c_in = x.c();
  const int c_emb = w[0]->n();
  const int L = x.h() * x.w();
  const double temp = attrs_as<AttentionAttrs>(b.attrs).options.scale_logits ? 1.0 / std::sqrt(double(c_emb)) : 1.0;
  const auto at = [L](int row, int col) { return static_cast<std::size_t>(row) * L + col; };

  Tensor4 gx(x.dims());
  std::vector<std::vector<double>> gw(3, std::vector<double>(static_cast<std::size_t>(c_emb) * c_in, 0.0));
  for (int n = 0; n < x.n(); ++n) {
    // embeddings (c_emb, L)
    std::vector<std::vector<double>> emb(3, std::vector<double>(static_cast<std::size_t>(c_emb) * L, 0.0));
    for (int m = 0; m < 3; ++m)
      for (int e = 0; e < c_emb; ++e)
        for (int c = 0; c < c_in; ++c) {
          const double wv = (*w[m])(e, c, 0, 0);
          for (int j = 0; j < L; ++j) emb[m][at(e, j)] += wv * x.plane(n, c)[j];
        }
    const auto& Q = emb[0];
    const auto& K = emb[1];
    const auto& V = emb[2];
    std::vector<std::vector<double>> gemb(3, std::vector<double>(static_cast<std::size_t>(c_emb) * L, 0.0));
    std::vector<double> A(static_cast<std::size_t>(L)), gA(static_cast<std::size_t>(L));
    for (int p = 0; p < L; ++p) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < L; ++j) {
        double s = 0.0;
        for (int e = 0; e < c_emb; ++e) s += Q[at(e, p)] * K[at(e, j)];
        A[j] = s * temp;
        mx = std::max(mx, A[j]);
      }
      double total = 0.0;
      for (auto& a : A) {
        a = std::exp(a - mx);
        total += a;
      }
      for (auto& a : A) a /= total;
      double dotp = 0.0;
      for (int j = 0; j < L; ++j) {
        double s = 0.0;
        for (int e = 0; e < c_emb; ++e) {
          const double ge = g.plane(n, e)[p];
          s += ge * V[at(e, j)];
          gemb[2][at(e, j)] += A[j] * ge;
        }
        gA[j] = s;
        dotp += A[j] * s;
      }
      for (int j = 0; j < L; ++j) {
        const double gs = A[j] * (gA[j] - dotp) * temp;
        for (int e = 0; e < c_emb; ++e) {
          gemb[0][at(e, p)] += gs * K[at(e, j)];
          gemb[1][at(e, j)] += gs * Q[at(e, p)];
        }
      }
    }
    // back through the 1x1 embeddings
    for (int c = 0; c < c_in; ++c) {
      const float* xp = x.plane(n, c);
      float* gxp = gx.plane(n, c);
      for (int j = 0; j < L; ++j) {
        double acc = 0.0;
        for (int m = 0; m < 3; ++m)
          for (int e = 0; e < c_emb; ++e) {
            acc += (*w[m])(e, c, 0, 0) * gemb[m][at(e, j)];
            gw[m][static_cast<std::size_t>(e) * c_in + c] += gemb[m][at(e, j)] * xp[j];
          }
        gxp[j] = static_cast<float>(acc);
      }
    }
  }
  std::vector<Tensor4> out{std::move(gx)};
  for (int m = 0; m < 3; ++m) {
    Tensor4 t(w[m]->dims());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(gw[m][i]);
    out.push_back(std::move(t));
  }
  return out;
}

// -- heads ------------------------------------------------------------------------

Tensor4 gap_fwd(const ForwardArgs& f) {
  require_inputs(f.inputs, 1, 1, "global_avg_pool");
  const Tensor4& x = *f.inputs[0];
  Tensor4 out(Dims{x.n(), x.c(), 1, 1});
  const std::size_t plane = x.dims().plane();
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < plane; ++i) acc += x.plane(n, c)[i];
      out(n, c, 0, 0) = static_cast<float>(acc / static_cast<double>(plane));
    }
  return out;
}
std::vector<Tensor4> gap_bwd(const BackwardArgs& b) {
  const Tensor4& x = *b.inputs[0];
  Tensor4 gx(x.dims());
  const double inv = 1.0 / static_cast<double>(x.dims().plane());
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c) {
      const auto v = static_cast<float>(b.out_grad(n, c, 0, 0) * inv);
      std::fill_n(gx.plane(n, c), x.dims().plane(), v);
    }
  return {std::move(gx)};
}

std::vector<double> softmax_row(const Tensor4& logits, int n) {
  std::vector<double> p(static_cast<std::size_t>(logits.c()));
  double mx = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < logits.c(); ++k) mx = std::max(mx, static_cast<double>(logits(n, k, 0, 0)));
  double total = 0.0;
  for (int k = 0; k < logits.c(); ++k) total += p[k] = std::exp(logits(n, k, 0, 0) - mx);
  for (auto& v : p) v /= total;
  return p;
}

Tensor4 xent_fwd(const ForwardArgs& f) {
  require_inputs(f.inputs, 1, 1, "softmax_cross_entropy");
  const Tensor4& z = *f.inputs[0];
  const auto& labels = attrs_as<LabelAttrs>(f.attrs).labels;
  if (z.h() != 1 || z.w() != 1 || labels.size() != static_cast<std::size_t>(z.n()))
    throw DomainError("softmax_cross_entropy: logits must be (n, k, 1, 1) with n labels");
  double loss = 0.0;
  for (int n = 0; n < z.n(); ++n) {
    if (labels[n] < 0 || labels[n] >= z.c()) throw DomainError("softmax_cross_entropy: label out of range");
    loss -= std::log(std::max(softmax_row(z, n)[labels[n]], 1e-300));
  }
  return Tensor4(Dims{}, static_cast<float>(loss / z.n()));
}
std::vector<Tensor4> xent_bwd(const BackwardArgs& b) {
  const Tensor4& z = *b.inputs[0];
  const auto& labels = attrs_as<LabelAttrs>(b.attrs).labels;
  const double g = b.out_grad[0] / static_cast<double>(z.n());
  Tensor4 gz(z.dims());
  for (int n = 0; n < z.n(); ++n) {
    auto p = softmax_row(z, n);
    p[labels[n]] -= 1.0;
    for (int k = 0; k < z.c(); ++k) gz(n, k, 0, 0) = static_cast<float>(p[k] * g);
  }
  return {std::move(gz)};
}

Tensor4 sum_fwd(const ForwardArgs& f) {
  require_inputs(f.inputs, 1, 1, "sum_all");
  return Tensor4(Dims{}, static_cast<float>(xvol::sum(*f.inputs[0])));
}
std::vector<Tensor4> sum_bwd(const BackwardArgs& b) { return {Tensor4(b.inputs[0]->dims(), b.out_grad[0])}; }

OpRegistry make_standard() {
  OpRegistry r;
  r.set(OpId::Conv2d, {conv_fwd, conv_bwd});
  r.set(OpId::BatchNormInfer, {bn_infer_fwd, bn_infer_bwd});
  r.set(OpId::BatchNormTrain, {bn_train_fwd, bn_train_bwd});
  r.set(OpId::Shift, {shift_fwd, shift_bwd});
  r.set(OpId::Hadamard, {hadamard_fwd, hadamard_bwd});
  r.set(OpId::Add, {add_fwd, add_bwd});
  r.set(OpId::Scale, {scale_fwd, scale_bwd});
  r.set(OpId::ChannelSum, {channel_sum_fwd, channel_sum_bwd});
  r.set(OpId::BroadcastMul, {broadcast_mul_fwd, broadcast_mul_bwd});
  r.set(OpId::Concat, {concat_fwd, concat_bwd});
  r.set(OpId::OffsetSum, {offset_sum_fwd, offset_sum_bwd});
  r.set(OpId::Relu, {relu_fwd, relu_bwd});
  r.set(OpId::SelfAttention, {attention_fwd, attention_bwd});
  r.set(OpId::GlobalAvgPool, {gap_fwd, gap_bwd});
  r.set(OpId::SoftmaxCrossEntropy, {xent_fwd, xent_bwd});
  r.set(OpId::SumAll, {sum_fwd, sum_bwd});
  return r;
}

}  // namespace

const OpRegistry& OpRegistry::standard() {
  static const OpRegistry registry = make_standard();
  return registry;
}

}  // namespace xvol::ad
