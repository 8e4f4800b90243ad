#include "xvol/nn_ops.hpp"

#include <algorithm>
#include <cmath>

#include "xvol/parallel.hpp"

namespace xvol {

// ---------------------------------------------------------------------------
// Parameter types
// ---------------------------------------------------------------------------

ConvKernel ConvKernel::same(Tensor4 weight, std::vector<float> bias, int dilation) {
  ConvKernel k;
  k.weight = std::move(weight);
  k.bias = std::move(bias);
  k.dilation = dilation;
  k.padding = dilation * (k.k() / 2);
  k.validate();
  return k;
}

ConvKernel ConvKernel::zeros(int c_out, int c_in, int k, int dilation) {
  return same(Tensor4(Dims{c_out, c_in, k, k}), std::vector<float>(static_cast<std::size_t>(c_out), 0.0f),
              dilation);
}

void ConvKernel::validate() const {
  if (weight.h() != weight.w()) throw DomainError("ConvKernel: kernel must be square");
  if (k() % 2 == 0) throw DomainError("ConvKernel: kernel size must be odd, got " + std::to_string(k()));
  if (stride < 1) throw DomainError("ConvKernel: stride must be >= 1");
  if (dilation < 1) throw DomainError("ConvKernel: dilation must be >= 1");
  if (padding < 0) throw DomainError("ConvKernel: padding must be >= 0");
  if (bias.size() != static_cast<std::size_t>(c_out()))
    throw DomainError("ConvKernel: bias length " + std::to_string(bias.size()) + " != c_out " +
                      std::to_string(c_out()));
}

BatchNormParams BatchNormParams::identity(int channels, float eps) {
  BatchNormParams bn;
  bn.gamma.assign(static_cast<std::size_t>(channels), 1.0f);
  bn.beta.assign(static_cast<std::size_t>(channels), 0.0f);
  bn.mean.assign(static_cast<std::size_t>(channels), 0.0f);
  bn.var.assign(static_cast<std::size_t>(channels), 1.0f - eps);
  bn.eps = eps;
  return bn;
}

std::vector<double> BatchNormParams::scale() const {
  std::vector<double> s(gamma.size());
  for (std::size_t c = 0; c < s.size(); ++c)
    s[c] = static_cast<double>(gamma[c]) / std::sqrt(static_cast<double>(var[c]) + static_cast<double>(eps));
  return s;
}

std::vector<double> BatchNormParams::shift() const {
  auto s = scale();
  for (std::size_t c = 0; c < s.size(); ++c) s[c] = static_cast<double>(beta[c]) - mean[c] * s[c];
  return s;
}

void BatchNormParams::validate() const {
  const auto c = gamma.size();
  if (c == 0 || beta.size() != c || mean.size() != c || var.size() != c)
    throw DomainError("BatchNormParams: gamma/beta/mean/var lengths differ");
  if (!(eps > 0.0f)) throw DomainError("BatchNormParams: eps must be positive");
  for (float v : var)
    if (v < 0.0f) throw DomainError("BatchNormParams: negative running variance");
}

void AttentionParams::validate() const {
  for (const Tensor4* t : {&wq, &wk, &wv}) {
    if (t->h() != 1 || t->w() != 1) throw DomainError("AttentionParams: embeddings must be 1x1");
    if (t->c() != c_in()) throw DomainError("AttentionParams: embeddings disagree on c_in");
    if (!t->all_finite()) throw DomainError("AttentionParams: non-finite embedding weight");
  }
  if (wk.n() != c_emb()) throw DomainError("AttentionParams: wq and wk disagree on c_emb");
}

DynamicKernelField::DynamicKernelField(int n_, int h_, int w_, int groups_, std::vector<ShiftOffset> offs)
    : n(n_), h(h_), w(w_), groups(groups_), offsets(std::move(offs)) {
  if (n < 1 || h < 1 || w < 1 || groups < 1) throw DomainError("DynamicKernelField: invalid dims");
  auto sorted = offsets;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw DomainError("DynamicKernelField: offsets must be distinct");
  coeff.assign(static_cast<std::size_t>(n) * h * w * offsets.size() * groups, 0.0f);
}

// ---------------------------------------------------------------------------
// Convolution and normalisation
// ---------------------------------------------------------------------------

Tensor4 conv2d(const Tensor4& x, const ConvKernel& kern) {
  kern.validate();
  if (x.c() != kern.c_in())
    throw DomainError("conv2d: input has " + std::to_string(x.c()) + " channels, kernel expects " +
                      std::to_string(kern.c_in()));
  const int k = kern.k();
  const int s = kern.stride;
  const int d = kern.dilation;
  const int pad = kern.padding;
  const int oh = (x.h() + 2 * pad - kern.extent()) / s + 1;
  const int ow = (x.w() + 2 * pad - kern.extent()) / s + 1;
  if (x.h() + 2 * pad < kern.extent() || x.w() + 2 * pad < kern.extent())
    throw DomainError("conv2d: input smaller than the padded kernel extent");

  Tensor4 out(Dims{x.n(), kern.c_out(), oh, ow});
  const int c_out = kern.c_out();
  parallel_for(static_cast<std::size_t>(x.n()) * c_out, [&](std::size_t job) {
    const int n = static_cast<int>(job / c_out);
    const int o = static_cast<int>(job % c_out);
    std::vector<double> acc(static_cast<std::size_t>(oh) * ow, static_cast<double>(kern.bias[o]));
    for (int c = 0; c < x.c(); ++c) {
      const float* src = x.plane(n, c);
      for (int a = 0; a < k; ++a) {
        for (int b = 0; b < k; ++b) {
          const double wv = kern.weight(o, c, a, b);
          if (wv == 0.0) continue;
          const int dy = a * d - pad;
          const int dx = b * d - pad;
          // ox range with 0 <= ox*s + dx < w
          const int ox0 = dx >= 0 ? 0 : (-dx + s - 1) / s;
          const int ox1 = dx >= x.w() ? 0 : std::min(ow, (x.w() - 1 - dx) / s + 1);
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * s + dy;
            if (iy < 0 || iy >= x.h()) continue;
            const float* row = src + static_cast<std::size_t>(iy) * x.w();
            double* arow = acc.data() + static_cast<std::size_t>(oy) * ow;
            for (int ox = ox0; ox < ox1; ++ox) arow[ox] += wv * row[ox * s + dx];
          }
        }
      }
    }
    float* dst = out.plane(n, o);
    for (std::size_t i = 0; i < acc.size(); ++i) dst[i] = static_cast<float>(acc[i]);
  });
  return out;
}

Tensor4 batchnorm(const Tensor4& x, const BatchNormParams& bn) {
  bn.validate();
  if (x.c() != bn.channels())
    throw DomainError("batchnorm: input has " + std::to_string(x.c()) + " channels, params have " +
                      std::to_string(bn.channels()));
  const auto sc = bn.scale();
  Tensor4 out(x.dims());
  const std::size_t plane = x.dims().plane();
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const float* src = x.plane(n, c);
      float* dst = out.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i)
        dst[i] = static_cast<float>((static_cast<double>(src[i]) - bn.mean[c]) * sc[c] + bn.beta[c]);
    }
  }
  return out;
}

ConvKernel fold_bn_into_conv(const ConvKernel& kern, const BatchNormParams& bn) {
  kern.validate();
  bn.validate();
  if (bn.channels() != kern.c_out())
    throw DomainError("fold_bn_into_conv: BN has " + std::to_string(bn.channels()) +
                      " channels, kernel has " + std::to_string(kern.c_out()) + " outputs");
  const auto sc = bn.scale();
  ConvKernel out = kern;
  const std::size_t per_out = static_cast<std::size_t>(kern.c_in()) * kern.k() * kern.k();
  for (int o = 0; o < kern.c_out(); ++o) {
    float* wrow = out.weight.data().data() + o * per_out;
    for (std::size_t i = 0; i < per_out; ++i) wrow[i] = static_cast<float>(wrow[i] * sc[o]);
    out.bias[o] = static_cast<float>((static_cast<double>(kern.bias[o]) - bn.mean[o]) * sc[o] + bn.beta[o]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Attention
// ---------------------------------------------------------------------------

Matrix softmax_rows(const Matrix& m) {
  Matrix out(m.rows, m.cols);
  for (int r = 0; r < m.rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < m.cols; ++c) mx = std::max(mx, static_cast<double>(m(r, c)));
    double total = 0.0;
    std::vector<double> e(static_cast<std::size_t>(m.cols));
    for (int c = 0; c < m.cols; ++c) {
      e[c] = std::exp(static_cast<double>(m(r, c)) - mx);
      total += e[c];
    }
    for (int c = 0; c < m.cols; ++c) out(r, c) = static_cast<float>(e[c] / total);
  }
  return out;
}

Tensor4 embed_1x1(const Tensor4& x, const Tensor4& weight) {
  if (weight.h() != 1 || weight.w() != 1 || weight.c() != x.c())
    throw DomainError("embed_1x1: weight " + weight.dims().str() + " incompatible with input " + x.dims().str());
  const int c_emb = weight.n();
  Tensor4 out(Dims{x.n(), c_emb, x.h(), x.w()});
  const std::size_t plane = x.dims().plane();
  std::vector<double> acc(plane);
  for (int n = 0; n < x.n(); ++n) {
    for (int e = 0; e < c_emb; ++e) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int c = 0; c < x.c(); ++c) {
        const double wv = weight(e, c, 0, 0);
        const float* src = x.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) acc[i] += wv * src[i];
      }
      float* dst = out.plane(n, e);
      for (std::size_t i = 0; i < plane; ++i) dst[i] = static_cast<float>(acc[i]);
    }
  }
  return out;
}

namespace {

struct Embedded {
  int c_emb;
  int positions;
  std::vector<double> q, k, v;  // (c_emb, positions)
};

Embedded embed_all(const Tensor4& x, const AttentionParams& p, int n) {
  Embedded e{p.c_emb(), x.h() * x.w(), {}, {}, {}};
  const auto project = [&](const Tensor4& wt, std::vector<double>& dst) {
    const int rows = wt.n();
    dst.assign(static_cast<std::size_t>(rows) * e.positions, 0.0);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < x.c(); ++c) {
        const double wv = wt(r, c, 0, 0);
        const float* src = x.plane(n, c);
        double* d = dst.data() + static_cast<std::size_t>(r) * e.positions;
        for (int i = 0; i < e.positions; ++i) d[i] += wv * src[i];
      }
  };
  project(p.wq, e.q);
  project(p.wk, e.k);
  project(p.wv, e.v);
  return e;
}

void check_attention_input(const Tensor4& x, const AttentionParams& p) {
  p.validate();
  if (x.c() != p.c_in())
    throw DomainError("self_attention_exact: input has " + std::to_string(x.c()) + " channels, params expect " +
                      std::to_string(p.c_in()));
}

}  // namespace

Matrix attention_logits(const Tensor4& x, const AttentionParams& p, int n_index, AttentionOptions opts) {
  check_attention_input(x, p);
  if (n_index < 0 || n_index >= x.n()) throw DomainError("attention_logits: batch index out of range");
  const auto e = embed_all(x, p, n_index);
  const double temp = opts.scale_logits ? 1.0 / std::sqrt(static_cast<double>(e.c_emb)) : 1.0;
  const int L = e.positions;
  Matrix s(L, L);
  for (int i = 0; i < L; ++i)
    for (int j = 0; j < L; ++j) {
      double acc = 0.0;
      for (int c = 0; c < e.c_emb; ++c)
        acc += e.q[static_cast<std::size_t>(c) * L + i] * e.k[static_cast<std::size_t>(c) * L + j];
      s(i, j) = static_cast<float>(acc * temp);
    }
  return s;
}

Tensor4 self_attention_exact(const Tensor4& x, const AttentionParams& p, AttentionOptions opts) {
  check_attention_input(x, p);
  const int c_emb = p.c_emb();
  const int L = x.h() * x.w();
  const double temp = opts.scale_logits ? 1.0 / std::sqrt(static_cast<double>(c_emb)) : 1.0;
  Tensor4 out(Dims{x.n(), c_emb, x.h(), x.w()});
  for (int n = 0; n < x.n(); ++n) {
    const auto e = embed_all(x, p, n);
    // Position-major copies so the inner loops are contiguous.
    std::vector<double> kt(static_cast<std::size_t>(L) * c_emb), vt(static_cast<std::size_t>(L) * c_emb);
    for (int c = 0; c < c_emb; ++c)
      for (int j = 0; j < L; ++j) {
        kt[static_cast<std::size_t>(j) * c_emb + c] = e.k[static_cast<std::size_t>(c) * L + j];
        vt[static_cast<std::size_t>(j) * c_emb + c] = e.v[static_cast<std::size_t>(c) * L + j];
      }
    parallel_for(static_cast<std::size_t>(L), [&](std::size_t pi) {
      const int i = static_cast<int>(pi);
      std::vector<double> qi(static_cast<std::size_t>(c_emb));
      for (int c = 0; c < c_emb; ++c) qi[c] = e.q[static_cast<std::size_t>(c) * L + i];
      std::vector<double> logits(static_cast<std::size_t>(L));
      double mx = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < L; ++j) {
        const double* kj = kt.data() + static_cast<std::size_t>(j) * c_emb;
        double acc = 0.0;
        for (int c = 0; c < c_emb; ++c) acc += qi[c] * kj[c];
        logits[j] = acc * temp;
        mx = std::max(mx, logits[j]);
      }
      double total = 0.0;
      for (auto& l : logits) {
        l = std::exp(l - mx);
        total += l;
      }
      std::vector<double> y(static_cast<std::size_t>(c_emb), 0.0);
      for (int j = 0; j < L; ++j) {
        const double a = logits[j] / total;
        const double* vj = vt.data() + static_cast<std::size_t>(j) * c_emb;
        for (int c = 0; c < c_emb; ++c) y[c] += a * vj[c];
      }
      for (int c = 0; c < c_emb; ++c) out.plane(n, c)[i] = static_cast<float>(y[c]);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dynamic convolution
// ---------------------------------------------------------------------------

Tensor4 dynamic_conv2d(const Tensor4& x, const DynamicKernelField& field, const ConvKernel& static_kern,
                       const DynamicValue& value, const std::vector<float>& bias) {
  static_kern.validate();
  if (!static_kern.is_same()) throw DomainError("dynamic_conv2d: static kernel must be stride-1 'same'");
  if (field.n != x.n() || field.h != x.h() || field.w != x.w())
    throw DomainError("dynamic_conv2d: field dims do not match input " + x.dims().str());
  if (static_kern.c_in() != x.c() || value.c_in() != x.c())
    throw DomainError("dynamic_conv2d: channel mismatch between input, static kernel and value embedding");
  const int c_out = static_kern.c_out();
  const int c_emb = value.c_emb();
  const int n_off = static_cast<int>(field.offsets.size());
  if (value.mix.n() != n_off || value.mix.c() != c_out || value.mix.h() != c_emb || value.mix.w() != 1)
    throw DomainError("dynamic_conv2d: mix tensor " + value.mix.dims().str() + " inconsistent with " +
                      std::to_string(n_off) + " offsets, c_out " + std::to_string(c_out) + ", c_emb " +
                      std::to_string(c_emb));
  if (field.groups != 1 && field.groups != c_emb)
    throw DomainError("dynamic_conv2d: field groups must be 1 or c_emb");
  if (bias.size() != static_cast<std::size_t>(c_out)) throw DomainError("dynamic_conv2d: bias length != c_out");

  const Tensor4 v = embed_1x1(x, value.wv);
  const int h = x.h();
  const int w = x.w();
  const int k = static_kern.k();
  const int dil = static_kern.dilation;
  const int pad = static_kern.padding;
  const bool per_channel = field.groups > 1;

  Tensor4 out(Dims{x.n(), c_out, h, w});
  parallel_for(static_cast<std::size_t>(x.n()) * h, [&](std::size_t job) {
    const int n = static_cast<int>(job / h);
    const int y = static_cast<int>(job % h);
    std::vector<double> acc(static_cast<std::size_t>(c_out));
    std::vector<double> t(static_cast<std::size_t>(c_emb));
    for (int xx = 0; xx < w; ++xx) {
      for (int o = 0; o < c_out; ++o) acc[o] = static_cast<double>(bias[o]) + static_kern.bias[o];
      // static taps
      for (int c = 0; c < x.c(); ++c) {
        for (int a = 0; a < k; ++a) {
          const int iy = y + a * dil - pad;
          if (iy < 0 || iy >= h) continue;
          for (int b = 0; b < k; ++b) {
            const int ix = xx + b * dil - pad;
            if (ix < 0 || ix >= w) continue;
            const double xv = x(n, c, iy, ix);
            for (int o = 0; o < c_out; ++o) {
              const double wv = static_kern.weight(o, c, a, b);
              if (wv != 0.0) acc[o] += wv * xv;
            }
          }
        }
      }
      // content-dependent taps
      for (int d = 0; d < n_off; ++d) {
        const int ny = y - field.offsets[d].dy;
        const int nx = xx - field.offsets[d].dx;
        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
        for (int e = 0; e < c_emb; ++e)
          t[e] = static_cast<double>(field.at(n, y, xx, d, per_channel ? e : 0)) * v(n, e, ny, nx);
        for (int o = 0; o < c_out; ++o) {
          double s = 0.0;
          for (int e = 0; e < c_emb; ++e) s += static_cast<double>(value.mix(d, o, e, 0)) * t[e];
          acc[o] += s;
        }
      }
      for (int o = 0; o < c_out; ++o) out(n, o, y, xx) = static_cast<float>(acc[o]);
    }
  });
  return out;
}

}  // namespace xvol
