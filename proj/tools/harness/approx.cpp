#include <Eigen/Dense>
#include <cmath>
#include <numbers>

#include "harness.hpp"
#include "xvol/random.hpp"

// Hierarchical PSSA approximation of global attention.
//
// Depth 1 is a single PSSA layer whose embedding pairs every key channel e
// with every value channel f:  q_e(p) * k_e(p - d) * v_f(p - d).
// Deeper stacks first gather m_ef = sum_d k_e * v_f over the shift pattern,
// propagate it with identity-mix layers (Q = K = 1), and finish with
// q_e(p) * m_ef(p - d). A constant channel supplies the unit query/key.
// Only the final 1x1 mix is fitted, by least squares against the exact target.
namespace xvol::harness {

const char* to_string(ApproxMode m) { return m == ApproxMode::Logits ? "logits" : "outputs"; }

Tensor4 smooth_fields(std::uint64_t seed, int n, int c, int size) {
  Rng rng(seed);
  Tensor4 out(Dims{n, c, size, size});
  constexpr double two_pi = 2.0 * std::numbers::pi;
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const double offset = rng.normal(0.0, 0.5);
      double fy[4], fx[4], ph[4], amp[4];
      for (int k = 0; k < 4; ++k) {
        fy[k] = rng.uniform(-1.0, 1.0);
        fx[k] = rng.uniform(-1.0, 1.0);
        ph[k] = rng.uniform(0.0, two_pi);
        amp[k] = rng.normal(0.0, 0.5);
      }
      for (int i = 0; i < size; ++i)
        for (int j = 0; j < size; ++j) {
          double v = offset;
          for (int k = 0; k < 4; ++k) v += amp[k] * std::cos(two_pi * (fy[k] * i + fx[k] * j) / size + ph[k]);
          out(b, ch, i, j) = static_cast<float>(v);
        }
    }
  return out;
}

namespace {

struct Problem {
  AttentionParams attn;
  int c_in = 0;
  int c_emb = 0;
};

// (1/hw) * sum_j (q(p) . k(j)) v(j): attention without the softmax.
Tensor4 logits_target(const Tensor4& x, const AttentionParams& a) {
  const Tensor4 v = embed_1x1(x, a.wv);
  Tensor4 out(Dims{x.n(), a.c_emb(), x.h(), x.w()});
  const int hw = x.h() * x.w();
  for (int b = 0; b < x.n(); ++b) {
    const Matrix s = attention_logits(x, a, b);
    const Tensor4 vb = slice_batch(v, b, 1);
    for (int f = 0; f < a.c_emb(); ++f) {
      const float* vp = vb.plane(0, f);
      float* op = out.plane(b, f);
      for (int p = 0; p < hw; ++p) {
        double acc = 0.0;
        for (int j = 0; j < hw; ++j) acc += static_cast<double>(s(p, j)) * vp[j];
        op[p] = static_cast<float>(acc / hw);
      }
    }
  }
  return out;
}

Tensor4 ones_like(const Tensor4& x) { return Tensor4::ones(Dims{x.n(), 1, x.h(), x.w()}); }

// 1x1 embedding assembled row by row: either a channel selector or a copy of
// an attention embedding row applied to the leading channels.
struct EmbedBuilder {
  int rows;
  int cols;
  Tensor4 w;
  EmbedBuilder(int r, int c) : rows(r), cols(c), w(Dims{r, c, 1, 1}) {}
  void select(int row, int channel) { w(row, channel, 0, 0) = 1.0f; }
  void copy_row(int row, const Tensor4& from, int from_row) {
    for (int c = 0; c < from.c(); ++c) w(row, c, 0, 0) = from(from_row, c, 0, 0);
  }
};

PssaConfig layer_cfg(const PssaConfig& base, MixMode mix) {
  PssaConfig c = base;
  c.stack_depth = 1;
  c.product = ProductMode::Elementwise;
  c.mix = mix;
  return c;
}

// Gather and propagation layers; returns the final layer input and its params (mix unset).
std::pair<Tensor4, PssaParams> build_final(const Tensor4& x, const Problem& pr, int depth, const PssaConfig& base) {
  const int C = pr.c_in, E = pr.c_emb, G = E * E;
  const auto& a = pr.attn;
  PssaParams fin;
  if (depth == 1) {
    EmbedBuilder q(G, C), k(G, C), v(G, C);
    for (int e = 0; e < E; ++e)
      for (int f = 0; f < E; ++f) {
        q.copy_row(e * E + f, a.wq, e);
        k.copy_row(e * E + f, a.wk, e);
        v.copy_row(e * E + f, a.wv, f);
      }
    fin.attn = {q.w, k.w, v.w};
    return {x, fin};
  }

  const auto id_cfg = layer_cfg(base, MixMode::Identity);
  const Tensor4 ones = ones_like(x);

  // Gather: m_ef = sum_d k_e(p - d) v_f(p - d).
  PssaParams gather;
  {
    EmbedBuilder q(G, C + 1), k(G, C + 1), v(G, C + 1);
    for (int e = 0; e < E; ++e)
      for (int f = 0; f < E; ++f) {
        q.select(e * E + f, C);
        k.copy_row(e * E + f, a.wk, e);
        v.copy_row(e * E + f, a.wv, f);
      }
    gather.attn = {q.w, k.w, v.w};
    gather.mix = ConvKernel::zeros(G, id_cfg.num_offsets() * G, 1);
    gather.bn = BatchNormParams::identity(G);
  }
  const Tensor4 xo[] = {x, ones};
  Tensor4 m = pssa_forward(concat_channels(xo), gather, id_cfg);

  // Propagation: m <- sum_d m(p - d).
  PssaParams prop;
  {
    EmbedBuilder q(G, G + 1), k(G, G + 1), v(G, G + 1);
    for (int g = 0; g < G; ++g) {
      q.select(g, G);
      k.select(g, G);
      v.select(g, g);
    }
    prop.attn = {q.w, k.w, v.w};
    prop.mix = ConvKernel::zeros(G, id_cfg.num_offsets() * G, 1);
    prop.bn = BatchNormParams::identity(G);
  }
  for (int layer = 2; layer < depth; ++layer) {
    const Tensor4 mo[] = {m, ones};
    m = pssa_forward(concat_channels(mo), prop, id_cfg);
  }

  // Final: q_e(p) * m_ef(p - d), input [x, 1, m].
  EmbedBuilder q(G, C + 1 + G), k(G, C + 1 + G), v(G, C + 1 + G);
  for (int e = 0; e < E; ++e)
    for (int f = 0; f < E; ++f) {
      const int g = e * E + f;
      q.copy_row(g, a.wq, e);
      k.select(g, C);
      v.select(g, C + 1 + g);
    }
  fin.attn = {q.w, k.w, v.w};
  const Tensor4 xm[] = {x, ones, m};
  return {concat_channels(xm), fin};
}

Eigen::MatrixXd design(const Tensor4& feats) {
  const int hw = feats.h() * feats.w();
  Eigen::MatrixXd a(static_cast<Eigen::Index>(feats.n()) * hw, feats.c() + 1);
  for (int b = 0; b < feats.n(); ++b)
    for (int c = 0; c < feats.c(); ++c) {
      const float* p = feats.plane(b, c);
      for (int i = 0; i < hw; ++i) a(static_cast<Eigen::Index>(b) * hw + i, c) = p[i];
    }
  a.col(feats.c()).setOnes();
  return a;
}

Eigen::MatrixXd targets(const Tensor4& t) {
  const int hw = t.h() * t.w();
  Eigen::MatrixXd y(static_cast<Eigen::Index>(t.n()) * hw, t.c());
  for (int b = 0; b < t.n(); ++b)
    for (int c = 0; c < t.c(); ++c) {
      const float* p = t.plane(b, c);
      for (int i = 0; i < hw; ++i) y(static_cast<Eigen::Index>(b) * hw + i, c) = p[i];
    }
  return y;
}

// Ridge-regularised least squares; the tiny ridge only breaks exact ties
// between duplicate feature columns (border offsets of a small image).
Eigen::MatrixXd solve_ls(const Eigen::MatrixXd& a, const Eigen::MatrixXd& y) {
  Eigen::MatrixXd ata = a.transpose() * a;
  const double ridge = 1e-8 * std::max(1.0, ata.diagonal().mean());
  ata.diagonal().array() += ridge;
  return ata.ldlt().solve(a.transpose() * y);
}

}  // namespace

std::vector<ApproxResult> run_approx(const RunConfig& cfg) {
  Rng rng(cfg.seed);
  Problem pr;
  pr.c_in = 2;
  pr.c_emb = 2;
  const double sd = 1.0 / std::sqrt(static_cast<double>(pr.c_in));
  pr.attn = {rng.normal_tensor(Dims{pr.c_emb, pr.c_in, 1, 1}, sd), rng.normal_tensor(Dims{pr.c_emb, pr.c_in, 1, 1}, sd),
             rng.normal_tensor(Dims{pr.c_emb, pr.c_in, 1, 1}, sd)};
  const int S = cfg.approx_size;
  const Tensor4 train = smooth_fields(cfg.seed + 1, cfg.approx_train_fields, pr.c_in, S);
  const Tensor4 test = smooth_fields(cfg.seed + 2, cfg.approx_test_fields, pr.c_in, S);
  const PssaConfig fin_cfg = layer_cfg(cfg.pssa, MixMode::Learned);
  if (fin_cfg.max_shift() >= S) throw DomainError("approx: shift lengths must be smaller than approx.size");

  std::vector<ApproxResult> out;
  for (ApproxMode mode : {ApproxMode::Logits, ApproxMode::Outputs}) {
    const auto target = [&](const Tensor4& x) {
      return mode == ApproxMode::Logits ? logits_target(x, pr.attn) : self_attention_exact(x, pr.attn);
    };
    const Tensor4 y_train = target(train);
    const Tensor4 y_test = target(test);
    for (int depth : cfg.approx_depths) {
      auto [in_train, fin] = build_final(train, pr, depth, cfg.pssa);
      const Tensor4 feats = value_features(in_train, fin, fin_cfg);
      const Eigen::MatrixXd beta = solve_ls(design(feats), targets(y_train));

      const int nf = feats.c();
      fin.mix = ConvKernel::zeros(pr.c_emb, nf, 1);
      for (int o = 0; o < pr.c_emb; ++o) {
        for (int c = 0; c < nf; ++c) fin.mix.weight(o, c, 0, 0) = static_cast<float>(beta(c, o));
        fin.mix.bias[static_cast<std::size_t>(o)] = static_cast<float>(beta(nf, o));
      }
      fin.bn = BatchNormParams::identity(pr.c_emb);

      const auto in_test = build_final(test, pr, depth, cfg.pssa).first;
      const Tensor4 pred = pssa_forward(in_test, fin, fin_cfg);
      out.push_back({depth, mode, approx_quality(pred, y_test)});
    }
  }
  return out;
}

CommandResult cmd_approx(const RunConfig& cfg) {
  CommandResult res;
  res.csv.header = {"depth", "mode", "cosine", "rel_l2"};
  const auto rows = run_approx(cfg);
  const auto opt = [](const std::optional<double>& v) { return v ? fmt_num(*v) : std::string(); };
  for (const auto& r : rows) {
    res.csv.add({std::to_string(r.depth), to_string(r.mode), opt(r.quality.cosine), opt(r.quality.relative_l2)});
    res.log.push_back("approx depth=" + std::to_string(r.depth) + " mode=" + to_string(r.mode) +
                      " cosine=" + opt(r.quality.cosine) + " rel_l2=" + opt(r.quality.relative_l2));
  }
  return res;
}

}  // namespace xvol::harness
