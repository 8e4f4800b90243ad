#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

#include "harness.hpp"
#include "xvol/layers.hpp"
#include "xvol/parallel.hpp"

namespace xvol::harness {

const char* to_string(ToyModel m) {
  switch (m) {
    case ToyModel::ConvOnly: return "conv";
    case ToyModel::PssaOnly: return "pssa";
    case ToyModel::Xvolution: return "xvolution";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

namespace {

struct BlobStyle {
  double sy;
  double sx;
};

BlobStyle style_for(int cls) {
  static constexpr BlobStyle base[] = {{1.2, 1.2}, {3.0, 3.0}, {1.0, 3.5}, {3.5, 1.0}};
  const BlobStyle b = base[cls % 4];
  const double grow = 1.0 + 0.5 * (cls / 4);
  return {b.sy * grow, b.sx * grow};
}

void render(Tensor4& out, int index, int cls, int size, Rng& rng) {
  const auto st = style_for(cls);
  float* img = out.plane(index, 0);
  std::fill(img, img + static_cast<std::ptrdiff_t>(size) * size, 0.0f);
  for (int blob = 0; blob < 6; ++blob) {
    const double cy = rng.uniform(0.0, size);
    const double cx = rng.uniform(0.0, size);
    const double amp = rng.uniform(0.6, 1.2) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double dy = (y - cy) / st.sy, dx = (x - cx) / st.sx;
        img[y * size + x] += static_cast<float>(amp * std::exp(-0.5 * (dy * dy + dx * dx)));
      }
  }
  for (int i = 0; i < size * size; ++i) img[i] += static_cast<float>(rng.normal(0.0, 0.15));
}

void fill_split(Tensor4& x, std::vector<int>& y, int count, int classes, int size, Rng& rng) {
  x = Tensor4(Dims{count, 1, size, size});
  y.resize(static_cast<std::size_t>(count));
  // Round-robin labels keep the split balanced; the order is then shuffled.
  std::vector<int> labels(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) labels[static_cast<std::size_t>(i)] = i % classes;
  std::shuffle(labels.begin(), labels.end(), rng.engine());
  for (int i = 0; i < count; ++i) {
    y[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(i)];
    render(x, i, labels[static_cast<std::size_t>(i)], size, rng);
  }
}

}  // namespace

ToyDataset ToyDataset::generate(std::uint64_t seed, int classes, int n_train, int n_val, int size) {
  if (classes < 2 || n_train < 1 || n_val < 1 || size < 8) throw DomainError("ToyDataset: invalid parameters");
  ToyDataset d;
  d.classes = classes;
  Rng rng(seed);
  fill_split(d.train_x, d.train_y, n_train, classes, size, rng);
  fill_split(d.val_x, d.val_y, n_val, classes, size, rng);
  return d;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

namespace {

using ad::Var;

struct Net {
  ToyModel kind;
  ConvKernel c1;
  BatchNormParams bn1;
  ConvKernel cm;  // conv-only middle
  BatchNormParams bnm;
  PssaParams pssa;  // PSSA-only middle
  XvolutionTrainParams xv;
  ConvKernel c3;
  BatchNormParams bn3;
  ConvKernel head;
  PssaConfig pcfg;
};

BatchNormParams fresh_bn(int c) {
  BatchNormParams bn;
  bn.gamma.assign(static_cast<std::size_t>(c), 1.0f);
  bn.beta.assign(static_cast<std::size_t>(c), 0.0f);
  bn.mean.assign(static_cast<std::size_t>(c), 0.0f);
  bn.var.assign(static_cast<std::size_t>(c), 1.0f);
  return bn;
}

ConvKernel he_kernel(Rng& rng, int c_out, int c_in, int k, int dilation = 1) {
  const double sd = std::sqrt(2.0 / (c_in * k * k));
  return ConvKernel::same(rng.normal_tensor(Dims{c_out, c_in, k, k}, sd),
                          std::vector<float>(static_cast<std::size_t>(c_out), 0.0f), dilation);
}

PssaParams fresh_pssa(Rng& rng, int c_in, int c_out, int c_emb, const PssaConfig& cfg) {
  PssaParams p;
  const double es = 1.0 / std::sqrt(static_cast<double>(c_in));
  p.attn.wq = rng.normal_tensor(Dims{c_emb, c_in, 1, 1}, es);
  p.attn.wk = rng.normal_tensor(Dims{c_emb, c_in, 1, 1}, es);
  p.attn.wv = rng.normal_tensor(Dims{c_emb, c_in, 1, 1}, es);
  const int nf = cfg.num_offsets() * c_emb;
  p.mix = ConvKernel::same(rng.normal_tensor(Dims{c_out, nf, 1, 1}, 1.0 / std::sqrt(static_cast<double>(nf))),
                           std::vector<float>(static_cast<std::size_t>(c_out), 0.0f));
  p.bn = fresh_bn(c_out);
  return p;
}

Net make_net(ToyModel kind, const RunConfig& cfg, int classes) {
  // Shared blocks are drawn first from the same seed, so the three models
  // start from identical outer weights.
  Rng rng(cfg.seed + 1000);
  const int C = cfg.channels;
  Net n;
  n.kind = kind;
  n.pcfg = cfg.pssa;
  n.pcfg.stack_depth = 1;
  n.pcfg.mix = MixMode::Learned;
  n.c1 = he_kernel(rng, C, 1, 3);
  n.bn1 = fresh_bn(C);
  n.c3 = he_kernel(rng, C, C, 3);
  n.bn3 = fresh_bn(C);
  n.head = ConvKernel::same(rng.normal_tensor(Dims{classes, C, 1, 1}, 1.0 / std::sqrt(static_cast<double>(C))),
                            std::vector<float>(static_cast<std::size_t>(classes), 0.0f));
  Rng mid(cfg.seed + 2000);
  switch (kind) {
    case ToyModel::ConvOnly:
      n.cm = he_kernel(mid, C, C, 3);
      n.bnm = fresh_bn(C);
      break;
    case ToyModel::PssaOnly:
      n.pssa = fresh_pssa(mid, C, C, cfg.embed_channels, n.pcfg);
      break;
    case ToyModel::Xvolution:
      n.xv.pssa_cfg = n.pcfg;
      n.xv.conv3 = he_kernel(mid, C, C, 3);
      n.xv.conv5d = he_kernel(mid, C, C, 5, 2);
      n.xv.conv_bn = fresh_bn(C);
      n.xv.pssa = fresh_pssa(mid, C, C, cfg.embed_channels, n.pcfg);
      break;
  }
  return n;
}

// Everything recorded for one forward pass.
struct Recorded {
  ad::ConvVars c1, cm, c3, head;
  ad::BnVars bn1, bnm, bn3;
  ad::PssaVars pssa;
  ad::XvolutionVars xv;
  std::vector<Var> params;
  Var logits;
};

Recorded forward(ad::Tape& t, const Net& n, const Tensor4& x, ad::BnMode mode) {
  Recorded r;
  const auto append = [&](const std::vector<Var>& v) { r.params.insert(r.params.end(), v.begin(), v.end()); };
  r.c1 = ad::record(t, n.c1);
  r.bn1 = ad::record(t, n.bn1);
  append(ad::parameters(r.c1));
  append(ad::parameters(r.bn1));

  Var h = t.leaf(x, false);
  h = ad::relu(t, ad::batchnorm(t, ad::conv(t, h, r.c1), r.bn1, mode));
  switch (n.kind) {
    case ToyModel::ConvOnly:
      r.cm = ad::record(t, n.cm);
      r.bnm = ad::record(t, n.bnm);
      append(ad::parameters(r.cm));
      append(ad::parameters(r.bnm));
      h = ad::relu(t, ad::batchnorm(t, ad::conv(t, h, r.cm), r.bnm, mode));
      break;
    case ToyModel::PssaOnly:
      r.pssa = ad::record(t, n.pssa, n.pcfg);
      append(ad::parameters(r.pssa));
      h = ad::relu(t, ad::pssa_forward(t, h, r.pssa, n.pcfg, mode));
      break;
    case ToyModel::Xvolution:
      r.xv = ad::record(t, n.xv);
      append(ad::parameters(r.xv));
      h = ad::relu(t, ad::xvolution_train_forward(t, h, r.xv, n.pcfg, mode));
      break;
  }
  r.c3 = ad::record(t, n.c3);
  r.bn3 = ad::record(t, n.bn3);
  r.head = ad::record(t, n.head);
  append(ad::parameters(r.c3));
  append(ad::parameters(r.bn3));
  append(ad::parameters(r.head));
  h = ad::relu(t, ad::batchnorm(t, ad::conv(t, h, r.c3), r.bn3, mode));
  r.logits = ad::conv(t, ad::global_avg_pool(t, h), r.head);
  return r;
}

void load(const ad::Tape& t, const ad::ConvVars& v, ConvKernel& k) {
  k.weight = t.value(v.weight);
  if (v.bias) k.bias = ad::to_vector(t.value(*v.bias));
}

void load(const ad::Tape& t, const ad::BnVars& v, BatchNormParams& bn) {
  bn.gamma = ad::to_vector(t.value(v.gamma));
  bn.beta = ad::to_vector(t.value(v.beta));
}

void load(const ad::Tape& t, const ad::PssaVars& v, PssaParams& p) {
  p.attn.wq = t.value(v.wq);
  p.attn.wk = t.value(v.wk);
  p.attn.wv = t.value(v.wv);
  if (v.mix) load(t, *v.mix, p.mix);
  load(t, v.bn, p.bn);
}

// Copies updated leaves back into the parameter structs.
void load_all(const ad::Tape& t, const Recorded& r, Net& n) {
  load(t, r.c1, n.c1);
  load(t, r.bn1, n.bn1);
  load(t, r.c3, n.c3);
  load(t, r.bn3, n.bn3);
  load(t, r.head, n.head);
  switch (n.kind) {
    case ToyModel::ConvOnly:
      load(t, r.cm, n.cm);
      load(t, r.bnm, n.bnm);
      break;
    case ToyModel::PssaOnly:
      load(t, r.pssa, n.pssa);
      break;
    case ToyModel::Xvolution:
      load(t, r.xv.conv3, n.xv.conv3);
      load(t, r.xv.conv5d, n.xv.conv5d);
      load(t, r.xv.conv_bn, n.xv.conv_bn);
      load(t, r.xv.pssa, n.xv.pssa);
      break;
  }
}

// Running-statistics update from every batch-mode BN node on the tape.
void update_running_stats(const ad::Tape& t, const Recorded& r, Net& n, double momentum) {
  std::map<std::uint32_t, BatchNormParams*> by_gamma{{r.bn1.gamma.id, &n.bn1}, {r.bn3.gamma.id, &n.bn3}};
  switch (n.kind) {
    case ToyModel::ConvOnly: by_gamma[r.bnm.gamma.id] = &n.bnm; break;
    case ToyModel::PssaOnly: by_gamma[r.pssa.bn.gamma.id] = &n.pssa.bn; break;
    case ToyModel::Xvolution:
      by_gamma[r.xv.conv_bn.gamma.id] = &n.xv.conv_bn;
      by_gamma[r.xv.pssa.bn.gamma.id] = &n.xv.pssa.bn;
      break;
  }
  for (std::uint32_t i = 0; i < t.size(); ++i) {
    const Var v{i};
    if (t.op(v) != ad::OpId::BatchNormTrain) continue;
    auto it = by_gamma.find(t.inputs(v)[1].id);
    if (it == by_gamma.end()) continue;
    BatchNormParams& bn = *it->second;
    const auto& saved = t.saved(v);
    const auto& x = t.value(t.inputs(v)[0]);
    const double m = static_cast<double>(x.n()) * x.h() * x.w();
    const double unbias = m > 1.0 ? m / (m - 1.0) : 1.0;
    for (std::size_t c = 0; c < bn.mean.size(); ++c) {
      bn.mean[c] = static_cast<float>(momentum * bn.mean[c] + (1.0 - momentum) * saved[1][c]);
      bn.var[c] = static_cast<float>(momentum * bn.var[c] + (1.0 - momentum) * saved[2][c] * unbias);
    }
  }
}

double accuracy(const Net& n, const Tensor4& x, const std::vector<int>& y, int batch) {
  int correct = 0;
  for (int b0 = 0; b0 < x.n(); b0 += batch) {
    const int cnt = std::min(batch, x.n() - b0);
    ad::Tape t;
    const auto r = forward(t, n, slice_batch(x, b0, cnt), ad::BnMode::Inference);
    const Tensor4& lg = t.value(r.logits);
    for (int i = 0; i < cnt; ++i) {
      int best = 0;
      for (int k = 1; k < lg.c(); ++k)
        if (lg(i, k, 0, 0) > lg(i, best, 0, 0)) best = k;
      if (best == y[static_cast<std::size_t>(b0 + i)]) ++correct;
    }
  }
  return static_cast<double>(correct) / x.n();
}

}  // namespace

std::vector<EpochStats> train_toy_model(ToyModel model, const ToyDataset& data, const RunConfig& cfg) {
  Net net = make_net(model, cfg, data.classes);
  ad::Sgd sgd({cfg.lr, cfg.momentum, cfg.weight_decay});
  Rng order_rng(cfg.seed + 3000);
  const int n_train = data.train_x.n();
  std::vector<int> order(static_cast<std::size_t>(n_train));
  std::vector<EpochStats> out;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), order_rng.engine());
    double loss_sum = 0.0;
    int batches = 0;
    for (int b0 = 0; b0 < n_train; b0 += cfg.batch) {
      const int cnt = std::min(cfg.batch, n_train - b0);
      // Batch statistics need at least two samples.
      if (cnt < 2) break;
      std::vector<Tensor4> items;
      std::vector<int> labels;
      for (int i = 0; i < cnt; ++i) {
        const int idx = order[static_cast<std::size_t>(b0 + i)];
        items.push_back(slice_batch(data.train_x, idx, 1));
        labels.push_back(data.train_y[static_cast<std::size_t>(idx)]);
      }
      ad::Tape t;
      const auto r = forward(t, net, concat_batch(items), ad::BnMode::Batch);
      const Var loss = ad::softmax_cross_entropy(t, r.logits, labels);
      const double lv = t.value(loss)[0];
      if (!std::isfinite(lv)) {
        out.push_back({epoch, lv, std::nan("")});
        return out;
      }
      loss_sum += lv;
      ++batches;

      const auto grads = t.backward(loss);
      std::vector<Tensor4> values, g;
      for (Var p : r.params) {
        values.push_back(t.value(p));
        g.push_back(grads.has(p) ? grads[p] : Tensor4(t.value(p).dims()));
      }
      std::vector<Tensor4*> ptrs;
      for (auto& v : values) ptrs.push_back(&v);
      sgd.step(ptrs, g);
      update_running_stats(t, r, net, 0.9);
      for (std::size_t i = 0; i < r.params.size(); ++i) t.set_leaf(r.params[i], std::move(values[i]));
      load_all(t, r, net);
    }
    const double train_loss = batches ? loss_sum / batches : 0.0;
    out.push_back({epoch, train_loss, accuracy(net, data.val_x, data.val_y, cfg.batch)});
  }
  return out;
}

CommandResult cmd_train_toy(const RunConfig& cfg) {
  CommandResult res;
  res.csv.header = {"epoch", "model", "train_loss", "val_acc"};
  if (cfg.epochs == 0) return res;
  set_num_threads(cfg.threads);
  const auto data = ToyDataset::generate(cfg.seed, cfg.classes, cfg.train_samples, cfg.val_samples);
  for (ToyModel m : {ToyModel::ConvOnly, ToyModel::PssaOnly, ToyModel::Xvolution}) {
    const auto stats = train_toy_model(m, data, cfg);
    for (const auto& s : stats) {
      res.csv.add({std::to_string(s.epoch), to_string(m), fmt_num(s.train_loss), fmt_num(s.val_acc)});
      if (!std::isfinite(s.train_loss)) {
        res.exit_code = 1;
        res.log.push_back(std::string("train-toy ") + to_string(m) + " diverged at epoch " + std::to_string(s.epoch));
      } else {
        res.log.push_back(std::string("train-toy ") + to_string(m) + " epoch " + std::to_string(s.epoch) +
                          " loss=" + fmt_num(s.train_loss) + " val_acc=" + fmt_num(s.val_acc));
      }
    }
  }
  return res;
}

}  // namespace xvol::harness
