#include "xvol/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace xvol::ad {

const char* op_name(OpId op) {
  switch (op) {
    case OpId::Conv2d: return "conv2d";
    case OpId::BatchNormInfer: return "batchnorm_infer";
    case OpId::BatchNormTrain: return "batchnorm_train";
    case OpId::Shift: return "shift2d";
    case OpId::Hadamard: return "hadamard";
    case OpId::Add: return "add";
    case OpId::Scale: return "scale";
    case OpId::ChannelSum: return "channel_sum";
    case OpId::BroadcastMul: return "broadcast_mul";
    case OpId::Concat: return "concat";
    case OpId::OffsetSum: return "offset_sum";
    case OpId::Relu: return "relu";
    case OpId::SelfAttention: return "self_attention";
    case OpId::GlobalAvgPool: return "global_avg_pool";
    case OpId::SoftmaxCrossEntropy: return "softmax_cross_entropy";
    case OpId::SumAll: return "sum_all";
    case OpId::Count_: break;
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Gradients
// ---------------------------------------------------------------------------

const Tensor4& Gradients::operator[](Var v) const {
  if (!has(v)) throw DomainError("Gradients: no gradient recorded for var " + std::to_string(v.id));
  return *grads_[v.id];
}

void Gradients::accumulate(Var v, const Tensor4& g) {
  auto& slot = grads_.at(v.id);
  if (!slot) {
    slot = g;
  } else {
    require_same_dims(*slot, g, "Gradients::accumulate");
    auto dst = slot->data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

const Tape::Node& Tape::node(Var v) const {
  if (v.id >= nodes_.size()) throw DomainError("Tape: unknown var " + std::to_string(v.id));
  return nodes_[v.id];
}

Var Tape::leaf(Tensor4 value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Tensor4 Tape::run_forward(const Node& n, std::vector<Tensor4>& saved) const {
  const auto& rule = registry_->rule(*n.op);
  if (!rule.forward) throw std::logic_error(std::string("Tape: no forward registered for ") + op_name(*n.op));
  std::vector<const Tensor4*> in;
  in.reserve(n.inputs.size());
  for (Var v : n.inputs) in.push_back(&node(v).value);
  saved.clear();
  return rule.forward(ForwardArgs{in, n.attrs, saved});
}

Var Tape::apply(OpId op, std::vector<Var> inputs, Attrs attrs) {
  Node n;
  n.op = op;
  n.inputs = std::move(inputs);
  n.attrs = std::move(attrs);
  for (Var v : n.inputs) n.requires_grad = n.requires_grad || node(v).requires_grad;
  n.value = run_forward(n, n.saved);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

void Tape::set_leaf(Var v, Tensor4 value) {
  auto& n = nodes_.at(v.id);
  if (n.op) throw DomainError("Tape::set_leaf: var is not a leaf");
  require_same_dims(n.value, value, "Tape::set_leaf");
  n.value = std::move(value);
}

void Tape::replay() {
  for (auto& n : nodes_) {
    if (!n.op) continue;
    n.value = run_forward(n, n.saved);
  }
}

Gradients Tape::backward(Var output, const Tensor4& out_grad) const {
  require_same_dims(node(output).value, out_grad, "Tape::backward");
  Gradients grads(nodes_.size());
  grads.accumulate(output, out_grad);
  for (std::size_t i = output.id + 1; i-- > 0;) {
    const Var v{static_cast<std::uint32_t>(i)};
    const Node& n = nodes_[i];
    if (!n.op || !n.requires_grad || !grads.has(v)) continue;
    const auto& rule = registry_->rule(*n.op);
    if (!rule.backward)
      throw std::logic_error(std::string("Tape: no backward registered for op '") + op_name(*n.op) + "'");
    std::vector<const Tensor4*> in;
    for (Var u : n.inputs) in.push_back(&node(u).value);
    auto gin = rule.backward(BackwardArgs{in, n.value, grads[v], n.attrs, n.saved});
    for (std::size_t k = 0; k < n.inputs.size(); ++k)
      if (node(n.inputs[k]).requires_grad) grads.accumulate(n.inputs[k], gin.at(k));
  }
  return grads;
}

Gradients Tape::backward(Var scalar_output) const {
  const auto& out = node(scalar_output).value;
  if (out.size() != 1) throw DomainError("Tape::backward: output is not a scalar");
  return backward(scalar_output, Tensor4(out.dims(), 1.0f));
}

// ---------------------------------------------------------------------------
// Graph-building helpers
// ---------------------------------------------------------------------------

Var conv2d(Tape& t, Var x, Var weight, std::optional<Var> bias, ConvAttrs attrs) {
  std::vector<Var> in{x, weight};
  if (bias) in.push_back(*bias);
  return t.apply(OpId::Conv2d, std::move(in), attrs);
}

Var batchnorm_infer(Tape& t, Var x, Var gamma, Var beta, std::vector<float> mean, std::vector<float> var,
                    float eps) {
  return t.apply(OpId::BatchNormInfer, {x, gamma, beta}, BnInferAttrs{std::move(mean), std::move(var), eps});
}

Var batchnorm_train(Tape& t, Var x, Var gamma, Var beta, float eps) {
  return t.apply(OpId::BatchNormTrain, {x, gamma, beta}, BnTrainAttrs{eps});
}

Var shift2d(Tape& t, Var x, ShiftOffset off) { return t.apply(OpId::Shift, {x}, ShiftAttrs{off}); }
Var hadamard(Tape& t, Var a, Var b) { return t.apply(OpId::Hadamard, {a, b}); }
Var add(Tape& t, Var a, Var b) { return t.apply(OpId::Add, {a, b}); }
Var scale(Tape& t, Var a, double factor) { return t.apply(OpId::Scale, {a}, ScaleAttrs{factor}); }
Var channel_sum(Tape& t, Var x) { return t.apply(OpId::ChannelSum, {x}); }
Var broadcast_mul(Tape& t, Var s, Var v) { return t.apply(OpId::BroadcastMul, {s, v}); }
Var concat_channels(Tape& t, std::vector<Var> parts) { return t.apply(OpId::Concat, std::move(parts)); }
Var offset_sum(Tape& t, Var x, int group) { return t.apply(OpId::OffsetSum, {x}, GroupAttrs{group}); }
Var relu(Tape& t, Var x) { return t.apply(OpId::Relu, {x}); }
Var self_attention(Tape& t, Var x, Var wq, Var wk, Var wv, AttentionOptions opts) {
  return t.apply(OpId::SelfAttention, {x, wq, wk, wv}, AttentionAttrs{opts});
}
Var global_avg_pool(Tape& t, Var x) { return t.apply(OpId::GlobalAvgPool, {x}); }
Var softmax_cross_entropy(Tape& t, Var logits, std::vector<int> labels) {
  return t.apply(OpId::SoftmaxCrossEntropy, {logits}, LabelAttrs{std::move(labels)});
}
Var sum_all(Tape& t, Var x) { return t.apply(OpId::SumAll, {x}); }

Tensor4 as_channel_tensor(const std::vector<float>& v) {
  return Tensor4(Dims{1, static_cast<int>(v.size()), 1, 1}, v);
}

std::vector<float> to_vector(const Tensor4& t) { return {t.data().begin(), t.data().end()}; }

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

FiniteDiffResult finite_diff(const std::function<double(std::span<const float>)>& f, std::span<const float> theta,
                             double eps, std::size_t max_coords, std::uint64_t seed) {
  if (!(eps > 0.0)) throw DomainError("finite_diff: eps must be positive");
  FiniteDiffResult r;
  r.coords.resize(theta.size());
  std::iota(r.coords.begin(), r.coords.end(), std::size_t{0});
  if (max_coords > 0 && theta.size() > max_coords) {
    std::mt19937_64 rng(seed);
    std::shuffle(r.coords.begin(), r.coords.end(), rng);
    r.coords.resize(max_coords);
    std::sort(r.coords.begin(), r.coords.end());
  }
  std::vector<float> probe(theta.begin(), theta.end());
  r.grad.reserve(r.coords.size());
  for (std::size_t i : r.coords) {
    const float base = theta[i];
    const float up = static_cast<float>(base + eps);
    const float down = static_cast<float>(base - eps);
    probe[i] = up;
    const double f_up = f(probe);
    probe[i] = down;
    const double f_down = f(probe);
    probe[i] = base;
    // The representable step differs slightly from 2 * eps.
    const double step = static_cast<double>(up) - static_cast<double>(down);
    r.grad.push_back((f_up - f_down) / step);
  }
  return r;
}

double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) throw DomainError("relative_error: length mismatch");
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double den = std::sqrt(std::max(na, nn));
  return den == 0.0 ? 0.0 : std::sqrt(diff) / den;
}

std::vector<GradCheckResult> check_gradients(Tape& tape, Var loss, std::span<const Var> params, double eps,
                                             std::size_t max_coords, std::uint64_t seed) {
  const auto grads = tape.backward(loss);
  std::vector<GradCheckResult> out;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const Var p = params[pi];
    const Tensor4 original = tape.value(p);
    const auto f = [&](std::span<const float> theta) {
      tape.set_leaf(p, Tensor4(original.dims(), theta));
      tape.replay();
      return sum(tape.value(loss));
    };
    const auto fd = finite_diff(f, original.data(), eps, max_coords, seed + pi);
    tape.set_leaf(p, original);
    tape.replay();
    std::vector<double> analytic;
    analytic.reserve(fd.coords.size());
    const bool has = grads.has(p);
    for (std::size_t i : fd.coords) analytic.push_back(has ? static_cast<double>(grads[p][i]) : 0.0);
    out.push_back({relative_error(analytic, fd.grad), fd.coords.size()});
  }
  return out;
}

// ---------------------------------------------------------------------------
// SGD
// ---------------------------------------------------------------------------

void sgd_step(std::span<Tensor4* const> params, std::span<const Tensor4> grads, std::span<Tensor4> velocity,
              const SgdOptions& opts) {
  if (params.size() != grads.size() || params.size() != velocity.size())
    throw DomainError("sgd_step: parameter, gradient and velocity counts differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_dims(*params[i], grads[i], "sgd_step");
    require_same_dims(*params[i], velocity[i], "sgd_step");
    auto p = params[i]->data();
    auto g = grads[i].data();
    auto v = velocity[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double vel = opts.momentum * v[k] + (static_cast<double>(g[k]) + opts.weight_decay * p[k]);
      v[k] = static_cast<float>(vel);
      p[k] = static_cast<float>(p[k] - opts.lr * vel);
    }
  }
}

void Sgd::step(std::span<Tensor4* const> params, std::span<const Tensor4> grads) {
  if (velocity_.empty())
    for (const Tensor4* p : params) velocity_.emplace_back(p->dims());
  sgd_step(params, grads, velocity_, opts_);
}

}  // namespace xvol::ad
