#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "xvol/nn_ops.hpp"
#include "xvol/tensor.hpp"

namespace xvol::ad {

enum class OpId : std::uint8_t {
  Conv2d,          // x, weight[, bias]
  BatchNormInfer,  // x, gamma, beta   (running statistics in attrs)
  BatchNormTrain,  // x, gamma, beta   (batch statistics)
  Shift,           // x
  Hadamard,        // a, b
  Add,             // a, b
  Scale,           // a
  ChannelSum,      // x -> (n, 1, h, w)
  BroadcastMul,    // s (n, 1, h, w), v (n, c, h, w)
  Concat,          // parts...  (channel axis)
  OffsetSum,       // x -> per-group sum over channel blocks
  Relu,            // x
  SelfAttention,   // x, wq, wk, wv
  GlobalAvgPool,   // x -> (n, c, 1, 1)
  SoftmaxCrossEntropy,  // logits (n, k, 1, 1) -> mean loss (1, 1, 1, 1)
  SumAll,          // x -> (1, 1, 1, 1)
  Count_,
};

const char* op_name(OpId op);

struct ConvAttrs {
  int stride = 1;
  int dilation = 1;
  int padding = 0;
};
struct BnInferAttrs {
  std::vector<float> mean;
  std::vector<float> var;
  float eps = 1e-5f;
};
struct BnTrainAttrs {
  float eps = 1e-5f;
};
struct ShiftAttrs {
  ShiftOffset offset;
};
struct ScaleAttrs {
  double factor = 1.0;
};
struct GroupAttrs {
  int group = 1;
};
struct AttentionAttrs {
  AttentionOptions options;
};
struct LabelAttrs {
  std::vector<int> labels;
};

using Attrs = std::variant<std::monostate, ConvAttrs, BnInferAttrs, BnTrainAttrs, ShiftAttrs, ScaleAttrs,
                           GroupAttrs, AttentionAttrs, LabelAttrs>;

/// Handle to a value recorded on a Tape.
struct Var {
  std::uint32_t id = 0;
  friend bool operator==(Var, Var) = default;
};

struct ForwardArgs {
  std::span<const Tensor4* const> inputs;
  const Attrs& attrs;
  std::vector<Tensor4>& saved;
};

struct BackwardArgs {
  std::span<const Tensor4* const> inputs;
  const Tensor4& output;
  const Tensor4& out_grad;
  const Attrs& attrs;
  const std::vector<Tensor4>& saved;
};

struct OpRule {
  Tensor4 (*forward)(const ForwardArgs&) = nullptr;
  /// One gradient per input, in input order.
  std::vector<Tensor4> (*backward)(const BackwardArgs&) = nullptr;
};

/// Maps every OpId to its forward and backward implementation.
class OpRegistry {
 public:
  /// Registry holding every built-in rule.
  static const OpRegistry& standard();

  void set(OpId op, OpRule rule) { rules_[static_cast<std::size_t>(op)] = rule; }
  void clear_backward(OpId op) { rules_[static_cast<std::size_t>(op)].backward = nullptr; }
  const OpRule& rule(OpId op) const { return rules_[static_cast<std::size_t>(op)]; }

 private:
  std::array<OpRule, static_cast<std::size_t>(OpId::Count_)> rules_{};
};

/// Reverse-mode gradients keyed by Var; absent for values that do not
/// depend on any leaf with requires_grad.
class Gradients {
 public:
  explicit Gradients(std::size_t n) : grads_(n) {}
  bool has(Var v) const { return v.id < grads_.size() && grads_[v.id].has_value(); }
  const Tensor4& operator[](Var v) const;
  void accumulate(Var v, const Tensor4& g);

 private:
  std::vector<std::optional<Tensor4>> grads_;
};

/// Ordered record of primitive applications. Values are computed eagerly when
/// an op is applied; backward() walks the record in reverse.
class Tape {
 public:
  explicit Tape(const OpRegistry& registry = OpRegistry::standard()) : registry_(&registry) {}

  Var leaf(Tensor4 value, bool requires_grad = true);
  Var apply(OpId op, std::vector<Var> inputs, Attrs attrs = {});

  const Tensor4& value(Var v) const { return node(v).value; }
  const std::vector<Tensor4>& saved(Var v) const { return node(v).saved; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  /// Op that produced v; empty for leaves.
  std::optional<OpId> op(Var v) const { return node(v).op; }
  const std::vector<Var>& inputs(Var v) const { return node(v).inputs; }
  std::size_t size() const { return nodes_.size(); }

  /// Replaces a leaf's value. Call replay() to refresh dependent values.
  void set_leaf(Var v, Tensor4 value);
  /// Recomputes every non-leaf node from the current leaf values.
  void replay();

  /// Reverse accumulation from `output` seeded with out_grad. Throws if an op
  /// on the path has no registered backward.
  Gradients backward(Var output, const Tensor4& out_grad) const;
  /// Convenience for scalar outputs: seeds with 1.
  Gradients backward(Var scalar_output) const;

 private:
  struct Node {
    std::optional<OpId> op;  // empty for leaves
    std::vector<Var> inputs;
    Attrs attrs;
    Tensor4 value;
    std::vector<Tensor4> saved;
    bool requires_grad = false;
  };

  const Node& node(Var v) const;
  Tensor4 run_forward(const Node& n, std::vector<Tensor4>& saved) const;

  const OpRegistry* registry_;
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Graph-building helpers
// ---------------------------------------------------------------------------

Var conv2d(Tape& t, Var x, Var weight, std::optional<Var> bias, ConvAttrs attrs);
Var batchnorm_infer(Tape& t, Var x, Var gamma, Var beta, std::vector<float> mean, std::vector<float> var,
                    float eps);
/// Batch-statistics BN. saved(result) holds {xhat, mean, var (biased), inv_std}.
Var batchnorm_train(Tape& t, Var x, Var gamma, Var beta, float eps);
Var shift2d(Tape& t, Var x, ShiftOffset off);
Var hadamard(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double factor);
Var channel_sum(Tape& t, Var x);
Var broadcast_mul(Tape& t, Var s, Var v);
Var concat_channels(Tape& t, std::vector<Var> parts);
Var offset_sum(Tape& t, Var x, int group);
Var relu(Tape& t, Var x);
Var self_attention(Tape& t, Var x, Var wq, Var wk, Var wv, AttentionOptions opts = {});
Var global_avg_pool(Tape& t, Var x);
Var softmax_cross_entropy(Tape& t, Var logits, std::vector<int> labels);
Var sum_all(Tape& t, Var x);

/// Vector <-> (1, c, 1, 1) tensor helpers for biases and BN affine terms.
Tensor4 as_channel_tensor(const std::vector<float>& v);
std::vector<float> to_vector(const Tensor4& t);

// ---------------------------------------------------------------------------
// Finite differences and gradient checking
// ---------------------------------------------------------------------------

struct FiniteDiffResult {
  std::vector<std::size_t> coords;  // coordinates that were probed
  std::vector<double> grad;         // central difference per probed coordinate
};

/// Central differences (f(t + eps e_i) - f(t - eps e_i)) / (actual step) for
/// every coordinate, or for max_coords seeded random coordinates when theta is
/// larger than that.
FiniteDiffResult finite_diff(const std::function<double(std::span<const float>)>& f, std::span<const float> theta,
                             double eps = 1e-3, std::size_t max_coords = 200, std::uint64_t seed = 0);

/// ||a - b|| / max(||a||, ||b||); 0 when both vanish.
double relative_error(std::span<const double> analytic, std::span<const double> numeric);

struct GradCheckResult {
  double rel_error = 0.0;
  std::size_t coords = 0;
};

/// Compares reverse-mode gradients of scalar `loss` with respect to each leaf
/// in `params` against central differences computed by replaying the tape.
/// Leaves are restored afterwards.
std::vector<GradCheckResult> check_gradients(Tape& tape, Var loss, std::span<const Var> params,
                                             double eps = 1e-3, std::size_t max_coords = 200,
                                             std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// SGD
// ---------------------------------------------------------------------------

struct SgdOptions {
  double lr = 0.1;
  double momentum = 0.0;
  double weight_decay = 0.0;
};

/// Classic momentum update, in place:
///   v <- momentum * v + (g + weight_decay * p);  p <- p - lr * v
void sgd_step(std::span<Tensor4* const> params, std::span<const Tensor4> grads, std::span<Tensor4> velocity,
              const SgdOptions& opts);

/// Owns the momentum buffers for a fixed parameter list.
class Sgd {
 public:
  explicit Sgd(SgdOptions opts) : opts_(opts) {}
  void step(std::span<Tensor4* const> params, std::span<const Tensor4> grads);
  const SgdOptions& options() const { return opts_; }

 private:
  SgdOptions opts_;
  std::vector<Tensor4> velocity_;
};

}  // namespace xvol::ad
