#pragma once

#include <optional>
#include <vector>

#include "xvol/autodiff.hpp"
#include "xvol/pssa.hpp"
#include "xvol/xvolution.hpp"

// Differentiable versions of the PSSA and X-volution forwards, built from the
// primitive ops recorded on a Tape.
namespace xvol::ad {

enum class BnMode {
  Inference,  // running statistics
  Batch,      // statistics of the current batch
};

struct ConvVars {
  Var weight;
  std::optional<Var> bias;
  ConvAttrs attrs;
};

struct BnVars {
  Var gamma;
  Var beta;
  std::vector<float> mean;
  std::vector<float> var;
  float eps = 1e-5f;
};

struct PssaVars {
  Var wq;
  Var wk;
  Var wv;
  std::optional<ConvVars> mix;  // absent for MixMode::Identity
  BnVars bn;
};

struct XvolutionVars {
  ConvVars conv3;
  ConvVars conv5d;
  BnVars conv_bn;
  PssaVars pssa;
};

ConvVars record(Tape& t, const ConvKernel& k);
BnVars record(Tape& t, const BatchNormParams& bn);
PssaVars record(Tape& t, const PssaParams& p, const PssaConfig& cfg);
XvolutionVars record(Tape& t, const XvolutionTrainParams& p);

std::vector<Var> parameters(const ConvVars& v);
std::vector<Var> parameters(const BnVars& v);
std::vector<Var> parameters(const PssaVars& v);
std::vector<Var> parameters(const XvolutionVars& v);

Var conv(Tape& t, Var x, const ConvVars& k);
Var batchnorm(Tape& t, Var x, const BnVars& bn, BnMode mode);
Var embed(Tape& t, Var x, Var weight);

Var pssa_value_features(Tape& t, Var x, const PssaVars& p, const PssaConfig& cfg);
Var pssa_forward(Tape& t, Var x, const PssaVars& p, const PssaConfig& cfg, BnMode mode);
Var xvolution_train_forward(Tape& t, Var x, const XvolutionVars& p, const PssaConfig& cfg, BnMode mode);

}  // namespace xvol::ad
