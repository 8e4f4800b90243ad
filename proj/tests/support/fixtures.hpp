#pragma once

// Random instances and measurements shared by unit tests and the acceptance binary.

#include <algorithm>
#include <cstdlib>
#include <vector>

#include "xvol/pssa.hpp"
#include "xvol/random.hpp"
#include "xvol/xvolution.hpp"

namespace fixture {

using namespace xvol;

inline PssaParams random_pssa(Rng& rng, int c_in, int c_out, int c_emb, const PssaConfig& cfg = {}) {
  return random_xvolution(c_in, cfg.mix == MixMode::Identity ? c_emb : c_out, c_emb, rng, cfg).pssa;
}

/// Sets the PSSA BN running statistics to the per-channel mean and variance of
/// the pre-BN features on x, as a trained layer would have them. Keeps outputs
/// O(1) so float32 rounding does not swamp the comparison.
inline void calibrate_bn(PssaParams& p, const PssaConfig& cfg, const Tensor4& x) {
  const Tensor4 f = pssa_mix(value_features(x, p, cfg), p, cfg);
  const double count = static_cast<double>(f.n()) * f.h() * f.w();
  for (int c = 0; c < f.c(); ++c) {
    double s = 0.0, s2 = 0.0;
    for (int n = 0; n < f.n(); ++n)
      for (int i = 0; i < f.h(); ++i)
        for (int j = 0; j < f.w(); ++j) {
          const double v = f(n, c, i, j);
          s += v;
          s2 += v * v;
        }
    const double mean = s / count;
    p.bn.mean[c] = static_cast<float>(mean);
    p.bn.var[c] = static_cast<float>(std::max(s2 / count - mean * mean, 1e-3));
  }
}

/// Chebyshev radius, around (cy, cx), of the positions where a and b differ.
/// -1 when they are identical.
inline int support_radius(const Tensor4& a, const Tensor4& b, int cy, int cx) {
  int r = -1;
  for (int n = 0; n < a.n(); ++n)
    for (int c = 0; c < a.c(); ++c)
      for (int i = 0; i < a.h(); ++i)
        for (int j = 0; j < a.w(); ++j)
          if (a(n, c, i, j) != b(n, c, i, j)) r = std::max(r, std::max(std::abs(i - cy), std::abs(j - cx)));
  return r;
}

/// Impulse response support of a depth-d PSSA stack on a size x size image.
/// A constant background keeps the query side nonzero everywhere, so the
/// response is measured as the difference against the background alone.
inline int impulse_radius(int depth, int size, std::uint64_t seed, const PssaConfig& base = {}) {
  Rng rng(seed);
  PssaConfig cfg = base;
  cfg.stack_depth = depth;
  std::vector<PssaParams> layers;
  for (int d = 0; d < depth; ++d) layers.push_back(random_pssa(rng, 2, 2, 2, cfg));
  Tensor4 bg(Dims{1, 2, size, size}, 0.5f);
  for (int i = 0; i < size * size; ++i) bg.plane(0, 1)[i] = -0.25f;
  Tensor4 imp = bg;
  const int c = size / 2;
  imp(0, 0, c, c) += 1.0f;
  imp(0, 1, c, c) -= 0.75f;
  return support_radius(pssa_stack(imp, layers, cfg), pssa_stack(bg, layers, cfg), c, c);
}

}  // namespace fixture
