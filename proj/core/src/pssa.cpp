#include "xvol/pssa.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "xvol/parallel.hpp"

namespace xvol {

const char* to_string(ProductMode m) { return m == ProductMode::Elementwise ? "elementwise" : "reduce"; }
const char* to_string(MixMode m) { return m == MixMode::Learned ? "learned" : "identity"; }

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

std::vector<ShiftOffset> PssaConfig::offsets() const {
  // clockwise from north; (dy, dx) unit steps
  static constexpr ShiftOffset kEight[8] = {{-1, 0}, {-1, 1}, {0, 1}, {1, 1}, {1, 0}, {1, -1}, {0, -1}, {-1, -1}};
  static constexpr ShiftOffset kFour[4] = {{-1, 0}, {0, 1}, {1, 0}, {0, -1}};
  std::span<const ShiftOffset> dirs = directions == 4 ? std::span<const ShiftOffset>(kFour)
                                                      : std::span<const ShiftOffset>(kEight);
  auto lengths = shift_lengths;
  std::sort(lengths.begin(), lengths.end());
  std::vector<ShiftOffset> out;
  out.reserve(lengths.size() * dirs.size() + 1);
  for (int L : lengths)
    for (const auto& d : dirs) out.push_back({d.dy * L, d.dx * L});
  if (include_identity) out.push_back({0, 0});
  return out;
}

int PssaConfig::num_offsets() const {
  return static_cast<int>(shift_lengths.size()) * directions + (include_identity ? 1 : 0);
}

int PssaConfig::max_shift() const {
  return shift_lengths.empty() ? 0 : *std::max_element(shift_lengths.begin(), shift_lengths.end());
}

void PssaConfig::validate() const {
  if (directions != 8 && directions != 4) throw DomainError("PssaConfig: directions must be 8 or 4");
  auto sorted = shift_lengths;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (sorted[i] <= 0) throw DomainError("PssaConfig: shift lengths must be positive");
    if (i > 0 && sorted[i] == sorted[i - 1]) throw DomainError("PssaConfig: shift lengths must be distinct");
  }
  if (num_offsets() == 0) throw DomainError("PssaConfig: empty offset set");
  if (stack_depth < 1) throw DomainError("PssaConfig: stack depth must be >= 1");
}

namespace {

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw DomainError("expected a boolean, got '" + s + "'");
}

int parse_int(const std::string& s) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw DomainError("expected an integer, got '" + s + "'");
  return v;
}

}  // namespace

PssaConfig PssaConfig::from_kv(const std::map<std::string, std::string>& kv) {
  PssaConfig cfg;
  if (auto it = kv.find("pssa.lengths"); it != kv.end()) {
    cfg.shift_lengths.clear();
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) cfg.shift_lengths.push_back(parse_int(item));
  }
  if (auto it = kv.find("pssa.directions"); it != kv.end()) cfg.directions = parse_int(it->second);
  if (auto it = kv.find("pssa.identity"); it != kv.end()) cfg.include_identity = parse_bool(it->second);
  if (auto it = kv.find("pssa.depth"); it != kv.end()) cfg.stack_depth = parse_int(it->second);
  if (auto it = kv.find("pssa.product"); it != kv.end()) {
    if (it->second == "elementwise") cfg.product = ProductMode::Elementwise;
    else if (it->second == "reduce") cfg.product = ProductMode::Reduce;
    else throw DomainError("pssa.product must be elementwise or reduce");
  }
  if (auto it = kv.find("pssa.mix"); it != kv.end()) {
    if (it->second == "learned") cfg.mix = MixMode::Learned;
    else if (it->second == "identity") cfg.mix = MixMode::Identity;
    else throw DomainError("pssa.mix must be learned or identity");
  }
  cfg.validate();
  return cfg;
}

std::map<std::string, std::string> PssaConfig::to_kv() const {
  std::string lengths;
  for (std::size_t i = 0; i < shift_lengths.size(); ++i)
    lengths += (i ? "," : "") + std::to_string(shift_lengths[i]);
  return {{"pssa.lengths", lengths},
          {"pssa.directions", std::to_string(directions)},
          {"pssa.identity", include_identity ? "true" : "false"},
          {"pssa.depth", std::to_string(stack_depth)},
          {"pssa.product", to_string(product)},
          {"pssa.mix", to_string(mix)}};
}

void PssaParams::validate(const PssaConfig& cfg) const {
  cfg.validate();
  attn.validate();
  if (attn.wv.n() != attn.c_emb()) throw DomainError("PssaParams: value embedding must have c_emb rows");
  int c_out = c_emb();
  if (cfg.mix == MixMode::Learned) {
    mix.validate();
    if (mix.k() != 1 || !mix.is_same()) throw DomainError("PssaParams: mix must be a stride-1 1x1 kernel");
    if (mix.c_in() != cfg.num_offsets() * c_emb())
      throw DomainError("PssaParams: mix expects " + std::to_string(mix.c_in()) + " inputs, but " +
                        std::to_string(cfg.num_offsets()) + " offsets x " + std::to_string(c_emb()) +
                        " embedding channels are produced");
    c_out = mix.c_out();
  }
  bn.validate();
  if (bn.channels() != c_out) throw DomainError("PssaParams: BN channels != PSSA output channels");
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

namespace {

void check_extent(const Tensor4& x, const PssaConfig& cfg) {
  const int m = cfg.max_shift();
  if (m >= x.h() || m >= x.w())
    throw DomainError("PSSA: shift length " + std::to_string(m) + " exceeds spatial extent " +
                      std::to_string(x.h()) + "x" + std::to_string(x.w()));
}

/// Calls fn(dst_index, src_index) for every in-bounds (p, p - d) pair of one plane.
template <class Fn>
void for_each_shifted(int h, int w, ShiftOffset d, Fn&& fn) {
  const int y0 = std::max(0, d.dy), y1 = std::min(h, h + d.dy);
  const int x0 = std::max(0, d.dx), x1 = std::min(w, w + d.dx);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x)
      fn(static_cast<std::size_t>(y) * w + x, static_cast<std::size_t>(y - d.dy) * w + (x - d.dx));
}

}  // namespace

Tensor4 transformed_features(const Tensor4& x, const PssaParams& params, const PssaConfig& cfg) {
  cfg.validate();
  params.attn.validate();
  check_extent(x, cfg);
  const Tensor4 q = embed_1x1(x, params.attn.wq);
  const Tensor4 k = embed_1x1(x, params.attn.wk);
  const auto offsets = cfg.offsets();
  const int c_emb = params.c_emb();
  const bool reduce = cfg.product == ProductMode::Reduce;
  const int per_off = reduce ? 1 : c_emb;
  Tensor4 out(Dims{x.n(), static_cast<int>(offsets.size()) * per_off, x.h(), x.w()});
  const std::size_t plane = x.dims().plane();
  parallel_for(offsets.size(), [&](std::size_t di) {
    const auto d = offsets[di];
    std::vector<double> acc(reduce ? plane : 0);
    for (int n = 0; n < x.n(); ++n) {
      if (reduce) std::fill(acc.begin(), acc.end(), 0.0);
      for (int e = 0; e < c_emb; ++e) {
        const float* qp = q.plane(n, e);
        const float* kp = k.plane(n, e);
        if (reduce) {
          for_each_shifted(x.h(), x.w(), d, [&](std::size_t i, std::size_t j) { acc[i] += qp[i] * kp[j]; });
        } else {
          float* dst = out.plane(n, static_cast<int>(di) * c_emb + e);
          for_each_shifted(x.h(), x.w(), d, [&](std::size_t i, std::size_t j) { dst[i] = qp[i] * kp[j]; });
        }
      }
      if (reduce) {
        float* dst = out.plane(n, static_cast<int>(di));
        for (std::size_t i = 0; i < plane; ++i) dst[i] = static_cast<float>(acc[i]);
      }
    }
  });
  return out;
}

Tensor4 value_features(const Tensor4& x, const PssaParams& params, const PssaConfig& cfg) {
  cfg.validate();
  params.attn.validate();
  check_extent(x, cfg);
  const Tensor4 q = embed_1x1(x, params.attn.wq);
  const Tensor4 k = embed_1x1(x, params.attn.wk);
  const Tensor4 v = embed_1x1(x, params.attn.wv);
  const auto offsets = cfg.offsets();
  const int c_emb = params.c_emb();
  const std::size_t plane = x.dims().plane();
  Tensor4 out(Dims{x.n(), static_cast<int>(offsets.size()) * c_emb, x.h(), x.w()});

  if (cfg.product == ProductMode::Elementwise) {
    const Tensor4 kv = hadamard(k, v);
    parallel_for(offsets.size(), [&](std::size_t di) {
      for (int n = 0; n < x.n(); ++n)
        for (int e = 0; e < c_emb; ++e) {
          const float* qp = q.plane(n, e);
          const float* kvp = kv.plane(n, e);
          float* dst = out.plane(n, static_cast<int>(di) * c_emb + e);
          for_each_shifted(x.h(), x.w(), offsets[di],
                           [&](std::size_t i, std::size_t j) { dst[i] = qp[i] * kvp[j]; });
        }
    });
    return out;
  }

  parallel_for(offsets.size(), [&](std::size_t di) {
    const auto d = offsets[di];
    std::vector<double> acc(plane);
    std::vector<float> sim(plane);
    for (int n = 0; n < x.n(); ++n) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int e = 0; e < c_emb; ++e) {
        const float* qp = q.plane(n, e);
        const float* kp = k.plane(n, e);
        for_each_shifted(x.h(), x.w(), d, [&](std::size_t i, std::size_t j) { acc[i] += qp[i] * kp[j]; });
      }
      for (std::size_t i = 0; i < plane; ++i) sim[i] = static_cast<float>(acc[i]);
      for (int e = 0; e < c_emb; ++e) {
        const float* vp = v.plane(n, e);
        float* dst = out.plane(n, static_cast<int>(di) * c_emb + e);
        for_each_shifted(x.h(), x.w(), d, [&](std::size_t i, std::size_t j) { dst[i] = sim[i] * vp[j]; });
      }
    }
  });
  return out;
}

Tensor4 pssa_mix(const Tensor4& features, const PssaParams& params, const PssaConfig& cfg) {
  if (cfg.mix == MixMode::Learned) return conv2d(features, params.mix);
  const int c_emb = params.c_emb();
  if (features.c() % c_emb != 0) throw DomainError("pssa_mix: feature channels not a multiple of c_emb");
  const int n_off = features.c() / c_emb;
  const std::size_t plane = features.dims().plane();
  Tensor4 out(Dims{features.n(), c_emb, features.h(), features.w()});
  std::vector<double> acc(plane);
  for (int n = 0; n < features.n(); ++n)
    for (int e = 0; e < c_emb; ++e) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int d = 0; d < n_off; ++d) {
        const float* src = features.plane(n, d * c_emb + e);
        for (std::size_t i = 0; i < plane; ++i) acc[i] += src[i];
      }
      float* dst = out.plane(n, e);
      for (std::size_t i = 0; i < plane; ++i) dst[i] = static_cast<float>(acc[i]);
    }
  return out;
}

Tensor4 pssa_forward(const Tensor4& x, const PssaParams& params, const PssaConfig& cfg) {
  params.validate(cfg);
  if (x.c() != params.c_in())
    throw DomainError("pssa_forward: input has " + std::to_string(x.c()) + " channels, params expect " +
                      std::to_string(params.c_in()));
  check_extent(x, cfg);

  // Streams one feature plane at a time into the mix accumulators instead of
  // materialising all offsets; the summation order matches pssa_mix exactly.
  const Tensor4 q = embed_1x1(x, params.attn.wq);
  const Tensor4 k = embed_1x1(x, params.attn.wk);
  const Tensor4 v = embed_1x1(x, params.attn.wv);
  const bool elementwise = cfg.product == ProductMode::Elementwise;
  const Tensor4 kv = elementwise ? hadamard(k, v) : Tensor4();
  const auto offsets = cfg.offsets();
  const int c_emb = params.c_emb();
  const bool learned = cfg.mix == MixMode::Learned;
  const int c_out = params.c_out(cfg);
  const std::size_t plane = x.dims().plane();
  Tensor4 mixed(Dims{x.n(), c_out, x.h(), x.w()});

  parallel_for(static_cast<std::size_t>(x.n()), [&](std::size_t job) {
    const int n = static_cast<int>(job);
    std::vector<double> acc(static_cast<std::size_t>(c_out) * plane);
    for (int o = 0; o < c_out; ++o)
      std::fill_n(acc.begin() + static_cast<std::ptrdiff_t>(o * plane), plane,
                  learned ? static_cast<double>(params.mix.bias[o]) : 0.0);
    std::vector<float> feat(plane);
    std::vector<double> sim_acc(elementwise ? 0 : plane);
    std::vector<float> sim(elementwise ? 0 : plane);
    for (std::size_t di = 0; di < offsets.size(); ++di) {
      const auto d = offsets[di];
      if (!elementwise) {
        std::fill(sim_acc.begin(), sim_acc.end(), 0.0);
        for (int e = 0; e < c_emb; ++e) {
          const float* qp = q.plane(n, e);
          const float* kp = k.plane(n, e);
          for_each_shifted(x.h(), x.w(), d, [&](std::size_t i, std::size_t j) { sim_acc[i] += qp[i] * kp[j]; });
        }
        for (std::size_t i = 0; i < plane; ++i) sim[i] = static_cast<float>(sim_acc[i]);
      }
      for (int e = 0; e < c_emb; ++e) {
        std::fill(feat.begin(), feat.end(), 0.0f);
        if (elementwise) {
          const float* qp = q.plane(n, e);
          const float* kvp = kv.plane(n, e);
          for_each_shifted(x.h(), x.w(), d, [&](std::size_t i, std::size_t j) { feat[i] = qp[i] * kvp[j]; });
        } else {
          const float* vp = v.plane(n, e);
          for_each_shifted(x.h(), x.w(), d, [&](std::size_t i, std::size_t j) { feat[i] = sim[i] * vp[j]; });
        }
        if (learned) {
          const int ch = static_cast<int>(di) * c_emb + e;
          for (int o = 0; o < c_out; ++o) {
            const double w = params.mix.weight(o, ch, 0, 0);
            if (w == 0.0) continue;
            double* a = acc.data() + o * plane;
            for (std::size_t i = 0; i < plane; ++i) a[i] += w * feat[i];
          }
        } else {
          double* a = acc.data() + e * plane;
          for (std::size_t i = 0; i < plane; ++i) a[i] += feat[i];
        }
      }
    }
    for (int o = 0; o < c_out; ++o) {
      float* dst = mixed.plane(n, o);
      const double* a = acc.data() + o * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] = static_cast<float>(a[i]);
    }
  });
  return batchnorm(mixed, params.bn);
}

Tensor4 pssa_stack(const Tensor4& x, std::span<const PssaParams> layers, const PssaConfig& cfg) {
  if (layers.empty()) throw DomainError("pssa_stack: no layers");
  for (std::size_t i = 0; i + 1 < layers.size(); ++i)
    if (layers[i].c_out(cfg) != layers[i + 1].c_in())
      throw DomainError("pssa_stack: layer " + std::to_string(i) + " outputs " +
                        std::to_string(layers[i].c_out(cfg)) + " channels but layer " + std::to_string(i + 1) +
                        " expects " + std::to_string(layers[i + 1].c_in()));
  Tensor4 y = x;
  for (const auto& layer : layers) y = pssa_forward(y, layer, cfg);
  return y;
}

ApproxQuality approx_quality(const Tensor4& approx, const Tensor4& reference) {
  require_same_dims(approx, reference, "approx_quality");
  const double na = l2_norm(approx);
  const double nr = l2_norm(reference);
  ApproxQuality q;
  if (na > 0.0 && nr > 0.0) q.cosine = std::clamp(dot(approx, reference) / (na * nr), -1.0, 1.0);
  if (nr > 0.0) q.relative_l2 = relative_l2(approx, reference);
  return q;
}

}  // namespace xvol
