#include <algorithm>
#include <cmath>
#include <cstdio>

#include "harness.hpp"
#include "xvol/xvolution.hpp"

namespace xvol::harness {
namespace {

struct CaseStats {
  std::string name;
  double tol_abs = 0.0;
  double tol_rel = -1.0;  // < 0: not checked
  double worst_abs = 0.0;
  double worst_rel = 0.0;

  void observe(const Tensor4& got, const Tensor4& want) {
    const double a = max_abs_diff(got, want);
    const double r = relative_l2(got, want);
    // NaN must not be absorbed by max().
    worst_abs = std::isnan(a) ? a : std::max(worst_abs, a);
    worst_rel = std::isnan(r) ? r : std::max(worst_rel, r);
  }
  bool pass() const {
    if (!(worst_abs <= tol_abs)) return false;
    return tol_rel < 0.0 || worst_rel <= tol_rel;
  }
};

void corrupt_kernel(ConvKernel& k) {
  const int c = k.k() / 2;
  k.weight(0, 0, c, c) += 0.05f;
}

}  // namespace

CommandResult cmd_equivalence(const RunConfig& cfg) {
  CommandResult res;
  res.csv.header = {"case", "max_abs_diff", "rel_l2", "pass"};

  CaseStats two_path{"two_path", cfg.tol_two_path, cfg.tol_rel_l2};
  CaseStats static_merge{"static_merge", cfg.tol_static_merge};
  CaseStats bn_fold{"bn_fold", cfg.tol_bn_fold};
  CaseStats zero_pssa{"zero_pssa", cfg.tol_zero_pssa};
  CaseStats zero_static{"zero_static", cfg.tol_two_path};

  Rng rng(cfg.seed);
  const int cmax = std::max(1, cfg.max_channels);
  for (int r = 0; r < cfg.repeat; ++r) {
    const int n = rng.uniform_int(1, 2);
    const int c_in = rng.uniform_int(1, cmax);
    const int c_out = rng.uniform_int(1, cmax);
    int h = 0, w = 0;
    if (cfg.sizes.empty()) {
      h = rng.uniform_int(6, 32);
      w = rng.uniform_int(6, 32);
    } else {
      std::tie(h, w) = cfg.sizes[static_cast<std::size_t>(r) % cfg.sizes.size()];
    }
    PssaConfig pc = cfg.pssa;
    pc.stack_depth = 1;
    // Identity mixing forces c_out == c_emb.
    const int c_emb = pc.mix == MixMode::Identity ? c_out : rng.uniform_int(1, cmax);
    // Offsets must stay inside the image.
    if (pc.max_shift() >= std::min(h, w)) {
      h = std::max(h, pc.max_shift() + 1);
      w = std::max(w, pc.max_shift() + 1);
    }

    auto p = random_xvolution(c_in, c_out, c_emb, rng, pc);
    const Tensor4 x = rng.normal_tensor(Dims{n, c_in, h, w});

    // Two-path equality.
    auto ip = reparameterize(p);
    if (cfg.corrupt) corrupt_kernel(ip.static_kern);
    two_path.observe(xvolution_infer_forward(x, ip), xvolution_train_forward(x, p));

    // Static merge alone.
    auto merged = merge_static_branch(p.conv3, p.conv5d, p.conv_bn);
    if (cfg.corrupt) corrupt_kernel(merged);
    static_merge.observe(conv2d(x, merged), xvolution_conv_branch(x, p));

    // BN folding on a single convolution of random geometry.
    {
      const int k = 2 * rng.uniform_int(0, 2) + 1;
      const int dil = rng.uniform_int(1, 2);
      const int co = rng.uniform_int(1, cmax);
      auto kern = ConvKernel::same(rng.normal_tensor(Dims{co, 4, k, k}, 1.0 / std::sqrt(4.0 * k * k)),
                                   rng.normal_vector(co, 0.0, 0.1), dil);
      BatchNormParams bn;
      bn.gamma = rng.uniform_vector(co, 0.5, 1.5);
      bn.beta = rng.normal_vector(co, 0.0, 0.1);
      bn.mean = rng.normal_vector(co, 0.0, 0.1);
      bn.var = rng.uniform_vector(co, 0.5, 2.0);
      const Tensor4 xb = rng.normal_tensor(Dims{1, 4, 8, 8});
      auto folded = fold_bn_into_conv(kern, bn);
      if (cfg.corrupt) corrupt_kernel(folded);
      bn_fold.observe(conv2d(xb, folded), batchnorm(conv2d(xb, kern), bn));
    }

    // Zeroed PSSA branch: inference must equal the static branch alone.
    {
      auto pz = p;
      auto zero = [](Tensor4& t) { std::fill(t.data().begin(), t.data().end(), 0.0f); };
      zero(pz.pssa.attn.wq);
      zero(pz.pssa.attn.wk);
      zero(pz.pssa.attn.wv);
      zero(pz.pssa.mix.weight);
      std::fill(pz.pssa.mix.bias.begin(), pz.pssa.mix.bias.end(), 0.0f);
      std::fill(pz.pssa.bn.beta.begin(), pz.pssa.bn.beta.end(), 0.0f);
      std::fill(pz.pssa.bn.mean.begin(), pz.pssa.bn.mean.end(), 0.0f);
      auto ipz = reparameterize(pz);
      if (cfg.corrupt) corrupt_kernel(ipz.static_kern);
      zero_pssa.observe(xvolution_infer_forward(x, ipz), xvolution_conv_branch(x, pz));
    }

    // Zeroed static branch: inference must equal PSSA alone.
    {
      auto ps = p;
      auto zero = [](ConvKernel& k) {
        std::fill(k.weight.data().begin(), k.weight.data().end(), 0.0f);
        std::fill(k.bias.begin(), k.bias.end(), 0.0f);
      };
      zero(ps.conv3);
      zero(ps.conv5d);
      std::fill(ps.conv_bn.beta.begin(), ps.conv_bn.beta.end(), 0.0f);
      std::fill(ps.conv_bn.mean.begin(), ps.conv_bn.mean.end(), 0.0f);
      auto ips = reparameterize(ps);
      if (cfg.corrupt) corrupt_kernel(ips.static_kern);
      zero_static.observe(xvolution_infer_forward(x, ips), pssa_forward(x, ps.pssa, ps.pssa_cfg));
    }
  }

  for (const auto* c : {&two_path, &static_merge, &bn_fold, &zero_pssa, &zero_static}) {
    const bool ok = c->pass();
    res.csv.add({c->name, fmt_num(c->worst_abs), fmt_num(c->worst_rel), ok ? "true" : "false"});
    char line[160];
    std::snprintf(line, sizeof line, "equivalence %-12s max_abs=%s rel_l2=%s tol=%s %s", c->name.c_str(),
                  fmt_num(c->worst_abs).c_str(), fmt_num(c->worst_rel).c_str(), fmt_num(c->tol_abs).c_str(),
                  ok ? "ok" : "FAIL");
    res.log.emplace_back(line);
    if (!ok) res.exit_code = 1;
  }
  return res;
}

CommandResult cmd_repack(const std::filesystem::path& in, const std::filesystem::path& out, const RunConfig& cfg) {
  CommandResult res;
  res.csv.header = {"probe", "max_abs_diff", "rel_l2", "pass"};
  const auto train = train_params_from_bundle(Bundle::load(in));
  // Throws DomainError for blocks that cannot be collapsed.
  const auto infer = reparameterize(train);
  to_bundle(infer).save(out);
  res.log.push_back("repack wrote " + out.string());

  // Probe the saved file, not the in-memory copy.
  const auto loaded = infer_params_from_bundle(Bundle::load(out));
  Rng rng(cfg.seed);
  const int side = std::max(16, train.pssa_cfg.max_shift() + 1);
  for (int i = 0; i < 5; ++i) {
    const Tensor4 x = rng.normal_tensor(Dims{1, train.c_in(), side, side});
    const Tensor4 want = xvolution_train_forward(x, train);
    const Tensor4 got = xvolution_infer_forward(x, loaded);
    const double a = max_abs_diff(got, want);
    const double r = relative_l2(got, want);
    const bool ok = a <= cfg.tol_two_path && r <= cfg.tol_rel_l2;
    res.csv.add({std::to_string(i), fmt_num(a), fmt_num(r), ok ? "true" : "false"});
    if (!ok) res.exit_code = 1;
  }
  return res;
}

CommandResult cmd_init_bundle(const std::filesystem::path& out, const RunConfig& cfg, int c_in, int c_out,
                              int c_emb) {
  CommandResult res;
  res.csv.header = {"name", "dims"};
  Rng rng(cfg.seed);
  PssaConfig pc = cfg.pssa;
  pc.stack_depth = 1;
  const auto b = to_bundle(random_xvolution(c_in, c_out, c_emb, rng, pc));
  b.save(out);
  for (const auto& name : b.names()) {
    std::string dims;
    try {
      dims = b.tensor(name).dims().str();
    } catch (const std::exception&) {
      dims = "text";
    }
    res.csv.add({name, dims});
  }
  res.log.push_back("init-bundle wrote " + out.string());
  return res;
}

}  // namespace xvol::harness
